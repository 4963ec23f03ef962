//! The combined geometry report and its JSON form.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Objective, DEFAULT_FD_STEP};
use crate::error::Result;
use crate::geometry::activity::{active_fraction, activation_norms, missing_rate};
use crate::geometry::flatness::{avg_flatness, FlatnessOptions};
use crate::geometry::ntk::{ntk_condition, NtkAggregation, DEFAULT_NTK_BLOCK};
use crate::geometry::power::{lambda_max_power, role_mask, DEFAULT_POWER_ITERS};
use crate::model::{LossKind, Model, ModelObjective};
use crate::params::Role;
use crate::tensor::{l2_norm, Tensor};

/// JSON numbers that may be infinite: non-finite values travel as the
/// strings `"inf"`, `"-inf"` and `"nan"`.
pub mod real {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn to_json(v: f64) -> serde_json::Value {
        if v.is_finite() {
            serde_json::Value::from(v)
        } else {
            serde_json::Value::from(label(v))
        }
    }

    fn label(v: f64) -> &'static str {
        if v.is_nan() {
            "nan"
        } else if v > 0.0 {
            "inf"
        } else {
            "-inf"
        }
    }

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_str(label(*v))
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Raw {
        Num(f64),
        Str(String),
    }

    pub fn parse(raw: &str) -> Option<f64> {
        match raw {
            "inf" => Some(f64::INFINITY),
            "-inf" => Some(f64::NEG_INFINITY),
            "nan" => Some(f64::NAN),
            _ => None,
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Raw::deserialize(d)? {
            Raw::Num(v) => Ok(v),
            Raw::Str(s) => parse(&s).ok_or_else(|| serde::de::Error::custom(format!("not a number: {s:?}"))),
        }
    }

    pub mod map {
        use std::collections::BTreeMap;

        use serde::ser::SerializeMap;
        use serde::{Deserialize, Deserializer, Serializer};

        pub fn serialize<S: Serializer>(m: &BTreeMap<String, f64>, s: S) -> Result<S::Ok, S::Error> {
            let mut out = s.serialize_map(Some(m.len()))?;
            for (k, v) in m {
                out.serialize_entry(k, &super::to_json(*v))?;
            }
            out.end()
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<BTreeMap<String, f64>, D::Error> {
            let raw = BTreeMap::<String, serde_json::Value>::deserialize(d)?;
            raw.into_iter()
                .map(|(k, v)| {
                    let x = match &v {
                        serde_json::Value::Number(n) => n.as_f64(),
                        serde_json::Value::String(s) => super::parse(s),
                        _ => None,
                    };
                    x.map(|x| (k, x)).ok_or_else(|| serde::de::Error::custom(format!("not a number: {v}")))
                })
                .collect()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometryReport {
    #[serde(with = "real")]
    pub lambda_max: f64,
    /// Per component role (`msa`, `mlp`, ...).
    #[serde(with = "real::map")]
    pub lambda_max_blocks: BTreeMap<String, f64>,
    #[serde(with = "real")]
    pub ntk_kappa: f64,
    #[serde(with = "real")]
    pub train_loss: f64,
    #[serde(with = "real")]
    pub avg_flatness: f64,
    pub flatness_scale: f64,
    pub flatness_samples: usize,
    pub active_fraction: Vec<f64>,
    pub missing_rate: f64,
    pub weight_norm: f64,
    pub activation_norms: Vec<f64>,
}

/// The documented top-level key set, in serialization order.
pub const REPORT_KEYS: [&str; 11] = [
    "lambda_max",
    "lambda_max_blocks",
    "ntk_kappa",
    "train_loss",
    "avg_flatness",
    "flatness_scale",
    "flatness_samples",
    "active_fraction",
    "missing_rate",
    "weight_norm",
    "activation_norms",
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiagnoseOptions {
    pub power_iters: usize,
    pub fd_step: f64,
    pub flatness_samples: usize,
    pub flatness_scale: f64,
    pub ntk_block: usize,
    pub ntk_aggregation: NtkAggregation,
    pub missing_pairs: usize,
    /// Compute per-role sub-block eigenvalues.
    pub per_block: bool,
}

impl Default for DiagnoseOptions {
    fn default() -> Self {
        Self {
            power_iters: DEFAULT_POWER_ITERS,
            fd_step: DEFAULT_FD_STEP,
            flatness_samples: crate::geometry::flatness::DEFAULT_FLATNESS_SAMPLES,
            flatness_scale: crate::geometry::flatness::DEFAULT_FLATNESS_SCALE,
            ntk_block: DEFAULT_NTK_BLOCK,
            ntk_aggregation: NtkAggregation::MatrixMean,
            missing_pairs: 1000,
            per_block: true,
        }
    }
}

/// Every diagnostic on one evaluation set. `init_model` is the untrained
/// network the NTK is measured on. Nothing here mutates either model.
pub fn geometry_report(
    model: &Model,
    init_model: &Model,
    images: &Tensor,
    labels: &[usize],
    loss: LossKind,
    opts: &DiagnoseOptions,
    seed: u64,
) -> Result<GeometryReport> {
    let obj = ModelObjective::new(model, images, labels, loss);
    let w = model.weights();
    let train_loss = obj.loss(w)?;
    let lambda_max = lambda_max_power(&obj, w, None, opts.power_iters, seed, opts.fd_step)?.eigenvalue;
    let mut lambda_max_blocks = BTreeMap::new();
    if opts.per_block {
        for role in model.params().roles().into_iter().filter(|r| *r != Role::Other) {
            let mask = role_mask(model.params(), role);
            let r = lambda_max_power(&obj, w, Some(&mask), opts.power_iters, seed, opts.fd_step)?;
            lambda_max_blocks.insert(role.as_str().to_string(), r.eigenvalue);
        }
    }
    let ntk_kappa = ntk_condition(init_model, images, opts.ntk_block, opts.ntk_aggregation)?.kappa;
    let flat = avg_flatness(
        &obj,
        model.params(),
        w,
        &FlatnessOptions { samples: opts.flatness_samples, scale: opts.flatness_scale, seed, ..Default::default() },
    )?;
    Ok(GeometryReport {
        lambda_max,
        lambda_max_blocks,
        ntk_kappa,
        train_loss,
        avg_flatness: flat.mean,
        flatness_scale: flat.scale,
        flatness_samples: flat.samples,
        active_fraction: active_fraction(model, images)?,
        missing_rate: missing_rate(model, images, labels, opts.missing_pairs, seed)?,
        weight_norm: l2_norm(w),
        activation_norms: activation_norms(model, images)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> GeometryReport {
        GeometryReport {
            lambda_max: 2.5,
            lambda_max_blocks: [("msa".to_string(), 1.0), ("mlp".to_string(), f64::INFINITY)].into_iter().collect(),
            ntk_kappa: f64::INFINITY,
            train_loss: 0.1,
            avg_flatness: 0.2,
            flatness_scale: 0.01,
            flatness_samples: 10,
            active_fraction: vec![0.5],
            missing_rate: 0.0,
            weight_norm: 3.0,
            activation_norms: vec![1.0],
        }
    }

    #[test]
    fn json_keys_and_inf() {
        let json = serde_json::to_value(sample()).unwrap();
        let keys: Vec<&String> = json.as_object().unwrap().keys().collect();
        let mut want: Vec<&str> = REPORT_KEYS.to_vec();
        want.sort();
        let mut got: Vec<&str> = keys.iter().map(|s| s.as_str()).collect();
        got.sort();
        assert_eq!(got, want);
        assert_eq!(json["ntk_kappa"], "inf");
        assert_eq!(json["lambda_max_blocks"]["mlp"], "inf");
    }

    #[test]
    fn round_trip() {
        let s = serde_json::to_string(&sample()).unwrap();
        let back: GeometryReport = serde_json::from_str(&s).unwrap();
        assert_eq!(back, sample());
    }
}
