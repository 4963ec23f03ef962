//! ViT, MLP-Mixer, CNN and MLP builders with traced forward passes.

pub mod checkpoint;
mod build;
mod forward;
pub mod spec;

use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Objective, Primitive, Tape};
use crate::error::{Error, Result};
use crate::params::ParameterSet;
use crate::tensor::Tensor;

pub use build::{trunc_normal, INIT_STD};
pub use spec::{Activation, Family, ModelSpec};

/// Forward-pass mode. Train mode draws dropout and stochastic-depth masks
/// from a stream seeded by `seed`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train { seed: u64 },
    Eval,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    #[default]
    SoftmaxCe,
    Sigmoid,
}

/// Per-block intermediate values of one forward pass.
#[derive(Clone, Debug)]
pub struct BlockTrace {
    /// Inputs to each activation function in the block (`h_k`).
    pub pre_activations: Vec<Tensor>,
    /// Activation outputs (`a_k = f(h_k)`).
    pub activations: Vec<Tensor>,
    /// Residual stream after the block.
    pub output: Tensor,
    /// `(batch, heads, N+1, N+1)` attention weights, ViT only.
    pub attention: Option<Tensor>,
}

#[derive(Clone, Debug, Default)]
pub struct LayerTrace {
    pub blocks: Vec<BlockTrace>,
}

#[derive(Clone, Copy, Debug, Default)]
pub struct GradRequest {
    pub params: bool,
    pub input: bool,
}

#[derive(Clone, Debug)]
pub struct LossGrads {
    pub loss: f64,
    pub params: Option<Vec<f64>>,
    pub input: Option<Tensor>,
}

#[derive(Clone, Debug)]
pub struct Model {
    spec: ModelSpec,
    params: ParameterSet,
    index: HashMap<String, usize>,
}

pub fn build_model(spec: &ModelSpec, seed: u64) -> Result<Model> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params = build::build_params(spec, &mut rng)?;
    Ok(Model::from_parts(spec.clone(), params))
}

pub fn count_params(model: &Model) -> usize {
    model.params.len()
}

/// One-hot target rows for `labels`.
pub fn one_hot(labels: &[usize], classes: usize) -> Tensor {
    let mut data = vec![0.0; labels.len() * classes];
    for (i, &y) in labels.iter().enumerate() {
        data[i * classes + y] = 1.0;
    }
    Tensor::new(vec![labels.len(), classes], data).expect("one-hot layout")
}

pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

impl Model {
    fn from_parts(spec: ModelSpec, params: ParameterSet) -> Self {
        let index = params.infos().iter().enumerate().map(|(i, p)| (p.name.clone(), i)).collect();
        Self { spec, params, index }
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn params(&self) -> &ParameterSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParameterSet {
        &mut self.params
    }

    pub fn weights(&self) -> &[f64] {
        self.params.flat()
    }

    pub fn set_weights(&mut self, w: &[f64]) -> Result<()> {
        self.params.set_flat(w)
    }

    /// Same parameters, different activation function.
    pub fn with_activation(&self, activation: Activation) -> Model {
        let mut spec = self.spec.clone();
        spec.activation = activation;
        Model::from_parts(spec, self.params.clone())
    }

    /// Replace the parameters with a compatible set (same names and shapes).
    pub fn with_params(&self, params: ParameterSet) -> Result<Model> {
        if !self.params.same_layout(&params) {
            return Err(Error::InvalidSpec("parameter layout does not match the model spec".into()));
        }
        Ok(Model::from_parts(self.spec.clone(), params))
    }

    fn check_batch(&self, batch: &Tensor) -> Result<()> {
        let s = &self.spec;
        let expect = [s.image_height, s.image_width, s.channels];
        if batch.rank() != 4 || batch.shape()[1..] != expect || batch.shape()[0] == 0 {
            let mut want = vec![0];
            want.extend(expect);
            return Err(Error::Shape { op: "forward", shapes: vec![want, batch.shape().to_vec()] });
        }
        Ok(())
    }

    fn rng_for(mode: Mode) -> Option<ChaCha8Rng> {
        match mode {
            Mode::Train { seed } => Some(ChaCha8Rng::seed_from_u64(seed)),
            Mode::Eval => None,
        }
    }

    /// Logits `(batch, classes)` and the per-block trace.
    pub fn forward_with_trace(&self, batch: &Tensor, mode: Mode) -> Result<(Tensor, LayerTrace)> {
        self.forward_with_trace_at(self.params.flat(), batch, mode)
    }

    pub fn forward_with_trace_at(&self, w: &[f64], batch: &Tensor, mode: Mode) -> Result<(Tensor, LayerTrace)> {
        self.check_batch(batch)?;
        let mut tape = Tape::new();
        let x = tape.constant(batch.clone());
        let rec = forward::record(&self.spec, self.params.infos(), &self.index, w, &mut tape, x, false, Self::rng_for(mode))?;
        let blocks = rec
            .blocks
            .iter()
            .map(|b| BlockTrace {
                pre_activations: b.pre.iter().map(|&v| tape.value(v).clone()).collect(),
                activations: b.act.iter().map(|&v| tape.value(v).clone()).collect(),
                output: b.output.map(|v| tape.value(v).clone()).unwrap_or_else(|| Tensor::zeros(&[0])),
                attention: b.attention.map(|v| tape.value(v).clone()),
            })
            .collect();
        Ok((tape.value(rec.logits).clone(), LayerTrace { blocks }))
    }

    pub fn logits_at(&self, w: &[f64], batch: &Tensor) -> Result<Tensor> {
        self.check_batch(batch)?;
        let mut tape = Tape::new();
        let x = tape.constant(batch.clone());
        let rec = forward::record(&self.spec, self.params.infos(), &self.index, w, &mut tape, x, false, None)?;
        Ok(tape.value(rec.logits).clone())
    }

    pub fn logits(&self, batch: &Tensor) -> Result<Tensor> {
        self.logits_at(self.params.flat(), batch)
    }

    /// Argmax class per example (lowest index wins ties).
    pub fn predict(&self, batch: &Tensor) -> Result<Vec<usize>> {
        let logits = self.logits(batch)?;
        let k = self.spec.num_classes;
        Ok(logits.data().chunks(k).map(argmax).collect())
    }

    /// Loss at weights `w` and, on request, gradients with respect to the
    /// weights and/or the input pixels from a single backward sweep.
    pub fn loss_grads(
        &self,
        w: &[f64],
        batch: &Tensor,
        targets: &Tensor,
        loss: LossKind,
        mode: Mode,
        want: GradRequest,
    ) -> Result<LossGrads> {
        self.check_batch(batch)?;
        let mut tape = Tape::new();
        let x = tape.leaf(batch.clone(), want.input);
        let rec =
            forward::record(&self.spec, self.params.infos(), &self.index, w, &mut tape, x, want.params, Self::rng_for(mode))?;
        let t = tape.constant(targets.clone());
        let prim = match loss {
            LossKind::SoftmaxCe => Primitive::SoftmaxCrossEntropy,
            LossKind::Sigmoid => Primitive::SigmoidCrossEntropy,
        };
        let out = tape.apply(prim, &[rec.logits, t])?;
        let value = tape.value(out).item();
        if !want.params && !want.input {
            return Ok(LossGrads { loss: value, params: None, input: None });
        }
        let grads = tape.backward(out, None)?;
        let params = want.params.then(|| {
            let mut flat = vec![0.0; w.len()];
            for (info, &v) in self.params.infos().iter().zip(&rec.params) {
                if let Some(g) = grads.get(v) {
                    flat[info.range()].copy_from_slice(g.data());
                }
            }
            flat
        });
        let input = want.input.then(|| grads.get_or_zeros(x, batch.shape()));
        Ok(LossGrads { loss: value, params, input })
    }

    /// Gradient of the summed logits of a single example with respect to the weights.
    pub fn summed_logit_grad(&self, w: &[f64], example: &Tensor) -> Result<Vec<f64>> {
        let mut shape = vec![1];
        shape.extend_from_slice(example.shape());
        let batch = example.clone().reshape(shape)?;
        self.check_batch(&batch)?;
        let mut tape = Tape::new();
        let x = tape.constant(batch);
        let rec = forward::record(&self.spec, self.params.infos(), &self.index, w, &mut tape, x, true, None)?;
        let s = tape.sum(rec.logits)?;
        let grads = tape.backward(s, None)?;
        let mut flat = vec![0.0; w.len()];
        for (info, &v) in self.params.infos().iter().zip(&rec.params) {
            if let Some(g) = grads.get(v) {
                flat[info.range()].copy_from_slice(g.data());
            }
        }
        Ok(flat)
    }
}

/// Training loss of a model on a fixed batch, as a function of the weights.
pub struct ModelObjective<'a> {
    pub model: &'a Model,
    pub images: &'a Tensor,
    pub targets: Tensor,
    pub loss: LossKind,
    pub mode: Mode,
}

impl<'a> ModelObjective<'a> {
    pub fn new(model: &'a Model, images: &'a Tensor, labels: &[usize], loss: LossKind) -> Self {
        Self { model, images, targets: one_hot(labels, model.spec.num_classes), loss, mode: Mode::Eval }
    }

    pub fn with_targets(model: &'a Model, images: &'a Tensor, targets: Tensor, loss: LossKind, mode: Mode) -> Self {
        Self { model, images, targets, loss, mode }
    }
}

impl Objective for ModelObjective<'_> {
    fn dim(&self) -> usize {
        self.model.params.len()
    }

    fn loss(&self, w: &[f64]) -> Result<f64> {
        Ok(self.model.loss_grads(w, self.images, &self.targets, self.loss, self.mode, GradRequest::default())?.loss)
    }

    fn loss_and_grad(&self, w: &[f64]) -> Result<(f64, Vec<f64>)> {
        let r = self.model.loss_grads(
            w,
            self.images,
            &self.targets,
            self.loss,
            self.mode,
            GradRequest { params: true, input: false },
        )?;
        Ok((r.loss, r.params.expect("requested")))
    }
}
