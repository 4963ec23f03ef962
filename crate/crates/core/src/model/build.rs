//! Parameter construction and initialization for every family.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::Result;
use crate::model::spec::{Family, ModelSpec};
use crate::params::{ParameterSet, Role};
use crate::tensor::Tensor;

pub const INIT_STD: f64 = 0.02;

/// Normal(0, std) truncated to two standard deviations.
pub fn trunc_normal(rng: &mut impl Rng, std: f64) -> f64 {
    loop {
        let z: f64 = StandardNormal.sample(rng);
        if z.abs() <= 2.0 {
            return z * std;
        }
    }
}

struct Builder<'r> {
    params: ParameterSet,
    rng: &'r mut ChaCha8Rng,
}

impl Builder<'_> {
    fn weight(&mut self, name: &str, role: Role, block: Option<usize>, shape: &[usize]) -> Result<()> {
        let n: usize = shape.iter().product();
        let data: Vec<f64> = (0..n).map(|_| trunc_normal(self.rng, INIT_STD)).collect();
        self.params.push(name, role, block, Tensor::new(shape.to_vec(), data)?)?;
        Ok(())
    }

    fn zeros(&mut self, name: &str, role: Role, block: Option<usize>, shape: &[usize]) -> Result<()> {
        self.params.push(name, role, block, Tensor::zeros(shape))?;
        Ok(())
    }

    fn dense(&mut self, prefix: &str, role: Role, block: Option<usize>, fan_in: usize, fan_out: usize) -> Result<()> {
        self.weight(&format!("{prefix}.w"), role, block, &[fan_in, fan_out])?;
        self.zeros(&format!("{prefix}.b"), role, block, &[fan_out])
    }

    fn norm(&mut self, prefix: &str, block: Option<usize>, dim: usize) -> Result<()> {
        self.params.push(&format!("{prefix}.scale"), Role::Norm, block, Tensor::ones(&[dim]))?;
        self.zeros(&format!("{prefix}.bias"), Role::Norm, block, &[dim])
    }

    fn conv(&mut self, prefix: &str, role: Role, block: Option<usize>, cin: usize, cout: usize) -> Result<()> {
        self.weight(&format!("{prefix}.w"), role, block, &[3, 3, cin, cout])?;
        self.zeros(&format!("{prefix}.b"), role, block, &[cout])
    }
}

pub(crate) fn build_params(spec: &ModelSpec, rng: &mut ChaCha8Rng) -> Result<ParameterSet> {
    let mut b = Builder { params: ParameterSet::new(), rng };
    let d = spec.hidden_size;
    match spec.family {
        Family::Vit => {
            b.dense("embed", Role::Embedding, None, spec.patch_dim(), d)?;
            b.weight("cls", Role::Embedding, None, &[1, 1, d])?;
            b.weight("pos", Role::Embedding, None, &[spec.seq_len(), d])?;
            for l in 0..spec.num_layers {
                let blk = Some(l);
                b.norm(&format!("block{l}.ln1"), blk, d)?;
                for part in ["q", "k", "v", "out"] {
                    b.dense(&format!("block{l}.attn.{part}"), Role::Msa, blk, d, d)?;
                }
                b.norm(&format!("block{l}.ln2"), blk, d)?;
                b.dense(&format!("block{l}.mlp.fc1"), Role::Mlp, blk, d, spec.mlp_dim)?;
                b.dense(&format!("block{l}.mlp.fc2"), Role::Mlp, blk, spec.mlp_dim, d)?;
            }
            b.norm("final_ln", None, d)?;
            b.dense("head", Role::Head, None, d, spec.num_classes)?;
        }
        Family::Mixer => {
            let n = spec.num_patches();
            b.dense("embed", Role::Embedding, None, spec.patch_dim(), d)?;
            for l in 0..spec.num_layers {
                let blk = Some(l);
                b.norm(&format!("block{l}.ln1"), blk, d)?;
                b.dense(&format!("block{l}.token.fc1"), Role::TokenMlp, blk, n, spec.token_mlp_dim)?;
                b.dense(&format!("block{l}.token.fc2"), Role::TokenMlp, blk, spec.token_mlp_dim, n)?;
                b.norm(&format!("block{l}.ln2"), blk, d)?;
                b.dense(&format!("block{l}.channel.fc1"), Role::ChannelMlp, blk, d, spec.channel_mlp_dim)?;
                b.dense(&format!("block{l}.channel.fc2"), Role::ChannelMlp, blk, spec.channel_mlp_dim, d)?;
            }
            b.norm("final_ln", None, d)?;
            b.dense("head", Role::Head, None, d, spec.num_classes)?;
        }
        Family::Cnn => {
            b.conv("stem", Role::Embedding, None, spec.channels, d)?;
            for l in 0..spec.num_layers {
                b.conv(&format!("block{l}.conv1"), Role::Conv, Some(l), d, d)?;
                b.conv(&format!("block{l}.conv2"), Role::Conv, Some(l), d, d)?;
            }
            b.dense("head", Role::Head, None, d, spec.num_classes)?;
        }
        Family::Mlp => {
            let mut fan_in = spec.input_dim();
            for l in 0..spec.num_layers {
                b.weight(&format!("layer{l}.w"), Role::Mlp, Some(l), &[fan_in, d])?;
                fan_in = d;
            }
            b.weight("head.w", Role::Head, None, &[fan_in, spec.num_classes])?;
        }
    }
    Ok(b.params)
}
