//! Named, role-tagged parameter tensors backed by one contiguous weight vector.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Architectural component a parameter belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Embedding,
    Msa,
    Mlp,
    TokenMlp,
    ChannelMlp,
    Norm,
    Head,
    Conv,
    Other,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::Embedding => "embedding",
            Role::Msa => "msa",
            Role::Mlp => "mlp",
            Role::TokenMlp => "token_mlp",
            Role::ChannelMlp => "channel_mlp",
            Role::Norm => "norm",
            Role::Head => "head",
            Role::Conv => "conv",
            Role::Other => "other",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamInfo {
    pub name: String,
    pub role: Role,
    /// Residual block index, `None` for stem/head parameters.
    pub block: Option<usize>,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl ParamInfo {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// Ordered parameter tensors. The concatenation of all tensors in insertion
/// order is the global weight vector `w`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParameterSet {
    infos: Vec<ParamInfo>,
    values: Vec<f64>,
}

impl ParameterSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: &str, role: Role, block: Option<usize>, value: Tensor) -> Result<usize> {
        if self.index_of(name).is_some() {
            return Err(Error::InvalidSpec(format!("duplicate parameter name {name}")));
        }
        let offset = self.values.len();
        self.infos.push(ParamInfo { name: name.to_string(), role, block, shape: value.shape().to_vec(), offset });
        self.values.extend_from_slice(value.data());
        Ok(self.infos.len() - 1)
    }

    pub fn infos(&self) -> &[ParamInfo] {
        &self.infos
    }

    pub fn num_tensors(&self) -> usize {
        self.infos.len()
    }

    /// Total scalar count.
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn flat(&self) -> &[f64] {
        &self.values
    }

    pub fn flat_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn set_flat(&mut self, w: &[f64]) -> Result<()> {
        if w.len() != self.values.len() {
            return Err(Error::Shape { op: "set_flat", shapes: vec![vec![self.values.len()], vec![w.len()]] });
        }
        self.values.copy_from_slice(w);
        Ok(())
    }

    /// Copy of this set with the weight vector replaced.
    pub fn with_flat(&self, w: &[f64]) -> Result<Self> {
        let mut out = self.clone();
        out.set_flat(w)?;
        Ok(out)
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.infos.iter().position(|p| p.name == name)
    }

    pub fn slice(&self, index: usize) -> &[f64] {
        &self.values[self.infos[index].range()]
    }

    pub fn slice_mut(&mut self, index: usize) -> &mut [f64] {
        let r = self.infos[index].range();
        &mut self.values[r]
    }

    pub fn tensor(&self, index: usize) -> Tensor {
        Tensor::new(self.infos[index].shape.clone(), self.slice(index).to_vec()).expect("consistent layout")
    }

    pub fn get(&self, name: &str) -> Option<Tensor> {
        self.index_of(name).map(|i| self.tensor(i))
    }

    /// Coordinate mask selecting tensors for which `pred` holds.
    pub fn mask(&self, pred: impl Fn(&ParamInfo) -> bool) -> Vec<bool> {
        let mut m = vec![false; self.values.len()];
        for info in &self.infos {
            if pred(info) {
                m[info.range()].iter_mut().for_each(|x| *x = true);
            }
        }
        m
    }

    pub fn roles(&self) -> Vec<Role> {
        let mut roles: Vec<Role> = self.infos.iter().map(|p| p.role).collect();
        roles.sort();
        roles.dedup();
        roles
    }

    pub fn blocks(&self) -> Vec<usize> {
        let mut blocks: Vec<usize> = self.infos.iter().filter_map(|p| p.block).collect();
        blocks.sort();
        blocks.dedup();
        blocks
    }

    /// Same names and shapes, in the same order.
    pub fn same_layout(&self, other: &ParameterSet) -> bool {
        self.infos.len() == other.infos.len()
            && self.infos.iter().zip(&other.infos).all(|(a, b)| a.name == b.name && a.shape == b.shape)
    }
}
