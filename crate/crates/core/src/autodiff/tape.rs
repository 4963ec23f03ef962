//! Wengert-list recording of primitive applications.

use crate::autodiff::primitive::{eval_primitive, vjp, Primitive};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
struct Node {
    prim: Option<Primitive>,
    inputs: Vec<usize>,
    value: Tensor,
    /// Leaf flag for leaves; for interior nodes, whether any input needs a gradient.
    needs_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node { prim: None, inputs: vec![], value, needs_grad: requires_grad });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn apply(&mut self, prim: Primitive, inputs: &[Var]) -> Result<Var> {
        for v in inputs {
            if v.0 >= self.nodes.len() {
                return Err(Error::UnknownNode(v.0));
            }
        }
        let values: Vec<&Tensor> = inputs.iter().map(|v| &self.nodes[v.0].value).collect();
        let value = eval_primitive(&prim, &values)?;
        let needs_grad = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        self.nodes.push(Node { prim: Some(prim), inputs: inputs.iter().map(|v| v.0).collect(), value, needs_grad });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Re-evaluate every recorded primitive from the leaf values.
    pub fn replay(&self) -> Result<Vec<Tensor>> {
        let mut values: Vec<Tensor> = Vec::with_capacity(self.nodes.len());
        for node in &self.nodes {
            let v = match &node.prim {
                None => node.value.clone(),
                Some(p) => {
                    let ins: Vec<&Tensor> = node.inputs.iter().map(|&i| &values[i]).collect();
                    eval_primitive(p, &ins)?
                }
            };
            values.push(v);
        }
        Ok(values)
    }

    /// Reverse-mode sweep from `output`. A missing seed means `output` must be
    /// a single-element tensor and is seeded with 1.
    pub fn backward(&self, output: Var, seed: Option<Tensor>) -> Result<Gradients> {
        let Some(out_node) = self.nodes.get(output.0) else {
            return Err(Error::UnknownNode(output.0));
        };
        let seed = match seed {
            Some(s) => {
                if s.shape() != out_node.value.shape() {
                    return Err(Error::Shape {
                        op: "backward",
                        shapes: vec![out_node.value.shape().to_vec(), s.shape().to_vec()],
                    });
                }
                s
            }
            None => {
                if out_node.value.len() != 1 {
                    return Err(Error::Shape { op: "backward", shapes: vec![out_node.value.shape().to_vec()] });
                }
                Tensor::full(out_node.value.shape(), 1.0)
            }
        };
        let mut grads: Vec<Option<Tensor>> = vec![None; output.0 + 1];
        grads[output.0] = Some(seed);
        for id in (0..=output.0).rev() {
            let node = &self.nodes[id];
            let Some(prim) = &node.prim else { continue };
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            let needs: Vec<bool> = node.inputs.iter().map(|&i| self.nodes[i].needs_grad).collect();
            let ins: Vec<&Tensor> = node.inputs.iter().map(|&i| &self.nodes[i].value).collect();
            let input_grads = vjp(prim, &ins, &node.value, &g, &needs)?;
            for (&i, ig) in node.inputs.iter().zip(input_grads) {
                let Some(ig) = ig else { continue };
                match &mut grads[i] {
                    Some(acc) => {
                        for (a, b) in acc.data_mut().iter_mut().zip(ig.data()) {
                            *a += b;
                        }
                    }
                    slot @ None => *slot = Some(ig),
                }
            }
            grads[id] = Some(g);
        }
        // interior gradients are dropped; only leaves that asked for them are kept
        for (id, slot) in grads.iter_mut().enumerate() {
            let node = &self.nodes[id];
            if id != output.0 && (node.prim.is_some() || !node.needs_grad) {
                *slot = None;
            }
        }
        Ok(Gradients { grads })
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(Primitive::MatMul, &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(Primitive::Add, &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(Primitive::Mul, &[a, b])
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        self.apply(Primitive::Scale(c), &[a])
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        self.apply(Primitive::Transpose, &[a])
    }

    pub fn permute(&mut self, a: Var, perm: &[usize]) -> Result<Var> {
        self.apply(Primitive::Permute(perm.to_vec()), &[a])
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        self.apply(Primitive::Reshape(shape.to_vec()), &[a])
    }

    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        self.apply(Primitive::Softmax, &[a])
    }

    pub fn layer_norm(&mut self, a: Var) -> Result<Var> {
        self.apply(Primitive::LayerNorm, &[a])
    }

    pub fn gelu(&mut self, a: Var) -> Result<Var> {
        self.apply(Primitive::Gelu, &[a])
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.apply(Primitive::Relu, &[a])
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        self.apply(Primitive::Sum, &[a])
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        self.apply(Primitive::Mean, &[a])
    }

    pub fn mean_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        self.apply(Primitive::MeanAxis(axis), &[a])
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        self.apply(Primitive::Concat(axis), parts)
    }

    pub fn narrow(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        self.apply(Primitive::Narrow { axis, start, len }, &[a])
    }

    pub fn expand(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        self.apply(Primitive::Expand(shape.to_vec()), &[a])
    }

    pub fn conv2d(&mut self, x: Var, w: Var, stride: usize, padding: usize) -> Result<Var> {
        self.apply(Primitive::Conv2d { stride, padding }, &[x, w])
    }
}

/// Free-function form of [`Tape::backward`].
pub fn backward(tape: &Tape, output: Var, seed: Option<Tensor>) -> Result<Gradients> {
    tape.backward(output, seed)
}

#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient for a leaf created with `requires_grad`, if it was reached.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient for `v`, or zeros of `shape` if the sweep never reached it.
    pub fn get_or_zeros(&self, v: Var, shape: &[usize]) -> Tensor {
        self.get(v).cloned().unwrap_or_else(|| Tensor::zeros(shape))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_derivative() {
        let mut tape = Tape::new();
        let w = tape.leaf(Tensor::scalar(3.0), true);
        let y = tape.mul(w, w).unwrap();
        let g = tape.backward(y, None).unwrap();
        assert_eq!(g.get(w).unwrap().item(), 6.0);
    }

    #[test]
    fn sum_gradient_is_ones() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::new(vec![2, 3], vec![0.5; 6]).unwrap(), true);
        let s = tape.sum(x).unwrap();
        let g = tape.backward(s, None).unwrap();
        assert_eq!(g.get(x).unwrap(), &Tensor::ones(&[2, 3]));
    }

    #[test]
    fn unknown_node_is_an_error() {
        let tape = Tape::new();
        assert!(matches!(tape.backward(Var(4), None), Err(Error::UnknownNode(4))));
    }

    #[test]
    fn seed_shape_must_match() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::zeros(&[3]), true);
        let y = tape.scale(x, 2.0).unwrap();
        assert!(tape.backward(y, Some(Tensor::zeros(&[2]))).is_err());
        let g = tape.backward(y, Some(Tensor::ones(&[3]))).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[2.0, 2.0, 2.0]);
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(2.0), true);
        let c = tape.constant(Tensor::scalar(5.0));
        let y = tape.mul(x, c).unwrap();
        let g = tape.backward(y, None).unwrap();
        assert!(g.get(c).is_none());
        assert_eq!(g.get(x).unwrap().item(), 5.0);
    }

    #[test]
    fn replay_is_bit_exact() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::new(vec![2, 2], vec![0.1, -0.7, 1.3, 2.9]).unwrap(), true);
        let s = tape.softmax(x).unwrap();
        let l = tape.layer_norm(s).unwrap();
        let g = tape.gelu(l).unwrap();
        let _ = tape.mean(g).unwrap();
        let replayed = tape.replay().unwrap();
        for (i, v) in replayed.iter().enumerate() {
            assert_eq!(v, &tape.nodes[i].value);
        }
    }
}
