//! Recording of the forward pass for each family.

use std::collections::HashMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, Var};
use crate::error::Result;
use crate::model::spec::{Activation, Family, ModelSpec};
use crate::params::ParamInfo;
use crate::tensor::Tensor;

/// Vars recorded for one residual block.
#[derive(Clone, Debug, Default)]
pub(crate) struct BlockVars {
    pub pre: Vec<Var>,
    pub act: Vec<Var>,
    pub output: Option<Var>,
    pub attention: Option<Var>,
}

pub(crate) struct Recorded {
    pub logits: Var,
    pub params: Vec<Var>,
    pub blocks: Vec<BlockVars>,
}

struct Ctx<'a> {
    tape: &'a mut Tape,
    index: &'a HashMap<String, usize>,
    params: Vec<Var>,
    spec: &'a ModelSpec,
    rng: Option<ChaCha8Rng>,
}

impl Ctx<'_> {
    fn p(&self, name: &str) -> Var {
        self.params[self.index[name]]
    }

    fn dense(&mut self, x: Var, prefix: &str) -> Result<Var> {
        let w = self.p(&format!("{prefix}.w"));
        let b = self.p(&format!("{prefix}.b"));
        let y = self.tape.matmul(x, w)?;
        self.tape.add(y, b)
    }

    fn norm(&mut self, x: Var, prefix: &str) -> Result<Var> {
        let g = self.p(&format!("{prefix}.scale"));
        let b = self.p(&format!("{prefix}.bias"));
        let y = self.tape.layer_norm(x)?;
        let y = self.tape.mul(y, g)?;
        self.tape.add(y, b)
    }

    fn activate(&mut self, h: Var) -> Result<Var> {
        match self.spec.activation {
            Activation::Gelu => self.tape.gelu(h),
            Activation::Relu => self.tape.relu(h),
        }
    }

    /// Inverted dropout; identity outside train mode.
    fn dropout(&mut self, x: Var, rate: f64) -> Result<Var> {
        let Some(rng) = self.rng.as_mut() else { return Ok(x) };
        if rate <= 0.0 {
            return Ok(x);
        }
        let shape = self.tape.value(x).shape().to_vec();
        let keep = 1.0 - rate;
        let n: usize = shape.iter().product();
        let mask: Vec<f64> = (0..n).map(|_| if rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 }).collect();
        let m = self.tape.constant(Tensor::new(shape, mask)?);
        self.tape.mul(x, m)
    }

    /// Per-example Bernoulli skip of a residual branch `x` (leading axis = batch).
    fn drop_path(&mut self, x: Var, rate: f64) -> Result<Var> {
        let Some(rng) = self.rng.as_mut() else { return Ok(x) };
        if rate <= 0.0 {
            return Ok(x);
        }
        let shape = self.tape.value(x).shape().to_vec();
        let keep = 1.0 - rate;
        let per: usize = shape[1..].iter().product();
        let mut mask = Vec::with_capacity(per * shape[0]);
        for _ in 0..shape[0] {
            let v = if rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 };
            mask.extend(std::iter::repeat(v).take(per));
        }
        let m = self.tape.constant(Tensor::new(shape, mask)?);
        self.tape.mul(x, m)
    }

    fn depth_rate(&self, layer: usize) -> f64 {
        self.spec.stochastic_depth_rate * (layer + 1) as f64 / self.spec.num_layers as f64
    }

    /// `[B,H,W,C] -> [B, N, P*P*C]`
    fn patchify(&mut self, x: Var) -> Result<Var> {
        let s = self.spec;
        let b = self.tape.value(x).shape()[0];
        let p = s.patch_size;
        let (gh, gw) = (s.image_height / p, s.image_width / p);
        let y = self.tape.reshape(x, &[b, gh, p, gw, p, s.channels])?;
        let y = self.tape.permute(y, &[0, 1, 3, 2, 4, 5])?;
        self.tape.reshape(y, &[b, gh * gw, s.patch_dim()])
    }
}

pub(crate) fn record(
    spec: &ModelSpec,
    infos: &[ParamInfo],
    index: &HashMap<String, usize>,
    w: &[f64],
    tape: &mut Tape,
    x: Var,
    param_grad: bool,
    rng: Option<ChaCha8Rng>,
) -> Result<Recorded> {
    let params: Vec<Var> = infos
        .iter()
        .map(|info| tape.leaf(Tensor::new(info.shape.clone(), w[info.range()].to_vec()).expect("layout"), param_grad))
        .collect();
    let mut ctx = Ctx { tape, index, params, spec, rng };
    let (logits, blocks) = match spec.family {
        Family::Vit => vit(&mut ctx, x)?,
        Family::Mixer => mixer(&mut ctx, x)?,
        Family::Cnn => cnn(&mut ctx, x)?,
        Family::Mlp => mlp(&mut ctx, x)?,
    };
    Ok(Recorded { logits, params: ctx.params, blocks })
}

fn vit(c: &mut Ctx, x: Var) -> Result<(Var, Vec<BlockVars>)> {
    let s = c.spec;
    let b = c.tape.value(x).shape()[0];
    let d = s.hidden_size;
    let t = s.seq_len();
    let heads = s.num_heads;
    let dh = d / heads;
    let patches = c.patchify(x)?;
    let emb = c.dense(patches, "embed")?;
    let cls = c.p("cls");
    let cls = c.tape.expand(cls, &[b, 1, d])?;
    let tokens = c.tape.concat(&[cls, emb], 1)?;
    let pos = c.p("pos");
    let tokens = c.tape.add(tokens, pos)?;
    let mut h = c.dropout(tokens, s.dropout_rate)?;
    let mut blocks = Vec::with_capacity(s.num_layers);
    for l in 0..s.num_layers {
        let mut bv = BlockVars::default();
        let y = c.norm(h, &format!("block{l}.ln1"))?;
        let split = |c: &mut Ctx, name: &str, perm: &[usize]| -> Result<Var> {
            let z = c.dense(y, &format!("block{l}.attn.{name}"))?;
            let z = c.tape.reshape(z, &[b, t, heads, dh])?;
            c.tape.permute(z, perm)
        };
        let q = split(c, "q", &[0, 2, 1, 3])?;
        let kt = split(c, "k", &[0, 2, 3, 1])?;
        let v = split(c, "v", &[0, 2, 1, 3])?;
        let scores = c.tape.matmul(q, kt)?;
        let scores = c.tape.scale(scores, 1.0 / (dh as f64).sqrt())?;
        let probs = if s.softmax_free { scores } else { c.tape.softmax(scores)? };
        bv.attention = Some(probs);
        let ctx = c.tape.matmul(probs, v)?;
        let ctx = c.tape.permute(ctx, &[0, 2, 1, 3])?;
        let ctx = c.tape.reshape(ctx, &[b, t, d])?;
        let attn = c.dense(ctx, &format!("block{l}.attn.out"))?;
        let attn = c.dropout(attn, s.dropout_rate)?;
        let rate = c.depth_rate(l);
        let attn = c.drop_path(attn, rate)?;
        h = c.tape.add(h, attn)?;

        let y = c.norm(h, &format!("block{l}.ln2"))?;
        let pre = c.dense(y, &format!("block{l}.mlp.fc1"))?;
        let a = c.activate(pre)?;
        bv.pre.push(pre);
        bv.act.push(a);
        let a = c.dropout(a, s.dropout_rate)?;
        let out = c.dense(a, &format!("block{l}.mlp.fc2"))?;
        let out = c.dropout(out, s.dropout_rate)?;
        let out = c.drop_path(out, rate)?;
        h = c.tape.add(h, out)?;
        bv.output = Some(h);
        blocks.push(bv);
    }
    let h = c.norm(h, "final_ln")?;
    let cls_out = c.tape.narrow(h, 1, 0, 1)?;
    let cls_out = c.tape.reshape(cls_out, &[b, d])?;
    let logits = c.dense(cls_out, "head")?;
    Ok((logits, blocks))
}

fn mixer(c: &mut Ctx, x: Var) -> Result<(Var, Vec<BlockVars>)> {
    let s = c.spec;
    let patches = c.patchify(x)?;
    let mut h = c.dense(patches, "embed")?;
    let mut blocks = Vec::with_capacity(s.num_layers);
    for l in 0..s.num_layers {
        let mut bv = BlockVars::default();
        let rate = c.depth_rate(l);

        let y = c.norm(h, &format!("block{l}.ln1"))?;
        let y = c.tape.permute(y, &[0, 2, 1])?;
        let pre = c.dense(y, &format!("block{l}.token.fc1"))?;
        let a = c.activate(pre)?;
        bv.pre.push(pre);
        bv.act.push(a);
        let a = c.dropout(a, s.dropout_rate)?;
        let out = c.dense(a, &format!("block{l}.token.fc2"))?;
        let out = c.tape.permute(out, &[0, 2, 1])?;
        let out = c.drop_path(out, rate)?;
        h = c.tape.add(h, out)?;

        let y = c.norm(h, &format!("block{l}.ln2"))?;
        let pre = c.dense(y, &format!("block{l}.channel.fc1"))?;
        let a = c.activate(pre)?;
        bv.pre.push(pre);
        bv.act.push(a);
        let a = c.dropout(a, s.dropout_rate)?;
        let out = c.dense(a, &format!("block{l}.channel.fc2"))?;
        let out = c.drop_path(out, rate)?;
        h = c.tape.add(h, out)?;
        bv.output = Some(h);
        blocks.push(bv);
    }
    let h = c.norm(h, "final_ln")?;
    let pooled = c.tape.mean_axis(h, 1)?;
    let logits = c.dense(pooled, "head")?;
    Ok((logits, blocks))
}

fn cnn(c: &mut Ctx, x: Var) -> Result<(Var, Vec<BlockVars>)> {
    let s = c.spec;
    let conv = |c: &mut Ctx, x: Var, prefix: &str| -> Result<Var> {
        let w = c.p(&format!("{prefix}.w"));
        let b = c.p(&format!("{prefix}.b"));
        let y = c.tape.conv2d(x, w, 1, 1)?;
        c.tape.add(y, b)
    };
    let stem = conv(c, x, "stem")?;
    let mut h = c.activate(stem)?;
    let mut blocks = Vec::with_capacity(s.num_layers);
    for l in 0..s.num_layers {
        let mut bv = BlockVars::default();
        let pre = conv(c, h, &format!("block{l}.conv1"))?;
        let a = c.activate(pre)?;
        bv.pre.push(pre);
        bv.act.push(a);
        let out = conv(c, a, &format!("block{l}.conv2"))?;
        let out = c.drop_path(out, c.depth_rate(l))?;
        h = c.tape.add(h, out)?;
        bv.output = Some(h);
        blocks.push(bv);
    }
    let shape = c.tape.value(h).shape().to_vec();
    let flat = c.tape.reshape(h, &[shape[0], shape[1] * shape[2], shape[3]])?;
    let pooled = c.tape.mean_axis(flat, 1)?;
    let logits = c.dense(pooled, "head")?;
    Ok((logits, blocks))
}

fn mlp(c: &mut Ctx, x: Var) -> Result<(Var, Vec<BlockVars>)> {
    let s = c.spec;
    let b = c.tape.value(x).shape()[0];
    let mut h = c.tape.reshape(x, &[b, s.input_dim()])?;
    let mut blocks = Vec::with_capacity(s.num_layers);
    for l in 0..s.num_layers {
        let w = c.p(&format!("layer{l}.w"));
        let pre = c.tape.matmul(h, w)?;
        let a = c.activate(pre)?;
        h = c.dropout(a, s.dropout_rate)?;
        blocks.push(BlockVars { pre: vec![pre], act: vec![a], output: Some(a), attention: None });
    }
    let w = c.p("head.w");
    let logits = c.tape.matmul(h, w)?;
    Ok((logits, blocks))
}
