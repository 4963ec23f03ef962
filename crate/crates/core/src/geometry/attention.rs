//! Class-token attention maps from the last MSA layer.

use std::io::Write;

use crate::error::{Error, Result};
use crate::geometry::landscape::fmt_f64;
use crate::model::{Family, Mode, Model};
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct AttentionSummary {
    /// Patch grid `(H/P, W/P)`.
    pub grid: (usize, usize),
    /// Head-averaged class-token attention to each patch, row-major.
    pub map: Vec<f64>,
    pub layer: usize,
    /// Nearest-neighbour upsample to `(H, W)`, row-major.
    pub upsampled: Vec<f64>,
    pub size: (usize, usize),
}

/// Attention summary of one `[H, W, C]` image.
pub fn attention_map(model: &Model, image: &Tensor) -> Result<AttentionSummary> {
    let s = model.spec();
    if s.family != Family::Vit {
        return Err(Error::Unsupported("attention maps need a ViT".into()));
    }
    if s.softmax_free {
        return Err(Error::Unsupported("softmax-free attention scores are not a distribution".into()));
    }
    let mut shape = vec![1];
    shape.extend_from_slice(image.shape());
    let (_, trace) = model.forward_with_trace(&image.clone().reshape(shape)?, Mode::Eval)?;
    let layer = trace.blocks.len() - 1;
    let att = trace.blocks[layer].attention.as_ref().expect("vit blocks record attention");
    let (heads, t) = (s.num_heads, s.seq_len());
    let mut map = vec![0.0; t - 1];
    for h in 0..heads {
        let row = &att.data()[h * t * t..h * t * t + t];
        map.iter_mut().zip(&row[1..]).for_each(|(m, v)| *m += v / heads as f64);
    }
    let p = s.patch_size;
    let (gh, gw) = (s.image_height / p, s.image_width / p);
    let (hh, ww) = (s.image_height, s.image_width);
    let upsampled = (0..hh * ww).map(|i| map[(i / ww / p) * gw + (i % ww) / p]).collect();
    Ok(AttentionSummary { grid: (gh, gw), map, layer, upsampled, size: (hh, ww) })
}

impl AttentionSummary {
    /// Binary PGM of the upsampled map, scaled so the maximum is 255.
    pub fn write_pgm<W: Write>(&self, mut out: W) -> Result<()> {
        let (h, w) = self.size;
        write!(out, "P5\n{w} {h}\n255\n")?;
        let max = self.upsampled.iter().cloned().fold(0.0, f64::max);
        let bytes: Vec<u8> = self
            .upsampled
            .iter()
            .map(|v| if max > 0.0 { (v / max * 255.0).round().clamp(0.0, 255.0) as u8 } else { 0 })
            .collect();
        out.write_all(&bytes)?;
        Ok(())
    }

    /// Raw patch-grid map, one CSV row per grid row.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let (_, gw) = self.grid;
        for row in self.map.chunks(gw) {
            let cells: Vec<String> = row.iter().map(|v| fmt_f64(*v)).collect();
            writeln!(out, "{}", cells.join(","))?;
        }
        Ok(())
    }
}
