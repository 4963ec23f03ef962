//! Inception-style crop/flip augmentation and mixup.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Smallest crop area as a fraction of the image.
pub const MIN_CROP_AREA: f64 = 0.08;
const ASPECT: (f64, f64) = (3.0 / 4.0, 4.0 / 3.0);
const CROP_ATTEMPTS: usize = 10;

/// Independent stream for example `index` at training `step`.
pub fn example_rng(seed: u64, step: u64, index: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&step.to_le_bytes());
    key[16..24].copy_from_slice(&index.to_le_bytes());
    ChaCha8Rng::from_seed(key)
}

fn dims(image: &Tensor) -> Result<(usize, usize, usize)> {
    match image.shape() {
        &[h, w, c] => Ok((h, w, c)),
        s => Err(Error::Shape { op: "image", shapes: vec![s.to_vec()] }),
    }
}

/// Bilinear resize of the `[y0, y0+ch) x [x0, x0+cw)` window of an
/// `[H, W, C]` image to `(th, tw)`, sampling at pixel centres.
fn resize_window(image: &Tensor, y0: usize, x0: usize, ch: usize, cw: usize, th: usize, tw: usize) -> Result<Tensor> {
    let (_, w, c) = dims(image)?;
    let src = image.data();
    let (sy, sx) = (ch as f64 / th as f64, cw as f64 / tw as f64);
    let mut out = Vec::with_capacity(th * tw * c);
    for oy in 0..th {
        let fy = ((oy as f64 + 0.5) * sy - 0.5).clamp(0.0, (ch - 1) as f64);
        let (ya, ty) = (fy.floor() as usize, fy - fy.floor());
        let yb = (ya + 1).min(ch - 1);
        for ox in 0..tw {
            let fx = ((ox as f64 + 0.5) * sx - 0.5).clamp(0.0, (cw - 1) as f64);
            let (xa, tx) = (fx.floor() as usize, fx - fx.floor());
            let xb = (xa + 1).min(cw - 1);
            for k in 0..c {
                let at = |yy: usize, xx: usize| src[((y0 + yy) * w + x0 + xx) * c + k];
                let top = at(ya, xa) * (1.0 - tx) + at(ya, xb) * tx;
                let bot = at(yb, xa) * (1.0 - tx) + at(yb, xb) * tx;
                out.push((top * (1.0 - ty) + bot * ty).clamp(0.0, 1.0));
            }
        }
    }
    Tensor::new(vec![th, tw, c], out)
}

pub fn bilinear_resize(image: &Tensor, th: usize, tw: usize) -> Result<Tensor> {
    let (h, w, _) = dims(image)?;
    resize_window(image, 0, 0, h, w, th, tw)
}

/// Mirror an `[H, W, C]` image left to right.
pub fn hflip(image: &Tensor) -> Result<Tensor> {
    let (h, w, c) = dims(image)?;
    let src = image.data();
    let mut out = Vec::with_capacity(src.len());
    for y in 0..h {
        for x in (0..w).rev() {
            out.extend_from_slice(&src[(y * w + x) * c..(y * w + x + 1) * c]);
        }
    }
    Tensor::new(vec![h, w, c], out)
}

/// Resize so the short side matches the target, then crop the centre.
pub fn center_crop(image: &Tensor, th: usize, tw: usize) -> Result<Tensor> {
    let (h, w, _) = dims(image)?;
    let s = (th as f64 / h as f64).max(tw as f64 / w as f64);
    let (rh, rw) = (((h as f64 * s).round() as usize).max(th), ((w as f64 * s).round() as usize).max(tw));
    let resized = if (rh, rw) == (h, w) { image.clone() } else { bilinear_resize(image, rh, rw)? };
    resize_window(&resized, (rh - th) / 2, (rw - tw) / 2, th, tw, th, tw)
}

/// Train mode: random crop of area fraction in `[0.08, 1]` and aspect ratio
/// in `[3/4, 4/3]`, bilinearly resized to the target, flipped with
/// probability 1/2 (falls back to the centre crop after 10 rejected crops).
/// Eval mode: deterministic centre crop.
pub fn inception_preprocess(image: &Tensor, target: (usize, usize), rng: &mut ChaCha8Rng, train: bool) -> Result<Tensor> {
    let (h, w, _) = dims(image)?;
    let (th, tw) = target;
    if h < th || w < tw {
        return Err(Error::Shape { op: "inception_preprocess", shapes: vec![vec![h, w], vec![th, tw]] });
    }
    if !train {
        return center_crop(image, th, tw);
    }
    let area = (h * w) as f64;
    let mut crop = None;
    for _ in 0..CROP_ATTEMPTS {
        let target_area = area * rng.gen_range(MIN_CROP_AREA..=1.0);
        let aspect = rng.gen_range(ASPECT.0.ln()..=ASPECT.1.ln()).exp();
        let cw = (target_area * aspect).sqrt().round() as usize;
        let ch = (target_area / aspect).sqrt().round() as usize;
        if cw >= 1 && ch >= 1 && cw <= w && ch <= h {
            let y0 = rng.gen_range(0..=h - ch);
            let x0 = rng.gen_range(0..=w - cw);
            crop = Some(resize_window(image, y0, x0, ch, cw, th, tw)?);
            break;
        }
    }
    let out = match crop {
        Some(c) => c,
        None => center_crop(image, th, tw)?,
    };
    if rng.gen_bool(0.5) {
        hflip(&out)
    } else {
        Ok(out)
    }
}

/// `(λ x₁ + (1-λ) x₂, λ e_{y₁} + (1-λ) e_{y₂})`.
pub fn mixup_pair(x1: &Tensor, y1: usize, x2: &Tensor, y2: usize, lambda: f64, classes: usize) -> Result<(Tensor, Vec<f64>)> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::InvalidConfig(format!("mixup lambda must be in [0, 1], got {lambda}")));
    }
    if x1.shape() != x2.shape() {
        return Err(Error::Shape { op: "mixup_pair", shapes: vec![x1.shape().to_vec(), x2.shape().to_vec()] });
    }
    let data = x1.data().iter().zip(x2.data()).map(|(a, b)| lambda * a + (1.0 - lambda) * b).collect();
    let mut label = vec![0.0; classes];
    label[y1] += lambda;
    label[y2] += 1.0 - lambda;
    Ok((Tensor::new(x1.shape().to_vec(), data)?, label))
}
