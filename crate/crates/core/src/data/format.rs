//! Binary dataset files.
//!
//! Layout (little-endian): magic `SGDS`, u32 version (1), u32 count,
//! u16 H, u16 W, u8 C, u16 classes, then `count·H·W·C` u8 pixels
//! (value = byte / 255), then `count` u16 labels.

use std::path::Path;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"SGDS";
pub const VERSION: u32 = 1;
const HEADER: usize = 4 + 4 + 4 + 2 + 2 + 1 + 2;

fn fit<T: TryFrom<usize>>(v: usize, what: &str) -> Result<T> {
    T::try_from(v).map_err(|_| Error::Validation(format!("{what} {v} does not fit the file format")))
}

/// Pixels are quantized to the nearest multiple of 1/255.
pub fn encode(ds: &Dataset) -> Result<Vec<u8>> {
    let (h, w, c) = ds.image_shape();
    let mut out = Vec::with_capacity(HEADER + ds.images.len() + 2 * ds.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&fit::<u32>(ds.len(), "count")?.to_le_bytes());
    out.extend_from_slice(&fit::<u16>(h, "height")?.to_le_bytes());
    out.extend_from_slice(&fit::<u16>(w, "width")?.to_le_bytes());
    out.push(fit::<u8>(c, "channels")?);
    out.extend_from_slice(&fit::<u16>(ds.classes, "classes")?.to_le_bytes());
    out.extend(ds.images.data().iter().map(|v| (v * 255.0).round().clamp(0.0, 255.0) as u8));
    for &y in &ds.labels {
        out.extend_from_slice(&fit::<u16>(y, "label")?.to_le_bytes());
    }
    Ok(out)
}

fn need(buf: &[u8], at: usize, n: usize, what: &str) -> Result<()> {
    if buf.len() < at + n {
        Err(Error::Format { context: format!("truncated dataset while reading {what}"), offset: buf.len() })
    } else {
        Ok(())
    }
}

fn u16_at(buf: &[u8], at: usize) -> u16 {
    u16::from_le_bytes([buf[at], buf[at + 1]])
}

fn u32_at(buf: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(buf[at..at + 4].try_into().expect("4 bytes"))
}

pub fn decode(buf: &[u8], split: &str) -> Result<Dataset> {
    need(buf, 0, 4, "magic")?;
    if &buf[..4] != MAGIC {
        return Err(Error::Format { context: "bad dataset magic".into(), offset: 0 });
    }
    need(buf, 4, HEADER - 4, "header")?;
    let version = u32_at(buf, 4);
    if version != VERSION {
        return Err(Error::Format { context: format!("unsupported dataset version {version}"), offset: 4 });
    }
    let count = u32_at(buf, 8) as usize;
    let (h, w, c) = (u16_at(buf, 12) as usize, u16_at(buf, 14) as usize, buf[16] as usize);
    let classes = u16_at(buf, 17) as usize;
    let npx = count * h * w * c;
    need(buf, HEADER, npx, "pixels")?;
    let pixels: Vec<f64> = buf[HEADER..HEADER + npx].iter().map(|&b| b as f64 / 255.0).collect();
    let lab_at = HEADER + npx;
    need(buf, lab_at, 2 * count, "labels")?;
    let labels: Vec<usize> = (0..count).map(|i| u16_at(buf, lab_at + 2 * i) as usize).collect();
    if buf.len() != lab_at + 2 * count {
        return Err(Error::Format { context: "trailing bytes after labels".into(), offset: lab_at + 2 * count });
    }
    if let Some(i) = labels.iter().position(|&y| y >= classes) {
        return Err(Error::Validation(format!(
            "label {} at byte offset {} is outside [0, {classes})",
            labels[i],
            lab_at + 2 * i
        )));
    }
    Dataset::new(Tensor::new(vec![count, h, w, c], pixels)?, labels, classes, split)
}

pub fn save_binary_dataset(ds: &Dataset, path: &Path) -> Result<()> {
    std::fs::write(path, encode(ds)?)?;
    Ok(())
}

pub fn load_binary_dataset(path: &Path) -> Result<Dataset> {
    let split = path.file_stem().and_then(|s| s.to_str()).unwrap_or("data");
    decode(&std::fs::read(path)?, split)
}
