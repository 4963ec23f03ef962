//! Datasets: synthetic generation, the binary file format, Inception-style
//! preprocessing and mixup.

mod format;
mod preprocess;
mod synthetic;

pub use format::{decode, encode, load_binary_dataset, save_binary_dataset, MAGIC, VERSION};
pub use preprocess::{bilinear_resize, center_crop, example_rng, hflip, inception_preprocess, mixup_pair, MIN_CROP_AREA};
pub use synthetic::generate_synthetic;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Images `[count, H, W, C]` in `[0, 1]` with integer labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub images: Tensor,
    pub labels: Vec<usize>,
    pub classes: usize,
    pub split: String,
}

impl Dataset {
    pub fn new(images: Tensor, labels: Vec<usize>, classes: usize, split: &str) -> Result<Self> {
        if images.rank() != 4 || images.shape()[0] != labels.len() {
            return Err(Error::Validation(format!(
                "images {:?} do not match {} labels",
                images.shape(),
                labels.len()
            )));
        }
        if let Some((i, y)) = labels.iter().enumerate().find(|(_, &y)| y >= classes) {
            return Err(Error::Validation(format!("label {y} of example {i} is outside [0, {classes})")));
        }
        if let Some(v) = images.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Validation(format!("pixel value {v} is outside [0, 1]")));
        }
        Ok(Self { images, labels, classes, split: split.to_string() })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// `(H, W, C)`.
    pub fn image_shape(&self) -> (usize, usize, usize) {
        let s = self.images.shape();
        (s[1], s[2], s[3])
    }

    pub fn subset(&self, indices: &[usize], split: &str) -> Dataset {
        Dataset {
            images: self.images.gather(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            classes: self.classes,
            split: split.to_string(),
        }
    }

    /// The first `n` examples (or all of them).
    pub fn take(&self, n: usize) -> Dataset {
        let n = n.min(self.len());
        Dataset {
            images: self.images.index_range(0, n),
            labels: self.labels[..n].to_vec(),
            classes: self.classes,
            split: self.split.clone(),
        }
    }
}
