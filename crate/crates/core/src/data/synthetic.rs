//! Class-conditional texture images.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::data::Dataset;
use crate::tensor::Tensor;

const CHANNELS: usize = 3;
const AMPLITUDE: f64 = 0.3;
const TINT: f64 = 0.08;
const NOISE_STD: f64 = 0.1;

/// `count` RGB images of `size x size`. Class `c` is an oriented sinusoidal
/// grating (angle `π c / classes`, frequency cycling over three values) with
/// a random phase, a weak class-specific colour tint and Gaussian pixel
/// noise. Labels cycle through the classes in a seeded random order. Pixels
/// are quantized to multiples of 1/255 so the set survives the binary format
/// unchanged.
pub fn generate_synthetic(seed: u64, count: usize, classes: usize, size: usize) -> Dataset {
    assert!(classes >= 2, "synthetic data needs at least two classes");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, NOISE_STD).expect("noise std");
    let mut labels = Vec::with_capacity(count);
    let mut data = Vec::with_capacity(count * size * size * CHANNELS);
    for i in 0..count {
        let c = i % classes;
        labels.push(c);
        let theta = PI * c as f64 / classes as f64;
        let freq = [1.5, 2.5, 3.5][c % 3];
        let phase = rng.gen_range(0.0..2.0 * PI);
        let (ct, st) = (theta.cos(), theta.sin());
        for y in 0..size {
            for x in 0..size {
                let u = (x as f64 + 0.5) / size as f64;
                let v = (y as f64 + 0.5) / size as f64;
                let wave = (2.0 * PI * freq * (u * ct + v * st) + phase).sin();
                for ch in 0..CHANNELS {
                    let tint = TINT * (2.0 * PI * (c as f64 / classes as f64 + ch as f64 / CHANNELS as f64)).cos();
                    let p = 0.5 + AMPLITUDE * wave + tint + noise.sample(&mut rng);
                    data.push((p.clamp(0.0, 1.0) * 255.0).round() / 255.0);
                }
            }
        }
    }
    // shuffle example order so labels are not periodic
    let mut order: Vec<usize> = (0..count).collect();
    for i in (1..count).rev() {
        order.swap(i, rng.gen_range(0..=i));
    }
    let images = Tensor::new(vec![count, size, size, CHANNELS], data).expect("synthetic layout").gather(&order);
    let labels = order.iter().map(|&i| labels[i]).collect();
    Dataset { images, labels, classes, split: "synthetic".into() }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_valid() {
        let a = generate_synthetic(3, 20, 4, 8);
        assert_eq!(a, generate_synthetic(3, 20, 4, 8));
        assert_ne!(a.images, generate_synthetic(4, 20, 4, 8).images);
        assert!(a.images.data().iter().all(|v| (0.0..=1.0).contains(v)));
        assert_eq!(a.labels.iter().filter(|&&y| y == 0).count(), 5);
    }

    #[test]
    fn empty() {
        let d = generate_synthetic(0, 0, 2, 8);
        assert!(d.is_empty());
        assert_eq!(d.images.shape(), &[0, 8, 8, 3]);
    }
}
