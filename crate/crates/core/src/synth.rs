//! Synthetic two-class image generator.
//!
//! Every image is a sum of smooth Gaussian blobs on a flat background plus
//! gratings at periods spanning several octaves, with per-image amplitudes
//! and (by default) random phases. Class 1 sits on a brighter background, so
//! the class signal is coarse while the texture is image specific and lives
//! in the finer wavelet bands. Images are periodic, which matches the
//! periodized wavelet transform.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::tensor::{LabeledDataset, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct SynthParams {
    pub blobs: (usize, usize),
    /// Blob widths as fractions of the side length.
    pub blob_width: (f64, f64),
    pub blob_amplitude: (f64, f64),
    pub background: f64,
    /// Grating wave vectors in cycles per image side, with fixed phases.
    pub gratings: Vec<([f64; 2], f64)>,
    /// Per-grating amplitude range for class 1.
    pub texture_amplitude: (f64, f64),
    /// Per-grating amplitude range for class 0.
    pub faint_amplitude: (f64, f64),
    /// Background brightness added to class 1.
    pub class_offset: f64,
    /// Draw each grating phase uniformly per image instead of using the fixed one.
    pub random_phase: bool,
    pub pixel_noise: f64,
}

impl Default for SynthParams {
    fn default() -> Self {
        SynthParams {
            blobs: (2, 4),
            blob_width: (0.3, 0.45),
            blob_amplitude: (0.1, 0.45),
            background: 0.35,
            // periods of about 3, 6 and 10 pixels at side 32
            gratings: vec![([10.0, 3.0], 0.3), ([2.0, 5.0], 1.1), ([3.0, 1.0], 2.0)],
            texture_amplitude: (0.11, 0.19),
            faint_amplitude: (0.11, 0.19),
            class_offset: 0.2,
            random_phase: true,
            pixel_noise: 0.03,
        }
    }
}

impl SynthParams {
    /// Classes differ only in texture strength, so accuracy depends on how
    /// much fine detail survives downsampling.
    pub fn texture_classes() -> Self {
        SynthParams {
            texture_amplitude: (0.10, 0.16),
            faint_amplitude: (0.02, 0.08),
            class_offset: 0.0,
            pixel_noise: 0.05,
            ..SynthParams::default()
        }
    }
}

/// `2 * n_per_class` single-channel `side x side` images in `[0, 1]`, labels
/// interleaved 0, 1, 0, 1, ...
pub fn synth_two_class_images(n_per_class: usize, side: usize, stream: RngStream) -> Result<LabeledDataset> {
    synth_with(n_per_class, side, stream, &SynthParams::default())
}

pub fn synth_with(
    n_per_class: usize,
    side: usize,
    stream: RngStream,
    params: &SynthParams,
) -> Result<LabeledDataset> {
    if n_per_class == 0 {
        return Err(Error::InvalidArgument("n_per_class must be >= 1".into()));
    }
    if side < 8 || !side.is_power_of_two() {
        return Err(Error::InvalidArgument(format!(
            "side must be a power of two >= 8, got {side}"
        )));
    }
    let mut inputs = Vec::with_capacity(2 * n_per_class);
    let mut labels = Vec::with_capacity(2 * n_per_class);
    for i in 0..2 * n_per_class {
        let class = i % 2;
        // one stream per image keeps images independent of n_per_class
        let mut rng = stream.with_id(i as u64).rng();
        inputs.push(render(&mut rng, side, class == 1, params)?);
        labels.push(class);
    }
    LabeledDataset::new(
        format!("synth-{}-{}-{}", side, stream.master_seed, stream.stream_id),
        inputs,
        labels,
        2,
    )
}

fn render<R: Rng>(rng: &mut R, side: usize, textured: bool, p: &SynthParams) -> Result<Tensor> {
    let n = side as f64;
    let background = if textured { p.background + p.class_offset } else { p.background };
    let mut img = vec![background; side * side];
    let blobs = rng.random_range(p.blobs.0..=p.blobs.1);
    for _ in 0..blobs {
        let cx = rng.random_range(0.0..n);
        let cy = rng.random_range(0.0..n);
        let w = rng.random_range(p.blob_width.0..p.blob_width.1) * n;
        let amp = rng.random_range(p.blob_amplitude.0..p.blob_amplitude.1);
        for r in 0..side {
            for c in 0..side {
                let d2 = torus_gap(r as f64, cy, n).powi(2) + torus_gap(c as f64, cx, n).powi(2);
                img[r * side + c] += amp * (-d2 / (2.0 * w * w)).exp();
            }
        }
    }
    let amp_range = if textured { p.texture_amplitude } else { p.faint_amplitude };
    let w = std::f64::consts::TAU / n;
    for &([kx, ky], phase) in &p.gratings {
        let amp = if amp_range.1 > amp_range.0 {
            rng.random_range(amp_range.0..amp_range.1)
        } else {
            amp_range.0
        };
        let phase = if p.random_phase { rng.random_range(0.0..std::f64::consts::TAU) } else { phase };
        for r in 0..side {
            for c in 0..side {
                let u = w * (kx * c as f64 + ky * r as f64);
                img[r * side + c] += amp * (u + phase).sin();
            }
        }
    }
    if p.pixel_noise > 0.0 {
        let noise = Normal::new(0.0, p.pixel_noise).expect("positive std");
        for v in &mut img {
            *v += noise.sample(rng);
        }
    }
    for v in &mut img {
        *v = v.clamp(0.0, 1.0);
    }
    Tensor::new(vec![side, side], img)
}

/// Shortest distance between `a` and `b` on a circle of circumference `n`.
fn torus_gap(a: f64, b: f64, n: f64) -> f64 {
    let d = (a - b).abs() % n;
    d.min(n - d)
}
