//! Two-class Gaussian toy problem with closed-form LDA, per-point influence
//! and the variance of PCA projections as a function of image resolution.

use nalgebra::{Matrix2, Vector2};
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::projection::{pca_fit_standardized, rows_matrix};
use crate::rng::{label, RngStream};
use crate::schedule::Resolution;
use crate::tensor::LabeledDataset;
use crate::trainer::{downsample, DownsampleMethod};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToyConfig {
    /// Points per class at each resolution.
    pub n_high: usize,
    pub n_low: usize,
    pub mean0: [f64; 2],
    pub mean1: [f64; 2],
    /// Row-major 2x2 covariance of the high-resolution points.
    pub cov: [[f64; 2]; 2],
    pub low_variance_factor: f64,
}

impl Default for ToyConfig {
    fn default() -> Self {
        ToyConfig {
            n_high: 20,
            n_low: 100,
            mean0: [-1.0, 0.0],
            mean1: [1.0, 0.0],
            cov: [[1.0, 0.0], [0.0, 1.0]],
            low_variance_factor: 0.125,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ToyPoint {
    pub x: f64,
    pub y: f64,
    pub label: usize,
    pub resolution: Resolution,
}

impl ToyPoint {
    pub fn xy(&self) -> [f64; 2] {
        [self.x, self.y]
    }
}

fn cholesky(cov: &[[f64; 2]; 2]) -> Result<Matrix2<f64>> {
    let m = Matrix2::new(cov[0][0], cov[0][1], cov[1][0], cov[1][1]);
    if (m - m.transpose()).abs().max() > 1e-12 {
        return Err(Error::InvalidArgument("covariance must be symmetric".into()));
    }
    m.cholesky()
        .map(|c| c.l())
        .ok_or_else(|| Error::InvalidArgument("covariance must be positive definite".into()))
}

/// Per class: `n_high` points from N(mu_c, cov) and `n_low` from N(mu_c, cov * factor).
pub fn gen_toy_data(cfg: &ToyConfig, stream: RngStream) -> Result<Vec<ToyPoint>> {
    if cfg.n_high < 2 || cfg.n_low < 2 {
        return Err(Error::InvalidArgument("need at least 2 points per class and resolution".into()));
    }
    if cfg.low_variance_factor <= 0.0 {
        return Err(Error::InvalidArgument("low_variance_factor must be positive".into()));
    }
    let l = cholesky(&cfg.cov)?;
    let mut points = Vec::with_capacity(2 * (cfg.n_high + cfg.n_low));
    for (class, mu) in [cfg.mean0, cfg.mean1].into_iter().enumerate() {
        for (res, n, scale) in [
            (Resolution::High, cfg.n_high, 1.0),
            (Resolution::Low, cfg.n_low, cfg.low_variance_factor.sqrt()),
        ] {
            let tag = format!("{class}-{res:?}");
            let mut rng = stream.child(label(&tag)).rng();
            for _ in 0..n {
                let z = Vector2::new(StandardNormal.sample(&mut rng), StandardNormal.sample(&mut rng));
                let v = l * z * scale;
                points.push(ToyPoint { x: mu[0] + v[0], y: mu[1] + v[1], label: class, resolution: res });
            }
        }
    }
    Ok(points)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LdaModel {
    pub class_means: [Vector2<f64>; 2],
    pub pooled_cov: Matrix2<f64>,
    pub weight: Vector2<f64>,
    pub bias: f64,
}

impl LdaModel {
    pub fn score(&self, p: [f64; 2]) -> f64 {
        self.weight.dot(&Vector2::new(p[0], p[1])) + self.bias
    }

    pub fn predict(&self, p: [f64; 2]) -> usize {
        usize::from(self.score(p) > 0.0)
    }

    pub fn params(&self) -> [f64; 3] {
        [self.weight[0], self.weight[1], self.bias]
    }
}

/// Two-class LDA with pooled covariance (divisor `N - 2`) and class priors
/// from the label counts.
pub fn lda_fit(points: &[[f64; 2]], labels: &[usize]) -> Result<LdaModel> {
    if points.len() != labels.len() {
        return Err(Error::LengthMismatch(format!("{} points, {} labels", points.len(), labels.len())));
    }
    let mut sums = [Vector2::zeros(); 2];
    let mut counts = [0usize; 2];
    for (p, &y) in points.iter().zip(labels) {
        if y > 1 {
            return Err(Error::InvalidArgument(format!("label {y} is not 0 or 1")));
        }
        sums[y] += Vector2::new(p[0], p[1]);
        counts[y] += 1;
    }
    if counts.iter().any(|&c| c < 2) {
        return Err(Error::InvalidArgument(format!("each class needs >= 2 points, got {counts:?}")));
    }
    let means = [sums[0] / counts[0] as f64, sums[1] / counts[1] as f64];
    let mut scatter = Matrix2::zeros();
    for (p, &y) in points.iter().zip(labels) {
        let d = Vector2::new(p[0], p[1]) - means[y];
        scatter += d * d.transpose();
    }
    let pooled = scatter / (points.len() - 2) as f64;
    let det = pooled.determinant();
    if !(det.abs() > 1e-12 * pooled.norm_squared().max(1e-300)) {
        return Err(Error::Singular("pooled covariance".into()));
    }
    let inv = pooled.try_inverse().ok_or_else(|| Error::Singular("pooled covariance".into()))?;
    let weight = inv * (means[1] - means[0]);
    let bias = -0.5 * weight.dot(&(means[0] + means[1])) + (counts[1] as f64 / counts[0] as f64).ln();
    Ok(LdaModel { class_means: means, pooled_cov: pooled, weight, bias })
}

/// L2 norm of the change in `(w, b)` between fitting with and without point `i`.
pub fn influence_magnitude(points: &[[f64; 2]], labels: &[usize], i: usize) -> Result<f64> {
    if i >= points.len() {
        return Err(Error::InvalidArgument(format!("index {i} out of range")));
    }
    let full = lda_fit(points, labels)?;
    influence_against(&full, points, labels, i)
}

fn influence_against(full: &LdaModel, points: &[[f64; 2]], labels: &[usize], i: usize) -> Result<f64> {
    let (p, l): (Vec<[f64; 2]>, Vec<usize>) = points
        .iter()
        .zip(labels)
        .enumerate()
        .filter(|&(j, _)| j != i)
        .map(|(_, (p, &l))| (*p, l))
        .unzip();
    let without = lda_fit(&p, &l)?;
    Ok(full
        .params()
        .iter()
        .zip(without.params())
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        .sqrt())
}

/// Influence of every point, in input order.
pub fn influence_all(points: &[[f64; 2]], labels: &[usize]) -> Result<Vec<f64>> {
    let full = lda_fit(points, labels)?;
    (0..points.len())
        .into_par_iter()
        .map(|i| influence_against(&full, points, labels, i))
        .collect()
}

/// Total variance of the top two standardized principal components after
/// downsampling every image to each resolution.
pub fn variance_vs_resolution(
    images: &LabeledDataset,
    resolutions: &[usize],
    method: DownsampleMethod,
) -> Result<Vec<(usize, f64)>> {
    if images.is_empty() {
        return Err(Error::InvalidArgument("empty dataset".into()));
    }
    resolutions
        .iter()
        .map(|&r| {
            let small = images
                .inputs()
                .iter()
                .map(|x| downsample(x, r, method))
                .collect::<Result<Vec<_>>>()?;
            let rows = rows_matrix(&small)?;
            let first = rows.row(0);
            if rows.row_iter().all(|r| r == first) {
                return Ok((r, 0.0));
            }
            let d = 2.min(rows.ncols()).min(rows.nrows() - 1);
            let pca = pca_fit_standardized(&rows, d)?;
            Ok((r, pca.explained_variance.iter().sum()))
        })
        .collect()
}
