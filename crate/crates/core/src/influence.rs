//! Exact KL influence, the variance approximation and the first- and
//! second-order bounds, all estimated from posterior ensembles.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::gibbs::{input_hessian, PosteriorEnsemble};
use crate::projection::ProjectedTriple;
use crate::stats::{covariance, log_mean_exp, mean, std_dev, variance};
use crate::tensor::{LabeledDataset, Tensor};

const KL_SLACK: f64 = 1e-9;
const RATIO_GUARD: f64 = 1e-12;

/// `log mean exp(-l) + mean l` over posterior samples of the loss.
pub fn kl_from_losses(losses: &[f64]) -> f64 {
    let neg: Vec<f64> = losses.iter().map(|l| -l).collect();
    let kl = log_mean_exp(&neg) + mean(losses);
    if kl < 0.0 && kl > -KL_SLACK {
        0.0
    } else {
        kl
    }
}

/// KL divergence from adding `(x, y)` to the data behind `e_x`.
pub fn kl_exact(e_x: &PosteriorEnsemble, x: &[f64], y: usize) -> Result<f64> {
    Ok(kl_from_losses(&e_x.losses(x, y)?))
}

/// [`kl_exact`] after checking that `e_x` was trained on `base`.
pub fn kl_exact_on(e_x: &PosteriorEnsemble, base: &LabeledDataset, x: &[f64], y: usize) -> Result<f64> {
    e_x.check_dataset(base)?;
    kl_exact(e_x, x, y)
}

/// Confirms `e_x` was trained on `base` and `e_xl` on `base` plus `(x_l, y)`.
pub fn verify_pair(
    e_x: &PosteriorEnsemble,
    e_xl: &PosteriorEnsemble,
    base: &LabeledDataset,
    x_l: &[f64],
    y: usize,
) -> Result<()> {
    e_x.check_dataset(base)?;
    let point = Tensor::new(base.input_shape().to_vec(), x_l.to_vec())?;
    e_xl.check_dataset(&base.with_point(point, y)?)
}

/// Posterior statistics of the loss at one triple.
#[derive(Debug, Clone, PartialEq)]
pub struct LossStats {
    pub mean_loss_h: f64,
    pub mean_loss_l: f64,
    pub var_loss_h: f64,
    pub var_loss_l: f64,
    pub log_mean_exp_neg_h: f64,
    pub log_mean_exp_neg_l: f64,
    pub grad_mean: DVector<f64>,
    pub grad_cov: DMatrix<f64>,
    /// `x_rᵀ Σ_g x_r` under the base ensemble.
    pub residual_quad: f64,
    /// `x_rᵀ Σ^l_g x_r` under the augmented ensemble.
    pub residual_quad_l: f64,
    pub quad_form_std: Option<f64>,
    pub quad_form_std_l: Option<f64>,
    pub zeta: f64,
    pub c: f64,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| p * q).sum()
}

fn check_dims(e: &PosteriorEnsemble, t: &ProjectedTriple) -> Result<()> {
    if t.dim() != e.arch.input_dim() {
        return Err(Error::Shape(format!(
            "triple has dimension {}, ensemble expects {}",
            t.dim(),
            e.arch.input_dim()
        )));
    }
    Ok(())
}

/// `std/mean` of `exp(l)`, evaluated on `exp(l - max l)`.
fn exp_cv(losses: &[f64]) -> f64 {
    let m = losses.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let shifted: Vec<f64> = losses.iter().map(|l| (l - m).exp()).collect();
    std_dev(&shifted) / mean(&shifted)
}

fn quad_form_std(e: &PosteriorEnsemble, x: &[f64], x_r: &[f64], y: usize) -> Result<f64> {
    let r = DVector::from_column_slice(x_r);
    let q = e
        .members
        .iter()
        .map(|p| Ok(r.dot(&(input_hessian(p, x, y)? * &r))))
        .collect::<Result<Vec<f64>>>()?;
    Ok(std_dev(&q))
}

pub fn loss_stats(
    e_x: &PosteriorEnsemble,
    e_xl: &PosteriorEnsemble,
    t: &ProjectedTriple,
    y: usize,
    second_order: bool,
) -> Result<LossStats> {
    check_dims(e_x, t)?;
    check_dims(e_xl, t)?;
    let lh = e_x.losses(&t.x_h, y)?;
    let ll = e_x.losses(&t.x_l, y)?;
    let grads = e_x.gradients(&t.x_l, y)?;
    let d = t.dim();
    let proj: Vec<f64> = grads.iter().map(|g| dot(g, &t.x_r)).collect();
    let cols: Vec<Vec<f64>> = (0..d).map(|j| grads.iter().map(|g| g[j]).collect()).collect();
    let grad_mean = DVector::from_iterator(d, cols.iter().map(|c| mean(c)));
    let grad_cov = DMatrix::from_fn(d, d, |i, j| if i <= j { covariance(&cols[i], &cols[j]) } else { 0.0 });
    let grad_cov = DMatrix::from_fn(d, d, |i, j| if i <= j { grad_cov[(i, j)] } else { grad_cov[(j, i)] });

    let ll2 = e_xl.losses(&t.x_l, y)?;
    let proj2: Vec<f64> = e_xl
        .gradients(&t.x_l, y)?
        .iter()
        .map(|g| dot(g, &t.x_r))
        .collect();
    let zeta = exp_cv(&ll2);
    let neg = |v: &[f64]| log_mean_exp(&v.iter().map(|l| -l).collect::<Vec<_>>());
    let (q, q_l) = if second_order {
        (
            Some(quad_form_std(e_x, &t.x_l, &t.x_r, y)?),
            Some(quad_form_std(e_xl, &t.x_l, &t.x_r, y)?),
        )
    } else {
        (None, None)
    };
    Ok(LossStats {
        mean_loss_h: mean(&lh),
        mean_loss_l: mean(&ll),
        var_loss_h: variance(&lh),
        var_loss_l: variance(&ll),
        log_mean_exp_neg_h: neg(&lh),
        log_mean_exp_neg_l: neg(&ll),
        grad_mean,
        grad_cov,
        residual_quad: variance(&proj),
        residual_quad_l: variance(&proj2),
        quad_form_std: q,
        quad_form_std_l: q_l,
        zeta,
        c: zeta,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InfluenceReport {
    pub levels_removed: usize,
    pub kl_h: f64,
    pub kl_l: f64,
    pub ratio_exact: f64,
    pub diff_exact: f64,
    pub ratio_var_approx: f64,
    pub ratio_lb: f64,
    pub ratio_ub: f64,
    pub ratio_lb_tight: f64,
    pub ratio_lb_clamped: bool,
    pub diff_lb: f64,
    pub diff_ub: f64,
    pub diff_lb_tight: f64,
    pub ratio_lb2: Option<f64>,
    pub ratio_ub2: Option<f64>,
    pub diff_lb2: Option<f64>,
    pub diff_ub2: Option<f64>,
    pub sigma_l_sq: f64,
    pub residual_norm_sigma_g: f64,
    pub residual_norm_sigma_g_l: f64,
    pub zeta: f64,
    pub members_x: usize,
    pub members_xl: usize,
    pub seed_x: u64,
    pub seed_xl: u64,
}

/// First-order ratio bounds `((1 - √q)², (1 + √q)², 1 + q, clamped)`.
pub fn ratio_bounds(q: f64) -> (f64, f64, f64, bool) {
    let s = q.max(0.0).sqrt();
    let clamped = 1.0 - s < 0.0;
    ((1.0 - s).powi(2).max(0.0), (1.0 + s).powi(2), 1.0 + q, clamped)
}

/// First-order difference bounds `(½n² - ζn, ½n² + ζn, ½n²)`.
pub fn diff_bounds(n: f64, zeta: f64) -> (f64, f64, f64) {
    let half = 0.5 * n * n;
    (half - zeta * n, half + zeta * n, half)
}

/// Second-order ratio bounds from `σ_l`, `‖x_r‖_{Σ_g}` and `Q_H`.
pub fn ratio_bounds2(sigma: f64, n: f64, q: f64) -> (f64, f64) {
    let s2 = sigma * sigma;
    let cross = sigma * q + n * q;
    (
        ((sigma - n).powi(2) + 0.25 * q * q - cross) / s2,
        ((sigma + n).powi(2) + 0.25 * q * q + cross) / s2,
    )
}

/// Second-order difference bounds from `‖x_r‖_{Σ^l_g}`, `Q_H` and `c`.
pub fn diff_bounds2(n: f64, q: f64, c: f64) -> (f64, f64) {
    let slack = c * (n + 0.5 * q);
    (0.5 * (n - 0.5 * q).powi(2) - slack, 0.5 * (n + 0.5 * q).powi(2) + slack)
}

pub fn influence_report(
    e_x: &PosteriorEnsemble,
    e_xl: &PosteriorEnsemble,
    t: &ProjectedTriple,
    y: usize,
    with_second_order: bool,
) -> Result<InfluenceReport> {
    let s = loss_stats(e_x, e_xl, t, y, with_second_order)?;
    let kl_h = clamp_kl(s.log_mean_exp_neg_h + s.mean_loss_h);
    let kl_l = clamp_kl(s.log_mean_exp_neg_l + s.mean_loss_l);
    if kl_l < RATIO_GUARD {
        return Err(Error::RatioUndefined);
    }
    let q = s.residual_quad / s.var_loss_l;
    let (ratio_lb, ratio_ub, ratio_lb_tight, ratio_lb_clamped) = ratio_bounds(q);
    let n_l = s.residual_quad_l.sqrt();
    let (diff_lb, diff_ub, diff_lb_tight) = diff_bounds(n_l, s.zeta);
    let n = s.residual_quad.sqrt();
    let sigma = s.var_loss_l.sqrt();
    let (r2, d2) = match (s.quad_form_std, s.quad_form_std_l) {
        (Some(qh), Some(qh_l)) => (Some(ratio_bounds2(sigma, n, qh)), Some(diff_bounds2(n_l, qh_l, s.c))),
        _ => (None, None),
    };
    Ok(InfluenceReport {
        levels_removed: t.levels_removed,
        kl_h,
        kl_l,
        ratio_exact: kl_h / kl_l,
        diff_exact: kl_h - kl_l,
        ratio_var_approx: s.var_loss_h / s.var_loss_l,
        ratio_lb,
        ratio_ub,
        ratio_lb_tight,
        ratio_lb_clamped,
        diff_lb,
        diff_ub,
        diff_lb_tight,
        ratio_lb2: r2.map(|b| b.0),
        ratio_ub2: r2.map(|b| b.1),
        diff_lb2: d2.map(|b| b.0),
        diff_ub2: d2.map(|b| b.1),
        sigma_l_sq: s.var_loss_l,
        residual_norm_sigma_g: n,
        residual_norm_sigma_g_l: n_l,
        zeta: s.zeta,
        members_x: e_x.len(),
        members_xl: e_xl.len(),
        seed_x: e_x.master_seed,
        seed_xl: e_xl.master_seed,
    })
}

fn clamp_kl(kl: f64) -> f64 {
    if kl < 0.0 && kl > -KL_SLACK {
        0.0
    } else {
        kl
    }
}

impl InfluenceReport {
    pub fn ratio_contained(&self) -> bool {
        self.ratio_lb <= self.ratio_exact && self.ratio_exact <= self.ratio_ub
    }

    pub fn diff_contained(&self) -> bool {
        self.diff_lb <= self.diff_exact && self.diff_exact <= self.diff_ub
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CovarianceCheck {
    pub cov1: f64,
    pub cov2: f64,
}

/// Sample covariances behind the tight lower bounds.
pub fn covariance_sign_check(
    e_x: &PosteriorEnsemble,
    e_xl: &PosteriorEnsemble,
    t: &ProjectedTriple,
    y: usize,
) -> Result<CovarianceCheck> {
    check_dims(e_x, t)?;
    check_dims(e_xl, t)?;
    let proj: Vec<f64> = e_x.gradients(&t.x_l, y)?.iter().map(|g| dot(g, &t.x_r)).collect();
    let cov1 = covariance(&proj, &e_x.losses(&t.x_l, y)?);
    let proj2: Vec<f64> = e_xl.gradients(&t.x_l, y)?.iter().map(|g| dot(g, &t.x_r)).collect();
    let ll2 = e_xl.losses(&t.x_l, y)?;
    let m = ll2.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let shifted: Vec<f64> = ll2.iter().map(|l| (l - m).exp()).collect();
    let cov2 = m.exp() * covariance(&proj2, &shifted);
    Ok(CovarianceCheck { cov1, cov2 })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TightnessRecord {
    pub input_dim: usize,
    pub depth: usize,
    pub levels_removed: usize,
    pub rel_error_var_approx: f64,
    pub gap_ratio_lb: f64,
    pub gap_ratio_ub: f64,
    pub gap_ratio_lb_tight: f64,
    pub gap_diff_lb: f64,
    pub gap_diff_ub: f64,
    pub gap_diff_lb_tight: f64,
    pub sigma_l_sq: f64,
    pub residual_norm: f64,
}

impl TightnessRecord {
    pub fn from_report(r: &InfluenceReport, input_dim: usize, depth: usize) -> Self {
        TightnessRecord {
            input_dim,
            depth,
            levels_removed: r.levels_removed,
            rel_error_var_approx: (r.ratio_exact - r.ratio_var_approx) / r.ratio_exact,
            gap_ratio_lb: r.ratio_exact - r.ratio_lb,
            gap_ratio_ub: (r.ratio_ub - r.ratio_exact).abs(),
            gap_ratio_lb_tight: r.ratio_exact - r.ratio_lb_tight,
            gap_diff_lb: r.diff_exact - r.diff_lb,
            gap_diff_ub: (r.diff_ub - r.diff_exact).abs(),
            gap_diff_lb_tight: r.diff_exact - r.diff_lb_tight,
            sigma_l_sq: r.sigma_l_sq,
            residual_norm: r.residual_norm_sigma_g,
        }
    }
}

/// Writes one CSV row per record, header from the field names.
pub fn write_csv<T: Serialize>(records: &[T], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    for r in records {
        w.serialize(r).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::InvalidArgument(format!("csv {}: {other:?}", path.display())),
    }
}

pub use crate::simulation::tightness_sweep;
