//! Low-resolution loss weights over training and mixed batch ordering.

use std::f64::consts::PI;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::RngStream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    #[serde(alias = "one_phase_cosine")]
    OnePhase,
    #[serde(alias = "two_phase_cosine")]
    TwoPhase,
    /// Both branches weighted 1 throughout.
    Equal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleConfig {
    pub kind: ScheduleKind,
    pub ratio_low: f64,
    pub p_star: f64,
    pub floor_a: f64,
    pub w_high: f64,
    /// Apply [`rescale_weights`] on top of the schedule.
    pub rescale: bool,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        ScheduleConfig {
            kind: ScheduleKind::TwoPhase,
            ratio_low: 0.5,
            p_star: 0.7,
            floor_a: 0.05,
            w_high: 1.0,
            rescale: true,
        }
    }
}

impl ScheduleConfig {
    pub fn new(kind: ScheduleKind, ratio_low: f64) -> Self {
        ScheduleConfig { kind, ratio_low, ..ScheduleConfig::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.ratio_low) {
            return Err(Error::InvalidArgument(format!("ratio_low must be in [0, 1], got {}", self.ratio_low)));
        }
        if !(self.p_star > 0.0 && self.p_star < 1.0) {
            return Err(Error::InvalidArgument(format!("p_star must be in (0, 1), got {}", self.p_star)));
        }
        if !(self.floor_a > 0.0 && self.floor_a < 1.0) {
            return Err(Error::InvalidArgument(format!("floor_a must be in (0, 1), got {}", self.floor_a)));
        }
        Ok(())
    }
}

fn half_cos(t: f64) -> f64 {
    0.5 * (1.0 + (PI * t).cos())
}

/// Weight of the low-resolution loss at training progress `p` in `[0, 1]`.
pub fn low_weight_at(cfg: &ScheduleConfig, p: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::InvalidArgument(format!("progress must be in [0, 1], got {p}")));
    }
    let r = cfg.ratio_low;
    Ok(match cfg.kind {
        ScheduleKind::OnePhase => r * (0.2 + 0.8 * half_cos(p)),
        ScheduleKind::TwoPhase => {
            let a = cfg.floor_a;
            if p <= cfg.p_star {
                r * (a + (1.0 - a) * half_cos(p / cfg.p_star))
            } else {
                r * a * half_cos((p - cfg.p_star) / (1.0 - cfg.p_star))
            }
        }
        ScheduleKind::Equal => 1.0,
    })
}

pub fn low_weight(cfg: &ScheduleConfig, epoch: usize, total_epochs: usize) -> Result<f64> {
    if total_epochs == 0 {
        return Err(Error::InvalidArgument("total_epochs must be >= 1".into()));
    }
    if epoch > total_epochs {
        return Err(Error::InvalidArgument(format!("epoch {epoch} beyond total {total_epochs}")));
    }
    low_weight_at(cfg, epoch as f64 / total_epochs as f64)
}

/// Rescales branch weights so each resolution contributes as if it had half the batches.
pub fn rescale_weights(w_low: f64, w_high: f64, n_low: usize, n_high: usize) -> Result<(f64, f64)> {
    if n_low == 0 || n_high == 0 {
        return Err(Error::InvalidArgument("batch counts must be >= 1".into()));
    }
    let total = (n_low + n_high) as f64;
    Ok((
        w_low * 0.5 / (n_low as f64 / total),
        w_high * 0.5 / (n_high as f64 / total),
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Resolution {
    High,
    Low,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BatchDescriptor {
    pub resolution: Resolution,
    /// Sample indices into that resolution's pool.
    pub indices: Vec<usize>,
}

/// Interleaves high and low batches proportionally to their counts.
///
/// The `j`-th batch of a resolution with `n` batches is placed at fractional
/// position `(j + 1/2) / n`; merging both lists by position keeps every prefix
/// within one batch of the global ratio.
pub fn batch_plan(
    n_high_samples: usize,
    n_low_samples: usize,
    batch_size: usize,
    stream: RngStream,
) -> Result<Vec<BatchDescriptor>> {
    if batch_size == 0 {
        return Err(Error::InvalidArgument("batch_size must be >= 1".into()));
    }
    let batches = |n: usize, res: Resolution, tag: &str| -> Vec<BatchDescriptor> {
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut stream.child(crate::rng::label(tag)).rng());
        idx.chunks(batch_size)
            .map(|c| BatchDescriptor { resolution: res, indices: c.to_vec() })
            .collect()
    };
    let high = batches(n_high_samples, Resolution::High, "high");
    let low = batches(n_low_samples, Resolution::Low, "low");
    let (nh, nl) = (high.len(), low.len());
    let mut plan = Vec::with_capacity(nh + nl);
    let (mut hi, mut lo) = (high.into_iter().peekable(), low.into_iter().peekable());
    let (mut i, mut j) = (0usize, 0usize);
    loop {
        let take_high = match (hi.peek(), lo.peek()) {
            (None, None) => break,
            (Some(_), None) => true,
            (None, Some(_)) => false,
            // compare (2i+1)/2nh with (2j+1)/2nl exactly
            (Some(_), Some(_)) => (2 * i + 1) * nl <= (2 * j + 1) * nh,
        };
        if take_high {
            plan.push(hi.next().expect("peeked"));
            i += 1;
        } else {
            plan.push(lo.next().expect("peeked"));
            j += 1;
        }
    }
    Ok(plan)
}
