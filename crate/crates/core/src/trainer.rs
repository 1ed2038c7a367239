//! Mixed-resolution training experiments, downsampling and storage arithmetic.

use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cnn::{Cnn, CnnShape, CnnTrace};
use crate::error::{Error, Result};
use crate::mlp::{cross_entropy, AdamState, Cache, MlpArchitecture, MlpParams};
use crate::rng::{label, RngStream};
use crate::schedule::{batch_plan, low_weight, rescale_weights, Resolution, ScheduleConfig, ScheduleKind};
use crate::stats::mean_std;
use crate::tensor::{LabeledDataset, Tensor};
use crate::wavelet::{dwt_forward_with, dwt_inverse, Wavelet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DownsampleMethod {
    Haar,
    Db2,
    /// Area averaging; also the fallback for non-dyadic targets.
    Area,
}

fn spatial_shape(x: &Tensor) -> Result<(usize, usize, usize)> {
    // (channels, spatial rank, side)
    match x.shape() {
        [n] => Ok((1, 1, *n)),
        [h, w] if h == w => Ok((1, 2, *h)),
        [c, h, w] if h == w => Ok((*c, 2, *h)),
        s => Err(Error::Shape(format!("expected a signal or square image, got {s:?}"))),
    }
}

fn with_side(x: &Tensor, side: usize) -> Vec<usize> {
    let mut s = x.shape().to_vec();
    let r = s.len();
    if r == 1 {
        s[0] = side;
    } else {
        s[r - 1] = side;
        s[r - 2] = side;
    }
    s
}

fn dyadic_levels(source: usize, target: usize) -> Option<usize> {
    (source.is_multiple_of(target) && (source / target).is_power_of_two()).then(|| (source / target).trailing_zeros() as usize)
}

/// `t x s` area-overlap weights; each row averages the input cells it covers.
fn area_matrix(s: usize, t: usize) -> Vec<f64> {
    let scale = s as f64 / t as f64;
    let mut a = vec![0.0; t * s];
    for i in 0..t {
        let (lo, hi) = (i as f64 * scale, (i + 1) as f64 * scale);
        for j in lo.floor() as usize..(hi.ceil() as usize).min(s) {
            let overlap = (hi.min((j + 1) as f64) - lo.max(j as f64)).max(0.0);
            a[i * s + j] = overlap / scale;
        }
    }
    a
}

/// Applies the row map `m` (`out x inp`) along every spatial axis of each channel.
fn separable(data: &[f64], channels: usize, rank: usize, inp: usize, out: usize, m: &[f64]) -> Vec<f64> {
    let apply = |v: &[f64], stride: usize, o: &mut [f64], ostride: usize| {
        for i in 0..out {
            o[i * ostride] = (0..inp).map(|j| m[i * inp + j] * v[j * stride]).sum();
        }
    };
    let mut result = Vec::with_capacity(channels * out.pow(rank as u32));
    for c in 0..channels {
        if rank == 1 {
            let v = &data[c * inp..(c + 1) * inp];
            let mut o = vec![0.0; out];
            apply(v, 1, &mut o, 1);
            result.extend(o);
        } else {
            let plane = &data[c * inp * inp..(c + 1) * inp * inp];
            let mut rows = vec![0.0; inp * out];
            for r in 0..inp {
                apply(&plane[r * inp..], 1, &mut rows[r * out..], 1);
            }
            let mut o = vec![0.0; out * out];
            for col in 0..out {
                apply(&rows[col..], out, &mut o[col..], out);
            }
            result.extend(o);
        }
    }
    result
}

fn per_channel<F>(x: &Tensor, channels: usize, side: usize, mut f: F) -> Result<Vec<f64>>
where
    F: FnMut(Tensor) -> Result<Vec<f64>>,
{
    let plane = if x.rank() == 1 { vec![side] } else { vec![side, side] };
    let n = plane.iter().product::<usize>();
    let mut out = Vec::new();
    for c in 0..channels {
        out.extend(f(Tensor::new(plane.clone(), x.data()[c * n..(c + 1) * n].to_vec())?)?);
    }
    Ok(out)
}

/// Low-resolution form of `x` with side (or length) `target`.
///
/// Dyadic targets with a wavelet method return the approximation band scaled
/// to keep mean brightness; other targets use area averaging.
pub fn downsample(x: &Tensor, target: usize, method: DownsampleMethod) -> Result<Tensor> {
    let (channels, rank, side) = spatial_shape(x)?;
    if target == 0 || target > side {
        return Err(Error::InvalidArgument(format!("cannot downsample side {side} to {target}")));
    }
    if target == side {
        return Ok(x.clone());
    }
    let shape = with_side(x, target);
    match (method, dyadic_levels(side, target)) {
        (DownsampleMethod::Haar | DownsampleMethod::Db2, Some(k)) => {
            let w = if method == DownsampleMethod::Haar { Wavelet::Haar } else { Wavelet::Db2 };
            let scale = std::f64::consts::FRAC_1_SQRT_2.powi((rank * k) as i32);
            let data = per_channel(x, channels, side, |t| {
                Ok(dwt_forward_with(&t, k, w)?.approx.iter().map(|v| v * scale).collect())
            })?;
            Tensor::new(shape, data)
        }
        _ => Tensor::new(shape, separable(x.data(), channels, rank, side, target, &area_matrix(side, target))),
    }
}

/// Embeds a low-resolution input back at side `side`, inverting [`downsample`]
/// with all discarded detail set to zero.
pub fn upsample(x: &Tensor, side: usize, method: DownsampleMethod) -> Result<Tensor> {
    let (channels, rank, t) = spatial_shape(x)?;
    if side < t {
        return Err(Error::InvalidArgument(format!("cannot upsample side {t} to {side}")));
    }
    if side == t {
        return Ok(x.clone());
    }
    let shape = with_side(x, side);
    match (method, dyadic_levels(side, t)) {
        (DownsampleMethod::Haar | DownsampleMethod::Db2, Some(k)) => {
            let w = if method == DownsampleMethod::Haar { Wavelet::Haar } else { Wavelet::Db2 };
            let scale = std::f64::consts::SQRT_2.powi((rank * k) as i32);
            let plane = if rank == 1 { vec![side] } else { vec![side, side] };
            let zeros = Tensor::zeros(plane);
            let data = per_channel(x, channels, t, |low| {
                let mut dec = dwt_forward_with(&zeros, k, w)?;
                dec.approx = low.data().iter().map(|v| v * scale).collect();
                Ok(dwt_inverse(&dec)?.into_data())
            })?;
            Tensor::new(shape, data)
        }
        _ => {
            let a = area_matrix(side, t);
            let ratio = side as f64 / t as f64;
            let mut up = vec![0.0; side * t];
            for i in 0..t {
                for j in 0..side {
                    up[j * t + i] = a[i * side + j] * ratio;
                }
            }
            Tensor::new(shape, separable(x.data(), channels, rank, t, side, &up))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StorageReport {
    pub downsampled_fraction: f64,
    pub mixed_fraction: f64,
    pub grid_cells_red: usize,
    pub grid_cells_yellow: usize,
}

/// Storage of a dataset downsampled from side `s` to `t`, and of one keeping a
/// fraction `r` at full resolution, relative to the full-resolution dataset.
pub fn storage_report(s: usize, t: usize, r: f64) -> Result<StorageReport> {
    if t > s || s == 0 || !(0.0..=1.0).contains(&r) {
        return Err(Error::InvalidArgument(format!("invalid storage query s={s} t={t} r={r}")));
    }
    let (s2, t2) = ((s * s) as f64, (t * t) as f64);
    let downsampled = t2 / s2;
    let mixed = (t2 * (1.0 - r) + s2 * r) / s2;
    let cells = |f: f64| (f * 100.0 - 1e-9).ceil().max(0.0) as usize;
    let red = cells(downsampled);
    Ok(StorageReport {
        downsampled_fraction: downsampled,
        mixed_fraction: mixed,
        grid_cells_red: red,
        grid_cells_yellow: cells(mixed) - red,
    })
}

const WHITEN_EPS: f64 = 1e-5;

fn huber(d: f64) -> (f64, f64) {
    if d.abs() <= 1.0 {
        (0.5 * d * d, d)
    } else {
        (d.abs() - 0.5, d.signum())
    }
}

/// Whitens each column of a `batch x dim` row-major block; returns the
/// whitened values and the per-column inverse std.
fn whiten(rows: &[Vec<f64>]) -> (Vec<Vec<f64>>, Vec<f64>) {
    let n = rows.len() as f64;
    let dim = rows[0].len();
    let mut out = rows.to_vec();
    let mut inv = vec![0.0; dim];
    for j in 0..dim {
        let mu = rows.iter().map(|r| r[j]).sum::<f64>() / n;
        let var = rows.iter().map(|r| (r[j] - mu).powi(2)).sum::<f64>() / n;
        inv[j] = 1.0 / (var + WHITEN_EPS).sqrt();
        for (o, r) in out.iter_mut().zip(rows) {
            o[j] = (r[j] - mu) * inv[j];
        }
    }
    (out, inv)
}

fn whiten_backward(white: &[Vec<f64>], inv: &[f64], dwhite: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = white.len() as f64;
    let mut d = dwhite.to_vec();
    for j in 0..inv.len() {
        let mean_d = dwhite.iter().map(|r| r[j]).sum::<f64>() / n;
        let mean_dy = dwhite.iter().zip(white).map(|(g, y)| g[j] * y[j]).sum::<f64>() / n;
        for (o, (g, y)) in d.iter_mut().zip(dwhite.iter().zip(white)) {
            o[j] = inv[j] * (g[j] - mean_d - y[j] * mean_dy);
        }
    }
    d
}

/// Mean smooth-L1 distance between two already whitened feature vectors.
pub fn scale_consistency_loss(feat_high: &[f64], feat_low: &[f64]) -> Result<f64> {
    if feat_high.len() != feat_low.len() || feat_high.is_empty() {
        return Err(Error::LengthMismatch(format!("features {} vs {}", feat_high.len(), feat_low.len())));
    }
    Ok(feat_high.iter().zip(feat_low).map(|(a, b)| huber(a - b).0).sum::<f64>() / feat_high.len() as f64)
}

/// Batch version: whitens both sides per dimension, returns the loss and its
/// gradients with respect to the raw features.
#[allow(clippy::type_complexity)]
pub fn scale_consistency_batch(high: &[Vec<f64>], low: &[Vec<f64>]) -> Result<(f64, Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    if high.len() != low.len() || high.is_empty() || high[0].len() != low[0].len() {
        return Err(Error::LengthMismatch("feature batch shapes differ".into()));
    }
    let (wh, ih) = whiten(high);
    let (wl, il) = whiten(low);
    let count = (high.len() * high[0].len()) as f64;
    let mut total = 0.0;
    let mut dh = vec![vec![0.0; high[0].len()]; high.len()];
    let mut dl = dh.clone();
    for i in 0..high.len() {
        for j in 0..high[0].len() {
            let (v, g) = huber(wh[i][j] - wl[i][j]);
            total += v;
            dh[i][j] = g / count;
            dl[i][j] = -g / count;
        }
    }
    Ok((total / count, whiten_backward(&wh, &ih, &dh), whiten_backward(&wl, &il, &dl)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Experiment {
    Subset,
    Ratio,
    Downsampled,
    Size,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Mlp,
    Cnn,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MixTrainConfig {
    pub experiment: Experiment,
    pub high_side: usize,
    pub low_side: usize,
    pub high_fraction: f64,
    pub epochs: usize,
    pub warmup_epochs: usize,
    pub base_lr: f64,
    pub weight_decay: f64,
    pub grad_clip_norm: f64,
    pub schedule: ScheduleKind,
    pub rescale: bool,
    pub scale_consistency_weight: f64,
    pub seed: u64,
    pub batch_size: usize,
    pub model: ModelKind,
    pub hidden_width: usize,
    /// Number of linear layers of the MLP.
    pub depth: usize,
    pub downsample: DownsampleMethod,
    pub test_fraction: f64,
}

impl Default for MixTrainConfig {
    fn default() -> Self {
        MixTrainConfig {
            experiment: Experiment::Ratio,
            high_side: 32,
            low_side: 8,
            high_fraction: 0.1,
            epochs: 100,
            warmup_epochs: 20,
            base_lr: 5e-4,
            weight_decay: 0.05,
            grad_clip_norm: 1.0,
            schedule: ScheduleKind::TwoPhase,
            rescale: true,
            scale_consistency_weight: 0.0,
            seed: 0,
            batch_size: 32,
            model: ModelKind::Mlp,
            hidden_width: 64,
            depth: 4,
            downsample: DownsampleMethod::Db2,
            test_fraction: 0.25,
        }
    }
}

impl MixTrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.warmup_epochs >= self.epochs {
            return bad(format!("warmup_epochs {} must be < epochs {}", self.warmup_epochs, self.epochs));
        }
        if !(self.high_fraction > 0.0 && self.high_fraction <= 1.0) {
            return bad(format!("high_fraction must be in (0, 1], got {}", self.high_fraction));
        }
        if self.low_side == 0 || self.low_side > self.high_side {
            return bad(format!("low_side must be in [1, {}], got {}", self.high_side, self.low_side));
        }
        if self.experiment != Experiment::Size
            && self.experiment != Experiment::Subset
            && self.low_side == self.high_side
        {
            return bad("low_side must be < high_side".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1".into());
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return bad(format!("test_fraction must be in (0, 1), got {}", self.test_fraction));
        }
        if self.scale_consistency_weight < 0.0 || self.grad_clip_norm <= 0.0 || self.base_lr <= 0.0 {
            return bad("weights, clip norm and learning rate must be positive".into());
        }
        if self.model == ModelKind::Mlp && self.depth < 2 {
            return bad("depth must be >= 2".into());
        }
        Ok(())
    }

    /// Fraction of training samples kept at full resolution.
    pub fn effective_high_fraction(&self) -> f64 {
        match self.experiment {
            Experiment::Size => 0.1,
            Experiment::Downsampled => 0.0,
            _ => self.high_fraction,
        }
    }
}

/// Learning rate at optimizer step `step` of `total` with `warmup` warm-up steps.
pub fn lr_at(base: f64, step: usize, warmup: usize, total: usize) -> f64 {
    if step < warmup {
        base * (step + 1) as f64 / warmup as f64
    } else {
        let span = (total - warmup).max(1) as f64;
        base * 0.5 * (1.0 + (PI * (step - warmup) as f64 / span).cos())
    }
}

enum Net {
    Mlp(MlpParams),
    Cnn(Cnn),
}

enum Trace {
    Mlp(Cache),
    Cnn(CnnTrace),
}

impl Trace {
    fn logits(&self) -> &[f64] {
        match self {
            Trace::Mlp(c) => c.logits(),
            Trace::Cnn(t) => t.logits(),
        }
    }
}

/// One network input: the flattened embedding for the MLP, the raw image for the CNN.
#[derive(Clone)]
struct Input {
    data: Vec<f64>,
    side: usize,
}

impl Net {
    fn params_mut(&mut self) -> &mut [f64] {
        match self {
            Net::Mlp(p) => p.flat_mut(),
            Net::Cnn(c) => c.params_mut(),
        }
    }

    fn param_count(&self) -> usize {
        match self {
            Net::Mlp(p) => p.flat().len(),
            Net::Cnn(c) => c.params().len(),
        }
    }

    fn new_trace(&self) -> Trace {
        match self {
            Net::Mlp(_) => Trace::Mlp(Cache::default()),
            Net::Cnn(_) => Trace::Cnn(CnnTrace::default()),
        }
    }

    fn forward(&self, x: &Input, t: &mut Trace) {
        match (self, t) {
            (Net::Mlp(p), Trace::Mlp(c)) => p.forward_into(&x.data, c),
            (Net::Cnn(n), Trace::Cnn(c)) => n.forward(&x.data, x.side, c),
            _ => unreachable!("trace kind matches net"),
        }
    }

    fn features<'a>(&self, t: &'a Trace) -> &'a [f64] {
        match (self, t) {
            (Net::Mlp(p), Trace::Mlp(c)) => c.activation(p.arch().depth() - 1),
            (_, Trace::Cnn(c)) => c.features(),
            _ => unreachable!("trace kind matches net"),
        }
    }

    fn backward(&self, t: &Trace, dlogits: &[f64], dfeat: Option<&[f64]>, grad: &mut [f64]) {
        match (self, t) {
            (Net::Mlp(p), Trace::Mlp(c)) => p.backward(c, dlogits, dfeat, Some(grad), None),
            (Net::Cnn(n), Trace::Cnn(c)) => n.backward(c, dlogits, dfeat, grad),
            _ => unreachable!("trace kind matches net"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplicateResult {
    pub replicate: usize,
    pub test_accuracy: f64,
    pub diverged_at_epoch: Option<usize>,
    pub loss_curve: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentResult {
    pub experiment: Experiment,
    pub high_fraction: f64,
    pub low_side: usize,
    pub test_accuracy_mean: f64,
    pub test_accuracy_std: f64,
    pub replicates: Vec<ReplicateResult>,
    /// Effective low-resolution weight per epoch after rescaling.
    pub low_weight_curve: Vec<f64>,
    pub storage: StorageReport,
    pub config: MixTrainConfig,
}

/// Deterministic train/test split of `n` indices.
fn split(n: usize, test_fraction: f64, stream: RngStream) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut stream.rng());
    let n_test = ((n as f64 * test_fraction).round() as usize).clamp(1, n - 1);
    let test = idx.split_off(n - n_test);
    (idx, test)
}

struct Prepared {
    high: Vec<(Input, usize)>,
    low: Vec<(Input, usize)>,
    /// Low-resolution versions of the high samples for the consistency term.
    high_as_low: Vec<Input>,
    test: Vec<(Input, usize)>,
}

fn to_input(x: &Tensor, high_side: usize, cfg: &MixTrainConfig) -> Result<Input> {
    let (_, _, side) = spatial_shape(x)?;
    match cfg.model {
        ModelKind::Mlp => Ok(Input { data: upsample(x, high_side, cfg.downsample)?.into_data(), side: high_side }),
        ModelKind::Cnn => Ok(Input { data: x.data().to_vec(), side }),
    }
}

/// Test inputs always enter at full resolution.
fn test_input(x: &Tensor, cfg: &MixTrainConfig) -> Result<Input> {
    let (_, _, side) = spatial_shape(x)?;
    if side != cfg.high_side {
        return Err(Error::Shape(format!("test input side {side} is not the full resolution {}", cfg.high_side)));
    }
    Ok(Input { data: x.data().to_vec(), side })
}

fn prepare(cfg: &MixTrainConfig, data: &LabeledDataset, replicate: usize) -> Result<Prepared> {
    let (_, _, side) = spatial_shape(&data.inputs()[0])?;
    if side != cfg.high_side {
        return Err(Error::Config(format!("data side {side} differs from high_side {}", cfg.high_side)));
    }
    let (train, test) = split(data.len(), cfg.test_fraction, RngStream::new(cfg.seed, replicate as u64).child(label("split")));
    let r = cfg.effective_high_fraction();
    let n_high = match cfg.experiment {
        Experiment::Downsampled => 0,
        _ => ((train.len() as f64 * r).round() as usize).clamp(1, train.len()),
    };
    let keep_low = match cfg.experiment {
        Experiment::Subset => 0..0,
        _ => n_high..train.len(),
    };
    let low_side = cfg.low_side;
    let sample = |i: usize| (&data.inputs()[i], data.labels()[i]);
    let mut high: Vec<(Input, usize)> = train[..n_high]
        .iter()
        .map(|&i| {
            let (x, y) = sample(i);
            Ok((to_input(x, side, cfg)?, y))
        })
        .collect::<Result<_>>()?;
    let mut low: Vec<(Input, usize)> = train[keep_low]
        .iter()
        .map(|&i| {
            let (x, y) = sample(i);
            Ok((to_input(&downsample(x, low_side, cfg.downsample)?, side, cfg)?, y))
        })
        .collect::<Result<_>>()?;
    if low_side == side {
        high.append(&mut low);
    }
    let high_as_low = if cfg.scale_consistency_weight > 0.0 && low_side < side {
        train[..n_high]
            .iter()
            .map(|&i| to_input(&downsample(sample(i).0, low_side, cfg.downsample)?, side, cfg))
            .collect::<Result<_>>()?
    } else {
        Vec::new()
    };
    let test = test
        .iter()
        .map(|&i| {
            let (x, y) = sample(i);
            Ok((test_input(x, cfg)?, y))
        })
        .collect::<Result<_>>()?;
    Ok(Prepared { high, low, high_as_low, test })
}

fn build_net(cfg: &MixTrainConfig, input_len: usize, classes: usize, stream: &RngStream) -> Result<Net> {
    let mut rng = stream.child(label("init")).rng();
    Ok(match cfg.model {
        ModelKind::Mlp => {
            let mut widths = vec![input_len];
            widths.extend(std::iter::repeat_n(cfg.hidden_width, cfg.depth - 1));
            widths.push(classes);
            let arch = MlpArchitecture::new(widths)?;
            // He-style scale for ReLU layers
            Net::Mlp(MlpParams::init(&arch, std::f64::consts::SQRT_2, &mut rng))
        }
        ModelKind::Cnn => Net::Cnn(Cnn::init(CnnShape { classes, ..CnnShape::default() }, &mut rng)),
    })
}

fn accuracy(net: &Net, test: &[(Input, usize)]) -> f64 {
    let mut t = net.new_trace();
    let correct = test
        .iter()
        .filter(|(x, y)| {
            net.forward(x, &mut t);
            let l = t.logits();
            let pred = (0..l.len()).max_by(|&a, &b| l[a].total_cmp(&l[b]).then(b.cmp(&a))).unwrap_or(0);
            pred == *y
        })
        .count();
    correct as f64 / test.len() as f64
}

fn branch_weights(cfg: &MixTrainConfig, epoch: usize, n_high: usize, n_low: usize, bh: usize, bl: usize) -> Result<(f64, f64)> {
    if n_low == 0 {
        return Ok((0.0, 1.0));
    }
    if cfg.schedule == ScheduleKind::Equal {
        return Ok((1.0, 1.0));
    }
    let sched = ScheduleConfig::new(cfg.schedule, n_low as f64 / (n_low + n_high) as f64);
    let w_low = low_weight(&sched, epoch, cfg.epochs)?;
    if cfg.rescale && bh > 0 {
        rescale_weights(w_low, sched.w_high, bl, bh)
    } else {
        Ok((w_low, sched.w_high))
    }
}

/// Effective low-resolution weight of each epoch.
pub fn low_weight_curve(cfg: &MixTrainConfig, n_high: usize, n_low: usize) -> Result<Vec<f64>> {
    let (bh, bl) = (n_high.div_ceil(cfg.batch_size), n_low.div_ceil(cfg.batch_size));
    (0..cfg.epochs).map(|e| Ok(branch_weights(cfg, e, n_high, n_low, bh, bl)?.0)).collect()
}

fn train_replicate(cfg: &MixTrainConfig, p: &Prepared, classes: usize, replicate: usize) -> Result<ReplicateResult> {
    let stream = RngStream::new(cfg.seed, 1 + replicate as u64);
    let input_len = p.high.first().or(p.low.first()).map(|s| s.0.data.len()).unwrap_or(0);
    let mut net = build_net(cfg, input_len, classes, &stream)?;
    let n = net.param_count();
    let mut adam = AdamState::new(n);
    let (nh, nl) = (p.high.len(), p.low.len());
    let (bh, bl) = (nh.div_ceil(cfg.batch_size), nl.div_ceil(cfg.batch_size));
    let steps_per_epoch = bh + bl;
    let total = steps_per_epoch * cfg.epochs;
    let warmup = steps_per_epoch * cfg.warmup_epochs;
    let mut grad = vec![0.0; n];
    let mut step = 0;
    let mut curve = Vec::with_capacity(cfg.epochs);
    let mut t = net.new_trace();
    let mut t2 = net.new_trace();
    for epoch in 0..cfg.epochs {
        let (w_low, w_high) = branch_weights(cfg, epoch, nh, nl, bh, bl)?;
        let plan = batch_plan(nh, nl, cfg.batch_size, stream.child(label("epoch")).with_id(epoch as u64))?;
        let mut epoch_loss = 0.0;
        for batch in &plan {
            let (pool, w) = match batch.resolution {
                Resolution::High => (&p.high, w_high),
                Resolution::Low => (&p.low, w_low),
            };
            grad.iter_mut().for_each(|g| *g = 0.0);
            let scale = w / batch.indices.len() as f64;
            let mut batch_loss = 0.0;
            let consistency = batch.resolution == Resolution::High && !p.high_as_low.is_empty();
            let mut feats = (Vec::new(), Vec::new());
            for &i in &batch.indices {
                let (x, y) = &pool[i];
                net.forward(x, &mut t);
                let (l, mut d) = cross_entropy(t.logits(), *y);
                batch_loss += l;
                d.iter_mut().for_each(|v| *v *= scale);
                net.backward(&t, &d, None, &mut grad);
                if consistency {
                    feats.0.push(net.features(&t).to_vec());
                    net.forward(&p.high_as_low[i], &mut t2);
                    feats.1.push(net.features(&t2).to_vec());
                }
            }
            if consistency && batch.indices.len() > 1 {
                let (_, dh, dl) = scale_consistency_batch(&feats.0, &feats.1)?;
                let cw = cfg.scale_consistency_weight;
                for (k, &i) in batch.indices.iter().enumerate() {
                    let (x, _) = &pool[i];
                    let dfh: Vec<f64> = dh[k].iter().map(|v| v * cw).collect();
                    let dfl: Vec<f64> = dl[k].iter().map(|v| v * cw).collect();
                    let zero_logits = vec![0.0; classes];
                    net.forward(x, &mut t);
                    net.backward(&t, &zero_logits, Some(&dfh), &mut grad);
                    net.forward(&p.high_as_low[i], &mut t2);
                    net.backward(&t2, &zero_logits, Some(&dfl), &mut grad);
                }
            }
            epoch_loss += batch_loss;
            if !batch_loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Ok(ReplicateResult {
                    replicate,
                    test_accuracy: 0.0,
                    diverged_at_epoch: Some(epoch),
                    loss_curve: curve,
                });
            }
            let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
            if norm > cfg.grad_clip_norm {
                let s = cfg.grad_clip_norm / norm;
                grad.iter_mut().for_each(|g| *g *= s);
            }
            let lr = lr_at(cfg.base_lr, step, warmup, total);
            adam.step(net.params_mut(), &grad, lr, cfg.weight_decay, true);
            step += 1;
        }
        curve.push(epoch_loss / (nh + nl) as f64);
    }
    Ok(ReplicateResult {
        replicate,
        test_accuracy: accuracy(&net, &p.test),
        diverged_at_epoch: None,
        loss_curve: curve,
    })
}

/// Trains `replicates` independent models and evaluates them on the
/// full-resolution test split.
pub fn run_experiment(cfg: &MixTrainConfig, data: &LabeledDataset, replicates: usize) -> Result<ExperimentResult> {
    cfg.validate()?;
    if replicates == 0 {
        return Err(Error::InvalidArgument("replicates must be >= 1".into()));
    }
    if cfg.model == ModelKind::Cnn && data.input_shape().len() != 2 {
        return Err(Error::Config("the cnn model needs square single-channel images".into()));
    }
    if data.len() < 4 {
        return Err(Error::InvalidArgument("need at least 4 samples".into()));
    }
    let classes = data.num_classes();
    let runs = (0..replicates)
        .into_par_iter()
        .map(|r| {
            let prepared = prepare(cfg, data, r)?;
            let counts = (prepared.high.len(), prepared.low.len());
            Ok((train_replicate(cfg, &prepared, classes, r)?, counts))
        })
        .collect::<Result<Vec<_>>>()?;
    let (n_high, n_low) = runs[0].1;
    let reps: Vec<ReplicateResult> = runs.into_iter().map(|(r, _)| r).collect();
    let ok: Vec<f64> = reps.iter().filter(|r| r.diverged_at_epoch.is_none()).map(|r| r.test_accuracy).collect();
    let (mean, std) = if ok.is_empty() { (0.0, 0.0) } else { mean_std(&ok) };
    let low_side = if cfg.experiment == Experiment::Subset { cfg.high_side } else { cfg.low_side };
    Ok(ExperimentResult {
        experiment: cfg.experiment,
        high_fraction: cfg.effective_high_fraction(),
        low_side,
        test_accuracy_mean: mean,
        test_accuracy_std: if ok.len() > 1 { std } else { 0.0 },
        replicates: reps,
        low_weight_curve: low_weight_curve(cfg, n_high, n_low)?,
        storage: storage_report(cfg.high_side, low_side, cfg.effective_high_fraction())?,
        config: cfg.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::synth_two_class_images;
    use proptest::prelude::*;

    fn img(side: usize, f: impl Fn(usize, usize) -> f64) -> Tensor {
        Tensor::new(vec![side, side], (0..side * side).map(|i| f(i / side, i % side)).collect()).unwrap()
    }

    #[test]
    fn constant_and_identity() {
        let c = img(16, |_, _| 0.37);
        for m in [DownsampleMethod::Haar, DownsampleMethod::Db2, DownsampleMethod::Area] {
            for t in [8, 4, 12, 5] {
                let d = downsample(&c, t, m).unwrap();
                assert_eq!(d.shape(), &[t, t]);
                assert!(d.data().iter().all(|v| (v - 0.37).abs() < 1e-12), "{m:?} {t}");
            }
            assert_eq!(downsample(&c, 16, m).unwrap(), c);
        }
        assert!(downsample(&c, 17, DownsampleMethod::Db2).is_err());
    }

    #[test]
    fn haar_matches_block_average() {
        let x = img(32, |r, c| ((r / 4) * 7 + (c / 4) * 3) as f64 * 0.01);
        let block = |x: &Tensor| -> Vec<f64> {
            let mut out = vec![0.0; 64];
            for (i, v) in x.data().iter().enumerate() {
                out[(i / 32 / 4) * 8 + (i % 32) / 4] += v / 16.0;
            }
            out
        };
        let d = downsample(&x, 8, DownsampleMethod::Haar).unwrap();
        let oracle = block(&x);
        assert!(d.data().iter().zip(&oracle).all(|(a, b)| (a - b).abs() < 1e-9));
        let area = downsample(&x, 8, DownsampleMethod::Area).unwrap();
        assert!(area.data().iter().zip(&oracle).all(|(a, b)| (a - b).abs() < 1e-9));
    }

    #[test]
    fn upsample_inverts_downsample_on_low_content() {
        let low = img(8, |r, c| (r * 8 + c) as f64 / 64.0);
        for m in [DownsampleMethod::Haar, DownsampleMethod::Db2] {
            let up = upsample(&low, 32, m).unwrap();
            let back = downsample(&up, 8, m).unwrap();
            assert!(back.max_abs_diff(&low) < 1e-10, "{m:?}");
        }
        let signal = Tensor::vector((0..64).map(|i| (i as f64 * 0.3).sin()).collect()).unwrap();
        let d = downsample(&signal, 16, DownsampleMethod::Db2).unwrap();
        assert_eq!(d.shape(), &[16]);
        let flat = Tensor::vector(vec![0.5; 24]).unwrap();
        let up = upsample(&flat, 64, DownsampleMethod::Area).unwrap();
        assert!(up.data().iter().all(|v| (v - 0.5).abs() < 1e-12));
    }

    #[test]
    fn storage_values() {
        let r = storage_report(32, 12, 0.1).unwrap();
        assert_eq!(r.downsampled_fraction, 0.140625);
        assert_eq!(r.mixed_fraction, 0.2265625);
        assert_eq!((r.grid_cells_red, r.grid_cells_yellow), (15, 8));
        let same = storage_report(32, 32, 0.4).unwrap();
        assert_eq!((same.downsampled_fraction, same.mixed_fraction), (1.0, 1.0));
        let none = storage_report(32, 4, 0.0).unwrap();
        assert_eq!(none.downsampled_fraction, 16.0 / 1024.0);
        assert_eq!(none.mixed_fraction, none.downsampled_fraction);
    }

    #[test]
    fn huber_values() {
        assert_eq!(scale_consistency_loss(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(scale_consistency_loss(&[0.5; 4], &[0.0; 4]).unwrap(), 0.125);
        assert_eq!(scale_consistency_loss(&[3.0], &[0.0]).unwrap(), 2.5);
        assert!(scale_consistency_loss(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn consistency_gradient_matches_finite_differences() {
        let high: Vec<Vec<f64>> = (0..5).map(|i| vec![i as f64 * 0.3, (i * i) as f64 * 0.1 - 0.4, 0.2]).collect();
        let low: Vec<Vec<f64>> = (0..5).map(|i| vec![(i as f64).sin(), 0.05 * i as f64, (i as f64 * 0.7).cos()]).collect();
        let (_, dh, _) = scale_consistency_batch(&high, &low).unwrap();
        for i in 0..5 {
            for j in 0..3 {
                let h = 1e-6;
                let mut up = high.clone();
                up[i][j] += h;
                let mut down = high.clone();
                down[i][j] -= h;
                let fd = (scale_consistency_batch(&up, &low).unwrap().0 - scale_consistency_batch(&down, &low).unwrap().0)
                    / (2.0 * h);
                assert!((fd - dh[i][j]).abs() < 1e-6, "{i},{j}: {fd} vs {}", dh[i][j]);
            }
        }
    }

    #[test]
    fn lr_schedule_shape() {
        assert!((lr_at(1.0, 0, 10, 100) - 0.1).abs() < 1e-15);
        assert_eq!(lr_at(1.0, 9, 10, 100), 1.0);
        assert_eq!(lr_at(1.0, 10, 10, 100), 1.0);
        assert!(lr_at(1.0, 99, 10, 100) < 1e-3);
    }

    fn tiny(experiment: Experiment) -> MixTrainConfig {
        MixTrainConfig {
            experiment,
            high_side: 16,
            low_side: 8,
            epochs: 6,
            warmup_epochs: 2,
            base_lr: 5e-3,
            hidden_width: 8,
            batch_size: 16,
            high_fraction: 0.5,
            ..MixTrainConfig::default()
        }
    }

    #[test]
    fn ratio_one_equals_subset() {
        let data = synth_two_class_images(20, 16, RngStream::new(2, 0)).unwrap();
        let a = run_experiment(&MixTrainConfig { high_fraction: 1.0, ..tiny(Experiment::Ratio) }, &data, 2).unwrap();
        let b = run_experiment(&MixTrainConfig { high_fraction: 1.0, ..tiny(Experiment::Subset) }, &data, 2).unwrap();
        assert_eq!(a.replicates, b.replicates);
        let s = run_experiment(&MixTrainConfig { low_side: 16, ..tiny(Experiment::Size) }, &data, 2).unwrap();
        assert_eq!(s.replicates, b.replicates);
    }

    #[test]
    fn runs_are_reproducible_and_sane() {
        let data = synth_two_class_images(20, 16, RngStream::new(2, 0)).unwrap();
        for cfg in [
            tiny(Experiment::Ratio),
            tiny(Experiment::Downsampled),
            MixTrainConfig { model: ModelKind::Cnn, ..tiny(Experiment::Ratio) },
            MixTrainConfig { scale_consistency_weight: 0.5, ..tiny(Experiment::Ratio) },
        ] {
            let a = run_experiment(&cfg, &data, 2).unwrap();
            let b = run_experiment(&cfg, &data, 2).unwrap();
            assert_eq!(a, b);
            assert!((0.0..=1.0).contains(&a.test_accuracy_mean) && a.test_accuracy_std >= 0.0);
            assert_eq!(a.low_weight_curve.len(), cfg.epochs);
        }
    }

    #[test]
    fn weight_curve_matches_schedule() {
        let cfg = MixTrainConfig { epochs: 10, warmup_epochs: 1, ..MixTrainConfig::default() };
        let curve = low_weight_curve(&cfg, 10, 90).unwrap();
        let sched = ScheduleConfig::new(ScheduleKind::TwoPhase, 0.9);
        for (e, w) in curve.iter().enumerate() {
            let base = low_weight(&sched, e, 10).unwrap();
            let (expect, _) = rescale_weights(base, 1.0, 3, 1).unwrap();
            assert!((w - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn config_rejects_bad_values() {
        assert!(MixTrainConfig { warmup_epochs: 100, ..MixTrainConfig::default() }.validate().is_err());
        assert!(MixTrainConfig { low_side: 64, ..MixTrainConfig::default() }.validate().is_err());
        assert!(toml::from_str::<MixTrainConfig>("epochs = 10\nwarmup_epochs = 2\nfoo = 1").is_err());
        let c: MixTrainConfig = toml::from_str("experiment = \"size\"\nschedule = \"one_phase_cosine\"").unwrap();
        assert_eq!((c.experiment, c.schedule), (Experiment::Size, ScheduleKind::OnePhase));
    }

    proptest! {
        #[test]
        fn mixed_fraction_affine(s in 2usize..64, frac in 0.0f64..1.0, r in 0.0f64..1.0) {
            let t = ((s as f64 * frac) as usize).max(1);
            let rep = storage_report(s, t, r).unwrap();
            let lo = (t * t) as f64 / (s * s) as f64;
            prop_assert!((rep.mixed_fraction - (lo + r * (1.0 - lo))).abs() < 1e-12);
            prop_assert!(rep.grid_cells_yellow <= 100);
        }

        #[test]
        fn area_downsample_preserves_mean(side in 4usize..24, t in 1usize..24, seed in 0u64..50) {
            prop_assume!(t <= side);
            use rand::Rng;
            let mut rng = RngStream::new(seed, 0).rng();
            let x = Tensor::new(vec![side, side], (0..side * side).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap();
            let d = downsample(&x, t, DownsampleMethod::Area).unwrap();
            let m = |v: &Tensor| v.data().iter().sum::<f64>() / v.len() as f64;
            prop_assert!((m(&x) - m(&d)).abs() < 1e-12);
        }
    }
}
