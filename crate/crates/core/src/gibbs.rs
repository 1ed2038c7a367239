//! Ensemble approximation of the Gibbs posterior, with per-sample loss,
//! input gradient and input Hessian.

use std::path::Path;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{read_tensor, write_tensor};
use crate::mlp::{cross_entropy, AdamState, Cache};
pub use crate::mlp::{MlpArchitecture, MlpParams, Optimizer};
use crate::rng::RngStream;
use crate::tensor::{LabeledDataset, Tensor};

pub const HESSIAN_MAX_DIM: usize = 64;
const HESSIAN_STEP: f64 = 1e-4;
const KINK_JITTER: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Batch {
    Full,
    Size(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub optimizer: Optimizer,
    pub batch: Batch,
    pub weight_decay: f64,
    pub init_scale: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 300,
            learning_rate: 1e-3,
            optimizer: Optimizer::Adam,
            batch: Batch::Full,
            weight_decay: 0.0,
            init_scale: 1.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::InvalidArgument("epochs must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidArgument("learning_rate must be > 0".into()));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::InvalidArgument("weight_decay must be >= 0".into()));
        }
        if !(self.init_scale >= 0.0 && self.init_scale.is_finite()) {
            return Err(Error::InvalidArgument("init_scale must be >= 0".into()));
        }
        if self.batch == Batch::Size(0) {
            return Err(Error::InvalidArgument("batch size must be >= 1".into()));
        }
        Ok(())
    }
}

fn check(p: &MlpParams, x: &[f64], y: usize) -> Result<()> {
    if x.len() != p.arch().input_dim() {
        return Err(Error::Shape(format!(
            "network expects {} inputs, got {}",
            p.arch().input_dim(),
            x.len()
        )));
    }
    if y >= p.arch().output_dim() {
        return Err(Error::Shape(format!(
            "class {y} out of range for {} outputs",
            p.arch().output_dim()
        )));
    }
    Ok(())
}

/// Cross-entropy `-log softmax(f(x))[y]`.
pub fn loss(p: &MlpParams, x: &[f64], y: usize) -> Result<f64> {
    check(p, x, y)?;
    let mut c = Cache::default();
    p.forward_into(x, &mut c);
    Ok(cross_entropy(c.logits(), y).0)
}

/// Exact gradient of [`loss`] with respect to the input.
pub fn input_gradient(p: &MlpParams, x: &[f64], y: usize) -> Result<Vec<f64>> {
    check(p, x, y)?;
    Ok(grad_unchecked(p, x, y, &mut Cache::default()))
}

fn grad_unchecked(p: &MlpParams, x: &[f64], y: usize, c: &mut Cache) -> Vec<f64> {
    p.forward_into(x, c);
    let (_, dl) = cross_entropy(c.logits(), y);
    let mut dx = Vec::new();
    p.backward(c, &dl, None, None, Some(&mut dx));
    dx
}

/// Input Hessian by central differences of the exact gradient, symmetrised.
pub fn input_hessian(p: &MlpParams, x: &[f64], y: usize) -> Result<DMatrix<f64>> {
    check(p, x, y)?;
    let n = x.len();
    if n > HESSIAN_MAX_DIM {
        return Err(Error::HessianGuard(n));
    }
    let mut base = x.to_vec();
    if p.on_kink(&base) {
        base.iter_mut().for_each(|v| *v += KINK_JITTER);
    }
    let mut c = Cache::default();
    let mut h = DMatrix::zeros(n, n);
    let mut xp = base.clone();
    for j in 0..n {
        xp[j] = base[j] + HESSIAN_STEP;
        let up = grad_unchecked(p, &xp, y, &mut c);
        xp[j] = base[j] - HESSIAN_STEP;
        let dn = grad_unchecked(p, &xp, y, &mut c);
        xp[j] = base[j];
        for i in 0..n {
            h[(i, j)] = (up[i] - dn[i]) / (2.0 * HESSIAN_STEP);
        }
    }
    Ok((&h + h.transpose()) * 0.5)
}

/// Flattened inputs and labels, validated against an architecture.
struct Design<'a> {
    x: Vec<f64>,
    y: &'a [usize],
    dim: usize,
}

impl<'a> Design<'a> {
    fn new(data: &'a LabeledDataset, arch: &MlpArchitecture) -> Result<Self> {
        if data.input_len() != arch.input_dim() {
            return Err(Error::Shape(format!(
                "dataset has {} features, network expects {}",
                data.input_len(),
                arch.input_dim()
            )));
        }
        if data.num_classes() > arch.output_dim() {
            return Err(Error::Shape(format!(
                "{} classes but {} outputs",
                data.num_classes(),
                arch.output_dim()
            )));
        }
        Ok(Design {
            x: data.inputs().iter().flat_map(|t| t.data().iter().copied()).collect(),
            y: data.labels(),
            dim: data.input_len(),
        })
    }

    fn row(&self, i: usize) -> &[f64] {
        &self.x[i * self.dim..(i + 1) * self.dim]
    }
}

/// Trains one network from a random initialisation drawn from `stream`.
pub fn train_member(
    data: &LabeledDataset,
    arch: &MlpArchitecture,
    cfg: &TrainConfig,
    stream: RngStream,
) -> Result<MlpParams> {
    cfg.validate()?;
    let design = Design::new(data, arch)?;
    let mut rng = stream.rng();
    let mut p = MlpParams::init(arch, cfg.init_scale, &mut rng);
    let n = data.len();
    let batch = match cfg.batch {
        Batch::Full => n,
        Batch::Size(b) => b.min(n),
    };
    let mut order: Vec<usize> = (0..n).collect();
    let mut grad = vec![0.0; arch.param_count()];
    let mut adam = AdamState::new(arch.param_count());
    let mut cache = Cache::default();
    for epoch in 0..cfg.epochs {
        if batch < n {
            order.shuffle(&mut rng);
        }
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(batch) {
            grad.iter_mut().for_each(|g| *g = 0.0);
            for &i in chunk {
                p.forward_into(design.row(i), &mut cache);
                let (l, mut dl) = cross_entropy(cache.logits(), design.y[i]);
                epoch_loss += l;
                dl.iter_mut().for_each(|v| *v /= chunk.len() as f64);
                p.backward(&cache, &dl, None, Some(&mut grad), None);
            }
            match cfg.optimizer {
                Optimizer::Adam => adam.step(p.flat_mut(), &grad, cfg.learning_rate, cfg.weight_decay, false),
                Optimizer::GradientDescent => {
                    for (w, g) in p.flat_mut().iter_mut().zip(&grad) {
                        *w -= cfg.learning_rate * (g + cfg.weight_decay * *w);
                    }
                }
            }
        }
        if !epoch_loss.is_finite() || p.flat().iter().any(|v| !v.is_finite()) {
            return Err(Error::Diverged { epoch });
        }
    }
    Ok(p)
}

/// `M` independently trained networks standing in for posterior samples.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorEnsemble {
    pub members: Vec<MlpParams>,
    pub dataset_hash: u64,
    pub arch: MlpArchitecture,
    pub config: TrainConfig,
    pub master_seed: u64,
}

/// Trains members `0..m` on streams `(master_seed, i)`, in parallel.
pub fn sample_posterior(
    data: &LabeledDataset,
    arch: &MlpArchitecture,
    cfg: &TrainConfig,
    m: usize,
    master_seed: u64,
) -> Result<PosteriorEnsemble> {
    if m < 2 {
        return Err(Error::InvalidArgument(format!("ensemble size must be >= 2, got {m}")));
    }
    cfg.validate()?;
    Design::new(data, arch)?;
    let members = (0..m)
        .into_par_iter()
        .map(|i| {
            train_member(data, arch, cfg, RngStream::new(master_seed, i as u64)).map_err(|e| match e {
                Error::Diverged { epoch } => Error::MemberDiverged { member: i, epoch },
                other => other,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PosteriorEnsemble {
        members,
        dataset_hash: data.content_hash(),
        arch: arch.clone(),
        config: cfg.clone(),
        master_seed,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MomentDiagnostics {
    pub mean_loss: f64,
    pub second_moment: f64,
    pub max_loss: f64,
}

pub fn moment_diagnostics(e: &PosteriorEnsemble, x: &[f64], y: usize) -> Result<MomentDiagnostics> {
    let losses = e.losses(x, y)?;
    let n = losses.len() as f64;
    Ok(MomentDiagnostics {
        mean_loss: crate::stats::mean(&losses),
        second_moment: crate::stats::sum(&losses.iter().map(|l| l * l).collect::<Vec<_>>()) / n,
        max_loss: losses.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleManifest {
    pub arch: MlpArchitecture,
    pub config: TrainConfig,
    pub master_seed: u64,
    /// Hex digest of the training dataset.
    pub dataset_hash: String,
    pub members: usize,
}

impl EnsembleManifest {
    pub fn from_json(text: &str) -> Result<Self> {
        let m: EnsembleManifest =
            serde_json::from_str(text).map_err(|e| Error::Config(format!("ensemble manifest: {e}")))?;
        m.config.validate()?;
        parse_hash(&m.dataset_hash)?;
        if m.members < 1 {
            return Err(Error::Config("ensemble manifest lists no members".into()));
        }
        Ok(m)
    }
}

fn parse_hash(s: &str) -> Result<u64> {
    if s.len() != 16 {
        return Err(Error::Config(format!("dataset hash {s:?} is not 16 hex digits")));
    }
    u64::from_str_radix(s, 16).map_err(|_| Error::Config(format!("dataset hash {s:?} is not hex")))
}

impl PosteriorEnsemble {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    /// Refuses data the ensemble was not trained on.
    pub fn check_dataset(&self, data: &LabeledDataset) -> Result<()> {
        if data.content_hash() != self.dataset_hash {
            return Err(Error::DatasetMismatch(format!(
                "ensemble trained on {:016x}, got {:016x}",
                self.dataset_hash,
                data.content_hash()
            )));
        }
        Ok(())
    }

    pub fn losses(&self, x: &[f64], y: usize) -> Result<Vec<f64>> {
        self.members.iter().map(|p| loss(p, x, y)).collect()
    }

    pub fn gradients(&self, x: &[f64], y: usize) -> Result<Vec<Vec<f64>>> {
        self.members.iter().map(|p| input_gradient(p, x, y)).collect()
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (i, m) in self.members.iter().enumerate() {
            write_tensor(&Tensor::vector(m.flat().to_vec())?, &dir.join(member_file(i)))?;
        }
        let manifest = EnsembleManifest {
            arch: self.arch.clone(),
            config: self.config.clone(),
            master_seed: self.master_seed,
            dataset_hash: format!("{:016x}", self.dataset_hash),
            members: self.members.len(),
        };
        let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        let path = dir.join("manifest.json");
        std::fs::write(&path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join("manifest.json");
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(path, e))?;
        let manifest = EnsembleManifest::from_json(&text)?;
        let members = (0..manifest.members)
            .map(|i| MlpParams::from_flat(&manifest.arch, read_tensor(&dir.join(member_file(i)))?.into_data()))
            .collect::<Result<Vec<_>>>()?;
        Ok(PosteriorEnsemble {
            members,
            dataset_hash: parse_hash(&manifest.dataset_hash)?,
            arch: manifest.arch,
            config: manifest.config,
            master_seed: manifest.master_seed,
        })
    }
}

fn member_file(i: usize) -> String {
    format!("member_{i:05}.mrt1")
}
