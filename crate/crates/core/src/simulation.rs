//! The bound-simulation pipeline: images, wavelet triples of a held-out
//! probe, PCA embedding, paired ensembles and influence reports.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gibbs::{sample_posterior, MlpArchitecture, PosteriorEnsemble, TrainConfig};
use crate::influence::{covariance_sign_check, influence_report, CovarianceCheck, InfluenceReport, TightnessRecord};
use crate::projection::{pca_fit, pca_fit_standardized, rows_matrix, PcaModel, ProjectedTriple};
use crate::rng::{label, RngStream};
use crate::synth::synth_two_class_images;
use crate::tensor::{LabeledDataset, Tensor};
use crate::wavelet::make_triple;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulationConfig {
    pub n_per_class: usize,
    pub side: usize,
    pub wavelet_levels: usize,
    pub pca_dim: usize,
    pub hidden_width: usize,
    /// Number of linear layers.
    pub depth: usize,
    pub members: usize,
    pub data_seed: u64,
    pub probe_class: usize,
    pub second_order: bool,
    /// Standardize pixels before fitting the PCA.
    pub standardize: bool,
    pub train: TrainConfig,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        SimulationConfig {
            n_per_class: 100,
            side: 32,
            wavelet_levels: 3,
            pca_dim: 10,
            hidden_width: 16,
            depth: 4,
            members: 10_000,
            data_seed: 0,
            probe_class: 0,
            second_order: false,
            standardize: false,
            train: TrainConfig {
                epochs: 100,
                learning_rate: 1e-2,
                weight_decay: 0.03,
                ..TrainConfig::default()
            },
        }
    }
}

impl SimulationConfig {
    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if self.depth < 1 || self.hidden_width < 1 {
            return Err(Error::InvalidArgument("depth and hidden_width must be >= 1".into()));
        }
        if self.probe_class > 1 {
            return Err(Error::InvalidArgument("probe_class must be 0 or 1".into()));
        }
        if self.members < 2 {
            return Err(Error::InvalidArgument("members must be >= 2".into()));
        }
        Ok(())
    }

    pub fn arch(&self) -> MlpArchitecture {
        let mut w = vec![self.pca_dim];
        w.extend(std::iter::repeat_n(self.hidden_width, self.depth - 1));
        w.push(2);
        MlpArchitecture::new(w).expect("validated widths")
    }
}

/// Embedded training set plus the probe's triples at every removal level.
#[derive(Debug, Clone)]
pub struct Problem {
    pub base: LabeledDataset,
    pub pca: PcaModel,
    pub probe: Tensor,
    pub probe_class: usize,
    /// Index `k` holds the triple with `k` bands removed.
    pub triples: Vec<ProjectedTriple>,
}

/// Synthetic training images and a held-out probe of `cfg.probe_class`.
pub fn build_problem(cfg: &SimulationConfig) -> Result<Problem> {
    cfg.validate()?;
    let root = RngStream::new(cfg.data_seed, 0);
    let images = synth_two_class_images(cfg.n_per_class, cfg.side, root.child(label("train")))?;
    let probes = synth_two_class_images(1, cfg.side, root.child(label("probe")))?;
    build_problem_from(cfg, &images, probes.inputs()[cfg.probe_class].clone())
}

/// Splits a loaded dataset: the first image of `cfg.probe_class` becomes the
/// probe and the rest the training set.
pub fn build_problem_from_dataset(cfg: &SimulationConfig, data: &LabeledDataset) -> Result<Problem> {
    cfg.validate()?;
    let at = data
        .labels()
        .iter()
        .position(|&y| y == cfg.probe_class)
        .ok_or_else(|| Error::InvalidArgument(format!("dataset has no class {} example", cfg.probe_class)))?;
    let rest: Vec<usize> = (0..data.len()).filter(|&i| i != at).collect();
    build_problem_from(cfg, &data.select(&rest)?, data.inputs()[at].clone())
}

pub fn build_problem_from(cfg: &SimulationConfig, images: &LabeledDataset, probe: Tensor) -> Result<Problem> {
    let rows = rows_matrix(images.inputs())?;
    let pca = if cfg.standardize {
        pca_fit_standardized(&rows, cfg.pca_dim)?
    } else {
        pca_fit(&rows, cfg.pca_dim)?
    };
    let base = images.map_inputs(format!("{}-pca{}", images.name(), cfg.pca_dim), |x| {
        Tensor::vector(pca.project(x.data())?)
    })?;
    let triples = (0..=cfg.wavelet_levels)
        .map(|k| pca.project_triple(&make_triple(&probe, cfg.wavelet_levels, k)?))
        .collect::<Result<Vec<_>>>()?;
    Ok(Problem {
        base,
        pca,
        probe,
        probe_class: cfg.probe_class,
        triples,
    })
}

impl Problem {
    fn augmented(&self, t: &ProjectedTriple) -> Result<LabeledDataset> {
        self.base.with_point(Tensor::vector(t.x_l.clone())?, self.probe_class)
    }

    pub fn base_ensemble(&self, cfg: &SimulationConfig, seed: u64) -> Result<PosteriorEnsemble> {
        sample_posterior(&self.base, &cfg.arch(), &cfg.train, cfg.members, seed)
    }

    /// Ensemble trained with the low-resolution probe at `levels` added.
    pub fn augmented_ensemble(&self, cfg: &SimulationConfig, levels: usize, seed: u64) -> Result<PosteriorEnsemble> {
        let t = self.triple(levels)?;
        sample_posterior(&self.augmented(t)?, &cfg.arch(), &cfg.train, cfg.members, seed)
    }

    pub fn triple(&self, levels: usize) -> Result<&ProjectedTriple> {
        self.triples.get(levels).ok_or_else(|| {
            Error::InvalidArgument(format!(
                "levels_removed {levels} exceeds the {} decomposition levels",
                self.triples.len() - 1
            ))
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationRow {
    pub report: InfluenceReport,
    pub covariance: CovarianceCheck,
}

/// Reports for each entry of `levels`, sharing one base ensemble; both
/// ensembles of a pair use `seed`, so members are paired.
pub fn simulate(cfg: &SimulationConfig, problem: &Problem, levels: &[usize], seed: u64) -> Result<Vec<SimulationRow>> {
    let e_x = problem.base_ensemble(cfg, seed)?;
    levels
        .iter()
        .map(|&k| {
            let t = problem.triple(k)?;
            let e_xl = problem.augmented_ensemble(cfg, k, seed)?;
            Ok(SimulationRow {
                report: influence_report(&e_x, &e_xl, t, problem.probe_class, cfg.second_order)?,
                covariance: covariance_sign_check(&e_x, &e_xl, t, problem.probe_class)?,
            })
        })
        .collect()
}

/// One record per `(dim, depth, levels)` cell, in that nesting order.
pub fn tightness_sweep(
    dims: &[usize],
    depths: &[usize],
    levels_list: &[usize],
    base_cfg: &SimulationConfig,
    m: usize,
    seed: u64,
) -> Result<Vec<TightnessRecord>> {
    if base_cfg.second_order && dims.iter().any(|&d| d > crate::gibbs::HESSIAN_MAX_DIM) {
        return Err(Error::InvalidArgument("second-order sweeps need dims <= 64".into()));
    }
    let problems = dims
        .par_iter()
        .map(|&d| build_problem(&SimulationConfig { pca_dim: d, ..base_cfg.clone() }))
        .collect::<Result<Vec<_>>>()?;
    let cells: Vec<(usize, usize)> = (0..dims.len())
        .flat_map(|i| depths.iter().map(move |&depth| (i, depth)))
        .collect();
    let per_cell = cells
        .par_iter()
        .enumerate()
        .map(|(idx, &(i, depth))| {
            let cfg = SimulationConfig {
                pca_dim: dims[i],
                depth,
                members: m,
                ..base_cfg.clone()
            };
            let cell_seed = RngStream::new(seed, idx as u64).child(label("tightness")).master_seed;
            let rows = simulate(&cfg, &problems[i], levels_list, cell_seed)?;
            Ok(rows
                .iter()
                .map(|r| TightnessRecord::from_report(&r.report, dims[i], depth))
                .collect::<Vec<_>>())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(per_cell.into_iter().flatten().collect())
}
