//! The `mixres` command line.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::gibbs::TrainConfig;
use crate::influence::{InfluenceReport, TightnessRecord};
use crate::io::read_dataset;
use crate::rng::{label, RngStream};
use crate::schedule::Resolution;
use crate::simulation::{build_problem, build_problem_from_dataset, simulate, tightness_sweep, SimulationConfig};
use crate::stats::mean_std;
use crate::svg::{line_chart, scatter, storage_grid, Marker, Series};
use crate::synth::{synth_two_class_images, synth_with, SynthParams};
use crate::tensor::LabeledDataset;
use crate::toy::{gen_toy_data, influence_all, lda_fit, variance_vs_resolution, ToyConfig};
use crate::trainer::{run_experiment, storage_report, DownsampleMethod, Experiment, ExperimentResult, MixTrainConfig};

pub const MANIFEST_NAME: &str = "manifest.json";
const DEFAULT_OUT_DIR: &str = "mixres-out";

#[derive(Debug, Parser)]
#[command(name = "mixres", version, about = "Datapoint influence across resolutions")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct GlobalArgs {
    /// TOML or JSON config file; defaults apply when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true, env = "MIXRES_OUT")]
    pub out_dir: Option<PathBuf>,
    /// Worker thread cap; does not change outputs.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Replaces the master seed of the config.
    #[arg(long, global = true)]
    pub seed_override: Option<u64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Exact KL ratios and differences with their bounds per removed level.
    SimulateBounds,
    /// Approximation error and bound gaps over input dims and depths.
    Tightness,
    /// Two-dimensional LDA example and variance against resolution.
    Toy,
    /// Mixed-resolution training experiments.
    Train,
    /// Storage cost of a mixed dataset.
    Storage {
        #[arg(long)]
        s: usize,
        #[arg(long)]
        t: usize,
        #[arg(long)]
        r: f64,
        /// Also write `storage.svg` to the output directory.
        #[arg(long)]
        svg: bool,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config: serde_json::Value,
    pub tool_version: String,
    pub master_seed: u64,
    pub dataset_hashes: BTreeMap<String, String>,
    pub started_at: String,
    pub finished_at: String,
    pub outputs: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoundsConfig {
    pub seed: u64,
    pub seeds: usize,
    pub levels: Vec<usize>,
    /// MRT1 dataset directory; synthetic images when absent.
    pub dataset: Option<PathBuf>,
    pub simulation: SimulationConfig,
}

impl Default for BoundsConfig {
    fn default() -> Self {
        BoundsConfig {
            seed: 0,
            seeds: 3,
            levels: vec![0, 1, 2, 3],
            dataset: None,
            simulation: SimulationConfig { members: 500, ..SimulationConfig::default() },
        }
    }
}

impl BoundsConfig {
    pub fn validate(&self) -> Result<()> {
        self.simulation.validate()?;
        if self.seeds == 0 || self.levels.is_empty() {
            return Err(Error::Config("seeds and levels must be non-empty".into()));
        }
        check_levels(&self.levels, self.simulation.wavelet_levels)
    }
}

fn check_levels(levels: &[usize], max: usize) -> Result<()> {
    match levels.iter().find(|&&k| k > max) {
        Some(k) => Err(Error::Config(format!("level {k} exceeds wavelet_levels {max}"))),
        None => Ok(()),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TightnessConfig {
    pub seed: u64,
    pub dims: Vec<usize>,
    pub depths: Vec<usize>,
    pub levels: Vec<usize>,
    pub members: usize,
    pub simulation: SimulationConfig,
}

impl Default for TightnessConfig {
    fn default() -> Self {
        let base = SimulationConfig::default();
        TightnessConfig {
            seed: 0,
            dims: vec![2, 10, 50],
            depths: vec![2, 3, 4],
            levels: vec![1, 3],
            members: 500,
            simulation: SimulationConfig {
                train: TrainConfig { weight_decay: 0.07, ..base.train.clone() },
                ..base
            },
        }
    }
}

impl TightnessConfig {
    pub fn validate(&self) -> Result<()> {
        self.simulation.validate()?;
        if self.dims.is_empty() || self.depths.is_empty() || self.levels.is_empty() || self.members < 2 {
            return Err(Error::Config("dims, depths, levels must be non-empty and members >= 2".into()));
        }
        for &d in &self.dims {
            SimulationConfig { pca_dim: d, ..self.simulation.clone() }.validate()?;
        }
        for &d in &self.depths {
            SimulationConfig { depth: d, ..self.simulation.clone() }.validate()?;
        }
        check_levels(&self.levels, self.simulation.wavelet_levels)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToyCommandConfig {
    pub seed: u64,
    pub toy: ToyConfig,
    pub resolutions: Vec<usize>,
    pub n_images: usize,
    pub side: usize,
    pub image_class: usize,
    pub downsample: DownsampleMethod,
}

impl Default for ToyCommandConfig {
    fn default() -> Self {
        ToyCommandConfig {
            seed: 0,
            toy: ToyConfig::default(),
            resolutions: vec![4, 8, 16, 32],
            n_images: 100,
            side: 32,
            image_class: 1,
            downsample: DownsampleMethod::Db2,
        }
    }
}

impl ToyCommandConfig {
    pub fn validate(&self) -> Result<()> {
        if self.image_class > 1 || self.n_images < 2 || self.resolutions.is_empty() {
            return Err(Error::Config("image_class must be 0 or 1, n_images >= 2, resolutions non-empty".into()));
        }
        if let Some(r) = self.resolutions.iter().find(|&&r| r == 0 || r > self.side) {
            return Err(Error::Config(format!("resolution {r} outside 1..={}", self.side)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainCommandConfig {
    pub replicates: usize,
    pub experiments: Vec<Experiment>,
    /// Grid for subset and ratio experiments.
    pub high_fractions: Vec<f64>,
    /// Grid for downsampled and size experiments.
    pub low_sides: Vec<usize>,
    pub n_per_class: usize,
    pub data_seed: u64,
    /// MRT1 dataset directory; synthetic textured images when absent.
    pub dataset: Option<PathBuf>,
    pub train: MixTrainConfig,
}

impl Default for TrainCommandConfig {
    fn default() -> Self {
        TrainCommandConfig {
            replicates: 5,
            experiments: vec![Experiment::Subset, Experiment::Ratio],
            high_fractions: (1..=9).map(|k| k as f64 / 10.0).collect(),
            low_sides: vec![4, 8, 16],
            n_per_class: 300,
            data_seed: 0,
            dataset: None,
            train: MixTrainConfig::default(),
        }
    }
}

impl TrainCommandConfig {
    pub fn cells(&self) -> Vec<MixTrainConfig> {
        let mut out = Vec::new();
        for &e in &self.experiments {
            match e {
                Experiment::Subset | Experiment::Ratio => out.extend(
                    self.high_fractions
                        .iter()
                        .map(|&r| MixTrainConfig { experiment: e, high_fraction: r, ..self.train.clone() }),
                ),
                Experiment::Downsampled | Experiment::Size => out.extend(
                    self.low_sides
                        .iter()
                        .map(|&t| MixTrainConfig { experiment: e, low_side: t, ..self.train.clone() }),
                ),
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        if self.replicates == 0 || self.experiments.is_empty() {
            return Err(Error::Config("replicates and experiments must be non-empty".into()));
        }
        if self.dataset.is_none() && self.n_per_class < 2 {
            return Err(Error::Config("n_per_class must be >= 2".into()));
        }
        let cells = self.cells();
        if cells.is_empty() {
            return Err(Error::Config("empty experiment grid".into()));
        }
        cells.iter().try_for_each(MixTrainConfig::validate)
    }
}

#[derive(Debug, Clone, Serialize)]
struct ReplicateRow {
    experiment: Experiment,
    high_fraction: f64,
    low_side: usize,
    replicate: usize,
    test_accuracy: f64,
    diverged_at_epoch: Option<usize>,
}

#[derive(Debug, Clone, Serialize)]
struct SummaryRow {
    experiment: Experiment,
    high_fraction: f64,
    low_side: usize,
    test_accuracy_mean: f64,
    test_accuracy_std: f64,
    downsampled_fraction: f64,
    mixed_fraction: f64,
}

#[derive(Debug, Clone, Serialize)]
struct CovarianceRow {
    levels_removed: usize,
    seed: u64,
    cov1: f64,
    cov2: f64,
}

#[derive(Debug, Clone, Serialize)]
struct ToyPointRow {
    x: f64,
    y: f64,
    label: usize,
    resolution_tag: Resolution,
    influence: f64,
}

#[derive(Debug, Clone, Serialize)]
struct VarianceRow {
    resolution: usize,
    variance: f64,
}

/// Collects the files of one run and writes the manifest last.
struct Run {
    dir: PathBuf,
    command: String,
    started_at: String,
    outputs: Vec<String>,
    hashes: BTreeMap<String, String>,
}

impl Run {
    fn start(dir: &Path, command: &str) -> Result<Run> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        Ok(Run {
            dir: dir.to_path_buf(),
            command: command.into(),
            started_at: now(),
            outputs: Vec::new(),
            hashes: BTreeMap::new(),
        })
    }

    fn csv<T: Serialize>(&mut self, name: &str, rows: &[T]) -> Result<()> {
        let mut buf = format!("# manifest: {MANIFEST_NAME}\n").into_bytes();
        {
            let mut w = csv::Writer::from_writer(&mut buf);
            for r in rows {
                w.serialize(r).map_err(|e| Error::InvalidArgument(format!("csv {name}: {e}")))?;
            }
            w.flush().map_err(|e| Error::io(name, e))?;
        }
        self.file(name, &buf)
    }

    fn file(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        let path = self.dir.join(name);
        fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        self.outputs.push(name.into());
        Ok(())
    }

    fn dataset(&mut self, key: &str, value: String) {
        self.hashes.insert(key.into(), value);
    }

    fn finish<C: Serialize>(self, config: &C, seed: u64) -> Result<()> {
        let manifest = RunManifest {
            command: self.command,
            config: serde_json::to_value(config).map_err(|e| Error::Config(e.to_string()))?,
            tool_version: env!("CARGO_PKG_VERSION").into(),
            master_seed: seed,
            dataset_hashes: self.hashes,
            started_at: self.started_at,
            finished_at: now(),
            outputs: self.outputs,
        };
        let text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Config(e.to_string()))?;
        write_atomic(&self.dir.join(MANIFEST_NAME), text.as_bytes())
    }
}

fn now() -> String {
    chrono::Utc::now().to_rfc3339()
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("json.tmp");
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(bytes).and_then(|_| f.sync_all()).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Parses a config file, JSON by `.json` extension and TOML otherwise.
pub fn load_config<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    let Some(path) = path else { return Ok(T::default()) };
    let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    parse_config(&text, path.extension().is_some_and(|e| e == "json"))
}

pub fn parse_config<T: DeserializeOwned>(text: &str, json: bool) -> Result<T> {
    if json {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    } else {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }
}

fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}

fn load_dataset(run: &mut Run, dir: &Path) -> Result<LabeledDataset> {
    let data = read_dataset(dir)?;
    for f in ["inputs.mrt1", "labels.mrt1"] {
        run.dataset(f, sha256_file(&dir.join(f))?);
    }
    Ok(data)
}

fn hash_hex(h: u64) -> String {
    format!("{h:016x}")
}

pub fn cmd_simulate_bounds(g: &GlobalArgs, out: &Path) -> Result<()> {
    let mut cfg: BoundsConfig = load_config(g.config.as_deref())?;
    if let Some(s) = g.seed_override {
        cfg.seed = s;
    }
    cfg.validate()?;
    let mut run = Run::start(out, "simulate-bounds")?;
    let sim = &cfg.simulation;
    let problem = match &cfg.dataset {
        Some(dir) => {
            let data = load_dataset(&mut run, dir)?;
            build_problem_from_dataset(sim, &data)?
        }
        None => build_problem(sim)?,
    };
    run.dataset("base", hash_hex(problem.base.content_hash()));
    let mut reports: Vec<InfluenceReport> = Vec::new();
    let mut cov = Vec::new();
    for i in 0..cfg.seeds {
        let seed = RngStream::new(cfg.seed, i as u64).child(label("bounds")).master_seed;
        for row in simulate(sim, &problem, &cfg.levels, seed)? {
            cov.push(CovarianceRow {
                levels_removed: row.report.levels_removed,
                seed,
                cov1: row.covariance.cov1,
                cov2: row.covariance.cov2,
            });
            reports.push(row.report);
        }
    }
    run.csv("bounds.csv", &reports)?;
    run.csv("covariance.csv", &cov)?;
    let curve = |f: fn(&InfluenceReport) -> f64| -> Vec<(f64, f64, f64)> {
        cfg.levels
            .iter()
            .map(|&k| {
                let v: Vec<f64> = reports.iter().filter(|r| r.levels_removed == k).map(f).collect();
                let (m, s) = mean_std(&v);
                (k as f64, m, if v.len() > 1 { s } else { 0.0 })
            })
            .collect()
    };
    let series = |name: &str, f: fn(&InfluenceReport) -> f64, dashed: bool| Series { name: name.into(), points: curve(f), dashed };
    let ratio = [
        series("exact", |r| r.ratio_exact, false),
        series("variance approx", |r| r.ratio_var_approx, false),
        series("lower", |r| r.ratio_lb, true),
        series("upper", |r| r.ratio_ub, true),
        series("lower tight", |r| r.ratio_lb_tight, true),
    ];
    run.file("bounds_ratio.svg", line_chart("KL ratio", "levels removed", "KL_h / KL_l", &ratio).as_bytes())?;
    let diff = [
        series("exact", |r| r.diff_exact, false),
        series("lower", |r| r.diff_lb, true),
        series("upper", |r| r.diff_ub, true),
        series("lower tight", |r| r.diff_lb_tight, true),
    ];
    run.file("bounds_diff.svg", line_chart("KL difference", "levels removed", "KL_h - KL_l", &diff).as_bytes())?;
    run.finish(&cfg, cfg.seed)
}

pub fn cmd_tightness(g: &GlobalArgs, out: &Path) -> Result<()> {
    let mut cfg: TightnessConfig = load_config(g.config.as_deref())?;
    if let Some(s) = g.seed_override {
        cfg.seed = s;
    }
    cfg.validate()?;
    let mut run = Run::start(out, "tightness")?;
    let recs = tightness_sweep(&cfg.dims, &cfg.depths, &cfg.levels, &cfg.simulation, cfg.members, cfg.seed)?;
    run.csv("tightness.csv", &recs)?;
    let width = |recs: &[TightnessRecord], f: fn(&TightnessRecord) -> f64| -> Vec<Series> {
        let mut out = Vec::new();
        for &depth in &cfg.depths {
            for &k in &cfg.levels {
                let points = recs
                    .iter()
                    .filter(|r| r.depth == depth && r.levels_removed == k)
                    .map(|r| (r.input_dim as f64, f(r), 0.0))
                    .collect();
                out.push(Series { name: format!("depth {depth}, levels {k}"), points, dashed: k != cfg.levels[0] });
            }
        }
        out
    };
    let ratio = width(&recs, |r| r.gap_ratio_lb + r.gap_ratio_ub);
    run.file("tightness_ratio.svg", line_chart("Ratio bound width", "input dim", "ub - lb", &ratio).as_bytes())?;
    let diff = width(&recs, |r| r.gap_diff_lb + r.gap_diff_ub);
    run.file("tightness_diff.svg", line_chart("Difference bound width", "input dim", "ub - lb", &diff).as_bytes())?;
    let err = width(&recs, |r| r.rel_error_var_approx);
    run.file("tightness_error.svg", line_chart("Variance approximation error", "input dim", "e_r", &err).as_bytes())?;
    run.finish(&cfg, cfg.seed)
}

pub fn cmd_toy(g: &GlobalArgs, out: &Path) -> Result<()> {
    let mut cfg: ToyCommandConfig = load_config(g.config.as_deref())?;
    if let Some(s) = g.seed_override {
        cfg.seed = s;
    }
    cfg.validate()?;
    let mut run = Run::start(out, "toy")?;
    let root = RngStream::new(cfg.seed, 0);
    let pts = gen_toy_data(&cfg.toy, root.child(label("toy")))?;
    let xy: Vec<[f64; 2]> = pts.iter().map(|p| p.xy()).collect();
    let labels: Vec<usize> = pts.iter().map(|p| p.label).collect();
    let infl = influence_all(&xy, &labels)?;
    let lda = lda_fit(&xy, &labels)?;
    let rows: Vec<ToyPointRow> = pts
        .iter()
        .zip(&infl)
        .map(|(p, &i)| ToyPointRow { x: p.x, y: p.y, label: p.label, resolution_tag: p.resolution, influence: i })
        .collect();
    run.csv("toy_points.csv", &rows)?;
    let images = synth_two_class_images(cfg.n_images, cfg.side, root.child(label("images")))?;
    let keep: Vec<usize> = (0..images.len()).filter(|&i| images.labels()[i] == cfg.image_class).collect();
    let images = images.select(&keep)?;
    run.dataset("images", hash_hex(images.content_hash()));
    let var: Vec<VarianceRow> = variance_vs_resolution(&images, &cfg.resolutions, cfg.downsample)?
        .into_iter()
        .map(|(resolution, variance)| VarianceRow { resolution, variance })
        .collect();
    run.csv("toy_variance.csv", &var)?;
    let top = infl.iter().cloned().fold(0.0f64, f64::max).max(1e-300);
    let markers: Vec<Marker> = rows
        .iter()
        .map(|r| Marker {
            x: r.x,
            y: r.y,
            radius: 2.0 + 8.0 * (r.influence / top).sqrt(),
            group: r.label,
            hollow: r.resolution_tag == Resolution::Low,
        })
        .collect();
    let w = lda.weight;
    run.file("toy_points.svg", scatter("Influence by resolution", &markers, Some((w[0], w[1], lda.bias))).as_bytes())?;
    let curve = Series { name: "top-2 variance".into(), points: var.iter().map(|v| (v.resolution as f64, v.variance, 0.0)).collect(), dashed: false };
    run.file("toy_variance.svg", line_chart("Variance against resolution", "side", "explained variance", &[curve]).as_bytes())?;
    run.finish(&cfg, cfg.seed)
}

pub fn cmd_train(g: &GlobalArgs, out: &Path) -> Result<()> {
    let mut cfg: TrainCommandConfig = load_config(g.config.as_deref())?;
    if let Some(s) = g.seed_override {
        cfg.train.seed = s;
    }
    cfg.validate()?;
    let mut run = Run::start(out, "train")?;
    let data = match &cfg.dataset {
        Some(dir) => load_dataset(&mut run, dir)?,
        None => synth_with(
            cfg.n_per_class,
            cfg.train.high_side,
            RngStream::new(cfg.data_seed, 0),
            &SynthParams::texture_classes(),
        )?,
    };
    run.dataset("data", hash_hex(data.content_hash()));
    let results = cfg
        .cells()
        .iter()
        .map(|c| run_experiment(c, &data, cfg.replicates))
        .collect::<Result<Vec<ExperimentResult>>>()?;
    let reps: Vec<ReplicateRow> = results
        .iter()
        .flat_map(|e| {
            e.replicates.iter().map(|r| ReplicateRow {
                experiment: e.experiment,
                high_fraction: e.high_fraction,
                low_side: e.low_side,
                replicate: r.replicate,
                test_accuracy: r.test_accuracy,
                diverged_at_epoch: r.diverged_at_epoch,
            })
        })
        .collect();
    run.csv("results.csv", &reps)?;
    let summary: Vec<SummaryRow> = results
        .iter()
        .map(|e| SummaryRow {
            experiment: e.experiment,
            high_fraction: e.high_fraction,
            low_side: e.low_side,
            test_accuracy_mean: e.test_accuracy_mean,
            test_accuracy_std: e.test_accuracy_std,
            downsampled_fraction: e.storage.downsampled_fraction,
            mixed_fraction: e.storage.mixed_fraction,
        })
        .collect();
    run.csv("summary.csv", &summary)?;
    let json = serde_json::to_string_pretty(&results).map_err(|e| Error::Config(e.to_string()))?;
    run.file("summary.json", json.as_bytes())?;
    let series: Vec<Series> = cfg
        .experiments
        .iter()
        .map(|&ex| {
            let by_side = matches!(ex, Experiment::Downsampled | Experiment::Size);
            Series {
                name: format!("{ex:?}").to_lowercase(),
                points: summary
                    .iter()
                    .filter(|s| s.experiment == ex)
                    .map(|s| {
                        let x = if by_side { s.low_side as f64 } else { s.high_fraction };
                        (x, s.test_accuracy_mean, s.test_accuracy_std)
                    })
                    .collect(),
                dashed: by_side,
            }
        })
        .collect();
    run.file("train_accuracy.svg", line_chart("Test accuracy", "high fraction / low side", "accuracy", &series).as_bytes())?;
    run.finish(&cfg, cfg.train.seed)
}

pub fn cmd_storage(out: &Path, s: usize, t: usize, r: f64, svg: bool) -> Result<()> {
    let rep = storage_report(s, t, r)?;
    let text = serde_json::to_string_pretty(&rep).map_err(|e| Error::Config(e.to_string()))?;
    println!("{text}");
    if svg {
        fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
        let path = out.join("storage.svg");
        let title = format!("storage {:.4} (high {s}, low {t}, r {r})", rep.mixed_fraction);
        fs::write(&path, storage_grid(&title, rep.grid_cells_red, rep.grid_cells_yellow)).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}

pub fn run(cli: &Cli) -> Result<()> {
    let g = &cli.global;
    if let Some(n) = g.threads {
        if n == 0 {
            return Err(Error::Config("--threads must be >= 1".into()));
        }
        // ignored if a global pool already exists
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let out = g.out_dir.clone().unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR));
    match &cli.command {
        Command::SimulateBounds => cmd_simulate_bounds(g, &out),
        Command::Tightness => cmd_tightness(g, &out),
        Command::Toy => cmd_toy(g, &out),
        Command::Train => cmd_train(g, &out),
        Command::Storage { s, t, r, svg } => cmd_storage(&out, *s, *t, *r, *svg),
    }
}

pub fn main_from<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config_error() { 1 } else { 2 })
        }
    }
}
