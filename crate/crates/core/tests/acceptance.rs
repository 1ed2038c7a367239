//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails. Pass criterion names (`c1` .. `c10`) to run a subset.

use std::f64::consts::PI;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use mixres::gibbs::{input_gradient, loss, MlpArchitecture, MlpParams, TrainConfig};
use mixres::influence::kl_from_losses;
use mixres::rng::{label, RngStream};
use mixres::schedule::{low_weight_at, rescale_weights, ScheduleConfig, ScheduleKind};
use mixres::simulation::{build_problem, simulate, tightness_sweep, SimulationConfig};
use mixres::stats::{mean, std_dev};
use mixres::synth::{synth_two_class_images, synth_with, SynthParams};
use mixres::toy::{gen_toy_data, influence_all, variance_vs_resolution, ToyConfig};
use mixres::trainer::{run_experiment, storage_report, DownsampleMethod, Experiment, MixTrainConfig};
use mixres::wavelet::{dwt_forward, dwt_inverse, make_triple};
use mixres::Tensor;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

type Criterion = (&'static str, &'static str, fn() -> Outcome);

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn c1_wavelet_exactness() -> Outcome {
    let mut rng = RngStream::new(1, 0).rng();
    let (mut worst_inv, mut worst_add) = (0.0f64, 0.0f64);
    for i in 0..1000 {
        let levels = rng.random_range(1..=3usize);
        let step = 1 << levels;
        let shape = if i % 2 == 0 {
            vec![step * rng.random_range(8usize.div_ceil(step)..=256 / step)]
        } else {
            let side = step * rng.random_range(8usize.div_ceil(step)..=64 / step);
            vec![side, side]
        };
        let n: usize = shape.iter().product();
        let data: Vec<f64> = (0..n).map(|_| rng.random_range(-10.0..10.0)).collect();
        let x = Tensor::new(shape, data).unwrap();
        let back = dwt_inverse(&dwt_forward(&x, levels).unwrap()).unwrap();
        worst_inv = worst_inv.max(back.max_abs_diff(&x));
        let t = make_triple(&x, levels, rng.random_range(0..=levels)).unwrap();
        worst_add = worst_add.max(t.additivity_error());
    }
    outcome(
        worst_inv < 1e-10 && worst_add < 1e-9,
        format!("max inverse error {worst_inv:.2e}, max additivity error {worst_add:.2e}"),
    )
}

fn c2_gradient_oracle() -> Outcome {
    let mut rng = RngStream::new(2, 0).rng();
    let mut worst = 0.0f64;
    let mut nets = 0;
    while nets < 100 {
        let d = rng.random_range(2..=12usize);
        let depth = rng.random_range(2..=4usize);
        let mut widths = vec![d];
        widths.extend((1..depth).map(|_| rng.random_range(3..=10usize)));
        widths.push(rng.random_range(2..=4usize));
        let classes = *widths.last().unwrap();
        let arch = MlpArchitecture::new(widths).unwrap();
        let p = MlpParams::init(&arch, 1.0, &mut rng);
        let x: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
        let y = rng.random_range(0..classes);
        let h = 1e-6;
        let fd: Vec<f64> = (0..d)
            .map(|j| {
                let (mut a, mut b) = (x.clone(), x.clone());
                a[j] += h;
                b[j] -= h;
                (loss(&p, &a, y).unwrap() - loss(&p, &b, y).unwrap()) / (2.0 * h)
            })
            .collect();
        // skip stencils that straddle a ReLU kink
        let crosses = (0..d).any(|j| {
            let (mut a, mut b) = (x.clone(), x.clone());
            a[j] += h;
            b[j] -= h;
            activation_pattern(&p, &a) != activation_pattern(&p, &b)
        });
        if crosses {
            continue;
        }
        let g = input_gradient(&p, &x, y).unwrap();
        let num: f64 = g.iter().zip(&fd).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let den: f64 = g.iter().map(|a| a * a).sum::<f64>().sqrt().max(1e-8);
        worst = worst.max(num / den);
        nets += 1;
    }
    outcome(worst < 1e-5, format!("max relative error {worst:.2e} over {nets} nets"))
}

fn activation_pattern(p: &MlpParams, x: &[f64]) -> Vec<bool> {
    let widths = p.arch().widths().to_vec();
    let mut a = x.to_vec();
    let mut pattern = Vec::new();
    for (l, &n_in) in widths[..widths.len() - 2].iter().enumerate() {
        let (w, b) = p.layer(l);
        let z: Vec<f64> = b
            .iter()
            .zip(w.chunks_exact(n_in))
            .map(|(&bi, row)| bi + row.iter().zip(&a).map(|(wi, ai)| wi * ai).sum::<f64>())
            .collect();
        pattern.extend(z.iter().map(|&v| v > 0.0));
        a = z.into_iter().map(|v| v.max(0.0)).collect();
    }
    pattern
}

/// Gaussian posterior over theta with a squared loss on one new point, so the
/// posterior including it is Gaussian too and the KL has a closed form.
fn c3_kl_oracle() -> Outcome {
    let mu = [0.4, -0.3, 0.8];
    let l = [[0.6, 0.0, 0.0], [0.2, 0.5, 0.0], [-0.1, 0.3, 0.4]];
    let x = [0.9, -0.5, 0.7];
    let y = 1.3;
    // a = theta.x ~ N(m, s2)
    let m: f64 = mu.iter().zip(&x).map(|(a, b)| a * b).sum();
    let lx: Vec<f64> = (0..3).map(|j| (0..3).map(|i| l[i][j] * x[i]).sum()).collect();
    let s2: f64 = lx.iter().map(|v| v * v).sum();
    let e = m - y;
    let exact = 0.5 * (e * e + s2) - 0.5 * (1.0 + s2).ln() - e * e / (2.0 * (1.0 + s2));

    let estimate = |m_samples: usize, rep: u64| -> f64 {
        let mut rng = RngStream::new(3, rep).child(label(&m_samples.to_string())).rng();
        let losses: Vec<f64> = (0..m_samples)
            .map(|_| {
                let z: [f64; 3] = std::array::from_fn(|_| StandardNormal.sample(&mut rng));
                let theta: Vec<f64> = (0..3).map(|i| mu[i] + (0..3).map(|k| l[i][k] * z[k]).sum::<f64>()).collect();
                let a: f64 = theta.iter().zip(&x).map(|(t, xi)| t * xi).sum();
                0.5 * (a - y).powi(2)
            })
            .collect();
        kl_from_losses(&losses)
    };
    let sizes = [250usize, 500, 1000, 2000, 5000];
    let reps = 200;
    let mut log_m = Vec::new();
    let mut log_se = Vec::new();
    let mut se_5000 = 0.0;
    let mut est_5000 = 0.0;
    for &mm in &sizes {
        let ests: Vec<f64> = (0..reps).map(|r| estimate(mm, r)).collect();
        let se = std_dev(&ests);
        if mm == 5000 {
            se_5000 = se;
            est_5000 = ests[0];
        }
        log_m.push((mm as f64).ln());
        log_se.push(se.ln());
    }
    let (mx, my) = (mean(&log_m), mean(&log_se));
    let slope = log_m.iter().zip(&log_se).map(|(a, b)| (a - mx) * (b - my)).sum::<f64>()
        / log_m.iter().map(|a| (a - mx).powi(2)).sum::<f64>();
    let z = (est_5000 - exact).abs() / se_5000;
    outcome(
        z < 3.0 && (slope + 0.5).abs() <= 0.1,
        format!("exact {exact:.5}, estimate {est_5000:.5} ({z:.2} se), se slope {slope:.3}"),
    )
}

fn c4_table_trends() -> Outcome {
    let cfg = SimulationConfig { members: 1000, ..SimulationConfig::default() };
    let problem = build_problem(&cfg).unwrap();
    let levels = [0, 1, 2, 3];
    let (mut exact_one, mut increasing, mut contained, mut tight_ok, mut cells) = (true, 0, 0, true, 0);
    let mut lines = Vec::new();
    for seed in 0..5u64 {
        let rows = simulate(&cfg, &problem, &levels, seed).unwrap();
        let ratios: Vec<f64> = rows.iter().map(|r| r.report.ratio_exact).collect();
        exact_one &= ratios[0] == 1.0;
        if ratios.windows(2).all(|w| w[1] > w[0]) {
            increasing += 1;
        }
        for r in rows.iter().map(|r| &r.report) {
            cells += 1;
            if r.ratio_contained() && r.diff_contained() {
                contained += 1;
            }
            tight_ok &= r.ratio_lb_tight >= r.ratio_lb && r.diff_lb_tight >= r.diff_lb;
        }
        lines.push(ratios.iter().map(|v| format!("{v:.3}")).collect::<Vec<_>>().join("/"));
    }
    let frac = contained as f64 / cells as f64;
    outcome(
        exact_one && increasing == 5 && frac >= 0.95 && tight_ok,
        format!(
            "level0==1 {exact_one}, increasing {increasing}/5, contained {contained}/{cells}, tight>=lb {tight_ok}; ratios {}",
            lines.join(" ")
        ),
    )
}

fn c5_tightness() -> Outcome {
    let base = SimulationConfig::default();
    let cfg = SimulationConfig { train: TrainConfig { weight_decay: 0.07, ..base.train.clone() }, ..base };
    let (dims, depths) = ([2, 10, 50], [2, 3, 4]);
    let mut worst = 0.0f64;
    let mut growing = 0;
    let mut detail = Vec::new();
    for seed in 0..5u64 {
        let recs = tightness_sweep(&dims, &depths, &[1, 3], &cfg, 500, seed).unwrap();
        worst = recs.iter().map(|r| r.rel_error_var_approx.abs()).fold(worst, f64::max);
        let width = |k: usize, ratio: bool| -> f64 {
            let w: Vec<f64> = recs
                .iter()
                .filter(|r| r.levels_removed == k)
                .map(|r| if ratio { r.gap_ratio_lb + r.gap_ratio_ub } else { r.gap_diff_lb + r.gap_diff_ub })
                .collect();
            mean(&w)
        };
        let grows = width(3, true) > width(1, true) && width(3, false) > width(1, false);
        let cellwise = recs
            .chunks(2)
            .filter(|c| c[1].gap_ratio_lb + c[1].gap_ratio_ub > c[0].gap_ratio_lb + c[0].gap_ratio_ub)
            .count();
        if grows {
            growing += 1;
        }
        detail.push(format!("{}:{cellwise}/9", if grows { "grow" } else { "flat" }));
    }
    outcome(
        worst < 0.05 && growing >= 4,
        format!("max |e_r| {worst:.4}, gaps grow on {growing}/5 seeds [{}]", detail.join(" ")),
    )
}

fn c6_schedules() -> Outcome {
    let r = 0.8;
    let (a, ps) = (0.05, 0.7);
    let hc = |t: f64| 0.5 * (1.0 + (PI * t).cos());
    let one = |p: f64| r * (0.2 + 0.8 * hc(p));
    let two = |p: f64| if p <= ps { r * (a + (1.0 - a) * hc(p / ps)) } else { r * a * hc((p - ps) / (1.0 - ps)) };
    let c1 = ScheduleConfig::new(ScheduleKind::OnePhase, r);
    let c2 = ScheduleConfig::new(ScheduleKind::TwoPhase, r);
    let mut err = 0.0f64;
    for p in [0.0, 0.35, 0.7, 1.0] {
        err = err.max((low_weight_at(&c1, p).unwrap() - one(p)).abs());
        err = err.max((low_weight_at(&c2, p).unwrap() - two(p)).abs());
    }
    let w = |c: &ScheduleConfig, p: f64| low_weight_at(c, p).unwrap();
    let ends = (w(&c1, 0.0) - r).abs() < 1e-12
        && (w(&c1, 1.0) - 0.2 * r).abs() < 1e-12
        && (w(&c2, 0.0) - r).abs() < 1e-12
        && w(&c2, 1.0).abs() < 1e-12;
    let continuous = (w(&c2, ps) - w(&c2, ps + 1e-13)).abs() < 1e-12;
    let (rl, rh) = rescale_weights(0.9, 1.0, 9, 1).unwrap();
    let rescale = (rl - 0.5).abs() < 1e-12 && (rh - 5.0).abs() < 1e-12;
    outcome(
        err < 1e-12 && ends && continuous && rescale,
        format!("max error {err:.1e}, endpoints {ends}, continuity {continuous}, rescale ({rl}, {rh})"),
    )
}

fn c7_storage() -> Outcome {
    let s = storage_report(32, 12, 0.1).unwrap();
    outcome(
        s.downsampled_fraction == 0.140625 && s.mixed_fraction == 0.2265625,
        format!("downsampled {}, mixed {}", s.downsampled_fraction, s.mixed_fraction),
    )
}

fn c8_mixed_resolution() -> Outcome {
    let data = synth_with(300, 32, RngStream::new(0, 0), &SynthParams::texture_classes()).unwrap();
    let base = MixTrainConfig::default();
    let run = |experiment, low_side| {
        run_experiment(&MixTrainConfig { experiment, low_side, high_fraction: 0.1, ..base.clone() }, &data, 5).unwrap()
    };
    let accs = |e: &mixres::trainer::ExperimentResult| e.replicates.iter().map(|r| r.test_accuracy).collect::<Vec<_>>();
    let subset = run(Experiment::Subset, 8);
    let ratio = run(Experiment::Ratio, 8);
    let wins = accs(&subset).iter().zip(accs(&ratio)).filter(|(s, r)| r > s).count();
    let sizes: Vec<_> = [4, 8, 16].iter().map(|&t| run(Experiment::Size, t)).collect();
    let per_seed: Vec<Vec<f64>> = sizes.iter().map(accs).collect();
    let monotone = (0..5).filter(|&i| per_seed[0][i] <= per_seed[1][i] && per_seed[1][i] <= per_seed[2][i]).count();
    let means: Vec<f64> = sizes.iter().map(|s| s.test_accuracy_mean).collect();
    let means_ok = means.windows(2).all(|w| w[1] >= w[0]);
    outcome(
        ratio.test_accuracy_mean >= subset.test_accuracy_mean && wins >= 4 && monotone >= 4 && means_ok,
        format!(
            "subset {:.3}, ratio {:.3}, ratio wins {wins}/5; size 4/8/16 {:.3}/{:.3}/{:.3}, non-decreasing {monotone}/5",
            subset.test_accuracy_mean, ratio.test_accuracy_mean, means[0], means[1], means[2]
        ),
    )
}

fn c9_toy() -> Outcome {
    let (mut infl_ok, mut var_ok) = (0, 0);
    for seed in 0..5u64 {
        let root = RngStream::new(seed, 0);
        let pts = gen_toy_data(&ToyConfig::default(), root.child(label("toy"))).unwrap();
        let xy: Vec<[f64; 2]> = pts.iter().map(|p| p.xy()).collect();
        let labels: Vec<usize> = pts.iter().map(|p| p.label).collect();
        let infl = influence_all(&xy, &labels).unwrap();
        let by = |res| {
            let v: Vec<f64> = pts.iter().zip(&infl).filter(|(p, _)| p.resolution == res).map(|(_, &i)| i).collect();
            mean(&v)
        };
        if by(mixres::schedule::Resolution::High) > by(mixres::schedule::Resolution::Low) {
            infl_ok += 1;
        }
        let imgs = synth_two_class_images(100, 32, root.child(label("images"))).unwrap();
        let keep: Vec<usize> = (0..imgs.len()).filter(|&i| imgs.labels()[i] == 1).collect();
        let v = variance_vs_resolution(&imgs.select(&keep).unwrap(), &[4, 8, 16, 32], DownsampleMethod::Db2).unwrap();
        if v.windows(2).all(|w| w[1].1 >= w[0].1) {
            var_ok += 1;
        }
    }
    outcome(
        infl_ok >= 4 && var_ok >= 4,
        format!("high > low influence on {infl_ok}/5 seeds, variance monotone on {var_ok}/5"),
    )
}

const BOUNDS_TOML: &str = "seeds = 2\nlevels = [0, 1, 3]\n[simulation]\nmembers = 24\nn_per_class = 16\n[simulation.train]\nepochs = 30\n";
const TIGHT_TOML: &str = "dims = [2, 6]\ndepths = [2, 3]\nlevels = [0, 3]\nmembers = 12\n[simulation]\nn_per_class = 12\n[simulation.train]\nepochs = 20\n";
const TRAIN_TOML: &str = "replicates = 3\nexperiments = [\"subset\", \"ratio\", \"size\"]\nhigh_fractions = [0.2, 0.6]\nlow_sides = [4, 8]\nn_per_class = 24\n[train]\nepochs = 4\nwarmup_epochs = 1\nhigh_side = 16\n";

fn run_cli(args: &[&str], out: &Path) -> (bool, Vec<u8>) {
    let o = Command::new(env!("CARGO_BIN_EXE_mixres"))
        .args(args)
        .arg("--out-dir")
        .arg(out)
        .output()
        .expect("spawn mixres");
    (o.status.success(), o.stdout)
}

fn csv_files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()))
        .collect();
    files.sort();
    files
}

fn c10_cli_determinism() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let cfgs = [("simulate-bounds", BOUNDS_TOML), ("tightness", TIGHT_TOML), ("toy", ""), ("train", TRAIN_TOML)];
    let mut failures = Vec::new();
    let mut compared = 0;
    for (cmd, text) in cfgs {
        let cfg_path = tmp.path().join(format!("{cmd}.toml"));
        std::fs::write(&cfg_path, text).unwrap();
        let cfg = cfg_path.to_str().unwrap();
        let mut outputs = Vec::new();
        for threads in ["1", "2", "1"] {
            let out = tmp.path().join(format!("{cmd}-{threads}-{}", outputs.len()));
            let (ok, _) = run_cli(&[cmd, "--config", cfg, "--threads", threads], &out);
            if !ok {
                failures.push(format!("{cmd} failed"));
            }
            outputs.push(csv_files(&out));
        }
        compared += outputs[0].len();
        if outputs[0].is_empty() || outputs.iter().any(|o| *o != outputs[0]) {
            failures.push(format!("{cmd} differs"));
        }
    }
    let storage: Vec<_> = ["1", "2"]
        .iter()
        .map(|t| run_cli(&["storage", "--s", "32", "--t", "12", "--r", "0.1", "--threads", t], tmp.path()))
        .collect();
    if !storage[0].0 || storage[0] != storage[1] {
        failures.push("storage differs".into());
    }
    outcome(
        failures.is_empty(),
        if failures.is_empty() {
            format!("{compared} CSV files identical across reruns with 1 and 2 threads")
        } else {
            failures.join(", ")
        },
    )
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("c1", "wavelet exactness", c1_wavelet_exactness),
        ("c2", "gradient oracle", c2_gradient_oracle),
        ("c3", "KL estimator oracle", c3_kl_oracle),
        ("c4", "ratio trends over removed levels", c4_table_trends),
        ("c5", "approximation error and gap growth", c5_tightness),
        ("c6", "schedule exactness", c6_schedules),
        ("c7", "storage arithmetic", c7_storage),
        ("c8", "mixed-resolution direction", c8_mixed_resolution),
        ("c9", "toy influence and variance", c9_toy),
        ("c10", "CLI determinism", c10_cli_determinism),
    ];
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (id, name, f) in criteria {
        if !filters.is_empty() && !filters.iter().any(|x| x == id) {
            continue;
        }
        let t = Instant::now();
        let o = f();
        println!(
            "criterion {:>2} {:<36} {} ({:.1}s) {}",
            &id[1..],
            name,
            if o.pass { "PASS" } else { "FAIL" },
            t.elapsed().as_secs_f64(),
            o.detail
        );
        failed += usize::from(!o.pass);
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
