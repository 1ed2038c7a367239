use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use mixres::cli::RunManifest;
use mixres::io::write_dataset;
use mixres::rng::RngStream;
use mixres::synth::synth_two_class_images;

const SMALL_SIM: &str = "[simulation]\nmembers = 16\nn_per_class = 12\n[simulation.train]\nepochs = 20\n";

fn mixres(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mixres"))
        .args(args)
        .arg("--out-dir")
        .arg(out)
        .output()
        .unwrap()
}

fn write_config(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.to_string_lossy().into_owned()
}

fn read_csv(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_path(path).unwrap();
    let header = r.headers().unwrap().iter().map(String::from).collect();
    let rows = r.records().map(|x| x.unwrap().iter().map(String::from).collect()).collect();
    (header, rows)
}

fn column(header: &[String], rows: &[Vec<String>], name: &str) -> Vec<f64> {
    let i = header.iter().position(|h| h == name).unwrap();
    rows.iter().map(|r| r[i].parse().unwrap()).collect()
}

fn manifest(dir: &Path) -> RunManifest {
    serde_json::from_str(&fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

#[test]
fn simulate_bounds_rows_and_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "b.toml", &format!("seeds = 3\nlevels = [0, 1, 2, 3]\n{SMALL_SIM}"));
    let out = tmp.path().join("out");
    assert!(mixres(&["simulate-bounds", "--config", &cfg], &out).status.success());
    let text = fs::read_to_string(out.join("bounds.csv")).unwrap();
    assert!(text.starts_with("# manifest: manifest.json\n"));
    let (header, rows) = read_csv(&out.join("bounds.csv"));
    assert_eq!(rows.len(), 12);
    assert!(column(&header, &rows, "ratio_exact").iter().step_by(4).all(|&r| r == 1.0));
    let m = manifest(&out);
    assert_eq!(m.command, "simulate-bounds");
    for f in ["bounds.csv", "bounds_ratio.svg", "bounds_diff.svg"] {
        assert!(m.outputs.iter().any(|o| o == f) && out.join(f).exists(), "{f}");
    }
    assert_eq!(m.config["simulation"]["members"], 16);
    assert!(m.dataset_hashes.contains_key("base"));
}

#[test]
fn level_zero_only_gives_unit_ratios() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "b.toml", &format!("seeds = 2\nlevels = [0]\n{SMALL_SIM}"));
    let out = tmp.path().join("out");
    assert!(mixres(&["simulate-bounds", "--config", &cfg], &out).status.success());
    let (header, rows) = read_csv(&out.join("bounds.csv"));
    assert!(column(&header, &rows, "ratio_exact").iter().all(|&r| (r - 1.0).abs() < 1e-12));
}

#[test]
fn simulate_bounds_reads_mrt1_dataset() {
    let tmp = tempfile::tempdir().unwrap();
    let data = synth_two_class_images(12, 32, RngStream::new(5, 0)).unwrap();
    let dir = tmp.path().join("data");
    write_dataset(&data, &dir).unwrap();
    let cfg = write_config(
        tmp.path(),
        "b.toml",
        &format!("seeds = 1\nlevels = [0, 2]\ndataset = {:?}\n{SMALL_SIM}", dir.to_string_lossy()),
    );
    let out = tmp.path().join("out");
    let o = mixres(&["simulate-bounds", "--config", &cfg], &out);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(read_csv(&out.join("bounds.csv")).1.len(), 2);
    let m = manifest(&out);
    assert_eq!(m.dataset_hashes["inputs.mrt1"].len(), 64);
}

#[test]
fn tightness_row_count_and_zero_error_at_level_zero() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "t.toml",
        "dims = [2, 5]\ndepths = [2, 3, 4]\nlevels = [0, 2]\nmembers = 10\n[simulation]\nn_per_class = 10\n[simulation.train]\nepochs = 15\n",
    );
    let out = tmp.path().join("out");
    assert!(mixres(&["tightness", "--config", &cfg], &out).status.success());
    let (header, rows) = read_csv(&out.join("tightness.csv"));
    assert_eq!(rows.len(), 2 * 3 * 2);
    let levels = column(&header, &rows, "levels_removed");
    let er = column(&header, &rows, "rel_error_var_approx");
    assert!(levels.iter().zip(&er).filter(|(l, _)| **l == 0.0).all(|(_, e)| *e == 0.0));
}

#[test]
fn toy_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    assert!(mixres(&["toy"], &out).status.success());
    let m = manifest(&out);
    assert_eq!(m.outputs.iter().filter(|o| o.ends_with(".csv")).count(), 2);
    assert_eq!(m.outputs.iter().filter(|o| o.ends_with(".svg")).count(), 2);
    let (header, rows) = read_csv(&out.join("toy_points.csv"));
    assert_eq!(header, ["x", "y", "label", "resolution_tag", "influence"]);
    assert_eq!(rows.len(), 240);
    assert!(column(&header, &rows, "influence").iter().all(|&v| v >= 0.0));
    let (header, rows) = read_csv(&out.join("toy_variance.csv"));
    assert_eq!(header, ["resolution", "variance"]);
    assert_eq!(rows.len(), 4);
}

#[test]
fn train_ratio_grid_has_nine_rows() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "tr.toml",
        "replicates = 2\nexperiments = [\"ratio\"]\nn_per_class = 16\n[train]\nepochs = 2\nwarmup_epochs = 1\nhigh_side = 16\n",
    );
    let out = tmp.path().join("out");
    let o = mixres(&["train", "--config", &cfg, "--seed-override", "9"], &out);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let (header, rows) = read_csv(&out.join("summary.csv"));
    assert_eq!(rows.len(), 9);
    let r = column(&header, &rows, "high_fraction");
    assert!((r[0] - 0.1).abs() < 1e-12 && (r[8] - 0.9).abs() < 1e-12);
    assert_eq!(read_csv(&out.join("results.csv")).1.len(), 18);
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary.as_array().unwrap().len(), 9);
    assert_eq!(manifest(&out).master_seed, 9);
}

#[test]
fn subset_and_ratio_share_splits() {
    let tmp = tempfile::tempdir().unwrap();
    // with r = 1 both experiments see exactly the same data
    let cfg = write_config(
        tmp.path(),
        "tr.json",
        r#"{"replicates": 2, "experiments": ["subset", "ratio"], "high_fractions": [1.0], "n_per_class": 16,
            "train": {"epochs": 3, "warmup_epochs": 1, "high_side": 16}}"#,
    );
    let out = tmp.path().join("out");
    assert!(mixres(&["train", "--config", &cfg], &out).status.success());
    let (header, rows) = read_csv(&out.join("results.csv"));
    let acc = column(&header, &rows, "test_accuracy");
    assert_eq!(acc[..2], acc[2..]);
}

#[test]
fn storage_command() {
    let tmp = tempfile::tempdir().unwrap();
    let o = mixres(&["storage", "--s", "32", "--t", "12", "--r", "0.1", "--svg"], tmp.path());
    assert!(o.status.success());
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["mixed_fraction"], 0.2265625);
    assert!(tmp.path().join("storage.svg").exists());
    let o = mixres(&["storage", "--s", "16", "--t", "16", "--r", "0.3"], tmp.path());
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["mixed_fraction"], 1.0);
    assert_eq!(mixres(&["storage", "--s", "8", "--t", "12", "--r", "0.1"], tmp.path()).status.code(), Some(1));
}

#[test]
fn config_and_runtime_errors_have_distinct_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let bad = write_config(tmp.path(), "bad.toml", "seeds = 1\ntypo = true\n");
    assert_eq!(mixres(&["simulate-bounds", "--config", &bad], &out).status.code(), Some(1));
    let neg = write_config(tmp.path(), "neg.toml", "levels = [5]\n");
    assert_eq!(mixres(&["simulate-bounds", "--config", &neg], &out).status.code(), Some(1));
    let missing = tmp.path().join("nope.toml");
    assert_eq!(mixres(&["toy", "--config", missing.to_str().unwrap()], &out).status.code(), Some(1));
    let no_data = write_config(tmp.path(), "nd.toml", "dataset = \"/nonexistent/data\"\n");
    assert_eq!(mixres(&["train", "--config", &no_data], &out).status.code(), Some(2));
}

#[test]
fn out_dir_from_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("env-out");
    let o = Command::new(env!("CARGO_BIN_EXE_mixres"))
        .arg("toy")
        .env("MIXRES_OUT", &out)
        .output()
        .unwrap();
    assert!(o.status.success());
    assert!(out.join("toy_points.csv").exists() && out.join("manifest.json").exists());
}
