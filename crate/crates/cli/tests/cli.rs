use std::path::Path;
use std::process::{Command, Output};

use itp_cli::{run, Experiment, RunConfig, RunManifest};

fn itp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_itp")).args(args).output().unwrap()
}

fn write_config(dir: &Path, text: &str) -> String {
    let p = dir.join("run.toml");
    std::fs::write(&p, text).unwrap();
    p.to_string_lossy().into_owned()
}

fn read_csv(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let mut r = csv::Reader::from_path(path).unwrap();
    let head = r.headers().unwrap().iter().map(String::from).collect();
    let rows = r
        .records()
        .map(|rec| rec.unwrap().iter().map(String::from).collect())
        .collect();
    (head, rows)
}

fn column(path: &Path, name: &str) -> Vec<f64> {
    let (head, rows) = read_csv(path);
    let i = head.iter().position(|h| h == name).unwrap();
    rows.iter().map(|r| r[i].parse().unwrap()).collect()
}

#[test]
fn flat_roots_row() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "k = 4.0\n[roots]\npoints = [{ xi = [0.0, 0.0], tau = [4.0, 0.0] }]\n",
    );
    let out = dir.path().join("out");
    let o = itp(&["roots", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let lp = column(&out.join("roots.csv"), "lambda_plus_re");
    let mp = column(&out.join("roots.csv"), "mu_plus_re");
    assert_eq!(lp, vec![2.0]);
    assert_eq!(mp, vec![1.0]);
}

#[test]
fn unit_contrast_is_rejected_by_field() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "k = 1.0\n");
    let o = itp(&[
        "roots",
        "--config",
        &cfg,
        "--out",
        dir.path().join("o").to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("invalid config: k:"), "{err}");
    assert!(!dir.path().join("o").join(RunManifest::FILE).exists());
}

#[test]
fn same_seed_gives_identical_csv() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = RunConfig::from_toml("seed = 11\n[amplitudes]\norder = 2\nrandom = 25\n").unwrap();
    let read = |sub: &str, cfg: &RunConfig| {
        let out = dir.path().join(sub);
        run(cfg, Experiment::Amplitudes, &out).unwrap();
        (
            std::fs::read(out.join("amplitudes.csv")).unwrap(),
            std::fs::read(out.join("residuals.csv")).unwrap(),
        )
    };
    let a = read("a", &cfg);
    let b = read("b", &cfg);
    assert_eq!(a, b);
    let other = RunConfig {
        seed: 12,
        ..cfg.clone()
    };
    let c = read("c", &other);
    assert_eq!(a.0, c.0);
    assert_ne!(a.1, c.1);
}

#[test]
fn manifest_lists_files_and_matches_data() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = RunConfig::from_toml("[amplitudes]\nrandom = 10\n").unwrap();
    let m = run(&cfg, Experiment::Amplitudes, dir.path()).unwrap();
    for f in &m.files {
        assert!(dir.path().join(f).exists(), "{f}");
    }
    let sweep = column(&dir.path().join("residuals.csv"), "max_residual")
        .into_iter()
        .fold(0.0, f64::max);
    assert_eq!(m.metrics["max_sweep_residual"], sweep);
    let text = std::fs::read_to_string(dir.path().join(RunManifest::FILE)).unwrap();
    let json: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert_eq!(json["experiment"], "amplitudes");
    assert_eq!(json["config"]["experiment"], "amplitudes");
    assert_eq!(json["pass"], true);
}

#[test]
fn levi_needs_the_parametrix_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nowhere");
    let cfg = write_config(
        dir.path(),
        &format!("[levi]\nparametrix = {:?}\n", missing.to_str().unwrap()),
    );
    let o = itp(&[
        "levi",
        "--config",
        &cfg,
        "--out",
        dir.path().join("o").to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("missing upstream artifact"));
}

#[test]
fn levi_reuses_the_parametrix_partition() {
    let dir = tempfile::tempdir().unwrap();
    let pcfg = RunConfig::default();
    let pm = run(&pcfg, Experiment::Parametrix, &dir.path().join("p")).unwrap();
    assert!(pm.pass);
    let text = format!(
        "[levi]\nparametrix = {:?}\noracle_constants = [2.0]\nladder = [[32, 8e-4]]\n",
        dir.path().join("p").join("parametrix").to_str().unwrap()
    );
    let m = run(
        &RunConfig::from_toml(&text).unwrap(),
        Experiment::Levi,
        &dir.path().join("l"),
    )
    .unwrap();
    let rows = column(&dir.path().join("l").join("convergence.csv"), "error");
    assert_eq!(rows.len(), 1);
    assert_eq!(m.metrics["interval_final_error"], rows[0]);
    // One coarse level cannot reach the final tolerance.
    assert!(!m.pass);
}

#[test]
fn failed_check_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "[sample]\nn = 100\nprobes = [0.15, 0.85]\nmin_contrast = 1e12\n",
    );
    let out = dir.path().join("o");
    let o = itp(&[
        "sample",
        "--config",
        &cfg,
        "--out",
        out.to_str().unwrap(),
        "--workers",
        "2",
    ]);
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));
    let (head, rows) = read_csv(&out.join("indicator.csv"));
    assert_eq!(head, ["y", "s", "alpha", "value"]);
    assert!(!rows.is_empty());
    assert!(out.join("reconstruction.json").exists());
}

#[test]
fn accept_subset_passes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "[accept]\ncriteria = [1, 10]\n");
    let out = dir.path().join("o");
    let o = itp(&["accept", "--config", &cfg, "--out", out.to_str().unwrap()]);
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert_eq!(o.status.code(), Some(0), "{stdout}");
    assert!(stdout.contains("PASS [ 1]") && stdout.contains("PASS [10]"));
    assert_eq!(read_csv(&out.join("acceptance.csv")).1.len(), 2);
}

#[test]
fn reference_config_documents_the_defaults() {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/reference.toml");
    let cfg = RunConfig::load(&path).unwrap();
    assert_eq!(cfg, RunConfig::default());
}
