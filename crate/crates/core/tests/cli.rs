use std::path::Path;
use std::process::Command;

use helmholtz_rff::cli::{cmd_eval, cmd_fit, cmd_reproduce, cmd_simulate, load_config, DatasetPayload, ModelArtifact};
use helmholtz_rff::config::{ExperimentConfig, FixedHypers};
use helmholtz_rff::io::{read_csv_header, read_dataset_csv, read_grid_csv, read_json, read_summary_csv};
use helmholtz_rff::{Execution, SeedPlan, VectorField};

fn config(name: &str, out: &Path) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::bundled(name).unwrap();
    cfg.run.out = out.to_path_buf();
    cfg
}

fn binary() -> Command {
    Command::new(env!("CARGO_BIN_EXE_helmholtz-rff"))
}

#[test]
fn simulate_writes_self_describing_files() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config("msd", dir.path());
    let summary = cmd_simulate(&cfg).unwrap();
    assert_eq!(summary.points, 15);
    assert_eq!(summary.test_points, 2001);
    for f in ["train.csv", "train.json", "trajectories.csv", "test.csv"] {
        assert!(dir.path().join(f).exists(), "{f} missing");
    }

    let header = read_csv_header(&dir.path().join("train.csv")).unwrap();
    assert_eq!(header.config, cfg);
    assert_eq!(header.seeds, vec![SeedPlan::from_master(cfg.run.seed)]);

    let from_csv = read_dataset_csv(&dir.path().join("train.csv")).unwrap();
    let (json_header, payload): (_, DatasetPayload) = read_json(&dir.path().join("train.json")).unwrap();
    assert_eq!(json_header, header);
    assert_eq!(from_csv, payload.dataset);
    assert_eq!(from_csv, summary.dataset);
}

#[test]
fn pendulum_has_24_points() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(cmd_simulate(&config("pendulum", dir.path())).unwrap().points, 24);
}

#[test]
fn noiseless_derivatives_match_the_true_field() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config("pendulum", dir.path());
    cfg.data.noise_sigma = 0.0;
    let ds = cmd_simulate(&cfg).unwrap().dataset;
    for (x, xdot) in ds.states().iter().zip(ds.derivatives()) {
        assert_eq!(&cfg.system.eval(x).unwrap(), xdot);
    }
}

#[test]
fn fixed_hyperparameters_skip_the_search() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config("msd", dir.path());
    cfg.model.fixed = Some(FixedHypers { sigma: 1.5, lambda1: 1e-3, lambda2: 1e-4 });
    let payload = cmd_fit(&cfg, None, Execution::Parallel).unwrap();
    assert!(payload.helmholtz_search.is_none() && payload.baseline_search.is_none());
    let h = &payload.reports[0].hyper;
    assert_eq!((h.sigma.get(), h.lambda1, h.lambda2), (1.5, 1e-3, 1e-4));
    assert_eq!(payload.reports[1].hyper.lambda1, 1e-3);
}

#[test]
fn fitting_is_deterministic_to_the_byte() {
    // Same output directory both times: the path is part of the embedded config.
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config("msd", dir.path());
    cfg.run.seed = 7;
    let files = ["helmholtz_model.json", "gaussian_model.json", "eval_report.json"];
    let read = || files.map(|f| std::fs::read(dir.path().join(f)).unwrap());
    cmd_fit(&cfg, None, Execution::Parallel).unwrap();
    let first = read();
    cmd_fit(&cfg, None, Execution::Sequential).unwrap();
    for (f, (x, y)) in files.iter().zip(first.iter().zip(read().iter())) {
        assert!(x == y, "{f} differs between runs");
    }
}

#[test]
fn pendulum_fit_beats_baseline_and_eval_reproduces_it() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config("pendulum", dir.path());
    cmd_simulate(&cfg).unwrap();
    let train = dir.path().join("train.csv");
    let payload = cmd_fit(&cfg, Some(&train), Execution::Parallel).unwrap();
    let (helm, base) = (&payload.reports[0], &payload.reports[1]);
    assert_eq!((helm.model.as_str(), base.model.as_str()), ("helmholtz", "gaussian"));
    assert!(helm.test_mse < base.test_mse, "{} vs {}", helm.test_mse, base.test_mse);

    let (_, artifact): (_, ModelArtifact) = read_json(&dir.path().join("helmholtz_model.json")).unwrap();
    assert!(matches!(artifact, ModelArtifact::Helmholtz(_)));
    let report = cmd_eval(&cfg, &dir.path().join("helmholtz_model.json"), Some(&train)).unwrap();
    assert_eq!(report.training_mse, helm.training_mse);
    assert_eq!(report.test_mse, helm.test_mse);
    assert!(dir.path().join("helmholtz_eval.json").exists());
}

#[test]
fn reproduce_emits_four_grids_and_a_summary() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config("msd", dir.path());
    cfg.run.seeds = 3;
    let outcome = cmd_reproduce(&cfg, Execution::Parallel).unwrap();
    let grids: Vec<_> = std::fs::read_dir(dir.path())
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .filter(|n| n.starts_with("grid_"))
        .collect();
    assert_eq!(grids.len(), 4, "{grids:?}");
    let (rq, rp) = cfg.plot.resolution;
    assert_eq!(read_grid_csv(&dir.path().join("grid_true.csv")).unwrap().len(), rq * rp);
    assert_eq!(read_grid_csv(&dir.path().join("grid_data.csv")).unwrap().len(), 15);

    let rows = read_summary_csv(&dir.path().join("results.csv")).unwrap();
    assert_eq!(rows.len(), 3 * 2 + 2);
    assert_eq!(rows.iter().filter(|r| r.seed.is_none()).count(), 2);
    assert_eq!(outcome.medians, rows[6..].to_vec());
    assert_eq!(read_csv_header(&dir.path().join("results.csv")).unwrap().seeds.len(), 3);
    assert!(dir.path().join("summary.txt").exists());
    assert!(dir.path().join("reports/seed_0.json").exists());
}

#[test]
fn reproduce_is_independent_of_execution_mode() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let mut cfg_a = config("pendulum", a.path());
    cfg_a.run.seeds = 2;
    let mut cfg_b = cfg_a.clone();
    cfg_b.run.out = b.path().to_path_buf();
    let par = cmd_reproduce(&cfg_a, Execution::Parallel).unwrap();
    let seq = cmd_reproduce(&cfg_b, Execution::Sequential).unwrap();
    assert_eq!(par.rows, seq.rows);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = |name: &str| dir.path().join(name);

    let ok = binary().args(["simulate", "--config", "msd", "--out"]).arg(out("s")).output().unwrap();
    assert_eq!(ok.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&ok.stdout).contains("N = 15"));

    let pass = binary().args(["reproduce", "msd", "--seeds", "2", "--out"]).arg(out("r")).output().unwrap();
    assert_eq!(pass.status.code(), Some(0), "{}", String::from_utf8_lossy(&pass.stdout));

    let miss = binary()
        .args(["reproduce", "pendulum", "--seeds", "2", "--noise-sigma", "1.0", "--out"])
        .arg(out("m"))
        .output()
        .unwrap();
    assert_eq!(miss.status.code(), Some(2));

    let invalid = binary().args(["simulate", "--config", "msd", "--features", "7"]).output().unwrap();
    assert_eq!(invalid.status.code(), Some(1));

    let bad = out("bad.toml");
    let src = ExperimentConfig::bundled("msd")
        .map(|_| helmholtz_rff::config::MSD_TOML.replace("h = 0.25", "h = -0.25"))
        .unwrap();
    std::fs::write(&bad, &src).unwrap();
    let line = src.lines().position(|l| l.starts_with("h = -0.25")).unwrap() + 1;
    let err = binary().args(["simulate", "--config"]).arg(&bad).output().unwrap();
    assert_eq!(err.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&err.stderr);
    assert!(stderr.contains(&format!("line {line}")), "{stderr}");
    assert!(load_config(bad.to_str().unwrap()).is_err());
}
