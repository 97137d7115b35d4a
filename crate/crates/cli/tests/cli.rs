//! End-to-end subcommand tests driving the compiled binary.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use funmix_core::orchestration::{ArchiveMeta, ChainArchive, RunConfig};
use funmix_core::selection::parameter_count;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_funmix"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn tmp_dir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("funmix_cli_{}_{tag}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write_run_config(dir: &Path, body: &str) -> PathBuf {
    let path = dir.join("run.toml");
    std::fs::write(&path, body).unwrap();
    path
}

const SMOKE_CONFIG: &str = r#"
n_features = 2
n_eigen = 3
n_try1 = 1
n_try2 = 1
n_mcmc1 = 20
n_mcmc2 = 20
total_iterations = 10
burn_in_fraction = 0.0
thin = 1
seed = 11

[basis]
dims = [{ degree = 3, n_knots = 4, domain = [0.0, 1.0] }]
"#;

#[test]
fn simulate_writes_dataset_of_requested_size() {
    let dir = tmp_dir("simulate");
    let out = run(&[
        "simulate",
        "--spec",
        "study1",
        "--n-obs",
        "40",
        "--seed",
        "4",
        "--out-dir",
        path_str(&dir.join("sim")),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(dir.join("sim/dataset.csv")).unwrap();
    let ids: std::collections::BTreeSet<&str> = csv
        .lines()
        .skip(1)
        .map(|l| l.split(',').next().unwrap())
        .collect();
    assert_eq!(ids.len(), 40);
    assert!(dir.join("sim/truth.json").exists());

    // Same seed twice: identical files.
    let out2 = run(&[
        "simulate",
        "--spec",
        "study1",
        "--n-obs",
        "40",
        "--seed",
        "4",
        "--out-dir",
        path_str(&dir.join("sim2")),
    ]);
    assert!(out2.status.success());
    assert_eq!(
        std::fs::read(dir.join("sim/dataset.csv")).unwrap(),
        std::fs::read(dir.join("sim2/dataset.csv")).unwrap()
    );
    assert_eq!(
        std::fs::read(dir.join("sim/truth.json")).unwrap(),
        std::fs::read(dir.join("sim2/truth.json")).unwrap()
    );
}

#[test]
fn missing_subcommand_or_spec_is_usage_error() {
    let out = run(&[]);
    assert_eq!(out.status.code(), Some(2));
    let out = run(&["simulate", "--out-dir", "/tmp/x"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn nonexistent_spec_file_is_schema_error() {
    let out = run(&[
        "simulate",
        "--spec",
        "/nonexistent/spec.toml",
        "--out-dir",
        "/tmp/funmix_nonexistent_out",
    ]);
    assert_eq!(out.status.code(), Some(3));
}

fn prepare_fit(tag: &str, chains: &str) -> (PathBuf, Output) {
    let dir = tmp_dir(tag);
    let sim = run(&[
        "simulate",
        "--spec",
        "study1",
        "--n-obs",
        "8",
        "--seed",
        "9",
        "--out-dir",
        path_str(&dir.join("sim")),
    ]);
    assert!(sim.status.success());
    let config = write_run_config(&dir, SMOKE_CONFIG);
    let out = run(&[
        "fit",
        "--data",
        path_str(&dir.join("sim/dataset.csv")),
        "--config",
        path_str(&config),
        "--out-dir",
        path_str(&dir.join("fit")),
        "--chains",
        chains,
    ]);
    (dir, out)
}

#[test]
fn fit_smoke_run_completes_and_archive_validates() {
    let (dir, out) = prepare_fit("fit", "1");
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let archive = ChainArchive::load(&dir.join("fit/chain_0.fmm")).unwrap();
    assert_eq!(archive.draws.len(), 10);
    for draw in &archive.draws {
        draw.validate().unwrap();
    }
    assert!(dir.join("fit/chain_0_loglik.csv").exists());
    let summary: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(dir.join("fit/acceptance_summary.json")).unwrap(),
    )
    .unwrap();
    assert!(summary["wall_clock_secs"].as_f64().unwrap() > 0.0);
    assert_eq!(summary["chains"].as_array().unwrap().len(), 1);
}

#[test]
fn fit_with_four_chains_emits_four_archives() {
    let (dir, out) = prepare_fit("chains4", "4");
    assert!(out.status.success());
    for chain in 0..4 {
        assert!(dir.join(format!("fit/chain_{chain}.fmm")).exists());
    }
}

#[test]
fn fixed_seed_reproduces_archive_bytes() {
    let (dir1, out1) = prepare_fit("repro_a", "1");
    let (dir2, out2) = prepare_fit("repro_b", "1");
    assert!(out1.status.success() && out2.status.success());
    let bytes1 = std::fs::read(dir1.join("fit/chain_0.fmm")).unwrap();
    let bytes2 = std::fs::read(dir2.join("fit/chain_0.fmm")).unwrap();
    assert_eq!(bytes1, bytes2);
    // The acceptance summary differs only in the wall-clock field.
    let mut s1: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(dir1.join("fit/acceptance_summary.json")).unwrap(),
    )
    .unwrap();
    let mut s2: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(dir2.join("fit/acceptance_summary.json")).unwrap(),
    )
    .unwrap();
    s1["wall_clock_secs"] = 0.0.into();
    s2["wall_clock_secs"] = 0.0.into();
    assert_eq!(s1, s2);
}

#[test]
fn summarize_emits_six_column_mean_tables_with_nested_bands() {
    let (dir, out) = prepare_fit("summ", "1");
    assert!(out.status.success());
    for (alpha, tag) in [("0.05", "a05"), ("0.01", "a01")] {
        let out = run(&[
            "summarize",
            "--archive",
            path_str(&dir.join("fit/chain_0.fmm")),
            "--alpha",
            alpha,
            "--grid-points",
            "40",
            "--out-dir",
            path_str(&dir.join(tag)),
        ]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    let table = std::fs::read_to_string(dir.join("a05/mu1.csv")).unwrap();
    let mut lines = table.lines();
    assert_eq!(lines.next().unwrap(), "t,median,lo_pt,hi_pt,lo_sim,hi_sim");
    let first = lines.next().unwrap();
    assert_eq!(first.split(',').count(), 6);
    // Bands nest: the alpha = 0.01 simultaneous band contains the 0.05 one.
    let parse = |path: PathBuf| -> Vec<(f64, f64)> {
        std::fs::read_to_string(path)
            .unwrap()
            .lines()
            .skip(1)
            .map(|l| {
                let f: Vec<f64> = l.split(',').map(|v| v.parse().unwrap()).collect();
                (f[4], f[5])
            })
            .collect()
    };
    let wide = parse(dir.join("a01/mu1.csv"));
    let narrow = parse(dir.join("a05/mu1.csv"));
    for (w, n) in wide.iter().zip(&narrow) {
        assert!(w.0 <= n.0 + 1e-12 && w.1 >= n.1 - 1e-12);
    }
    // Covariance tables carry the extra leading coordinate column.
    let cov = std::fs::read_to_string(dir.join("a05/cov12.csv")).unwrap();
    assert!(cov.starts_with("s,t,median,lo_pt,hi_pt,lo_sim,hi_sim"));
    assert!(dir.join("a05/eigenvalues.csv").exists());
}

#[test]
fn select_reports_criteria_rows_and_elbow() {
    let dir = tmp_dir("select");
    let sim = run(&[
        "simulate",
        "--spec",
        "study2",
        "--n-obs",
        "10",
        "--seed",
        "2",
        "--out-dir",
        path_str(&dir.join("sim")),
    ]);
    assert!(sim.status.success());
    let mut archives = Vec::new();
    for k in 2..=5 {
        let config_body = SMOKE_CONFIG.replace("n_features = 2", &format!("n_features = {k}"));
        let config = dir.join(format!("run_k{k}.toml"));
        std::fs::write(&config, config_body).unwrap();
        let fit = run(&[
            "fit",
            "--data",
            path_str(&dir.join("sim/dataset.csv")),
            "--config",
            path_str(&config),
            "--out-dir",
            path_str(&dir.join(format!("fit_k{k}"))),
        ]);
        assert!(fit.status.success(), "{}", String::from_utf8_lossy(&fit.stderr));
        archives.push(dir.join(format!("fit_k{k}/chain_0.fmm")));
    }
    let mut args = vec![
        "select".to_string(),
        "--data".into(),
        path_str(&dir.join("sim/dataset.csv")).to_string(),
        "--archives".into(),
    ];
    args.extend(archives.iter().map(|p| path_str(p).to_string()));
    args.push("--out-dir".into());
    args.push(path_str(&dir.join("sel")).to_string());
    let out = bin().args(&args).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(dir.join("sel/criteria.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "K,d,AIC,BIC,DIC,mean_loglik");
    assert_eq!(lines.len(), 5);
    // d column matches the formula for each K.
    for (row, k) in lines[1..].iter().zip(2usize..) {
        let fields: Vec<&str> = row.split(',').collect();
        assert_eq!(fields[0], k.to_string());
        let dims = funmix_core::model::ModelDims::new(k, 8, 3, 10).unwrap();
        assert_eq!(fields[1], parameter_count(dims).to_string());
    }
    assert!(dir.join("sel/elbow.json").exists());
}

#[test]
fn rescale_subcommand_round_trips_archive() {
    let (dir, out) = prepare_fit("rescale", "1");
    assert!(out.status.success());
    let rescaled_path = dir.join("fit/chain_0_rescaled.fmm");
    let out = run(&[
        "rescale",
        "--archive",
        path_str(&dir.join("fit/chain_0.fmm")),
        "--out",
        path_str(&rescaled_path),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let original = ChainArchive::load(&dir.join("fit/chain_0.fmm")).unwrap();
    let rescaled = ChainArchive::load(&rescaled_path).unwrap();
    assert_eq!(rescaled.draws.len(), original.draws.len());
    // Rescaled draws put at least one observation at each vertex.
    for draw in &rescaled.draws {
        let max0 = (0..draw.z.nrows()).map(|i| draw.z[(i, 0)]).fold(0.0, f64::max);
        let max1 = (0..draw.z.nrows()).map(|i| draw.z[(i, 1)]).fold(0.0, f64::max);
        assert!(max0 >= 1.0 - 1e-8 && max1 >= 1.0 - 1e-8);
    }
}

#[test]
fn eval_of_truth_replica_archive_is_exact() {
    let dir = tmp_dir("eval");
    let sim = run(&[
        "simulate",
        "--spec",
        "study1",
        "--n-obs",
        "6",
        "--seed",
        "13",
        "--out-dir",
        path_str(&dir.join("sim")),
    ]);
    assert!(sim.status.success());
    // Build an archive whose draws are exact replicas of the truth.
    let truth: funmix_core::simgen::TruthFile =
        serde_json::from_str(&std::fs::read_to_string(dir.join("sim/truth.json")).unwrap())
            .unwrap();
    let config = RunConfig {
        n_features: 2,
        n_eigen: 3,
        basis: truth.spec.basis.clone(),
        ..RunConfig::default()
    };
    let archive = ChainArchive {
        dims: truth.state.dims(),
        draws: vec![truth.state.clone(); 3],
        loglik: vec![0.0; 3],
        iterations: vec![1, 2, 3],
        meta: ArchiveMeta {
            config_hash: funmix_core::orchestration::config_hash(&config),
            config,
            chain_id: 0,
            acceptance: Default::default(),
            wall_clock_secs: 0.0,
        },
    };
    let archive_path = dir.join("truth_replica.fmm");
    archive.save(&archive_path).unwrap();
    let out = run(&[
        "eval",
        "--truth",
        path_str(&dir.join("sim/truth.json")),
        "--archive",
        path_str(&archive_path),
        "--no-rescale",
        "--out-dir",
        path_str(&dir.join("metrics")),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let metrics = std::fs::read_to_string(dir.join("metrics/metrics.csv")).unwrap();
    let mut lines = metrics.lines();
    assert_eq!(lines.next().unwrap(), "target,r_mise_pct");
    for line in lines {
        let value: f64 = line.split(',').nth(1).unwrap().parse().unwrap();
        assert!(value.abs() < 1e-20, "{line}");
    }
    let z = std::fs::read_to_string(dir.join("metrics/z_rmse.csv")).unwrap();
    let mut lines = z.lines();
    assert_eq!(lines.next().unwrap(), "z_rmse");
    let value: f64 = lines.next().unwrap().parse().unwrap();
    assert!(value.abs() < 1e-20);
}

#[test]
fn malformed_data_file_gives_schema_exit_code() {
    let dir = tmp_dir("badcsv");
    std::fs::write(dir.join("bad.csv"), "a,b\n1,2\n").unwrap();
    let config = write_run_config(&dir, SMOKE_CONFIG);
    let out = run(&[
        "fit",
        "--data",
        path_str(&dir.join("bad.csv")),
        "--config",
        path_str(&config),
        "--out-dir",
        path_str(&dir.join("fit")),
    ]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn json_config_is_accepted() {
    let dir = tmp_dir("jsoncfg");
    let sim = run(&[
        "simulate",
        "--spec",
        "study1",
        "--n-obs",
        "6",
        "--seed",
        "1",
        "--out-dir",
        path_str(&dir.join("sim")),
    ]);
    assert!(sim.status.success());
    let config_json = serde_json::json!({
        "n_features": 2,
        "n_eigen": 3,
        "n_try1": 1,
        "n_try2": 1,
        "n_mcmc1": 10,
        "n_mcmc2": 10,
        "total_iterations": 5,
        "burn_in_fraction": 0.0,
        "thin": 1,
        "seed": 3,
        "basis": {"dims": [{"degree": 3, "n_knots": 4, "domain": [0.0, 1.0]}]}
    });
    let config = dir.join("run.json");
    std::fs::write(&config, serde_json::to_string_pretty(&config_json).unwrap()).unwrap();
    let out = run(&[
        "fit",
        "--data",
        path_str(&dir.join("sim/dataset.jsonl")),
        "--config",
        path_str(&config),
        "--out-dir",
        path_str(&dir.join("fit")),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}
