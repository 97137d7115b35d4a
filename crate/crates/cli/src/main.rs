//! Command-line front end: data simulation, model fitting, posterior
//! summaries, feature-count selection, membership rescaling, and recovery
//! metrics. Outputs are plot-ready CSV tables and JSON summaries.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use nalgebra::DMatrix;

use funmix_core::basis::BasisSystem;
use funmix_core::model::{
    build_designs, fmt_f64, read_dataset_csv, read_dataset_jsonl, uniform_grid, write_dataset_csv,
    write_dataset_jsonl, Dataset,
};
use funmix_core::orchestration::{run_parallel_chains, ChainArchive, RunConfig};
use funmix_core::postprocess::{
    default_eigen_grid, eigen_decompose, pointwise_quantile, rescale_or_passthrough,
    summarize_functions, write_eigenvalues_csv, RescaleOutcome, Target,
};
use funmix_core::rng::stream_rng;
use funmix_core::selection::{
    criteria_report, elbow_scan, evaluate_against_truth, write_criteria_csv, CriteriaReport,
    ElbowOutcome,
};
use funmix_core::simgen::{draw_truth, synthesize, SimSpec, TruthFile};
use funmix_core::Error as CoreError;

#[derive(Parser)]
#[command(name = "funmix", version, about = "Bayesian functional mixed membership models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset and its generating truth.
    Simulate(SimulateArgs),
    /// Fit the model to a dataset: multiple-start initialization plus the
    /// main MCMC run; writes chain archives, log-likelihood traces, and an
    /// acceptance summary.
    Fit(FitArgs),
    /// Summarize posterior draws: point estimates with pointwise and
    /// simultaneous credible bands per target, plus eigenvalue tables.
    Summarize(SummarizeArgs),
    /// Compare fitted archives across feature counts: information criteria
    /// and the elbow suggestion.
    Select(SelectArgs),
    /// Apply the two-feature membership rescale to every draw of an archive.
    Rescale(RescaleArgs),
    /// Score an archive against a truth file (R-MISE, membership RMSE).
    Eval(EvalArgs),
}

#[derive(Args)]
struct SimulateArgs {
    /// Simulation spec file (.toml or .json), or the name of a preset:
    /// "study1" / "study2".
    #[arg(long)]
    spec: String,
    /// Observations to generate when using a preset.
    #[arg(long, default_value_t = 40)]
    n_obs: usize,
    /// Seed override.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct FitArgs {
    /// Dataset file (.csv long format or .jsonl).
    #[arg(long)]
    data: PathBuf,
    /// Run configuration (.toml or .json).
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    /// Number of independent chains.
    #[arg(long, default_value_t = 1)]
    chains: usize,
}

#[derive(Args)]
struct SummarizeArgs {
    /// Chain archive produced by `fit`.
    #[arg(long)]
    archive: PathBuf,
    /// Comma-separated targets (mu1, cov12, ...); all means and covariance
    /// surfaces when omitted.
    #[arg(long)]
    targets: Option<String>,
    /// Credible level parameter alpha for the (1 - alpha) bands.
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    /// Evaluation grid size over the domain.
    #[arg(long, default_value_t = 100)]
    grid_points: usize,
    /// Skip the two-feature membership rescale before summarizing.
    #[arg(long)]
    no_rescale: bool,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct SelectArgs {
    /// Dataset the archives were fitted to.
    #[arg(long)]
    data: PathBuf,
    /// Archives for increasing feature counts.
    #[arg(long, num_args = 1.., required = true)]
    archives: Vec<PathBuf>,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct RescaleArgs {
    #[arg(long)]
    archive: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    /// Truth file produced by `simulate`.
    #[arg(long)]
    truth: PathBuf,
    #[arg(long)]
    archive: PathBuf,
    /// Evaluation grid size over the domain.
    #[arg(long, default_value_t = 100)]
    grid_points: usize,
    /// Skip the two-feature membership rescale before scoring.
    #[arg(long)]
    no_rescale: bool,
    #[arg(long)]
    out_dir: PathBuf,
}

/// Exit codes: 0 success, 2 usage (handled by clap), 3 data/schema,
/// 4 numerical failure.
fn exit_code_for(err: &CoreError) -> u8 {
    match err {
        CoreError::InvalidKnots(_)
        | CoreError::UnsupportedDimension(_)
        | CoreError::EmptyData
        | CoreError::DataFormat(_)
        | CoreError::Config(_)
        | CoreError::ArchiveFormat(_)
        | CoreError::InvalidLadder(_)
        | CoreError::DimensionMismatch(_)
        | CoreError::Io(_)
        | CoreError::Json(_) => 3,
        CoreError::OutsideDomain { .. }
        | CoreError::InvalidState(_)
        | CoreError::NotPositiveDefinite { .. }
        | CoreError::ConstraintSingular
        | CoreError::RescaleDegenerate(_)
        | CoreError::DegenerateBand(_)
        | CoreError::UndefinedMetric(_) => 4,
        CoreError::ChainFailed { source, .. } => exit_code_for(source),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate(args) => cmd_simulate(args),
        Command::Fit(args) => cmd_fit(args),
        Command::Summarize(args) => cmd_summarize(args),
        Command::Select(args) => cmd_select(args),
        Command::Rescale(args) => cmd_rescale(args),
        Command::Eval(args) => cmd_eval(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}

fn read_to_string(path: &Path) -> Result<String, CoreError> {
    std::fs::read_to_string(path)
        .map_err(|e| CoreError::DataFormat(format!("{}: {e}", path.display())))
}

/// Parse a config-like file as TOML or JSON by extension.
fn parse_config_file<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, CoreError> {
    let text = read_to_string(path)?;
    match path.extension().and_then(|e| e.to_str()) {
        Some("toml") => toml::from_str(&text)
            .map_err(|e| CoreError::Config(format!("{}: {e}", path.display()))),
        Some("json") => serde_json::from_str(&text)
            .map_err(|e| CoreError::Config(format!("{}: {e}", path.display()))),
        other => Err(CoreError::Config(format!(
            "{}: unsupported config extension {:?} (use .toml or .json)",
            path.display(),
            other.unwrap_or("none")
        ))),
    }
}

fn read_dataset(path: &Path) -> Result<Dataset, CoreError> {
    let file = std::fs::File::open(path)
        .map_err(|e| CoreError::DataFormat(format!("{}: {e}", path.display())))?;
    let reader = std::io::BufReader::new(file);
    match path.extension().and_then(|e| e.to_str()) {
        Some("csv") => read_dataset_csv(reader),
        Some("jsonl") | Some("ndjson") => read_dataset_jsonl(reader),
        other => Err(CoreError::DataFormat(format!(
            "{}: unsupported data extension {:?} (use .csv or .jsonl)",
            path.display(),
            other.unwrap_or("none")
        ))),
    }
}

fn ensure_dir(path: &Path) -> Result<(), CoreError> {
    std::fs::create_dir_all(path)?;
    Ok(())
}

fn cmd_simulate(args: SimulateArgs) -> Result<(), CoreError> {
    let mut spec: SimSpec = match args.spec.as_str() {
        "study1" => SimSpec::study1(args.n_obs, args.seed.unwrap_or(0)),
        "study2" => SimSpec::study2(args.n_obs, args.seed.unwrap_or(0)),
        path => parse_config_file(Path::new(path))?,
    };
    if let Some(seed) = args.seed {
        spec.seed = seed;
    }
    spec.validate()?;
    let basis = spec.basis.build()?;
    let mut rng = stream_rng(spec.seed, &[1]);
    let truth = draw_truth(&spec, &basis, &mut rng)?;
    let data = synthesize(&truth, &spec, &basis, &mut rng)?;

    ensure_dir(&args.out_dir)?;
    let csv = std::fs::File::create(args.out_dir.join("dataset.csv"))?;
    write_dataset_csv(&data, csv)?;
    let jsonl = std::fs::File::create(args.out_dir.join("dataset.jsonl"))?;
    write_dataset_jsonl(&data, jsonl)?;
    let truth_file = TruthFile { spec, state: truth };
    std::fs::write(
        args.out_dir.join("truth.json"),
        serde_json::to_string_pretty(&truth_file)?,
    )?;
    println!(
        "wrote dataset.csv, dataset.jsonl, truth.json ({} observations) to {}",
        data.len(),
        args.out_dir.display()
    );
    Ok(())
}

fn cmd_fit(args: FitArgs) -> Result<(), CoreError> {
    if args.chains == 0 {
        return Err(CoreError::Config("--chains must be at least 1".into()));
    }
    let data = read_dataset(&args.data)?;
    let config: RunConfig = parse_config_file(&args.config)?;
    config.validate()?;
    let basis = config.basis.build()?;
    ensure_dir(&args.out_dir)?;

    let started = std::time::Instant::now();
    let results = run_parallel_chains(&data, &basis, &config, args.chains);
    let mut failures = Vec::new();
    let mut chain_summaries = Vec::new();
    let mut config_hash = String::new();
    for (chain_id, result) in results.into_iter().enumerate() {
        match result {
            Ok(archive) => {
                let stem = format!("chain_{chain_id}");
                archive.save(&args.out_dir.join(format!("{stem}.fmm")))?;
                let trace = std::fs::File::create(args.out_dir.join(format!("{stem}_loglik.csv")))?;
                archive.write_loglik_csv(trace)?;
                config_hash = archive.meta.config_hash.clone();
                let acceptance: BTreeMap<String, serde_json::Value> = archive
                    .meta
                    .acceptance
                    .iter()
                    .map(|(k, v)| {
                        (
                            k.clone(),
                            serde_json::json!({
                                "accepted": v.accepted,
                                "attempts": v.attempts,
                                "rate": v.rate(),
                            }),
                        )
                    })
                    .collect();
                chain_summaries.push(serde_json::json!({
                    "chain_id": chain_id,
                    "n_draws": archive.draws.len(),
                    "acceptance": acceptance,
                }));
            }
            Err(err) => {
                eprintln!("chain {chain_id} failed: {err}");
                failures.push(err);
            }
        }
    }
    let summary = serde_json::json!({
        "config_hash": config_hash,
        "chains": chain_summaries,
        "wall_clock_secs": started.elapsed().as_secs_f64(),
    });
    std::fs::write(
        args.out_dir.join("acceptance_summary.json"),
        serde_json::to_string_pretty(&summary)?,
    )?;
    if let Some(err) = failures.into_iter().next() {
        return Err(err);
    }
    println!(
        "fit complete: {} chain(s) written to {}",
        args.chains,
        args.out_dir.display()
    );
    Ok(())
}

fn archive_basis(archive: &ChainArchive) -> Result<BasisSystem, CoreError> {
    archive.meta.config.basis.build()
}

fn cmd_summarize(args: SummarizeArgs) -> Result<(), CoreError> {
    let archive = ChainArchive::load(&args.archive)?;
    let basis = archive_basis(&archive)?;
    let k = archive.dims.n_features;
    let targets: Vec<Target> = match &args.targets {
        Some(list) => list
            .split(',')
            .map(|s| Target::parse(s.trim()))
            .collect::<Result<_, _>>()?,
        None => {
            let mut all = Vec::new();
            for a in 0..k {
                all.push(Target::Mean(a));
            }
            for a in 0..k {
                for b in a..k {
                    all.push(Target::Covariance(a, b));
                }
            }
            all
        }
    };
    let points = uniform_grid(&basis, args.grid_points);
    let grid = DMatrix::from_iterator(points.len(), 1, points.iter().copied());
    let summaries = summarize_functions(
        &archive,
        &basis,
        &grid,
        &targets,
        args.alpha,
        !args.no_rescale,
    )?;
    ensure_dir(&args.out_dir)?;
    for summary in &summaries {
        let path = args.out_dir.join(format!("{}.csv", summary.target.label()));
        let file = std::fs::File::create(&path)?;
        summary.write_csv(std::io::BufWriter::new(file))?;
    }
    if let Some(first) = summaries.first() {
        if first.rescale_passthroughs > 0 {
            eprintln!(
                "warning: {} draw(s) had a degenerate membership rescale and passed through",
                first.rescale_passthroughs
            );
        }
    }

    // Posterior eigenvalue table: per-index quantiles across draws.
    let (eigen_grid, weights) = default_eigen_grid(&basis)?;
    let max_rank = archive.dims.n_eigen;
    let eigen_draws: Vec<nalgebra::DVector<f64>> = archive
        .draws
        .iter()
        .map(|draw| {
            let sys = eigen_decompose(draw, &basis, &eigen_grid, &weights)?;
            Ok(nalgebra::DVector::from_fn(max_rank, |i, _| {
                sys.eigenvalues.get(i).copied().unwrap_or(0.0)
            }))
        })
        .collect::<Result<_, CoreError>>()?;
    let median = pointwise_quantile(&eigen_draws, 0.5);
    let lo = pointwise_quantile(&eigen_draws, args.alpha / 2.0);
    let hi = pointwise_quantile(&eigen_draws, 1.0 - args.alpha / 2.0);
    let mut out = String::from("index,median,lo_pt,hi_pt\n");
    for i in 0..max_rank {
        out.push_str(&format!(
            "{},{},{},{}\n",
            i + 1,
            fmt_f64(median[i]),
            fmt_f64(lo[i]),
            fmt_f64(hi[i])
        ));
    }
    std::fs::write(args.out_dir.join("eigenvalues.csv"), out)?;
    // Last-draw eigen decomposition for spot inspection.
    if let Some(last) = archive.draws.last() {
        let sys = eigen_decompose(last, &basis, &eigen_grid, &weights)?;
        let file = std::fs::File::create(args.out_dir.join("eigenvalues_last_draw.csv"))?;
        write_eigenvalues_csv(&sys, std::io::BufWriter::new(file))?;
    }
    println!(
        "wrote {} target table(s) and eigenvalue tables to {}",
        summaries.len(),
        args.out_dir.display()
    );
    Ok(())
}

fn cmd_select(args: SelectArgs) -> Result<(), CoreError> {
    let data = read_dataset(&args.data)?;
    let mut reports: Vec<CriteriaReport> = Vec::new();
    for path in &args.archives {
        let archive = ChainArchive::load(path)?;
        let basis = archive_basis(&archive)?;
        let designs = build_designs(&basis, &data)?;
        reports.push(criteria_report(&archive, &data, &designs)?);
    }
    reports.sort_by_key(|r| r.n_features);
    ensure_dir(&args.out_dir)?;
    let file = std::fs::File::create(args.out_dir.join("criteria.csv"))?;
    write_criteria_csv(&reports, std::io::BufWriter::new(file))?;
    let outcome = elbow_scan(&reports)?;
    let json = match &outcome {
        ElbowOutcome::Elbow(k) => serde_json::json!({"suggested_k": k}),
        ElbowOutcome::NoElbow => serde_json::json!({"no_elbow": true}),
    };
    std::fs::write(
        args.out_dir.join("elbow.json"),
        serde_json::to_string_pretty(&json)?,
    )?;
    match outcome {
        ElbowOutcome::Elbow(k) => println!("suggested K = {k}"),
        ElbowOutcome::NoElbow => println!("no elbow: mean log-likelihood is linear in K"),
    }
    Ok(())
}

fn cmd_rescale(args: RescaleArgs) -> Result<(), CoreError> {
    let mut archive = ChainArchive::load(&args.archive)?;
    if archive.dims.n_features != 2 {
        eprintln!(
            "warning: rescaling is defined for two features (archive has {}); passing draws through unmodified",
            archive.dims.n_features
        );
        archive.save(&args.out)?;
        return Ok(());
    }
    let mut passthroughs = 0usize;
    archive.draws = archive
        .draws
        .iter()
        .map(|d| {
            let (s, outcome) = rescale_or_passthrough(d);
            if matches!(outcome, RescaleOutcome::PassedThrough(_)) {
                passthroughs += 1;
            }
            s
        })
        .collect();
    archive.save(&args.out)?;
    println!(
        "rescaled {} draw(s) ({} degenerate pass-through(s)) -> {}",
        archive.draws.len(),
        passthroughs,
        args.out.display()
    );
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> Result<(), CoreError> {
    let truth: TruthFile = serde_json::from_str(&read_to_string(&args.truth)?)?;
    let archive = ChainArchive::load(&args.archive)?;
    let basis = truth.spec.basis.build()?;
    let report = evaluate_against_truth(
        &archive,
        &truth.state,
        &basis,
        args.grid_points,
        !args.no_rescale,
    )?;
    ensure_dir(&args.out_dir)?;
    let mut metrics = String::from("target,r_mise_pct\n");
    for (label, value) in &report.r_mise {
        metrics.push_str(&format!("{label},{}\n", fmt_f64(*value)));
    }
    std::fs::write(args.out_dir.join("metrics.csv"), metrics)?;
    std::fs::write(
        args.out_dir.join("z_rmse.csv"),
        format!("z_rmse\n{}\n", fmt_f64(report.z_rmse)),
    )?;
    for (label, value) in &report.r_mise {
        println!("{label}: R-MISE {value:.4}%");
    }
    println!("z_rmse: {:.6}", report.z_rmse);
    Ok(())
}
