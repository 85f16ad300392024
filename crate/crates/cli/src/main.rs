mod config;
mod output;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Mutex;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use scalelab::experiment::{
    alpha_slice, gradcheck, locate_fold, read_grid_csv, ridge_slope, sweep_with, train, write_grid_csv,
    GradcheckOptions, GridRow, RidgeError, SweepSpec, TrainConfig,
};
use scalelab::model::{calibrate_gain, CALIBRATION_TOLERANCE};
use scalelab::numerics::SeededRng;
use serde::Serialize;

use config::{ConfigFile, DatasetConfig, DatasetFile, DATA_DIR_ENV};
use output::{heatmap, to_toml, write_artifact, Manifest, SHADE_MAPPING};

const VERSION: &str = env!("CARGO_PKG_VERSION");
/// Gradient checks pass below this relative error.
const GRADCHECK_TOLERANCE: f64 = 1e-6;

#[derive(Parser)]
#[command(
    name = "scalelab",
    version,
    about = "Output-scaling experiments for adaptive optimizers"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Activation gain by quadrature, cross-checked by Monte Carlo.
    Calibrate {
        #[arg(long)]
        beta: f64,
        #[arg(long, default_value_t = 10_000_000)]
        samples: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// One full-batch training run.
    Train(RunArgs),
    /// A dense (eta, alpha) lattice of training runs.
    Sweep(RunArgs),
    /// Analytic gradients against central finite differences.
    Gradcheck {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Perturb the analytic gradient; the check must then fail.
        #[arg(long, hide = true)]
        corrupt_gradient: bool,
    },
    /// Ridge slope, fold and alpha slice of a sweep grid.
    Report {
        grid: PathBuf,
        /// log10 of the learning rate for the alpha slice.
        #[arg(long, allow_hyphen_values = true)]
        eta: Option<f64>,
        /// Columns whose best eval accuracy is below this are ignored.
        #[arg(long, default_value_t = 0.0)]
        floor: f64,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Cells trained in parallel (sweeps only); 1 runs serially.
    #[arg(long)]
    threads: Option<usize>,
    /// Overrides the config's seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, env = DATA_DIR_ENV)]
    dataset_dir: Option<PathBuf>,
}

enum Failure {
    /// Bad arguments or configuration.
    Usage(anyhow::Error),
    /// I/O or numerical failure.
    Runtime(anyhow::Error),
    /// A check ran and did not pass.
    Check(String),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

type Outcome = Result<(), Failure>;

fn usage(e: anyhow::Error) -> Failure {
    Failure::Usage(e)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Calibrate { beta, samples, seed } => cmd_calibrate(beta, samples, seed),
        Command::Train(args) => cmd_train(&args),
        Command::Sweep(args) => cmd_sweep(&args),
        Command::Gradcheck {
            config,
            seed,
            corrupt_gradient,
        } => cmd_gradcheck(config.as_deref(), seed, corrupt_gradient),
        Command::Report { grid, eta, floor } => cmd_report(&grid, eta, floor),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Check(msg)) => {
            eprintln!("check failed: {msg}");
            ExitCode::from(1)
        }
    }
}

fn cmd_calibrate(beta: f64, samples: usize, seed: u64) -> Outcome {
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(usage(anyhow!("--beta must be positive and finite, got {beta}")));
    }
    let cal = calibrate_gain(beta, samples, &mut SeededRng::new(seed));
    match cal {
        Ok(c) => {
            println!("beta = {beta}");
            println!("gain_quadrature = {:.6}", c.spec.gain);
            println!("gain_monte_carlo = {:.6}", c.monte_carlo_gain);
            println!("samples = {}", c.samples);
            println!("relative_gap = {:.3e}", c.relative_gap);
            println!("tolerance = {CALIBRATION_TOLERANCE:e}");
            Ok(())
        }
        Err(e @ scalelab::model::CalibrationError::Disagreement { .. }) => Err(Failure::Check(e.to_string())),
        Err(e) => Err(usage(e.into())),
    }
}

fn prepare_out(dir: &Path) -> Result<(), Failure> {
    std::fs::create_dir_all(dir)
        .with_context(|| format!("cannot create output directory {}", dir.display()))
        .map_err(Failure::Runtime)
}

#[derive(Serialize)]
struct ResolvedTrain<'a> {
    train: &'a TrainConfig,
    dataset: &'a DatasetConfig,
}

fn cmd_train(args: &RunArgs) -> Outcome {
    let file = ConfigFile::read(&args.config).map_err(usage)?;
    let (mut cfg, data_cfg) = file.train().map_err(usage)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    cfg.validate().map_err(|e| usage(e.into()))?;
    let data = data_cfg.load(&file, args.dataset_dir.as_deref())?;
    let outcome = train(&cfg, &data.train, &data.eval).map_err(|e| Failure::Runtime(e.into()))?;
    let r = &outcome.report;

    prepare_out(&args.out)?;
    let report = write_artifact(&args.out, "report.toml", to_toml(r)?.as_bytes())?;
    Manifest {
        command: "train",
        version: VERSION,
        config_path: args.config.clone(),
        output_dir: args.out.clone(),
        timestamp_unix: output::timestamp(),
        config: &ResolvedTrain {
            train: &cfg,
            dataset: &data_cfg,
        },
        dataset_files: &data.files,
        artifacts: vec![report],
    }
    .write()?;
    println!(
        "train_acc = {:.4}  eval_acc = {:.4}  consistency = {:.4}  diverged = {}  frozen = {}  steps = {}",
        r.train_accuracy, r.eval_accuracy, r.consistency, r.diverged, r.frozen, r.steps_completed
    );
    Ok(())
}

#[derive(Serialize)]
struct SweepMetadata<'a> {
    version: &'a str,
    spec: &'a SweepSpec,
    dataset: &'a DatasetConfig,
    dataset_files: &'a [DatasetFile],
    divergence_rule: String,
    cell_seed_rule: &'a str,
    /// Fields of `spec.base` replaced in every cell.
    per_cell_fields: [&'a str; 3],
    heatmaps: [&'a str; 2],
    shade_mapping: &'a str,
}

fn write_partial(path: &Path, slots: &[Option<GridRow>]) -> anyhow::Result<()> {
    let done: Vec<GridRow> = slots.iter().flatten().cloned().collect();
    let mut buf = Vec::new();
    write_grid_csv(&done, &mut buf)?;
    std::fs::write(path, buf).with_context(|| format!("cannot write {}", path.display()))
}

fn cmd_sweep(args: &RunArgs) -> Outcome {
    let file = ConfigFile::read(&args.config).map_err(usage)?;
    let (mut spec, data_cfg) = file.sweep().map_err(usage)?;
    if let Some(seed) = args.seed {
        spec.base.seed = seed;
    }
    if spec.cell_count() == 0 {
        return Err(usage(anyhow!("sweep lattice is empty")));
    }
    spec.base.validate().map_err(|e| usage(e.into()))?;
    if args.threads == Some(0) {
        return Err(usage(anyhow!("--threads must be at least 1")));
    }
    let data = data_cfg.load(&file, args.dataset_dir.as_deref())?;
    prepare_out(&args.out)?;

    // cells land here as they finish so an interrupted sweep leaves a usable partial grid
    let partial_path = args.out.join("grid.partial.csv");
    let slots = Mutex::new(vec![None; spec.cell_count()]);
    let n_alpha = spec.log10_alphas.len();
    let optimizer = spec.base.optimizer;
    let grid = sweep_with(&spec, &data.train, &data.eval, args.threads, |cell| {
        let mut slots = slots.lock().expect("partial grid lock");
        slots[cell.eta_index * n_alpha + cell.alpha_index] = Some(cell.row(optimizer));
        if let Err(e) = write_partial(&partial_path, &slots) {
            eprintln!("warning: {e:#}");
        }
    })
    .map_err(|e| {
        Failure::Runtime(anyhow::Error::from(e).context(format!(
            "sweep aborted; finished cells are in {}",
            partial_path.display()
        )))
    })?;

    let rows = grid.rows();
    let mut csv = Vec::new();
    write_grid_csv(&rows, &mut csv).map_err(anyhow::Error::from)?;
    let mut artifacts = vec![write_artifact(&args.out, "grid.csv", &csv)?];
    artifacts.push(write_artifact(
        &args.out,
        "eval_acc.pgm",
        &heatmap(&rows, &spec.log10_etas, &spec.log10_alphas, |r| r.eval_acc),
    )?);
    artifacts.push(write_artifact(
        &args.out,
        "consistency.pgm",
        &heatmap(&rows, &spec.log10_etas, &spec.log10_alphas, |r| r.consistency),
    )?);
    let metadata = SweepMetadata {
        version: VERSION,
        spec: &spec,
        dataset: &data_cfg,
        dataset_files: &data.files,
        divergence_rule: format!(
            "loss > {:e} x initial loss, or any non-finite loss, output or update",
            spec.base.divergence_factor
        ),
        cell_seed_rule: if spec.shared_init {
            "every cell starts from the initialization of base.seed"
        } else {
            "cell (i, j) uses derive_seed(base.seed, [i, j]) with i the eta index and j the alpha index"
        },
        per_cell_fields: ["alpha", "eta", "seed"],
        heatmaps: ["eval_acc.pgm", "consistency.pgm"],
        shade_mapping: SHADE_MAPPING,
    };
    artifacts.push(write_artifact(
        &args.out,
        "metadata.toml",
        to_toml(&metadata)?.as_bytes(),
    )?);
    Manifest {
        command: "sweep",
        version: VERSION,
        config_path: args.config.clone(),
        output_dir: args.out.clone(),
        timestamp_unix: output::timestamp(),
        config: &metadata,
        dataset_files: &data.files,
        artifacts,
    }
    .write()?;
    if partial_path.exists() {
        std::fs::remove_file(&partial_path)
            .with_context(|| format!("cannot remove {}", partial_path.display()))?;
    }
    let diverged = rows.iter().filter(|r| r.diverged).count();
    let frozen = rows.iter().filter(|r| r.frozen).count();
    println!(
        "{} cells ({} diverged, {} frozen) written to {}",
        rows.len(),
        diverged,
        frozen,
        args.out.display()
    );
    Ok(())
}

fn cmd_gradcheck(config: Option<&Path>, seed: Option<u64>, corrupt: bool) -> Outcome {
    let mut options = match config {
        Some(path) => ConfigFile::read(path)
            .and_then(|f| f.gradcheck())
            .map_err(usage)?,
        None => GradcheckOptions::default(),
    };
    if let Some(seed) = seed {
        options.seed = seed;
    }
    options.corrupt |= corrupt;
    options.validate().map_err(|e| usage(e.into()))?;
    let report = gradcheck(&options).map_err(|e| Failure::Runtime(e.into()))?;
    println!("instances = {}", report.instances);
    println!("parameters = {}", report.parameters);
    println!("max_relative_error = {:.3e}", report.max_relative_error);
    println!(
        "worst = instance {} parameter {}",
        report.worst_instance, report.worst_parameter
    );
    if report.passed(GRADCHECK_TOLERANCE) {
        println!("gradcheck passed (tolerance {GRADCHECK_TOLERANCE:e})");
        Ok(())
    } else {
        Err(Failure::Check(format!(
            "max relative error {:.3e} is not below {GRADCHECK_TOLERANCE:e}",
            report.max_relative_error
        )))
    }
}

fn cmd_report(grid: &Path, eta: Option<f64>, floor: f64) -> Outcome {
    let file = std::fs::File::open(grid).with_context(|| format!("cannot open {}", grid.display()))?;
    let rows = read_grid_csv(file).map_err(|e| usage(anyhow!("{}: {e}", grid.display())))?;
    let fit = ridge_slope(&rows, floor).map_err(|e| match e {
        RidgeError::InsufficientColumns { .. } => usage(anyhow!("insufficient data: {e}")),
        other => usage(other.into()),
    })?;
    println!("log10_alpha,best_log10_eta,eval_acc");
    for p in &fit.points {
        println!("{},{},{}", p.log10_alpha, p.log10_eta, p.eval_acc);
    }
    println!("ridge_slope = {:.4}", fit.slope);
    println!("ridge_intercept = {:.4}", fit.intercept);
    match locate_fold(&fit) {
        Some(f) => println!(
            "fold_log10_alpha = {}  (slope {:.3} left, {:.3} right)",
            f.log10_alpha, f.left_slope, f.right_slope
        ),
        None => println!("fold_log10_alpha = none"),
    }
    if let Some(log10_eta) = eta {
        let slice = alpha_slice(&rows, log10_eta);
        if let Some(first) = slice.first() {
            println!("# alpha slice at log10_eta = {}", first.log10_eta);
        }
        println!("log10_alpha,eval_acc,train_acc,consistency,diverged,frozen");
        for r in slice {
            println!(
                "{},{},{},{},{},{}",
                r.log10_alpha, r.eval_acc, r.train_acc, r.consistency, r.diverged, r.frozen
            );
        }
    }
    Ok(())
}
