//! `pptv`: generate planted-signal data, train the regressor, explain it
//! and validate the explanation by retraining.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand};

use crate::config::{keys_help, RunConfig};

#[derive(Parser)]
#[command(name = "pptv", version, about = "PPTV attribution for gridded index regressors")]
struct Cli {
    /// Worker threads for per-sample work (default: all cores). Outputs do
    /// not depend on this value.
    #[arg(long, global = true)]
    workers: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset and its driver-region sidecar.
    GenData(GenDataArgs),
    /// Train a model for one lead and write a checkpoint and report.
    Train(TrainArgs),
    /// Compute a saliency map and export CSV and PGM files.
    Explain(ExplainArgs),
    /// Retrain on the thresholded saliency region and compare skill.
    Validate(ValidateArgs),
    /// Reduce saliency files: seasonal groups, lead sweeps, zonal or meridional means.
    Analyze(AnalyzeArgs),
}

#[derive(Args)]
struct GenDataArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: u64,
    /// Dataset file to write; the driver mask goes to `<out>.truth.csv`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    data: Option<PathBuf>,
    /// Lead in months, 1..=23 (default: model.lead_months).
    #[arg(long)]
    lead: Option<u32>,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out_model: Option<PathBuf>,
}

#[derive(Args)]
struct ExplainArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    data: Option<PathBuf>,
    /// pptv | perturbation | vbp | gradcam
    #[arg(long)]
    method: Option<String>,
    /// mean | per
    #[arg(long)]
    channels: Option<String>,
    /// Output prefix: writes `<out>.csv` and `<out>.pgm` or `<out>_<channel>.pgm`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ValidateArgs {
    /// Run configuration providing the model and training settings.
    #[arg(long, alias = "config")]
    model_config: Option<PathBuf>,
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    saliency: Option<PathBuf>,
    /// Keep cells with normalized saliency at least this value (default: attribution.threshold).
    #[arg(long)]
    threshold: Option<f64>,
    #[arg(long)]
    lead: Option<u32>,
    #[arg(long)]
    seed: u64,
    /// Paired skill CSV (default: next to the saliency file).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct AnalyzeArgs {
    #[arg(long)]
    saliency_dir: PathBuf,
    /// seasonal | lead-sweep | zonal | meridional
    #[arg(long)]
    mode: String,
    /// Output directory (default: the saliency directory).
    #[arg(long)]
    out: Option<PathBuf>,
}

fn load_config(path: &Option<PathBuf>) -> pptv::Result<RunConfig> {
    match path {
        Some(p) => RunConfig::load(p),
        None => Ok(RunConfig::default()),
    }
}

fn run(cli: Cli) -> pptv::Result<()> {
    match cli.command {
        Command::GenData(a) => {
            let cfg = load_config(&a.config)?;
            let out = commands::need(a.out, &cfg.paths.out, "--out")?;
            commands::gen_data(&cfg, a.seed, &out)
        }
        Command::Train(a) => {
            let cfg = load_config(&a.config)?;
            let data = commands::need(a.data, &cfg.paths.data, "--data")?;
            let out = commands::need(a.out_model, &cfg.paths.model, "--out-model")?;
            commands::train(&cfg, &data, a.lead, a.seed, &out)
        }
        Command::Explain(a) => {
            let mut cfg = load_config(&a.config)?;
            if let Some(m) = a.method {
                cfg.attribution.method = m.parse()?;
            }
            if let Some(c) = a.channels {
                cfg.attribution.channels = c.parse()?;
            }
            let model = commands::need(a.model, &cfg.paths.model, "--model")?;
            let data = commands::need(a.data, &cfg.paths.data, "--data")?;
            let out = commands::need(a.out, &cfg.paths.saliency, "--out")?;
            commands::explain(&cfg, &model, &data, &out)
        }
        Command::Validate(a) => {
            let cfg = load_config(&a.model_config)?;
            let data = commands::need(a.data, &cfg.paths.data, "--data")?;
            let saliency = commands::need(a.saliency, &cfg.paths.saliency, "--saliency")?;
            let tau = a.threshold.unwrap_or(cfg.attribution.threshold);
            commands::validate(&cfg, &data, &saliency, tau, a.lead, a.seed, a.out.as_deref())
        }
        Command::Analyze(a) => {
            let out = a.out.unwrap_or_else(|| a.saliency_dir.clone());
            commands::analyze(&a.saliency_dir, &a.mode, &out)
        }
    }
}

fn main() -> ExitCode {
    let keys = keys_help();
    let mut command = Cli::command().after_long_help(keys.clone());
    let names: Vec<String> = command.get_subcommands().map(|c| c.get_name().to_string()).collect();
    for name in names {
        command = command.mut_subcommand(name, |c| c.after_long_help(keys.clone()));
    }
    let matches = command
        .after_help("Use --help to list every configuration key and its default.")
        .get_matches();
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(cli) => cli,
        Err(e) => e.exit(),
    };
    let result = match cli.workers {
        Some(n) => pptv::par::with_workers(n, || run(cli)),
        None => run(cli),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(commands::exit_code(&e))
        }
    }
}
