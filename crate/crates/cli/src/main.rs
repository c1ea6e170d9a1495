mod commands;
mod config;
mod error;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::{Method, RunConfig};
use error::CliError;

#[derive(Debug, Parser)]
#[command(
    name = "aeric",
    version,
    about = "Same-pass hidden-state safety monitor"
)]
struct Cli {
    /// JSON run configuration; flags override its fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Directory for the text report and its JSON twin.
    #[arg(long, global = true)]
    reports: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct DatasetArg {
    /// Trace container.
    #[arg(long)]
    dataset: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ArtifactArg {
    /// Monitor artifact.
    #[arg(long)]
    artifact: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate the planted-signal synthetic dataset and its ground-truth sidecar.
    GenSynth {
        #[arg(long)]
        out: Option<PathBuf>,
        /// Ground-truth JSON (defaults to `<out>.truth.json`).
        #[arg(long)]
        truth: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        d: Option<usize>,
        #[arg(long)]
        drift_scale: Option<f64>,
    },
    /// Fit the projection and standardization statistics on the train split.
    FitFeatures {
        #[command(flatten)]
        dataset: DatasetArg,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long, value_enum)]
        method: Option<Method>,
        #[arg(long)]
        projection_seed: Option<u64>,
    },
    /// Train the hazard and support heads and one residual head per tail fraction.
    Train {
        #[command(flatten)]
        dataset: DatasetArg,
        /// Artifact from `fit-features`.
        #[arg(long)]
        features: Option<PathBuf>,
        /// Output directory for the per-tail-fraction artifacts.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        c: Option<f64>,
        #[arg(long)]
        horizon: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Pick (alpha, beta, rho) by dev-split terminal-EMA AUROC.
    GridSelect {
        #[command(flatten)]
        dataset: DatasetArg,
        /// Directory written by `train`.
        #[arg(long)]
        heads: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        lambda: Option<f64>,
    },
    /// Choose the trigger threshold on the calibration split.
    Calibrate {
        #[command(flatten)]
        dataset: DatasetArg,
        #[command(flatten)]
        artifact: ArtifactArg,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        budget: Option<f64>,
        #[arg(long)]
        window: Option<usize>,
        #[arg(long, default_value = "cal")]
        split: String,
    },
    /// Stream framed hidden states from stdin; first frame is the prompt summary.
    Score {
        #[command(flatten)]
        artifact: ArtifactArg,
        /// Override the artifact's threshold.
        #[arg(long)]
        threshold: Option<f64>,
    },
    /// Ranking and trigger reports for the three score ablations.
    Eval {
        #[command(flatten)]
        dataset: DatasetArg,
        #[command(flatten)]
        artifact: ArtifactArg,
        #[arg(long, default_value = "test")]
        split: String,
        #[arg(long)]
        n_boot: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Restrict to one ablation (future-only, future-support, full).
        #[arg(long)]
        mode: Option<String>,
    },
    /// Terminal-EMA AUROC across EMA coefficients.
    SweepLambda {
        #[command(flatten)]
        dataset: DatasetArg,
        #[command(flatten)]
        artifact: ArtifactArg,
        #[arg(long, default_value = "test")]
        split: String,
        /// Comma-separated coefficients.
        #[arg(long, value_delimiter = ',')]
        lambdas: Option<Vec<f64>>,
    },
    /// Monitored vs no-op replay latency.
    Bench {
        #[command(flatten)]
        dataset: DatasetArg,
        #[command(flatten)]
        artifact: ArtifactArg,
        #[arg(long, default_value = "test")]
        split: String,
        #[arg(long)]
        reps: Option<usize>,
        #[arg(long)]
        warmup: Option<usize>,
        /// Time the no-op path against itself.
        #[arg(long)]
        self_check: bool,
    },
    /// Print artifact metadata and parameter accounting.
    Inspect {
        #[command(flatten)]
        artifact: ArtifactArg,
    },
    /// Check a dataset (or artifact) and list every violation.
    Validate {
        #[command(flatten)]
        dataset: DatasetArg,
        #[command(flatten)]
        artifact: ArtifactArg,
    },
}

fn set<T>(slot: &mut T, flag: Option<T>) {
    if let Some(v) = flag {
        *slot = v;
    }
}

fn set_path(slot: &mut Option<PathBuf>, flag: Option<PathBuf>) {
    if flag.is_some() {
        *slot = flag;
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    set_path(&mut cfg.paths.reports, cli.reports);
    let p = &mut cfg.paths;
    match cli.command {
        Command::GenSynth {
            out,
            truth,
            seed,
            d,
            drift_scale,
        } => {
            set_path(&mut p.out, out);
            set(&mut cfg.synth.master_seed, seed);
            set(&mut cfg.synth.d, d);
            set(&mut cfg.synth.drift_scale, drift_scale);
            cfg.validate()?;
            commands::gen_synth(&cfg, truth)
        }
        Command::FitFeatures {
            dataset,
            out,
            k,
            method,
            projection_seed,
        } => {
            set_path(&mut p.dataset, dataset.dataset);
            set_path(&mut p.out, out);
            set(&mut cfg.featurize.k, k);
            set(&mut cfg.featurize.method, method);
            set(&mut cfg.featurize.seed, projection_seed);
            cfg.validate()?;
            commands::fit_features(&cfg)
        }
        Command::Train {
            dataset,
            features,
            out,
            c,
            horizon,
            seed,
        } => {
            set_path(&mut p.dataset, dataset.dataset);
            set_path(&mut p.artifact, features);
            set_path(&mut p.heads, out);
            set(&mut cfg.train.c, c);
            set(&mut cfg.train.horizon, horizon);
            set(&mut cfg.train.seed, seed);
            cfg.validate()?;
            commands::train(&cfg)
        }
        Command::GridSelect {
            dataset,
            heads,
            out,
            lambda,
        } => {
            set_path(&mut p.dataset, dataset.dataset);
            set_path(&mut p.heads, heads);
            set_path(&mut p.out, out);
            set(&mut cfg.lambda, lambda);
            cfg.validate()?;
            commands::grid_select(&cfg)
        }
        Command::Calibrate {
            dataset,
            artifact,
            out,
            budget,
            window,
            split,
        } => {
            set_path(&mut p.dataset, dataset.dataset);
            set_path(&mut p.artifact, artifact.artifact);
            set_path(&mut p.out, out);
            set(&mut cfg.calibration.budget, budget);
            set(&mut cfg.calibration.window, window);
            cfg.validate()?;
            commands::calibrate(&cfg, commands::parse_split(&split)?)
        }
        Command::Score {
            artifact,
            threshold,
        } => {
            set_path(&mut p.artifact, artifact.artifact);
            cfg.validate()?;
            commands::score(&cfg, threshold)
        }
        Command::Eval {
            dataset,
            artifact,
            split,
            n_boot,
            seed,
            mode,
        } => {
            set_path(&mut p.dataset, dataset.dataset);
            set_path(&mut p.artifact, artifact.artifact);
            set(&mut cfg.eval.n_boot, n_boot);
            set(&mut cfg.eval.seed, seed);
            cfg.validate()?;
            let mode = mode
                .map(|m| m.parse().map_err(CliError::Config))
                .transpose()?;
            commands::eval(&cfg, commands::parse_split(&split)?, mode)
        }
        Command::SweepLambda {
            dataset,
            artifact,
            split,
            lambdas,
        } => {
            set_path(&mut p.dataset, dataset.dataset);
            set_path(&mut p.artifact, artifact.artifact);
            set(&mut cfg.grids.lambda_set, lambdas);
            cfg.validate()?;
            commands::sweep_lambda(&cfg, commands::parse_split(&split)?)
        }
        Command::Bench {
            dataset,
            artifact,
            split,
            reps,
            warmup,
            self_check,
        } => {
            set_path(&mut p.dataset, dataset.dataset);
            set_path(&mut p.artifact, artifact.artifact);
            set(&mut cfg.bench.reps, reps);
            set(&mut cfg.bench.warmup, warmup);
            cfg.bench.self_check |= self_check;
            cfg.validate()?;
            commands::bench(&cfg, commands::parse_split(&split)?)
        }
        Command::Inspect { artifact } => {
            set_path(&mut p.artifact, artifact.artifact);
            commands::inspect(&cfg)
        }
        Command::Validate { dataset, artifact } => {
            set_path(&mut p.dataset, dataset.dataset);
            set_path(&mut p.artifact, artifact.artifact);
            commands::validate(&cfg)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => {
                    ExitCode::SUCCESS
                }
                _ => ExitCode::from(3),
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("aeric: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
