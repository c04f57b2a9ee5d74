use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use ebm_anomaly::config::RunConfig;
use ebm_anomaly::pipeline::{self, MODEL_FILE, STATS_FILE};
use ebm_anomaly::EbmError;

#[derive(Parser)]
#[command(
    name = "ebm-anomaly",
    version,
    about = "Energy-based anomaly detection and localization"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML run configuration; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides every seed in the configuration.
    #[arg(long)]
    seed: Option<u64>,
    /// Directory receiving this command's artifacts.
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
    /// Overrides `data.root`.
    #[arg(long)]
    data_root: Option<PathBuf>,
    /// Overrides `data.category`.
    #[arg(long)]
    category: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Train an energy model on `train/good`.
    Train {
        #[command(flatten)]
        common: Common,
        /// Print a progress line every N iterations (0 = silent).
        #[arg(long, default_value_t = 10)]
        progress: usize,
    },
    /// Fit per-pixel gradient statistics on the training split.
    FitStats {
        #[command(flatten)]
        common: Common,
        /// Checkpoint; defaults to `<out-dir>/model.ckpt`.
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Score the test split: maps, heatmaps and image scores.
    Score {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: Option<PathBuf>,
        /// Statistics; defaults to `<out-dir>/stats.bin`.
        #[arg(long)]
        stats: Option<PathBuf>,
    },
    /// AUROC tables, ROC curves and histograms for a score directory.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Output of `score`; defaults to `<out-dir>`.
        #[arg(long)]
        scores: Option<PathBuf>,
    },
    /// Generate the synthetic dataset under `<out-dir>/<category>`.
    Synth {
        #[command(flatten)]
        common: Common,
    },
    /// Raw-vs-standardized comparison over one or more eval outputs.
    Report {
        #[command(flatten)]
        common: Common,
        /// `eval.json` files or directories holding one; defaults to `<out-dir>`.
        #[arg(long = "eval", num_args = 1..)]
        evals: Vec<PathBuf>,
    },
}

#[derive(Serialize)]
struct ErrorLine<'a> {
    status: &'static str,
    kind: &'a str,
    message: String,
}

fn resolve(common: &Common) -> Result<RunConfig, EbmError> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.set_seed(seed);
    }
    if let Some(root) = &common.data_root {
        cfg.data.root = root.clone();
    }
    if let Some(category) = &common.category {
        cfg.data.category = category.clone();
        cfg.synth.category = category.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn or_default(path: &Option<PathBuf>, dir: &Path, name: &str) -> PathBuf {
    path.clone().unwrap_or_else(|| dir.join(name))
}

fn emit<T: Serialize>(value: &T) -> Result<(), EbmError> {
    println!(
        "{}",
        serde_json::to_string(value).expect("summary serializes")
    );
    Ok(())
}

fn run(command: Command) -> Result<(), EbmError> {
    match command {
        Command::Train { common, progress } => {
            let cfg = resolve(&common)?;
            let summary = pipeline::run_train(&cfg, &common.out_dir, &mut |r| {
                if progress > 0 && r.iteration % progress == 0 {
                    eprintln!(
                        "iter {:>6}  E+ {:>10.4}  E- {:>10.4}  |g| {:>9.3}  {:>7.1}s",
                        r.iteration, r.pos_energy, r.neg_energy, r.grad_norm, r.seconds
                    );
                }
            })?;
            emit(&summary)
        }
        Command::FitStats { common, model } => {
            let cfg = resolve(&common)?;
            let model = or_default(&model, &common.out_dir, MODEL_FILE);
            emit(&pipeline::run_fit_stats(&cfg, &model, &common.out_dir)?)
        }
        Command::Score {
            common,
            model,
            stats,
        } => {
            let cfg = resolve(&common)?;
            let model = or_default(&model, &common.out_dir, MODEL_FILE);
            let stats = or_default(&stats, &common.out_dir, STATS_FILE);
            let index = pipeline::run_score(&cfg, &model, &stats, &common.out_dir)?;
            emit(&serde_json::json!({
                "category": index.category,
                "images": index.images.len(),
                "index": common.out_dir.join(pipeline::INDEX_FILE),
            }))
        }
        Command::Eval { common, scores } => {
            let cfg = resolve(&common)?;
            let scores = scores.unwrap_or_else(|| common.out_dir.clone());
            emit(&pipeline::run_eval(&cfg, &scores, &common.out_dir)?)
        }
        Command::Synth { common } => {
            let cfg = resolve(&common)?;
            emit(&pipeline::run_synth(&cfg, &common.out_dir)?)
        }
        Command::Report { common, evals } => {
            resolve(&common)?;
            let evals = if evals.is_empty() {
                vec![common.out_dir.clone()]
            } else {
                evals
            };
            let report = pipeline::run_report(&evals, &common.out_dir)?;
            emit(&report.detection)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let line = ErrorLine {
                status: "error",
                kind: e.kind(),
                message: e.to_string(),
            };
            eprintln!(
                "{}",
                serde_json::to_string(&line).expect("error serializes")
            );
            ExitCode::FAILURE
        }
    }
}
