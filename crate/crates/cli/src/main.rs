use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use acdgcl_core::diagnostics::gradcheck_losses;
use acdgcl_core::diff::GradCheckConfig;
use acdgcl_core::eval::{
    ablation_csv, evaluate_params, run_ablation, run_robustness_sweep, sweep_csv, EvalReport,
    SweepAxis, SweepMode,
};
use acdgcl_core::train::{EvalConfig, TrainConfig};
use acdgcl_core::{load_checkpoint, parse_tu_dataset, train, GraphDataset};

#[derive(Parser)]
#[command(name = "acdgcl", version, about = "Adversarial disentangled graph contrastive learning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct DataArgs {
    /// Dataset directory, or a root that contains `<dataset>/`.
    #[arg(long, env = "ACDGCL_DATA_DIR")]
    data: PathBuf,
    /// Subdirectory used when `--data` points at a root.
    #[arg(long, default_value = "MUTAG")]
    dataset: String,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write metrics.csv and checkpoint.json.
    Train {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Linear-probe a checkpoint with k-fold cross-validation.
    Eval {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 10)]
        folds: usize,
        /// Number of fold-split seeds, starting at 0.
        #[arg(long, default_value_t = 5)]
        seeds: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train and probe the full model and its three ablations.
    Ablate {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Probe accuracy as one hyperparameter varies.
    Sweep {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        axis: String,
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Perturb inputs of base-config models instead of retraining.
        #[arg(long)]
        reevaluate: bool,
    },
    /// Compare analytic and finite-difference gradients of every loss term.
    Gradcheck {
        #[arg(long, default_value_t = 1e-5)]
        tol: f64,
        #[arg(long, default_value_t = 100)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn load_dataset(args: &DataArgs) -> Result<GraphDataset> {
    let has_tu_files = fs::read_dir(&args.data)
        .with_context(|| format!("reading {}", args.data.display()))?
        .filter_map(|e| e.ok())
        .any(|e| e.file_name().to_string_lossy().ends_with("_graph_indicator.txt"));
    let dir = if has_tu_files {
        args.data.clone()
    } else {
        args.data.join(&args.dataset)
    };
    parse_tu_dataset(&dir).with_context(|| format!("loading dataset from {}", dir.display()))
}

fn load_config(path: Option<&Path>) -> Result<TrainConfig> {
    match path {
        Some(p) => Ok(TrainConfig::load(p)?),
        None => Ok(TrainConfig::default()),
    }
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn report_json(report: &EvalReport) -> Result<String> {
    Ok(serde_json::to_string_pretty(report)? + "\n")
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Train {
            data,
            config,
            out,
            seed,
        } => {
            let dataset = load_dataset(&data)?;
            let mut cfg = load_config(config.as_deref())?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let run = train(&cfg, &dataset)?;
            run.write(&out)?;
            if let Some(last) = run.history.last() {
                println!(
                    "epoch {} total {:.6} (l_inv {:.6}, l_recon {:.6}, l_adv {:.6})",
                    last.epoch, last.losses.total, last.losses.l_inv, last.losses.l_recon, last.losses.l_adv
                );
            }
            println!("wrote {}", out.display());
        }
        Command::Eval {
            data,
            checkpoint,
            folds,
            seeds,
            out,
        } => {
            let dataset = load_dataset(&data)?;
            let params = load_checkpoint(&checkpoint)?;
            let eval = EvalConfig {
                folds,
                seeds: (0..seeds).collect(),
            };
            let report = evaluate_params(&params, &dataset, &eval, &TrainConfig::default().probe)?;
            write(&out, &report.folds_csv())?;
            write(&out.with_extension("json"), &report_json(&report)?)?;
            println!("accuracy {:.4} ± {:.4}", report.mean, report.std);
        }
        Command::Ablate { data, config, out } => {
            let dataset = load_dataset(&data)?;
            let cfg = load_config(config.as_deref())?;
            let results = run_ablation(&cfg, &dataset)?;
            for r in &results {
                let dir = out.join(r.variant.name());
                for run in &r.evaluation.runs {
                    write(&dir.join(format!("metrics_seed{}.csv", run.config.seed)), &run.metrics_csv())?;
                }
                write(&dir.join("report.json"), &report_json(&r.evaluation.report)?)?;
                println!("{:<14} {:.4} ± {:.4}", r.variant.name(), r.evaluation.report.mean, r.evaluation.report.std);
            }
            write(&out.join("ablation.csv"), &ablation_csv(&results))?;
        }
        Command::Sweep {
            data,
            axis,
            values,
            config,
            out,
            reevaluate,
        } => {
            let axis: SweepAxis = axis.parse()?;
            let dataset = load_dataset(&data)?;
            let cfg = load_config(config.as_deref())?;
            let mode = if reevaluate {
                SweepMode::Reevaluate
            } else {
                SweepMode::Retrain
            };
            let rows = run_robustness_sweep(&cfg, &dataset, axis, &values, mode)?;
            write(&out, &sweep_csv(axis, &rows))?;
            for r in &rows {
                println!("{axis}={} {:.4} ± {:.4}", r.value, r.report.mean, r.report.std);
            }
        }
        Command::Gradcheck { tol, samples, seed } => {
            if samples == 0 {
                bail!("--samples must be positive");
            }
            let cfg = GradCheckConfig {
                tol,
                samples,
                seed,
                ..GradCheckConfig::default()
            };
            let mut ok = true;
            for r in gradcheck_losses(&cfg)? {
                ok &= r.report.passed;
                println!(
                    "{:<8} {} checked {:>4} max_rel_error {:.3e}",
                    r.term.name(),
                    if r.report.passed { "PASS" } else { "FAIL" },
                    r.report.checked,
                    r.report.max_rel_error
                );
            }
            return Ok(ok);
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
