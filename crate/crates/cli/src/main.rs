use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use asif::analysis::{feature_pruning_curve, identity_probe, LinearFitConfig, ProbeConfig, PruneConfig, PruneSchedule};
use asif::harness::{
    load_datasets, prepare_training_set, read_features, read_losses, run_experiment, Checkpoint, ExperimentConfig,
};
use asif::model::{evaluate_macro_f1, LabelSource};
use asif::noise::{detect_noisy, detection_metrics, NoiseLedger};
use clap::{Parser, Subcommand};
use serde_json::json;

#[derive(Parser)]
#[command(name = "asif", version, about = "Adversarial suppression of identity features")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct RunArgs {
    /// Experiment config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
}

impl RunArgs {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut c = match &self.config {
            Some(p) => ExperimentConfig::load(p).with_context(|| format!("loading {}", p.display()))?,
            None => ExperimentConfig::default(),
        };
        if let Some(s) = self.seed {
            c.seed = s;
        }
        Ok(c)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train and evaluate, writing metrics, report, checkpoint and features.
    Train {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        repeats: Option<usize>,
    },
    /// Write the noisy training set and its ledger.
    InjectNoise {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Flag the highest-loss samples and score them against a ledger.
    Detect {
        /// CSV of `sample_id,loss`.
        #[arg(long)]
        losses: PathBuf,
        #[arg(long)]
        ledger: PathBuf,
        #[arg(long)]
        eta: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Identity probe on frozen features.
    Probe {
        /// CSV of `sample_id,f0,...`.
        #[arg(long)]
        features: PathBuf,
        #[arg(long, default_value_t = 10)]
        patience: usize,
        #[arg(long, default_value_t = 500)]
        max_epochs: usize,
        #[arg(long, default_value_t = 0.1)]
        lr: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Accuracy curve while pruning the least important feature dims.
    Prune {
        #[arg(long)]
        features: PathBuf,
        /// Ledger giving the observed training labels.
        #[arg(long)]
        ledger: PathBuf,
        #[arg(long, requires = "eval_ledger")]
        eval_features: Option<PathBuf>,
        /// Ledger giving the true evaluation labels.
        #[arg(long, requires = "eval_features")]
        eval_ledger: Option<PathBuf>,
        #[arg(long, default_value_t = 0.1)]
        fraction: f64,
        #[arg(long, default_value_t = 100)]
        epochs: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Recompute train and test macro-F1 from a saved checkpoint.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
    },
}

fn emit(value: &serde_json::Value, out: Option<&Path>) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    match out {
        Some(p) => std::fs::write(p, text + "\n").with_context(|| format!("writing {}", p.display()))?,
        None => println!("{text}"),
    }
    Ok(())
}

fn labelled(
    features: &BTreeMap<usize, Vec<f64>>,
    ledger: &NoiseLedger,
    observed: bool,
) -> Result<(Vec<Vec<f64>>, Vec<usize>)> {
    let labels: BTreeMap<usize, usize> = ledger
        .entries
        .iter()
        .map(|e| (e.sample_id, if observed { e.observed_label } else { e.true_label }))
        .collect();
    let mut x = Vec::with_capacity(features.len());
    let mut y = Vec::with_capacity(features.len());
    for (id, f) in features {
        let Some(&l) = labels.get(id) else {
            bail!("sample {id} has features but no ledger entry");
        };
        x.push(f.clone());
        y.push(l);
    }
    Ok((x, y))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train { run, out, repeats } => {
            let mut config = run.load()?;
            if let Some(r) = repeats {
                config.repeats = r;
            }
            let (_, summary) = run_experiment(&config, Some(&out))?;
            emit(&serde_json::to_value(summary)?, None)
        }
        Command::InjectNoise { run, out } => {
            let config = run.load()?;
            let (full, _) = load_datasets(&config)?;
            let (train, ledger) = prepare_training_set(&config, &full)?;
            std::fs::create_dir_all(&out)?;
            ledger.write(out.join("ledger.csv"))?;
            asif::data::save_csv(&train, out.join("train.csv"))?;
            emit(
                &json!({"samples": ledger.len(), "flipped": ledger.flipped_count()}),
                None,
            )
        }
        Command::Detect {
            losses,
            ledger,
            eta,
            out,
        } => {
            let losses = read_losses(&losses)?;
            let ledger = NoiseLedger::read(&ledger)?;
            let flagged = detect_noisy(&losses, eta)?;
            let scores = detection_metrics(&flagged, &ledger)?;
            emit(&json!({"flagged": flagged, "scores": scores}), out.as_deref())
        }
        Command::Probe {
            features,
            patience,
            max_epochs,
            lr,
            seed,
            out,
        } => {
            let features = read_features(&features)?;
            let config = ProbeConfig {
                fit: LinearFitConfig {
                    lr,
                    patience,
                    max_epochs,
                    seed,
                    ..LinearFitConfig::default()
                },
            };
            emit(
                &serde_json::to_value(identity_probe(&features, &config)?)?,
                out.as_deref(),
            )
        }
        Command::Prune {
            features,
            ledger,
            eval_features,
            eval_ledger,
            fraction,
            epochs,
            seed,
            out,
        } => {
            let ledger = NoiseLedger::read(&ledger)?;
            let (x, y) = labelled(&read_features(&features)?, &ledger, true)?;
            let eval = match (eval_features, eval_ledger) {
                (Some(f), Some(l)) => Some(labelled(&read_features(&f)?, &NoiseLedger::read(&l)?, false)?),
                _ => None,
            };
            let classes = y
                .iter()
                .chain(eval.iter().flat_map(|(_, ey)| ey))
                .max()
                .map_or(0, |m| m + 1);
            let base = PruneConfig::default();
            let config = PruneConfig {
                schedule: PruneSchedule::Fraction(fraction),
                fit: LinearFitConfig {
                    max_epochs: epochs,
                    seed,
                    ..base.fit
                },
            };
            let curve = feature_pruning_curve(
                &x,
                &y,
                classes,
                eval.as_ref().map(|(ex, ey)| (ex.as_slice(), ey.as_slice())),
                &config,
            )?;
            emit(&serde_json::to_value(curve)?, out.as_deref())
        }
        Command::Eval { checkpoint } => {
            let ckpt = Checkpoint::load(&checkpoint)?;
            let mut model = ckpt.model()?;
            let (full, test) = load_datasets(&ckpt.experiment)?;
            let (train, _) = prepare_training_set(&ckpt.experiment, &full)?;
            let train_f1 = evaluate_macro_f1(&mut model, &train, LabelSource::Observed)?;
            let test_f1 = evaluate_macro_f1(&mut model, &test, LabelSource::True)?;
            emit(
                &json!({"epoch": ckpt.epoch, "train_macro_f1": train_f1, "test_macro_f1": test_f1}),
                None,
            )
        }
    }
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().filter_or("ASIF_LOG_LEVEL", "warn")).init();
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
