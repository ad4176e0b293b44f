//! `adaloss` command-line driver: data generation, training, sweeps,
//! scheduler replay, filter smoothness and evaluation.

use std::fs;
use std::path::{Path, PathBuf};

use adaloss::datagen::{export_dataset, generate_split, load_dataset, Split};
use adaloss::harness::{evaluate, sweep, EvalSettings, RunConfig, RunStatus, SweepConfig, Trainer};
use adaloss::nn::load_network;
use adaloss::ntv::ntv_network;
use adaloss::scheduler::{replay, LossTable, SchedulerConfig};
use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "adaloss", version, about = "Adaptive target-variance heatmap training")]
struct Cli {
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate train/val/test splits described by a run config.
    GenData { config: PathBuf },
    /// Train one model.
    Train {
        config: PathBuf,
        /// Continue from the checkpoint and run log already in the output directory.
        #[arg(long)]
        resume: bool,
    },
    /// Run a grid of configs.
    Sweep { config: PathBuf },
    /// Replay the sigma schedule for a table of per-landmark epoch losses.
    Replay {
        losses: PathBuf,
        /// Initial sigma (min(H, W) / 4 for the images the losses came from).
        #[arg(long, default_value_t = 16.0)]
        sigma0: f64,
        /// Scheduler config JSON; defaults are used when absent.
        #[arg(long)]
        scheduler: Option<PathBuf>,
    },
    /// Normalized total variation of every spatial conv filter in a model.
    Ntv { model: PathBuf },
    /// Evaluate a model on an exported dataset directory.
    Eval {
        model: PathBuf,
        dataset: PathBuf,
        /// Run config supplying decode settings and eye landmarks.
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)?)
        .with_context(|| format!("writing {}", path.display()))
}

fn out_dir(cli_out: Option<PathBuf>, fallback: Option<PathBuf>) -> Result<PathBuf> {
    let dir = match cli_out.or(fallback) {
        Some(d) => d,
        None => bail!("no output directory: pass --out DIR"),
    };
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir)
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match cli.command {
        Command::GenData { config } => {
            let cfg: RunConfig = read_json(&config)?;
            cfg.validate()?;
            let out = out_dir(cli.out, cfg.output_dir.clone())?;
            for (split, n, name) in [
                (Split::Train, cfg.train_samples, "train"),
                (Split::Validation, cfg.val_samples, "val"),
                (Split::Test, cfg.test_samples, "test"),
            ] {
                let samples = generate_split(&cfg.dataset, split, n)?;
                export_dataset(&samples, &out.join(name))?;
            }
            write_json(&out.join("dataset.json"), &cfg.dataset)?;
            log::info!("wrote dataset to {}", out.display());
        }
        Command::Train { config, resume } => {
            let cfg: RunConfig = read_json(&config)?;
            let out = out_dir(cli.out, cfg.output_dir.clone())?;
            let mut trainer = if resume {
                Trainer::resume(cfg, &out)?
            } else {
                Trainer::new(cfg)?
            };
            trainer.run()?;
            let output = trainer.finish()?;
            output.write(&out)?;
            match output.log.status {
                RunStatus::Completed => log::info!(
                    "completed {} epochs, final validation error {:?}",
                    output.log.rows.len(),
                    output.log.final_val_error()
                ),
                RunStatus::Diverged => {
                    log::warn!("run diverged at epoch {:?}", output.log.diverged_at)
                }
            }
        }
        Command::Sweep { config } => {
            let cfg: SweepConfig = read_json(&config)?;
            let out = out_dir(cli.out, None)?;
            let table = sweep(&cfg, Some(&out))?;
            write_json(&out.join("summary.json"), &table)?;
            for row in &table.rows {
                println!(
                    "{:>3} {:<40} {:>10} final={:?} epochs_to_target={:?}",
                    row.cell,
                    row.label,
                    match row.status {
                        Some(RunStatus::Completed) => "COMPLETED",
                        Some(RunStatus::Diverged) => "DIVERGED",
                        None => "FAILED",
                    },
                    row.final_val_error,
                    row.epochs_to_target
                );
            }
        }
        Command::Replay { losses, sigma0, scheduler } => {
            let cfg: SchedulerConfig = match scheduler {
                Some(p) => read_json(&p)?,
                None => SchedulerConfig::default(),
            };
            let file = fs::File::open(&losses).with_context(|| format!("opening {}", losses.display()))?;
            let table = LossTable::read_csv(file)?;
            let trajectory = replay(&table, &cfg, sigma0)?;
            let out = out_dir(cli.out, None)?;
            let path = out.join("sigmas.csv");
            let file = fs::File::create(&path).with_context(|| format!("creating {}", path.display()))?;
            trajectory.write_csv(file)?;
            println!("final sigmas: {:?}", trajectory.next);
        }
        Command::Ntv { model } => {
            let net = load_network(&model)?;
            let report = ntv_network(&net)?;
            if let Some(out) = cli.out {
                fs::create_dir_all(&out)?;
                write_json(&out.join("ntv.json"), &report)?;
            }
            for layer in &report.layers {
                println!("{:<24} {:>4} filters  mean NTV {:.6}", layer.name, layer.filters, layer.mean);
            }
            println!("all layers {:.6}  last layer {:.6}", report.all, report.last);
        }
        Command::Eval { model, dataset, config } => {
            let net = load_network(&model)?;
            let samples = load_dataset(&dataset)?;
            let settings = match config {
                Some(p) => EvalSettings::from_config(&read_json::<RunConfig>(&p)?),
                None => EvalSettings {
                    multi_instance: samples.iter().any(|s| s.truth.landmarks.iter().any(|l| l.len() != 1)),
                    decode: Default::default(),
                    eye_landmarks: None,
                },
            };
            let report = evaluate(&net, &samples, &settings)?;
            if let Some(out) = cli.out {
                fs::create_dir_all(&out)?;
                write_json(&out.join("metrics.json"), &report)?;
            }
            println!("{}", serde_json::to_string_pretty(&report.aggregate)?);
        }
    }
    Ok(())
}
