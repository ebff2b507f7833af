use std::fs::File;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use legodom::eval::analysis::{embed_sessions, online_history, residual_history, residual_history_csv};
use legodom::eval::scenario::{read_estimates, run_scenario, write_estimates};
use legodom::eval::evaluate;
use legodom::graph::keyframe::keyframes;
use legodom::graph::methods::{MethodRegistry, MethodResources};
use legodom::graph::smoother::SmootherConfig;
use legodom::nn::window::FrameEncoder;
use legodom::nn::ModelBlob;
use legodom::sim::{load_frames, save_frames, simulate, ScenarioConfig, SimFrame};
use legodom::train::{train_offline, SequenceData, TrainConfig};

/// LiDAR-IMU-leg odometry with an online-learned neural leg model.
#[derive(Parser)]
#[command(name = "legodom", version)]
struct Cli {
    /// Seed for every random draw of the command.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a scenario into a frame JSONL stream.
    Simulate {
        /// Built-in scenario: nominal, challenge or walk.
        #[arg(long, default_value = "nominal", conflicts_with = "config")]
        preset: String,
        /// Scenario file (TOML, or JSON by extension). Its seed is replaced by --seed.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Overrides the scenario duration (s).
        #[arg(long)]
        duration: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the leg network offline.
    TrainOffline {
        #[arg(long)]
        out: PathBuf,
        /// Training config (TOML, or JSON by extension).
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
        /// Train without torque and foot-force inputs.
        #[arg(long)]
        no_tactile: bool,
        /// Directory of recorded frame streams (`*.jsonl`, one sequence each);
        /// the built-in training set is simulated when absent.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Duration of each simulated training sequence (s).
        #[arg(long, default_value_t = 120.0)]
        duration: f64,
        /// Training report JSON.
        #[arg(long)]
        report: Option<PathBuf>,
        /// Per-epoch loss CSV.
        #[arg(long)]
        loss_csv: Option<PathBuf>,
    },
    /// Run one odometry method over a frame stream.
    Run {
        #[arg(long)]
        frames: PathBuf,
        #[arg(long, default_value = "ours")]
        method: String,
        /// Model trained with tactile inputs.
        #[arg(long)]
        model: Option<PathBuf>,
        /// Model trained without tactile inputs.
        #[arg(long)]
        no_tactile_model: Option<PathBuf>,
        /// Smoother config (TOML, or JSON by extension).
        #[arg(long)]
        config: Option<PathBuf>,
        /// Estimates JSONL.
        #[arg(long)]
        out: PathBuf,
        /// Metrics report JSON; printed to stdout when absent.
        #[arg(long)]
        metrics: Option<PathBuf>,
    },
    /// Compute ATE and RTE of an estimate stream.
    Metrics {
        #[arg(long)]
        frames: PathBuf,
        #[arg(long)]
        estimates: PathBuf,
        #[arg(long, default_value = "unknown")]
        method: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Embed online-parameter histories of one or more runs in 2-D.
    Embed {
        #[arg(long, num_args = 1.., required = true)]
        estimates: Vec<PathBuf>,
        /// CSV with columns session,index,t,x,y.
        #[arg(long)]
        out: PathBuf,
    },
    /// Network-only motion-error history of a run.
    Report {
        #[arg(long)]
        frames: PathBuf,
        #[arg(long)]
        estimates: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// List the registered odometry methods.
    Methods,
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Simulate {
            preset,
            config,
            duration,
            out,
        } => {
            let mut cfg = match config {
                Some(path) => ScenarioConfig::load(&path).with_context(|| format!("loading {}", path.display()))?,
                None => ScenarioConfig::preset(&preset, cli.seed)?,
            };
            cfg.seed = cli.seed;
            if let Some(d) = duration {
                cfg.duration = d;
            }
            cfg.validate()?;
            let frames = simulate(&cfg)?;
            save_frames(&out, &frames)?;
            eprintln!("{} frames written to {}", frames.len(), out.display());
        }
        Command::TrainOffline {
            out,
            config,
            epochs,
            no_tactile,
            data,
            duration,
            report,
            loss_csv,
        } => {
            let mut cfg = match config {
                Some(path) => TrainConfig::load(&path).with_context(|| format!("loading {}", path.display()))?,
                None => TrainConfig::default(),
            };
            if let Some(e) = epochs {
                cfg.epochs = e;
            }
            if no_tactile {
                cfg.tactile = false;
            }
            let data = training_data(data.as_deref(), duration, cli.seed, cfg.tactile)?;
            let trained = train_offline(&data, &cfg, cli.seed)?;
            trained.blob.save(&out)?;
            if let Some(path) = report {
                std::fs::write(&path, serde_json::to_string_pretty(&trained.report)?)?;
            }
            if let Some(path) = loss_csv {
                std::fs::write(&path, trained.report.loss_csv())?;
            }
            eprintln!(
                "loss ratio {:.4}, held-out contact accuracy {:.4}; model written to {}",
                trained.report.loss_ratio(),
                trained.report.contact_accuracy,
                out.display()
            );
        }
        Command::Run {
            frames,
            method,
            model,
            no_tactile_model,
            config,
            out,
            metrics,
        } => {
            let frames = load_frames(&frames)?;
            let resources = MethodResources {
                model: model.as_deref().map(ModelBlob::load).transpose()?,
                no_tactile_model: no_tactile_model.as_deref().map(ModelBlob::load).transpose()?,
                ..MethodResources::default()
            };
            let config = match config {
                Some(path) => SmootherConfig::load(&path).with_context(|| format!("loading {}", path.display()))?,
                None => SmootherConfig::default(),
            };
            let run = run_scenario(&frames, &method, &MethodRegistry::standard(), &resources, &config)?;
            write_estimates(&run.estimates, File::create(&out)?)?;
            emit_json(&run.report, metrics.as_deref())?;
            eprintln!(
                "{}: ATE {:.4} ± {:.4} m over {} keyframes",
                method, run.report.ate.mean, run.report.ate.std, run.report.keyframes
            );
        }
        Command::Metrics {
            frames,
            estimates,
            method,
            out,
        } => {
            let frames = load_frames(&frames)?;
            let estimates = read_estimates(File::open(&estimates)?)?;
            emit_json(&evaluate(&method, &estimates, &frames)?, out.as_deref())?;
        }
        Command::Embed { estimates, out } => {
            let sessions = estimates
                .iter()
                .map(|p| read_estimates(File::open(p)?).map_err(anyhow::Error::from))
                .collect::<Result<Vec<_>>>()?;
            let histories: Vec<Vec<Vec<f64>>> = sessions.iter().map(|s| online_history(s)).collect();
            if histories.iter().any(Vec::is_empty) {
                bail!("every estimate stream must carry online parameters");
            }
            let embedded = embed_sessions(&histories)?;
            let mut csv = String::from("session,index,t,x,y\n");
            for (s, (points, run)) in embedded.iter().zip(&sessions).enumerate() {
                let stamps = run.iter().filter(|e| e.m_on.is_some());
                for (p, e) in points.iter().zip(stamps) {
                    csv.push_str(&format!("{s},{},{},{},{}\n", e.index, e.t, p[0], p[1]));
                }
            }
            std::fs::write(&out, csv)?;
        }
        Command::Report {
            frames,
            estimates,
            model,
            out,
        } => {
            let frames = load_frames(&frames)?;
            let estimates = read_estimates(File::open(&estimates)?)?;
            let blob = ModelBlob::load(&model)?;
            let records = residual_history(&blob, &keyframes(&frames), &estimates)?;
            std::fs::write(&out, residual_history_csv(&records))?;
        }
        Command::Methods => {
            for entry in MethodRegistry::standard().entries() {
                println!("{:<18} {}", entry.name, entry.description);
            }
        }
    }
    Ok(())
}

fn training_data(dir: Option<&Path>, duration: f64, seed: u64, tactile: bool) -> Result<Vec<SequenceData>> {
    let encode = |name: &str, frames: &[SimFrame]| SequenceData::from_frames(name, frames, &mut FrameEncoder::new(tactile));
    let Some(dir) = dir else {
        return ScenarioConfig::training_set(seed, duration)
            .iter()
            .map(|cfg| Ok(encode(&cfg.name, &simulate(cfg)?)?))
            .collect();
    };
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    paths.retain(|p| p.extension().is_some_and(|e| e == "jsonl"));
    paths.sort();
    if paths.is_empty() {
        bail!("no .jsonl streams in {}", dir.display());
    }
    paths
        .iter()
        .map(|p| {
            let name = p.file_stem().map_or_else(|| p.display().to_string(), |s| s.to_string_lossy().into_owned());
            Ok(encode(&name, &load_frames(p)?)?)
        })
        .collect()
}

fn emit_json<T: serde::Serialize>(value: &T, path: Option<&Path>) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    match path {
        Some(p) => std::fs::write(p, text + "\n")?,
        None => println!("{text}"),
    }
    Ok(())
}
