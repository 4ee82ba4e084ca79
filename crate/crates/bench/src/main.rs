use std::collections::BTreeMap;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use sari_bench::config::{read_table, AssistantKind, ExperimentConfig, Protocol};
use sari_bench::metrics::{batch_rows, human_effort, EpisodeKey};
use sari_bench::output::write_bundle;
use sari_bench::protocols::{demo_seed, oracle_for, run_experiment, train_assistant};
use sari_core::sim::{demonstrations, world, EpisodeConfig, EpisodeLog};
use sari_core::theory::{validate_bound, BoundRobot, Scenario1D, ScenarioND, ValidationConfig};
use sari_core::types::Dataset;

#[derive(Parser)]
#[command(name = "bench", version, about = "Run shared-autonomy experiments and bound validations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ScenarioKind {
    #[value(name = "1d")]
    OneD,
    #[value(name = "nd")]
    Nd,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment described by a TOML config.
    Run {
        config: PathBuf,
        /// Use the full-scale counts instead of desk-scale ones.
        #[arg(long)]
        full_scale: bool,
        /// Override the output directory.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Validate a single bound scenario and print the report as JSON.
    Bounds {
        #[arg(long, value_enum)]
        scenario: ScenarioKind,
        /// Per-axis standard deviation of demonstrator and human.
        #[arg(long, default_value_t = 1.0)]
        sigma: f64,
        /// Distance between the learned and the human's goal.
        #[arg(long, default_value_t = 1.0)]
        delta: f64,
        #[arg(long, default_value_t = 3)]
        dim: usize,
        #[arg(long, default_value_t = 1.0)]
        beta_max: f64,
        #[arg(long, default_value_t = 1000)]
        runs: usize,
        #[arg(long, default_value_t = 100)]
        horizon: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train an assistant on demonstrations and write its checkpoint.
    Train {
        #[arg(long, default_value = "table3")]
        world: String,
        #[arg(long, value_enum, default_value = "sari")]
        assistant: AssistantArg,
        /// Demonstrations per task when no dataset is given.
        #[arg(long, default_value_t = 5)]
        demos: usize,
        /// Dataset in JSON lines, one interaction per line.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Experiment config supplying hyperparameters.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Recompute the metric row of a saved episode log.
    Replay {
        log: PathBuf,
        /// Completion time used to normalize human effort; defaults to the log's own.
        #[arg(long)]
        mean_completion: Option<f64>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum AssistantArg {
    Sari,
    Dagger,
    Dropout,
    Ensemble,
    Bayes,
}

impl From<AssistantArg> for AssistantKind {
    fn from(a: AssistantArg) -> Self {
        match a {
            AssistantArg::Sari => AssistantKind::Sari,
            AssistantArg::Dagger => AssistantKind::Dagger,
            AssistantArg::Dropout => AssistantKind::Dropout,
            AssistantArg::Ensemble => AssistantKind::Ensemble,
            AssistantArg::Bayes => AssistantKind::Bayes,
        }
    }
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Run { config, full_scale, output } => {
            let mut table = read_table(&config)?;
            if full_scale {
                table.insert("full_scale".into(), toml::Value::Boolean(true));
            }
            let mut cfg = ExperimentConfig::from_table(table)?;
            if let Some(o) = output {
                cfg.output = o;
            }
            let bundle = run_experiment(&cfg)?;
            write_bundle(&bundle, &cfg.output)?;
            eprintln!(
                "{}: {} episodes, {} bound points -> {}",
                cfg.protocol.name(),
                bundle.episodes.len(),
                bundle.bounds.len(),
                cfg.output.display()
            );
        }
        Command::Bounds { scenario, sigma, delta, dim, beta_max, runs, horizon, seed } => {
            let sc = match scenario {
                ScenarioKind::OneD => {
                    Scenario1D { g: 0.0, g_star: delta, sigma_d: sigma, sigma_h: sigma, beta_max }.to_nd()
                }
                ScenarioKind::Nd => {
                    if dim == 0 {
                        bail!("--dim must be positive");
                    }
                    let u = delta / (dim as f64).sqrt();
                    ScenarioND::isotropic(vec![0.0; dim], vec![u; dim], sigma * sigma, sigma * sigma, beta_max)
                }
            };
            let vcfg = ValidationConfig { n_runs: runs, horizon, seed, ..ValidationConfig::default() };
            let mut rep = validate_bound(&sc, &BoundRobot::Analytic, &vcfg)?;
            rep.mean_error_path.clear();
            rep.mean_error_path_stderr.clear();
            println!("{}", serde_json::to_string_pretty(&rep)?);
        }
        Command::Train { world: name, assistant, demos, data, config, seed, out } => {
            let mut cfg = match config {
                Some(p) => ExperimentConfig::from_path(&p)?,
                None => ExperimentConfig::defaults(Protocol::Custom, false),
            };
            cfg.world = name.clone();
            let w = world(&name, seed)?;
            let dataset = match data {
                Some(p) => {
                    let text = std::fs::read_to_string(&p).with_context(|| format!("reading {}", p.display()))?;
                    Dataset::from_jsonl(&text)?
                }
                None => {
                    let dcfg = EpisodeConfig {
                        max_steps: cfg.demos.max_steps,
                        stop_on_success: cfg.demos.stop_on_success,
                        ..cfg.episode
                    };
                    let mut all = Vec::new();
                    for (k, t) in w.tasks.iter().enumerate() {
                        all.extend(demonstrations(&w, t, cfg.demos.sigma, demos, &dcfg, demo_seed(seed, k))?);
                    }
                    Dataset::new(all)?
                }
            };
            let trained = train_assistant(assistant.into(), &dataset, &w.tasks, &cfg, seed)?;
            let json = trained.checkpoint().context("assistant has no checkpoint")?;
            std::fs::write(&out, json).with_context(|| format!("writing {}", out.display()))?;
            eprintln!("trained on {} interactions -> {}", dataset.len(), out.display());
        }
        Command::Replay { log, mean_completion } => {
            let text = std::fs::read_to_string(&log).with_context(|| format!("reading {}", log.display()))?;
            let log = EpisodeLog::from_json(&text)?;
            let mut oracles = BTreeMap::new();
            if let Some((name, r)) = oracle_for(&log.task, &EpisodeConfig { dt: log.dt(), ..EpisodeConfig::default() })? {
                oracles.insert(name, r);
            }
            let key = EpisodeKey { protocol: "replay".into(), condition: String::new(), seed: 0, episode: 0 };
            let mut rows = batch_rows(&[(key, log.clone())], &oracles);
            if let Some(m) = mean_completion {
                rows[0].human_effort = human_effort(&log, m);
            }
            let mut w = csv::Writer::from_writer(std::io::stdout());
            w.serialize(&rows[0])?;
            w.flush()?;
        }
    }
    Ok(())
}
