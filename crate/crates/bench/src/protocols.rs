//! Experiment protocols: training, closed-loop rollouts, and bound sweeps.

use std::collections::BTreeMap;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use sari_core::baselines::{
    dagger_train, dropout_train, ensemble_train, tune_variance_scale, BaselineCheckpoint, BayesAssistant,
    DaggerAssistant, DaggerModel, DropoutAssistant, DropoutModel, EnsembleAssistant, EnsembleModel,
};
use sari_core::sari::{self, deform, SariAssistant, SariModel};
use sari_core::sim::{
    demonstrations, run_episode, world, Assistant, Engagement, EpisodeConfig, EpisodeLog, GaussianOperator, GoalTask,
    NoAssist, Task, World,
};
use sari_core::theory::{validate_bound, BoundRobot, Regime, ScenarioND, ValidationConfig};
use sari_core::types::{Dataset, Interaction};
use serde::{Deserialize, Serialize};

use crate::config::{AssistantKind, BoundRobotKind, ExperimentConfig, Protocol};
use crate::metrics::{aggregate, batch_rows, oracle_reward, AggregateRow, EpisodeKey, MetricRow};

/// Seed of the `k`-th task's demonstrations.
pub fn demo_seed(seed: u64, task_index: usize) -> u64 {
    seed * 1000 + task_index as u64 * 100
}

/// Seed of rollout `r` on the `j`-th rolled-out task.
pub fn rollout_seed(seed: u64, task_index: usize, r: usize) -> u64 {
    seed * 10_000 + task_index as u64 * 100 + r as u64
}

/// A trained assistant of any kind.
#[derive(Debug, Clone)]
pub enum Trained {
    Sari(Arc<SariModel>),
    Dagger(DaggerModel),
    Dropout(DropoutModel),
    Ensemble(EnsembleModel),
    Bayes(BayesAssistant),
    None(usize),
}

impl Trained {
    pub fn assistant(&self) -> Box<dyn Assistant + Send> {
        match self {
            Trained::Sari(m) => Box::new(SariAssistant::new(m.clone())),
            Trained::Dagger(m) => Box::new(DaggerAssistant::new(m.clone())),
            Trained::Dropout(m) => Box::new(DropoutAssistant::new(m.clone())),
            Trained::Ensemble(m) => Box::new(EnsembleAssistant::new(m.clone())),
            Trained::Bayes(b) => Box::new(b.clone()),
            Trained::None(d) => Box::new(NoAssist { d: *d }),
        }
    }

    pub fn checkpoint(&self) -> Option<String> {
        match self {
            Trained::Sari(m) => Some(m.to_json()),
            Trained::Dagger(m) => Some(BaselineCheckpoint::from(m).to_json()),
            Trained::Dropout(m) => Some(BaselineCheckpoint::from(m).to_json()),
            Trained::Ensemble(m) => Some(BaselineCheckpoint::from(m).to_json()),
            Trained::Bayes(b) => Some(BaselineCheckpoint::from(b).to_json()),
            Trained::None(_) => None,
        }
    }
}

/// Deformed copies of the training demonstrations, used to calibrate
/// variance-gated baselines.
pub fn unfamiliar_replays(data: &Dataset, magnitude: f64, seed: u64) -> Result<Vec<Interaction>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xdef0_4e11);
    Ok(data.interactions().iter().map(|i| deform(i, magnitude, &mut rng)).collect::<sari_core::Result<_>>()?)
}

/// Trains `kind` on `data`; `goals` are what the Bayesian baseline infers over.
pub fn train_assistant(
    kind: AssistantKind,
    data: &Dataset,
    goals: &[Task],
    cfg: &ExperimentConfig,
    seed: u64,
) -> Result<Trained> {
    let mut bcfg = cfg.baseline.clone();
    bcfg.train.seed = seed;
    let unfamiliar = || unfamiliar_replays(data, cfg.sari.deform_max, seed);
    Ok(match kind {
        AssistantKind::Sari => {
            let mut scfg = cfg.sari.clone();
            scfg.train.seed = seed;
            Trained::Sari(Arc::new(sari::train(data, &scfg)?))
        }
        AssistantKind::Dagger => Trained::Dagger(dagger_train(data, &bcfg)?),
        AssistantKind::Dropout => {
            let m = dropout_train(data, &bcfg)?;
            let make = |s| DropoutAssistant::new(DropoutModel { variance_scale: s, ..m.clone() });
            let scale = tune_variance_scale(make, &unfamiliar()?, bcfg.beta_max, seed)?;
            Trained::Dropout(DropoutModel { variance_scale: scale, ..m })
        }
        AssistantKind::Ensemble => {
            let m = ensemble_train(data, &bcfg)?;
            let make = |s| EnsembleAssistant::new(EnsembleModel { variance_scale: s, ..m.clone() });
            let scale = tune_variance_scale(make, &unfamiliar()?, bcfg.beta_max, seed)?;
            Trained::Ensemble(EnsembleModel { variance_scale: scale, ..m })
        }
        AssistantKind::Bayes => {
            let gs = goals.iter().map(|t| GoalTask::new(t.name(), t.final_point().to_vec())).collect();
            Trained::Bayes(BayesAssistant::new(gs, 5.0, bcfg.beta_max)?)
        }
        AssistantKind::None => Trained::None(data.dim()),
    })
}

/// One training condition inside a learned protocol.
#[derive(Debug, Clone)]
pub struct Condition {
    pub label: String,
    /// Indices into the world's demonstrated tasks.
    pub train_tasks: Vec<usize>,
    pub demo_count: usize,
    pub demo_sigma: f64,
    pub operator_sigma: f64,
    pub rollout_tasks: Vec<Task>,
    /// Tasks probed with an always-engaged operator for confidence.
    pub probes: Vec<Task>,
}

fn resolve_tasks(w: &World, names: &[String]) -> Result<Vec<Task>> {
    names
        .iter()
        .map(|n| w.task(n).cloned().with_context(|| format!("world {:?} has no task {n:?}", w.name)))
        .collect()
}

/// Conditions of a learned protocol for the world drawn with `seed`.
pub fn conditions(cfg: &ExperimentConfig, w: &World) -> Result<Vec<Condition>> {
    let all: Vec<usize> = (0..w.tasks.len()).collect();
    let chosen = if cfg.tasks.is_empty() { w.tasks.clone() } else { resolve_tasks(w, &cfg.tasks)? };
    let novel = resolve_tasks(w, &cfg.novel_tasks)?;
    let base = |label: String| Condition {
        label,
        train_tasks: all.clone(),
        demo_count: cfg.demos.counts[0],
        demo_sigma: cfg.demos.sigma,
        operator_sigma: cfg.operator.sigma,
        rollout_tasks: chosen.clone(),
        probes: vec![],
    };
    Ok(match cfg.protocol {
        Protocol::Fig6 | Protocol::Fig7 | Protocol::Custom => cfg
            .demos
            .counts
            .iter()
            .map(|&n| Condition {
                demo_count: n,
                probes: if novel.is_empty() { vec![] } else { chosen.iter().chain(&novel).cloned().collect() },
                ..base(format!("demos={n}"))
            })
            .collect(),
        Protocol::Fig8 => cfg
            .noise_levels
            .iter()
            .map(|&s| Condition { demo_sigma: s, operator_sigma: s, ..base(format!("sigma={s}")) })
            .collect(),
        Protocol::Fig9Goals | Protocol::Fig10Skills => cfg
            .task_counts
            .iter()
            .map(|&n| Condition {
                train_tasks: (0..n).collect(),
                rollout_tasks: w.tasks[..n].to_vec(),
                ..base(format!("count={n}"))
            })
            .collect(),
        Protocol::BoundSweep1D | Protocol::BoundSweepND => bail!("bound sweeps have no learned conditions"),
    })
}

/// Output of one seed.
#[derive(Debug, Default)]
pub struct SeedResult {
    pub logs: Vec<(EpisodeKey, EpisodeLog)>,
    pub checkpoints: Vec<(String, String)>,
    pub bounds: Vec<BoundRow>,
}

fn sanitize(s: &str) -> String {
    s.chars().map(|c| if c.is_ascii_alphanumeric() || c == '.' || c == '-' { c } else { '_' }).collect()
}

/// Every condition of a learned protocol for one seed.
pub fn run_learned_seed(cfg: &ExperimentConfig, seed: u64) -> Result<SeedResult> {
    let w = world(&cfg.world, seed)?;
    let demo_cfg = EpisodeConfig { max_steps: cfg.demos.max_steps, stop_on_success: cfg.demos.stop_on_success, ..cfg.episode };
    let probe_cfg = EpisodeConfig { dt: cfg.episode.dt, a_max: cfg.episode.a_max, ..EpisodeConfig::default() };
    let protocol = cfg.protocol.name().to_owned();
    let mut out = SeedResult::default();
    for cond in conditions(cfg, &w)? {
        let mut interactions = Vec::new();
        for &k in &cond.train_tasks {
            interactions.extend(demonstrations(
                &w,
                &w.tasks[k],
                cond.demo_sigma,
                cond.demo_count,
                &demo_cfg,
                demo_seed(seed, k),
            )?);
        }
        let data = Dataset::new(interactions)?;
        let goals: Vec<Task> = cond.train_tasks.iter().map(|&k| w.tasks[k].clone()).collect();
        for &kind in &cfg.assistants {
            let trained = train_assistant(kind, &data, &goals, cfg, seed)
                .with_context(|| format!("training {} for {}", kind.name(), cond.label))?;
            if let Some(json) = trained.checkpoint() {
                out.checkpoints
                    .push((format!("{}_{}_seed{seed}.json", sanitize(&cond.label), kind.name()), json));
            }
            let mut assistant = trained.assistant();
            let mut runs = |label: &str, tasks: &[Task], engagement: Engagement, ecfg: &EpisodeConfig, offset: usize| -> Result<()> {
                for (j, task) in tasks.iter().enumerate() {
                    let start = w.start_for(task)?;
                    for r in 0..cfg.rollouts {
                        let mut op = GaussianOperator::isotropic(task.clone(), cond.operator_sigma, engagement)?;
                        let log = run_episode(
                            assistant.as_mut(),
                            &mut op,
                            task,
                            &start,
                            ecfg,
                            rollout_seed(seed, offset + j, r),
                        )?;
                        let key = EpisodeKey {
                            protocol: protocol.clone(),
                            condition: label.to_owned(),
                            seed,
                            episode: j * cfg.rollouts + r,
                        };
                        out.logs.push((key, log));
                    }
                }
                Ok(())
            };
            runs(&cond.label, &cond.rollout_tasks, cfg.operator.engagement, &cfg.episode, 0)?;
            if !cond.probes.is_empty() {
                runs(&format!("{}/confidence", cond.label), &cond.probes, Engagement::Always, &probe_cfg, 50)?;
            }
        }
    }
    Ok(out)
}

/// One sweep point of a bound validation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundRow {
    pub seed: u64,
    pub robot: String,
    pub dim: usize,
    pub sigma: f64,
    pub delta: f64,
    pub beta_max: f64,
    pub regime: Regime,
    pub expected_beta: f64,
    pub bound: f64,
    pub lambda: f64,
    pub measured_mean_error: f64,
    pub measured_stderr: f64,
    pub measured_std: f64,
    pub mean_abs_error: f64,
    pub runs: usize,
    pub horizon: usize,
    pub lyapunov_samples: usize,
    pub lyapunov_mean_dv: f64,
    pub lyapunov_upper_95: f64,
    pub lyapunov_decreasing: bool,
}

/// Offsets of the sweep for noise level `sigma`.
pub fn sweep_deltas(cfg: &ExperimentConfig, sigma: f64) -> Vec<f64> {
    let s = &cfg.sweep;
    (0..s.points)
        .map(|i| {
            let u = if s.points > 1 { i as f64 / (s.points - 1) as f64 } else { 0.0 };
            sigma * (s.delta_min + (s.delta_max - s.delta_min) * u)
        })
        .collect()
}

/// Demonstrations from `N(g - s, sigma^2 I)` with `g` at the origin, each
/// starting uniformly within three standard deviations of it.
pub fn gaussian_demos(dim: usize, sigma: f64, count: usize, steps: usize, dt: f64, seed: u64) -> Result<Dataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let mut s: Vec<f64> = (0..dim).map(|_| rng.random_range(-3.0 * sigma..3.0 * sigma)).collect();
        let (mut states, mut actions) = (Vec::with_capacity(steps), Vec::with_capacity(steps));
        for _ in 0..steps {
            let a: Vec<f64> = s.iter().map(|x| -x + sigma * rng.sample::<f64, _>(StandardNormal)).collect();
            states.push(s.clone());
            s = s.iter().zip(&a).map(|(x, v)| x + dt * v).collect();
            actions.push(a);
        }
        out.push(Interaction::from_rows(&states, &actions, dt, 0.0, None)?);
    }
    Ok(Dataset::new(out)?)
}

/// Every sweep point for one seed.
pub fn run_sweep_seed(cfg: &ExperimentConfig, seed: u64) -> Result<SeedResult> {
    let s = &cfg.sweep;
    let d = s.dim;
    let dir: Vec<f64> = vec![1.0 / (d as f64).sqrt(); d];
    let mut out = SeedResult::default();
    for (si, &sigma) in s.sigmas.iter().enumerate() {
        let robot = match s.robot {
            BoundRobotKind::Analytic => BoundRobot::Analytic,
            BoundRobotKind::Learned => {
                let data = gaussian_demos(d, sigma, s.learned_demos, 20, cfg.episode.dt, demo_seed(seed, si))?;
                let mut scfg = cfg.sari.clone();
                scfg.train.seed = seed;
                scfg.beta_max = s.beta_max;
                let model = sari::train(&data, &scfg)?;
                out.checkpoints.push((format!("sigma-{sigma}_sari_seed{seed}.json"), model.to_json()));
                BoundRobot::Learned(Arc::new(model))
            }
        };
        for (i, delta) in sweep_deltas(cfg, sigma).into_iter().enumerate() {
            let g_star: Vec<f64> = dir.iter().map(|u| delta * u).collect();
            let sc = ScenarioND::isotropic(vec![0.0; d], g_star, sigma * sigma, sigma * sigma, s.beta_max);
            let vcfg = ValidationConfig {
                n_runs: s.runs,
                horizon: s.horizon,
                dt: cfg.episode.dt,
                seed: seed * 1_000_000 + (si * 1000 + i) as u64,
                start_offset: 0.0,
            };
            let rep = validate_bound(&sc, &robot, &vcfg)?;
            out.bounds.push(BoundRow {
                seed,
                robot: format!("{:?}", s.robot).to_lowercase(),
                dim: d,
                sigma,
                delta,
                beta_max: s.beta_max,
                regime: rep.regime,
                expected_beta: rep.expected_beta,
                bound: rep.bound,
                lambda: rep.lambda,
                measured_mean_error: rep.measured_mean_error,
                measured_stderr: rep.measured_stderr,
                measured_std: rep.measured_std,
                mean_abs_error: rep.mean_abs_error,
                runs: rep.n_runs,
                horizon: rep.horizon,
                lyapunov_samples: rep.lyapunov.samples,
                lyapunov_mean_dv: rep.lyapunov.mean_dv,
                lyapunov_upper_95: rep.lyapunov.upper_95,
                lyapunov_decreasing: rep.lyapunov.decreasing(),
            });
        }
    }
    Ok(out)
}

/// Everything an experiment produces.
#[derive(Debug, Clone)]
pub struct Bundle {
    pub config: ExperimentConfig,
    pub episodes: Vec<MetricRow>,
    pub aggregates: Vec<AggregateRow>,
    pub bounds: Vec<BoundRow>,
    /// File name and JSON body.
    pub checkpoints: Vec<(String, String)>,
    pub logs: Vec<(String, String)>,
    pub metadata: serde_json::Value,
}

/// Runs every seed in parallel and assembles outputs in (seed, episode) order.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Bundle> {
    cfg.validate()?;
    let results: Vec<SeedResult> = cfg
        .seeds
        .par_iter()
        .map(|&seed| {
            if cfg.protocol.is_bound_sweep() {
                run_sweep_seed(cfg, seed)
            } else {
                run_learned_seed(cfg, seed)
            }
            .with_context(|| format!("seed {seed}"))
        })
        .collect::<Result<_>>()?;

    let mut logs = Vec::new();
    let mut checkpoints = Vec::new();
    let mut bounds = Vec::new();
    for r in results {
        logs.extend(r.logs);
        checkpoints.extend(r.checkpoints);
        bounds.extend(r.bounds);
    }
    let oracles = skill_oracles(&logs, &cfg.episode)?;
    let episodes = batch_rows(&logs, &oracles);
    let aggregates = aggregate(&episodes);
    let saved = if cfg.save_logs {
        logs.iter()
            .map(|(k, log)| {
                let name = format!(
                    "{}_{}_seed{}_ep{}.json",
                    sanitize(&k.condition),
                    sanitize(&log.assistant),
                    k.seed,
                    k.episode
                );
                (name, log.to_json())
            })
            .collect()
    } else {
        vec![]
    };
    let metadata = metadata(cfg, &oracles)?;
    Ok(Bundle { config: cfg.clone(), episodes, aggregates, bounds, checkpoints, logs: saved, metadata })
}

/// Oracle reward of every skill that appears in `logs`.
pub fn skill_oracles(logs: &[(EpisodeKey, EpisodeLog)], ecfg: &EpisodeConfig) -> Result<BTreeMap<String, f64>> {
    let mut out = BTreeMap::new();
    for (_, log) in logs {
        if !out.contains_key(log.task.name()) {
            if let Some((name, r)) = oracle_for(&log.task, ecfg)? {
                out.insert(name, r);
            }
        }
    }
    Ok(out)
}

/// Oracle reward keyed by skill name; goals have none.
pub fn oracle_for(task: &Task, ecfg: &EpisodeConfig) -> Result<Option<(String, f64)>> {
    Ok(match task {
        Task::Skill(s) => Some((s.name.clone(), oracle_reward(s, ecfg)?)),
        Task::Goal(_) => None,
    })
}

fn metadata(cfg: &ExperimentConfig, oracles: &BTreeMap<String, f64>) -> Result<serde_json::Value> {
    let worlds = if cfg.protocol.is_bound_sweep() {
        serde_json::Value::Null
    } else {
        let w = world(&cfg.world, cfg.seeds[0])?;
        serde_json::json!({ "name": w.name, "note": w.note, "layout_seeded_by_experiment_seed": true })
    };
    Ok(serde_json::json!({
        "crate_version": env!("CARGO_PKG_VERSION"),
        "protocol": cfg.protocol.name(),
        "config": cfg,
        "world": worlds,
        "skill_oracle_rewards": oracles,
        "conventions": {
            "input_threshold": crate::metrics::INPUT_THRESHOLD,
            "waypoint_penalty": crate::metrics::WAYPOINT_PENALTY,
            "human_effort": "seconds with input divided by the mean completion time of the (condition, task, assistant) cell",
            "opposing_time": "steps with beta > 0 and dot(a_h, a_r) < 0, over all steps",
            "regret": "oracle reward minus achieved reward; reward is minus the mean distance to the waypoint polyline minus the penalty times the unvisited waypoint fraction",
            "skill_oracle": "noiseless operator without assistance, stopping on completion",
            "demo_seed": "seed * 1000 + 100 * task_index, plus the demonstration index",
            "rollout_seed": "seed * 10000 + 100 * task_index + rollout; confidence probes offset the task index by 50",
            "confidence_probes": "always-engaged operator, stop on success, 500 step cap",
            "training_seed": "the experiment seed",
            "variance_scale": "smallest scale keeping mean beta below 0.1 beta_max on deformed training replays",
            "bayes_rationality": 5.0,
            "bound_measured_error": "distance from g* to the across-run mean final state",
            "bound_scenario": "g at the origin, g* along the diagonal, runs start at g",
            "store_policy": cfg.store_policy,
        },
    }))
}
