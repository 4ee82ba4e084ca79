//! Per-episode measures and their aggregates.

use std::collections::BTreeMap;

use sari_core::sim::{run_episode, Engagement, EpisodeConfig, EpisodeLog, GaussianOperator, NoAssist, SkillTask, Task};
use sari_core::types::{distance, dot, State};
use serde::{Deserialize, Serialize};

/// Below this norm a human action counts as silence.
pub const INPUT_THRESHOLD: f64 = 1e-9;

/// Reward lost per unit fraction of skipped waypoints.
pub const WAYPOINT_PENALTY: f64 = 1.0;

/// Distance from the final state to the point the task ends at.
pub fn final_state_error(log: &EpisodeLog) -> f64 {
    distance(&log.outcome.final_state, log.task.final_point())
}

fn states(log: &EpisodeLog) -> impl Iterator<Item = &[f64]> {
    log.interaction
        .pairs()
        .iter()
        .map(|p| p.state().coords())
        .chain(std::iter::once(log.outcome.final_state.as_slice()))
}

/// Mean path tracking reward minus a penalty for unvisited waypoints.
pub fn skill_reward(log: &EpisodeLog, skill: &SkillTask) -> f64 {
    let task = Task::Skill(skill.clone());
    let mut progress = task.new_progress();
    let (mut total, mut n) = (0.0, 0usize);
    for s in states(log) {
        progress.update(&task, s);
        total += skill.distance_to_path(s);
        n += 1;
    }
    let visited = progress.visited() as f64 / skill.waypoints.len() as f64;
    -total / n as f64 - WAYPOINT_PENALTY * (1.0 - visited)
}

/// Reward of the noiseless, unassisted rollout.
pub fn oracle_reward(skill: &SkillTask, cfg: &EpisodeConfig) -> sari_core::Result<f64> {
    let task = Task::Skill(skill.clone());
    let d = task.dim();
    let start = State::at(skill.waypoints[0].clone())?;
    let mut op = GaussianOperator::isotropic(task.clone(), 0.0, Engagement::Always)?;
    let ocfg = EpisodeConfig { stop_on_success: true, ..*cfg };
    let log = run_episode(&mut NoAssist { d }, &mut op, &task, &start, &ocfg, 0)?;
    Ok(skill_reward(&log, skill))
}

pub fn regret(log: &EpisodeLog, skill: &SkillTask, oracle: f64) -> f64 {
    oracle - skill_reward(log, skill)
}

fn provides_input(log: &EpisodeLog, k: usize) -> bool {
    log.interaction.pairs()[k].human_action().norm() > INPUT_THRESHOLD
}

/// Steps with human input.
pub fn active_steps(log: &EpisodeLog) -> usize {
    (0..log.len()).filter(|&k| provides_input(log, k)).count()
}

pub fn total_time(log: &EpisodeLog) -> f64 {
    log.len() as f64 * log.dt()
}

pub fn operating_time_frac(log: &EpisodeLog) -> f64 {
    if log.is_empty() {
        return 0.0;
    }
    active_steps(log) as f64 / log.len() as f64
}

/// Fraction of steps where the applied robot action points against the human's.
pub fn opposing_time_frac(log: &EpisodeLog) -> f64 {
    if log.is_empty() {
        return 0.0;
    }
    let opposing = (0..log.len())
        .filter(|&k| {
            let a_h = log.interaction.pairs()[k].human_action().vel();
            log.betas[k] > 0.0 && dot(a_h, log.robot_actions[k].vel()) < 0.0
        })
        .count();
    opposing as f64 / log.len() as f64
}

pub fn mean_confidence(log: &EpisodeLog) -> f64 {
    if log.is_empty() {
        return 0.0;
    }
    log.betas.iter().sum::<f64>() / log.len() as f64
}

/// Human input time over `mean_completion` seconds.
pub fn human_effort(log: &EpisodeLog, mean_completion: f64) -> f64 {
    if mean_completion <= 0.0 {
        return 0.0;
    }
    active_steps(log) as f64 * log.dt() / mean_completion
}

/// One episode's measures.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub protocol: String,
    pub condition: String,
    pub seed: u64,
    pub assistant: String,
    pub task: String,
    pub episode: usize,
    pub final_state_error: f64,
    pub regret: Option<f64>,
    pub human_effort: f64,
    pub operating_time_frac: f64,
    pub opposing_time_frac: f64,
    pub total_time: f64,
    pub mean_confidence: f64,
    pub success: bool,
    pub steps: usize,
}

/// Identifies an episode inside an experiment.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EpisodeKey {
    pub protocol: String,
    pub condition: String,
    pub seed: u64,
    pub episode: usize,
}

/// Rows for a batch of logs. Human effort is normalized by the mean
/// completion time of each (condition, task, assistant) cell in the batch.
pub fn batch_rows(logs: &[(EpisodeKey, EpisodeLog)], oracles: &BTreeMap<String, f64>) -> Vec<MetricRow> {
    let mut cells: BTreeMap<(String, String, String), (f64, usize)> = BTreeMap::new();
    for (key, log) in logs {
        let e = cells
            .entry((key.condition.clone(), log.task.name().to_owned(), log.assistant.clone()))
            .or_default();
        e.0 += total_time(log);
        e.1 += 1;
    }
    logs.iter()
        .map(|(key, log)| {
            let (sum, n) = cells[&(key.condition.clone(), log.task.name().to_owned(), log.assistant.clone())];
            let regret = match &log.task {
                Task::Skill(s) => oracles.get(&s.name).map(|r| regret(log, s, *r)),
                Task::Goal(_) => None,
            };
            MetricRow {
                protocol: key.protocol.clone(),
                condition: key.condition.clone(),
                seed: key.seed,
                assistant: log.assistant.clone(),
                task: log.task.name().to_owned(),
                episode: key.episode,
                final_state_error: final_state_error(log),
                regret,
                human_effort: human_effort(log, sum / n as f64),
                operating_time_frac: operating_time_frac(log),
                opposing_time_frac: opposing_time_frac(log),
                total_time: total_time(log),
                mean_confidence: mean_confidence(log),
                success: log.outcome.success,
                steps: log.len(),
            }
        })
        .collect()
}

/// Sample mean, standard deviation (n - 1), and standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub n: usize,
    pub mean: f64,
    pub std: f64,
    pub stderr: f64,
}

impl Summary {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len();
        if n == 0 {
            return Self { n, mean: f64::NAN, std: f64::NAN, stderr: f64::NAN };
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = if n > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Self { n, mean, std, stderr: std / (n as f64).sqrt() }
    }
}

pub const METRICS: [&str; 7] = [
    "final_state_error",
    "regret",
    "human_effort",
    "operating_time_frac",
    "opposing_time_frac",
    "total_time",
    "mean_confidence",
];

impl MetricRow {
    pub fn metric(&self, name: &str) -> Option<f64> {
        match name {
            "final_state_error" => Some(self.final_state_error),
            "regret" => self.regret,
            "human_effort" => Some(self.human_effort),
            "operating_time_frac" => Some(self.operating_time_frac),
            "opposing_time_frac" => Some(self.opposing_time_frac),
            "total_time" => Some(self.total_time),
            "mean_confidence" => Some(self.mean_confidence),
            _ => None,
        }
    }
}

/// A metric summarized over a group of rows; `seed` and `task` are "all" when pooled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub protocol: String,
    pub condition: String,
    pub assistant: String,
    pub seed: String,
    pub task: String,
    pub metric: String,
    pub n: usize,
    pub mean: f64,
    pub std: f64,
    pub stderr: f64,
}

/// Groups by condition and assistant, each split per seed and per task as
/// well as pooled. Output order is deterministic.
pub fn aggregate(rows: &[MetricRow]) -> Vec<AggregateRow> {
    type Key = (String, String, String, String, String);
    let mut groups: BTreeMap<Key, Vec<&MetricRow>> = BTreeMap::new();
    for r in rows {
        for seed in [r.seed.to_string(), "all".to_owned()] {
            for task in [r.task.clone(), "all".to_owned()] {
                groups
                    .entry((r.protocol.clone(), r.condition.clone(), r.assistant.clone(), seed.clone(), task))
                    .or_default()
                    .push(r);
            }
        }
    }
    let mut out = Vec::new();
    for ((protocol, condition, assistant, seed, task), members) in groups {
        for metric in METRICS {
            let values: Vec<f64> = members.iter().filter_map(|r| r.metric(metric)).collect();
            if values.is_empty() {
                continue;
            }
            let s = Summary::of(&values);
            out.push(AggregateRow {
                protocol: protocol.clone(),
                condition: condition.clone(),
                assistant: assistant.clone(),
                seed: seed.clone(),
                task: task.clone(),
                metric: metric.to_owned(),
                n: s.n,
                mean: s.mean,
                std: s.std,
                stderr: s.stderr,
            });
        }
    }
    out
}

/// Looks up one aggregate.
pub fn find<'a>(
    rows: &'a [AggregateRow],
    condition: &str,
    assistant: &str,
    seed: &str,
    task: &str,
    metric: &str,
) -> Option<&'a AggregateRow> {
    rows.iter().find(|r| {
        r.condition == condition && r.assistant == assistant && r.seed == seed && r.task == task && r.metric == metric
    })
}
