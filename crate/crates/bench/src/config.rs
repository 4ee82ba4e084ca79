//! Experiment configuration: protocol defaults with user overrides merged on top.

use std::fmt;
use std::path::{Path, PathBuf};

use sari_core::baselines::BaselineConfig;
use sari_core::sari::SariConfig;
use sari_core::sim::{world, Engagement, EpisodeConfig};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Protocol {
    #[serde(rename = "fig6")]
    Fig6,
    #[serde(rename = "fig7")]
    Fig7,
    #[serde(rename = "fig8")]
    Fig8,
    #[serde(rename = "fig9_goals")]
    Fig9Goals,
    #[serde(rename = "fig10_skills")]
    Fig10Skills,
    #[serde(rename = "bound_sweep_1d")]
    BoundSweep1D,
    #[serde(rename = "bound_sweep_nd")]
    BoundSweepND,
    #[serde(rename = "custom")]
    Custom,
}

impl Protocol {
    pub fn name(self) -> &'static str {
        match self {
            Protocol::Fig6 => "fig6",
            Protocol::Fig7 => "fig7",
            Protocol::Fig8 => "fig8",
            Protocol::Fig9Goals => "fig9_goals",
            Protocol::Fig10Skills => "fig10_skills",
            Protocol::BoundSweep1D => "bound_sweep_1d",
            Protocol::BoundSweepND => "bound_sweep_nd",
            Protocol::Custom => "custom",
        }
    }

    pub fn is_bound_sweep(self) -> bool {
        matches!(self, Protocol::BoundSweep1D | Protocol::BoundSweepND)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AssistantKind {
    Sari,
    Dagger,
    Dropout,
    Ensemble,
    Bayes,
    None,
}

impl AssistantKind {
    pub fn name(self) -> &'static str {
        match self {
            AssistantKind::Sari => "sari",
            AssistantKind::Dagger => "dagger",
            AssistantKind::Dropout => "dropout",
            AssistantKind::Ensemble => "ensemble",
            AssistantKind::Bayes => "bayes",
            AssistantKind::None => "none",
        }
    }
}

/// Which interactions are kept for retraining. Only `all` is implemented.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StorePolicy {
    #[default]
    All,
    Corrective,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OperatorSpec {
    /// Isotropic standard deviation of the simulated human.
    pub sigma: f64,
    pub engagement: Engagement,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DemoSpec {
    /// Demonstrations per task; one training condition per entry.
    pub counts: Vec<usize>,
    pub sigma: f64,
    pub max_steps: usize,
    pub stop_on_success: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BoundRobotKind {
    Analytic,
    Learned,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    /// Per-axis standard deviations of both demonstrator and human.
    pub sigmas: Vec<f64>,
    pub dim: usize,
    /// Offsets `||g* - g||` run from `delta_min * sigma` to `delta_max * sigma`.
    pub delta_min: f64,
    pub delta_max: f64,
    pub points: usize,
    pub runs: usize,
    pub horizon: usize,
    pub beta_max: f64,
    pub robot: BoundRobotKind,
    /// Demonstrations for the learned robot.
    pub learned_demos: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub protocol: Protocol,
    pub world: String,
    pub seeds: Vec<u64>,
    pub output: PathBuf,
    pub full_scale: bool,
    pub assistants: Vec<AssistantKind>,
    pub operator: OperatorSpec,
    /// Operator noise levels; one condition each.
    pub noise_levels: Vec<f64>,
    /// Number of tasks trained on; one condition each.
    pub task_counts: Vec<usize>,
    /// Tasks rolled out; empty means every demonstrated task.
    pub tasks: Vec<String>,
    /// Undemonstrated tasks probed for confidence.
    pub novel_tasks: Vec<String>,
    pub demos: DemoSpec,
    /// Rollouts per task and condition.
    pub rollouts: usize,
    pub episode: EpisodeConfig,
    pub sari: SariConfig,
    pub baseline: BaselineConfig,
    pub sweep: SweepSpec,
    pub save_logs: bool,
    pub store_policy: StorePolicy,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError {
    pub path: String,
    pub msg: String,
}

impl ConfigError {
    fn new(path: impl Into<String>, msg: impl Into<String>) -> Self {
        Self { path: path.into(), msg: msg.into() }
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.path.is_empty() {
            write!(f, "{}", self.msg)
        } else {
            write!(f, "{}: {}", self.path, self.msg)
        }
    }
}

impl std::error::Error for ConfigError {}

fn release() -> Engagement {
    Engagement::ReleaseAfter { seconds: 0.5 }
}

impl ExperimentConfig {
    /// Defaults for `protocol` at desk or full scale.
    pub fn defaults(protocol: Protocol, full_scale: bool) -> Self {
        let mut sari = SariConfig { hidden_width: 32, discriminator_epochs: Some(300), ..SariConfig::default() };
        sari.train.epochs = 100;
        let mut baseline = BaselineConfig { hidden_width: 32, ..BaselineConfig::default() };
        baseline.train.epochs = 100;
        if !full_scale {
            baseline.members = 5;
        }
        let mut cfg = Self {
            protocol,
            world: "table3".into(),
            seeds: vec![0],
            output: PathBuf::from("out").join(protocol.name()),
            full_scale,
            assistants: vec![AssistantKind::Sari],
            operator: OperatorSpec { sigma: 0.05, engagement: Engagement::Always },
            noise_levels: vec![],
            task_counts: vec![],
            tasks: vec![],
            novel_tasks: vec![],
            demos: DemoSpec { counts: vec![5], sigma: 0.05, max_steps: 40, stop_on_success: false },
            rollouts: 5,
            episode: EpisodeConfig::default(),
            sari,
            baseline,
            sweep: SweepSpec {
                sigmas: vec![1.0, 0.1],
                dim: 1,
                delta_min: 0.25,
                delta_max: 5.0,
                points: 20,
                runs: if full_scale { 10_000 } else { 1000 },
                horizon: 100,
                beta_max: 1.0,
                robot: BoundRobotKind::Analytic,
                learned_demos: 250,
            },
            save_logs: false,
            store_policy: StorePolicy::All,
        };
        let fixed_horizon = EpisodeConfig { max_steps: 200, stop_on_success: false, ..EpisodeConfig::default() };
        match protocol {
            Protocol::Fig6 => {
                cfg.seeds = (0..5).collect();
                cfg.assistants = vec![AssistantKind::Sari, AssistantKind::Dagger];
                cfg.operator.engagement = release();
                cfg.demos.counts = vec![3, 5];
                cfg.novel_tasks = vec!["behind".into()];
                cfg.episode = fixed_horizon;
            }
            Protocol::Fig7 => {
                cfg.world = "glass".into();
                cfg.assistants = vec![AssistantKind::Sari, AssistantKind::Dropout];
                cfg.tasks = vec!["lift".into()];
                cfg.demos.max_steps = 80;
            }
            Protocol::Fig8 => {
                cfg.world = "drawer".into();
                cfg.assistants = vec![AssistantKind::Sari, AssistantKind::None];
                cfg.operator.engagement = Engagement::Satisficing { cos_threshold: 0.9, speed_fraction: 0.5 };
                cfg.noise_levels = vec![0.01, 0.05, 0.1];
                cfg.tasks = vec!["drawer".into(), "cup".into()];
                cfg.demos.max_steps = 80;
            }
            Protocol::Fig9Goals => {
                cfg.world = "goals20".into();
                cfg.assistants = vec![AssistantKind::Sari, AssistantKind::Ensemble];
                cfg.task_counts = (1..=if full_scale { 20 } else { 10 }).collect();
                cfg.demos.counts = vec![3];
                cfg.episode = fixed_horizon;
            }
            Protocol::Fig10Skills => {
                cfg.world = "kitchen8".into();
                cfg.assistants = vec![AssistantKind::Sari, AssistantKind::Ensemble];
                cfg.task_counts = (1..=if full_scale { 8 } else { 4 }).collect();
                cfg.demos.max_steps = 80;
            }
            Protocol::BoundSweep1D => {
                cfg.assistants = vec![];
            }
            Protocol::BoundSweepND => {
                cfg.assistants = vec![];
                cfg.sweep.sigmas = vec![0.01];
                cfg.sweep.dim = 3;
                cfg.sweep.delta_min = 1.0;
                cfg.sweep.delta_max = 15.0;
                cfg.sweep.points = 15;
                cfg.sweep.runs = if full_scale { 200 } else { 50 };
                cfg.sweep.learned_demos = 25;
            }
            Protocol::Custom => {}
        }
        cfg
    }

    /// Parses TOML, filling anything unset from the protocol's defaults.
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        Self::from_table(parse_table(text)?)
    }

    /// Like [`Self::from_toml`] for an already parsed table.
    pub fn from_table(user: toml::Table) -> Result<Self, ConfigError> {
        let protocol = match user.get("protocol") {
            Some(v) => Protocol::deserialize(v.clone()).map_err(|e| ConfigError::new("protocol", e.to_string()))?,
            None => return Err(ConfigError::new("protocol", "missing")),
        };
        let full_scale = match user.get("full_scale") {
            Some(v) => v.as_bool().ok_or_else(|| ConfigError::new("full_scale", "expected a boolean"))?,
            None => false,
        };
        let mut merged = toml::Table::try_from(Self::defaults(protocol, full_scale))
            .map_err(|e| ConfigError::new("", e.to_string()))?;
        merge(&mut merged, user);
        let cfg: Self = serde_path_to_error::deserialize(toml::Value::Table(merged))
            .map_err(|e| ConfigError::new(e.path().to_string(), e.inner().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self, ConfigError> {
        Self::from_table(read_table(path)?)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.seeds.is_empty() {
            return Err(ConfigError::new("seeds", "must be non-empty"));
        }
        if self.store_policy != StorePolicy::All {
            return Err(ConfigError::new("store_policy", "only \"all\" is implemented"));
        }
        if self.protocol.is_bound_sweep() {
            let s = &self.sweep;
            if s.sigmas.is_empty() || s.sigmas.iter().any(|v| !(*v > 0.0)) {
                return Err(ConfigError::new("sweep.sigmas", "need at least one positive value"));
            }
            if s.dim == 0 {
                return Err(ConfigError::new("sweep.dim", "must be positive"));
            }
            if s.points == 0 || !(s.delta_min >= 0.0 && s.delta_min <= s.delta_max) {
                return Err(ConfigError::new("sweep", "need points > 0 and 0 <= delta_min <= delta_max"));
            }
            if s.runs < 2 || s.horizon == 0 {
                return Err(ConfigError::new("sweep.runs", "need runs >= 2 and horizon >= 1"));
            }
            if !(s.beta_max > 0.0 && s.beta_max <= 1.0) {
                return Err(ConfigError::new("sweep.beta_max", "must be in (0, 1]"));
            }
            return Ok(());
        }
        let w = world(&self.world, 0).map_err(|e| ConfigError::new("world", e.to_string()))?;
        if self.assistants.is_empty() {
            return Err(ConfigError::new("assistants", "must be non-empty"));
        }
        for (i, t) in self.tasks.iter().enumerate() {
            if w.task(t).is_none() {
                return Err(ConfigError::new(format!("tasks[{i}]"), format!("world {:?} has no task {t:?}", w.name)));
            }
        }
        for (i, t) in self.novel_tasks.iter().enumerate() {
            if w.task(t).is_none() {
                return Err(ConfigError::new(format!("novel_tasks[{i}]"), format!("world {:?} has no task {t:?}", w.name)));
            }
        }
        for (i, n) in self.task_counts.iter().enumerate() {
            if *n == 0 || *n > w.tasks.len() {
                return Err(ConfigError::new(
                    format!("task_counts[{i}]"),
                    format!("must be in 1..={} for world {:?}", w.tasks.len(), w.name),
                ));
            }
        }
        if self.demos.counts.is_empty() || self.demos.counts.contains(&0) {
            return Err(ConfigError::new("demos.counts", "need at least one positive count"));
        }
        if self.demos.max_steps == 0 || self.episode.max_steps == 0 {
            return Err(ConfigError::new("episode.max_steps", "must be positive"));
        }
        if self.rollouts == 0 {
            return Err(ConfigError::new("rollouts", "must be positive"));
        }
        if self.noise_levels.iter().chain([&self.operator.sigma, &self.demos.sigma]).any(|s| !(*s >= 0.0)) {
            return Err(ConfigError::new("operator.sigma", "noise levels must be >= 0"));
        }
        self.sari.validate().map_err(|e| ConfigError::new("sari", e.to_string()))?;
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

pub fn parse_table(text: &str) -> Result<toml::Table, ConfigError> {
    text.parse().map_err(|e: toml::de::Error| ConfigError::new("", e.to_string()))
}

pub fn read_table(path: &Path) -> Result<toml::Table, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError::new("", format!("{}: {e}", path.display())))?;
    parse_table(&text)
}

/// Overlays `user` on `base`, recursing into tables. A table carrying a
/// `kind` tag selects a variant and replaces the default outright.
fn merge(base: &mut toml::Table, user: toml::Table) {
    for (k, v) in user {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(u)) if !u.contains_key("kind") => merge(b, u),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}
