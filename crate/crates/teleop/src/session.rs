//! The state owned by the tick loop.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{Context, Result};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sari_core::sari::{retrain, train, SariAssistant, SariConfig, SariModel};
use sari_core::sim::{Assistant, Task, World};
use sari_core::types::{blend, clamp_axes, step, Action, AssistDecision, Dataset, Interaction, State, DEFAULT_A_MAX};

use crate::protocol::{ClientMsg, GoalInfo, Mode, ServerMsg, SkillInfo, StateFrame};

/// Longest zero-order hold allowed for lossy links.
pub const MAX_HOLD_TICKS: usize = 3;

pub const DATASET_FILE: &str = "dataset.jsonl";

#[derive(Debug, Clone)]
pub struct SessionConfig {
    pub dt: f64,
    pub beta_max: f64,
    /// Ticks a command is repeated when no new one arrives.
    pub hold_ticks: usize,
    /// Hyperparameters for the first model of a fresh session.
    pub train: SariConfig,
}

impl Default for SessionConfig {
    fn default() -> Self {
        let mut train = SariConfig { hidden_width: 32, discriminator_epochs: Some(300), ..SariConfig::default() };
        train.train.epochs = 100;
        Self { dt: 0.1, beta_max: 1.0, hold_ticks: 0, train }
    }
}

struct Episode {
    label: String,
    t0: f64,
    states: Vec<Vec<f64>>,
    actions: Vec<Vec<f64>>,
}

/// Work handed to the retraining worker.
#[derive(Debug)]
pub struct RetrainJob {
    pub model_id: u64,
    pub dataset: Dataset,
    base: Option<Arc<SariModel>>,
    cfg: SariConfig,
}

impl RetrainJob {
    /// Persists the dataset under `data_dir`, then trains. The checkpoint
    /// is written next to the dataset.
    pub fn run(self, data_dir: Option<&Path>) -> Result<SariModel> {
        if let Some(dir) = data_dir {
            fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
            fs::write(dir.join(DATASET_FILE), self.dataset.to_jsonl())?;
        }
        let model = match &self.base {
            Some(m) => retrain(m, &self.dataset)?,
            None => train(&self.dataset, &self.cfg)?,
        };
        if let Some(dir) = data_dir {
            fs::write(model_path(dir, self.model_id), model.to_json())?;
        }
        Ok(model)
    }
}

pub fn model_path(dir: &Path, model_id: u64) -> PathBuf {
    dir.join(format!("model-{model_id}.json"))
}

pub struct Session {
    world: World,
    cfg: SessionConfig,
    model: Option<Arc<SariModel>>,
    assistant: Option<SariAssistant>,
    state: State,
    mode: Mode,
    episode: Option<Episode>,
    recorded: Vec<Interaction>,
    dataset: Vec<Interaction>,
    pending: Option<Vec<f64>>,
    last: Option<Vec<f64>>,
    held: usize,
    last_seq: Option<u64>,
    model_id: u64,
    rng: ChaCha8Rng,
}

impl Session {
    /// `dataset` holds interactions recorded in earlier runs.
    pub fn new(world: World, model: Option<SariModel>, dataset: Vec<Interaction>, cfg: SessionConfig) -> Result<Self> {
        anyhow::ensure!(cfg.dt > 0.0, "dt must be positive");
        anyhow::ensure!((0.0..=1.0).contains(&cfg.beta_max), "beta_max must be in [0, 1]");
        anyhow::ensure!(cfg.hold_ticks <= MAX_HOLD_TICKS, "hold is at most {MAX_HOLD_TICKS} ticks");
        let model = match model {
            Some(m) => {
                anyhow::ensure!(m.dim() == world.d, "model has dimension {}, world {}", m.dim(), world.d);
                Some(Arc::new(m.with_beta_max(cfg.beta_max)?))
            }
            None => None,
        };
        let state = State::new(world.start.clone(), 0.0)?;
        Ok(Self {
            assistant: model.clone().map(SariAssistant::new),
            model,
            state,
            mode: Mode::Idle,
            episode: None,
            recorded: Vec::new(),
            dataset,
            pending: None,
            last: None,
            held: 0,
            last_seq: None,
            model_id: 0,
            rng: ChaCha8Rng::seed_from_u64(0),
            world,
            cfg,
        })
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn state(&self) -> &State {
        &self.state
    }

    pub fn model(&self) -> Option<&Arc<SariModel>> {
        self.model.as_ref()
    }

    /// Episodes ended since the last retrain.
    pub fn recorded(&self) -> &[Interaction] {
        &self.recorded
    }

    pub fn dataset(&self) -> &[Interaction] {
        &self.dataset
    }

    pub fn world_msg(&self) -> ServerMsg {
        let mut goals = Vec::new();
        let mut skills = Vec::new();
        let novel = self.world.novel.iter().map(|t| (t, true));
        for (t, novel) in self.world.tasks.iter().map(|t| (t, false)).chain(novel) {
            match t {
                Task::Goal(g) => goals.push(GoalInfo { name: g.name.clone(), g: g.g.clone(), novel }),
                Task::Skill(s) => {
                    skills.push(SkillInfo { name: s.name.clone(), waypoints: s.waypoints.clone(), novel })
                }
            }
        }
        ServerMsg::World { goals, skills }
    }

    /// Applies a client message. `Ok(Some(job))` asks for retraining.
    pub fn handle(&mut self, msg: ClientMsg) -> std::result::Result<Option<RetrainJob>, String> {
        match msg {
            ClientMsg::Cmd { seq, ah } => {
                if ah.len() != self.world.d {
                    return Err(format!("ah has {} entries, expected {}", ah.len(), self.world.d));
                }
                if ah.iter().any(|v| !v.is_finite()) {
                    return Err("ah must be finite".into());
                }
                if let Some(n) = seq {
                    if self.last_seq.is_some_and(|m| n <= m) {
                        return Err(format!("stale cmd seq {n}"));
                    }
                    self.last_seq = Some(n);
                }
                let mut ah = ah;
                clamp_axes(&mut ah, DEFAULT_A_MAX);
                self.pending = Some(ah);
                Ok(None)
            }
            ClientMsg::EpisodeStart { task } => {
                match self.mode {
                    Mode::Running => return Err("an episode is already running".into()),
                    Mode::Retraining => return Err("retraining in progress".into()),
                    Mode::Idle => {}
                }
                let Some(t) = self.world.task(&task) else {
                    return Err(format!("unknown task {task:?}"));
                };
                let start = self.world.start_for(t).map_err(|e| e.to_string())?;
                self.state = State::new(start.coords().to_vec(), self.state.time()).map_err(|e| e.to_string())?;
                if let Some(a) = &mut self.assistant {
                    a.reset();
                }
                self.clear_commands();
                self.episode = Some(Episode { label: task, t0: self.state.time(), states: vec![], actions: vec![] });
                self.mode = Mode::Running;
                Ok(None)
            }
            ClientMsg::EpisodeEnd => {
                if self.mode != Mode::Running {
                    return Err("no episode is running".into());
                }
                let ep = self.episode.take().expect("running implies an episode");
                self.mode = Mode::Idle;
                if let Some(a) = &mut self.assistant {
                    a.reset();
                }
                self.clear_commands();
                if !ep.states.is_empty() {
                    let i = Interaction::from_rows(&ep.states, &ep.actions, self.cfg.dt, ep.t0, Some(ep.label))
                        .map_err(|e| e.to_string())?;
                    self.recorded.push(i);
                }
                Ok(None)
            }
            ClientMsg::Retrain => {
                match self.mode {
                    Mode::Running => return Err("end the episode before retraining".into()),
                    Mode::Retraining => return Err("retraining in progress".into()),
                    Mode::Idle => {}
                }
                if self.recorded.is_empty() {
                    return Err("no recorded episodes to train on".into());
                }
                let mut all = self.dataset.clone();
                all.extend(self.recorded.iter().cloned());
                let dataset = Dataset::new(all).map_err(|e| e.to_string())?;
                self.dataset.append(&mut self.recorded);
                self.model_id += 1;
                let mut cfg = self.cfg.train.clone();
                cfg.beta_max = self.cfg.beta_max;
                cfg.train.seed = self.model_id;
                self.mode = Mode::Retraining;
                Ok(Some(RetrainJob { model_id: self.model_id, dataset, base: self.model.clone(), cfg }))
            }
            ClientMsg::SetBetaMax { v } => {
                if !(0.0..=1.0).contains(&v) {
                    return Err(format!("beta_max must be in [0, 1], got {v}"));
                }
                self.cfg.beta_max = v;
                if let Some(m) = &self.model {
                    let next = Arc::new(m.with_beta_max(v).map_err(|e| e.to_string())?);
                    self.swap(next);
                }
                Ok(None)
            }
        }
    }

    /// Installs the result of a retraining job.
    pub fn finish_retrain(&mut self, model_id: u64, result: Result<SariModel>) -> ServerMsg {
        self.mode = Mode::Idle;
        match result.and_then(|m| Ok(m.with_beta_max(self.cfg.beta_max)?)) {
            Ok(m) => {
                self.swap(Arc::new(m));
                ServerMsg::RetrainDone { model_id }
            }
            Err(e) => ServerMsg::RetrainFailed { msg: format!("{e:#}") },
        }
    }

    fn swap(&mut self, model: Arc<SariModel>) {
        match &mut self.assistant {
            Some(a) => a.set_model(model.clone()),
            None => self.assistant = Some(SariAssistant::new(model.clone())),
        }
        self.model = Some(model);
    }

    fn clear_commands(&mut self) {
        self.pending = None;
        self.last = None;
        self.held = 0;
    }

    fn human_action(&mut self) -> Vec<f64> {
        if let Some(a) = self.pending.take() {
            self.held = 0;
            self.last = Some(a.clone());
            return a;
        }
        if let Some(a) = &self.last {
            if self.held < self.cfg.hold_ticks {
                self.held += 1;
                return a.clone();
            }
        }
        self.last = None;
        vec![0.0; self.world.d]
    }

    /// Advances the simulation by one fixed step.
    pub fn tick(&mut self) -> Result<StateFrame> {
        let a_h = Action::human(self.human_action())?;
        let decision = match &mut self.assistant {
            Some(a) => a.decide(&self.state, &a_h, &mut self.rng)?,
            None => AssistDecision::none(self.world.d),
        };
        let blended = blend(&a_h, &decision.a_r, decision.gain, Some(DEFAULT_A_MAX))?;
        if let Some(ep) = &mut self.episode {
            ep.states.push(self.state.coords().to_vec());
            ep.actions.push(a_h.vel().to_vec());
        }
        self.state = step(&self.state, &blended, self.cfg.dt)?;
        Ok(StateFrame {
            t: self.state.time(),
            s: self.state.coords().to_vec(),
            ar: decision.a_r.vel().to_vec(),
            beta: decision.gain.beta(),
            blended: blended.vel().to_vec(),
            mode: self.mode,
        })
    }
}
