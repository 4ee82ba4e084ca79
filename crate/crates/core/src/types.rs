//! Domain vocabulary: states, actions, interactions, arbitration, and the
//! kinematic point-mass dynamics every other module builds on.
//!
//! All values are immutable after construction and validated on the way in,
//! so downstream code can assume finite coordinates and consistent widths.

use serde::{Deserialize, Serialize};

use crate::error::{ensure_dim, ensure_finite, Error, Result};

/// Default control period in seconds (10 Hz).
pub const DEFAULT_DT: f64 = 0.1;

/// Default per-axis velocity clamp in meters per second.
pub const DEFAULT_A_MAX: f64 = 1.0;

/// Robot configuration: a point in `R^d` plus the simulation time.
#[derive(Debug, Clone, PartialEq)]
pub struct State {
    coords: Vec<f64>,
    time: f64,
}

impl State {
    pub fn new(coords: Vec<f64>, time: f64) -> Result<Self> {
        if coords.is_empty() {
            return Err(Error::InvalidParameter("state dimension must be >= 1".into()));
        }
        ensure_finite(&coords, "state coordinates")?;
        ensure_finite(&[time], "state time")?;
        Ok(Self { coords, time })
    }

    /// State at time zero.
    pub fn at(coords: Vec<f64>) -> Result<Self> {
        Self::new(coords, 0.0)
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    /// Euclidean distance between the coordinates of `self` and `point`.
    pub fn distance_to(&self, point: &[f64]) -> f64 {
        distance(&self.coords, point)
    }
}

/// Who produced an action.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ActionKind {
    Human,
    Robot,
    Blended,
}

/// Velocity command in meters per second.
#[derive(Debug, Clone, PartialEq)]
pub struct Action {
    vel: Vec<f64>,
    kind: ActionKind,
}

impl Action {
    pub fn new(vel: Vec<f64>, kind: ActionKind) -> Result<Self> {
        if vel.is_empty() {
            return Err(Error::InvalidParameter("action dimension must be >= 1".into()));
        }
        ensure_finite(&vel, "action velocity")?;
        Ok(Self { vel, kind })
    }

    pub fn human(vel: Vec<f64>) -> Result<Self> {
        Self::new(vel, ActionKind::Human)
    }

    pub fn robot(vel: Vec<f64>) -> Result<Self> {
        Self::new(vel, ActionKind::Robot)
    }

    pub fn zero(dim: usize, kind: ActionKind) -> Self {
        Self { vel: vec![0.0; dim.max(1)], kind }
    }

    pub fn vel(&self) -> &[f64] {
        &self.vel
    }

    pub fn kind(&self) -> ActionKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.vel.len()
    }

    pub fn norm(&self) -> f64 {
        norm(&self.vel)
    }

    /// Same velocity relabeled with another kind.
    pub fn with_kind(mut self, kind: ActionKind) -> Self {
        self.kind = kind;
        self
    }
}

/// One observed timestep: where the robot was and what the human commanded.
#[derive(Debug, Clone, PartialEq)]
pub struct StateActionPair {
    state: State,
    human_action: Action,
}

impl StateActionPair {
    pub fn new(state: State, human_action: Action) -> Result<Self> {
        ensure_dim(state.dim(), human_action.dim())?;
        Ok(Self {
            state,
            human_action: human_action.with_kind(ActionKind::Human),
        })
    }

    pub fn state(&self) -> &State {
        &self.state
    }

    pub fn human_action(&self) -> &Action {
        &self.human_action
    }
}

/// A complete sequence of (state, human command) pairs sampled every `dt`.
///
/// `label` is evaluation bookkeeping only. Nothing in the learning modules
/// reads it.
#[derive(Debug, Clone, PartialEq)]
pub struct Interaction {
    pairs: Vec<StateActionPair>,
    dt: f64,
    label: Option<String>,
}

impl Interaction {
    pub fn new(pairs: Vec<StateActionPair>, dt: f64, label: Option<String>) -> Result<Self> {
        if !(dt.is_finite() && dt > 0.0) {
            return Err(Error::InvalidParameter(format!("dt must be > 0, got {dt}")));
        }
        let Some(first) = pairs.first() else {
            return Err(Error::InvalidParameter("interaction has no pairs".into()));
        };
        let d = first.state.dim();
        for (k, pair) in pairs.iter().enumerate() {
            ensure_dim(d, pair.state.dim())?;
            if k > 0 {
                let gap = pair.state.time - pairs[k - 1].state.time;
                if (gap - dt).abs() > 1e-9 * (1.0 + pair.state.time.abs()) {
                    return Err(Error::InvalidParameter(format!(
                        "timestamps must increase by dt={dt}; pair {k} advances by {gap}"
                    )));
                }
            }
        }
        Ok(Self { pairs, dt, label })
    }

    /// Builds an interaction from raw coordinate rows starting at `t0`.
    pub fn from_rows(
        states: &[Vec<f64>],
        actions: &[Vec<f64>],
        dt: f64,
        t0: f64,
        label: Option<String>,
    ) -> Result<Self> {
        ensure_dim(states.len(), actions.len())?;
        let mut pairs = Vec::with_capacity(states.len());
        let mut t = t0;
        for (s, a) in states.iter().zip(actions) {
            pairs.push(StateActionPair::new(
                State::new(s.clone(), t)?,
                Action::human(a.clone())?,
            )?);
            t += dt;
        }
        Self::new(pairs, dt, label)
    }

    pub fn pairs(&self) -> &[StateActionPair] {
        &self.pairs
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn label(&self) -> Option<&str> {
        self.label.as_deref()
    }

    pub fn with_label(mut self, label: Option<String>) -> Self {
        self.label = label;
        self
    }

    pub fn dim(&self) -> usize {
        self.pairs[0].state.dim()
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// State coordinates as rows.
    pub fn state_rows(&self) -> Vec<Vec<f64>> {
        self.pairs.iter().map(|p| p.state.coords.clone()).collect()
    }

    /// Human action velocities as rows.
    pub fn action_rows(&self) -> Vec<Vec<f64>> {
        self.pairs.iter().map(|p| p.human_action.vel.clone()).collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&InteractionDoc::from(self)).expect("interaction serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: InteractionDoc =
            serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        doc.into_interaction()
    }
}

/// Wire form of an interaction: `{"dt", "d", "pairs": [{"s", "ah", "t"}], "label"}`.
#[derive(Debug, Serialize, Deserialize)]
struct InteractionDoc {
    dt: f64,
    d: usize,
    pairs: Vec<PairDoc>,
    label: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct PairDoc {
    s: Vec<f64>,
    ah: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    t: Option<f64>,
}

impl From<&Interaction> for InteractionDoc {
    fn from(i: &Interaction) -> Self {
        Self {
            dt: i.dt,
            d: i.dim(),
            pairs: i
                .pairs
                .iter()
                .map(|p| PairDoc {
                    s: p.state.coords.clone(),
                    ah: p.human_action.vel.clone(),
                    t: Some(p.state.time),
                })
                .collect(),
            label: i.label.clone(),
        }
    }
}

impl InteractionDoc {
    fn into_interaction(self) -> Result<Interaction> {
        if self.pairs.is_empty() {
            return Err(Error::Parse("interaction has no pairs".into()));
        }
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(Error::Parse(format!("dt must be > 0, got {}", self.dt)));
        }
        let mut pairs = Vec::with_capacity(self.pairs.len());
        for (index, p) in self.pairs.into_iter().enumerate() {
            let bad = |msg: String| Error::ParseRecord { index, msg };
            if p.s.len() != self.d || p.ah.len() != self.d {
                return Err(bad(format!(
                    "expected dimension {}, got s={} ah={}",
                    self.d,
                    p.s.len(),
                    p.ah.len()
                )));
            }
            let t = p.t.unwrap_or(index as f64 * self.dt);
            let state = State::new(p.s, t).map_err(|e| bad(e.to_string()))?;
            let action = Action::human(p.ah).map_err(|e| bad(e.to_string()))?;
            pairs.push(StateActionPair::new(state, action).map_err(|e| bad(e.to_string()))?);
        }
        Interaction::new(pairs, self.dt, self.label).map_err(|e| Error::Parse(e.to_string()))
    }
}

/// A growing collection of interactions sharing one dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    interactions: Vec<Interaction>,
    dim: usize,
}

impl Dataset {
    pub fn new(interactions: Vec<Interaction>) -> Result<Self> {
        let Some(first) = interactions.first() else {
            return Err(Error::InvalidParameter("dataset is empty".into()));
        };
        let dim = first.dim();
        for i in &interactions {
            ensure_dim(dim, i.dim())?;
        }
        Ok(Self { interactions, dim })
    }

    pub fn interactions(&self) -> &[Interaction] {
        &self.interactions
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.interactions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.interactions.is_empty()
    }

    pub fn total_pairs(&self) -> usize {
        self.interactions.iter().map(Interaction::len).sum()
    }

    /// Dataset with `interaction` appended.
    pub fn with(&self, interaction: Interaction) -> Result<Self> {
        ensure_dim(self.dim, interaction.dim())?;
        let mut interactions = self.interactions.clone();
        interactions.push(interaction);
        Ok(Self { interactions, dim: self.dim })
    }

    /// One JSON document per line.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for i in &self.interactions {
            out.push_str(&i.to_json());
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        let mut interactions = Vec::new();
        for (index, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let i = Interaction::from_json(line).map_err(|e| Error::ParseRecord {
                index,
                msg: e.to_string(),
            })?;
            interactions.push(i);
        }
        Self::new(interactions)
    }
}

/// Arbitration weight on the robot's action, capped by `beta_max`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArbitrationGain {
    beta: f64,
    beta_max: f64,
}

impl ArbitrationGain {
    pub fn new(beta: f64, beta_max: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&beta_max) {
            return Err(Error::InvalidParameter(format!("beta_max must be in [0, 1], got {beta_max}")));
        }
        if !(0.0..=beta_max).contains(&beta) {
            return Err(Error::InvalidParameter(format!(
                "beta must be in [0, {beta_max}], got {beta}"
            )));
        }
        Ok(Self { beta, beta_max })
    }

    /// Saturates `raw` into `[0, beta_max]`.
    pub fn saturated(raw: f64, beta_max: f64) -> Result<Self> {
        if !raw.is_finite() {
            return Err(Error::NonFinite("arbitration"));
        }
        Self::new(raw.clamp(0.0, beta_max.max(0.0)), beta_max)
    }

    /// Full human control.
    pub fn human_only() -> Self {
        Self { beta: 0.0, beta_max: 1.0 }
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn beta_max(&self) -> f64 {
        self.beta_max
    }
}

/// Robot assistance proposed for one timestep.
#[derive(Debug, Clone, PartialEq)]
pub struct AssistDecision {
    pub a_r: Action,
    pub gain: ArbitrationGain,
    /// Latent task behind the proposal, for assistants that have one.
    pub z_used: Option<LatentTask>,
}

impl AssistDecision {
    /// No assistance: zero robot action at zero gain.
    pub fn none(dim: usize) -> Self {
        Self {
            a_r: Action::zero(dim, ActionKind::Robot),
            gain: ArbitrationGain::human_only(),
            z_used: None,
        }
    }
}

/// A sample from the encoder's diagonal Gaussian over latent tasks.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentTask {
    pub z: Vec<f64>,
    pub mean: Vec<f64>,
    pub log_var: Vec<f64>,
}

/// `beta * a_r + (1 - beta) * a_h`, optionally clamped per axis to `a_max`.
pub fn blend(a_h: &Action, a_r: &Action, gain: ArbitrationGain, a_max: Option<f64>) -> Result<Action> {
    ensure_dim(a_h.dim(), a_r.dim())?;
    let beta = gain.beta();
    let mut vel: Vec<f64> = a_h
        .vel
        .iter()
        .zip(&a_r.vel)
        .map(|(h, r)| h + beta * (r - h))
        .collect();
    if let Some(limit) = a_max {
        clamp_axes(&mut vel, limit);
    }
    Action::new(vel, ActionKind::Blended)
}

/// Kinematic integration: `s' = s + dt * a`.
pub fn step(s: &State, a: &Action, dt: f64) -> Result<State> {
    if !(dt.is_finite() && dt > 0.0) {
        return Err(Error::InvalidParameter(format!("dt must be > 0, got {dt}")));
    }
    ensure_dim(s.dim(), a.dim())?;
    let coords = s.coords.iter().zip(&a.vel).map(|(x, v)| x + dt * v).collect();
    State::new(coords, s.time + dt)
}

pub fn clamp_axes(vel: &mut [f64], limit: f64) {
    for v in vel {
        *v = v.clamp(-limit, limit);
    }
}

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}
