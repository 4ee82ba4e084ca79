//! Kinematic point-mass worlds, simulated operators, and the closed loop that
//! couples a human source, an assistant, blending, and the dynamics.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_dim, Error, Result};
use crate::types::{
    blend, clamp_axes, distance, dot, norm, step, Action, ArbitrationGain, AssistDecision, Interaction,
    State, StateActionPair, DEFAULT_A_MAX, DEFAULT_DT,
};

pub const GOAL_RADIUS: f64 = 0.05;
pub const WAYPOINT_RADIUS: f64 = 0.02;
pub const MAX_STEPS: usize = 500;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoalTask {
    pub name: String,
    pub g: Vec<f64>,
    pub success_radius: f64,
}

impl GoalTask {
    pub fn new(name: impl Into<String>, g: Vec<f64>) -> Self {
        Self { name: name.into(), g, success_radius: GOAL_RADIUS }
    }
}

/// A waypoint chain; the robot starts at the first waypoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkillTask {
    pub name: String,
    pub waypoints: Vec<Vec<f64>>,
    pub visit_radius: f64,
}

impl SkillTask {
    pub fn new(name: impl Into<String>, waypoints: Vec<Vec<f64>>) -> Result<Self> {
        if waypoints.len() < 2 {
            return Err(Error::InvalidParameter("a skill needs at least 2 waypoints".into()));
        }
        for w in waypoints.windows(2) {
            ensure_dim(w[0].len(), w[1].len())?;
            if distance(&w[0], &w[1]) == 0.0 {
                return Err(Error::InvalidParameter("consecutive waypoints must differ".into()));
            }
        }
        Ok(Self { name: name.into(), waypoints, visit_radius: WAYPOINT_RADIUS })
    }

    /// Distance from `p` to the polyline through the waypoints.
    pub fn distance_to_path(&self, p: &[f64]) -> f64 {
        self.waypoints
            .windows(2)
            .map(|w| segment_distance(p, &w[0], &w[1]))
            .fold(f64::INFINITY, f64::min)
    }
}

fn segment_distance(p: &[f64], a: &[f64], b: &[f64]) -> f64 {
    let ab: Vec<f64> = b.iter().zip(a).map(|(b, a)| b - a).collect();
    let ap: Vec<f64> = p.iter().zip(a).map(|(p, a)| p - a).collect();
    let len2 = dot(&ab, &ab);
    let u = if len2 > 0.0 { (dot(&ap, &ab) / len2).clamp(0.0, 1.0) } else { 0.0 };
    let closest: Vec<f64> = a.iter().zip(&ab).map(|(a, d)| a + u * d).collect();
    distance(p, &closest)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Task {
    Goal(GoalTask),
    Skill(SkillTask),
}

impl Task {
    pub fn name(&self) -> &str {
        match self {
            Task::Goal(g) => &g.name,
            Task::Skill(s) => &s.name,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Task::Goal(g) => g.g.len(),
            Task::Skill(s) => s.waypoints[0].len(),
        }
    }

    /// Point the task finishes at.
    pub fn final_point(&self) -> &[f64] {
        match self {
            Task::Goal(g) => &g.g,
            Task::Skill(s) => &s.waypoints[s.waypoints.len() - 1],
        }
    }

    pub fn new_progress(&self) -> Progress {
        Progress { next: usize::from(matches!(self, Task::Skill(_))) }
    }

    /// Current point to move toward.
    pub fn target(&self, progress: &Progress) -> &[f64] {
        match self {
            Task::Goal(g) => &g.g,
            Task::Skill(s) => &s.waypoints[progress.next.min(s.waypoints.len() - 1)],
        }
    }

    pub fn is_complete(&self, s: &[f64], progress: &Progress) -> bool {
        match self {
            Task::Goal(g) => distance(s, &g.g) <= g.success_radius,
            Task::Skill(sk) => progress.next >= sk.waypoints.len(),
        }
    }
}

/// How far along a skill the robot has come.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Progress {
    next: usize,
}

impl Progress {
    /// Marks waypoints within the visit radius of `s` as visited, in order.
    pub fn update(&mut self, task: &Task, s: &[f64]) {
        if let Task::Skill(sk) = task {
            while self.next < sk.waypoints.len() && distance(s, &sk.waypoints[self.next]) <= sk.visit_radius {
                self.next += 1;
            }
        }
    }

    pub fn visited(&self) -> usize {
        self.next
    }
}

/// A named workspace: start configuration plus its tasks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct World {
    pub name: String,
    pub d: usize,
    pub start: Vec<f64>,
    /// Tasks that demonstrations are collected for.
    pub tasks: Vec<Task>,
    /// Tasks that are never demonstrated.
    pub novel: Vec<Task>,
    pub note: String,
}

impl World {
    pub fn task(&self, name: &str) -> Option<&Task> {
        self.tasks.iter().chain(&self.novel).find(|t| t.name() == name)
    }

    /// Initial state for `task`: a skill starts on its first waypoint.
    pub fn start_for(&self, task: &Task) -> Result<State> {
        match task {
            Task::Goal(_) => State::at(self.start.clone()),
            Task::Skill(s) => State::at(s.waypoints[0].clone()),
        }
    }

    pub fn goals(&self) -> impl Iterator<Item = &GoalTask> {
        self.tasks.iter().filter_map(|t| match t {
            Task::Goal(g) => Some(g),
            Task::Skill(_) => None,
        })
    }

    pub fn skills(&self) -> impl Iterator<Item = &SkillTask> {
        self.tasks.iter().filter_map(|t| match t {
            Task::Skill(s) => Some(s),
            Task::Goal(_) => None,
        })
    }
}

/// The named world catalog. Random layouts are drawn from `seed`.
pub fn standard_worlds(seed: u64) -> Vec<World> {
    vec![
        table3(),
        drawer(),
        glass(),
        random_goals(20, seed),
        kitchen(8),
        far3(),
    ]
}

pub fn world(name: &str, seed: u64) -> Result<World> {
    standard_worlds(seed)
        .into_iter()
        .find(|w| w.name == name)
        .ok_or_else(|| Error::InvalidParameter(format!("unknown world {name:?}")))
}

fn goal(name: &str, g: &[f64]) -> Task {
    Task::Goal(GoalTask::new(name, g.to_vec()))
}

/// Catalog skills accept a waypoint at the goal success radius.
fn skill(name: &str, waypoints: &[[f64; 2]]) -> Task {
    let mut sk = SkillTask::new(name, waypoints.iter().map(|w| w.to_vec()).collect()).expect("catalog skill is valid");
    sk.visit_radius = GOAL_RADIUS;
    Task::Skill(sk)
}

fn table3() -> World {
    World {
        name: "table3".into(),
        d: 2,
        start: vec![0.0, 0.0],
        tasks: vec![
            goal("left", &[-0.5, 0.6]),
            goal("center", &[0.05, 0.75]),
            goal("right", &[0.6, 0.45]),
        ],
        novel: vec![goal("behind", &[-0.6, -0.6])],
        note: "three reachable goals on a table".into(),
    }
}

fn drawer() -> World {
    World {
        name: "drawer".into(),
        d: 2,
        start: vec![0.0, 0.0],
        tasks: vec![skill("drawer", &[[0.0, 0.0], [0.45, 0.1], [0.45, 0.45]])],
        novel: vec![goal("cup", &[-0.45, 0.4]), goal("far", &[-0.7, -0.7])],
        note: "geometric analog of reaching and pulling a drawer, plus a cup goal".into(),
    }
}

fn glass() -> World {
    World {
        name: "glass".into(),
        d: 2,
        start: vec![0.0, 0.0],
        tasks: vec![skill("lift", &[[0.0, 0.0], [0.35, 0.05], [0.4, 0.45]])],
        novel: vec![goal("far", &[-0.7, -0.6])],
        note: "geometric analog of grasping and lifting a glass".into(),
    }
}

fn far3() -> World {
    World {
        name: "space3".into(),
        d: 3,
        start: vec![0.0, 0.0, 0.0],
        tasks: vec![goal("up", &[0.3, 0.2, 0.5]), goal("side", &[0.5, -0.3, 0.1])],
        novel: vec![goal("far", &[-0.6, 0.4, -0.5])],
        note: "three-dimensional goals".into(),
    }
}

/// `n` goals in the unit box around a central start, separated from each other and the start.
pub fn random_goals(n: usize, seed: u64) -> World {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let start = vec![0.5, 0.5];
    let mut goals: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut separation: f64 = 0.2;
    let mut attempts = 0;
    while goals.len() < n {
        let g = vec![rng.random::<f64>(), rng.random::<f64>()];
        attempts += 1;
        if attempts % 1000 == 0 {
            separation *= 0.9;
        }
        if distance(&g, &start) < 0.25 || goals.iter().any(|h| distance(h, &g) < separation) {
            continue;
        }
        goals.push(g);
    }
    World {
        name: format!("goals{n}"),
        d: 2,
        start,
        tasks: goals
            .iter()
            .enumerate()
            .map(|(k, g)| goal(&format!("g{k}"), g))
            .collect(),
        novel: vec![goal("outside", &[-0.5, -0.5])],
        note: format!("{n} random goals in the unit box, seed {seed}"),
    }
}

/// `n` three-segment skills fanning out from a shared start.
pub fn kitchen(n: usize) -> World {
    let tasks = (0..n)
        .map(|k| {
            let theta = std::f64::consts::TAU * k as f64 / n as f64;
            let (u, v) = ([theta.cos(), theta.sin()], [-theta.sin(), theta.cos()]);
            let p = |a: f64, b: f64| [a * u[0] + b * v[0], a * u[1] + b * v[1]];
            skill(&format!("skill{k}"), &[[0.0, 0.0], p(0.25, 0.0), p(0.3, 0.2), p(0.5, 0.25)])
        })
        .collect();
    World {
        name: format!("kitchen{n}"),
        d: 2,
        start: vec![0.0, 0.0],
        tasks,
        novel: vec![],
        note: format!("geometric analog of {n} kitchen skills"),
    }
}

/// When a simulated operator gives input.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Engagement {
    Always,
    /// Drives for the first `seconds`, then stays silent.
    ReleaseAfter { seconds: f64 },
    /// Silent while the robot's own contribution already heads toward the
    /// target at no less than `speed_fraction` of the desired speed, within
    /// the angle whose cosine is `cos_threshold`.
    Satisficing { cos_threshold: f64, speed_fraction: f64 },
}

/// What a human source can see before acting.
#[derive(Debug, Clone, Copy)]
pub struct Observation<'a> {
    pub state: &'a State,
    /// Robot contribution `beta * a_r` applied on the previous step.
    pub last_assist: Option<&'a [f64]>,
}

/// Anything that produces human commands.
pub trait HumanSource {
    fn reset(&mut self) {}
    fn act(&mut self, obs: &Observation, rng: &mut dyn RngCore) -> Result<Action>;
}

/// Human policy `N(target - s, Sigma)` clamped to `a_max`.
#[derive(Debug, Clone)]
pub struct GaussianOperator {
    task: Task,
    sigma: DMatrix<f64>,
    factor: DMatrix<f64>,
    a_max: f64,
    engagement: Engagement,
    progress: Progress,
}

impl GaussianOperator {
    pub fn new(task: Task, sigma: DMatrix<f64>, a_max: f64, engagement: Engagement) -> Result<Self> {
        let d = task.dim();
        if sigma.nrows() != d || sigma.ncols() != d {
            return Err(Error::DimensionMismatch { expected: d, got: sigma.nrows() });
        }
        let factor = psd_factor(&sigma)?;
        let progress = task.new_progress();
        Ok(Self { task, sigma, factor, a_max, engagement, progress })
    }

    /// Isotropic operator with standard deviation `sigma` on each axis.
    pub fn isotropic(task: Task, sigma: f64, engagement: Engagement) -> Result<Self> {
        let d = task.dim();
        Self::new(task, DMatrix::identity(d, d) * (sigma * sigma), DEFAULT_A_MAX, engagement)
    }

    pub fn task(&self) -> &Task {
        &self.task
    }

    pub fn sigma(&self) -> &DMatrix<f64> {
        &self.sigma
    }

    /// Noise-free command toward the current target.
    pub fn mean_action(&self, s: &State) -> Vec<f64> {
        let target = self.task.target(&self.progress);
        let mut mean: Vec<f64> = target.iter().zip(s.coords()).map(|(t, x)| t - x).collect();
        clamp_axes(&mut mean, self.a_max);
        mean
    }

    /// One draw from the operator at `s`, ignoring engagement.
    pub fn sample(&mut self, s: &State, rng: &mut dyn RngCore) -> Result<Action> {
        ensure_dim(self.task.dim(), s.dim())?;
        self.progress.update(&self.task, s.coords());
        let target = self.task.target(&self.progress);
        let noise = DVector::from_fn(s.dim(), |_, _| rng.sample::<f64, _>(StandardNormal));
        let shaped = &self.factor * noise;
        let mut a: Vec<f64> = target
            .iter()
            .zip(s.coords())
            .zip(shaped.iter())
            .map(|((t, x), n)| t - x + n)
            .collect();
        clamp_axes(&mut a, self.a_max);
        Action::human(a)
    }
}

impl HumanSource for GaussianOperator {
    fn reset(&mut self) {
        self.progress = self.task.new_progress();
    }

    fn act(&mut self, obs: &Observation, rng: &mut dyn RngCore) -> Result<Action> {
        let s = obs.state;
        let a = self.sample(s, rng)?;
        let silent = match self.engagement {
            Engagement::Always => false,
            Engagement::ReleaseAfter { seconds } => s.time() >= seconds - 1e-9,
            Engagement::Satisficing { cos_threshold, speed_fraction } => match obs.last_assist {
                None => false,
                Some(assist) => {
                    let want = self.mean_action(s);
                    let (nw, na) = (norm(&want), norm(assist));
                    nw > 0.0 && na >= speed_fraction * nw && dot(&want, assist) >= cos_threshold * nw * na
                }
            },
        };
        if silent {
            Ok(Action::zero(s.dim(), crate::types::ActionKind::Human))
        } else {
            Ok(a)
        }
    }
}

/// A human that never gives input.
#[derive(Debug, Clone, Copy, Default)]
pub struct SilentHuman;

impl HumanSource for SilentHuman {
    fn act(&mut self, obs: &Observation, _rng: &mut dyn RngCore) -> Result<Action> {
        Ok(Action::zero(obs.state.dim(), crate::types::ActionKind::Human))
    }
}

/// Lower factor `L` with `L L^T = sigma`, tolerating semidefinite input.
fn psd_factor(sigma: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if sigma.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("covariance"));
    }
    if (sigma - sigma.transpose()).amax() > 1e-12 * (1.0 + sigma.amax()) {
        return Err(Error::InvalidParameter("covariance must be symmetric".into()));
    }
    if let Some(c) = sigma.clone().cholesky() {
        return Ok(c.l());
    }
    let eig = sigma.clone().symmetric_eigen();
    if eig.eigenvalues.iter().any(|&l| l < -1e-12 * (1.0 + sigma.amax())) {
        return Err(Error::NotPositiveDefinite);
    }
    let root = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| l.max(0.0).sqrt()));
    Ok(&eig.eigenvectors * root)
}

/// A policy that proposes robot actions and how much to trust them.
pub trait Assistant {
    fn name(&self) -> &str;
    fn dim(&self) -> usize;
    /// Forgets the in-progress interaction.
    fn reset(&mut self);
    fn decide(&mut self, s: &State, a_h: &Action, rng: &mut dyn RngCore) -> Result<AssistDecision>;
}

/// Leaves the human in full control.
#[derive(Debug, Clone, Copy)]
pub struct NoAssist {
    pub d: usize,
}

impl Assistant for NoAssist {
    fn name(&self) -> &str {
        "none"
    }

    fn dim(&self) -> usize {
        self.d
    }

    fn reset(&mut self) {}

    fn decide(&mut self, s: &State, _a_h: &Action, _rng: &mut dyn RngCore) -> Result<AssistDecision> {
        Ok(AssistDecision::none(s.dim()))
    }
}

/// Result of one control period.
#[derive(Debug, Clone)]
pub struct TickOutcome {
    pub decision: AssistDecision,
    pub blended: Action,
    pub next: State,
}

/// Arbitrate, blend, and integrate once.
pub fn tick(
    assistant: &mut dyn Assistant,
    s: &State,
    a_h: &Action,
    a_max: Option<f64>,
    dt: f64,
    rng: &mut dyn RngCore,
) -> Result<TickOutcome> {
    let decision = assistant.decide(s, a_h, rng)?;
    let blended = blend(a_h, &decision.a_r, decision.gain, a_max)?;
    let next = step(s, &blended, dt)?;
    Ok(TickOutcome { decision, blended, next })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EpisodeConfig {
    pub dt: f64,
    pub max_steps: usize,
    pub a_max: Option<f64>,
    pub stop_on_success: bool,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        Self { dt: DEFAULT_DT, max_steps: MAX_STEPS, a_max: Some(DEFAULT_A_MAX), stop_on_success: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Outcome {
    pub final_state: Vec<f64>,
    pub success: bool,
    pub steps: usize,
    pub sim_time: f64,
    pub waypoints_visited: usize,
}

/// Everything that happened in one episode, one entry per control period.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeLog {
    pub interaction: Interaction,
    pub robot_actions: Vec<Action>,
    pub betas: Vec<f64>,
    pub beta_max: Vec<f64>,
    pub blended: Vec<Action>,
    pub task: Task,
    pub assistant: String,
    pub outcome: Outcome,
}

#[derive(Serialize, Deserialize)]
struct LogDoc {
    dt: f64,
    d: usize,
    pairs: Vec<LogPair>,
    label: Option<String>,
    task: Task,
    assistant: String,
    outcome: Outcome,
}

#[derive(Serialize, Deserialize)]
struct LogPair {
    s: Vec<f64>,
    ah: Vec<f64>,
    t: f64,
    assist: AssistDoc,
}

#[derive(Serialize, Deserialize)]
struct AssistDoc {
    ar: Vec<f64>,
    beta: f64,
    beta_max: f64,
    blended: Vec<f64>,
}

impl EpisodeLog {
    pub fn len(&self) -> usize {
        self.betas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.betas.is_empty()
    }

    pub fn dt(&self) -> f64 {
        self.interaction.dt()
    }

    pub fn to_json(&self) -> String {
        let doc = LogDoc {
            dt: self.dt(),
            d: self.interaction.dim(),
            pairs: self
                .interaction
                .pairs()
                .iter()
                .enumerate()
                .map(|(k, p)| LogPair {
                    s: p.state().coords().to_vec(),
                    ah: p.human_action().vel().to_vec(),
                    t: p.state().time(),
                    assist: AssistDoc {
                        ar: self.robot_actions[k].vel().to_vec(),
                        beta: self.betas[k],
                        beta_max: self.beta_max[k],
                        blended: self.blended[k].vel().to_vec(),
                    },
                })
                .collect(),
            label: self.interaction.label().map(str::to_owned),
            task: self.task.clone(),
            assistant: self.assistant.clone(),
            outcome: self.outcome.clone(),
        };
        serde_json::to_string(&doc).expect("episode log serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: LogDoc = serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        if doc.pairs.is_empty() {
            return Err(Error::Parse("episode log has no steps".into()));
        }
        let mut pairs = Vec::with_capacity(doc.pairs.len());
        let mut robot_actions = Vec::with_capacity(doc.pairs.len());
        let mut betas = Vec::with_capacity(doc.pairs.len());
        let mut beta_max = Vec::with_capacity(doc.pairs.len());
        let mut blended = Vec::with_capacity(doc.pairs.len());
        for (index, p) in doc.pairs.into_iter().enumerate() {
            let bad = |e: Error| Error::ParseRecord { index, msg: e.to_string() };
            if p.s.len() != doc.d {
                return Err(bad(Error::DimensionMismatch { expected: doc.d, got: p.s.len() }));
            }
            let pair = StateActionPair::new(State::new(p.s, p.t).map_err(bad)?, Action::human(p.ah).map_err(bad)?)
                .map_err(bad)?;
            pairs.push(pair);
            robot_actions.push(Action::robot(p.assist.ar).map_err(bad)?);
            ArbitrationGain::new(p.assist.beta, p.assist.beta_max).map_err(bad)?;
            betas.push(p.assist.beta);
            beta_max.push(p.assist.beta_max);
            blended.push(Action::new(p.assist.blended, crate::types::ActionKind::Blended).map_err(bad)?);
        }
        Ok(Self {
            interaction: Interaction::new(pairs, doc.dt, doc.label)?,
            robot_actions,
            betas,
            beta_max,
            blended,
            task: doc.task,
            assistant: doc.assistant,
            outcome: doc.outcome,
        })
    }
}

/// Closed-loop episode. Human and assistant randomness come from separate
/// streams derived from `seed`, so an assistant that never acts leaves the
/// human's trajectory unchanged.
pub fn run_episode(
    assistant: &mut dyn Assistant,
    human: &mut dyn HumanSource,
    task: &Task,
    start: &State,
    cfg: &EpisodeConfig,
    seed: u64,
) -> Result<EpisodeLog> {
    let d = start.dim();
    ensure_dim(d, assistant.dim())?;
    ensure_dim(d, task.dim())?;
    if cfg.max_steps == 0 {
        return Err(Error::InvalidParameter("max_steps must be positive".into()));
    }
    let mut human_rng = ChaCha8Rng::seed_from_u64(seed);
    let mut assist_rng = ChaCha8Rng::seed_from_u64(seed ^ 0xa55_1570);
    assistant.reset();
    human.reset();

    let mut progress = task.new_progress();
    let mut s = start.clone();
    progress.update(task, s.coords());
    let mut pairs = Vec::new();
    let mut robot_actions = Vec::new();
    let mut betas = Vec::new();
    let mut beta_max = Vec::new();
    let mut blended_log = Vec::new();
    let mut last_assist: Option<Vec<f64>> = None;

    for _ in 0..cfg.max_steps {
        if cfg.stop_on_success && !pairs.is_empty() && task.is_complete(s.coords(), &progress) {
            break;
        }
        let obs = Observation { state: &s, last_assist: last_assist.as_deref() };
        let a_h = human.act(&obs, &mut human_rng)?;
        ensure_dim(d, a_h.dim())?;
        let out = tick(assistant, &s, &a_h, cfg.a_max, cfg.dt, &mut assist_rng)?;
        let beta = out.decision.gain.beta();
        last_assist = Some(out.decision.a_r.vel().iter().map(|r| beta * r).collect());
        pairs.push(StateActionPair::new(s, a_h)?);
        robot_actions.push(out.decision.a_r);
        betas.push(beta);
        beta_max.push(out.decision.gain.beta_max());
        blended_log.push(out.blended);
        s = out.next;
        progress.update(task, s.coords());
    }

    let steps = pairs.len();
    let outcome = Outcome {
        success: task.is_complete(s.coords(), &progress),
        final_state: s.coords().to_vec(),
        steps,
        sim_time: steps as f64 * cfg.dt,
        waypoints_visited: progress.visited(),
    };
    Ok(EpisodeLog {
        interaction: Interaction::new(pairs, cfg.dt, Some(task.name().to_owned()))?,
        robot_actions,
        betas,
        beta_max,
        blended: blended_log,
        task: task.clone(),
        assistant: assistant.name().to_owned(),
        outcome,
    })
}

/// Unassisted demonstrations from an operator with isotropic noise `sigma`.
pub fn demonstrations(
    world: &World,
    task: &Task,
    sigma: f64,
    count: usize,
    cfg: &EpisodeConfig,
    seed: u64,
) -> Result<Vec<Interaction>> {
    let start = world.start_for(task)?;
    let mut none = NoAssist { d: world.d };
    (0..count)
        .map(|k| {
            let mut op = GaussianOperator::isotropic(task.clone(), sigma, Engagement::Always)?;
            let log = run_episode(&mut none, &mut op, task, &start, cfg, seed.wrapping_add(k as u64))?;
            Ok(log.interaction)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn segment_distance_cases() {
        assert!((segment_distance(&[0.5, 1.0], &[0.0, 0.0], &[1.0, 0.0]) - 1.0).abs() < 1e-15);
        assert!((segment_distance(&[2.0, 0.0], &[0.0, 0.0], &[1.0, 0.0]) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn psd_factor_handles_singular() {
        let z = DMatrix::zeros(2, 2);
        assert_eq!(psd_factor(&z).unwrap(), DMatrix::zeros(2, 2));
        let bad = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        assert!(psd_factor(&bad).is_err());
    }

    #[test]
    fn progress_advances_in_order() {
        let task = skill("s", &[[0.0, 0.0], [1.0, 0.0], [1.0, 1.0]]);
        let mut p = task.new_progress();
        p.update(&task, &[1.0, 1.0]);
        assert_eq!(p.visited(), 1);
        p.update(&task, &[1.0, 0.01]);
        assert_eq!(p.visited(), 2);
        p.update(&task, &[1.0, 0.99]);
        assert!(task.is_complete(&[1.0, 0.99], &p));
    }
}
