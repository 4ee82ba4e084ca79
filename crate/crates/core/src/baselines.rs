//! Comparison assistants: behavior cloning without a latent task (DAgger),
//! its uncertainty-gated variants (dropout and ensembles), and Bayesian
//! inference over a known goal set.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_dim, Error, Result};
use crate::neural::{self, Activation, Checkpoint, Loss, Mlp, Mode, TrainConfig};
use crate::sari::{augment, demos, SILENCE};
use crate::sim::{Assistant, GoalTask};
use crate::types::{clamp_axes, norm, Action, ArbitrationGain, AssistDecision, Dataset, State, DEFAULT_A_MAX};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineConfig {
    pub hidden_width: usize,
    pub layers: usize,
    pub activation: Activation,
    pub k_augment: usize,
    pub sigma_augment: f64,
    pub beta_max: f64,
    pub dropout: f64,
    pub n_samples: usize,
    pub members: usize,
    pub train: TrainConfig,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self {
            hidden_width: 64,
            layers: 4,
            activation: Activation::Tanh,
            k_augment: 5,
            sigma_augment: 0.01,
            beta_max: 1.0,
            dropout: 0.1,
            n_samples: 20,
            members: 20,
            train: TrainConfig::default(),
        }
    }
}

/// Regression samples `(s_k ++ a_{k-1}) -> a_k` over non-silent targets.
fn regression_samples(data: &Dataset, cfg: &BaselineConfig) -> Result<Vec<(Vec<f64>, Vec<f64>)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.train.seed ^ 0x5eed_da7a);
    let augmented = augment(data, cfg.k_augment, cfg.sigma_augment, &mut rng)?;
    let d = data.dim();
    let mut samples = Vec::new();
    for demo in demos(&augmented) {
        for k in 0..demo.states.len() {
            if norm(&demo.actions[k]) <= SILENCE {
                continue;
            }
            let mut x = demo.states[k].clone();
            if k == 0 {
                x.extend(std::iter::repeat_n(0.0, d));
            } else {
                x.extend_from_slice(&demo.actions[k - 1]);
            }
            samples.push((x, demo.actions[k].clone()));
        }
    }
    if samples.is_empty() {
        return Err(Error::InvalidParameter("dataset has no human input".into()));
    }
    Ok(samples)
}

fn fit_policy(samples: &[(Vec<f64>, Vec<f64>)], d: usize, dropout: f64, seed: u64, cfg: &BaselineConfig) -> Result<Mlp> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut net = Mlp::init(2 * d, &vec![cfg.hidden_width; cfg.layers], d, cfg.activation, dropout, &mut rng)?;
    let mut train = cfg.train;
    train.seed = seed;
    neural::fit(&mut net, samples, Loss::SquaredError, &train, &mut rng)?;
    Ok(net)
}

/// Holds the latest non-silent human command as policy context.
#[derive(Debug, Clone, Default)]
struct HeldCommand {
    last: Option<Vec<f64>>,
}

impl HeldCommand {
    fn observe(&mut self, a_h: &Action) {
        if a_h.norm() > SILENCE {
            self.last = Some(a_h.vel().to_vec());
        }
    }

    fn input(&self, s: &State) -> Vec<f64> {
        let mut x = s.coords().to_vec();
        match &self.last {
            Some(a) => x.extend_from_slice(a),
            None => x.extend(std::iter::repeat_n(0.0, s.dim())),
        }
        x
    }
}

/// Behavior cloning from state and previous command; always at `beta_max`.
#[derive(Debug, Clone, PartialEq)]
pub struct DaggerModel {
    pub policy: Mlp,
    pub beta_max: f64,
}

pub fn dagger_train(data: &Dataset, cfg: &BaselineConfig) -> Result<DaggerModel> {
    let samples = regression_samples(data, cfg)?;
    let policy = fit_policy(&samples, data.dim(), 0.0, cfg.train.seed, cfg)?;
    Ok(DaggerModel { policy, beta_max: cfg.beta_max })
}

#[derive(Debug, Clone)]
pub struct DaggerAssistant {
    model: DaggerModel,
    held: HeldCommand,
}

impl DaggerAssistant {
    pub fn new(model: DaggerModel) -> Self {
        Self { model, held: HeldCommand::default() }
    }
}

impl Assistant for DaggerAssistant {
    fn name(&self) -> &str {
        "dagger"
    }

    fn dim(&self) -> usize {
        self.model.policy.output_width()
    }

    fn reset(&mut self) {
        self.held = HeldCommand::default();
    }

    fn decide(&mut self, s: &State, a_h: &Action, _rng: &mut dyn RngCore) -> Result<AssistDecision> {
        ensure_dim(self.dim(), s.dim())?;
        self.held.observe(a_h);
        let a_r = Action::robot(self.model.policy.predict(&self.held.input(s))?)?;
        let gain = ArbitrationGain::new(self.model.beta_max, self.model.beta_max)?;
        Ok(AssistDecision { a_r, gain, z_used: None })
    }
}

/// Gain from predictive variance: `min(beta_max, exp(-scale * variance))`.
pub fn variance_gain(variance: f64, scale: f64, beta_max: f64) -> Result<ArbitrationGain> {
    let raw = if variance.is_finite() { (-scale * variance).exp() } else { 0.0 };
    ArbitrationGain::saturated(raw.min(beta_max), beta_max)
}

/// Mean across samples and the per-axis variance averaged over axes.
fn moments(samples: &[Vec<f64>]) -> (Vec<f64>, f64) {
    let n = samples.len() as f64;
    let d = samples[0].len();
    let mut mean = vec![0.0; d];
    for s in samples {
        mean.iter_mut().zip(s).for_each(|(m, x)| *m += x / n);
    }
    if samples.len() < 2 {
        return (mean, 0.0);
    }
    let mut var = 0.0;
    for s in samples {
        var += s.iter().zip(&mean).map(|(x, m)| (x - m) * (x - m)).sum::<f64>();
    }
    (mean, var / ((n - 1.0) * d as f64))
}

/// Monte Carlo dropout at inference.
#[derive(Debug, Clone, PartialEq)]
pub struct DropoutModel {
    pub policy: Mlp,
    pub n_samples: usize,
    pub variance_scale: f64,
    pub beta_max: f64,
}

pub fn dropout_train(data: &Dataset, cfg: &BaselineConfig) -> Result<DropoutModel> {
    if !(cfg.dropout > 0.0 && cfg.dropout < 1.0) {
        return Err(Error::InvalidParameter("dropout must be in (0, 1)".into()));
    }
    let samples = regression_samples(data, cfg)?;
    let policy = fit_policy(&samples, data.dim(), cfg.dropout, cfg.train.seed, cfg)?;
    Ok(DropoutModel { policy, n_samples: cfg.n_samples.max(2), variance_scale: 1.0, beta_max: cfg.beta_max })
}

#[derive(Debug, Clone)]
pub struct DropoutAssistant {
    model: DropoutModel,
    held: HeldCommand,
}

impl DropoutAssistant {
    pub fn new(model: DropoutModel) -> Self {
        Self { model, held: HeldCommand::default() }
    }
}

impl Assistant for DropoutAssistant {
    fn name(&self) -> &str {
        "dropout"
    }

    fn dim(&self) -> usize {
        self.model.policy.output_width()
    }

    fn reset(&mut self) {
        self.held = HeldCommand::default();
    }

    fn decide(&mut self, s: &State, a_h: &Action, rng: &mut dyn RngCore) -> Result<AssistDecision> {
        ensure_dim(self.dim(), s.dim())?;
        self.held.observe(a_h);
        let x = self.held.input(s);
        let outs = (0..self.model.n_samples)
            .map(|_| self.model.policy.forward(&x, Mode::Train, rng))
            .collect::<Result<Vec<_>>>()?;
        let (mean, var) = moments(&outs);
        Ok(AssistDecision {
            a_r: Action::robot(mean)?,
            gain: variance_gain(var, self.model.variance_scale, self.model.beta_max)?,
            z_used: None,
        })
    }
}

/// Independently seeded policies; disagreement gates assistance.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleModel {
    pub members: Vec<Mlp>,
    pub variance_scale: f64,
    pub beta_max: f64,
}

/// Member `k` uses seed `cfg.train.seed + k`, so member 0 equals the DAgger policy.
pub fn ensemble_train(data: &Dataset, cfg: &BaselineConfig) -> Result<EnsembleModel> {
    if cfg.members == 0 {
        return Err(Error::InvalidParameter("ensemble needs at least one member".into()));
    }
    let samples = regression_samples(data, cfg)?;
    let members = (0..cfg.members)
        .map(|k| fit_policy(&samples, data.dim(), 0.0, cfg.train.seed.wrapping_add(k as u64), cfg))
        .collect::<Result<Vec<_>>>()?;
    Ok(EnsembleModel { members, variance_scale: 1.0, beta_max: cfg.beta_max })
}

#[derive(Debug, Clone)]
pub struct EnsembleAssistant {
    model: EnsembleModel,
    held: HeldCommand,
}

impl EnsembleAssistant {
    pub fn new(model: EnsembleModel) -> Self {
        Self { model, held: HeldCommand::default() }
    }
}

impl Assistant for EnsembleAssistant {
    fn name(&self) -> &str {
        "ensemble"
    }

    fn dim(&self) -> usize {
        self.model.members[0].output_width()
    }

    fn reset(&mut self) {
        self.held = HeldCommand::default();
    }

    fn decide(&mut self, s: &State, a_h: &Action, _rng: &mut dyn RngCore) -> Result<AssistDecision> {
        ensure_dim(self.dim(), s.dim())?;
        self.held.observe(a_h);
        let x = self.held.input(s);
        let outs = self.model.members.iter().map(|m| m.predict(&x)).collect::<Result<Vec<_>>>()?;
        let (mean, var) = moments(&outs);
        Ok(AssistDecision {
            a_r: Action::robot(mean)?,
            gain: variance_gain(var, self.model.variance_scale, self.model.beta_max)?,
            z_used: None,
        })
    }
}

/// Smallest variance scale whose mean gain on every `unfamiliar` replay stays
/// below `0.1 * beta_max`; smaller scales give more assistance on familiar data.
///
/// `make` builds an assistant for a given scale; replays feed recorded pairs.
pub fn tune_variance_scale<A: Assistant>(
    make: impl Fn(f64) -> A,
    unfamiliar: &[crate::types::Interaction],
    beta_max: f64,
    seed: u64,
) -> Result<f64> {
    let limit = 0.1 * beta_max;
    let over = |scale: f64| -> Result<bool> {
        let mut a = make(scale);
        Ok(unfamiliar.iter().try_fold(false, |acc, i| {
            Ok::<bool, Error>(acc || mean_replay_gain(&mut a, i, seed)? >= limit)
        })?)
    };
    let (mut lo, mut hi) = (1e-6_f64, 1e-6_f64);
    while over(hi)? {
        lo = hi;
        hi *= 10.0;
        if hi > 1e12 {
            return Ok(hi);
        }
    }
    if hi == 1e-6 {
        return Ok(hi);
    }
    for _ in 0..40 {
        let mid = (lo * hi).sqrt();
        if over(mid)? {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(hi)
}

/// Mean gain an assistant assigns while a recorded interaction is replayed.
pub fn mean_replay_gain(assistant: &mut dyn Assistant, i: &crate::types::Interaction, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    assistant.reset();
    let mut total = 0.0;
    for p in i.pairs() {
        total += assistant.decide(p.state(), p.human_action(), &mut rng)?.gain.beta();
    }
    Ok(total / i.len() as f64)
}

/// Recursive Bayesian goal inference over a fixed goal list.
#[derive(Debug, Clone, PartialEq)]
pub struct BayesAssistant {
    pub goals: Vec<GoalTask>,
    pub prior: Vec<f64>,
    pub rationality: f64,
    pub beta_max: f64,
    pub a_max: f64,
    posterior: Vec<f64>,
}

impl BayesAssistant {
    pub fn new(goals: Vec<GoalTask>, rationality: f64, beta_max: f64) -> Result<Self> {
        let n = goals.len();
        Self::with_prior(goals, vec![1.0 / n.max(1) as f64; n], rationality, beta_max)
    }

    pub fn with_prior(goals: Vec<GoalTask>, prior: Vec<f64>, rationality: f64, beta_max: f64) -> Result<Self> {
        if goals.is_empty() {
            return Err(Error::InvalidParameter("at least one goal is required".into()));
        }
        ensure_dim(goals.len(), prior.len())?;
        let total: f64 = prior.iter().sum();
        if prior.iter().any(|p| !(*p >= 0.0)) || (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidParameter("prior must be a probability vector".into()));
        }
        if !(rationality > 0.0) {
            return Err(Error::InvalidParameter("rationality must be > 0".into()));
        }
        ArbitrationGain::new(0.0, beta_max)?;
        Ok(Self { posterior: prior.clone(), goals, prior, rationality, beta_max, a_max: DEFAULT_A_MAX })
    }

    pub fn posterior(&self) -> &[f64] {
        &self.posterior
    }

    /// Folds one observation into the posterior. Silence carries no evidence.
    pub fn update(&mut self, s: &State, a_h: &Action) -> Result<&[f64]> {
        ensure_dim(self.goals[0].g.len(), s.dim())?;
        ensure_dim(s.dim(), a_h.dim())?;
        let speed = a_h.norm();
        if speed <= SILENCE {
            return Ok(&self.posterior);
        }
        let dir: Vec<f64> = a_h.vel().iter().map(|v| v / speed).collect();
        let log_lik: Vec<f64> = self
            .goals
            .iter()
            .map(|g| {
                let to: Vec<f64> = g.g.iter().zip(s.coords()).map(|(g, s)| g - s).collect();
                let len = norm(&to);
                let mismatch = if len > 0.0 {
                    dir.iter().zip(&to).map(|(a, t)| (a - t / len).powi(2)).sum::<f64>()
                } else {
                    // Sitting on the goal: every direction is equally plausible.
                    2.0
                };
                -self.rationality * mismatch
            })
            .collect();
        let top = log_lik.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut post: Vec<f64> = self.posterior.iter().zip(&log_lik).map(|(p, l)| p * (l - top).exp()).collect();
        let total: f64 = post.iter().sum();
        if total > 0.0 && total.is_finite() {
            post.iter_mut().for_each(|p| *p /= total);
            self.posterior = post;
        }
        Ok(&self.posterior)
    }

    fn map_goal(&self) -> usize {
        let mut best = 0;
        for (k, p) in self.posterior.iter().enumerate() {
            if *p > self.posterior[best] {
                best = k;
            }
        }
        best
    }
}

impl Assistant for BayesAssistant {
    fn name(&self) -> &str {
        "bayes"
    }

    fn dim(&self) -> usize {
        self.goals[0].g.len()
    }

    fn reset(&mut self) {
        self.posterior = self.prior.clone();
    }

    fn decide(&mut self, s: &State, a_h: &Action, _rng: &mut dyn RngCore) -> Result<AssistDecision> {
        self.update(s, a_h)?;
        let k = self.map_goal();
        let mut a: Vec<f64> = self.goals[k].g.iter().zip(s.coords()).map(|(g, s)| g - s).collect();
        clamp_axes(&mut a, self.a_max);
        Ok(AssistDecision {
            a_r: Action::robot(a)?,
            gain: ArbitrationGain::saturated(self.posterior[k], self.beta_max)?,
            z_used: None,
        })
    }
}

/// Serialized baseline, tagged by `kind`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum BaselineCheckpoint {
    Dagger { policy: Checkpoint, beta_max: f64 },
    Dropout { policy: Checkpoint, n_samples: usize, variance_scale: f64, beta_max: f64 },
    Ensemble { members: Vec<Checkpoint>, variance_scale: f64, beta_max: f64 },
    Bayes { goals: Vec<GoalTask>, prior: Vec<f64>, rationality: f64, beta_max: f64 },
}

impl From<&DaggerModel> for BaselineCheckpoint {
    fn from(m: &DaggerModel) -> Self {
        Self::Dagger { policy: m.policy.to_checkpoint(), beta_max: m.beta_max }
    }
}

impl From<&DropoutModel> for BaselineCheckpoint {
    fn from(m: &DropoutModel) -> Self {
        Self::Dropout {
            policy: m.policy.to_checkpoint(),
            n_samples: m.n_samples,
            variance_scale: m.variance_scale,
            beta_max: m.beta_max,
        }
    }
}

impl From<&EnsembleModel> for BaselineCheckpoint {
    fn from(m: &EnsembleModel) -> Self {
        Self::Ensemble {
            members: m.members.iter().map(Mlp::to_checkpoint).collect(),
            variance_scale: m.variance_scale,
            beta_max: m.beta_max,
        }
    }
}

impl From<&BayesAssistant> for BaselineCheckpoint {
    fn from(b: &BayesAssistant) -> Self {
        Self::Bayes { goals: b.goals.clone(), prior: b.prior.clone(), rationality: b.rationality, beta_max: b.beta_max }
    }
}

impl BaselineCheckpoint {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("baseline serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))
    }

    /// Rebuilds a ready-to-run assistant.
    pub fn into_assistant(self) -> Result<Box<dyn Assistant + Send>> {
        Ok(match self {
            Self::Dagger { policy, beta_max } => {
                Box::new(DaggerAssistant::new(DaggerModel { policy: Mlp::from_checkpoint(policy)?, beta_max }))
            }
            Self::Dropout { policy, n_samples, variance_scale, beta_max } => Box::new(DropoutAssistant::new(DropoutModel {
                policy: Mlp::from_checkpoint(policy)?,
                n_samples,
                variance_scale,
                beta_max,
            })),
            Self::Ensemble { members, variance_scale, beta_max } => Box::new(EnsembleAssistant::new(EnsembleModel {
                members: members.into_iter().map(Mlp::from_checkpoint).collect::<Result<Vec<_>>>()?,
                variance_scale,
                beta_max,
            })),
            Self::Bayes { goals, prior, rationality, beta_max } => {
                Box::new(BayesAssistant::with_prior(goals, prior, rationality, beta_max)?)
            }
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn variance_gain_limits() {
        assert_eq!(variance_gain(0.0, 3.0, 0.6).unwrap().beta(), 0.6);
        assert_eq!(variance_gain(f64::INFINITY, 3.0, 0.6).unwrap().beta(), 0.0);
        assert!(variance_gain(1e6, 3.0, 1.0).unwrap().beta() < 1e-12);
    }

    #[test]
    fn moments_of_identical_samples() {
        let (m, v) = moments(&[vec![1.0, 2.0], vec![1.0, 2.0]]);
        assert_eq!(m, vec![1.0, 2.0]);
        assert_eq!(v, 0.0);
    }
}
