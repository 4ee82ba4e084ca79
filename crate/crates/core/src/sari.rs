//! Recognize, replicate, return.
//!
//! An encoder embeds the human's recent (state, command) pairs into a latent
//! task, a policy maps (state, latent) to the action the human would take,
//! and a discriminator scores whether the pairs look like anything in the
//! training data. Its "seen" probability, capped at `beta_max`, becomes the
//! arbitration gain.

use std::sync::Arc;

use nalgebra::DMatrix;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{ensure_dim, Error, Result};
use crate::neural::{self, Activation, Checkpoint, Gradients, Loss, Mlp, Mode, OptimizerState, TrainConfig};
use crate::sim::Assistant;
use crate::types::{
    norm, Action, ActionKind, ArbitrationGain, AssistDecision, Dataset, Interaction, LatentTask, State,
};

/// Discriminator output index of the "seen" class.
pub const SEEN: usize = 1;

pub const LOG_VAR_MIN: f64 = -10.0;
pub const LOG_VAR_MAX: f64 = 4.0;

/// Commands at or below this norm count as silence.
pub const SILENCE: f64 = 1e-9;

const DEFORM_EPS: f64 = 1e-6;

/// Architecture and training hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SariConfig {
    pub d_z: usize,
    pub hidden_width: usize,
    pub encoder_layers: usize,
    pub policy_layers: usize,
    pub discriminator_layers: usize,
    pub activation: Activation,
    /// Number of most recent pairs the encoder and discriminator see.
    pub window: usize,
    pub lambda_kl: f64,
    pub k_augment: usize,
    pub sigma_augment: f64,
    pub n_deformed: usize,
    pub deform_min: f64,
    pub deform_max: f64,
    pub beta_max: f64,
    pub train: TrainConfig,
    /// Epochs for the discriminator; `train.epochs` when absent.
    pub discriminator_epochs: Option<usize>,
}

impl Default for SariConfig {
    fn default() -> Self {
        Self {
            d_z: 2,
            hidden_width: 64,
            encoder_layers: 5,
            policy_layers: 4,
            discriminator_layers: 4,
            activation: Activation::Tanh,
            window: 1,
            lambda_kl: 1e-3,
            k_augment: 5,
            sigma_augment: 0.01,
            n_deformed: 5,
            deform_min: 0.05,
            deform_max: 0.3,
            beta_max: 1.0,
            train: TrainConfig::default(),
            discriminator_epochs: None,
        }
    }
}

impl SariConfig {
    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if self.d_z == 0 || self.hidden_width == 0 || self.window == 0 {
            return Err(Error::InvalidParameter("d_z, hidden_width and window must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.beta_max) {
            return Err(Error::InvalidParameter(format!("beta_max must be in [0, 1], got {}", self.beta_max)));
        }
        if self.sigma_augment < 0.0 || self.lambda_kl < 0.0 {
            return Err(Error::InvalidParameter("sigma_augment and lambda_kl must be >= 0".into()));
        }
        if !(0.0 <= self.deform_min && self.deform_min <= self.deform_max) {
            return Err(Error::InvalidParameter("deform range must satisfy 0 <= min <= max".into()));
        }
        Ok(())
    }
}

/// Checkpoint metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SariMeta {
    pub d: usize,
    pub dz: usize,
    pub dt: f64,
    pub beta_max: f64,
    pub seed: u64,
    pub hyper: SariConfig,
}

/// Trained encoder, policy, and discriminator.
#[derive(Debug, Clone, PartialEq)]
pub struct SariModel {
    encoder: Mlp,
    policy: Mlp,
    discriminator: Mlp,
    meta: SariMeta,
}

#[derive(Serialize, Deserialize)]
struct Bundle {
    encoder: Checkpoint,
    policy: Checkpoint,
    discriminator: Checkpoint,
    meta: SariMeta,
}

/// Loss curves from one training run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    /// Reconstruction loss of the untrained encoder/policy pair.
    pub initial_policy_loss: f64,
    /// Mean reconstruction + KL loss per epoch.
    pub policy_loss: Vec<f64>,
    pub discriminator_loss: Vec<f64>,
}

/// One (state, human action) observation as raw coordinates.
pub type PairRef<'a> = (&'a [f64], &'a [f64]);

impl SariModel {
    /// Freshly initialized networks, as used before any data exists.
    pub fn untrained(d: usize, dt: f64, cfg: &SariConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.train.seed);
        let (encoder, policy, discriminator) = init_networks(d, cfg, &mut rng)?;
        Self::from_parts(encoder, policy, discriminator, meta(d, dt, cfg))
    }

    pub fn from_parts(encoder: Mlp, policy: Mlp, discriminator: Mlp, meta: SariMeta) -> Result<Self> {
        let (d, dz, w) = (meta.d, meta.dz, meta.hyper.window);
        ensure_dim(2 * d * w, encoder.input_width())?;
        ensure_dim(2 * dz, encoder.output_width())?;
        ensure_dim(d + dz, policy.input_width())?;
        ensure_dim(d, policy.output_width())?;
        ensure_dim(2 * d * w, discriminator.input_width())?;
        ensure_dim(2, discriminator.output_width())?;
        ArbitrationGain::new(0.0, meta.beta_max)?;
        Ok(Self { encoder, policy, discriminator, meta })
    }

    pub fn dim(&self) -> usize {
        self.meta.d
    }

    pub fn latent_dim(&self) -> usize {
        self.meta.dz
    }

    pub fn window(&self) -> usize {
        self.meta.hyper.window
    }

    pub fn beta_max(&self) -> f64 {
        self.meta.beta_max
    }

    pub fn meta(&self) -> &SariMeta {
        &self.meta
    }

    pub fn encoder(&self) -> &Mlp {
        &self.encoder
    }

    pub fn policy(&self) -> &Mlp {
        &self.policy
    }

    pub fn discriminator(&self) -> &Mlp {
        &self.discriminator
    }

    /// Same networks with a different arbitration cap.
    pub fn with_beta_max(&self, beta_max: f64) -> Result<Self> {
        ArbitrationGain::new(0.0, beta_max)?;
        let mut next = self.clone();
        next.meta.beta_max = beta_max;
        Ok(next)
    }

    /// Latent task from the most recent pair; `z` is the mean.
    pub fn encode(&self, s: &State, a_h: &Action) -> Result<LatentTask> {
        self.encode_history(&[(s.coords(), a_h.vel())], None::<&mut ChaCha8Rng>)
    }

    /// Latent task with `z` drawn by reparameterization.
    pub fn encode_sample<R: Rng + ?Sized>(&self, s: &State, a_h: &Action, rng: &mut R) -> Result<LatentTask> {
        self.encode_history(&[(s.coords(), a_h.vel())], Some(rng))
    }

    /// Encodes `history` (oldest first). With an rng `z` is sampled, otherwise `z = mean`.
    pub fn encode_history<R: Rng + ?Sized>(&self, history: &[PairRef], rng: Option<&mut R>) -> Result<LatentTask> {
        let x = self.context(history)?;
        let out = self.encoder.predict(&x)?;
        let (mean, log_var) = split_latent(&out, self.meta.dz);
        let z = match rng {
            None => mean.clone(),
            Some(rng) => reparameterize(&mean, &log_var, rng).0,
        };
        finite(&z, "latent")?;
        Ok(LatentTask { z, mean, log_var })
    }

    /// Policy output at `s` for latent `z`.
    pub fn assist_action(&self, s: &State, z: &[f64]) -> Result<Action> {
        ensure_dim(self.meta.d, s.dim())?;
        ensure_dim(self.meta.dz, z.len())?;
        let mut x = s.coords().to_vec();
        x.extend_from_slice(z);
        let a = self.policy.predict(&x)?;
        finite(&a, "policy output")?;
        Action::robot(a)
    }

    /// Probability that the most recent pair was seen in training.
    pub fn confidence(&self, s: &State, a_h: &Action) -> Result<f64> {
        self.confidence_history(&[(s.coords(), a_h.vel())])
    }

    pub fn confidence_history(&self, history: &[PairRef]) -> Result<f64> {
        let x = self.context(history)?;
        let logits = self.discriminator.predict(&x)?;
        let p = neural::softmax(&logits)[SEEN];
        if p.is_finite() {
            Ok(p)
        } else {
            Err(Error::NonFinite("confidence"))
        }
    }

    /// Encode, act, and gate from the current pair.
    pub fn arbitrate(&self, s: &State, a_h: &Action) -> Result<AssistDecision> {
        self.arbitrate_history(s, &[(s.coords(), a_h.vel())])
    }

    /// Arbitration at state `s` with context `history` (oldest first).
    pub fn arbitrate_history(&self, s: &State, history: &[PairRef]) -> Result<AssistDecision> {
        let latent = self.encode_history(history, None::<&mut ChaCha8Rng>)?;
        let a_r = self.assist_action(s, &latent.z)?;
        let c = self.confidence_history(history)?;
        let gain = ArbitrationGain::saturated(c, self.meta.beta_max)?;
        Ok(AssistDecision { a_r, gain, z_used: Some(latent) })
    }

    /// Network input for the most recent `window` pairs, newest first, zero padded.
    fn context(&self, history: &[PairRef]) -> Result<Vec<f64>> {
        let d = self.meta.d;
        if history.is_empty() {
            return Err(Error::InvalidParameter("empty context".into()));
        }
        for (s, a) in history {
            ensure_dim(d, s.len())?;
            ensure_dim(d, a.len())?;
        }
        Ok(context_input(history.iter().rev().copied(), d, self.meta.hyper.window))
    }

    pub fn to_json(&self) -> String {
        let bundle = Bundle {
            encoder: self.encoder.to_checkpoint(),
            policy: self.policy.to_checkpoint(),
            discriminator: self.discriminator.to_checkpoint(),
            meta: self.meta.clone(),
        };
        serde_json::to_string(&bundle).expect("model serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let b: Bundle = serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        Self::from_parts(
            Mlp::from_checkpoint(b.encoder)?,
            Mlp::from_checkpoint(b.policy)?,
            Mlp::from_checkpoint(b.discriminator)?,
            b.meta,
        )
    }
}

fn meta(d: usize, dt: f64, cfg: &SariConfig) -> SariMeta {
    SariMeta {
        d,
        dz: cfg.d_z,
        dt,
        beta_max: cfg.beta_max,
        seed: cfg.train.seed,
        hyper: cfg.clone(),
    }
}

fn init_networks<R: Rng + ?Sized>(d: usize, cfg: &SariConfig, rng: &mut R) -> Result<(Mlp, Mlp, Mlp)> {
    let h = cfg.hidden_width;
    let ctx = 2 * d * cfg.window;
    let encoder = Mlp::init(ctx, &vec![h; cfg.encoder_layers], 2 * cfg.d_z, cfg.activation, 0.0, rng)?;
    let policy = Mlp::init(d + cfg.d_z, &vec![h; cfg.policy_layers], d, cfg.activation, 0.0, rng)?;
    let discriminator = Mlp::init(ctx, &vec![h; cfg.discriminator_layers], 2, cfg.activation, 0.0, rng)?;
    Ok((encoder, policy, discriminator))
}

fn context_input<'a>(newest_first: impl Iterator<Item = PairRef<'a>>, d: usize, window: usize) -> Vec<f64> {
    let mut x = Vec::with_capacity(2 * d * window);
    for (s, a) in newest_first.take(window) {
        x.extend_from_slice(s);
        x.extend_from_slice(a);
    }
    x.resize(2 * d * window, 0.0);
    x
}

fn split_latent(out: &[f64], dz: usize) -> (Vec<f64>, Vec<f64>) {
    let mean = out[..dz].to_vec();
    let log_var = out[dz..].iter().map(|v| v.clamp(LOG_VAR_MIN, LOG_VAR_MAX)).collect();
    (mean, log_var)
}

/// Returns `z` and the standard-normal draws used.
fn reparameterize<R: Rng + ?Sized>(mean: &[f64], log_var: &[f64], rng: &mut R) -> (Vec<f64>, Vec<f64>) {
    let eps: Vec<f64> = mean.iter().map(|_| rng.sample(StandardNormal)).collect();
    let z = mean
        .iter()
        .zip(log_var)
        .zip(&eps)
        .map(|((m, lv), e)| m + (0.5 * lv).exp() * e)
        .collect();
    (z, eps)
}

fn finite(v: &[f64], what: &'static str) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what))
    }
}

/// Label-free view of an interaction: the only form learning code sees.
#[derive(Debug, Clone)]
pub(crate) struct Demo {
    pub states: Vec<Vec<f64>>,
    pub actions: Vec<Vec<f64>>,
    pub dt: f64,
}

impl Demo {
    pub(crate) fn from_interaction(i: &Interaction) -> Self {
        Self { states: i.state_rows(), actions: i.action_rows(), dt: i.dt() }
    }

    fn len(&self) -> usize {
        self.states.len()
    }

    fn informative(&self, k: usize) -> bool {
        norm(&self.actions[k]) > SILENCE
    }

    fn context(&self, end: usize, window: usize) -> Vec<f64> {
        let d = self.states[0].len();
        let pairs = (0..=end).rev().map(|j| (self.states[j].as_slice(), self.actions[j].as_slice()));
        context_input(pairs, d, window)
    }
}

pub(crate) fn demos(d: &Dataset) -> Vec<Demo> {
    d.interactions().iter().map(Demo::from_interaction).collect()
}

/// Original interactions plus `k` noisy copies of each.
pub fn augment<R: Rng + ?Sized>(d: &Dataset, k: usize, sigma: f64, rng: &mut R) -> Result<Dataset> {
    if !(sigma.is_finite() && sigma >= 0.0) {
        return Err(Error::InvalidParameter(format!("sigma must be >= 0, got {sigma}")));
    }
    let noise = Normal::new(0.0, sigma).map_err(|e| Error::InvalidParameter(e.to_string()))?;
    let mut out = d.interactions().to_vec();
    for i in d.interactions() {
        for _ in 0..k {
            let mut states = i.state_rows();
            let mut actions = i.action_rows();
            for row in states.iter_mut().chain(actions.iter_mut()) {
                row.iter_mut().for_each(|v| *v += noise.sample(rng));
            }
            let t0 = i.pairs()[0].state().time();
            out.push(Interaction::from_rows(&states, &actions, i.dt(), t0, i.label().map(str::to_owned))?);
        }
    }
    Dataset::new(out)
}

/// Second-order finite-difference matrix with truncated boundary rows.
pub fn smoothing_operator(t: usize) -> DMatrix<f64> {
    let mut a = DMatrix::zeros(t, t);
    for r in 0..t {
        a[(r, r)] = -2.0;
        if r > 0 {
            a[(r, r - 1)] = 1.0;
        }
        if r + 1 < t {
            a[(r, r + 1)] = 1.0;
        }
    }
    a
}

/// Smooth random displacement field, `T x d`, each column scaled to max-abs `magnitude`.
pub fn deformation_field<R: Rng + ?Sized>(t: usize, d: usize, magnitude: f64, rng: &mut R) -> Result<DMatrix<f64>> {
    if t < 4 {
        return Err(Error::TooShort { len: t, min: 4 });
    }
    let a = smoothing_operator(t);
    let mut m = a.transpose() * &a;
    for k in 0..t {
        m[(k, k)] += DEFORM_EPS;
    }
    let chol = m.cholesky().ok_or(Error::NotPositiveDefinite)?;
    let u = DMatrix::from_fn(t, d, |_, _| rng.sample::<f64, _>(StandardNormal));
    let mut delta = chol.solve(&u);
    for mut col in delta.column_iter_mut() {
        let peak = col.amax();
        if peak > 0.0 {
            col *= magnitude / peak;
        }
    }
    Ok(delta)
}

/// Smoothly perturbed copy of `i`: states shift by a deformation field and
/// each human action absorbs the field's velocity.
pub fn deform<R: Rng + ?Sized>(i: &Interaction, magnitude: f64, rng: &mut R) -> Result<Interaction> {
    let t = i.len();
    if t < 4 {
        return Err(Error::TooShort { len: t, min: 4 });
    }
    if !(magnitude.is_finite() && magnitude >= 0.0) {
        return Err(Error::InvalidParameter(format!("magnitude must be >= 0, got {magnitude}")));
    }
    let dt = i.dt();
    let delta = deformation_field(t, i.dim(), magnitude, rng)?;
    let mut states = i.state_rows();
    let mut actions = i.action_rows();
    displace(&mut states, &mut actions, &delta, dt);
    let t0 = i.pairs()[0].state().time();
    Interaction::from_rows(&states, &actions, dt, t0, i.label().map(str::to_owned))
}

/// Shifts states by `delta` and adds its finite-difference velocity to the actions.
fn displace(states: &mut [Vec<f64>], actions: &mut [Vec<f64>], delta: &DMatrix<f64>, dt: f64) {
    let t = states.len();
    for k in 0..t {
        let (from, to) = if k + 1 < t { (k, k + 1) } else { (k - 1, k) };
        for c in 0..states[k].len() {
            states[k][c] += delta[(k, c)];
            actions[k][c] += (delta[(to, c)] - delta[(from, c)]) / dt;
        }
    }
}

/// Trains a model from scratch on `data`.
pub fn train(data: &Dataset, cfg: &SariConfig) -> Result<SariModel> {
    Ok(train_with_report(data, cfg)?.0)
}

/// Full retraining on the aggregated dataset, from a fresh initialization.
pub fn retrain(model: &SariModel, data: &Dataset) -> Result<SariModel> {
    let mut cfg = model.meta.hyper.clone();
    cfg.beta_max = model.meta.beta_max;
    train(data, &cfg)
}

pub fn train_with_report(data: &Dataset, cfg: &SariConfig) -> Result<(SariModel, TrainReport)> {
    cfg.validate()?;
    let d = data.dim();
    let dt = data.interactions()[0].dt();
    let mut init_rng = ChaCha8Rng::seed_from_u64(cfg.train.seed);
    let mut data_rng = ChaCha8Rng::seed_from_u64(cfg.train.seed ^ 0x5eed_da7a);
    let mut train_rng = ChaCha8Rng::seed_from_u64(cfg.train.seed ^ 0x7a1e_5eed);
    let (mut encoder, mut policy, mut discriminator) = init_networks(d, cfg, &mut init_rng)?;

    let real = demos(data);
    let augmented = demos(&augment(data, cfg.k_augment, cfg.sigma_augment, &mut data_rng)?);

    let targets: Vec<(usize, usize)> = augmented
        .iter()
        .enumerate()
        .flat_map(|(n, demo)| (0..demo.len()).filter(|&k| demo.informative(k)).map(move |k| (n, k)))
        .collect();
    if targets.is_empty() {
        return Err(Error::InvalidParameter("dataset has no human input".into()));
    }

    let initial_policy_loss =
        reconstruction_loss(&encoder, &policy, &augmented, &targets, cfg.d_z, cfg.window, &mut data_rng)?;
    let policy_loss = fit_encoder_policy(&mut encoder, &mut policy, &augmented, &targets, cfg, &mut train_rng)?;

    let samples = discriminator_samples(&real, &augmented, cfg, &mut data_rng)?;
    let mut disc_cfg = cfg.train;
    disc_cfg.epochs = cfg.discriminator_epochs.unwrap_or(cfg.train.epochs);
    let discriminator_loss =
        neural::fit(&mut discriminator, &samples, Loss::SoftmaxCrossEntropy, &disc_cfg, &mut train_rng)?;

    let model = SariModel::from_parts(encoder, policy, discriminator, meta(d, dt, cfg))?;
    Ok((model, TrainReport { initial_policy_loss, policy_loss, discriminator_loss }))
}

/// Index of the context pair used to predict target `k`: uniform over the strict prefix.
fn context_index<R: Rng + ?Sized>(k: usize, rng: &mut R) -> usize {
    if k == 0 {
        0
    } else {
        rng.random_range(0..k)
    }
}

fn reconstruction_loss<R: Rng + ?Sized>(
    encoder: &Mlp,
    policy: &Mlp,
    demos: &[Demo],
    targets: &[(usize, usize)],
    dz: usize,
    window: usize,
    rng: &mut R,
) -> Result<f64> {
    let mut total = 0.0;
    for &(n, k) in targets {
        let demo = &demos[n];
        let j = context_index(k, rng);
        let out = encoder.predict(&demo.context(j, window))?;
        let mut x = demo.states[k].clone();
        x.extend_from_slice(&out[..dz]);
        total += Loss::SquaredError.evaluate(&policy.predict(&x)?, &demo.actions[k]).0;
    }
    Ok(total / targets.len() as f64)
}

/// One training pair for the encoder and policy.
pub struct LatentSample<'a> {
    pub context: &'a [f64],
    pub state: &'a [f64],
    pub target: &'a [f64],
}

/// Gradient accumulators; each contribution is multiplied by `scale`.
pub struct LatentGrads<'a> {
    pub encoder: &'a mut Gradients,
    pub policy: &'a mut Gradients,
    pub scale: f64,
}

/// Reconstruction plus `lambda_kl` times the KL term for one pair, with
/// gradients for both networks accumulated into `grads`. The latent noise
/// is `eps` when given, otherwise drawn from `rng` after the encoder pass.
#[allow(clippy::too_many_arguments)]
pub fn latent_objective<R: Rng + ?Sized>(
    encoder: &Mlp,
    policy: &Mlp,
    sample: &LatentSample,
    lambda_kl: f64,
    eps: Option<&[f64]>,
    mode: Mode,
    rng: &mut R,
    grads: &mut LatentGrads,
) -> Result<f64> {
    let enc_trace = encoder.forward_trace(sample.context, mode, rng)?;
    let raw = enc_trace.output();
    let dz = raw.len() / 2;
    let (mean, log_var) = split_latent(raw, dz);
    let (z, eps) = match eps {
        Some(e) => {
            ensure_dim(dz, e.len())?;
            let z = mean.iter().zip(&log_var).zip(e).map(|((m, lv), e)| m + (0.5 * lv).exp() * e).collect();
            (z, e.to_vec())
        }
        None => reparameterize(&mean, &log_var, rng),
    };

    let mut x = sample.state.to_vec();
    x.extend_from_slice(&z);
    let pol_trace = policy.forward_trace(&x, mode, rng)?;
    let (recon, g_out) = Loss::SquaredError.evaluate(pol_trace.output(), sample.target);
    let kl: f64 = mean.iter().zip(&log_var).map(|(m, lv)| 0.5 * (lv.exp() + m * m - 1.0 - lv)).sum();

    let d_x = policy.backward_into(&pol_trace, &g_out, grads.policy, grads.scale)?;
    let d_z = &d_x[x.len() - dz..];
    let mut g_enc = vec![0.0; 2 * dz];
    for c in 0..dz {
        let sd = (0.5 * log_var[c]).exp();
        g_enc[c] = d_z[c] + lambda_kl * mean[c];
        let clamped = raw[dz + c] < LOG_VAR_MIN || raw[dz + c] > LOG_VAR_MAX;
        g_enc[dz + c] = if clamped {
            0.0
        } else {
            d_z[c] * 0.5 * sd * eps[c] + lambda_kl * 0.5 * (log_var[c].exp() - 1.0)
        };
    }
    encoder.backward_into(&enc_trace, &g_enc, grads.encoder, grads.scale)?;
    Ok(recon + lambda_kl * kl)
}

fn fit_encoder_policy<R: Rng + ?Sized>(
    encoder: &mut Mlp,
    policy: &mut Mlp,
    demos: &[Demo],
    targets: &[(usize, usize)],
    cfg: &SariConfig,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let mut enc_opt = OptimizerState::new(encoder, &cfg.train);
    let mut pol_opt = OptimizerState::new(policy, &cfg.train);
    let mut order: Vec<usize> = (0..targets.len()).collect();
    let mut history = Vec::with_capacity(cfg.train.epochs);
    let mut batch_index = 0;
    for _ in 0..cfg.train.epochs {
        neural::shuffle(&mut order, rng);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(cfg.train.batch_size) {
            let scale = 1.0 / chunk.len() as f64;
            let mut enc_grads = Gradients::zeros_like(encoder);
            let mut pol_grads = Gradients::zeros_like(policy);
            let mut batch_loss = 0.0;
            for &idx in chunk {
                let (n, k) = targets[idx];
                let demo = &demos[n];
                let j = context_index(k, rng);
                let context = demo.context(j, cfg.window);
                let sample = LatentSample { context: &context, state: &demo.states[k], target: &demo.actions[k] };
                let mut grads = LatentGrads { encoder: &mut enc_grads, policy: &mut pol_grads, scale };
                batch_loss +=
                    latent_objective(encoder, policy, &sample, cfg.lambda_kl, None, Mode::Train, rng, &mut grads)?;
            }
            if !batch_loss.is_finite() {
                return Err(Error::NonFiniteLoss { batch: batch_index });
            }
            enc_opt.apply(encoder, &enc_grads);
            pol_opt.apply(policy, &pol_grads);
            epoch_loss += batch_loss;
            batch_index += 1;
        }
        history.push(epoch_loss / targets.len() as f64);
    }
    Ok(history)
}

fn discriminator_samples<R: Rng + ?Sized>(
    real: &[Demo],
    augmented: &[Demo],
    cfg: &SariConfig,
    rng: &mut R,
) -> Result<Vec<(Vec<f64>, Vec<f64>)>> {
    let seen = {
        let mut t = vec![0.0; 2];
        t[SEEN] = 1.0;
        t
    };
    let unseen = {
        let mut t = vec![0.0; 2];
        t[1 - SEEN] = 1.0;
        t
    };
    let mut samples = Vec::new();
    for demo in augmented {
        for k in 0..demo.len() {
            if demo.informative(k) {
                samples.push((demo.context(k, cfg.window), seen.clone()));
            }
        }
        // Silence at the end of a demonstration is familiar behavior.
        let last = demo.len() - 1;
        let d = demo.states[0].len();
        let mut rest = Demo { states: demo.states.clone(), actions: demo.actions.clone(), dt: demo.dt };
        rest.states.push(demo.states[last].clone());
        rest.actions.push(vec![0.0; d]);
        samples.push((rest.context(last + 1, cfg.window), seen.clone()));
    }
    let spread = rand_distr::Uniform::new_inclusive(cfg.deform_min, cfg.deform_max)
        .map_err(|e| Error::InvalidParameter(e.to_string()))?;
    for demo in real {
        if demo.len() < 4 {
            continue;
        }
        for _ in 0..cfg.n_deformed {
            let magnitude = spread.sample(rng);
            let delta = deformation_field(demo.len(), demo.states[0].len(), magnitude, rng)?;
            let mut bent = demo.clone();
            displace(&mut bent.states, &mut bent.actions, &delta, demo.dt);
            for k in 0..bent.len() {
                if bent.informative(k) {
                    samples.push((bent.context(k, cfg.window), unseen.clone()));
                }
            }
        }
    }
    Ok(samples)
}

/// Runtime wrapper that tracks the in-progress interaction.
///
/// The human's latest non-silent pairs form the context. While the human is
/// silent the latent task and confidence stay anchored to that context and
/// only the policy follows the moving state. Before any input the robot
/// does nothing.
#[derive(Debug, Clone)]
pub struct SariAssistant {
    model: Arc<SariModel>,
    recent: Vec<(Vec<f64>, Vec<f64>)>,
    cached: Option<(LatentTask, f64)>,
}

impl SariAssistant {
    pub fn new(model: Arc<SariModel>) -> Self {
        Self { model, recent: Vec::new(), cached: None }
    }

    pub fn model(&self) -> &Arc<SariModel> {
        &self.model
    }

    /// Swaps in another snapshot; the in-progress context is kept.
    pub fn set_model(&mut self, model: Arc<SariModel>) {
        self.model = model;
        self.cached = None;
    }

    fn refresh(&mut self) -> Result<()> {
        let history: Vec<PairRef> = self.recent.iter().map(|(s, a)| (s.as_slice(), a.as_slice())).collect();
        let latent = self.model.encode_history(&history, None::<&mut ChaCha8Rng>)?;
        let c = self.model.confidence_history(&history)?;
        self.cached = Some((latent, c));
        Ok(())
    }
}

impl Assistant for SariAssistant {
    fn name(&self) -> &str {
        "sari"
    }

    fn dim(&self) -> usize {
        self.model.dim()
    }

    fn reset(&mut self) {
        self.recent.clear();
        self.cached = None;
    }

    fn decide(&mut self, s: &State, a_h: &Action, _rng: &mut dyn RngCore) -> Result<AssistDecision> {
        ensure_dim(self.model.dim(), s.dim())?;
        ensure_dim(self.model.dim(), a_h.dim())?;
        if a_h.norm() > SILENCE {
            self.recent.push((s.coords().to_vec(), a_h.vel().to_vec()));
            let w = self.model.window();
            if self.recent.len() > w {
                self.recent.drain(..self.recent.len() - w);
            }
            self.refresh()?;
        } else if self.cached.is_none() && !self.recent.is_empty() {
            self.refresh()?;
        }
        let Some((latent, c)) = &self.cached else {
            return Ok(AssistDecision::none(s.dim()));
        };
        let a_r = self.model.assist_action(s, &latent.z)?;
        let gain = ArbitrationGain::saturated(*c, self.model.beta_max())?;
        Ok(AssistDecision { a_r: a_r.with_kind(ActionKind::Robot), gain, z_used: Some(latent.clone()) })
    }
}
