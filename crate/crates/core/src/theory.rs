//! Closed-form arbitration expectations and ultimate error bounds for a
//! Gaussian human teaming with a robot that learned a different goal.
//!
//! The human aims for `g*` with command noise `Sigma_H`; the robot learned
//! goal `g` with demonstration noise `Sigma_D` and arbitrates with the
//! density of the human's command under its own policy. With
//! `Sigma = Sigma_D + Sigma_H` and `delta = g* - g`:
//!
//! * `E[beta] = N(delta; 0, Sigma)`
//! * saturated (`E[beta] >= beta_max`): `||e|| <= beta_max ||delta||`
//! * unsaturated: `||e|| <= lambda E[beta] ||delta||`, where `lambda` is the
//!   largest eigenvalue of `Sigma^-1 Sigma_D`.

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_dim, Error, Result};
use crate::sari::SariModel;
use crate::types::{Action, State};

pub const POWER_TOL: f64 = 1e-10;
pub const POWER_MAX_ITERS: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scenario1D {
    pub g: f64,
    pub g_star: f64,
    pub sigma_d: f64,
    pub sigma_h: f64,
    pub beta_max: f64,
}

impl Scenario1D {
    fn total_var(&self) -> f64 {
        self.sigma_d * self.sigma_d + self.sigma_h * self.sigma_h
    }

    pub fn to_nd(&self) -> ScenarioND {
        ScenarioND {
            g: vec![self.g],
            g_star: vec![self.g_star],
            sigma_d: DMatrix::from_element(1, 1, self.sigma_d * self.sigma_d),
            sigma_h: DMatrix::from_element(1, 1, self.sigma_h * self.sigma_h),
            beta_max: self.beta_max,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioND {
    pub g: Vec<f64>,
    pub g_star: Vec<f64>,
    pub sigma_d: DMatrix<f64>,
    pub sigma_h: DMatrix<f64>,
    pub beta_max: f64,
}

impl ScenarioND {
    /// Isotropic covariances `var_d * I` and `var_h * I`.
    pub fn isotropic(g: Vec<f64>, g_star: Vec<f64>, var_d: f64, var_h: f64, beta_max: f64) -> Self {
        let d = g.len();
        Self {
            g,
            g_star,
            sigma_d: DMatrix::identity(d, d) * var_d,
            sigma_h: DMatrix::identity(d, d) * var_h,
            beta_max,
        }
    }

    pub fn dim(&self) -> usize {
        self.g.len()
    }

    fn validate(&self) -> Result<()> {
        let d = self.dim();
        ensure_dim(d, self.g_star.len())?;
        for m in [&self.sigma_d, &self.sigma_h] {
            ensure_dim(d, m.nrows())?;
            ensure_dim(d, m.ncols())?;
        }
        if !(self.beta_max > 0.0 && self.beta_max <= 1.0) {
            return Err(Error::InvalidParameter(format!("beta_max must be in (0, 1], got {}", self.beta_max)));
        }
        Ok(())
    }

    fn delta(&self) -> DVector<f64> {
        DVector::from_iterator(self.dim(), self.g_star.iter().zip(&self.g).map(|(a, b)| a - b))
    }

    fn total(&self) -> DMatrix<f64> {
        &self.sigma_d + &self.sigma_h
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Regime {
    Saturated,
    Unsaturated,
}

pub fn expected_beta_1d(sc: &Scenario1D) -> f64 {
    let var = sc.total_var();
    let delta = sc.g_star - sc.g;
    (-delta * delta / (2.0 * var)).exp() / (2.0 * PI * var).sqrt()
}

/// `E[beta * a_H]` at state `s`.
pub fn expected_beta_action_1d(sc: &Scenario1D, s: f64) -> f64 {
    let vd = sc.sigma_d * sc.sigma_d;
    let vh = sc.sigma_h * sc.sigma_h;
    let var = vd + vh;
    let delta = sc.g_star - sc.g;
    ((sc.g - s) * vh + (sc.g_star - s) * vd) / ((2.0 * PI).sqrt() * var.powf(1.5))
        * (-delta * delta / (2.0 * var)).exp()
}

pub fn bound_1d(sc: &Scenario1D) -> (Regime, f64) {
    let eb = expected_beta_1d(sc);
    let delta = (sc.g_star - sc.g).abs();
    if eb >= sc.beta_max {
        (Regime::Saturated, sc.beta_max * delta)
    } else {
        let ratio = sc.sigma_d * sc.sigma_d / sc.total_var();
        (Regime::Unsaturated, eb * ratio * delta)
    }
}

fn spd(m: &DMatrix<f64>) -> Result<Cholesky<f64, Dyn>> {
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("covariance"));
    }
    if (m - m.transpose()).amax() > 1e-12 * (1.0 + m.amax()) {
        return Err(Error::NotPositiveDefinite);
    }
    m.clone().cholesky().ok_or(Error::NotPositiveDefinite)
}

/// Density of `N(x; mean, cov)` from a Cholesky factor of `cov`.
fn gaussian_pdf(x: &DVector<f64>, chol: &Cholesky<f64, Dyn>) -> f64 {
    let d = x.len() as f64;
    let l = chol.l_dirty();
    let y = l
        .solve_lower_triangular(x)
        .expect("cholesky factor has a positive diagonal");
    let log_det: f64 = (0..x.len()).map(|i| 2.0 * chol.l_dirty()[(i, i)].ln()).sum();
    (-0.5 * y.norm_squared() - 0.5 * (d * (2.0 * PI).ln() + log_det)).exp()
}

pub fn expected_beta_nd(sc: &ScenarioND) -> Result<f64> {
    sc.validate()?;
    let chol = spd(&sc.total())?;
    spd(&sc.sigma_d)?;
    spd(&sc.sigma_h)?;
    Ok(gaussian_pdf(&sc.delta(), &chol))
}

/// `E[beta * a_H] = Sigma^-1 (Sigma_D (g* - s) + Sigma_H (g - s)) E[beta]`.
pub fn expected_beta_action_nd(sc: &ScenarioND, s: &[f64]) -> Result<Vec<f64>> {
    ensure_dim(sc.dim(), s.len())?;
    let eb = expected_beta_nd(sc)?;
    let chol = spd(&sc.total())?;
    let to_star = DVector::from_iterator(s.len(), sc.g_star.iter().zip(s).map(|(g, s)| g - s));
    let to_g = DVector::from_iterator(s.len(), sc.g.iter().zip(s).map(|(g, s)| g - s));
    let v = chol.solve(&(&sc.sigma_d * to_star + &sc.sigma_h * to_g)) * eb;
    Ok(v.iter().copied().collect())
}

/// Largest eigenvalue of `Sigma^-1 Sigma_D` by power iteration on the
/// symmetric similar matrix `L^-1 Sigma_D L^-T` (`Sigma = L L^T`).
pub fn max_eigenvalue_ratio(sigma_d: &DMatrix<f64>, sigma: &DMatrix<f64>) -> Result<f64> {
    let chol = spd(sigma)?;
    let l = chol.l();
    let left = l.solve_lower_triangular(sigma_d).ok_or(Error::NotPositiveDefinite)?;
    let m = l
        .solve_lower_triangular(&left.transpose())
        .ok_or(Error::NotPositiveDefinite)?;
    let m = (&m + m.transpose()) * 0.5;
    power_iteration(&m, POWER_TOL, POWER_MAX_ITERS)
}

/// Dominant eigenvalue of a symmetric positive semidefinite matrix.
pub fn power_iteration(m: &DMatrix<f64>, tol: f64, max_iters: usize) -> Result<f64> {
    let n = m.nrows();
    let mut v = DVector::from_iterator(n, (0..n).map(|i| 1.0 + i as f64 / (n as f64 + 1.0)));
    v.normalize_mut();
    let mut lambda = v.dot(&(m * &v));
    for _ in 0..max_iters {
        let w = m * &v;
        let len = w.norm();
        if len == 0.0 {
            return Ok(0.0);
        }
        let next = w / len;
        let next_lambda = next.dot(&(m * &next));
        if (next_lambda - lambda).abs() <= tol * next_lambda.abs().max(1e-300) && (&next - &v).norm() <= tol.sqrt() {
            return Ok(next_lambda);
        }
        v = next;
        lambda = next_lambda;
    }
    Err(Error::NoConvergence(max_iters))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NdBound {
    pub regime: Regime,
    pub bound: f64,
    pub lambda: f64,
    pub expected_beta: f64,
}

pub fn bound_nd(sc: &ScenarioND) -> Result<NdBound> {
    let eb = expected_beta_nd(sc)?;
    let lambda = max_eigenvalue_ratio(&sc.sigma_d, &sc.total())?;
    let delta = sc.delta().norm();
    let (regime, bound) = if eb >= sc.beta_max {
        (Regime::Saturated, sc.beta_max * delta)
    } else {
        (Regime::Unsaturated, lambda * eb * delta)
    };
    Ok(NdBound { regime, bound, lambda, expected_beta: eb })
}

/// Arbitration of a robot that learned goal `g` with covariance `sigma_d`:
/// the density of the human command under the robot's policy, unclamped.
pub fn analytic_beta(s: &[f64], a_h: &[f64], g: &[f64], sigma_d: &DMatrix<f64>) -> Result<f64> {
    ensure_dim(s.len(), a_h.len())?;
    ensure_dim(s.len(), g.len())?;
    let chol = spd(sigma_d)?;
    let x = DVector::from_iterator(s.len(), a_h.iter().zip(g).zip(s).map(|((a, g), s)| a - (g - s)));
    Ok(gaussian_pdf(&x, &chol))
}

/// Which robot closes the loop in [`validate_bound`].
#[derive(Debug, Clone)]
pub enum BoundRobot {
    /// Policy `N(g - s, Sigma_D)` gated by [`analytic_beta`].
    Analytic,
    /// A trained model evaluated on the current pair.
    Learned(Arc<SariModel>),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValidationConfig {
    pub n_runs: usize,
    pub horizon: usize,
    pub dt: f64,
    pub seed: u64,
    /// Initial state is `g + start_offset * (g* - g)`; 0 starts at the learned goal.
    pub start_offset: f64,
}

impl Default for ValidationConfig {
    fn default() -> Self {
        Self { n_runs: 1000, horizon: 100, dt: 0.1, seed: 0, start_offset: 0.0 }
    }
}

/// Sign test of `V(t+dt) - V(t)` over samples with `||e(t)||` above the bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LyapunovCheck {
    pub samples: usize,
    pub mean_dv: f64,
    /// One-sided 95% upper confidence limit of the mean.
    pub upper_95: f64,
}

impl LyapunovCheck {
    pub fn decreasing(&self) -> bool {
        self.samples > 1 && self.upper_95 < 0.0
    }
}

/// Analytic bound next to closed-loop measurements for one scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub regime: Regime,
    pub expected_beta: f64,
    pub bound: f64,
    pub lambda: f64,
    /// Distance from `g*` to the mean final state across runs.
    pub measured_mean_error: f64,
    /// Standard error of `measured_mean_error`.
    pub measured_stderr: f64,
    /// Root of the summed per-axis variance of the final state across runs.
    pub measured_std: f64,
    /// Mean over runs of the per-run final distance to `g*`.
    pub mean_abs_error: f64,
    pub n_runs: usize,
    pub horizon: usize,
    pub lyapunov: LyapunovCheck,
    /// Mean error trajectory: distance from `g*` to the across-run mean state, per step.
    pub mean_error_path: Vec<f64>,
    /// Standard error of each entry of `mean_error_path`.
    pub mean_error_path_stderr: Vec<f64>,
}

impl BoundReport {
    /// Measured mean error within `k` standard errors of the bound.
    pub fn within_bound(&self, k: f64) -> bool {
        self.measured_mean_error <= self.bound + k * self.measured_stderr
    }
}

struct RunTrace {
    errors: Vec<Vec<f64>>,
    dv_sum: f64,
    dv_sq: f64,
    dv_n: usize,
}

/// Runs `cfg.n_runs` closed-loop episodes and compares them with the bound.
///
/// The human samples `N(g* - s, Sigma_H)`; blending and integration follow
/// the kinematic model without velocity clamping.
pub fn validate_bound(sc: &ScenarioND, robot: &BoundRobot, cfg: &ValidationConfig) -> Result<BoundReport> {
    sc.validate()?;
    if cfg.n_runs < 2 || cfg.horizon == 0 || !(cfg.dt > 0.0) {
        return Err(Error::InvalidParameter("need n_runs >= 2, horizon >= 1, dt > 0".into()));
    }
    let nb = bound_nd(sc)?;
    let d = sc.dim();
    let lh = spd(&sc.sigma_h)?.l();
    let ld = spd(&sc.sigma_d)?.l();
    let chol_d = spd(&sc.sigma_d)?;
    if let BoundRobot::Learned(m) = robot {
        ensure_dim(d, m.dim())?;
    }

    let run = |index: usize| -> Result<RunTrace> {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(index as u64);
        let mut s: Vec<f64> = sc
            .g
            .iter()
            .zip(&sc.g_star)
            .map(|(g, gs)| g + cfg.start_offset * (gs - g))
            .collect();
        let err = |s: &[f64]| -> Vec<f64> { s.iter().zip(&sc.g_star).map(|(s, g)| s - g).collect() };
        let v = |e: &[f64]| 0.5 * e.iter().map(|x| x * x).sum::<f64>();
        let mut trace = RunTrace { errors: Vec::with_capacity(cfg.horizon), dv_sum: 0.0, dv_sq: 0.0, dv_n: 0 };
        for _ in 0..cfg.horizon {
            let a_h = gaussian_step(&sc.g_star, &s, &lh, &mut rng);
            let (a_r, beta) = match robot {
                BoundRobot::Analytic => {
                    let a_r = gaussian_step(&sc.g, &s, &ld, &mut rng);
                    let x = DVector::from_iterator(d, a_h.iter().zip(&sc.g).zip(&s).map(|((a, g), s)| a - (g - s)));
                    (a_r, gaussian_pdf(&x, &chol_d).min(sc.beta_max))
                }
                BoundRobot::Learned(model) => {
                    let state = State::at(s.clone())?;
                    let decision = model.arbitrate(&state, &Action::human(a_h.clone())?)?;
                    (decision.a_r.vel().to_vec(), decision.gain.beta().min(sc.beta_max))
                }
            };
            let e0 = err(&s);
            for c in 0..d {
                s[c] += cfg.dt * (beta * a_r[c] + (1.0 - beta) * a_h[c]);
            }
            let e1 = err(&s);
            if crate::types::norm(&e0) > nb.bound {
                let dv = v(&e1) - v(&e0);
                trace.dv_sum += dv;
                trace.dv_sq += dv * dv;
                trace.dv_n += 1;
            }
            trace.errors.push(e1);
        }
        Ok(trace)
    };

    let traces: Vec<RunTrace> = (0..cfg.n_runs)
        .into_par_iter()
        .map(run)
        .collect::<Result<Vec<_>>>()?;

    let n = cfg.n_runs as f64;
    let mut path = Vec::with_capacity(cfg.horizon);
    let mut path_se = Vec::with_capacity(cfg.horizon);
    for t in 0..cfg.horizon {
        let (dist, se) = mean_distance(traces.iter().map(|r| r.errors[t].as_slice()), d, n);
        path.push(dist);
        path_se.push(se);
    }
    let finals = traces.iter().map(|r| r.errors[cfg.horizon - 1].as_slice());
    let (measured_mean_error, measured_stderr) = mean_distance(finals.clone(), d, n);
    let measured_std = measured_stderr * n.sqrt();
    let mean_abs_error = finals.map(crate::types::norm).sum::<f64>() / n;

    let (mut sum, mut sq, mut count) = (0.0, 0.0, 0usize);
    for r in &traces {
        sum += r.dv_sum;
        sq += r.dv_sq;
        count += r.dv_n;
    }
    let lyapunov = if count > 1 {
        let c = count as f64;
        let mean = sum / c;
        let var = ((sq - c * mean * mean) / (c - 1.0)).max(0.0);
        LyapunovCheck { samples: count, mean_dv: mean, upper_95: mean + 1.6449 * (var / c).sqrt() }
    } else {
        LyapunovCheck { samples: count, mean_dv: 0.0, upper_95: f64::INFINITY }
    };

    Ok(BoundReport {
        regime: nb.regime,
        expected_beta: nb.expected_beta,
        bound: nb.bound,
        lambda: nb.lambda,
        measured_mean_error,
        measured_stderr,
        measured_std,
        mean_abs_error,
        n_runs: cfg.n_runs,
        horizon: cfg.horizon,
        lyapunov,
        mean_error_path: path,
        mean_error_path_stderr: path_se,
    })
}

/// Norm of the mean error vector and its standard error.
fn mean_distance<'a>(errors: impl Iterator<Item = &'a [f64]> + Clone, d: usize, n: f64) -> (f64, f64) {
    let mut mean = vec![0.0; d];
    for e in errors.clone() {
        mean.iter_mut().zip(e).for_each(|(m, x)| *m += x / n);
    }
    let mut var = 0.0;
    for e in errors {
        var += e.iter().zip(&mean).map(|(x, m)| (x - m) * (x - m)).sum::<f64>();
    }
    let var = var / (n - 1.0);
    (crate::types::norm(&mean), (var / n).sqrt())
}

fn gaussian_step<R: Rng + ?Sized>(target: &[f64], s: &[f64], factor: &DMatrix<f64>, rng: &mut R) -> Vec<f64> {
    let noise = DVector::from_fn(s.len(), |_, _| rng.sample::<f64, _>(StandardNormal));
    let shaped = factor * noise;
    target.iter().zip(s).zip(shaped.iter()).map(|((t, s), n)| t - s + n).collect()
}
