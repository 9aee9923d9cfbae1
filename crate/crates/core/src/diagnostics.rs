//! Quantities computed from finished runs.
//!
//! A [`CoupledRun`] pairs the particle scheme with reference trajectories
//! driven by the same Brownian increments. On it we evaluate
//!
//! * the accumulated ensemble-health functional
//!   `A_t = N Σ_k ∫₀ᵗ [1/N² + (|w_k|² + |w̄_k|²)(1 + |X_k|²)] ds`
//!   (left-point sums on the grid), its multiplier `Ψ_t = exp(-α A_t)` and
//!   the first grid time `τ_β` at which `A_t` reaches `β`;
//! * the pathwise error `e_N = (1/N) max_n Σ_i |X^i_n - X̄^i_n|²`.
//!
//! Independently of any run, [`likelihood_mean_check`] tests `E[L_T] = 1`
//! from i.i.d. likelihood samples and [`fit_slope`] fits a log-log line.

use crate::measure::MeasureError;
use crate::model::ModelSpec;
use crate::scalar::{norm_sq, Scalar};
use crate::sde::{generate_paths, simulate_particle_system, SimError, SimulationConfig, Trajectory};
use crate::seed;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DiagnosticsError {
    #[error("invalid parameter {name}: {reason}")]
    InvalidParameter { name: &'static str, reason: String },
    #[error("coupled runs disagree on {what}: {left} vs {right}")]
    Mismatch { what: &'static str, left: String, right: String },
    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("value {value} at index {index} must be positive")]
    NonPositive { index: usize, value: f64 },
    #[error(transparent)]
    Measure(#[from] MeasureError),
    #[error(transparent)]
    Sim(#[from] SimError),
}

/// Particle trajectory and its synchronously coupled reference.
#[derive(Debug, Clone)]
pub struct CoupledRun<S> {
    pub particle: Trajectory<S>,
    pub reference: Trajectory<S>,
}

impl<S: Scalar> CoupledRun<S> {
    pub fn new(particle: Trajectory<S>, reference: Trajectory<S>) -> Result<Self, DiagnosticsError> {
        let pairs = [
            ("particles", particle.particles, reference.particles),
            ("steps", particle.steps(), reference.steps()),
            ("dimension", particle.dim, reference.dim),
        ];
        for (what, l, r) in pairs {
            if l != r {
                return Err(DiagnosticsError::Mismatch { what, left: l.to_string(), right: r.to_string() });
            }
        }
        if particle.delta != reference.delta {
            return Err(DiagnosticsError::Mismatch {
                what: "delta",
                left: particle.delta.to_string(),
                right: reference.delta.to_string(),
            });
        }
        Ok(Self { particle, reference })
    }

    pub fn particles(&self) -> usize {
        self.particle.particles
    }

    pub fn steps(&self) -> usize {
        self.particle.steps()
    }

    pub fn delta(&self) -> S {
        self.particle.delta
    }
}

/// `A_n` at every grid point; `A_0 = 0`, non-decreasing.
pub fn accumulated_functional<S: Scalar>(run: &CoupledRun<S>) -> Result<Vec<S>, DiagnosticsError> {
    let count = run.particles();
    let n = S::of_usize(count);
    let floor = S::one() / (n * n);
    let dt = run.delta();
    let mut acc = S::zero();
    let mut out = Vec::with_capacity(run.steps() + 1);
    out.push(acc);
    for s in 0..run.steps() {
        let w = run.particle.weights(s)?;
        let wbar = run.reference.weights(s)?;
        let mut sum = S::zero();
        for k in 0..count {
            let x2 = norm_sq(run.particle.position(s, k));
            sum += floor + (w[k] * w[k] + wbar[k] * wbar[k]) * (S::one() + x2);
        }
        acc += n * sum * dt;
        out.push(acc);
    }
    Ok(out)
}

/// `Ψ_t = exp(-α A_t)` on the grid.
pub fn multiplier_psi<S: Scalar>(run: &CoupledRun<S>, alpha: S) -> Result<Vec<S>, DiagnosticsError> {
    if !(alpha > S::zero()) {
        return Err(DiagnosticsError::InvalidParameter { name: "alpha", reason: format!("must be positive, got {alpha}") });
    }
    Ok(accumulated_functional(run)?.into_iter().map(|a| (-alpha * a).exp()).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum StoppingTime<S> {
    /// First grid time with `A_t >= β`.
    At(S),
    /// `A_T < β`.
    ExceedsHorizon,
}

impl<S: Scalar> StoppingTime<S> {
    pub fn exceeds_horizon(&self) -> bool {
        matches!(self, StoppingTime::ExceedsHorizon)
    }

    /// `+∞` for the sentinel.
    pub fn as_f64(&self) -> f64 {
        match self {
            StoppingTime::At(t) => t.to_f64_lossy(),
            StoppingTime::ExceedsHorizon => f64::INFINITY,
        }
    }
}

/// First grid time at which the accumulated functional reaches `β`.
///
/// The integrand is at least `1/N²`, so `A` is strictly increasing and the
/// continuous-time hitting time is where `A = β`; on the grid this rounds up.
pub fn tau_beta<S: Scalar>(run: &CoupledRun<S>, beta: S) -> Result<StoppingTime<S>, DiagnosticsError> {
    if !(beta >= S::zero()) {
        return Err(DiagnosticsError::InvalidParameter { name: "beta", reason: format!("must be nonnegative, got {beta}") });
    }
    let acc = accumulated_functional(run)?;
    Ok(acc
        .iter()
        .position(|&a| a >= beta)
        .map_or(StoppingTime::ExceedsHorizon, |n| StoppingTime::At(run.particle.times[n])))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LikelihoodReport {
    pub mean: f64,
    pub stderr: f64,
    pub samples: usize,
    pub pass: bool,
}

/// Test `E[L_T] = 1` from independent likelihood samples:
/// passes when `|mean - 1| <= z · stderr`.
pub fn likelihood_mean_check<S: Scalar>(samples: &[S], confidence_z: f64) -> Result<LikelihoodReport, DiagnosticsError> {
    if samples.len() < 2 {
        return Err(DiagnosticsError::TooFewSamples { needed: 2, got: samples.len() });
    }
    let values: Vec<f64> = samples.iter().map(|v| v.to_f64_lossy()).collect();
    let count = values.len() as f64;
    let mean = values.iter().sum::<f64>() / count;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (count - 1.0);
    let stderr = (var / count).sqrt();
    Ok(LikelihoodReport {
        mean,
        stderr,
        samples: values.len(),
        pass: (mean - 1.0).abs() <= confidence_z * stderr,
    })
}

/// `L_T` of every particle of a trajectory.
pub fn terminal_likelihoods<S: Scalar>(traj: &Trajectory<S>) -> Vec<S> {
    traj.log_likelihoods(traj.steps()).iter().map(|v| v.exp()).collect()
}

/// Independent replicates of a whole particle system, each with its own
/// observation path; returns the particle-averaged `L_T` of each replicate.
///
/// Replicate `r` uses seed `derive(master_seed, r)`. Particles within one
/// replicate share `Y`, so only replicate averages are independent samples.
pub fn sample_terminal_likelihoods<S: Scalar>(
    spec: &ModelSpec<S>,
    template: &SimulationConfig<S>,
    replicates: usize,
    master_seed: u64,
) -> Result<Vec<S>, DiagnosticsError> {
    (0..replicates)
        .into_par_iter()
        .map(|r| {
            let cfg = SimulationConfig { seed: seed::derive(master_seed, r as u64), ..template.clone() };
            let paths = generate_paths(&cfg, spec.dims.noise, spec.dims.obs)?;
            let traj = simulate_particle_system(&cfg, spec, &paths)?;
            let l = terminal_likelihoods(&traj);
            Ok(l.iter().copied().sum::<S>() / S::of_usize(l.len()))
        })
        .collect()
}

/// `e_N = (1/N) max_{1<=n<=steps} Σ_i |X^i_n - X̄^i_n|²`.
pub fn error_en<S: Scalar>(run: &CoupledRun<S>) -> S {
    let count = run.particles();
    let mut worst = S::zero();
    for s in 1..=run.steps() {
        let mut sum = S::zero();
        for i in 0..count {
            let a = run.particle.position(s, i);
            let b = run.reference.position(s, i);
            for (&x, &y) in a.iter().zip(b) {
                sum += (x - y) * (x - y);
            }
        }
        worst = worst.max(sum);
    }
    worst / S::of_usize(count)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlopeFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

/// Least-squares line through `(ln N, ln error)`.
pub fn fit_slope<S: Scalar>(points: &[(S, S)]) -> Result<SlopeFit, DiagnosticsError> {
    if points.len() < 2 {
        return Err(DiagnosticsError::TooFewSamples { needed: 2, got: points.len() });
    }
    for (index, &(n, e)) in points.iter().enumerate() {
        for v in [n, e] {
            if !(v > S::zero()) || !v.is_finite() {
                return Err(DiagnosticsError::NonPositive { index, value: v.to_f64_lossy() });
            }
        }
    }
    let xs: Vec<f64> = points.iter().map(|p| p.0.to_f64_lossy().ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1.to_f64_lossy().ln()).collect();
    let count = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / count;
    let my = ys.iter().sum::<f64>() / count;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(DiagnosticsError::TooFewSamples { needed: 2, got: 1 });
    }
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_tot: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let ss_res: f64 = xs.iter().zip(&ys).map(|(x, y)| (y - intercept - slope * x).powi(2)).sum();
    // a flat series is fitted exactly; rounding in `my` would make ss_tot tiny but nonzero
    let flat = ys.iter().all(|&y| y == ys[0]);
    let r_squared = if flat || ss_tot == 0.0 { 1.0 } else { 1.0 - ss_res / ss_tot };
    Ok(SlopeFit { slope, intercept, r_squared })
}

/// Serialised as `{psi_min, tau_beta, eN, likelihood_mean, slope}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsReport {
    pub psi_min: f64,
    /// `None` when `τ_β` exceeds the horizon.
    pub tau_beta: Option<f64>,
    #[serde(rename = "eN")]
    pub e_n: f64,
    pub likelihood_mean: f64,
    pub slope: Option<f64>,
}

/// All per-run diagnostics at once.
pub fn summarize<S: Scalar>(run: &CoupledRun<S>, alpha: S, beta: S) -> Result<DiagnosticsReport, DiagnosticsError> {
    let psi = multiplier_psi(run, alpha)?;
    let psi_min = psi.iter().copied().fold(S::one(), S::min).to_f64_lossy();
    let tau = tau_beta(run, beta)?;
    let l = terminal_likelihoods(&run.particle);
    let likelihood_mean = l.iter().map(|v| v.to_f64_lossy()).sum::<f64>() / l.len() as f64;
    Ok(DiagnosticsReport {
        psi_min,
        tau_beta: match tau {
            StoppingTime::At(t) => Some(t.to_f64_lossy()),
            StoppingTime::ExceedsHorizon => None,
        },
        e_n: error_en(run).to_f64_lossy(),
        likelihood_mean,
        slope: None,
    })
}
