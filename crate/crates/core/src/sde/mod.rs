//! Euler–Maruyama discretisation of the weighted particle system.
//!
//! Each particle carries a position `X_i`, a log-weight `z_i` (normalized
//! weights are `softmax(z)`) and its raw log-likelihood `ln L_i`. One step
//! freezes all coefficients at the current grid point:
//!
//! ```text
//! X_i ← X_i + b Δ + σ₁ ΔW_i + σ₂ ΔY
//! z_i ← z_i + R(X_i, μ) Δ + M(X_i, μ)ᵀ ΔY
//! ln L_i ← ln L_i + hᵀ ΔY - |h|² Δ / 2
//! ```
//!
//! where `μ` is the weighted empirical measure of the ensemble at the start
//! of the step. No resampling is performed.

mod paths;

use crate::measure::{normalize_log_weights, log_sum_exp, MeasureError, WeightedEmpiricalMeasure};
use crate::model::{
    check_scalar_paths, exact_with_integral, observation_integral, AuxState, AuxView,
    BenchmarkParams, EvalPoint, MeasureForm, ModelError, ModelSpec, ObservationSummary,
};
use crate::scalar::{dot, norm_sq, Scalar};
use serde::{Deserialize, Serialize};
use std::io::Write;
use thiserror::Error;

pub use paths::{generate_paths, grid_steps, PathBundle, SeedRecord};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid simulation config: {field} {reason}")]
    InvalidConfig { field: &'static str, reason: String },
    #[error("time grid has no steps")]
    EmptyGrid,
    #[error("shape mismatch for {what}: expected {expected}, found {found}")]
    Shape {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("model must be in Q-form; convert it with to_q_form first")]
    NotQForm,
    #[error("non-finite {quantity} for particle {particle} at step {step}")]
    NonFinite {
        step: usize,
        particle: usize,
        quantity: &'static str,
    },
    #[error("weights degenerated at step {step}: {source}")]
    Degenerate { step: usize, source: MeasureError },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationConfig<S> {
    pub particles: usize,
    pub delta: S,
    pub horizon: S,
    /// Subtract `logsumexp(z)` after every step. Off reproduces the plain
    /// recursion, whose weight total drifts away from one.
    pub renormalize: bool,
    pub seed: u64,
    pub initial_state: Vec<S>,
}

impl<S: Scalar> SimulationConfig<S> {
    pub fn validate(&self) -> Result<(), SimError> {
        if self.particles == 0 {
            return Err(SimError::InvalidConfig {
                field: "particles",
                reason: "must be at least 1".into(),
            });
        }
        if !(self.delta > S::zero()) || !self.delta.is_finite() {
            return Err(SimError::InvalidConfig {
                field: "delta",
                reason: format!("must be positive and finite, got {}", self.delta),
            });
        }
        if !(self.delta <= self.horizon) || !self.horizon.is_finite() {
            return Err(SimError::InvalidConfig {
                field: "delta",
                reason: format!("must not exceed the horizon {}", self.horizon),
            });
        }
        if self.initial_state.is_empty() || self.initial_state.iter().any(|v| !v.is_finite()) {
            return Err(SimError::InvalidConfig {
                field: "initial_state",
                reason: "must be a nonempty finite vector".into(),
            });
        }
        let steps = grid_steps(self.delta, self.horizon)?;
        let covered = S::of_usize(steps) * self.delta;
        if (covered - self.horizon).abs() > S::of(1e-9) * self.horizon {
            return Err(SimError::InvalidConfig {
                field: "delta",
                reason: format!("horizon {} is not a whole number of steps", self.horizon),
            });
        }
        Ok(())
    }

    pub fn steps(&self) -> Result<usize, SimError> {
        grid_steps(self.delta, self.horizon)
    }
}

/// State of all particles at one grid time.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleEnsemble<S> {
    pub step: usize,
    pub t: S,
    pub dim: usize,
    /// row-major `N × n`
    pub positions: Vec<S>,
    pub log_weights: Vec<S>,
    /// `ln L_i`, integrated from the observation function along the path.
    pub log_likelihoods: Vec<S>,
    pub aux: AuxState<S>,
}

impl<S: Scalar> ParticleEnsemble<S> {
    /// All particles at `x`, log-weights `ln(1/N)`, likelihoods one.
    pub fn initial(spec: &ModelSpec<S>, particles: usize, x: &[S]) -> Result<Self, SimError> {
        if x.len() != spec.dims.state {
            return Err(SimError::Shape {
                what: "initial state",
                expected: spec.dims.state,
                found: x.len(),
            });
        }
        if particles == 0 {
            return Err(SimError::InvalidConfig {
                field: "particles",
                reason: "must be at least 1".into(),
            });
        }
        let z0 = (S::one() / S::of_usize(particles)).ln();
        Ok(Self {
            step: 0,
            t: S::zero(),
            dim: x.len(),
            positions: x.iter().copied().cycle().take(particles * x.len()).collect(),
            log_weights: vec![z0; particles],
            log_likelihoods: vec![S::zero(); particles],
            aux: spec.aux.initial_state(particles),
        })
    }

    pub fn particles(&self) -> usize {
        self.log_weights.len()
    }

    pub fn position(&self, i: usize) -> &[S] {
        &self.positions[i * self.dim..(i + 1) * self.dim]
    }

    pub fn weights(&self) -> Result<Vec<S>, MeasureError> {
        normalize_log_weights(&self.log_weights)
    }

    pub fn measure(&self) -> Result<WeightedEmpiricalMeasure<S>, MeasureError> {
        WeightedEmpiricalMeasure::from_log_weights(self.dim, self.positions.clone(), &self.log_weights)
    }
}

/// Advance the ensemble by one explicit step of length `dt`.
///
/// `dw_row` holds every particle's driving increment for this step
/// (`[particle][component]`), `dy` the shared observation increment.
pub fn euler_step<S: Scalar>(
    ens: &ParticleEnsemble<S>,
    spec: &ModelSpec<S>,
    dw_row: &[S],
    dy: &[S],
    dt: S,
    renormalize: bool,
) -> Result<ParticleEnsemble<S>, SimError> {
    if spec.form != MeasureForm::Q {
        return Err(SimError::NotQForm);
    }
    let dims = spec.dims;
    let (n, m, k) = (dims.state, dims.noise, dims.obs);
    let count = ens.particles();
    if ens.dim != n {
        return Err(SimError::Shape { what: "ensemble state", expected: n, found: ens.dim });
    }
    if dw_row.len() != count * m {
        return Err(SimError::Shape { what: "driving increments", expected: count * m, found: dw_row.len() });
    }
    if dy.len() != k {
        return Err(SimError::Shape { what: "observation increment", expected: k, found: dy.len() });
    }

    let step = ens.step;
    let mu = ens
        .measure()
        .map_err(|source| SimError::Degenerate { step, source })?;
    let obs = ObservationSummary::evaluate(spec, ens.t, &mu, &ens.aux)?;

    let mut next = ens.clone();
    let mut drift = vec![S::zero(); n];
    let mut sigma1 = vec![S::zero(); n * m];
    let mut sigma2 = vec![S::zero(); n * k];
    let mut innovation = vec![S::zero(); k];

    for i in 0..count {
        let x = ens.position(i);
        let point = EvalPoint {
            t: ens.t,
            x,
            measure: &mu,
            aux: aux_view(&ens.aux, i),
        };
        spec.drift_at(&point, &mut drift);
        spec.diffusion1_at(&point, &mut sigma1);
        spec.diffusion2_at(&point, &mut sigma2);
        let dw = &dw_row[i * m..(i + 1) * m];
        let h = obs.at_atom(i);

        let out = &mut next.positions[i * n..(i + 1) * n];
        for r in 0..n {
            let mut v = x[r] + drift[r] * dt;
            if m > 0 {
                v += dot(&sigma1[r * m..(r + 1) * m], dw);
            }
            if spec.has_diffusion2() {
                v += dot(&sigma2[r * k..(r + 1) * k], dy);
            }
            out[r] = v;
        }
        if out.iter().any(|v| !v.is_finite()) {
            return Err(SimError::NonFinite { step, particle: i, quantity: "position" });
        }

        let r_drift = obs.log_weight_drift(h, &mut innovation);
        let z = ens.log_weights[i] + r_drift * dt + dot(&innovation, dy);
        if !z.is_finite() {
            return Err(SimError::NonFinite { step, particle: i, quantity: "log-weight" });
        }
        next.log_weights[i] = z;

        let ll = ens.log_likelihoods[i] + dot(h, dy) - S::half() * norm_sq(h) * dt;
        if !ll.is_finite() {
            return Err(SimError::NonFinite { step, particle: i, quantity: "log-likelihood" });
        }
        next.log_likelihoods[i] = ll;
    }

    (spec.aux.advance_shared)(ens.t, &mut next.aux.shared, dy, dt);
    if !spec.aux.particle_init.is_empty() {
        for i in 0..count {
            (spec.aux.advance_particle)(ens.t, next.aux.own_mut(i), &dw_row[i * m..(i + 1) * m], dt);
        }
    }

    if renormalize {
        let lse = log_sum_exp(&next.log_weights);
        for z in &mut next.log_weights {
            *z -= lse;
        }
    }
    next.step = step + 1;
    next.t = S::of_usize(step + 1) * dt;
    Ok(next)
}

fn aux_view<S: Scalar>(aux: &AuxState<S>, i: usize) -> AuxView<'_, S> {
    if aux.particles() > i {
        aux.view(i)
    } else {
        AuxView { shared: &aux.shared, own: &[] }
    }
}

/// Stored snapshots of an ensemble at every grid point `0..=steps`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory<S> {
    pub dim: usize,
    pub particles: usize,
    pub delta: S,
    pub times: Vec<S>,
    positions: Vec<S>,
    log_weights: Vec<S>,
    log_likelihoods: Vec<S>,
}

impl<S: Scalar> Trajectory<S> {
    fn with_capacity(dim: usize, particles: usize, delta: S, snapshots: usize) -> Self {
        Self {
            dim,
            particles,
            delta,
            times: Vec::with_capacity(snapshots),
            positions: Vec::with_capacity(snapshots * particles * dim),
            log_weights: Vec::with_capacity(snapshots * particles),
            log_likelihoods: Vec::with_capacity(snapshots * particles),
        }
    }

    fn push(&mut self, ens: &ParticleEnsemble<S>) {
        self.times.push(ens.t);
        self.positions.extend_from_slice(&ens.positions);
        self.log_weights.extend_from_slice(&ens.log_weights);
        self.log_likelihoods.extend_from_slice(&ens.log_likelihoods);
    }

    /// Build from explicit per-snapshot data (`positions` is `[snapshot][particle][coord]`).
    pub fn from_parts(
        dim: usize,
        particles: usize,
        delta: S,
        positions: Vec<S>,
        log_weights: Vec<S>,
    ) -> Result<Self, SimError> {
        if particles == 0 || dim == 0 || !positions.len().is_multiple_of(particles * dim) {
            return Err(SimError::Shape { what: "trajectory positions", expected: particles * dim, found: positions.len() });
        }
        let snapshots = positions.len() / (particles * dim);
        if snapshots == 0 || log_weights.len() != snapshots * particles {
            return Err(SimError::Shape { what: "trajectory log-weights", expected: snapshots * particles, found: log_weights.len() });
        }
        Ok(Self {
            dim,
            particles,
            delta,
            times: (0..snapshots).map(|k| S::of_usize(k) * delta).collect(),
            positions,
            log_likelihoods: vec![S::zero(); log_weights.len()],
            log_weights,
        })
    }

    pub fn steps(&self) -> usize {
        self.times.len() - 1
    }

    pub fn positions(&self, snapshot: usize) -> &[S] {
        let len = self.particles * self.dim;
        &self.positions[snapshot * len..(snapshot + 1) * len]
    }

    pub fn position(&self, snapshot: usize, particle: usize) -> &[S] {
        let start = (snapshot * self.particles + particle) * self.dim;
        &self.positions[start..start + self.dim]
    }

    pub fn log_weights(&self, snapshot: usize) -> &[S] {
        &self.log_weights[snapshot * self.particles..(snapshot + 1) * self.particles]
    }

    pub fn log_likelihoods(&self, snapshot: usize) -> &[S] {
        &self.log_likelihoods[snapshot * self.particles..(snapshot + 1) * self.particles]
    }

    pub fn weights(&self, snapshot: usize) -> Result<Vec<S>, MeasureError> {
        normalize_log_weights(self.log_weights(snapshot))
    }

    pub fn measure(&self, snapshot: usize) -> Result<WeightedEmpiricalMeasure<S>, MeasureError> {
        WeightedEmpiricalMeasure::from_log_weights(self.dim, self.positions(snapshot).to_vec(), self.log_weights(snapshot))
    }

    /// Scalar path of one particle (first coordinate).
    pub fn particle_path(&self, particle: usize) -> Vec<S> {
        (0..self.times.len()).map(|k| self.position(k, particle)[0]).collect()
    }

    /// `step,time,particle,weight,x_0..x_{n-1}`, one row per (step, particle).
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), SimError> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["step".to_string(), "time".into(), "particle".into(), "weight".into()];
        header.extend((0..self.dim).map(|j| format!("x_{j}")));
        w.write_record(&header).map_err(csv_io)?;
        for k in 0..self.times.len() {
            let weights = self.weights(k).map_err(|source| SimError::Degenerate { step: k, source })?;
            for (i, weight) in weights.iter().enumerate() {
                let mut row = vec![k.to_string(), self.times[k].to_string(), i.to_string(), weight.to_string()];
                row.extend(self.position(k, i).iter().map(|v| v.to_string()));
                w.write_record(&row).map_err(csv_io)?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

fn csv_io(e: csv::Error) -> SimError {
    SimError::Io(std::io::Error::other(e))
}

fn check_compatible<S: Scalar>(cfg: &SimulationConfig<S>, spec: &ModelSpec<S>, paths: &PathBundle<S>) -> Result<usize, SimError> {
    cfg.validate()?;
    if spec.form != MeasureForm::Q {
        return Err(SimError::NotQForm);
    }
    let steps = cfg.steps()?;
    let checks = [
        ("path particles", cfg.particles, paths.particles()),
        ("path steps", steps, paths.steps()),
        ("noise dimension", spec.dims.noise, paths.noise_dim()),
        ("observation dimension", spec.dims.obs, paths.obs_dim()),
        ("initial state", spec.dims.state, cfg.initial_state.len()),
    ];
    for (what, expected, found) in checks {
        if expected != found {
            return Err(SimError::Shape { what, expected, found });
        }
    }
    if paths.delta() != cfg.delta {
        return Err(SimError::InvalidConfig {
            field: "delta",
            reason: format!("paths were generated with step {}, config has {}", paths.delta(), cfg.delta),
        });
    }
    Ok(steps)
}

/// Run the scheme from uniform weights at `cfg.initial_state` over every step of `paths`.
pub fn simulate_particle_system<S: Scalar>(
    cfg: &SimulationConfig<S>,
    spec: &ModelSpec<S>,
    paths: &PathBundle<S>,
) -> Result<Trajectory<S>, SimError> {
    let steps = check_compatible(cfg, spec, paths)?;
    let mut ens = ParticleEnsemble::initial(spec, cfg.particles, &cfg.initial_state)?;
    let mut traj = Trajectory::with_capacity(spec.dims.state, cfg.particles, cfg.delta, steps + 1);
    traj.push(&ens);
    for n in 0..steps {
        ens = euler_step(&ens, spec, paths.dw_row(n), paths.dy(n), cfg.delta, cfg.renormalize)?;
        traj.push(&ens);
    }
    Ok(traj)
}

/// Closed-form benchmark trajectories driven by exactly the increments in
/// `paths` (synchronous coupling); one `steps + 1` vector per particle.
pub fn simulate_reference<S: Scalar>(params: &BenchmarkParams<S>, paths: &PathBundle<S>) -> Result<Vec<Vec<S>>, SimError> {
    params.validate()?;
    check_scalar_paths(paths, 0)?;
    let integral = observation_integral(params, paths);
    Ok((0..paths.particles())
        .map(|i| exact_with_integral(params, paths, i, &integral))
        .collect())
}

/// Attach log-weights to prescribed positions by integrating the same
/// weight dynamics as the scheme along them.
///
/// `positions` is `[snapshot][particle][coord]` with `steps + 1` snapshots.
pub fn reweight_along<S: Scalar>(
    spec: &ModelSpec<S>,
    positions: Vec<S>,
    paths: &PathBundle<S>,
    renormalize: bool,
) -> Result<Trajectory<S>, SimError> {
    if spec.form != MeasureForm::Q {
        return Err(SimError::NotQForm);
    }
    let (n, m, k) = (spec.dims.state, spec.dims.noise, spec.dims.obs);
    let count = paths.particles();
    let steps = paths.steps();
    if positions.len() != (steps + 1) * count * n {
        return Err(SimError::Shape { what: "reference positions", expected: (steps + 1) * count * n, found: positions.len() });
    }
    if paths.noise_dim() != m || paths.obs_dim() != k {
        return Err(SimError::Shape { what: "path dimensions", expected: m + k, found: paths.noise_dim() + paths.obs_dim() });
    }
    let dt = paths.delta();
    let z0 = (S::one() / S::of_usize(count)).ln();
    let mut z = vec![z0; count];
    let mut ll = vec![S::zero(); count];
    let mut aux = spec.aux.initial_state(count);
    let mut log_weights = Vec::with_capacity((steps + 1) * count);
    let mut log_likelihoods = Vec::with_capacity((steps + 1) * count);
    log_weights.extend_from_slice(&z);
    log_likelihoods.extend_from_slice(&ll);
    let mut innovation = vec![S::zero(); k];
    let row = count * n;

    for step in 0..steps {
        let t = paths.time(step);
        let mu = WeightedEmpiricalMeasure::from_log_weights(n, positions[step * row..(step + 1) * row].to_vec(), &z)
            .map_err(|source| SimError::Degenerate { step, source })?;
        let obs = ObservationSummary::evaluate(spec, t, &mu, &aux)?;
        let dy = paths.dy(step);
        for i in 0..count {
            let h = obs.at_atom(i);
            let r = obs.log_weight_drift(h, &mut innovation);
            z[i] += r * dt + dot(&innovation, dy);
            ll[i] += dot(h, dy) - S::half() * norm_sq(h) * dt;
            if !z[i].is_finite() || !ll[i].is_finite() {
                return Err(SimError::NonFinite { step, particle: i, quantity: "reference log-weight" });
            }
        }
        (spec.aux.advance_shared)(t, &mut aux.shared, dy, dt);
        if !spec.aux.particle_init.is_empty() {
            for i in 0..count {
                (spec.aux.advance_particle)(t, aux.own_mut(i), paths.dw(i, step), dt);
            }
        }
        if renormalize {
            let lse = log_sum_exp(&z);
            for v in &mut z {
                *v -= lse;
            }
        }
        log_weights.extend_from_slice(&z);
        log_likelihoods.extend_from_slice(&ll);
    }

    Ok(Trajectory {
        dim: n,
        particles: count,
        delta: dt,
        times: (0..=steps).map(|s| paths.time(s)).collect(),
        positions,
        log_weights,
        log_likelihoods,
    })
}

/// Exact benchmark trajectories together with their grid-integrated weights.
pub fn benchmark_reference<S: Scalar>(
    params: &BenchmarkParams<S>,
    spec: &ModelSpec<S>,
    paths: &PathBundle<S>,
    renormalize: bool,
) -> Result<Trajectory<S>, SimError> {
    let exact = simulate_reference(params, paths)?;
    let steps = paths.steps();
    let mut positions = Vec::with_capacity((steps + 1) * exact.len());
    for s in 0..=steps {
        positions.extend(exact.iter().map(|path| path[s]));
    }
    reweight_along(spec, positions, paths, renormalize)
}
