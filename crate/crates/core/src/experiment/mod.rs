//! Repeated-trial sweeps over particle counts.
//!
//! A sweep runs `trials` independent trials for every `N` in `n_list`. Trial
//! `(N, j)` draws all of its randomness from `seed::trial_seed(master, N, j)`,
//! so any single trial can be re-run in isolation and adding trials or
//! workers never changes an existing row.

mod output;
mod plot;

use crate::diagnostics::{error_en, fit_slope, summarize, CoupledRun, DiagnosticsError, DiagnosticsReport, SlopeFit};
use crate::model::{benchmark_model, BenchmarkParams, ModelError, ModelSpec};
use crate::scalar::Scalar;
use crate::sde::{benchmark_reference, generate_paths, simulate_particle_system, PathBundle, SimError, SimulationConfig, Trajectory};
use crate::seed;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::path::PathBuf;
use thiserror::Error;

pub use output::{read_summary_csv, write_raw_csv, write_results, OutputPaths};
pub use plot::render_plot;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("invalid experiment config: {field} {reason}")]
    InvalidConfig { field: &'static str, reason: String },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("trial {trial} with N = {particles} failed: {source}")]
    Trial {
        particles: usize,
        trial: usize,
        source: DiagnosticsError,
    },
    #[error("nothing to write: the result has no trials")]
    Empty,
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {reason}")]
    Parse { path: PathBuf, reason: String },
    #[error("cannot plot: {0}")]
    Plot(String),
    #[error("worker pool: {0}")]
    Pool(String),
}

/// Which model a sweep runs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ModelChoice<S> {
    Benchmark(BenchmarkParams<S>),
}

impl<S: Scalar> Default for ModelChoice<S> {
    fn default() -> Self {
        ModelChoice::Benchmark(BenchmarkParams::default())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig<S> {
    pub model: ModelChoice<S>,
    pub horizon: S,
    pub delta: S,
    pub n_list: Vec<usize>,
    pub trials: usize,
    pub master_seed: u64,
    pub alpha: S,
    pub beta: S,
    pub renormalize: bool,
    pub out_prefix: String,
    /// Upper bound on worker threads; 0 uses every available core.
    pub workers: usize,
}

impl<S: Scalar> Default for ExperimentConfig<S> {
    /// Benchmark at `T = 0.1`, `Δ = 1e-4`, `N ∈ {5, 15, …, 95}`, 20 trials.
    fn default() -> Self {
        Self {
            model: ModelChoice::default(),
            horizon: S::of(0.1),
            delta: S::of(1e-4),
            n_list: (5..=95).step_by(10).collect(),
            trials: 20,
            master_seed: 1,
            alpha: S::one(),
            beta: S::of(10.0),
            renormalize: true,
            out_prefix: "benchmark".into(),
            workers: 0,
        }
    }
}

impl<S: Scalar> ExperimentConfig<S> {
    pub fn validate(&self) -> Result<(), ExperimentError> {
        let bad = |field, reason: String| Err(ExperimentError::InvalidConfig { field, reason });
        match &self.model {
            ModelChoice::Benchmark(p) => p.validate()?,
        }
        if self.n_list.is_empty() {
            return bad("N_list", "must not be empty".into());
        }
        if self.n_list[0] == 0 {
            return bad("N_list", "particle counts must be positive".into());
        }
        if self.n_list.windows(2).any(|w| w[0] >= w[1]) {
            return bad("N_list", "must be strictly increasing".into());
        }
        if self.trials == 0 {
            return bad("trials", "must be at least 1".into());
        }
        if !(self.alpha > S::zero()) || !self.alpha.is_finite() {
            return bad("alpha", format!("must be positive, got {}", self.alpha));
        }
        if !(self.beta >= S::zero()) {
            return bad("beta", format!("must be nonnegative, got {}", self.beta));
        }
        self.simulation(self.n_list[0], 0, vec![S::zero()])
            .validate()
            .or_else(|e| match e {
                SimError::InvalidConfig { field, reason } => bad(field, reason),
                SimError::EmptyGrid => bad("delta", "leaves no steps before the horizon".into()),
                other => bad("delta", other.to_string()),
            })
    }

    /// Simulation settings of one trial.
    pub fn simulation(&self, particles: usize, trial: usize, initial_state: Vec<S>) -> SimulationConfig<S> {
        SimulationConfig {
            particles,
            delta: self.delta,
            horizon: self.horizon,
            renormalize: self.renormalize,
            seed: seed::trial_seed(self.master_seed, particles, trial),
            initial_state,
        }
    }
}

/// A model whose limiting trajectories can be reconstructed on the grid of a
/// path bundle, so that pathwise errors are meaningful.
pub trait ExactModel<S: Scalar>: Send + Sync {
    fn spec(&self) -> &ModelSpec<S>;
    fn initial_state(&self) -> Vec<S>;
    /// Reference trajectories driven by exactly the increments in `paths`.
    fn reference(&self, cfg: &SimulationConfig<S>, paths: &PathBundle<S>) -> Result<Trajectory<S>, SimError>;
}

/// The closed-form benchmark with its exact solution as reference.
#[derive(Clone)]
pub struct BenchmarkExact<S> {
    params: BenchmarkParams<S>,
    spec: ModelSpec<S>,
}

impl<S: Scalar> BenchmarkExact<S> {
    pub fn new(params: BenchmarkParams<S>) -> Result<Self, ModelError> {
        Ok(Self { params, spec: benchmark_model(params)? })
    }
}

impl<S: Scalar> ExactModel<S> for BenchmarkExact<S> {
    fn spec(&self) -> &ModelSpec<S> {
        &self.spec
    }

    fn initial_state(&self) -> Vec<S> {
        vec![self.params.initial_state()]
    }

    fn reference(&self, cfg: &SimulationConfig<S>, paths: &PathBundle<S>) -> Result<Trajectory<S>, SimError> {
        benchmark_reference(&self.params, &self.spec, paths, cfg.renormalize)
    }
}

/// Build the model a config selects.
pub fn exact_model<S: Scalar>(choice: &ModelChoice<S>) -> Result<Box<dyn ExactModel<S>>, ExperimentError> {
    match choice {
        ModelChoice::Benchmark(p) => Ok(Box::new(BenchmarkExact::new(*p)?)),
    }
}

/// One row of a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord<S> {
    pub particles: usize,
    pub trial: usize,
    pub seed: u64,
    pub e_n: S,
    pub diagnostics: DiagnosticsReport,
}

/// Aggregate over the trials of one particle count.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NSummary<S> {
    pub particles: usize,
    pub mean: S,
    /// Standard error of the mean; zero for a single trial.
    pub stderr: S,
    pub trials: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance<S> {
    pub config: ExperimentConfig<S>,
    pub version: String,
    pub seed_scheme: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult<S> {
    /// Sorted by `(N, trial)`.
    pub records: Vec<TrialRecord<S>>,
    pub summary: Vec<NSummary<S>>,
    /// `None` with fewer than two particle counts or a zero mean error.
    pub fit: Option<SlopeFit>,
    pub provenance: Provenance<S>,
}

impl<S: Scalar> ExperimentResult<S> {
    /// Aggregate sorted records; the fold order is fixed by the sort.
    pub fn from_records(config: ExperimentConfig<S>, mut records: Vec<TrialRecord<S>>) -> Self {
        records.sort_by_key(|r| (r.particles, r.trial));
        let summary = aggregate(&records);
        let points: Vec<(S, S)> = summary.iter().map(|s| (S::of_usize(s.particles), s.mean)).collect();
        let fit = fit_slope(&points).ok();
        Self {
            records,
            summary,
            fit,
            provenance: Provenance {
                config,
                version: env!("CARGO_PKG_VERSION").into(),
                seed_scheme: "trial = splitmix(splitmix(master, N), trial); ChaCha8 stream i drives particle i, stream N drives Y"
                    .into(),
            },
        }
    }
}

/// Per-`N` mean and standard error of `e_N` over `records` (sorted by `N`).
pub fn aggregate<S: Scalar>(records: &[TrialRecord<S>]) -> Vec<NSummary<S>> {
    records
        .chunk_by(|a, b| a.particles == b.particles)
        .map(|group| {
            let count = S::of_usize(group.len());
            let mean = group.iter().map(|r| r.e_n).sum::<S>() / count;
            let stderr = if group.len() < 2 {
                S::zero()
            } else {
                let var = group.iter().map(|r| (r.e_n - mean) * (r.e_n - mean)).sum::<S>() / (count - S::one());
                (var / count).sqrt()
            };
            NSummary { particles: group[0].particles, mean, stderr, trials: group.len() }
        })
        .collect()
}

/// Trial `trial` at particle count `particles` with an explicit model.
pub fn run_trial_with<S: Scalar>(
    model: &dyn ExactModel<S>,
    cfg: &ExperimentConfig<S>,
    particles: usize,
    trial: usize,
) -> Result<TrialRecord<S>, ExperimentError> {
    let tag = |source: DiagnosticsError| ExperimentError::Trial { particles, trial, source };
    let sim = cfg.simulation(particles, trial, model.initial_state());
    let spec = model.spec();
    let paths = generate_paths(&sim, spec.dims.noise, spec.dims.obs).map_err(|e| tag(e.into()))?;
    let particle = simulate_particle_system(&sim, spec, &paths).map_err(|e| tag(e.into()))?;
    let reference = model.reference(&sim, &paths).map_err(|e| tag(e.into()))?;
    let run = CoupledRun::new(particle, reference).map_err(tag)?;
    let diagnostics = summarize(&run, cfg.alpha, cfg.beta).map_err(tag)?;
    Ok(TrialRecord { particles, trial, seed: sim.seed, e_n: error_en(&run), diagnostics })
}

/// Trial `trial` at particle count `particles` of the model `cfg` selects.
pub fn run_trial<S: Scalar>(cfg: &ExperimentConfig<S>, particles: usize, trial: usize) -> Result<TrialRecord<S>, ExperimentError> {
    cfg.validate()?;
    let model = exact_model(&cfg.model)?;
    run_trial_with(model.as_ref(), cfg, particles, trial)
}

/// A sweep that stopped on a failing trial, with every row that did finish.
#[derive(Debug)]
pub struct SweepFailure<S> {
    pub error: ExperimentError,
    pub completed: Vec<TrialRecord<S>>,
}

impl<S> fmt::Display for SweepFailure<S> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} ({} trials completed)", self.error, self.completed.len())
    }
}

impl<S: fmt::Debug> std::error::Error for SweepFailure<S> {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.error)
    }
}

impl<S> From<ExperimentError> for SweepFailure<S> {
    fn from(error: ExperimentError) -> Self {
        Self { error, completed: Vec::new() }
    }
}

/// Run every `(N, trial)` of `cfg` with an explicit model.
pub fn run_sweep_with<S: Scalar>(model: &dyn ExactModel<S>, cfg: &ExperimentConfig<S>) -> Result<ExperimentResult<S>, SweepFailure<S>> {
    cfg.validate()?;
    let jobs: Vec<(usize, usize)> = cfg
        .n_list
        .iter()
        .flat_map(|&n| (0..cfg.trials).map(move |j| (n, j)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| ExperimentError::Pool(e.to_string()))?;
    let outcomes: Vec<Result<TrialRecord<S>, ExperimentError>> =
        pool.install(|| jobs.par_iter().map(|&(n, j)| run_trial_with(model, cfg, n, j)).collect());

    let mut completed = Vec::with_capacity(outcomes.len());
    let mut first_error = None;
    for outcome in outcomes {
        match outcome {
            Ok(r) => completed.push(r),
            Err(e) if first_error.is_none() => first_error = Some(e),
            Err(_) => {}
        }
    }
    match first_error {
        Some(error) => Err(SweepFailure { error, completed }),
        None => Ok(ExperimentResult::from_records(cfg.clone(), completed)),
    }
}

/// Run every `(N, trial)` of the model `cfg` selects.
pub fn run_sweep<S: Scalar>(cfg: &ExperimentConfig<S>) -> Result<ExperimentResult<S>, SweepFailure<S>> {
    cfg.validate()?;
    let model = exact_model(&cfg.model)?;
    run_sweep_with(model.as_ref(), cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Dims, MeasureForm};

    /// All coefficients zero: the scheme never moves, neither does the truth.
    struct Frozen(ModelSpec<f64>);

    impl ExactModel<f64> for Frozen {
        fn spec(&self) -> &ModelSpec<f64> {
            &self.0
        }
        fn initial_state(&self) -> Vec<f64> {
            vec![0.5]
        }
        fn reference(&self, cfg: &SimulationConfig<f64>, paths: &PathBundle<f64>) -> Result<Trajectory<f64>, SimError> {
            let snapshots = paths.steps() + 1;
            let n = cfg.particles;
            Trajectory::from_parts(1, n, cfg.delta, vec![0.5; snapshots * n], vec![-(n as f64).ln(); snapshots * n])
        }
    }

    /// Reference equals the scheme except particle 0, shifted by one: `e_N = 1/N`.
    struct Injector(ModelSpec<f64>);

    impl ExactModel<f64> for Injector {
        fn spec(&self) -> &ModelSpec<f64> {
            &self.0
        }
        fn initial_state(&self) -> Vec<f64> {
            vec![0.0]
        }
        fn reference(&self, cfg: &SimulationConfig<f64>, paths: &PathBundle<f64>) -> Result<Trajectory<f64>, SimError> {
            let t = simulate_particle_system(cfg, &self.0, paths)?;
            let n = cfg.particles;
            let mut positions = Vec::new();
            let mut lw = Vec::new();
            for s in 0..=t.steps() {
                positions.extend_from_slice(t.positions(s));
                positions[s * n] += 1.0;
                lw.extend_from_slice(t.log_weights(s));
            }
            Trajectory::from_parts(1, n, cfg.delta, positions, lw)
        }
    }

    fn frozen_spec() -> ModelSpec<f64> {
        ModelSpec::new("frozen", Dims::SCALAR, MeasureForm::Q)
    }

    fn small(n_list: Vec<usize>, trials: usize) -> ExperimentConfig<f64> {
        ExperimentConfig { horizon: 0.1, delta: 1e-3, n_list, trials, workers: 2, ..Default::default() }
    }

    #[test]
    fn validation() {
        assert!(small(vec![5, 15], 2).validate().is_ok());
        let field = |c: ExperimentConfig<f64>| match c.validate() {
            Err(ExperimentError::InvalidConfig { field, .. }) => field,
            other => panic!("{other:?}"),
        };
        assert_eq!(field(small(vec![], 1)), "N_list");
        assert_eq!(field(small(vec![15, 5], 1)), "N_list");
        assert_eq!(field(small(vec![5, 5], 1)), "N_list");
        assert_eq!(field(small(vec![5], 0)), "trials");
        assert_eq!(field(ExperimentConfig { alpha: 0.0, ..small(vec![5], 1) }), "alpha");
        assert_eq!(field(ExperimentConfig { delta: 0.3, ..small(vec![5], 1) }), "delta");
        assert_eq!(field(ExperimentConfig { delta: 0.03, ..small(vec![5], 1) }), "delta");
    }

    #[test]
    fn trial_is_deterministic() {
        let cfg = small(vec![5], 1);
        let a = run_trial(&cfg, 5, 3).unwrap();
        let b = run_trial(&cfg, 5, 3).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.seed, seed::trial_seed(cfg.master_seed, 5, 3));
    }

    #[test]
    fn benchmark_smoke_trial() {
        let r = run_trial(&small(vec![5], 1), 5, 0).unwrap();
        assert!(r.e_n.is_finite() && r.e_n > 0.0, "e_N = {}", r.e_n);
        assert!(r.diagnostics.psi_min > 0.0 && r.diagnostics.psi_min <= 1.0);
    }

    #[test]
    fn frozen_model_has_zero_error() {
        let model = Frozen(frozen_spec());
        let r = run_trial_with(&model, &small(vec![4], 1), 4, 0).unwrap();
        assert_eq!(r.e_n, 0.0);
    }

    #[test]
    fn single_trial_sweep_wraps_the_trial() {
        let cfg = small(vec![5], 1);
        let res = run_sweep(&cfg).unwrap();
        assert_eq!(res.records, vec![run_trial(&cfg, 5, 0).unwrap()]);
        assert_eq!(res.summary.len(), 1);
        assert_eq!(res.summary[0].mean, res.records[0].e_n);
        assert_eq!(res.summary[0].stderr, 0.0);
        assert!(res.fit.is_none());
    }

    #[test]
    fn injected_inverse_n_error_fits_slope_minus_one() {
        let model = Injector(frozen_spec());
        let cfg = small(vec![5, 10, 20, 40], 2);
        let res = run_sweep_with(&model, &cfg).unwrap();
        for s in &res.summary {
            assert!((s.mean - 1.0 / s.particles as f64).abs() < 1e-15);
        }
        let fit = res.fit.unwrap();
        assert!((fit.slope + 1.0).abs() < 1e-12, "{fit:?}");
    }

    #[test]
    fn worker_count_does_not_change_rows() {
        let cfg = small(vec![3, 6], 3);
        let one = run_sweep(&ExperimentConfig { workers: 1, ..cfg.clone() }).unwrap();
        let four = run_sweep(&ExperimentConfig { workers: 4, ..cfg }).unwrap();
        assert_eq!(one.records, four.records);
    }

    #[test]
    fn more_trials_keep_existing_rows() {
        let few = run_sweep(&small(vec![5], 2)).unwrap();
        let many = run_sweep(&small(vec![5], 4)).unwrap();
        assert_eq!(few.records[..], many.records[..2]);
    }

    #[test]
    fn aggregates_match_recomputation() {
        let res = run_sweep(&small(vec![3, 7], 4)).unwrap();
        for s in &res.summary {
            let rows: Vec<f64> = res.records.iter().filter(|r| r.particles == s.particles).map(|r| r.e_n).collect();
            let mean = rows.iter().sum::<f64>() / rows.len() as f64;
            let var = rows.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (rows.len() - 1) as f64;
            assert!((s.mean - mean).abs() <= 1e-12 * mean.abs().max(1.0));
            assert!((s.stderr - (var / rows.len() as f64).sqrt()).abs() <= 1e-12);
        }
    }

    #[test]
    fn failing_trial_reports_partial_rows() {
        struct Failing(ModelSpec<f64>);
        impl ExactModel<f64> for Failing {
            fn spec(&self) -> &ModelSpec<f64> {
                &self.0
            }
            fn initial_state(&self) -> Vec<f64> {
                vec![0.0]
            }
            fn reference(&self, cfg: &SimulationConfig<f64>, paths: &PathBundle<f64>) -> Result<Trajectory<f64>, SimError> {
                if cfg.particles == 4 {
                    return Err(SimError::EmptyGrid);
                }
                Frozen(self.0.clone()).reference(cfg, paths)
            }
        }
        let failure = run_sweep_with(&Failing(frozen_spec()), &small(vec![2, 4], 2)).unwrap_err();
        assert!(matches!(failure.error, ExperimentError::Trial { particles: 4, trial: 0, .. }));
        assert_eq!(failure.completed.len(), 2);
    }
}
