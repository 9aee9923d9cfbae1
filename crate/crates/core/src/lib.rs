//! Weighted interacting-particle simulation of conditional McKean–Vlasov SDEs.
//!
//! The crate is organised bottom-up:
//!
//! * [`measure`]: weighted empirical measures, log-weight normalisation and
//!   exact 1-Wasserstein distances;
//! * [`model`]: coefficient bundles, the weight-dynamics functions `M`, `H`,
//!   `R`, and the closed-form scalar benchmark;
//! * [`sde`]: Brownian path bundles and the Euler–Maruyama particle scheme;
//! * [`diagnostics`]: multiplier, stopping time, likelihood check, pathwise
//!   error and log-log slope fitting;
//! * [`experiment`]: repeated-trial sweeps over particle counts, CSV/JSON
//!   persistence and the SVG convergence plot.
//!
//! All numerics are generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix `f64`, which is what the command-line tool uses.

// `!(x > 0)` rejects NaN along with nonpositive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod diagnostics;
pub mod experiment;
pub mod measure;
pub mod model;
pub mod scalar;
pub mod sde;
pub mod seed;

pub use scalar::Scalar;

pub type Measure = measure::WeightedEmpiricalMeasure<f64>;
pub type Model = model::ModelSpec<f64>;
pub type Benchmark = model::BenchmarkParams<f64>;
pub type Paths = sde::PathBundle<f64>;
pub type Ensemble = sde::ParticleEnsemble<f64>;
pub type SimConfig = sde::SimulationConfig<f64>;
pub type Run = diagnostics::CoupledRun<f64>;
pub type Config = experiment::ExperimentConfig<f64>;
pub type Results = experiment::ExperimentResult<f64>;

pub type Measure32 = measure::WeightedEmpiricalMeasure<f32>;
pub type Model32 = model::ModelSpec<f32>;
pub type Paths32 = sde::PathBundle<f32>;
