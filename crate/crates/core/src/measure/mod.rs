//! Weighted empirical measures and 1-Wasserstein distances between them.
//!
//! A [`WeightedEmpiricalMeasure`] is a finite list of atoms `(position, weight)`
//! whose weights are strictly positive and sum to one. Unnormalized particle
//! likelihoods never live here; they are carried as log-weights by the
//! simulator and pass through [`normalize_log_weights`] on the way in.
//!
//! Distances use the Euclidean ground cost. [`w1_1d`] is the fast path for
//! scalar measures (CDF sweep), [`w1_exact`] solves the discrete transport
//! problem and serves as the oracle for small instances.

mod transport;

use crate::scalar::{distance, norm, Scalar};
use thiserror::Error;

pub use transport::{solve_transport, TransportPlan};

/// Largest atom count accepted by [`w1_exact`] unless a cap is passed explicitly.
pub const DEFAULT_ATOM_CAP: usize = 256;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MeasureError {
    #[error("measure has no atoms")]
    Empty,
    #[error("non-finite value at index {index}")]
    NonFinite { index: usize },
    #[error("weight {index} is not strictly positive ({weight})")]
    NonPositiveWeight { index: usize, weight: f64 },
    #[error("weights sum to {sum}, expected 1")]
    NotNormalized { sum: f64 },
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("expected a one-dimensional measure, got dimension {0}")]
    NotOneDimensional(usize),
    #[error("exact transport is capped at {cap} atoms per measure, got {count}")]
    TooManyAtoms { count: usize, cap: usize },
    #[error("paired measures need equal atom counts ({left} vs {right})")]
    AtomCountMismatch { left: usize, right: usize },
}

/// Tolerance used when checking that stored weights sum to one.
pub(crate) fn sum_tolerance<S: Scalar>(atoms: usize) -> S {
    let floor = S::of(1e-12);
    let scaled = S::epsilon() * S::of_usize(4 * atoms.max(1));
    floor.max(scaled)
}

/// `ln Σ exp(z_i)` with the maximum factored out. Returns `-inf` for an empty slice.
pub fn log_sum_exp<S: Scalar>(z: &[S]) -> S {
    let max = z.iter().copied().fold(S::neg_infinity(), S::max);
    if max == S::neg_infinity() {
        return max;
    }
    let mut sum = S::zero();
    for &v in z {
        sum += (v - max).exp();
    }
    max + sum.ln()
}

/// Turn log-weights into normalized weights.
///
/// Computed as `exp(z_i - max) / Σ_j exp(z_j - max)`, which equals
/// `exp(z_i - logsumexp(z))` and returns exactly `1/N` for equal inputs.
pub fn normalize_log_weights<S: Scalar>(z: &[S]) -> Result<Vec<S>, MeasureError> {
    if z.is_empty() {
        return Err(MeasureError::Empty);
    }
    if let Some(index) = z.iter().position(|v| !v.is_finite()) {
        return Err(MeasureError::NonFinite { index });
    }
    let max = z.iter().copied().fold(S::neg_infinity(), S::max);
    let mut w: Vec<S> = z.iter().map(|&v| (v - max).exp()).collect();
    let mut total = S::zero();
    for &v in &w {
        total += v;
    }
    for v in &mut w {
        *v /= total;
    }
    Ok(w)
}

/// Finite set of weighted atoms in `R^dim`; weights are positive and normalized.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedEmpiricalMeasure<S> {
    dim: usize,
    positions: Vec<S>,
    weights: Vec<S>,
    mean: Vec<S>,
}

impl<S: Scalar> WeightedEmpiricalMeasure<S> {
    /// `positions` is row-major, `weights.len()` rows of `dim` coordinates.
    pub fn new(dim: usize, positions: Vec<S>, weights: Vec<S>) -> Result<Self, MeasureError> {
        if weights.is_empty() {
            return Err(MeasureError::Empty);
        }
        if dim == 0 || positions.len() != dim * weights.len() {
            return Err(MeasureError::DimensionMismatch {
                expected: dim * weights.len(),
                found: positions.len(),
            });
        }
        if let Some(index) = positions.iter().position(|v| !v.is_finite()) {
            return Err(MeasureError::NonFinite { index: index / dim });
        }
        let mut sum = S::zero();
        for (index, &w) in weights.iter().enumerate() {
            if !w.is_finite() {
                return Err(MeasureError::NonFinite { index });
            }
            if w <= S::zero() {
                return Err(MeasureError::NonPositiveWeight {
                    index,
                    weight: w.to_f64_lossy(),
                });
            }
            sum += w;
        }
        if (sum - S::one()).abs() > sum_tolerance::<S>(weights.len()) {
            return Err(MeasureError::NotNormalized {
                sum: sum.to_f64_lossy(),
            });
        }
        let mean = weighted_mean(dim, &positions, &weights);
        Ok(Self {
            dim,
            positions,
            weights,
            mean,
        })
    }

    /// Build from unnormalized log-weights (the simulator's representation).
    pub fn from_log_weights(
        dim: usize,
        positions: Vec<S>,
        log_weights: &[S],
    ) -> Result<Self, MeasureError> {
        let weights = normalize_log_weights(log_weights)?;
        Self::new(dim, positions, weights)
    }

    /// Equal weights `1/N` on every row of `positions`.
    pub fn uniform(dim: usize, positions: Vec<S>) -> Result<Self, MeasureError> {
        if dim == 0 {
            return Err(MeasureError::DimensionMismatch {
                expected: 1,
                found: 0,
            });
        }
        let count = positions.len() / dim;
        if count == 0 {
            return Err(MeasureError::Empty);
        }
        let w = S::one() / S::of_usize(count);
        Self::new(dim, positions, vec![w; count])
    }

    pub fn dirac(position: &[S]) -> Result<Self, MeasureError> {
        Self::new(position.len(), position.to_vec(), vec![S::one()])
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn position(&self, i: usize) -> &[S] {
        &self.positions[i * self.dim..(i + 1) * self.dim]
    }

    pub fn weight(&self, i: usize) -> S {
        self.weights[i]
    }

    pub fn weights(&self) -> &[S] {
        &self.weights
    }

    pub fn positions(&self) -> &[S] {
        &self.positions
    }

    pub fn atoms(&self) -> impl Iterator<Item = (&[S], S)> + '_ {
        self.positions
            .chunks_exact(self.dim)
            .zip(self.weights.iter().copied())
    }

    /// Shift every atom by `offset`.
    pub fn translated(&self, offset: &[S]) -> Result<Self, MeasureError> {
        if offset.len() != self.dim {
            return Err(MeasureError::DimensionMismatch {
                expected: self.dim,
                found: offset.len(),
            });
        }
        let positions = self
            .positions
            .chunks_exact(self.dim)
            .flat_map(|p| p.iter().zip(offset).map(|(&a, &b)| a + b))
            .collect();
        Self::new(self.dim, positions, self.weights.clone())
    }
}

fn weighted_mean<S: Scalar>(dim: usize, positions: &[S], weights: &[S]) -> Vec<S> {
    let mut mean = vec![S::zero(); dim];
    for (p, &w) in positions.chunks_exact(dim).zip(weights) {
        for (m, &x) in mean.iter_mut().zip(p) {
            *m += w * x;
        }
    }
    mean
}

/// `∫ x μ(dx) = Σ w_i x_i`, the integral of the identity map.
pub fn integrate_linear<S: Scalar>(mu: &WeightedEmpiricalMeasure<S>) -> &[S] {
    &mu.mean
}

/// Exact W1 between two scalar measures via `∫ |F_μ - F_ν| dx`.
pub fn w1_1d<S: Scalar>(
    mu: &WeightedEmpiricalMeasure<S>,
    nu: &WeightedEmpiricalMeasure<S>,
) -> Result<S, MeasureError> {
    for m in [mu, nu] {
        if m.dim != 1 {
            return Err(MeasureError::NotOneDimensional(m.dim));
        }
    }
    // (position, mass from μ, mass from ν); sorted fully so that the
    // accumulation order does not depend on the input atom order.
    let mut events: Vec<(S, S, S)> = mu
        .atoms()
        .map(|(p, w)| (p[0], w, S::zero()))
        .chain(nu.atoms().map(|(p, w)| (p[0], S::zero(), w)))
        .collect();
    events.sort_by(|a, b| {
        a.0.partial_cmp(&b.0)
            .unwrap()
            .then(a.1.partial_cmp(&b.1).unwrap())
            .then(a.2.partial_cmp(&b.2).unwrap())
    });

    let mut merged: Vec<(S, S, S)> = Vec::with_capacity(events.len());
    for (x, a, b) in events {
        match merged.last_mut() {
            Some(last) if last.0 == x => {
                last.1 += a;
                last.2 += b;
            }
            _ => merged.push((x, a, b)),
        }
    }

    let (mut cdf_mu, mut cdf_nu, mut total) = (S::zero(), S::zero(), S::zero());
    for pair in merged.windows(2) {
        cdf_mu += pair[0].1;
        cdf_nu += pair[0].2;
        total += (cdf_mu - cdf_nu).abs() * (pair[1].0 - pair[0].0);
    }
    Ok(total)
}

/// Exact W1 by solving the transport problem; each measure may hold at most
/// [`DEFAULT_ATOM_CAP`] atoms.
pub fn w1_exact<S: Scalar>(
    mu: &WeightedEmpiricalMeasure<S>,
    nu: &WeightedEmpiricalMeasure<S>,
) -> Result<S, MeasureError> {
    w1_exact_with_cap(mu, nu, DEFAULT_ATOM_CAP)
}

pub fn w1_exact_with_cap<S: Scalar>(
    mu: &WeightedEmpiricalMeasure<S>,
    nu: &WeightedEmpiricalMeasure<S>,
    cap: usize,
) -> Result<S, MeasureError> {
    if mu.dim != nu.dim {
        return Err(MeasureError::DimensionMismatch {
            expected: mu.dim,
            found: nu.dim,
        });
    }
    for m in [mu, nu] {
        if m.len() > cap {
            return Err(MeasureError::TooManyAtoms {
                count: m.len(),
                cap,
            });
        }
    }
    let mut cost = Vec::with_capacity(mu.len() * nu.len());
    for (p, _) in mu.atoms() {
        for (q, _) in nu.atoms() {
            cost.push(distance(p, q));
        }
    }
    Ok(solve_transport(&mu.weights, &nu.weights, &cost).cost)
}

/// Upper bound on `W1(μ, ν)` for two clouds paired atom by atom:
/// `Σ |w_i - w̃_i| |X_i| + Σ w̃_i |X_i - X̃_i|`.
///
/// Obtained by routing through the intermediate measure that carries ν's
/// weights on μ's positions.
pub fn w1_coupling_bound<S: Scalar>(
    mu: &WeightedEmpiricalMeasure<S>,
    nu: &WeightedEmpiricalMeasure<S>,
) -> Result<S, MeasureError> {
    if mu.len() != nu.len() {
        return Err(MeasureError::AtomCountMismatch {
            left: mu.len(),
            right: nu.len(),
        });
    }
    if mu.dim != nu.dim {
        return Err(MeasureError::DimensionMismatch {
            expected: mu.dim,
            found: nu.dim,
        });
    }
    let mut reweight = S::zero();
    let mut displace = S::zero();
    for ((x, w), (y, v)) in mu.atoms().zip(nu.atoms()) {
        reweight += (w - v).abs() * norm(x);
        displace += v * distance(x, y);
    }
    Ok(reweight + displace)
}
