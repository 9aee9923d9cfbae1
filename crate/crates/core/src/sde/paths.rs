use super::{SimError, SimulationConfig};
use crate::scalar::Scalar;
use crate::seed;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

/// Where a generated bundle's numbers came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedRecord {
    pub seed: u64,
    /// particle `i` uses stream `i`; the observation path uses this stream.
    pub observation_stream: u64,
}

/// Brownian increments on a uniform grid: one driving path per particle and
/// one shared observation path.
///
/// Storage is step-major so that one Euler step reads a contiguous row.
#[derive(Debug, Clone, PartialEq)]
pub struct PathBundle<S> {
    delta: S,
    steps: usize,
    particles: usize,
    noise_dim: usize,
    obs_dim: usize,
    dw: Vec<S>,
    dy: Vec<S>,
    pub seed_record: Option<SeedRecord>,
}

impl<S: Scalar> PathBundle<S> {
    /// `dw` is indexed `[step][particle][component]`, `dy` is `[step][component]`.
    pub fn from_increments(
        delta: S,
        particles: usize,
        noise_dim: usize,
        obs_dim: usize,
        dw: Vec<S>,
        dy: Vec<S>,
    ) -> Result<Self, SimError> {
        if !(delta > S::zero()) {
            return Err(SimError::InvalidConfig {
                field: "delta",
                reason: "must be positive".into(),
            });
        }
        if obs_dim == 0 || !dy.len().is_multiple_of(obs_dim) {
            return Err(SimError::Shape {
                what: "observation increments",
                expected: obs_dim,
                found: dy.len(),
            });
        }
        let steps = dy.len() / obs_dim;
        if steps == 0 {
            return Err(SimError::EmptyGrid);
        }
        if dw.len() != steps * particles * noise_dim {
            return Err(SimError::Shape {
                what: "driving increments",
                expected: steps * particles * noise_dim,
                found: dw.len(),
            });
        }
        Ok(Self {
            delta,
            steps,
            particles,
            noise_dim,
            obs_dim,
            dw,
            dy,
            seed_record: None,
        })
    }

    pub fn delta(&self) -> S {
        self.delta
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn particles(&self) -> usize {
        self.particles
    }

    pub fn noise_dim(&self) -> usize {
        self.noise_dim
    }

    pub fn obs_dim(&self) -> usize {
        self.obs_dim
    }

    /// Grid time `n·Δ`.
    #[inline]
    pub fn time(&self, n: usize) -> S {
        S::of_usize(n) * self.delta
    }

    pub fn dw(&self, particle: usize, step: usize) -> &[S] {
        let start = (step * self.particles + particle) * self.noise_dim;
        &self.dw[start..start + self.noise_dim]
    }

    pub fn dw_mut(&mut self, particle: usize, step: usize) -> &mut [S] {
        let start = (step * self.particles + particle) * self.noise_dim;
        &mut self.dw[start..start + self.noise_dim]
    }

    /// All particles' driving increments for one step, `[particle][component]`.
    pub fn dw_row(&self, step: usize) -> &[S] {
        let len = self.particles * self.noise_dim;
        &self.dw[step * len..(step + 1) * len]
    }

    pub fn dy(&self, step: usize) -> &[S] {
        &self.dy[step * self.obs_dim..(step + 1) * self.obs_dim]
    }

    /// Same Brownian paths on a grid twice as coarse (increments summed pairwise).
    pub fn coarsen(&self) -> Result<Self, SimError> {
        if !self.steps.is_multiple_of(2) {
            return Err(SimError::Shape {
                what: "steps (must be even to coarsen)",
                expected: self.steps + 1,
                found: self.steps,
            });
        }
        let row = self.particles * self.noise_dim;
        let dw = self
            .dw
            .chunks_exact(2 * row)
            .flat_map(|pair| (0..row).map(move |j| pair[j] + pair[row + j]))
            .collect();
        let k = self.obs_dim;
        let dy = self
            .dy
            .chunks_exact(2 * k)
            .flat_map(|pair| (0..k).map(move |j| pair[j] + pair[k + j]))
            .collect();
        let mut out = Self::from_increments(
            self.delta + self.delta,
            self.particles,
            self.noise_dim,
            self.obs_dim,
            dw,
            dy,
        )?;
        out.seed_record = self.seed_record;
        Ok(out)
    }

    /// Keep only particles `0..particles`; the observation path is untouched.
    pub fn truncate_particles(&self, particles: usize) -> Self {
        let m = self.noise_dim;
        let mut dw = Vec::with_capacity(self.steps * particles * m);
        for n in 0..self.steps {
            dw.extend_from_slice(&self.dw_row(n)[..particles * m]);
        }
        Self {
            particles,
            dw,
            dy: self.dy.clone(),
            ..*self
        }
    }

    pub fn increments(&self) -> (&[S], &[S]) {
        (&self.dw, &self.dy)
    }
}

/// Number of grid steps for `(Δ, T)`: `round(T / Δ)`.
pub fn grid_steps<S: Scalar>(delta: S, horizon: S) -> Result<usize, SimError> {
    let ratio = (horizon / delta).round();
    let steps = ratio.to_usize().unwrap_or(0);
    if steps == 0 {
        return Err(SimError::EmptyGrid);
    }
    Ok(steps)
}

/// Draw all increments for a simulation.
///
/// Particle `i` reads stream `i` of `cfg.seed`, the observation path reads
/// stream `N`; each increment is `sqrt(Δ)` times a standard normal.
pub fn generate_paths<S: Scalar>(
    cfg: &SimulationConfig<S>,
    noise_dim: usize,
    obs_dim: usize,
) -> Result<PathBundle<S>, SimError> {
    cfg.validate()?;
    let steps = cfg.steps()?;
    let n = cfg.particles;
    let scale = cfg.delta.sqrt();

    let mut dw = vec![S::zero(); steps * n * noise_dim];
    for i in 0..n {
        let mut rng = seed::stream(cfg.seed, i as u64);
        for step in 0..steps {
            let start = (step * n + i) * noise_dim;
            for v in &mut dw[start..start + noise_dim] {
                *v = scale * S::of(rng.sample::<f64, _>(StandardNormal));
            }
        }
    }
    let mut rng = seed::stream(cfg.seed, n as u64);
    let dy = (0..steps * obs_dim)
        .map(|_| scale * S::of(rng.sample::<f64, _>(StandardNormal)))
        .collect();

    let mut bundle = PathBundle::from_increments(cfg.delta, n, noise_dim, obs_dim, dw, dy)?;
    bundle.seed_record = Some(SeedRecord {
        seed: cfg.seed,
        observation_stream: n as u64,
    });
    Ok(bundle)
}
