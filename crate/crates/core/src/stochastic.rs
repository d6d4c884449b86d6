//! Reproducible random streams and the AR(1) red-noise process.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Name of the Gaussian transform, recorded in run metadata because
/// bit-reproducibility only holds for a fixed method.
pub const GAUSSIAN_METHOD: &str = "chacha8-stream/ziggurat";

/// A seeded ChaCha8 generator positioned on one of its 2^64 independent
/// streams. `(seed, stream_id)` fully determines the draw sequence.
#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    stream_id: u64,
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream_id);
        Self { seed, stream_id, rng }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    /// Fresh stream with the same seed and a different selector.
    pub fn substream(&self, stream_id: u64) -> Self {
        Self::new(self.seed, stream_id)
    }

    /// Standard normal draw.
    pub fn gaussian(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }

    pub fn fill_gaussian(&mut self, out: &mut [f64]) {
        for v in out {
            *v = self.gaussian();
        }
    }

    /// Uniform draw on `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.rng.gen::<f64>()
    }

    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform integer in `0..n`.
    pub fn index(&mut self, n: usize) -> usize {
        self.rng.gen_range(0..n)
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        use rand::seq::SliceRandom;
        items.shuffle(&mut self.rng);
    }
}

/// Stream selector for gridpoint `k` of ensemble member `member`.
pub fn member_stream(member: u64, k: usize, n_grid: usize) -> u64 {
    member * n_grid as u64 + k as u64
}

/// Parameters of `h' = phi h + sigma sqrt(1 - phi^2) z`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Ar1Params {
    pub phi: f64,
    /// Stationary standard deviation.
    pub sigma: f64,
}

impl Ar1Params {
    pub fn new(phi: f64, sigma: f64) -> Result<Self> {
        let p = Self { phi, sigma };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.phi.abs() < 1.0) {
            return Err(Error::Config(format!("AR1 requires |phi| < 1, got {}", self.phi)));
        }
        if !(self.sigma >= 0.0) || !self.sigma.is_finite() {
            return Err(Error::Config(format!("AR1 requires finite sigma >= 0, got {}", self.sigma)));
        }
        Ok(())
    }

    /// Standard deviation of the innovation term.
    pub fn innovation_sd(&self) -> f64 {
        self.sigma * (1.0 - self.phi * self.phi).sqrt()
    }
}

/// One AR(1) update driven by the standard normal draw `z`.
pub fn ar1_step(h: f64, p: &Ar1Params, z: f64) -> f64 {
    debug_assert!(p.phi.abs() < 1.0);
    p.phi * h + p.sigma * (1.0 - p.phi * p.phi).sqrt() * z
}

/// Stationary AR(1) chain of length `n` started at `h_1 = sigma z_1`.
pub fn ar1_chain(p: &Ar1Params, n: usize, stream: &mut RngStream) -> Vec<f64> {
    let mut out = Vec::with_capacity(n);
    if n == 0 {
        return out;
    }
    let mut h = p.sigma * stream.gaussian();
    out.push(h);
    for _ in 1..n {
        h = ar1_step(h, p, stream.gaussian());
        out.push(h);
    }
    out
}
