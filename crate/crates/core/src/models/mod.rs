//! Single-level stochastic forecast models of the slow variables.
//!
//! Both models advance `X` as
//! `x_{k,t+1} = x_{k,t} + omega_k(x_t) - dt * (deterministic_k + stochastic_k)`
//! and differ only in how the stochastic part is evolved.

pub mod nn;
mod poly;
mod rnn;

pub use poly::{poly_step, PolyCoeffs, PolyModel, PolyState};
pub use rnn::{
    rnn_hidden_update, rnn_residual_mean, rnn_step, rnn_subgrid_g, warm_start, warm_start_from, HiddenState,
    NormStats, RnnArch, RnnModel, RnnParams,
};

use crate::dynamics::{Trajectory, BLOWUP_THRESHOLD};
use crate::error::{Error, Result};
use crate::stochastic::{member_stream, RngStream};

/// Source of the standard normal draws `z_{k,t}`.
pub trait NoiseSource {
    fn draw(&mut self, k: usize) -> f64;
}

/// One independent stream per gridpoint: stream id `member * K + k`.
#[derive(Debug, Clone)]
pub struct GridNoise {
    streams: Vec<RngStream>,
}

impl GridNoise {
    pub fn new(seed: u64, member: u64, n_grid: usize) -> Self {
        Self { streams: (0..n_grid).map(|k| RngStream::new(seed, member_stream(member, k, n_grid))).collect() }
    }
}

impl NoiseSource for GridNoise {
    fn draw(&mut self, k: usize) -> f64 {
        self.streams[k].gaussian()
    }
}

/// Wraps another source and keeps every draw, in order.
#[derive(Debug)]
pub struct RecordingNoise<N> {
    inner: N,
    pub record: Vec<f64>,
}

impl<N: NoiseSource> RecordingNoise<N> {
    pub fn new(inner: N) -> Self {
        Self { inner, record: Vec::new() }
    }
}

impl<N: NoiseSource> NoiseSource for RecordingNoise<N> {
    fn draw(&mut self, k: usize) -> f64 {
        let z = self.inner.draw(k);
        self.record.push(z);
        z
    }
}

/// Replays a fixed list of draws; returns 0 once exhausted.
#[derive(Debug, Clone)]
pub struct ReplayNoise {
    draws: Vec<f64>,
    pos: usize,
}

impl ReplayNoise {
    pub fn new(draws: Vec<f64>) -> Self {
        Self { draws, pos: 0 }
    }
}

impl NoiseSource for ReplayNoise {
    fn draw(&mut self, _k: usize) -> f64 {
        let z = self.draws.get(self.pos).copied().unwrap_or(0.0);
        self.pos += 1;
        z
    }
}

/// Deterministic zero noise.
#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroNoise;

impl NoiseSource for ZeroNoise {
    fn draw(&mut self, _k: usize) -> f64 {
        0.0
    }
}

pub(crate) fn first_blowup(x: &[f64]) -> Option<(usize, f64)> {
    x.iter().copied().enumerate().find(|(_, v)| !v.is_finite() || v.abs() > BLOWUP_THRESHOLD)
}

pub(crate) fn blowup_error(x: &[f64]) -> Result<()> {
    match first_blowup(x) {
        Some((index, value)) => Err(Error::BlowUp { time: f64::NAN, index, value }),
        None => Ok(()),
    }
}

/// Interface shared by the stochastic surrogates for simulation and evaluation.
pub trait Surrogate: Sync {
    type State: Clone + Send;

    /// Short identifier used in reports.
    fn name(&self) -> &'static str;
    fn dt(&self) -> f64;
    /// Forcing the model was fitted under.
    fn forcing(&self) -> f64;
    /// Free-running initial hidden state.
    fn cold_state(&self, k: usize) -> Self::State;
    /// Hidden state spun up from the last `spinup + 1` rows of `history`.
    fn warm_state(&self, history: &Trajectory, spinup: usize) -> Result<Self::State>;
    /// Advances `x` in place by one step at forcing `forcing`.
    fn advance(&self, x: &mut [f64], state: &mut Self::State, forcing: f64, noise: &mut dyn NoiseSource) -> Result<()>;
}

/// Result of a free-running simulation. On blow-up the trajectory holds the
/// rows saved before the failure.
#[derive(Debug, Clone)]
pub struct SimOutcome {
    pub trajectory: Trajectory,
    /// Model time (relative to the start) at which blow-up was detected.
    pub blowup_time: Option<f64>,
}

/// Runs `n_steps` model steps from `x0`, saving every `save_every` steps
/// (row 0 is `x0`).
#[allow(clippy::too_many_arguments)]
pub fn simulate<M: Surrogate>(
    model: &M,
    x0: &[f64],
    mut state: M::State,
    forcing: f64,
    n_steps: usize,
    save_every: usize,
    noise: &mut dyn NoiseSource,
    seed: u64,
) -> Result<SimOutcome> {
    if save_every == 0 {
        return Err(Error::Config("save_every must be >= 1".into()));
    }
    let mut x = x0.to_vec();
    let mut data = Vec::with_capacity((n_steps / save_every + 1) * x.len());
    data.extend_from_slice(&x);
    let mut blowup_time = None;
    for step in 1..=n_steps {
        match model.advance(&mut x, &mut state, forcing, noise) {
            Ok(()) => {}
            Err(Error::BlowUp { .. }) => {
                blowup_time = Some(step as f64 * model.dt());
                break;
            }
            Err(e) => return Err(e),
        }
        if step % save_every == 0 {
            data.extend_from_slice(&x);
        }
    }
    let trajectory = Trajectory::new(x0.len(), data, forcing, model.dt() * save_every as f64, seed, 0.0)?;
    Ok(SimOutcome { trajectory, blowup_time })
}
