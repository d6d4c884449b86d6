//! Two-tier Lorenz 96 truth model and the single-level second-order
//! Runge-Kutta kernel shared by every surrogate forecast model.
//!
//! The fast variables `Y` are stored as one cyclic vector of length `J*K`
//! (global index), so the `j+1`, `j+2` and `j-1` neighbours wrap across the
//! sector boundaries of the slow variables. Slow variable `k` couples to the
//! block `Y[k*J .. (k+1)*J]`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stochastic::RngStream;

/// Any state component with a larger magnitude counts as a blow-up.
pub const BLOWUP_THRESHOLD: f64 = 1e6;

fn default_true() -> bool {
    true
}

/// Constants of the two-tier system.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct L96Config {
    /// Number of slow variables.
    pub k: usize,
    /// Fast variables per slow variable.
    pub j: usize,
    /// Coupling strength.
    pub h: f64,
    /// Time-scale ratio.
    pub b: f64,
    /// Amplitude ratio.
    pub c: f64,
    pub forcing: f64,
    /// Diagnostic switch: `false` removes both advection terms, turning the
    /// system into a linear relaxation (used for integrator verification).
    #[serde(default = "default_true")]
    pub advection: bool,
}

impl L96Config {
    /// The configuration used throughout: `K = 8`, `J = 32`, `h = 1`, `b = c = 10`.
    pub fn standard(forcing: f64) -> Self {
        Self { k: 8, j: 32, h: 1.0, b: 10.0, c: 10.0, forcing, advection: true }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k < 4 {
            return Err(Error::Config(format!("K must be >= 4, got {}", self.k)));
        }
        if self.j < 1 {
            return Err(Error::Config("J must be >= 1".into()));
        }
        if self.b == 0.0 {
            return Err(Error::Config("b must be non-zero".into()));
        }
        if ![self.h, self.b, self.c, self.forcing].iter().all(|v| v.is_finite()) {
            return Err(Error::Config("constants must be finite".into()));
        }
        Ok(())
    }

    /// Number of fast variables, `J*K`.
    pub fn n_fast(&self) -> usize {
        self.j * self.k
    }
}

/// Full state of the two-tier system.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthState {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

impl TruthState {
    pub fn zeros(cfg: &L96Config) -> Self {
        Self { x: vec![0.0; cfg.k], y: vec![0.0; cfg.n_fast()] }
    }

    /// `X_k ~ U[-5, 5]` i.i.d., `Y = 0`.
    pub fn random(cfg: &L96Config, seed: u64) -> Self {
        let mut rng = RngStream::new(seed, 0);
        let x = (0..cfg.k).map(|_| rng.uniform_range(-5.0, 5.0)).collect();
        Self { x, y: vec![0.0; cfg.n_fast()] }
    }

    pub fn check_shape(&self, cfg: &L96Config) -> Result<()> {
        if self.x.len() != cfg.k || self.y.len() != cfg.n_fast() {
            return Err(Error::Shape(format!(
                "state has |X| = {}, |Y| = {}; config expects {} and {}",
                self.x.len(),
                self.y.len(),
                cfg.k,
                cfg.n_fast()
            )));
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.x.iter().chain(self.y.iter()).all(|v| v.is_finite())
    }

    /// First component (X then Y order) beyond the blow-up threshold.
    pub fn first_blowup(&self) -> Option<(usize, f64)> {
        self.x
            .iter()
            .chain(self.y.iter())
            .copied()
            .enumerate()
            .find(|(_, v)| !v.is_finite() || v.abs() > BLOWUP_THRESHOLD)
    }
}

/// Writes `(dX/dt, dY/dt)` into `dx`, `dy`.
pub fn truth_tendency_into(x: &[f64], y: &[f64], cfg: &L96Config, dx: &mut [f64], dy: &mut [f64]) {
    let nk = cfg.k;
    let nj = cfg.j;
    let n = nk * nj;
    debug_assert_eq!(x.len(), nk);
    debug_assert_eq!(y.len(), n);
    debug_assert!(x.iter().chain(y.iter()).all(|v| v.is_finite()), "non-finite state");

    let coupling = cfg.h * cfg.c / cfg.b;
    let cb = cfg.c * cfg.b;
    let c = cfg.c;
    let f = cfg.forcing;
    let adv = if cfg.advection { 1.0 } else { 0.0 };

    for k in 0..nk {
        let km1 = x[(k + nk - 1) % nk];
        let km2 = x[(k + nk - 2) % nk];
        let kp1 = x[(k + 1) % nk];
        let mut sum = 0.0;
        for &v in &y[k * nj..(k + 1) * nj] {
            sum += v;
        }
        dx[k] = -adv * km1 * (km2 - kp1) - x[k] + f - coupling * sum;
    }

    // Fast tier: -cb Y_{j+1} (Y_{j+2} - Y_{j-1}) - c Y_j + (hc/b) X_k.
    let cbadv = cb * adv;
    let yadv = |jm1: f64, j0: f64, jp1: f64, jp2: f64| -cbadv * jp1 * (jp2 - jm1) - c * j0;
    if n >= 4 {
        dy[0] = yadv(y[n - 1], y[0], y[1], y[2]);
        let interior = &mut dy[1..n - 2];
        let (ym1, y0, yp1, yp2) = (&y[0..n - 3], &y[1..n - 2], &y[2..n - 1], &y[3..n]);
        for i in 0..interior.len() {
            interior[i] = yadv(ym1[i], y0[i], yp1[i], yp2[i]);
        }
        dy[n - 2] = yadv(y[n - 3], y[n - 2], y[n - 1], y[0]);
        dy[n - 1] = yadv(y[n - 2], y[n - 1], y[0], y[1]);
    } else {
        for jj in 0..n {
            dy[jj] = yadv(y[(jj + n - 1) % n], y[jj], y[(jj + 1) % n], y[(jj + 2) % n]);
        }
    }
    for k in 0..nk {
        let forcing_y = coupling * x[k];
        for d in &mut dy[k * nj..(k + 1) * nj] {
            *d += forcing_y;
        }
    }
}

/// Tendency of the two-tier system, returned in state shape.
pub fn truth_tendency(s: &TruthState, cfg: &L96Config) -> TruthState {
    let mut out = TruthState::zeros(cfg);
    truth_tendency_into(&s.x, &s.y, cfg, &mut out.x, &mut out.y);
    out
}

/// Classical RK4 integrator for the two-tier system with reusable stage buffers.
#[derive(Debug, Clone)]
pub struct Rk4Integrator {
    cfg: L96Config,
    dt: f64,
    k1: TruthState,
    k2: TruthState,
    k3: TruthState,
    k4: TruthState,
    tmp: TruthState,
}

impl Rk4Integrator {
    pub fn new(cfg: L96Config, dt: f64) -> Self {
        let z = TruthState::zeros(&cfg);
        Self { cfg, dt, k1: z.clone(), k2: z.clone(), k3: z.clone(), k4: z.clone(), tmp: z }
    }

    pub fn config(&self) -> &L96Config {
        &self.cfg
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Advances `s` by one step without checking for blow-up.
    pub fn step_unchecked(&mut self, s: &mut TruthState) {
        let dt = self.dt;
        let cfg = &self.cfg;
        truth_tendency_into(&s.x, &s.y, cfg, &mut self.k1.x, &mut self.k1.y);
        axpy_state(&mut self.tmp, s, 0.5 * dt, &self.k1);
        truth_tendency_into(&self.tmp.x, &self.tmp.y, cfg, &mut self.k2.x, &mut self.k2.y);
        axpy_state(&mut self.tmp, s, 0.5 * dt, &self.k2);
        truth_tendency_into(&self.tmp.x, &self.tmp.y, cfg, &mut self.k3.x, &mut self.k3.y);
        axpy_state(&mut self.tmp, s, dt, &self.k3);
        truth_tendency_into(&self.tmp.x, &self.tmp.y, cfg, &mut self.k4.x, &mut self.k4.y);
        let w = dt / 6.0;
        combine(&mut s.x, &self.k1.x, &self.k2.x, &self.k3.x, &self.k4.x, w);
        combine(&mut s.y, &self.k1.y, &self.k2.y, &self.k3.y, &self.k4.y, w);
    }

    /// Advances `s` by one step; `time` is only used to label a blow-up.
    pub fn step(&mut self, s: &mut TruthState, time: f64) -> Result<()> {
        self.step_unchecked(s);
        match s.first_blowup() {
            Some((index, value)) => Err(Error::BlowUp { time, index, value }),
            None => Ok(()),
        }
    }
}

fn axpy_state(out: &mut TruthState, s: &TruthState, a: f64, d: &TruthState) {
    for ((o, &v), &dv) in out.x.iter_mut().zip(&s.x).zip(&d.x) {
        *o = v + a * dv;
    }
    for ((o, &v), &dv) in out.y.iter_mut().zip(&s.y).zip(&d.y) {
        *o = v + a * dv;
    }
}

fn combine(s: &mut [f64], k1: &[f64], k2: &[f64], k3: &[f64], k4: &[f64], w: f64) {
    for i in 0..s.len() {
        s[i] += w * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
}

/// One classical RK4 step of both tiers.
pub fn rk4_step(s: &TruthState, cfg: &L96Config, dt: f64) -> Result<TruthState> {
    let mut next = s.clone();
    Rk4Integrator::new(*cfg, dt).step(&mut next, dt)?;
    Ok(next)
}

/// Time-major record of saved slow-variable states.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    k: usize,
    data: Vec<f64>,
    pub forcing: f64,
    pub dt_save: f64,
    pub seed: u64,
    pub t0: f64,
}

impl Trajectory {
    pub fn new(k: usize, data: Vec<f64>, forcing: f64, dt_save: f64, seed: u64, t0: f64) -> Result<Self> {
        if k == 0 || data.is_empty() || !data.len().is_multiple_of(k) {
            return Err(Error::Shape(format!("{} values do not form rows of width {k}", data.len())));
        }
        if !(dt_save > 0.0) {
            return Err(Error::Config(format!("dt_save must be positive, got {dt_save}")));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Format(format!("non-finite trajectory value at flat index {i}")));
        }
        Ok(Self { k, data, forcing, dt_save, seed, t0 })
    }

    /// Number of saved rows `T`.
    pub fn len(&self) -> usize {
        self.data.len() / self.k
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.data[t * self.k..(t + 1) * self.k]
    }

    pub fn rows(&self) -> std::slice::ChunksExact<'_, f64> {
        self.data.chunks_exact(self.k)
    }

    pub fn column(&self, k: usize) -> Vec<f64> {
        self.rows().map(|r| r[k]).collect()
    }

    /// Rows `start .. start + len`, with `t0` shifted accordingly.
    pub fn slice(&self, start: usize, len: usize) -> Result<Self> {
        if len == 0 || start + len > self.len() {
            return Err(Error::Shape(format!(
                "slice {start}..{} outside trajectory of length {}",
                start + len,
                self.len()
            )));
        }
        Ok(Self {
            k: self.k,
            data: self.data[start * self.k..(start + len) * self.k].to_vec(),
            forcing: self.forcing,
            dt_save: self.dt_save,
            seed: self.seed,
            t0: self.t0 + start as f64 * self.dt_save,
        })
    }

    /// Rotates every row cyclically by `shift` positions (`x'_k = x_{k-shift}`).
    pub fn rotated(&self, shift: usize) -> Self {
        let mut out = self.clone();
        for (dst, src) in out.data.chunks_exact_mut(self.k).zip(self.rows()) {
            for (k, v) in src.iter().enumerate() {
                dst[(k + shift) % self.k] = *v;
            }
        }
        out
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.data
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }
}

/// Timing parameters for a truth run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TruthRun {
    /// Length of the saved record (MTU).
    pub duration: f64,
    pub dt_inner: f64,
    pub dt_save: f64,
    /// Spin-up discarded before the first saved row (MTU).
    pub burn_in: f64,
}

impl Default for TruthRun {
    fn default() -> Self {
        Self { duration: 100.0, dt_inner: 0.001, dt_save: 0.005, burn_in: 10.0 }
    }
}

impl TruthRun {
    /// Inner steps per saved row; `dt_save` must be an integer multiple of `dt_inner`.
    pub fn steps_per_save(&self) -> Result<usize> {
        if !(self.dt_inner > 0.0) || !(self.dt_save > 0.0) {
            return Err(Error::Config("time steps must be positive".into()));
        }
        let ratio = self.dt_save / self.dt_inner;
        let n = ratio.round();
        if n < 1.0 || (ratio - n).abs() > 1e-9 * ratio.max(1.0) {
            return Err(Error::Config(format!(
                "dt_save = {} is not an integer multiple of dt_inner = {}",
                self.dt_save, self.dt_inner
            )));
        }
        Ok(n as usize)
    }

    pub fn n_rows(&self) -> Result<usize> {
        if !(self.duration >= self.dt_save) {
            return Err(Error::Config(format!(
                "duration {} shorter than dt_save {}",
                self.duration, self.dt_save
            )));
        }
        Ok((self.duration / self.dt_save).round() as usize)
    }
}

/// Integrates the two-tier system from `init`, discards `burn_in`, then saves
/// `X` every `dt_save`. Row 0 is the state at the end of the burn-in.
pub fn generate_truth(cfg: &L96Config, run: &TruthRun, init: &TruthState, seed: u64) -> Result<Trajectory> {
    cfg.validate()?;
    init.check_shape(cfg)?;
    let per_save = run.steps_per_save()?;
    let rows = run.n_rows()?;
    if run.burn_in < 0.0 {
        return Err(Error::Config("burn_in must be non-negative".into()));
    }
    let burn_steps = (run.burn_in / run.dt_inner).round() as usize;

    let mut integ = Rk4Integrator::new(*cfg, run.dt_inner);
    let mut s = init.clone();
    let mut step_no = 0usize;
    let mut advance = |s: &mut TruthState, n: usize| -> Result<()> {
        for _ in 0..n {
            step_no += 1;
            integ.step(s, step_no as f64 * run.dt_inner)?;
        }
        Ok(())
    };
    advance(&mut s, burn_steps)?;
    let mut data = Vec::with_capacity(rows * cfg.k);
    data.extend_from_slice(&s.x);
    for _ in 1..rows {
        advance(&mut s, per_save)?;
        data.extend_from_slice(&s.x);
    }
    Trajectory::new(cfg.k, data, cfg.forcing, run.dt_save, seed, burn_steps as f64 * run.dt_inner)
}

/// Writes the single-level tendency increment
/// `dt * (-x_{k-1} (x_{k-2} - x_{k+1}) - x_k + F)` into `out`.
pub fn lambda_into(x: &[f64], forcing: f64, dt: f64, out: &mut [f64]) {
    let n = x.len();
    debug_assert!(x.iter().all(|v| v.is_finite()), "non-finite state");
    for k in 0..n {
        let km1 = x[(k + 2 * n - 1) % n];
        let km2 = x[(k + 2 * n - 2) % n];
        let kp1 = x[(k + 1) % n];
        out[k] = dt * (-km1 * (km2 - kp1) - x[k] + forcing);
    }
}

pub fn lambda_tendency(x: &[f64], forcing: f64, dt: f64) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    lambda_into(x, forcing, dt, &mut out);
    out
}

/// Midpoint RK2 increment `omega(x) = lambda(x + lambda(x) / 2)`.
/// `scratch` must have the same length as `x`.
pub fn omega_into(x: &[f64], forcing: f64, dt: f64, out: &mut [f64], scratch: &mut [f64]) {
    lambda_into(x, forcing, dt, scratch);
    for (s, &v) in scratch.iter_mut().zip(x) {
        *s = v + 0.5 * *s;
    }
    lambda_into(scratch, forcing, dt, out);
}

pub fn rk2_omega(x: &[f64], forcing: f64, dt: f64) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    let mut scratch = vec![0.0; x.len()];
    omega_into(x, forcing, dt, &mut out, &mut scratch);
    out
}
