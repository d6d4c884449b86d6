use serde::{Deserialize, Serialize};

use super::nn::{Dense, GruCache, GruLayer, Mlp, MlpCache};
use super::{blowup_error, NoiseSource, Surrogate};
use crate::dynamics::{omega_into, Trajectory};
use crate::error::{Error, Result};
use crate::stochastic::RngStream;

/// Layer sizes of the recurrent model.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RnnArch {
    /// Hidden widths of the deterministic network `g` (tanh layers).
    pub g_hidden: Vec<usize>,
    /// Units per GRU layer.
    pub gru_units: usize,
    /// Number of stacked GRU layers.
    pub gru_layers: usize,
}

impl Default for RnnArch {
    fn default() -> Self {
        Self { g_hidden: vec![16, 16], gru_units: 4, gru_layers: 2 }
    }
}

impl RnnArch {
    /// Dimension of the stacked recurrent state `l`.
    pub fn state_dim(&self) -> usize {
        self.gru_units * self.gru_layers
    }

    pub fn g_widths(&self) -> Vec<usize> {
        let mut w = vec![1];
        w.extend_from_slice(&self.g_hidden);
        w.push(1);
        w
    }

    pub fn validate(&self) -> Result<()> {
        if self.gru_units == 0 || self.gru_layers == 0 || self.g_hidden.contains(&0) {
            return Err(Error::Config(format!("degenerate architecture {self:?}")));
        }
        Ok(())
    }
}

/// Standardization constants: network inputs are `(v - mean) / sd`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NormStats {
    pub x_mean: f64,
    pub x_sd: f64,
    pub r_mean: f64,
    pub r_sd: f64,
}

impl Default for NormStats {
    fn default() -> Self {
        Self { x_mean: 0.0, x_sd: 1.0, r_mean: 0.0, r_sd: 1.0 }
    }
}

/// Learnable parameters: `g` (sub-grid mean), `s` (GRU stack), `b`
/// (residual mean read-out) and `log sigma`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RnnParams {
    pub g: Mlp,
    pub s: Vec<GruLayer>,
    pub b: Dense,
    pub log_sigma: f64,
}

impl RnnParams {
    pub fn zeros(arch: &RnnArch) -> Self {
        let u = arch.gru_units;
        let s = (0..arch.gru_layers).map(|i| GruLayer::zeros(if i == 0 { 1 } else { u }, u)).collect();
        Self { g: Mlp::zeros(&arch.g_widths()), s, b: Dense::zeros(arch.state_dim(), 1), log_sigma: 0.0 }
    }

    /// Glorot-uniform weights, zero biases.
    pub fn glorot(arch: &RnnArch, rng: &mut RngStream) -> Self {
        let u = arch.gru_units;
        let g = Mlp::glorot(&arch.g_widths(), rng);
        let s = (0..arch.gru_layers).map(|i| GruLayer::glorot(if i == 0 { 1 } else { u }, u, rng)).collect();
        let b = Dense::glorot(arch.state_dim(), 1, rng);
        Self { g, s, b, log_sigma: 0.0 }
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for t in z.tensors_mut() {
            t.iter_mut().for_each(|v| *v = 0.0);
        }
        z
    }

    /// Every parameter tensor with its name and shape, in flattening order.
    pub fn named_tensors(&self) -> Vec<(String, Vec<usize>, &[f64])> {
        let mut out = Vec::new();
        for (i, l) in self.g.layers.iter().enumerate() {
            out.push((format!("g.{i}.weight"), vec![l.n_out, l.n_in], l.weight.as_slice()));
            out.push((format!("g.{i}.bias"), vec![l.n_out], l.bias.as_slice()));
        }
        for (i, l) in self.s.iter().enumerate() {
            let (ni, nh) = (l.n_in, l.n_hidden);
            for (name, t, shape) in [
                ("w_z", &l.w_z, vec![nh, ni]),
                ("w_r", &l.w_r, vec![nh, ni]),
                ("w_h", &l.w_h, vec![nh, ni]),
                ("u_z", &l.u_z, vec![nh, nh]),
                ("u_r", &l.u_r, vec![nh, nh]),
                ("u_h", &l.u_h, vec![nh, nh]),
                ("b_z", &l.b_z, vec![nh]),
                ("b_r", &l.b_r, vec![nh]),
                ("b_h", &l.b_h, vec![nh]),
            ] {
                out.push((format!("s.{i}.{name}"), shape, t.as_slice()));
            }
        }
        out.push(("b.weight".into(), vec![self.b.n_out, self.b.n_in], self.b.weight.as_slice()));
        out.push(("b.bias".into(), vec![self.b.n_out], self.b.bias.as_slice()));
        out.push(("log_sigma".into(), vec![], std::slice::from_ref(&self.log_sigma)));
        out
    }

    /// Mutable views in the same order as [`named_tensors`](Self::named_tensors).
    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        for l in self.g.layers.iter_mut() {
            out.push(&mut l.weight);
            out.push(&mut l.bias);
        }
        for l in self.s.iter_mut() {
            out.push(&mut l.w_z);
            out.push(&mut l.w_r);
            out.push(&mut l.w_h);
            out.push(&mut l.u_z);
            out.push(&mut l.u_r);
            out.push(&mut l.u_h);
            out.push(&mut l.b_z);
            out.push(&mut l.b_r);
            out.push(&mut l.b_h);
        }
        out.push(&mut self.b.weight);
        out.push(&mut self.b.bias);
        out.push(std::slice::from_mut(&mut self.log_sigma));
        out
    }

    pub fn n_params(&self) -> usize {
        self.named_tensors().iter().map(|(_, _, t)| t.len()).sum()
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.named_tensors().iter().flat_map(|(_, _, t)| t.iter().copied()).collect()
    }

    pub fn set_flat(&mut self, flat: &[f64]) {
        let mut pos = 0;
        for t in self.tensors_mut() {
            let n = t.len();
            t.copy_from_slice(&flat[pos..pos + n]);
            pos += n;
        }
        assert_eq!(pos, flat.len(), "flat parameter vector has wrong length");
    }

    /// `self += a * other`.
    pub fn add_scaled(&mut self, other: &RnnParams, a: f64) {
        let src = other.to_flat();
        let mut pos = 0;
        for t in self.tensors_mut() {
            for v in t.iter_mut() {
                *v += a * src[pos];
                pos += 1;
            }
        }
    }
}

/// Recurrent stochastic model:
/// `x' = x + omega(x) - dt (g(x) + r')`, `r' = b(l') + sigma z`, `l' = s(l, r)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RnnModel {
    pub arch: RnnArch,
    pub params: RnnParams,
    pub norm: NormStats,
    pub dt: f64,
    /// Default forcing (the model can be run at any forcing).
    pub forcing: f64,
}

/// Per-gridpoint recurrent state `l` (stacked GRU states) and last residual `r`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HiddenState {
    /// `K x state_dim`, row-major.
    pub l: Vec<f64>,
    pub r: Vec<f64>,
}

impl HiddenState {
    pub fn zeros(k: usize, state_dim: usize) -> Self {
        Self { l: vec![0.0; k * state_dim], r: vec![0.0; k] }
    }

    /// Rotates gridpoints cyclically by `shift` (`new_k = old_{k - shift}`).
    pub fn rotated(&self, shift: usize) -> Self {
        let k = self.r.len();
        let d = self.l.len() / k;
        let mut out = self.clone();
        for i in 0..k {
            let j = (i + shift) % k;
            out.r[j] = self.r[i];
            out.l[j * d..(j + 1) * d].copy_from_slice(&self.l[i * d..(i + 1) * d]);
        }
        out
    }
}

/// Reusable buffers for allocation-light forward passes.
#[derive(Debug, Clone, Default)]
pub(crate) struct RnnScratch {
    pub mlp: MlpCache,
    pub gru: GruCache,
}

impl RnnModel {
    pub fn new(arch: RnnArch, params: RnnParams, norm: NormStats, dt: f64, forcing: f64) -> Result<Self> {
        let m = Self { arch, params, norm, dt, forcing };
        m.validate()?;
        Ok(m)
    }

    /// Glorot-initialized model with noise scale `sigma`.
    pub fn random(arch: RnnArch, norm: NormStats, dt: f64, forcing: f64, sigma: f64, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut params = RnnParams::glorot(&arch, &mut RngStream::new(seed, 0));
        params.log_sigma = sigma.ln();
        Self::new(arch, params, norm, dt, forcing)
    }

    /// All weights and biases zero.
    pub fn zeros(arch: RnnArch, norm: NormStats, dt: f64, forcing: f64, sigma: f64) -> Result<Self> {
        arch.validate()?;
        let mut params = RnnParams::zeros(&arch);
        params.log_sigma = sigma.ln();
        Self::new(arch, params, norm, dt, forcing)
    }

    pub fn validate(&self) -> Result<()> {
        self.arch.validate()?;
        let p = &self.params;
        let shape_err = |what: &str| Err(Error::Shape(format!("{what} inconsistent with architecture {:?}", self.arch)));
        if p.g.widths() != self.arch.g_widths() {
            return shape_err("g network");
        }
        if p.s.len() != self.arch.gru_layers {
            return shape_err("GRU stack");
        }
        for (i, l) in p.s.iter().enumerate() {
            let want_in = if i == 0 { 1 } else { self.arch.gru_units };
            if l.n_in != want_in
                || l.n_hidden != self.arch.gru_units
                || l.w_z.len() != want_in * l.n_hidden
                || l.u_h.len() != l.n_hidden * l.n_hidden
            {
                return shape_err("GRU layer");
            }
        }
        if p.b.n_in != self.arch.state_dim() || p.b.n_out != 1 {
            return shape_err("read-out layer");
        }
        if !p.log_sigma.is_finite() {
            return Err(Error::Config("sigma must be positive and finite".into()));
        }
        if self.norm.x_sd <= 0.0 || self.norm.r_sd <= 0.0 || !(self.dt > 0.0) {
            return Err(Error::Config("normalization sd and dt must be positive".into()));
        }
        if self.params.to_flat().iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("non-finite weight".into()));
        }
        Ok(())
    }

    pub fn sigma(&self) -> f64 {
        self.params.log_sigma.exp()
    }

    pub fn state_dim(&self) -> usize {
        self.arch.state_dim()
    }

    pub(crate) fn g_with(&self, x: f64, scratch: &mut RnnScratch) -> f64 {
        let xs = (x - self.norm.x_mean) / self.norm.x_sd;
        self.params.g.forward_cached(&[xs], &mut scratch.mlp)[0]
    }

    pub(crate) fn hidden_update_with(&self, l: &[f64], r: f64, out: &mut [f64], scratch: &mut RnnScratch) {
        let u = self.arch.gru_units;
        let input = [(r - self.norm.r_mean) / self.norm.r_sd];
        for (i, layer) in self.params.s.iter().enumerate() {
            let state = &l[i * u..(i + 1) * u];
            if i == 0 {
                layer.forward_cached(&input, state, &mut scratch.gru);
            } else {
                let prev = out[(i - 1) * u..i * u].to_vec();
                layer.forward_cached(&prev, state, &mut scratch.gru);
            }
            out[i * u..(i + 1) * u].copy_from_slice(&scratch.gru.h_new);
        }
    }

    pub(crate) fn residual_mean(&self, l: &[f64]) -> f64 {
        let mut out = [0.0];
        self.params.b.forward_into(l, &mut out);
        out[0]
    }
}

/// `l' = s(l, r)`: layer 1 consumes the standardized residual, each further
/// layer consumes the new state of the layer below.
pub fn rnn_hidden_update(m: &RnnModel, l: &[f64], r: f64) -> Vec<f64> {
    let mut out = vec![0.0; m.state_dim()];
    m.hidden_update_with(l, r, &mut out, &mut RnnScratch::default());
    out
}

/// Mean `b(l)` of the next stochastic residual.
pub fn rnn_residual_mean(m: &RnnModel, l: &[f64]) -> f64 {
    m.residual_mean(l)
}

/// Deterministic sub-grid term `g(x)`.
pub fn rnn_subgrid_g(m: &RnnModel, x: f64) -> f64 {
    m.g_with(x, &mut RnnScratch::default())
}

/// One model step, returning the new slow state and hidden state.
pub fn rnn_step(
    x: &[f64],
    hs: &HiddenState,
    m: &RnnModel,
    forcing: f64,
    noise: &mut dyn NoiseSource,
) -> Result<(Vec<f64>, HiddenState)> {
    let mut xn = x.to_vec();
    let mut st = hs.clone();
    m.advance(&mut xn, &mut st, forcing, noise)?;
    Ok((xn, st))
}

/// Threads the residuals observed in the last `spinup + 1` rows of `history`
/// through the hidden-state recursion, starting from `init`.
///
/// The residual fed to `s` is `r_t = r̂_t - g(x_{t-1})`, where
/// `r̂_t = (x_{t-1} + omega(x_{t-1}) - x_t) / dt`, matching the likelihood recursion.
pub fn warm_start_from(m: &RnnModel, history: &Trajectory, spinup: usize, init: HiddenState) -> Result<HiddenState> {
    let k = history.k();
    let d = m.state_dim();
    if init.r.len() != k || init.l.len() != k * d {
        return Err(Error::Shape("initial hidden state does not match history width".into()));
    }
    if history.len() < spinup + 1 {
        return Err(Error::InsufficientData(format!(
            "warm start needs {} rows, history has {}",
            spinup + 1,
            history.len()
        )));
    }
    let start = history.len() - spinup - 1;
    let mut hs = init;
    let mut scratch = RnnScratch::default();
    let mut omega = vec![0.0; k];
    let mut tmp = vec![0.0; k];
    let mut l_new = vec![0.0; d];
    for t in start + 1..history.len() {
        let prev = history.row(t - 1);
        let cur = history.row(t);
        omega_into(prev, history.forcing, m.dt, &mut omega, &mut tmp);
        for i in 0..k {
            m.hidden_update_with(&hs.l[i * d..(i + 1) * d], hs.r[i], &mut l_new, &mut scratch);
            hs.l[i * d..(i + 1) * d].copy_from_slice(&l_new);
            let r_hat = (prev[i] + omega[i] - cur[i]) / m.dt;
            hs.r[i] = r_hat - m.g_with(prev[i], &mut scratch);
        }
    }
    Ok(hs)
}

/// [`warm_start_from`] a zero hidden state.
pub fn warm_start(m: &RnnModel, history: &Trajectory, spinup: usize) -> Result<HiddenState> {
    warm_start_from(m, history, spinup, HiddenState::zeros(history.k(), m.state_dim()))
}

impl Surrogate for RnnModel {
    type State = HiddenState;

    fn name(&self) -> &'static str {
        "rnn"
    }

    fn dt(&self) -> f64 {
        self.dt
    }

    fn forcing(&self) -> f64 {
        self.forcing
    }

    fn cold_state(&self, k: usize) -> HiddenState {
        HiddenState::zeros(k, self.state_dim())
    }

    fn warm_state(&self, history: &Trajectory, spinup: usize) -> Result<HiddenState> {
        warm_start(self, history, spinup)
    }

    fn advance(&self, x: &mut [f64], hs: &mut HiddenState, forcing: f64, noise: &mut dyn NoiseSource) -> Result<()> {
        let k = x.len();
        let d = self.state_dim();
        let sigma = self.sigma();
        let mut scratch = RnnScratch::default();
        let mut omega = vec![0.0; k];
        let mut tmp = vec![0.0; k];
        omega_into(x, forcing, self.dt, &mut omega, &mut tmp);
        let mut l_new = vec![0.0; d];
        for i in 0..k {
            let li = &mut hs.l[i * d..(i + 1) * d];
            self.hidden_update_with(li, hs.r[i], &mut l_new, &mut scratch);
            li.copy_from_slice(&l_new);
            hs.r[i] = self.residual_mean(&l_new) + sigma * noise.draw(i);
        }
        for i in 0..k {
            let g = self.g_with(x[i], &mut scratch);
            x[i] += omega[i] - self.dt * (g + hs.r[i]);
        }
        blowup_error(x)
    }
}
