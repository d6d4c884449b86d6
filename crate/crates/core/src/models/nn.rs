//! Small dense / GRU layers with hand-written reverse-mode derivatives.
//!
//! Weights are stored row-major as `[n_out][n_in]`. Every dot product sums in
//! ascending input index so that forward passes are bit-reproducible.

use serde::{Deserialize, Serialize};

use crate::stochastic::RngStream;

pub fn sigmoid(a: f64) -> f64 {
    1.0 / (1.0 + (-a).exp())
}

fn glorot(n: usize, fan_in: usize, fan_out: usize, rng: &mut RngStream) -> Vec<f64> {
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    (0..n).map(|_| rng.uniform_range(-a, a)).collect()
}

/// `acc += m * v` for a row-major `m` of shape `[acc.len()][v.len()]`.
#[inline]
fn matvec_acc(m: &[f64], v: &[f64], acc: &mut [f64]) {
    let n = v.len();
    for (i, a) in acc.iter_mut().enumerate() {
        let row = &m[i * n..(i + 1) * n];
        let mut s = 0.0;
        for j in 0..n {
            s += row[j] * v[j];
        }
        *a += s;
    }
}

/// `acc += m^T * v` for a row-major `m` of shape `[v.len()][acc.len()]`.
#[inline]
fn matvec_t_acc(m: &[f64], v: &[f64], acc: &mut [f64]) {
    let n = acc.len();
    for (i, &vi) in v.iter().enumerate() {
        let row = &m[i * n..(i + 1) * n];
        for j in 0..n {
            acc[j] += row[j] * vi;
        }
    }
}

/// `g += u ⊗ v` (outer product) into a row-major `[u.len()][v.len()]` buffer.
#[inline]
fn outer_acc(g: &mut [f64], u: &[f64], v: &[f64]) {
    let n = v.len();
    for (i, &ui) in u.iter().enumerate() {
        let row = &mut g[i * n..(i + 1) * n];
        for j in 0..n {
            row[j] += ui * v[j];
        }
    }
}

/// Fully-connected affine layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub n_in: usize,
    pub n_out: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    pub fn zeros(n_in: usize, n_out: usize) -> Self {
        Self { n_in, n_out, weight: vec![0.0; n_in * n_out], bias: vec![0.0; n_out] }
    }

    pub fn glorot(n_in: usize, n_out: usize, rng: &mut RngStream) -> Self {
        Self { n_in, n_out, weight: glorot(n_in * n_out, n_in, n_out, rng), bias: vec![0.0; n_out] }
    }

    pub fn forward_into(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.n_in);
        out.copy_from_slice(&self.bias);
        matvec_acc(&self.weight, x, out);
    }

    /// Accumulates parameter gradients for output gradient `dy` at input `x`
    /// and adds the input gradient into `dx`.
    pub fn backward(&self, x: &[f64], dy: &[f64], grad: &mut Dense, dx: &mut [f64]) {
        outer_acc(&mut grad.weight, dy, x);
        for (g, d) in grad.bias.iter_mut().zip(dy) {
            *g += d;
        }
        matvec_t_acc(&self.weight, dy, dx);
    }

    pub fn n_params(&self) -> usize {
        self.weight.len() + self.bias.len()
    }
}

/// Scalar-in, scalar-out multilayer perceptron: tanh on every hidden layer,
/// linear output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Dense>,
}

/// Activations of one MLP forward pass, kept for the backward pass.
#[derive(Debug, Clone, Default)]
pub struct MlpCache {
    /// `acts[0]` is the input, `acts[i]` the (post-activation) output of layer `i - 1`.
    acts: Vec<Vec<f64>>,
}

impl Mlp {
    /// `widths` lists every layer size including input and output, e.g. `[1, 16, 16, 1]`.
    pub fn zeros(widths: &[usize]) -> Self {
        Self { layers: widths.windows(2).map(|w| Dense::zeros(w[0], w[1])).collect() }
    }

    pub fn glorot(widths: &[usize], rng: &mut RngStream) -> Self {
        Self { layers: widths.windows(2).map(|w| Dense::glorot(w[0], w[1], rng)).collect() }
    }

    pub fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.layers[0].n_in];
        w.extend(self.layers.iter().map(|l| l.n_out));
        w
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let mut cache = MlpCache::default();
        self.forward_cached(x, &mut cache).to_vec()
    }

    pub fn forward_scalar(&self, x: f64) -> f64 {
        self.forward(&[x])[0]
    }

    /// Forward pass that records activations; returns the output slice.
    pub fn forward_cached<'a>(&self, x: &[f64], cache: &'a mut MlpCache) -> &'a [f64] {
        let n = self.layers.len();
        cache.acts.resize_with(n + 1, Vec::new);
        cache.acts[0].clear();
        cache.acts[0].extend_from_slice(x);
        for (i, layer) in self.layers.iter().enumerate() {
            let (done, rest) = cache.acts.split_at_mut(i + 1);
            let out = &mut rest[0];
            out.resize(layer.n_out, 0.0);
            layer.forward_into(&done[i], out);
            if i + 1 < n {
                for v in out.iter_mut() {
                    *v = v.tanh();
                }
            }
        }
        &cache.acts[n]
    }

    /// Accumulates parameter gradients into `grad` and returns d(loss)/d(input).
    pub fn backward(&self, cache: &MlpCache, dy: &[f64], grad: &mut Mlp) -> Vec<f64> {
        let mut delta = dy.to_vec();
        for i in (0..self.layers.len()).rev() {
            let layer = &self.layers[i];
            let mut dx = vec![0.0; layer.n_in];
            layer.backward(&cache.acts[i], &delta, &mut grad.layers[i], &mut dx);
            if i > 0 {
                for (d, &a) in dx.iter_mut().zip(&cache.acts[i]) {
                    *d *= 1.0 - a * a;
                }
            }
            delta = dx;
        }
        delta
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(Dense::n_params).sum()
    }
}

/// Gated recurrent unit layer.
///
/// ```text
/// z  = sigmoid(W_z x + U_z h + b_z)
/// r  = sigmoid(W_r x + U_r h + b_r)
/// h~ = tanh(W_h x + U_h (r * h) + b_h)
/// h' = (1 - z) * h + z * h~
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GruLayer {
    pub n_in: usize,
    pub n_hidden: usize,
    pub w_z: Vec<f64>,
    pub w_r: Vec<f64>,
    pub w_h: Vec<f64>,
    pub u_z: Vec<f64>,
    pub u_r: Vec<f64>,
    pub u_h: Vec<f64>,
    pub b_z: Vec<f64>,
    pub b_r: Vec<f64>,
    pub b_h: Vec<f64>,
}

/// Intermediate values of one GRU step.
#[derive(Debug, Clone, Default)]
pub struct GruCache {
    pub input: Vec<f64>,
    pub h_prev: Vec<f64>,
    pub z: Vec<f64>,
    pub r: Vec<f64>,
    pub cand: Vec<f64>,
    pub h_new: Vec<f64>,
}

impl GruLayer {
    pub fn zeros(n_in: usize, n_hidden: usize) -> Self {
        let w = vec![0.0; n_in * n_hidden];
        let u = vec![0.0; n_hidden * n_hidden];
        let b = vec![0.0; n_hidden];
        Self {
            n_in,
            n_hidden,
            w_z: w.clone(),
            w_r: w.clone(),
            w_h: w,
            u_z: u.clone(),
            u_r: u.clone(),
            u_h: u,
            b_z: b.clone(),
            b_r: b.clone(),
            b_h: b,
        }
    }

    pub fn glorot(n_in: usize, n_hidden: usize, rng: &mut RngStream) -> Self {
        let nw = n_in * n_hidden;
        let nu = n_hidden * n_hidden;
        let mut l = Self::zeros(n_in, n_hidden);
        l.w_z = glorot(nw, n_in, n_hidden, rng);
        l.w_r = glorot(nw, n_in, n_hidden, rng);
        l.w_h = glorot(nw, n_in, n_hidden, rng);
        l.u_z = glorot(nu, n_hidden, n_hidden, rng);
        l.u_r = glorot(nu, n_hidden, n_hidden, rng);
        l.u_h = glorot(nu, n_hidden, n_hidden, rng);
        l
    }

    pub fn n_params(&self) -> usize {
        3 * (self.n_in * self.n_hidden + self.n_hidden * self.n_hidden + self.n_hidden)
    }

    /// One step, writing the new state into `out`.
    pub fn step_into(&self, input: &[f64], h: &[f64], out: &mut [f64]) {
        let mut cache = GruCache::default();
        self.forward_cached(input, h, &mut cache);
        out.copy_from_slice(&cache.h_new);
    }

    pub fn forward_cached(&self, input: &[f64], h: &[f64], c: &mut GruCache) {
        let nh = self.n_hidden;
        debug_assert_eq!(input.len(), self.n_in);
        debug_assert_eq!(h.len(), nh);
        c.input.clear();
        c.input.extend_from_slice(input);
        c.h_prev.clear();
        c.h_prev.extend_from_slice(h);

        c.z.clear();
        c.z.extend_from_slice(&self.b_z);
        matvec_acc(&self.w_z, input, &mut c.z);
        matvec_acc(&self.u_z, h, &mut c.z);
        c.z.iter_mut().for_each(|v| *v = sigmoid(*v));

        c.r.clear();
        c.r.extend_from_slice(&self.b_r);
        matvec_acc(&self.w_r, input, &mut c.r);
        matvec_acc(&self.u_r, h, &mut c.r);
        c.r.iter_mut().for_each(|v| *v = sigmoid(*v));

        let rh: Vec<f64> = c.r.iter().zip(h).map(|(r, h)| r * h).collect();
        c.cand.clear();
        c.cand.extend_from_slice(&self.b_h);
        matvec_acc(&self.w_h, input, &mut c.cand);
        matvec_acc(&self.u_h, &rh, &mut c.cand);
        c.cand.iter_mut().for_each(|v| *v = v.tanh());

        c.h_new.clear();
        c.h_new.extend((0..nh).map(|i| (1.0 - c.z[i]) * h[i] + c.z[i] * c.cand[i]));
    }

    /// Given d(loss)/d(h_new), accumulates parameter gradients and adds the
    /// gradients with respect to the input and previous state into `dx`, `dh`.
    pub fn backward(&self, c: &GruCache, dh_new: &[f64], grad: &mut GruLayer, dx: &mut [f64], dh: &mut [f64]) {
        let nh = self.n_hidden;
        let mut da_z = vec![0.0; nh];
        let mut da_h = vec![0.0; nh];
        for i in 0..nh {
            let dz = dh_new[i] * (c.cand[i] - c.h_prev[i]);
            let dcand = dh_new[i] * c.z[i];
            dh[i] += dh_new[i] * (1.0 - c.z[i]);
            da_z[i] = dz * c.z[i] * (1.0 - c.z[i]);
            da_h[i] = dcand * (1.0 - c.cand[i] * c.cand[i]);
        }

        // Candidate branch: a_h = W_h x + U_h (r * h) + b_h.
        let rh: Vec<f64> = c.r.iter().zip(&c.h_prev).map(|(r, h)| r * h).collect();
        outer_acc(&mut grad.w_h, &da_h, &c.input);
        outer_acc(&mut grad.u_h, &da_h, &rh);
        grad.b_h.iter_mut().zip(&da_h).for_each(|(g, d)| *g += d);
        matvec_t_acc(&self.w_h, &da_h, dx);
        let mut drh = vec![0.0; nh];
        matvec_t_acc(&self.u_h, &da_h, &mut drh);
        let mut da_r = vec![0.0; nh];
        for i in 0..nh {
            dh[i] += drh[i] * c.r[i];
            da_r[i] = drh[i] * c.h_prev[i] * c.r[i] * (1.0 - c.r[i]);
        }

        outer_acc(&mut grad.w_z, &da_z, &c.input);
        outer_acc(&mut grad.u_z, &da_z, &c.h_prev);
        grad.b_z.iter_mut().zip(&da_z).for_each(|(g, d)| *g += d);
        matvec_t_acc(&self.w_z, &da_z, dx);
        matvec_t_acc(&self.u_z, &da_z, dh);

        outer_acc(&mut grad.w_r, &da_r, &c.input);
        outer_acc(&mut grad.u_r, &da_r, &c.h_prev);
        grad.b_r.iter_mut().zip(&da_r).for_each(|(g, d)| *g += d);
        matvec_t_acc(&self.w_r, &da_r, dx);
        matvec_t_acc(&self.u_r, &da_r, dh);
    }
}

/// One GRU update of `state` driven by `input`.
pub fn gru_cell(input: &[f64], state: &[f64], layer: &GruLayer) -> Vec<f64> {
    let mut out = vec![0.0; layer.n_hidden];
    layer.step_into(input, state, &mut out);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Scalar-by-scalar evaluation of the same GRU equations.
    fn naive_gru(x: &[f64], h: &[f64], l: &GruLayer) -> Vec<f64> {
        let (ni, nh) = (l.n_in, l.n_hidden);
        let gate = |w: &[f64], u: &[f64], b: &[f64], hh: &[f64], i: usize| {
            let mut s = b[i];
            let mut a = 0.0;
            for j in 0..ni {
                a += w[i * ni + j] * x[j];
            }
            s += a;
            let mut c = 0.0;
            for j in 0..nh {
                c += u[i * nh + j] * hh[j];
            }
            s + c
        };
        let z: Vec<f64> = (0..nh).map(|i| sigmoid(gate(&l.w_z, &l.u_z, &l.b_z, h, i))).collect();
        let r: Vec<f64> = (0..nh).map(|i| sigmoid(gate(&l.w_r, &l.u_r, &l.b_r, h, i))).collect();
        let rh: Vec<f64> = (0..nh).map(|i| r[i] * h[i]).collect();
        (0..nh)
            .map(|i| {
                let cand = gate(&l.w_h, &l.u_h, &l.b_h, &rh, i).tanh();
                (1.0 - z[i]) * h[i] + z[i] * cand
            })
            .collect()
    }

    fn random_layer(n_in: usize, nh: usize, seed: u64) -> GruLayer {
        let mut rng = RngStream::new(seed, 0);
        let mut l = GruLayer::glorot(n_in, nh, &mut rng);
        for b in [&mut l.b_z, &mut l.b_r, &mut l.b_h] {
            b.iter_mut().for_each(|v| *v = rng.gaussian() * 0.3);
        }
        l
    }

    #[test]
    fn zero_weights_halve_state() {
        let l = GruLayer::zeros(1, 4);
        let h = [0.3, -1.2, 0.8, 2.0];
        let out = gru_cell(&[5.0], &h, &l);
        for (o, v) in out.iter().zip(&h) {
            assert_eq!(*o, 0.5 * v);
        }
        assert_eq!(gru_cell(&[0.0], &[0.0; 4], &l), vec![0.0; 4]);
    }

    #[test]
    fn gru_matches_naive() {
        let l = random_layer(4, 4, 3);
        let mut rng = RngStream::new(4, 0);
        let x: Vec<f64> = (0..4).map(|_| rng.gaussian()).collect();
        let h: Vec<f64> = (0..4).map(|_| rng.gaussian() * 0.5).collect();
        assert_eq!(gru_cell(&x, &h, &l), naive_gru(&x, &h, &l));
    }

    #[test]
    fn gru_backward_matches_finite_differences() {
        let l = random_layer(2, 3, 5);
        let x = [0.4, -0.9];
        let h = [0.2, -0.5, 0.7];
        let w = [0.3, -1.1, 0.6];
        let loss = |l: &GruLayer, x: &[f64], h: &[f64]| {
            gru_cell(x, h, l).iter().zip(&w).map(|(a, b)| a * b).sum::<f64>()
        };
        let mut c = GruCache::default();
        l.forward_cached(&x, &h, &mut c);
        let mut g = GruLayer::zeros(2, 3);
        let mut dx = vec![0.0; 2];
        let mut dh = vec![0.0; 3];
        l.backward(&c, &w, &mut g, &mut dx, &mut dh);
        let eps = 1e-6;
        for i in 0..2 {
            let (mut xp, mut xm) = (x, x);
            xp[i] += eps;
            xm[i] -= eps;
            let fd = (loss(&l, &xp, &h) - loss(&l, &xm, &h)) / (2.0 * eps);
            assert!((fd - dx[i]).abs() < 1e-8, "dx[{i}]: {fd} vs {}", dx[i]);
        }
        for i in 0..3 {
            let (mut hp, mut hm) = (h, h);
            hp[i] += eps;
            hm[i] -= eps;
            let fd = (loss(&l, &x, &hp) - loss(&l, &x, &hm)) / (2.0 * eps);
            assert!((fd - dh[i]).abs() < 1e-8, "dh[{i}]: {fd} vs {}", dh[i]);
        }
        let mut lp = l.clone();
        lp.u_h[4] += eps;
        let mut lm = l.clone();
        lm.u_h[4] -= eps;
        let fd = (loss(&lp, &x, &h) - loss(&lm, &x, &h)) / (2.0 * eps);
        assert!((fd - g.u_h[4]).abs() < 1e-8);
    }

    #[test]
    fn mlp_zero_weights_give_output_bias() {
        let mut m = Mlp::zeros(&[1, 5, 5, 1]);
        m.layers[0].bias.iter_mut().for_each(|b| *b = 0.5);
        m.layers[2].bias[0] = -1.25;
        // Hidden activations are tanh(bias) but the zero output weights ignore them.
        assert_eq!(m.forward_scalar(3.0), -1.25);
    }

    #[test]
    fn mlp_backward_matches_finite_differences() {
        let mut rng = RngStream::new(6, 0);
        let m = Mlp::glorot(&[1, 4, 3, 1], &mut rng);
        let x = 0.37;
        let mut cache = MlpCache::default();
        m.forward_cached(&[x], &mut cache);
        let mut g = Mlp::zeros(&[1, 4, 3, 1]);
        let dx = m.backward(&cache, &[1.0], &mut g);
        let eps = 1e-6;
        let fd = (m.forward_scalar(x + eps) - m.forward_scalar(x - eps)) / (2.0 * eps);
        assert!((fd - dx[0]).abs() < 1e-9);
        let mut mp = m.clone();
        mp.layers[1].weight[5] += eps;
        let mut mm = m.clone();
        mm.layers[1].weight[5] -= eps;
        let fd = (mp.forward_scalar(x) - mm.forward_scalar(x)) / (2.0 * eps);
        assert!((fd - g.layers[1].weight[5]).abs() < 1e-9);
    }
}
