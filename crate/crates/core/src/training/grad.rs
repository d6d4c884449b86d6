use crate::models::nn::{GruCache, MlpCache};
use crate::models::{RnnModel, RnnParams};
use crate::par;

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

/// One grid point's history: `x[t]` is the state preceding the observed
/// forcing `r_hat[t]`. The hidden state and previous residual start at zero.
#[derive(Debug, Clone, PartialEq)]
pub struct Sequence {
    pub x: Vec<f64>,
    pub r_hat: Vec<f64>,
}

impl Sequence {
    pub fn len(&self) -> usize {
        self.r_hat.len()
    }

    pub fn is_empty(&self) -> bool {
        self.r_hat.is_empty()
    }
}

struct Step {
    gru: Vec<GruCache>,
    mlp: MlpCache,
    l: Vec<f64>,
    e: f64,
}

fn forward(m: &RnnModel, seq: &Sequence, keep: bool) -> (f64, Vec<Step>) {
    let p = &m.params;
    let u = m.arch.gru_units;
    let d = m.state_dim();
    let sigma = m.sigma();
    let mut l = vec![0.0; d];
    let mut r_prev = 0.0;
    let mut nll = 0.0;
    let mut steps = Vec::with_capacity(if keep { seq.len() } else { 0 });
    let mut gru: Vec<GruCache> = vec![GruCache::default(); p.s.len()];
    let mut mlp = MlpCache::default();
    for t in 0..seq.len() {
        let input = [(r_prev - m.norm.r_mean) / m.norm.r_sd];
        for (i, layer) in p.s.iter().enumerate() {
            let (below, here) = gru.split_at_mut(i);
            let inp: &[f64] = if i == 0 { &input } else { &below[i - 1].h_new };
            layer.forward_cached(inp, &l[i * u..(i + 1) * u], &mut here[0]);
        }
        for (i, c) in gru.iter().enumerate() {
            l[i * u..(i + 1) * u].copy_from_slice(&c.h_new);
        }
        let mu = m.residual_mean(&l);
        let xs = (seq.x[t] - m.norm.x_mean) / m.norm.x_sd;
        let g = p.g.forward_cached(&[xs], &mut mlp)[0];
        let r = seq.r_hat[t] - g;
        let e = r - mu;
        nll += HALF_LN_2PI + p.log_sigma + 0.5 * (e / sigma).powi(2);
        r_prev = r;
        if keep {
            steps.push(Step { gru: gru.clone(), mlp: mlp.clone(), l: l.clone(), e });
        }
    }
    (nll, steps)
}

/// Sum over steps of the negative log density of the forcing sequence
/// (Jacobian excluded), accumulating its gradient into `grad`.
pub fn sequence_loss_grad(m: &RnnModel, seq: &Sequence, grad: &mut RnnParams) -> f64 {
    let (nll, steps) = forward(m, seq, true);
    let p = &m.params;
    let u = m.arch.gru_units;
    let d = m.state_dim();
    let nl = p.s.len();
    let inv_var = (-2.0 * p.log_sigma).exp();
    let mut dl_next = vec![0.0; d];
    let mut dr_next = 0.0;
    for (t, st) in steps.iter().enumerate().rev() {
        let de = st.e * inv_var;
        grad.log_sigma += 1.0 - st.e * st.e * inv_var;
        // r_t enters e_t directly and the input of step t + 1.
        let dr = de + dr_next;
        p.g.backward(&st.mlp, &[-dr], &mut grad.g);

        let mut dl = dl_next.clone();
        let mut db_in = vec![0.0; d];
        p.b.backward(&st.l, &[-de], &mut grad.b, &mut db_in);
        dl.iter_mut().zip(&db_in).for_each(|(a, b)| *a += b);

        let mut dprev = vec![0.0; d];
        let mut dfrom_above = vec![0.0; u];
        for i in (0..nl).rev() {
            let dh_new: Vec<f64> = (0..u).map(|j| dl[i * u + j] + dfrom_above[j]).collect();
            let mut dx = vec![0.0; p.s[i].n_in];
            p.s[i].backward(&st.gru[i], &dh_new, &mut grad.s[i], &mut dx, &mut dprev[i * u..(i + 1) * u]);
            if i > 0 {
                dfrom_above = dx;
            } else {
                dr_next = if t > 0 { dx[0] / m.norm.r_sd } else { 0.0 };
            }
        }
        dl_next = dprev;
    }
    nll
}

/// Mean loss per (step, grid point) over a batch and its gradient. The loss
/// is the negative normalized log-likelihood, including the `ln dt` Jacobian
/// constant, so it is directly comparable with reported log-likelihoods.
pub fn rnn_grad(seqs: &[Sequence], m: &RnnModel) -> (f64, RnnParams) {
    let parts = par::map(seqs, |s| {
        let mut g = m.params.zeros_like();
        let nll = sequence_loss_grad(m, s, &mut g);
        (nll, g)
    });
    let terms: usize = seqs.iter().map(Sequence::len).sum();
    let mut total = m.params.zeros_like();
    let mut nll = 0.0;
    for (l, g) in &parts {
        nll += l;
        total.add_scaled(g, 1.0);
    }
    let scale = 1.0 / terms.max(1) as f64;
    let mut out = total.zeros_like();
    out.add_scaled(&total, scale);
    (nll * scale + m.dt.ln(), out)
}

/// Forward-only batch loss, same convention as [`rnn_grad`].
pub fn batch_loss(seqs: &[Sequence], m: &RnnModel) -> f64 {
    let parts = par::map(seqs, |s| forward(m, s, false).0);
    let terms: usize = seqs.iter().map(Sequence::len).sum();
    parts.iter().sum::<f64>() / terms.max(1) as f64 + m.dt.ln()
}
