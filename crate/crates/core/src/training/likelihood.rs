use crate::dynamics::{omega_into, Trajectory};
use crate::error::{Error, Result};
use crate::models::{PolyModel, RnnModel};

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

/// `log N(v; mu, sd^2)`.
pub fn gaussian_logpdf(v: f64, mu: f64, sd: f64) -> f64 {
    let e = (v - mu) / sd;
    -HALF_LN_2PI - sd.ln() - 0.5 * e * e
}

/// Log-likelihood that may be minus infinity (zero-variance model meeting a
/// non-zero residual).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LogLik {
    Finite(f64),
    NegInfinite,
}

impl LogLik {
    pub fn value(&self) -> f64 {
        match self {
            LogLik::Finite(v) => *v,
            LogLik::NegInfinite => f64::NEG_INFINITY,
        }
    }

    pub fn is_finite(&self) -> bool {
        matches!(self, LogLik::Finite(_))
    }
}

/// Per-step log densities of the forcing sequence, each summed over the K
/// grid points. The Jacobian term is not included.
#[derive(Debug, Clone, PartialEq)]
pub struct StepLogDensities {
    pub k: usize,
    pub dt: f64,
    pub per_step: Vec<f64>,
    pub neg_inf: bool,
}

impl StepLogDensities {
    fn assemble(&self, steps: &[f64], normalize: bool) -> LogLik {
        if self.neg_inf {
            return LogLik::NegInfinite;
        }
        let n = steps.len() as f64;
        let kn = self.k as f64 * n;
        let total = steps.iter().sum::<f64>() - kn * self.dt.ln();
        LogLik::Finite(if normalize { total / kn } else { total })
    }

    /// Trajectory log-likelihood, optionally divided by `K n`.
    pub fn loglik(&self, normalize: bool) -> LogLik {
        self.assemble(&self.per_step, normalize)
    }
}

/// Normalized log-likelihood over consecutive non-overlapping windows of
/// `window` steps, sorted ascending. A trailing partial window is dropped.
pub fn window_profile(d: &StepLogDensities, window: usize) -> Vec<f64> {
    if window == 0 {
        return Vec::new();
    }
    let mut v: Vec<f64> = d.per_step.chunks_exact(window).map(|c| d.assemble(c, true).value()).collect();
    v.sort_by(f64::total_cmp);
    v
}

/// Exact likelihood of an observed trajectory under a surrogate.
pub trait Likelihood {
    fn step_log_densities(&self, traj: &Trajectory) -> Result<StepLogDensities>;

    fn loglik(&self, traj: &Trajectory, normalize: bool) -> Result<LogLik> {
        Ok(self.step_log_densities(traj)?.loglik(normalize))
    }
}

fn check_traj(traj: &Trajectory, dt: f64) -> Result<()> {
    if traj.len() < 2 {
        return Err(Error::InsufficientData("likelihood needs at least 2 rows".into()));
    }
    if (traj.dt_save - dt).abs() > 1e-9 * dt {
        return Err(Error::Config(format!("trajectory interval {} differs from model dt {dt}", traj.dt_save)));
    }
    Ok(())
}

/// Calls `f(t, k, x_prev, r_hat)` for every step `t >= 1` and grid point.
fn for_each_residual(traj: &Trajectory, dt: f64, mut f: impl FnMut(usize, usize, f64, f64)) {
    let k = traj.k();
    let mut omega = vec![0.0; k];
    let mut scratch = vec![0.0; k];
    for t in 1..traj.len() {
        let prev = traj.row(t - 1);
        let cur = traj.row(t);
        omega_into(prev, traj.forcing, dt, &mut omega, &mut scratch);
        for i in 0..k {
            f(t, i, prev[i], (prev[i] + omega[i] - cur[i]) / dt);
        }
    }
}

impl Likelihood for PolyModel {
    fn step_log_densities(&self, traj: &Trajectory) -> Result<StepLogDensities> {
        check_traj(traj, self.dt)?;
        self.validate()?;
        let k = traj.k();
        let n = traj.len() - 1;
        let sigma = self.ar1.sigma;
        let sd_innov = self.ar1.innovation_sd();
        let mut per_step = vec![0.0; n];
        let mut h_prev = vec![0.0; k];
        let mut neg_inf = false;
        let mut all_exact = true;
        for_each_residual(traj, self.dt, |t, i, x, r_hat| {
            let h = r_hat - self.coeffs.eval(x);
            let (mu, sd) = if t == 1 { (0.0, sigma) } else { (self.ar1.phi * h_prev[i], sd_innov) };
            if sd > 0.0 {
                per_step[t - 1] += gaussian_logpdf(h, mu, sd);
            } else if h != mu {
                neg_inf = true;
            }
            all_exact &= sd > 0.0;
            h_prev[i] = h;
        });
        if !neg_inf && !all_exact {
            return Err(Error::Config("zero-variance model reproduces the data exactly; density is unbounded".into()));
        }
        Ok(StepLogDensities { k, dt: self.dt, per_step, neg_inf })
    }
}

impl Likelihood for RnnModel {
    fn step_log_densities(&self, traj: &Trajectory) -> Result<StepLogDensities> {
        check_traj(traj, self.dt)?;
        self.validate()?;
        let k = traj.k();
        let n = traj.len() - 1;
        let sigma = self.sigma();
        let d = self.state_dim();
        let mut per_step = vec![0.0; n];
        let mut l = vec![0.0; k * d];
        let mut r_prev = vec![0.0; k];
        let mut next = vec![0.0; d];
        let mut scratch = Default::default();
        for_each_residual(traj, self.dt, |t, i, x, r_hat| {
            let li = &mut l[i * d..(i + 1) * d];
            self.hidden_update_with(li, r_prev[i], &mut next, &mut scratch);
            li.copy_from_slice(&next);
            let mu = self.residual_mean(li);
            let r = r_hat - self.g_with(x, &mut scratch);
            per_step[t - 1] += gaussian_logpdf(r, mu, sigma);
            r_prev[i] = r;
        });
        Ok(StepLogDensities { k, dt: self.dt, per_step, neg_inf: false })
    }
}

pub fn loglik_poly(traj: &Trajectory, m: &PolyModel, normalize: bool) -> Result<LogLik> {
    m.loglik(traj, normalize)
}

pub fn loglik_rnn(traj: &Trajectory, m: &RnnModel, normalize: bool) -> Result<LogLik> {
    m.loglik(traj, normalize)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::rk2_omega;
    use crate::models::{NormStats, PolyCoeffs, RnnArch};
    use crate::stochastic::Ar1Params;

    /// Builds a trajectory whose extracted forcing is `u` up to rounding.
    fn traj_with_forcing(x0: &[f64], u: &[Vec<f64>], f: f64, dt: f64) -> Trajectory {
        let k = x0.len();
        let mut rows = x0.to_vec();
        let mut x = x0.to_vec();
        for ut in u {
            let w = rk2_omega(&x, f, dt);
            for i in 0..k {
                x[i] = x[i] + w[i] - dt * ut[i];
            }
            rows.extend_from_slice(&x);
        }
        Trajectory::new(k, rows, f, dt, 0, 0.0).unwrap()
    }

    #[test]
    fn poly_matches_transformed_gaussian_oracle() {
        // n = 3 steps: the density of (x1, x2, x3) given x0 is the AR(1) density
        // of (h1, h2, h3) at each grid point times dt^{-3K}.
        let m = PolyModel {
            coeffs: PolyCoeffs { a: 0.01, b: -0.02, c: 0.5, d: 0.1 },
            ar1: Ar1Params { phi: 0.8, sigma: 1.3 },
            forcing: 10.0,
            dt: 0.005,
        };
        let h = [[0.4, -0.9, 1.7], [0.0, 2.5, -0.3], [-1.1, -1.0, 0.2], [3.0, 0.1, 0.6]];
        let mut x = vec![2.0, -1.0, 0.5, 4.0];
        let mut rows = x.clone();
        for t in 0..3 {
            let w = rk2_omega(&x, 10.0, 0.005);
            let xn: Vec<f64> = (0..4).map(|i| x[i] + w[i] - 0.005 * (m.coeffs.eval(x[i]) + h[i][t])).collect();
            rows.extend_from_slice(&xn);
            x = xn;
        }
        let tr = Trajectory::new(4, rows, 10.0, 0.005, 0, 0.0).unwrap();
        let s2 = 1.3f64 * 1.3;
        let v = s2 * (1.0 - 0.64);
        let lp = |e: f64, var: f64| -0.5 * (2.0 * std::f64::consts::PI * var).ln() - e * e / (2.0 * var);
        let want: f64 = h
            .iter()
            .map(|hk| lp(hk[0], s2) + lp(hk[1] - 0.8 * hk[0], v) + lp(hk[2] - 0.8 * hk[1], v))
            .sum::<f64>()
            - 12.0 * 0.005f64.ln();
        let got = loglik_poly(&tr, &m, false).unwrap().value();
        assert!((got - want).abs() < 1e-6, "{got} vs {want}");
        let norm = loglik_poly(&tr, &m, true).unwrap().value();
        assert!((norm - want / 12.0).abs() < 1e-7);
    }

    #[test]
    fn zero_sigma_with_residual_is_neg_infinite() {
        let m = PolyModel {
            coeffs: PolyCoeffs::default(),
            ar1: Ar1Params { phi: 0.5, sigma: 0.0 },
            forcing: 10.0,
            dt: 0.005,
        };
        let tr = traj_with_forcing(&[1.0, 2.0, 0.0, 1.0], &[vec![0.3, 0.0, 0.0, 0.0], vec![0.0; 4]], 10.0, 0.005);
        assert_eq!(loglik_poly(&tr, &m, true).unwrap(), LogLik::NegInfinite);
        // x = 0 is an exact rest state of the forcing-free map only at F = 0.
        let m0 = PolyModel { forcing: 0.0, ..m };
        let exact = Trajectory::new(4, vec![0.0; 8], 0.0, 0.005, 0, 0.0).unwrap();
        assert!(loglik_poly(&exact, &m0, true).is_err());
    }

    #[test]
    fn rnn_with_zero_weights_is_iid_gaussian() {
        let arch = RnnArch { g_hidden: vec![3], gru_units: 2, gru_layers: 2 };
        let norm = NormStats { x_mean: 0.0, x_sd: 1.0, r_mean: 0.0, r_sd: 1.0 };
        let m = RnnModel::zeros(arch, norm, 0.005, 10.0, 0.7).unwrap();
        let u = vec![vec![0.5, -1.0, 0.0, 1.0], vec![0.2, 0.1, -2.0, 0.0], vec![-0.3, 2.0, 0.7, 0.7]];
        let tr = traj_with_forcing(&[1.0, -1.0, 3.0, 0.0], &u, 10.0, 0.005);
        let want: f64 = u.iter().flatten().map(|&v| gaussian_logpdf(v, 0.0, 0.7)).sum::<f64>() - 12.0 * 0.005f64.ln();
        let got = loglik_rnn(&tr, &m, false).unwrap().value();
        assert!((got - want).abs() < 1e-6, "{got} vs {want}");
    }

    #[test]
    fn rnn_matches_density_of_states() {
        // Oracle works in x-space: x_{t+1} | past ~ N(x_t + omega - dt (g + b(l)), (dt sigma)^2).
        use crate::models::{rnn_hidden_update, rnn_residual_mean, rnn_subgrid_g};
        let arch = RnnArch { g_hidden: vec![3], gru_units: 2, gru_layers: 2 };
        let norm = NormStats { x_mean: 1.0, x_sd: 3.0, r_mean: -0.5, r_sd: 2.0 };
        let m = RnnModel::random(arch, norm, 0.005, 8.0, 0.9, 21).unwrap();
        let xs = [1.2, 1.4, 0.9, 1.1];
        let tr = Trajectory::new(1, xs.to_vec(), 8.0, 0.005, 0, 0.0).unwrap();
        let (mut l, mut r, mut want) = (vec![0.0; 4], 0.0, 0.0);
        for t in 0..3 {
            l = rnn_hidden_update(&m, &l, r);
            let mu = rnn_residual_mean(&m, &l);
            let g = rnn_subgrid_g(&m, xs[t]);
            let w = rk2_omega(&xs[t..t + 1], 8.0, 0.005)[0];
            let mean_x = xs[t] + w - 0.005 * (g + mu);
            let sd_x = 0.005 * 0.9;
            want += -0.5 * (2.0 * std::f64::consts::PI * sd_x * sd_x).ln() - (xs[t + 1] - mean_x).powi(2) / (2.0 * sd_x * sd_x);
            r = (xs[t] + w - xs[t + 1]) / 0.005 - g;
        }
        let got = loglik_rnn(&tr, &m, false).unwrap().value();
        assert!(((got - want) / want).abs() < 1e-9, "{got} vs {want}");
    }

    #[test]
    fn window_profile_sorted_and_consistent() {
        let m = PolyModel {
            coeffs: PolyCoeffs::default(),
            ar1: Ar1Params { phi: 0.0, sigma: 1.0 },
            forcing: 10.0,
            dt: 0.005,
        };
        let u: Vec<Vec<f64>> = (0..10).map(|t| vec![(t as f64 * 0.7).sin() * (t as f64); 4]).collect();
        let tr = traj_with_forcing(&[0.5, 1.0, 1.5, 2.0], &u, 10.0, 0.005);
        let d = m.step_log_densities(&tr).unwrap();
        let prof = window_profile(&d, 5);
        assert_eq!(prof.len(), 2);
        assert!(prof[0] <= prof[1]);
        let mean = (prof[0] + prof[1]) / 2.0;
        assert!((mean - d.loglik(true).value()).abs() < 1e-12);
    }
}
