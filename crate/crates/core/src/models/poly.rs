use serde::{Deserialize, Serialize};

use super::{blowup_error, NoiseSource, Surrogate};
use crate::dynamics::{omega_into, Trajectory};
use crate::error::{Error, Result};
use crate::stochastic::{ar1_step, Ar1Params};

/// Cubic sub-grid tendency `a x^3 + b x^2 + c x + d`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct PolyCoeffs {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
}

impl PolyCoeffs {
    pub fn eval(&self, x: f64) -> f64 {
        ((self.a * x + self.b) * x + self.c) * x + self.d
    }
}

/// Cubic deterministic tendency plus AR(1) red noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolyModel {
    pub coeffs: PolyCoeffs,
    pub ar1: Ar1Params,
    pub forcing: f64,
    pub dt: f64,
}

impl PolyModel {
    pub fn validate(&self) -> Result<()> {
        self.ar1.validate()?;
        let c = self.coeffs;
        if ![c.a, c.b, c.c, c.d, self.forcing, self.dt].iter().all(|v| v.is_finite()) || !(self.dt > 0.0) {
            return Err(Error::Config("polynomial model parameters must be finite with dt > 0".into()));
        }
        Ok(())
    }
}

/// AR(1) hidden state. Before the first step `started` is false and the
/// first draw is `h_1 = sigma z_1`.
#[derive(Debug, Clone, PartialEq)]
pub struct PolyState {
    pub h: Vec<f64>,
    pub started: bool,
}

impl PolyState {
    pub fn fresh(k: usize) -> Self {
        Self { h: vec![0.0; k], started: false }
    }
}

/// One step: `h <- phi h + sigma sqrt(1 - phi^2) z`, then
/// `x <- x + omega(x) - dt (a x^3 + b x^2 + c x + d + h)`.
pub fn poly_step(
    x: &[f64],
    h: &[f64],
    m: &PolyModel,
    forcing: f64,
    noise: &mut dyn NoiseSource,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut xn = x.to_vec();
    let mut st = PolyState { h: h.to_vec(), started: true };
    m.advance(&mut xn, &mut st, forcing, noise)?;
    Ok((xn, st.h))
}

impl Surrogate for PolyModel {
    type State = PolyState;

    fn name(&self) -> &'static str {
        "polynomial"
    }

    fn dt(&self) -> f64 {
        self.dt
    }

    fn forcing(&self) -> f64 {
        self.forcing
    }

    fn cold_state(&self, k: usize) -> PolyState {
        PolyState::fresh(k)
    }

    fn warm_state(&self, history: &Trajectory, spinup: usize) -> Result<PolyState> {
        let k = history.k();
        if history.len() < spinup + 1 {
            return Err(Error::InsufficientData(format!(
                "warm start needs {} rows, history has {}",
                spinup + 1,
                history.len()
            )));
        }
        if spinup == 0 {
            return Ok(PolyState::fresh(k));
        }
        let n = history.len();
        let prev = history.row(n - 2);
        let last = history.row(n - 1);
        let mut omega = vec![0.0; k];
        let mut scratch = vec![0.0; k];
        omega_into(prev, history.forcing, self.dt, &mut omega, &mut scratch);
        let h = (0..k).map(|i| (prev[i] + omega[i] - last[i]) / self.dt - self.coeffs.eval(prev[i])).collect();
        Ok(PolyState { h, started: true })
    }

    fn advance(&self, x: &mut [f64], state: &mut PolyState, forcing: f64, noise: &mut dyn NoiseSource) -> Result<()> {
        let k = x.len();
        let mut omega = vec![0.0; k];
        let mut scratch = vec![0.0; k];
        omega_into(x, forcing, self.dt, &mut omega, &mut scratch);
        for i in 0..k {
            let z = noise.draw(i);
            state.h[i] = if state.started { ar1_step(state.h[i], &self.ar1, z) } else { self.ar1.sigma * z };
        }
        state.started = true;
        for i in 0..k {
            x[i] += omega[i] - self.dt * (self.coeffs.eval(x[i]) + state.h[i]);
        }
        blowup_error(x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::rk2_omega;
    use crate::models::{simulate, GridNoise, ZeroNoise};

    fn model(sigma: f64) -> PolyModel {
        PolyModel {
            coeffs: PolyCoeffs { a: -0.00235, b: -0.0136, c: 1.3, d: 0.341 },
            ar1: Ar1Params { phi: 0.986, sigma },
            forcing: 20.0,
            dt: 0.005,
        }
    }

    #[test]
    fn zero_model_is_pure_rk2() {
        let m = PolyModel { coeffs: PolyCoeffs::default(), ..model(0.0) };
        let x: Vec<f64> = (0..8).map(|k| (k as f64 * 1.7).sin() * 6.0).collect();
        let (xn, h) = poly_step(&x, &[0.0; 8], &m, 20.0, &mut GridNoise::new(1, 0, 8)).unwrap();
        let w = rk2_omega(&x, 20.0, 0.005);
        for k in 0..8 {
            assert_eq!(xn[k], x[k] + w[k]);
        }
        assert_eq!(h, vec![0.0; 8]);
    }

    #[test]
    fn fixed_seed_reproducible() {
        let m = model(1.99);
        let x0: Vec<f64> = (0..8).map(|k| k as f64).collect();
        let run = || simulate(&m, &x0, m.cold_state(8), 20.0, 500, 1, &mut GridNoise::new(9, 0, 8), 9).unwrap();
        assert_eq!(run().trajectory, run().trajectory);
    }

    #[test]
    fn hidden_chain_has_ar1_statistics() {
        // phi = 0.5 keeps the Monte Carlo standard errors of both statistics
        // near 0.6% at 1e5 steps, so a 2% band is a > 3 sigma bound.
        let m = PolyModel { ar1: Ar1Params { phi: 0.5, sigma: 0.7 }, ..model(0.7) };
        let mut noise = GridNoise::new(17, 0, 4);
        let n = 100_000;
        let mut hs = Vec::with_capacity(n);
        let mut st = m.cold_state(4);
        let mut x = [0.0; 4];
        for _ in 0..n {
            x.iter_mut().for_each(|v| *v = 0.0);
            m.advance(&mut x, &mut st, 20.0, &mut noise).unwrap();
            hs.push(st.h[0]);
        }
        let mean = hs.iter().sum::<f64>() / n as f64;
        let var = hs.iter().map(|h| (h - mean).powi(2)).sum::<f64>() / n as f64;
        let lag1 = hs.windows(2).map(|w| (w[0] - mean) * (w[1] - mean)).sum::<f64>() / ((n - 1) as f64 * var);
        assert!((lag1 / 0.5 - 1.0).abs() < 0.02, "lag-1 {lag1}");
        assert!((var / 0.49 - 1.0).abs() < 0.02, "variance {var}");
    }

    #[test]
    fn deterministic_without_noise() {
        let m = model(0.0);
        let x0: Vec<f64> = (0..8).map(|k| (k as f64).cos() * 4.0).collect();
        let a = simulate(&m, &x0, m.cold_state(8), 20.0, 300, 1, &mut ZeroNoise, 0).unwrap();
        let b = simulate(&m, &x0, m.cold_state(8), 20.0, 300, 1, &mut GridNoise::new(5, 0, 8), 0).unwrap();
        assert_eq!(a.trajectory.data(), b.trajectory.data());
    }

    #[test]
    fn warm_state_recovers_last_hidden_value() {
        let m = model(1.0);
        let x0: Vec<f64> = (0..8).map(|k| k as f64 - 3.0).collect();
        let mut st = m.cold_state(8);
        let mut x = x0.clone();
        let mut noise = GridNoise::new(2, 0, 8);
        let mut rows = x0.clone();
        for _ in 0..20 {
            m.advance(&mut x, &mut st, 20.0, &mut noise).unwrap();
            rows.extend_from_slice(&x);
        }
        let hist = Trajectory::new(8, rows, 20.0, 0.005, 0, 0.0).unwrap();
        let warm = m.warm_state(&hist, 10).unwrap();
        for k in 0..8 {
            assert!((warm.h[k] - st.h[k]).abs() < 1e-9, "{} vs {}", warm.h[k], st.h[k]);
        }
    }
}
