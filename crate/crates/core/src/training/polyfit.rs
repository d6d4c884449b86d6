use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::ResidualDataset;
use crate::error::{Error, Result};
use crate::models::{PolyCoeffs, PolyModel};
use crate::stochastic::Ar1Params;

/// Fitted polynomial surrogate with fit diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolyFit {
    pub model: PolyModel,
    pub r_squared: f64,
    pub residual_sd: f64,
}

/// Least-squares cubic in `x` for the observed forcing, then an AR(1) fit of
/// what is left. The lag-1 autocorrelation is pooled over grid points and
/// never crosses a segment boundary.
pub fn fit_polynomial(ds: &ResidualDataset) -> Result<PolyFit> {
    let n = ds.r_targets.len();
    if n < 4 || ds.rows() < 2 {
        return Err(Error::InsufficientData(format!("{n} samples cannot determine a cubic")));
    }
    // Columns are rescaled to unit RMS before the QR factorization.
    let powers = [3, 2, 1, 0];
    let mut scale = [0.0; 4];
    for (j, &p) in powers.iter().enumerate() {
        let ss: f64 = ds.x_inputs.iter().map(|x| x.powi(p).powi(2)).sum();
        scale[j] = (ss / n as f64).sqrt();
        if scale[j] == 0.0 {
            return Err(Error::Singular(format!("column x^{p} is identically zero")));
        }
    }
    let a = DMatrix::from_fn(n, 4, |i, j| ds.x_inputs[i].powi(powers[j]) / scale[j]);
    let mut rhs = DVector::from_column_slice(&ds.r_targets);
    let qr = a.qr();
    let r = qr.r();
    let rmax = (0..4).map(|i| r[(i, i)].abs()).fold(0.0, f64::max);
    if (0..4).any(|i| r[(i, i)].abs() <= 1e-10 * rmax) {
        return Err(Error::Singular("design matrix is rank deficient".into()));
    }
    qr.q_tr_mul(&mut rhs);
    let top = rhs.rows(0, 4).into_owned();
    let beta = r
        .solve_upper_triangular(&top)
        .ok_or_else(|| Error::Singular("triangular solve failed".into()))?;
    let coeffs = PolyCoeffs { a: beta[0] / scale[0], b: beta[1] / scale[1], c: beta[2] / scale[2], d: beta[3] / scale[3] };

    let resid: Vec<f64> = ds.x_inputs.iter().zip(&ds.r_targets).map(|(&x, &r)| r - coeffs.eval(x)).collect();
    let c0 = resid.iter().map(|e| e * e).sum::<f64>() / n as f64;
    let k = ds.k;
    let mut c1 = 0.0;
    let mut pairs = 0usize;
    for seg in &ds.segments {
        for t in seg.start..seg.start + seg.len - 1 {
            for i in 0..k {
                c1 += resid[t * k + i] * resid[(t + 1) * k + i];
                pairs += 1;
            }
        }
    }
    let phi = if c0 > 0.0 && pairs > 0 { (c1 / pairs as f64 / c0).clamp(-0.999_999, 0.999_999) } else { 0.0 };
    let sigma = c0.sqrt();

    let mean_r = ds.r_targets.iter().sum::<f64>() / n as f64;
    let ss_tot: f64 = ds.r_targets.iter().map(|r| (r - mean_r).powi(2)).sum();
    let ss_res = c0 * n as f64;
    let r_squared = if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 1.0 };

    let model = PolyModel { coeffs, ar1: Ar1Params { phi, sigma }, forcing: ds.dominant_forcing(), dt: ds.dt };
    Ok(PolyFit { model, r_squared, residual_sd: sigma })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::training::Segment;

    fn synthetic(f: impl Fn(f64) -> f64, n: usize) -> ResidualDataset {
        let x: Vec<f64> = (0..n).map(|i| -8.0 + 20.0 * i as f64 / n as f64).collect();
        let r = x.iter().map(|&v| f(v)).collect();
        ResidualDataset { k: 1, dt: 0.005, r_targets: r, x_inputs: x, segments: vec![Segment { start: 0, len: n, forcing: 20.0 }] }
    }

    #[test]
    fn exact_cubic_recovered() {
        let c = PolyCoeffs { a: -0.00235, b: -0.0136, c: 1.3, d: 0.341 };
        let fit = fit_polynomial(&synthetic(|x| c.eval(x), 500)).unwrap();
        let m = fit.model.coeffs;
        for (got, want) in [(m.a, c.a), (m.b, c.b), (m.c, c.c), (m.d, c.d)] {
            assert!((got - want).abs() < 1e-10, "{got} vs {want}");
        }
        assert!(fit.residual_sd < 1e-10);
        assert!((fit.r_squared - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_forcing_gives_zero_model() {
        let fit = fit_polynomial(&synthetic(|_| 0.0, 100)).unwrap();
        let m = fit.model;
        assert_eq!([m.coeffs.a, m.coeffs.b, m.coeffs.c, m.coeffs.d], [0.0; 4]);
        assert_eq!(m.ar1.sigma, 0.0);
    }

    #[test]
    fn constant_input_is_singular() {
        let mut ds = synthetic(|x| x, 50);
        ds.x_inputs.iter_mut().for_each(|v| *v = 2.0);
        assert!(matches!(fit_polynomial(&ds), Err(Error::Singular(_))));
    }

    #[test]
    fn residual_autocorrelation_recovered() {
        let mut ds = synthetic(|x| 0.5 * x, 2000);
        for t in 0..2000 {
            ds.r_targets[t] += if t % 2 == 0 { 1.0 } else { -1.0 };
        }
        let fit = fit_polynomial(&ds).unwrap();
        assert!(fit.model.ar1.phi < -0.99);
        assert!((fit.model.ar1.sigma - 1.0).abs() < 0.01);
    }
}
