use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use super::histogram::{histogram, histogram2d, Histogram, Histogram2d, Histogram2dSpec, HistogramSpec};
use crate::dynamics::Trajectory;
use crate::error::{Error, Result};

/// Default smoothing window (MTU) applied before regime analysis.
pub const SMOOTHING_WINDOW: f64 = 0.4;
pub const REGIME_2D_BINS: usize = 40;
pub const REGIME_1D_BINS: usize = 60;

/// Centered running mean over `round(window / dt_save)` rows at every grid
/// point. The output drops the rows whose window would leave the record.
pub fn smooth_running_mean(traj: &Trajectory, window: f64) -> Result<Trajectory> {
    let w = (window / traj.dt_save).round() as usize;
    if w < 1 {
        return Err(Error::Config("smoothing window shorter than the save interval".into()));
    }
    if traj.len() < w {
        return Err(Error::InsufficientData(format!("{} rows cannot fill a {w}-row window", traj.len())));
    }
    let k = traj.k();
    let n_out = traj.len() - w + 1;
    let mut out = Vec::with_capacity(n_out * k);
    let mut acc = vec![0.0; k];
    for t in 0..w {
        acc.iter_mut().zip(traj.row(t)).for_each(|(a, v)| *a += v);
    }
    out.extend(acc.iter().map(|a| a / w as f64));
    for t in w..traj.len() {
        let (add, sub) = (traj.row(t), traj.row(t - w));
        for i in 0..k {
            acc[i] += add[i] - sub[i];
        }
        out.extend(acc.iter().map(|a| a / w as f64));
    }
    // Shift the time origin to the centre of the first window.
    let t0 = traj.t0 + 0.5 * (w - 1) as f64 * traj.dt_save;
    Trajectory::new(k, out, traj.forcing, traj.dt_save, traj.seed, t0)
}

/// Empirical orthogonal functions of the truth climate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegimeBasis {
    pub mean: Vec<f64>,
    /// `eof[j]` is the j-th unit eigenvector.
    pub eof: Vec<Vec<f64>>,
    /// Eigenvalues, non-increasing.
    pub explained: Vec<f64>,
    pub rank_deficient: bool,
}

impl RegimeBasis {
    pub fn project(&self, x: &[f64]) -> Vec<f64> {
        self.eof.iter().map(|e| e.iter().zip(x).zip(&self.mean).map(|((ei, xi), mi)| ei * (xi - mi)).sum()).collect()
    }

    pub fn reconstruct(&self, pcs: &[f64]) -> Vec<f64> {
        let mut x = self.mean.clone();
        for (e, &p) in self.eof.iter().zip(pcs) {
            x.iter_mut().zip(e).for_each(|(xi, ei)| *xi += p * ei);
        }
        x
    }
}

/// Mean-removed covariance eigendecomposition. Each eigenvector's sign is
/// fixed so that its largest-magnitude component is positive.
pub fn pca_fit(traj: &Trajectory) -> Result<RegimeBasis> {
    let k = traj.k();
    let n = traj.len();
    if n <= k {
        return Err(Error::InsufficientData(format!("PCA on {n} rows needs more than {k}")));
    }
    let mut mean = vec![0.0; k];
    for r in traj.rows() {
        mean.iter_mut().zip(r).for_each(|(m, v)| *m += v / n as f64);
    }
    let mut cov = DMatrix::<f64>::zeros(k, k);
    for r in traj.rows() {
        for i in 0..k {
            let ai = r[i] - mean[i];
            for j in i..k {
                cov[(i, j)] += ai * (r[j] - mean[j]);
            }
        }
    }
    for i in 0..k {
        for j in i..k {
            let v = cov[(i, j)] / (n - 1) as f64;
            cov[(i, j)] = v;
            cov[(j, i)] = v;
        }
    }
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let explained: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i].max(0.0)).collect();
    let eof = order
        .iter()
        .map(|&i| {
            let mut v: Vec<f64> = eig.eigenvectors.column(i).iter().copied().collect();
            let big = v.iter().copied().fold(0.0, |a: f64, b| if b.abs() > a.abs() { b } else { a });
            if big < 0.0 {
                v.iter_mut().for_each(|x| *x = -*x);
            }
            v
        })
        .collect();
    let rank_deficient = explained.last().is_some_and(|&l| l <= 1e-12 * explained[0].max(f64::MIN_POSITIVE));
    Ok(RegimeBasis { mean, eof, explained, rank_deficient })
}

/// Spatial wavenumber with the largest DFT amplitude (excluding the mean).
pub fn dominant_wavenumber(v: &[f64]) -> usize {
    let n = v.len();
    let amp = |m: usize| {
        let (mut re, mut im) = (0.0, 0.0);
        for (j, &x) in v.iter().enumerate() {
            let a = 2.0 * std::f64::consts::PI * (m * j) as f64 / n as f64;
            re += x * a.cos();
            im -= x * a.sin();
        }
        re.hypot(im)
    };
    (1..=n / 2).max_by(|&a, &b| amp(a).total_cmp(&amp(b))).unwrap_or(0)
}

/// `(||[PC1, PC2]||, ||[PC3, PC4]||)` for every row.
pub fn regime_projection(traj: &Trajectory, basis: &RegimeBasis) -> Result<Vec<(f64, f64)>> {
    if traj.k() != basis.mean.len() || basis.eof.len() < 4 {
        return Err(Error::Shape("trajectory and regime basis differ in size".into()));
    }
    Ok(traj
        .rows()
        .map(|r| {
            let p: Vec<f64> = basis.eof[..4]
                .iter()
                .map(|e| e.iter().zip(r).zip(&basis.mean).map(|((ei, xi), mi)| ei * (xi - mi)).sum())
                .collect();
            (p[0].hypot(p[1]), p[2].hypot(p[3]))
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegimeHistSpec {
    pub joint: Histogram2dSpec,
    pub pc12: HistogramSpec,
    pub pc34: HistogramSpec,
}

impl RegimeHistSpec {
    /// Ranges from `[0, 1.05 max]` of the reference projections.
    pub fn covering(points: &[(f64, f64)]) -> Result<Self> {
        let m1 = points.iter().map(|p| p.0).fold(0.0, f64::max) * 1.05;
        let m2 = points.iter().map(|p| p.1).fold(0.0, f64::max) * 1.05;
        Ok(Self {
            joint: Histogram2dSpec {
                x: HistogramSpec::new(0.0, m1, REGIME_2D_BINS)?,
                y: HistogramSpec::new(0.0, m2, REGIME_2D_BINS)?,
            },
            pc12: HistogramSpec::new(0.0, m1, REGIME_1D_BINS)?,
            pc34: HistogramSpec::new(0.0, m2, REGIME_1D_BINS)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegimeHistograms {
    pub joint: Histogram2d,
    pub pc12: Histogram,
    pub pc34: Histogram,
}

pub fn regime_histograms(points: &[(f64, f64)], spec: &RegimeHistSpec) -> RegimeHistograms {
    let a: Vec<f64> = points.iter().map(|p| p.0).collect();
    let b: Vec<f64> = points.iter().map(|p| p.1).collect();
    RegimeHistograms {
        joint: histogram2d(points, &spec.joint),
        pc12: histogram(&a, &spec.pc12),
        pc34: histogram(&b, &spec.pc34),
    }
}

/// Fraction of time with `||[PC3, PC4]||` above `threshold`. This is a
/// labelling convention for the minor regime, not a derived quantity.
pub fn minor_regime_fraction(points: &[(f64, f64)], threshold: f64) -> f64 {
    points.iter().filter(|p| p.1 > threshold).count() as f64 / points.len().max(1) as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    fn traj(k: usize, rows: Vec<f64>) -> Trajectory {
        Trajectory::new(k, rows, 20.0, 0.005, 0, 0.0).unwrap()
    }

    #[test]
    fn constant_unchanged_and_alternating_cancels() {
        let c = traj(1, vec![3.0; 50]);
        let s = smooth_running_mean(&c, 0.02).unwrap();
        assert_eq!(s.len(), 47);
        assert!(s.data().iter().all(|&v| (v - 3.0).abs() < 1e-14));
        let alt = traj(1, (0..50).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect());
        let s = smooth_running_mean(&alt, 0.02).unwrap();
        assert!(s.data().iter().all(|&v| v.abs() < 1e-14));
        assert!(smooth_running_mean(&traj(1, vec![1.0; 3]), 0.02).is_err());
    }

    #[test]
    fn sine_attenuation_matches_filter_response() {
        let period = 400.0;
        let w = 80;
        let n = 4000;
        let data: Vec<f64> = (0..n).map(|t| (2.0 * std::f64::consts::PI * t as f64 / period).sin()).collect();
        let s = smooth_running_mean(&traj(1, data), w as f64 * 0.005).unwrap();
        let amp = s.data().iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let x = std::f64::consts::PI / period;
        let want = (w as f64 * x).sin() / (w as f64 * x.sin());
        assert!((amp / want - 1.0).abs() < 0.01, "{amp} vs {want}");
    }

    #[test]
    fn single_axis_variance_found() {
        let rows: Vec<f64> = (0..200)
            .flat_map(|t| {
                let mut r = vec![1.0; 8];
                r[3] += (t as f64 * 0.37).sin() * 2.0;
                r
            })
            .collect();
        let b = pca_fit(&traj(8, rows)).unwrap();
        assert!((b.eof[0][3].abs() - 1.0).abs() < 1e-10);
        assert!(b.rank_deficient);
    }

    #[test]
    fn orthonormal_sorted_complete() {
        let mut rng = crate::stochastic::RngStream::new(2, 0);
        let rows: Vec<f64> = (0..800).map(|i| rng.gaussian() * (1 + i % 8) as f64).collect();
        let tr = traj(8, rows);
        let b = pca_fit(&tr).unwrap();
        for i in 0..8 {
            for j in 0..8 {
                let d: f64 = b.eof[i].iter().zip(&b.eof[j]).map(|(a, c)| a * c).sum();
                assert!((d - f64::from(u8::from(i == j))).abs() < 1e-10);
            }
        }
        assert!(b.explained.windows(2).all(|w| w[0] >= w[1]));
        let x = tr.row(17);
        let back = b.reconstruct(&b.project(x));
        assert!(back.iter().zip(x).all(|(a, c)| (a - c).abs() < 1e-10));
    }

    #[test]
    fn projection_of_mean_is_zero_and_rotation_invariant() {
        let mut rng = crate::stochastic::RngStream::new(3, 0);
        let tr = traj(8, (0..800).map(|_| rng.gaussian()).collect());
        let b = pca_fit(&tr).unwrap();
        let at_mean = traj(8, b.mean.clone());
        let p = regime_projection(&at_mean, &b).unwrap();
        assert!(p[0].0.abs() < 1e-12 && p[0].1.abs() < 1e-12);
        // Rotating within the (PC1, PC2) plane keeps the first norm.
        let th: f64 = 0.7;
        let pcs = [2.0, -1.0, 0.5, 0.3, 0.0, 0.0, 0.0, 0.0];
        let mut rot = pcs;
        rot[0] = th.cos() * pcs[0] - th.sin() * pcs[1];
        rot[1] = th.sin() * pcs[0] + th.cos() * pcs[1];
        let two = traj(8, [b.reconstruct(&pcs), b.reconstruct(&rot)].concat());
        let p = regime_projection(&two, &b).unwrap();
        assert!((p[0].0 - p[1].0).abs() < 1e-12 && (p[0].1 - p[1].1).abs() < 1e-12);
    }

    #[test]
    fn wavenumber_of_pure_modes() {
        let mode = |m: f64| (0..8).map(|j| (2.0 * std::f64::consts::PI * m * j as f64 / 8.0 + 0.3).cos()).collect::<Vec<_>>();
        assert_eq!(dominant_wavenumber(&mode(2.0)), 2);
        assert_eq!(dominant_wavenumber(&mode(1.0)), 1);
        assert_eq!(dominant_wavenumber(&mode(3.0)), 3);
    }

    #[test]
    fn regime_histograms_normalized() {
        let pts: Vec<(f64, f64)> = (0..1000).map(|i| ((i % 37) as f64, (i % 11) as f64)).collect();
        let spec = RegimeHistSpec::covering(&pts).unwrap();
        let h = regime_histograms(&pts, &spec);
        for m in [&h.joint.masses, &h.pc12.masses, &h.pc34.masses] {
            assert!((m.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        assert!((minor_regime_fraction(&pts, 5.0) - 0.4545).abs() < 0.01);
    }
}
