use serde::{Deserialize, Serialize};

use crate::dynamics::{omega_into, Trajectory};
use crate::error::{Error, Result};
use crate::models::NormStats;

/// Contiguous block of rows that came from one trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub start: usize,
    pub len: usize,
    pub forcing: f64,
}

/// Observed sub-grid forcing `r̂_{t+1}` paired with the preceding state `x_t`.
/// Row `i` of `x_inputs` is the state whose step produced row `i` of `r_targets`.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualDataset {
    pub k: usize,
    pub dt: f64,
    pub r_targets: Vec<f64>,
    pub x_inputs: Vec<f64>,
    pub segments: Vec<Segment>,
}

/// Inverts the deterministic part of the single-level update:
/// `r̂_{k,t+1} = (x_{k,t} + omega_k(x_t) - x_{k,t+1}) / dt`, with `dt` the save interval.
pub fn extract_residuals(traj: &Trajectory) -> Result<ResidualDataset> {
    ResidualDataset::from_trajectories(&[traj])
}

impl ResidualDataset {
    /// Concatenates the residuals of several trajectories as separate segments.
    pub fn from_trajectories(trajs: &[&Trajectory]) -> Result<Self> {
        let first = trajs.first().ok_or_else(|| Error::InsufficientData("no trajectories".into()))?;
        let k = first.k();
        let dt = first.dt_save;
        let mut ds = Self { k, dt, r_targets: Vec::new(), x_inputs: Vec::new(), segments: Vec::new() };
        let mut omega = vec![0.0; k];
        let mut scratch = vec![0.0; k];
        for tr in trajs {
            if tr.k() != k || (tr.dt_save - dt).abs() > 1e-12 * dt {
                return Err(Error::Shape(format!(
                    "trajectory (K = {}, dt = {}) incompatible with (K = {k}, dt = {dt})",
                    tr.k(),
                    tr.dt_save
                )));
            }
            if tr.len() < 2 {
                return Err(Error::InsufficientData("trajectory needs at least 2 rows".into()));
            }
            let start = ds.rows();
            for t in 0..tr.len() - 1 {
                let x = tr.row(t);
                let xn = tr.row(t + 1);
                omega_into(x, tr.forcing, dt, &mut omega, &mut scratch);
                ds.x_inputs.extend_from_slice(x);
                ds.r_targets.extend((0..k).map(|i| (x[i] + omega[i] - xn[i]) / dt));
            }
            ds.segments.push(Segment { start, len: tr.len() - 1, forcing: tr.forcing });
        }
        Ok(ds)
    }

    /// Number of (input, target) rows.
    pub fn rows(&self) -> usize {
        self.r_targets.len() / self.k.max(1)
    }

    pub fn is_empty(&self) -> bool {
        self.r_targets.is_empty()
    }

    /// Mean and standard deviation of the inputs and targets.
    pub fn norm_stats(&self) -> NormStats {
        let ms = |v: &[f64]| {
            let n = v.len() as f64;
            let m = v.iter().sum::<f64>() / n;
            let sd = (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n).sqrt();
            (m, if sd > 0.0 { sd } else { 1.0 })
        };
        let (x_mean, x_sd) = ms(&self.x_inputs);
        let (r_mean, r_sd) = ms(&self.r_targets);
        NormStats { x_mean, x_sd, r_mean, r_sd }
    }

    /// Forcing of the longest segment.
    pub fn dominant_forcing(&self) -> f64 {
        self.segments.iter().max_by_key(|s| s.len).map(|s| s.forcing).unwrap_or(f64::NAN)
    }
}
