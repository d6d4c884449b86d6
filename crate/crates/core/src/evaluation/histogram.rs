use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default number of bins for the 1D X climatology.
pub const X_BINS: usize = 100;
pub const DEFAULT_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HistogramSpec {
    pub lo: f64,
    pub hi: f64,
    pub bins: usize,
    #[serde(default = "default_eps")]
    pub smoothing_eps: f64,
}

fn default_eps() -> f64 {
    DEFAULT_EPS
}

impl HistogramSpec {
    pub fn new(lo: f64, hi: f64, bins: usize) -> Result<Self> {
        let s = Self { lo, hi, bins, smoothing_eps: DEFAULT_EPS };
        s.validate()?;
        Ok(s)
    }

    /// Range `[min, max]` widened by 5% of its width on each side.
    pub fn covering(min: f64, max: f64, bins: usize) -> Result<Self> {
        let pad = 0.05 * (max - min).max(f64::MIN_POSITIVE);
        Self::new(min - pad, max + pad, bins)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.hi > self.lo) || !self.lo.is_finite() || !self.hi.is_finite() {
            return Err(Error::Config(format!("histogram range [{}, {}] is empty", self.lo, self.hi)));
        }
        if self.bins < 2 {
            return Err(Error::Config("histogram needs at least 2 bins".into()));
        }
        if !(self.smoothing_eps > 0.0) {
            return Err(Error::Config("smoothing_eps must be positive".into()));
        }
        Ok(())
    }

    pub fn edges(&self) -> Vec<f64> {
        let w = (self.hi - self.lo) / self.bins as f64;
        (0..=self.bins).map(|i| self.lo + w * i as f64).collect()
    }

    /// Bin of `v`, clamped to the edge bins.
    pub fn bin(&self, v: f64) -> usize {
        let pos = (v - self.lo) / (self.hi - self.lo) * self.bins as f64;
        if pos.is_nan() || pos < 0.0 {
            0
        } else {
            (pos as usize).min(self.bins - 1)
        }
    }
}

/// Normalized bin masses. Values outside the range are put in the edge bins
/// and counted in `n_below` / `n_above`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub masses: Vec<f64>,
    pub n_total: usize,
    pub n_below: usize,
    pub n_above: usize,
}

pub fn histogram(values: &[f64], spec: &HistogramSpec) -> Histogram {
    let mut counts = vec![0u64; spec.bins];
    let (mut below, mut above) = (0, 0);
    for &v in values {
        if v < spec.lo {
            below += 1;
        } else if v > spec.hi {
            above += 1;
        }
        counts[spec.bin(v)] += 1;
    }
    let n = values.len().max(1) as f64;
    Histogram {
        edges: spec.edges(),
        masses: counts.iter().map(|&c| c as f64 / n).collect(),
        n_total: values.len(),
        n_below: below,
        n_above: above,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Histogram2dSpec {
    pub x: HistogramSpec,
    pub y: HistogramSpec,
}

/// Joint histogram, masses row-major with `x` bins as rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram2d {
    pub x_edges: Vec<f64>,
    pub y_edges: Vec<f64>,
    pub masses: Vec<f64>,
    pub n_total: usize,
}

pub fn histogram2d(points: &[(f64, f64)], spec: &Histogram2dSpec) -> Histogram2d {
    let (nx, ny) = (spec.x.bins, spec.y.bins);
    let mut counts = vec![0u64; nx * ny];
    for &(a, b) in points {
        counts[spec.x.bin(a) * ny + spec.y.bin(b)] += 1;
    }
    let n = points.len().max(1) as f64;
    Histogram2d {
        x_edges: spec.x.edges(),
        y_edges: spec.y.edges(),
        masses: counts.iter().map(|&c| c as f64 / n).collect(),
        n_total: points.len(),
    }
}

/// `KL(q || p) = sum_{q > 0} q log(q / p)`, with `p` floored at `eps` and
/// renormalized. Only bins where `q > 0` are floored, since the others do not
/// enter the sum.
pub fn kl_divergence(q: &[f64], p: &[f64], eps: f64) -> Result<f64> {
    if q.len() != p.len() {
        return Err(Error::Shape(format!("binnings differ: {} vs {}", q.len(), p.len())));
    }
    let floored: Vec<f64> = q.iter().zip(p).map(|(&qi, &pi)| if qi > 0.0 { pi.max(eps) } else { pi }).collect();
    // Ratio of total masses, so an unfloored p keeps its scale exactly.
    let z: f64 = floored.iter().sum::<f64>() / p.iter().sum::<f64>();
    Ok(q.iter().zip(&floored).filter(|(&qi, _)| qi > 0.0).map(|(&qi, &pi)| qi * (qi / (pi / z)).ln()).sum())
}

/// Histograms of five equal consecutive parts of `values`, used to gauge
/// sampling variability of a single run.
pub fn fifths(values: &[f64], spec: &HistogramSpec) -> Vec<Histogram> {
    let n = values.len() / 5;
    (0..5).map(|i| histogram(&values[i * n..(i + 1) * n], spec)).collect()
}

/// KL of each fifth of `values` against the reference masses `q`.
pub fn fifths_kl(q: &Histogram, values: &[f64], spec: &HistogramSpec) -> Result<Vec<f64>> {
    fifths(values, spec).iter().map(|h| kl_divergence(&q.masses, &h.masses, spec.smoothing_eps)).collect()
}
