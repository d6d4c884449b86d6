//! Static floating-point operation counts per surrogate time step.

use serde::{Deserialize, Serialize};

use crate::dynamics::L96Config;
use crate::models::RnnArch;

/// Cost of one exp, tanh or sqrt.
pub const TRANSCENDENTAL: u64 = 10;
/// Sigmoid as one exp, one add and one divide.
pub const SIGMOID: u64 = TRANSCENDENTAL + 2;
pub const CONVENTION: &str = "add/sub/mul/div = 1 flop; exp/tanh/sqrt = 10 flops; sigmoid = 12 flops; \
counts are per full K-vector step of one save interval, including the RK2 kernel";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelKind {
    Polynomial { k: usize },
    Rnn { k: usize, arch: RnnArch },
    /// Two-tier RK4 with `inner_steps` steps per save interval.
    Truth { config: L96Config, inner_steps: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct FlopBreakdown {
    pub omega: u64,
    pub deterministic: u64,
    pub recurrent: u64,
    pub readout: u64,
    pub update: u64,
    pub total: u64,
}

fn dense(n_in: u64, n_out: u64) -> u64 {
    2 * n_in * n_out
}

fn gru_layer(n_in: u64, u: u64) -> u64 {
    let gates = 3 * (dense(n_in, u) + dense(u, u) + u);
    let acts = 2 * u * SIGMOID + u * TRANSCENDENTAL;
    // r * h, then (1 - z) h + z c.
    gates + acts + u + 4 * u
}

/// Single-level kernel: `lambda` costs 5 per point and the midpoint adds 2.
fn omega(k: u64) -> u64 {
    k * (5 + 2 + 5)
}

pub fn flop_count(kind: &ModelKind) -> FlopBreakdown {
    match kind {
        ModelKind::Polynomial { k } => {
            let k = *k as u64;
            // Horner cubic 6, AR(1) update 3, state update 4.
            let deterministic = 6 * k;
            let recurrent = 3 * k;
            let update = 4 * k;
            let om = omega(k);
            FlopBreakdown { omega: om, deterministic, recurrent, readout: 0, update, total: om + deterministic + recurrent + update }
        }
        ModelKind::Rnn { k, arch } => {
            let k = *k as u64;
            let w = arch.g_widths();
            let hidden: u64 = w[1..w.len() - 1].iter().map(|&n| n as u64).sum();
            let g = 2 + w.windows(2).map(|p| dense(p[0] as u64, p[1] as u64) + p[1] as u64).sum::<u64>() + hidden * TRANSCENDENTAL;
            let u = arch.gru_units as u64;
            let s = 2 + (0..arch.gru_layers).map(|i| gru_layer(if i == 0 { 1 } else { u }, u)).sum::<u64>();
            let b = dense(arch.state_dim() as u64, 1) + 1;
            // Noise scaling 2, state update 4.
            let update = 6;
            let om = omega(k);
            FlopBreakdown {
                omega: om,
                deterministic: k * g,
                recurrent: k * s,
                readout: k * b,
                update: k * update,
                total: om + k * (g + s + b + update),
            }
        }
        ModelKind::Truth { config, inner_steps } => {
            let (k, j) = (config.k as u64, config.j as u64);
            let n = k + k * j;
            // X: advection 5, block sum J, coupling 2. Y: 7 per point.
            let tendency = k * (5 + j + 2) + k * j * 7;
            // Three stage states (2 each) plus the weighted combination (6).
            let rk4 = 4 * tendency + n * (3 * 2 + 6);
            let total = rk4 * inner_steps;
            FlopBreakdown { omega: 0, deterministic: total, recurrent: 0, readout: 0, update: 0, total }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlopRow {
    pub model: String,
    pub flops: u64,
    pub breakdown: FlopBreakdown,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlopTable {
    pub convention: String,
    pub rows: Vec<FlopRow>,
}

pub fn flop_table(entries: &[(&str, ModelKind)]) -> FlopTable {
    FlopTable {
        convention: CONVENTION.to_string(),
        rows: entries
            .iter()
            .map(|(name, kind)| {
                let b = flop_count(kind);
                FlopRow { model: name.to_string(), flops: b.total, breakdown: b }
            })
            .collect(),
    }
}
