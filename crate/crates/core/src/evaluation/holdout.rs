use serde::{Deserialize, Serialize};

use crate::dynamics::Trajectory;
use crate::par;
use crate::training::{window_profile, Likelihood};

/// Window length (steps) of the per-window likelihood profile.
pub const PROFILE_WINDOW: usize = 200;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LikelihoodRow {
    pub model: String,
    /// Normalized log-likelihood per hold-out set; `None` when minus infinity
    /// or not computable.
    pub values: Vec<Option<f64>>,
    /// Set when the model blew up in free-running simulation at that forcing.
    pub exploded: Vec<bool>,
    /// Sorted per-window normalized log-likelihoods per hold-out set.
    pub profiles: Vec<Vec<f64>>,
    pub errors: Vec<Option<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LikelihoodTable {
    pub forcings: Vec<f64>,
    pub window: usize,
    pub rows: Vec<LikelihoodRow>,
}

impl LikelihoodTable {
    pub fn flag_explosion(&mut self, model: &str, forcing: f64) {
        if let Some(j) = self.forcings.iter().position(|&f| f == forcing) {
            for r in self.rows.iter_mut().filter(|r| r.model == model) {
                r.exploded[j] = true;
            }
        }
    }

    pub fn value(&self, model: &str, forcing: f64) -> Option<f64> {
        let j = self.forcings.iter().position(|&f| f == forcing)?;
        self.rows.iter().find(|r| r.model == model)?.values[j]
    }
}

/// Normalized hold-out log-likelihood of every model on every hold-out set.
pub fn holdout_likelihood_table(
    models: &[(&str, &(dyn Likelihood + Sync))],
    holdouts: &[&Trajectory],
    window: usize,
) -> LikelihoodTable {
    let rows = models
        .iter()
        .map(|(name, m)| {
            let cells = par::map(holdouts, |tr| match m.step_log_densities(tr) {
                Ok(d) => {
                    let v = d.loglik(true);
                    (v.is_finite().then(|| v.value()), window_profile(&d, window), None)
                }
                Err(e) => (None, Vec::new(), Some(e.to_string())),
            });
            let mut row = LikelihoodRow {
                model: name.to_string(),
                values: Vec::new(),
                exploded: vec![false; holdouts.len()],
                profiles: Vec::new(),
                errors: Vec::new(),
            };
            for (v, p, e) in cells {
                row.values.push(v);
                row.profiles.push(p);
                row.errors.push(e);
            }
            row
        })
        .collect();
    LikelihoodTable { forcings: holdouts.iter().map(|t| t.forcing).collect(), window, rows }
}
