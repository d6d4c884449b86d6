use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::cost::{FlopTable, CONVENTION};
use super::ensemble::WeatherCurves;
use super::histogram::{fifths_kl, histogram, kl_divergence, Histogram, HistogramSpec, X_BINS};
use super::holdout::LikelihoodTable;
use super::regimes::{
    pca_fit, regime_histograms, regime_projection, smooth_running_mean, RegimeBasis, RegimeHistSpec, RegimeHistograms,
    SMOOTHING_WINDOW,
};
use crate::dynamics::Trajectory;
use crate::error::{Error, Result};

pub const REPORT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedCurves {
    pub model: String,
    pub forcing: f64,
    pub curves: WeatherCurves,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedHistogram {
    pub model: String,
    pub histogram: Histogram,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedRegimes {
    pub model: String,
    pub histograms: RegimeHistograms,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelKl {
    pub model: String,
    pub x_hist: Option<f64>,
    pub regime_2d: Option<f64>,
    pub pc12: Option<f64>,
    pub pc34: Option<f64>,
    /// KL of each fifth of the model run against the truth X histogram.
    pub fifths: Vec<f64>,
}

/// Climatology of several runs at one forcing, compared with the truth run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClimateSection {
    pub forcing: f64,
    pub x_spec: HistogramSpec,
    pub regime_spec: RegimeHistSpec,
    /// Truth first, then the models in input order.
    pub histograms: Vec<NamedHistogram>,
    pub regimes: Vec<NamedRegimes>,
    pub kl: Vec<ModelKl>,
}

pub const TRUTH: &str = "truth";

/// Builds the X and regime histograms of every run and their KL divergence
/// from the truth. Runs too short to smooth get no regime entries.
pub fn climate_section(
    basis: &RegimeBasis,
    truth: &Trajectory,
    models: &[(&str, &Trajectory)],
    eps: f64,
) -> Result<ClimateSection> {
    let (lo, hi) = truth.min_max();
    let mut x_spec = HistogramSpec::covering(lo, hi, X_BINS)?;
    x_spec.smoothing_eps = eps;
    let truth_proj = regime_projection(&smooth_running_mean(truth, SMOOTHING_WINDOW)?, basis)?;
    let mut regime_spec = RegimeHistSpec::covering(&truth_proj)?;
    for s in [&mut regime_spec.joint.x, &mut regime_spec.joint.y, &mut regime_spec.pc12, &mut regime_spec.pc34] {
        s.smoothing_eps = eps;
    }
    let truth_x = histogram(truth.data(), &x_spec);
    let truth_reg = regime_histograms(&truth_proj, &regime_spec);
    let mut sec = ClimateSection {
        forcing: truth.forcing,
        x_spec,
        regime_spec,
        histograms: vec![NamedHistogram { model: TRUTH.into(), histogram: truth_x.clone() }],
        regimes: vec![NamedRegimes { model: TRUTH.into(), histograms: truth_reg.clone() }],
        kl: Vec::new(),
    };
    for (name, run) in models {
        if run.k() != truth.k() || (run.dt_save - truth.dt_save).abs() > 1e-12 {
            return Err(Error::Config(format!("run '{name}' is on a different grid from the truth")));
        }
        let hx = histogram(run.data(), &x_spec);
        let x_kl = kl_divergence(&truth_x.masses, &hx.masses, eps)?;
        let fifths = if run.len() >= 5 { fifths_kl(&truth_x, run.data(), &x_spec)? } else { Vec::new() };
        sec.histograms.push(NamedHistogram { model: name.to_string(), histogram: hx });
        let mut entry =
            ModelKl { model: name.to_string(), x_hist: Some(x_kl), regime_2d: None, pc12: None, pc34: None, fifths };
        if let Ok(sm) = smooth_running_mean(run, SMOOTHING_WINDOW) {
            let rh = regime_histograms(&regime_projection(&sm, basis)?, &sec.regime_spec);
            entry.regime_2d = Some(kl_divergence(&truth_reg.joint.masses, &rh.joint.masses, eps)?);
            entry.pc12 = Some(kl_divergence(&truth_reg.pc12.masses, &rh.pc12.masses, eps)?);
            entry.pc34 = Some(kl_divergence(&truth_reg.pc34.masses, &rh.pc34.masses, eps)?);
            sec.regimes.push(NamedRegimes { model: name.to_string(), histograms: rh });
        }
        sec.kl.push(entry);
    }
    Ok(sec)
}

/// Basis from the smoothed truth run.
pub fn truth_basis(truth: &Trajectory) -> Result<RegimeBasis> {
    pca_fit(&smooth_running_mean(truth, SMOOTHING_WINDOW)?)
}

/// Goodness-of-fit table: one row per model, one column per
/// (forcing, distribution) pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KlTable {
    pub columns: Vec<String>,
    pub rows: Vec<KlRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KlRow {
    pub model: String,
    pub values: Vec<Option<f64>>,
}

impl KlTable {
    /// The first section contributes all four distributions; later sections
    /// contribute the two 1D regime densities.
    pub fn from_sections(sections: &[ClimateSection]) -> Self {
        let mut columns = Vec::new();
        let mut models: Vec<String> = Vec::new();
        for s in sections {
            for k in &s.kl {
                if !models.contains(&k.model) {
                    models.push(k.model.clone());
                }
            }
        }
        let mut rows: Vec<KlRow> = models.iter().map(|m| KlRow { model: m.clone(), values: Vec::new() }).collect();
        for (i, s) in sections.iter().enumerate() {
            let f = s.forcing;
            let picks: Vec<(&str, fn(&ModelKl) -> Option<f64>)> = if i == 0 {
                vec![("x_hist", |k| k.x_hist), ("regime_2d", |k| k.regime_2d), ("pc12", |k| k.pc12), ("pc34", |k| k.pc34)]
            } else {
                vec![("pc12", |k| k.pc12), ("pc34", |k| k.pc34)]
            };
            for (name, get) in picks {
                columns.push(format!("{name}_F{f}"));
                for row in rows.iter_mut() {
                    row.values.push(s.kl.iter().find(|k| k.model == row.model).and_then(get));
                }
            }
        }
        Self { columns, rows }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlowupRecord {
    pub model: String,
    pub forcing: f64,
    pub time: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub version: u32,
    pub flop_convention: String,
    pub weather: Vec<NamedCurves>,
    pub climate: Vec<ClimateSection>,
    pub kl_table: KlTable,
    pub likelihood_table: Option<LikelihoodTable>,
    pub flop_table: Option<FlopTable>,
    pub regime_basis: Option<RegimeBasis>,
    pub blowups: Vec<BlowupRecord>,
}

impl Default for EvalReport {
    fn default() -> Self {
        Self {
            version: REPORT_VERSION,
            flop_convention: CONVENTION.to_string(),
            weather: Vec::new(),
            climate: Vec::new(),
            kl_table: KlTable { columns: Vec::new(), rows: Vec::new() },
            likelihood_table: None,
            flop_table: None,
            regime_basis: None,
            blowups: Vec::new(),
        }
    }
}

fn edges_rows(out: &mut String, prefix: &str, h: &Histogram) {
    for (i, m) in h.masses.iter().enumerate() {
        let _ = writeln!(out, "{prefix},{},{},{m}", h.edges[i], h.edges[i + 1]);
    }
}

impl EvalReport {
    /// Plot data, one CSV per figure, keyed by file name.
    pub fn csv_tables(&self) -> Vec<(String, String)> {
        let mut weather = String::from("model,forcing,lead_time,error,spread\n");
        for w in &self.weather {
            for (i, t) in w.curves.lead_times.iter().enumerate() {
                let _ = writeln!(weather, "{},{},{t},{},{}", w.model, w.forcing, w.curves.error[i], w.curves.spread[i]);
            }
        }
        let mut clim = String::from("model,forcing,bin_lo,bin_hi,mass\n");
        let mut joint = String::from("model,forcing,pc12_lo,pc34_lo,mass\n");
        let mut dens = String::from("model,forcing,component,bin_lo,bin_hi,mass\n");
        let mut dens_other = dens.clone();
        for (i, s) in self.climate.iter().enumerate() {
            for h in &s.histograms {
                edges_rows(&mut clim, &format!("{},{}", h.model, s.forcing), &h.histogram);
            }
            for r in &s.regimes {
                let j = &r.histograms.joint;
                let ny = j.y_edges.len() - 1;
                for (c, m) in j.masses.iter().enumerate() {
                    let _ = writeln!(joint, "{},{},{},{},{m}", r.model, s.forcing, j.x_edges[c / ny], j.y_edges[c % ny]);
                }
                let target = if i == 0 { &mut dens } else { &mut dens_other };
                edges_rows(target, &format!("{},{},pc12", r.model, s.forcing), &r.histograms.pc12);
                edges_rows(target, &format!("{},{},pc34", r.model, s.forcing), &r.histograms.pc34);
            }
        }
        vec![
            ("fig2_weather.csv".into(), weather),
            ("fig3_climatology.csv".into(), clim),
            ("fig4_regimes_2d.csv".into(), joint),
            ("fig5_regimes_1d.csv".into(), dens),
            ("fig6_regimes_1d_other_forcing.csv".into(), dens_other),
        ]
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("report.json"), serde_json::to_string_pretty(self)?)?;
        for (name, body) in self.csv_tables() {
            std::fs::write(dir.join(name), body)?;
        }
        Ok(())
    }
}
