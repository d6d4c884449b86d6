//! Verification metrics: ensemble error and spread, climatology histograms
//! with KL divergence, PCA regime diagnostics, hold-out likelihood tables
//! and per-step operation counts.

pub mod cost;
mod ensemble;
mod histogram;
mod holdout;
mod regimes;
mod report;

pub use cost::{flop_count, flop_table, FlopBreakdown, FlopTable, ModelKind};
pub use ensemble::{
    run_weather_eval, sample_initial_indices, truth_ensemble_eval, truth_states, weather_error, weather_spread,
    EnsembleSpec, WeatherCurves,
};
pub use histogram::{
    fifths, fifths_kl, histogram, histogram2d, kl_divergence, Histogram, Histogram2d, Histogram2dSpec, HistogramSpec,
    DEFAULT_EPS, X_BINS,
};
pub use holdout::{holdout_likelihood_table, LikelihoodRow, LikelihoodTable, PROFILE_WINDOW};
pub use regimes::{
    dominant_wavenumber, minor_regime_fraction, pca_fit, regime_histograms, regime_projection, smooth_running_mean,
    RegimeBasis, RegimeHistSpec, RegimeHistograms, REGIME_1D_BINS, REGIME_2D_BINS, SMOOTHING_WINDOW,
};
pub use report::{
    climate_section, truth_basis, BlowupRecord, ClimateSection, EvalReport, KlRow, KlTable, ModelKl, NamedCurves,
    NamedHistogram, NamedRegimes, REPORT_VERSION, TRUTH,
};
