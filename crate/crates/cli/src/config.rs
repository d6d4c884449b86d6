//! Per-command JSON configuration. Every block rejects unknown keys and
//! falls back to the defaults below for missing ones.

use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use l96_core::dynamics::L96Config;
use l96_core::evaluation::{EnsembleSpec, DEFAULT_EPS, PROFILE_WINDOW};
use l96_core::models::RnnArch;
use l96_core::training::TrainConfig;

use crate::CliError;

/// Reads a config block, or the defaults when no file is given.
pub fn load<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T, CliError> {
    let Some(p) = path else { return Ok(T::default()) };
    let text = std::fs::read_to_string(p).map_err(|e| CliError::Io(format!("{}: {e}", p.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))
}

pub fn check_scale(scale: f64) -> Result<(), CliError> {
    if !(scale > 0.0) || !scale.is_finite() {
        return Err(CliError::Config(format!("scale must be positive, got {scale}")));
    }
    Ok(())
}

/// Resolves `file` against `dir` unless it is absolute.
pub fn resolve(dir: &Path, file: &str) -> PathBuf {
    let p = Path::new(file);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        dir.join(p)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TruthPiece {
    pub name: String,
    pub forcing: f64,
    /// Unscaled duration (MTU).
    pub duration: f64,
}

fn piece(name: &str, forcing: f64, duration: f64) -> TruthPiece {
    TruthPiece { name: name.into(), forcing, duration }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenTruthConfig {
    /// Constants of the system; `forcing` is replaced by each piece's value.
    pub system: L96Config,
    pub pieces: Vec<TruthPiece>,
    pub dt_inner: f64,
    pub dt_save: f64,
    pub burn_in: f64,
    pub seed: u64,
    pub scale: f64,
}

impl Default for GenTruthConfig {
    fn default() -> Self {
        Self {
            system: L96Config::standard(20.0),
            pieces: vec![
                piece("train_F19", 19.0, 500.0),
                piece("train_F20", 20.0, 1000.0),
                piece("train_F20.5", 20.5, 500.0),
                piece("train_F21", 21.0, 500.0),
                piece("valid_F21.5", 21.5, 500.0),
            ],
            dt_inner: 0.001,
            dt_save: 0.005,
            burn_in: 10.0,
            seed: 0,
            scale: 1.0,
        }
    }
}

fn default_train_files() -> Vec<String> {
    ["train_F19", "train_F20", "train_F20.5", "train_F21"].iter().map(|n| format!("{n}.l96")).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FitPolyConfig {
    /// Directory the data paths are relative to; `--out` when absent.
    pub data_dir: Option<PathBuf>,
    pub train: Vec<String>,
    pub model_out: String,
}

impl Default for FitPolyConfig {
    fn default() -> Self {
        Self { data_dir: None, train: default_train_files(), model_out: "poly.json".into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainRnnConfig {
    pub data_dir: Option<PathBuf>,
    pub train: Vec<String>,
    pub valid: Vec<String>,
    pub training: TrainConfig,
    pub model_out: String,
    pub checkpoint: String,
    pub log: String,
    /// Continue from `checkpoint` when it exists.
    pub resume: bool,
}

impl Default for TrainRnnConfig {
    fn default() -> Self {
        Self {
            data_dir: None,
            train: default_train_files(),
            valid: vec!["valid_F21.5.l96".into()],
            training: TrainConfig::default(),
            model_out: "rnn.json".into(),
            checkpoint: "rnn_checkpoint.json".into(),
            log: "train_log.jsonl".into(),
            resume: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "snake_case")]
pub enum InitialState {
    Zero,
    /// Row `index` of a truth file; the hidden state is warm-started from
    /// the `spinup` rows before it.
    Truth { file: String, index: usize, spinup: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulateConfig {
    pub data_dir: Option<PathBuf>,
    pub model: String,
    /// Forcing of the run; the model's own forcing when absent.
    pub forcing: Option<f64>,
    /// Unscaled duration (MTU).
    pub duration: f64,
    /// Model steps between saved rows.
    pub save_every: usize,
    pub initial: InitialState,
    /// Grid size for a zero initial state.
    pub k: usize,
    pub seed: u64,
    pub scale: f64,
    /// Output file; `sim_<model>_F<forcing>.l96` when absent.
    pub out_file: Option<String>,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        Self {
            data_dir: None,
            model: "rnn.json".into(),
            forcing: None,
            duration: 5000.0,
            save_every: 1,
            initial: InitialState::Zero,
            k: 8,
            seed: 0,
            scale: 1.0,
            out_file: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelEntry {
    pub name: String,
    pub file: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeatherInput {
    pub truth: String,
    /// `n_init` is multiplied by the scale factor.
    pub spec: EnsembleSpec,
    /// Models to forecast with; every model when empty.
    #[serde(default)]
    pub models: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunEntry {
    pub model: String,
    pub file: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClimateInput {
    pub truth: String,
    pub runs: Vec<RunEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LikelihoodInput {
    pub holdouts: Vec<String>,
    #[serde(default = "default_window")]
    pub window: usize,
}

fn default_window() -> usize {
    PROFILE_WINDOW
}

fn default_eps() -> f64 {
    DEFAULT_EPS
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct EvaluateConfig {
    #[serde(default)]
    pub data_dir: Option<PathBuf>,
    #[serde(default)]
    pub models: Vec<ModelEntry>,
    #[serde(default)]
    pub weather: Option<WeatherInput>,
    /// One section per forcing. The regime basis comes from the first truth.
    #[serde(default)]
    pub climate: Vec<ClimateInput>,
    #[serde(default)]
    pub likelihood: Option<LikelihoodInput>,
    #[serde(default = "default_true")]
    pub cost: bool,
    #[serde(default = "default_eps")]
    pub smoothing_eps: f64,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub scale: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CostConfig {
    pub k: usize,
    pub arch: RnnArch,
    pub truth: L96Config,
    pub dt_inner: f64,
    pub dt_save: f64,
}

impl Default for CostConfig {
    fn default() -> Self {
        Self { k: 8, arch: RnnArch::default(), truth: L96Config::standard(20.0), dt_inner: 0.001, dt_save: 0.005 }
    }
}
