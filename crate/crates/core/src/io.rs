//! On-disk formats: binary trajectories with JSON sidecars, model documents
//! and training checkpoints.
//!
//! Trajectory layout (little-endian): magic `L96D`, `u32` version, `u32` K,
//! `u64` T, `f64` F, `f64` dt_save, `u64` seed, then `T*K` `f64` values,
//! time-major.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dynamics::{L96Config, Trajectory};
use crate::error::{Error, Result};
use crate::models::{NormStats, PolyCoeffs, PolyModel, RnnArch, RnnModel, RnnParams};
use crate::stochastic::{Ar1Params, GAUSSIAN_METHOD};
use crate::training::{AdamState, EpochRecord, PolyFit, TrainCheckpoint, TrainConfig};

pub const TRAJECTORY_MAGIC: [u8; 4] = *b"L96D";
pub const TRAJECTORY_VERSION: u32 = 1;
pub const MODEL_VERSION: u32 = 1;
pub const GENERATOR: &str = concat!("l96-core ", env!("CARGO_PKG_VERSION"));

const HEADER_LEN: usize = 4 + 4 + 4 + 8 + 8 + 8 + 8;

/// Where a trajectory came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectoryProvenance {
    pub generator: String,
    /// `truth`, or the name of the surrogate that produced the run.
    pub source: String,
    pub burn_in: Option<f64>,
    pub dt_inner: Option<f64>,
    pub gaussian_method: String,
    #[serde(default)]
    pub config: Option<L96Config>,
    /// Model file a simulation was run from.
    #[serde(default)]
    pub model_file: Option<String>,
    /// Model time of a detected blow-up; the stored rows end before it.
    #[serde(default)]
    pub blowup_time: Option<f64>,
}

impl TrajectoryProvenance {
    pub fn truth(config: L96Config, burn_in: f64, dt_inner: f64) -> Self {
        Self {
            generator: GENERATOR.into(),
            source: "truth".into(),
            burn_in: Some(burn_in),
            dt_inner: Some(dt_inner),
            gaussian_method: GAUSSIAN_METHOD.into(),
            config: Some(config),
            model_file: None,
            blowup_time: None,
        }
    }

    pub fn surrogate(source: &str, model_file: Option<String>, blowup_time: Option<f64>) -> Self {
        Self {
            generator: GENERATOR.into(),
            source: source.into(),
            burn_in: None,
            dt_inner: None,
            gaussian_method: GAUSSIAN_METHOD.into(),
            config: None,
            model_file,
            blowup_time,
        }
    }
}

/// JSON sidecar: the binary header fields plus `t0` and provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectoryMeta {
    pub format_version: u32,
    pub k: usize,
    pub t: u64,
    pub forcing: f64,
    pub dt_save: f64,
    pub seed: u64,
    pub t0: f64,
    pub provenance: TrajectoryProvenance,
}

impl TrajectoryMeta {
    pub fn describe(traj: &Trajectory, provenance: TrajectoryProvenance) -> Self {
        Self {
            format_version: TRAJECTORY_VERSION,
            k: traj.k(),
            t: traj.len() as u64,
            forcing: traj.forcing,
            dt_save: traj.dt_save,
            seed: traj.seed,
            t0: traj.t0,
            provenance,
        }
    }
}

/// `run.l96` -> `run.l96.json`.
pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

pub fn write_trajectory_bin<W: Write>(mut w: W, traj: &Trajectory) -> Result<()> {
    let k = u32::try_from(traj.k()).map_err(|_| Error::Format("K does not fit in u32".into()))?;
    let mut head = Vec::with_capacity(HEADER_LEN);
    head.extend_from_slice(&TRAJECTORY_MAGIC);
    head.extend_from_slice(&TRAJECTORY_VERSION.to_le_bytes());
    head.extend_from_slice(&k.to_le_bytes());
    head.extend_from_slice(&(traj.len() as u64).to_le_bytes());
    head.extend_from_slice(&traj.forcing.to_le_bytes());
    head.extend_from_slice(&traj.dt_save.to_le_bytes());
    head.extend_from_slice(&traj.seed.to_le_bytes());
    w.write_all(&head)?;
    let mut buf = Vec::with_capacity(traj.data().len() * 8);
    for v in traj.data() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)?;
    w.flush()?;
    Ok(())
}

/// Reads a binary trajectory. `t0` is not part of the binary header and is
/// set to zero.
pub fn read_trajectory_bin<R: Read>(mut r: R) -> Result<Trajectory> {
    let mut head = [0u8; HEADER_LEN];
    r.read_exact(&mut head).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => Error::Format("file shorter than the trajectory header".into()),
        _ => Error::Io(e),
    })?;
    if head[0..4] != TRAJECTORY_MAGIC {
        return Err(Error::Format(format!("bad magic {:?}", &head[0..4])));
    }
    let u32_at = |i: usize| u32::from_le_bytes(head[i..i + 4].try_into().unwrap());
    let u64_at = |i: usize| u64::from_le_bytes(head[i..i + 8].try_into().unwrap());
    let f64_at = |i: usize| f64::from_le_bytes(head[i..i + 8].try_into().unwrap());
    let version = u32_at(4);
    if version != TRAJECTORY_VERSION {
        return Err(Error::Format(format!("unsupported trajectory version {version}")));
    }
    let k = u32_at(8) as usize;
    let t = u64_at(12);
    let (forcing, dt_save, seed) = (f64_at(20), f64_at(28), u64_at(36));
    let n = (t as usize)
        .checked_mul(k)
        .ok_or_else(|| Error::Format(format!("T = {t}, K = {k} overflows")))?;
    let mut body = Vec::new();
    r.read_to_end(&mut body)?;
    if body.len() != n * 8 {
        return Err(Error::Format(format!("expected {} data bytes, found {}", n * 8, body.len())));
    }
    let data = body.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    Trajectory::new(k, data, forcing, dt_save, seed, 0.0)
}

/// Writes `path` and its sidecar.
pub fn save_trajectory(path: &Path, traj: &Trajectory, provenance: TrajectoryProvenance) -> Result<()> {
    write_trajectory_bin(BufWriter::new(File::create(path)?), traj)?;
    let meta = TrajectoryMeta::describe(traj, provenance);
    write_json(&sidecar_path(path), &meta)
}

/// Reads `path` and its sidecar and checks that they agree.
pub fn load_trajectory(path: &Path) -> Result<(Trajectory, TrajectoryMeta)> {
    let mut traj = read_trajectory_bin(BufReader::new(File::open(path)?))?;
    let meta: TrajectoryMeta = read_json(&sidecar_path(path))?;
    let same = meta.k == traj.k()
        && meta.t == traj.len() as u64
        && meta.forcing.to_bits() == traj.forcing.to_bits()
        && meta.dt_save.to_bits() == traj.dt_save.to_bits()
        && meta.seed == traj.seed
        && meta.format_version == TRAJECTORY_VERSION;
    if !same {
        return Err(Error::Format(format!("sidecar of {} disagrees with the binary header", path.display())));
    }
    traj.t0 = meta.t0;
    Ok((traj, meta))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    Ok(serde_json::from_reader(BufReader::new(File::open(path)?))?)
}

/// Weight tensor stored row-major with its shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolyDiagnostics {
    pub r_squared: f64,
    pub residual_sd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelBody {
    Polynomial {
        coeffs: PolyCoeffs,
        ar1: Ar1Params,
        forcing: f64,
        dt: f64,
        diagnostics: Option<PolyDiagnostics>,
    },
    Rnn {
        arch: RnnArch,
        norm_stats: NormStats,
        sigma: f64,
        forcing: f64,
        dt: f64,
        tensors: Vec<NamedTensor>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct ModelProvenance {
    pub generator: String,
    #[serde(default)]
    pub command: String,
    #[serde(default)]
    pub data_files: Vec<String>,
    #[serde(default)]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub epochs: Option<usize>,
    #[serde(default)]
    pub train_config: Option<TrainConfig>,
}

impl ModelProvenance {
    pub fn new(command: &str) -> Self {
        Self { generator: GENERATOR.into(), command: command.into(), ..Self::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelDocument {
    pub version: u32,
    pub model: ModelBody,
    pub provenance: ModelProvenance,
}

/// A model loaded from disk.
#[derive(Debug, Clone, PartialEq)]
pub enum AnyModel {
    Polynomial(PolyModel),
    Rnn(RnnModel),
}

impl AnyModel {
    pub fn name(&self) -> &'static str {
        match self {
            AnyModel::Polynomial(_) => "polynomial",
            AnyModel::Rnn(_) => "rnn",
        }
    }

    pub fn dt(&self) -> f64 {
        match self {
            AnyModel::Polynomial(m) => m.dt,
            AnyModel::Rnn(m) => m.dt,
        }
    }
}

impl ModelDocument {
    pub fn from_poly(model: &PolyModel, diagnostics: Option<PolyDiagnostics>, provenance: ModelProvenance) -> Self {
        Self {
            version: MODEL_VERSION,
            model: ModelBody::Polynomial {
                coeffs: model.coeffs,
                ar1: model.ar1,
                forcing: model.forcing,
                dt: model.dt,
                diagnostics,
            },
            provenance,
        }
    }

    pub fn from_fit(fit: &PolyFit, provenance: ModelProvenance) -> Self {
        let diag = PolyDiagnostics { r_squared: fit.r_squared, residual_sd: fit.residual_sd };
        Self::from_poly(&fit.model, Some(diag), provenance)
    }

    pub fn from_rnn(model: &RnnModel, provenance: ModelProvenance) -> Self {
        let tensors = model
            .params
            .named_tensors()
            .into_iter()
            .map(|(name, shape, data)| NamedTensor { name, shape, data: data.to_vec() })
            .collect();
        Self {
            version: MODEL_VERSION,
            model: ModelBody::Rnn {
                arch: model.arch.clone(),
                norm_stats: model.norm,
                sigma: model.sigma(),
                forcing: model.forcing,
                dt: model.dt,
                tensors,
            },
            provenance,
        }
    }

    pub fn to_model(&self) -> Result<AnyModel> {
        if self.version != MODEL_VERSION {
            return Err(Error::Format(format!("unsupported model version {}", self.version)));
        }
        match &self.model {
            ModelBody::Polynomial { coeffs, ar1, forcing, dt, .. } => {
                let m = PolyModel { coeffs: *coeffs, ar1: *ar1, forcing: *forcing, dt: *dt };
                m.validate()?;
                Ok(AnyModel::Polynomial(m))
            }
            ModelBody::Rnn { arch, norm_stats, sigma, forcing, dt, tensors } => {
                arch.validate()?;
                let mut params = RnnParams::zeros(arch);
                let expected: Vec<(String, Vec<usize>)> =
                    params.named_tensors().into_iter().map(|(n, s, _)| (n, s)).collect();
                if expected.len() != tensors.len() {
                    return Err(Error::Format(format!(
                        "expected {} tensors for {arch:?}, found {}",
                        expected.len(),
                        tensors.len()
                    )));
                }
                for ((name, shape), t) in expected.iter().zip(tensors) {
                    let n: usize = shape.iter().product();
                    if &t.name != name || &t.shape != shape || t.data.len() != n {
                        return Err(Error::Format(format!(
                            "tensor {} {:?} ({} values) where {name} {shape:?} was expected",
                            t.name,
                            t.shape,
                            t.data.len()
                        )));
                    }
                }
                for (dst, t) in params.tensors_mut().into_iter().zip(tensors) {
                    dst.copy_from_slice(&t.data);
                }
                let m = RnnModel::new(arch.clone(), params, *norm_stats, *dt, *forcing)?;
                if (m.sigma() - sigma).abs() > 1e-12 * sigma.abs().max(1.0) {
                    return Err(Error::Format(format!("sigma {sigma} disagrees with log_sigma tensor ({})", m.sigma())));
                }
                Ok(AnyModel::Rnn(m))
            }
        }
    }
}

pub fn save_model(path: &Path, doc: &ModelDocument) -> Result<()> {
    write_json(path, doc)
}

pub fn load_model(path: &Path) -> Result<(AnyModel, ModelDocument)> {
    let doc: ModelDocument = read_json(path)?;
    Ok((doc.to_model()?, doc))
}

/// Resumable training state. Both parameter sets use the model format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointDocument {
    pub version: u32,
    pub current: ModelDocument,
    pub best: ModelDocument,
    pub best_valid: f64,
    pub adam: AdamState,
    pub next_epoch: usize,
    pub log: Vec<EpochRecord>,
}

impl CheckpointDocument {
    pub fn new(ck: &TrainCheckpoint, provenance: ModelProvenance) -> Self {
        Self {
            version: MODEL_VERSION,
            current: ModelDocument::from_rnn(&ck.model, provenance.clone()),
            best: ModelDocument::from_rnn(&ck.best, provenance),
            best_valid: ck.best_valid,
            adam: ck.adam.clone(),
            next_epoch: ck.next_epoch,
            log: ck.log.clone(),
        }
    }

    pub fn to_checkpoint(&self) -> Result<TrainCheckpoint> {
        let rnn = |d: &ModelDocument| match d.to_model()? {
            AnyModel::Rnn(m) => Ok(m),
            other => Err(Error::Format(format!("checkpoint holds a {} model", other.name()))),
        };
        let model = rnn(&self.current)?;
        if self.adam.m.len() != model.params.n_params() || self.adam.v.len() != self.adam.m.len() {
            return Err(Error::Format("optimizer state does not match the parameter count".into()));
        }
        Ok(TrainCheckpoint {
            model,
            best: rnn(&self.best)?,
            best_valid: self.best_valid,
            adam: self.adam.clone(),
            next_epoch: self.next_epoch,
            log: self.log.clone(),
        })
    }
}

/// Appends one JSON object per line.
pub fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let text = std::fs::read_to_string(path)?;
    text.lines().filter(|l| !l.trim().is_empty()).map(|l| Ok(serde_json::from_str(l)?)).collect()
}
