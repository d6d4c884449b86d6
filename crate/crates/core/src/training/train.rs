use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::{adam_update, batch_loss, rnn_grad, AdamHyper, AdamState, ResidualDataset, Sequence};
use crate::error::{Error, Result};
use crate::models::{RnnArch, RnnModel};
use crate::stochastic::RngStream;

/// Piecewise-constant learning rate: `initial` until the first listed epoch,
/// then each `(epoch, rate)` pair takes over from that epoch on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LrSchedule {
    pub initial: f64,
    #[serde(default)]
    pub steps: Vec<(usize, f64)>,
}

impl LrSchedule {
    pub fn rate(&self, epoch: usize) -> f64 {
        self.steps.iter().filter(|(e, _)| *e <= epoch).max_by_key(|(e, _)| *e).map_or(self.initial, |s| s.1)
    }
}

impl Default for LrSchedule {
    fn default() -> Self {
        Self { initial: 1e-4, steps: vec![(70, 3e-5)] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub seq_len: usize,
    pub batch: usize,
    pub epochs: usize,
    pub lr_schedule: LrSchedule,
    pub adam: AdamHyper,
    pub seed: u64,
    pub arch: RnnArch,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            seq_len: 700,
            batch: 32,
            epochs: 100,
            lr_schedule: LrSchedule::default(),
            adam: AdamHyper::default(),
            seed: 0,
            arch: RnnArch::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.seq_len < 2 || self.batch < 1 {
            return Err(Error::Config("seq_len must be at least 2 and batch positive".into()));
        }
        let rates = std::iter::once(self.lr_schedule.initial).chain(self.lr_schedule.steps.iter().map(|s| s.1));
        if rates.into_iter().any(|r| !(r > 0.0) || !r.is_finite()) {
            return Err(Error::Config("learning rates must be positive".into()));
        }
        let a = &self.adam;
        if !(0.0..1.0).contains(&a.beta1) || !(0.0..1.0).contains(&a.beta2) || !(a.eps > 0.0) {
            return Err(Error::Config("adam betas must lie in [0, 1) and eps > 0".into()));
        }
        self.arch.validate()
    }
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub valid_loss: f64,
    pub lr: f64,
    pub wall_time: f64,
}

/// Everything needed to resume training exactly where it stopped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainCheckpoint {
    pub model: RnnModel,
    pub best: RnnModel,
    pub best_valid: f64,
    pub adam: AdamState,
    pub next_epoch: usize,
    pub log: Vec<EpochRecord>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    /// Parameters with the lowest validation loss seen.
    pub best: RnnModel,
    pub checkpoint: TrainCheckpoint,
    pub log: Vec<EpochRecord>,
}

/// Cuts every segment into non-overlapping windows of `seq_len` steps (a
/// shorter segment becomes one window) and every window into K single-grid
/// point sequences.
pub fn build_sequences(ds: &ResidualDataset, seq_len: usize) -> Vec<Sequence> {
    let k = ds.k;
    let mut out = Vec::new();
    for seg in &ds.segments {
        let starts: Vec<(usize, usize)> = if seg.len >= seq_len {
            (0..seg.len / seq_len).map(|w| (seg.start + w * seq_len, seq_len)).collect()
        } else {
            vec![(seg.start, seg.len)]
        };
        for (s, n) in starts {
            for i in 0..k {
                out.push(Sequence {
                    x: (s..s + n).map(|t| ds.x_inputs[t * k + i]).collect(),
                    r_hat: (s..s + n).map(|t| ds.r_targets[t * k + i]).collect(),
                });
            }
        }
    }
    out
}

/// Glorot initialization standardized on the training data, with the noise
/// scale set to the spread of the observed forcing.
pub fn initial_model(train: &ResidualDataset, cfg: &TrainConfig) -> Result<RnnModel> {
    let norm = train.norm_stats();
    RnnModel::random(cfg.arch.clone(), norm, train.dt, train.dominant_forcing(), norm.r_sd, cfg.seed)
}

pub fn train_rnn(train: &ResidualDataset, valid: &ResidualDataset, cfg: &TrainConfig) -> Result<TrainOutcome> {
    train_rnn_with(train, valid, cfg, None, &mut |_| {})
}

/// Minibatch Adam on the exact negative log-likelihood. Each epoch visits
/// every window once in a seed-determined order; the hidden state is reset at
/// the start of each window. `on_epoch` sees each log line as it is produced.
pub fn train_rnn_with(
    train: &ResidualDataset,
    valid: &ResidualDataset,
    cfg: &TrainConfig,
    resume: Option<TrainCheckpoint>,
    on_epoch: &mut dyn FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train.k != valid.k || (train.dt - valid.dt).abs() > 1e-12 {
        return Err(Error::Shape("training and validation data differ in K or dt".into()));
    }
    let train_seqs = build_sequences(train, cfg.seq_len);
    let valid_seqs = build_sequences(valid, cfg.seq_len);
    if train_seqs.is_empty() || valid_seqs.is_empty() {
        return Err(Error::InsufficientData("no training or validation windows".into()));
    }
    let mut ck = match resume {
        Some(ck) => {
            if ck.model.arch != cfg.arch {
                return Err(Error::Config("checkpoint architecture differs from config".into()));
            }
            ck
        }
        None => {
            let model = initial_model(train, cfg)?;
            let n = model.params.n_params();
            TrainCheckpoint {
                best: model.clone(),
                model,
                best_valid: f64::INFINITY,
                adam: AdamState::new(n),
                next_epoch: 0,
                log: Vec::new(),
            }
        }
    };
    let clock = Instant::now();
    let elapsed0 = ck.log.last().map_or(0.0, |r| r.wall_time);
    let mut order: Vec<usize> = (0..train_seqs.len()).collect();
    for epoch in ck.next_epoch..cfg.epochs {
        let lr = cfg.lr_schedule.rate(epoch);
        let mut rng = RngStream::new(cfg.seed, 1_000 + epoch as u64);
        order.sort_unstable();
        rng.shuffle(&mut order);
        let mut loss_sum = 0.0;
        let mut terms = 0usize;
        for chunk in order.chunks(cfg.batch) {
            let batch: Vec<Sequence> = chunk.iter().map(|&i| train_seqs[i].clone()).collect();
            let (loss, grad) = rnn_grad(&batch, &ck.model);
            let gflat = grad.to_flat();
            if !loss.is_finite() || gflat.iter().any(|g| !g.is_finite()) {
                return Err(Error::Diverged { epoch, loss });
            }
            let n: usize = batch.iter().map(Sequence::len).sum();
            loss_sum += loss * n as f64;
            terms += n;
            let mut flat = ck.model.params.to_flat();
            adam_update(&mut flat, &gflat, &mut ck.adam, lr, &cfg.adam);
            ck.model.params.set_flat(&flat);
        }
        let train_loss = loss_sum / terms as f64;
        let valid_loss = batch_loss(&valid_seqs, &ck.model);
        if !valid_loss.is_finite() || ck.model.params.to_flat().iter().any(|v| !v.is_finite()) {
            return Err(Error::Diverged { epoch, loss: valid_loss });
        }
        if valid_loss < ck.best_valid {
            ck.best_valid = valid_loss;
            ck.best = ck.model.clone();
        }
        let rec = EpochRecord { epoch, train_loss, valid_loss, lr, wall_time: elapsed0 + clock.elapsed().as_secs_f64() };
        on_epoch(&rec);
        ck.log.push(rec);
        ck.next_epoch = epoch + 1;
    }
    Ok(TrainOutcome { best: ck.best.clone(), log: ck.log.clone(), checkpoint: ck })
}
