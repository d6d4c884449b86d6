//! Exact likelihoods of both surrogates, polynomial fitting, and
//! maximum-likelihood training of the recurrent model.
//!
//! Both surrogates write `x_{t+1} = f(x_t) - dt * u_{t+1}`, so the observed
//! sub-grid forcing `u_{t+1} = (x_t + omega(x_t) - x_{t+1}) / dt` is a
//! deterministic, invertible function of consecutive states. The density of a
//! trajectory is therefore the density of the forcing sequence times the
//! Jacobian `dt^{-K n}`.

mod adam;
mod grad;
mod likelihood;
mod polyfit;
mod residuals;
mod train;

pub use adam::{adam_update, AdamHyper, AdamState};
pub use grad::{batch_loss, rnn_grad, sequence_loss_grad, Sequence};
pub use likelihood::{
    gaussian_logpdf, loglik_poly, loglik_rnn, window_profile, LogLik, Likelihood, StepLogDensities,
};
pub use polyfit::{fit_polynomial, PolyFit};
pub use residuals::{extract_residuals, ResidualDataset, Segment};
pub use train::{
    build_sequences, initial_model, train_rnn, train_rnn_with, EpochRecord, LrSchedule, TrainCheckpoint, TrainConfig,
    TrainOutcome,
};
