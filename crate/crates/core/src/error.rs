use thiserror::Error;

/// Errors produced by the simulation, fitting and evaluation layers.
#[derive(Debug, Error)]
pub enum Error {
    /// A state component exceeded the blow-up threshold or became non-finite.
    #[error("numerical blow-up at t = {time} MTU (component {index} = {value})")]
    BlowUp { time: f64, index: usize, value: f64 },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("singular system: {0}")]
    Singular(String),

    #[error("training diverged at epoch {epoch}: loss {loss}")]
    Diverged { epoch: usize, loss: f64 },

    #[error("invalid file format: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
