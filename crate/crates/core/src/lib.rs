pub mod dynamics;
pub mod error;
pub mod evaluation;
pub mod io;
pub mod models;
pub mod par;
pub mod stochastic;
pub mod training;

pub use error::{Error, Result};
