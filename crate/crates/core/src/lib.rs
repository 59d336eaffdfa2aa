pub mod checkpoint;
pub mod control;
pub mod error;
pub mod estimator;
pub mod experiment;
pub mod meanflow;
pub mod metrics;
pub mod mission;
pub mod pinn;
pub mod turbulence;
pub mod vehicle;

pub use error::{Error, Result};
