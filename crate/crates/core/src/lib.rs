//! Simulation of parallel quantum-enhanced sensing with multi-spatial-mode
//! twin beams probing a quadrant array of plasmonic sensors.

pub mod analysis;
pub mod detection;
pub mod error;
pub mod experiment;
pub(crate) mod lm;
pub mod montecarlo;
pub mod optics;
pub mod plasmonic;
pub mod report;
pub mod scenario;
pub mod source;
pub mod units;

pub use error::{Error, Result};
