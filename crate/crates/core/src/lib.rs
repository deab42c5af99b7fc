//! Indoor contaminant source localization: a multizone airflow/transport
//! simulator with one grid-resolved zone, Gaussian-process emulators of its
//! transient output, and Metropolis–Hastings inference over source scenarios.

pub mod emulator;
pub mod error;
pub mod harness;
pub mod inference;
pub mod linalg;
pub mod cfdzone;
pub mod netflow;
pub mod scenario;
pub mod sensornet;
pub mod simulator;

pub use error::{Error, Result};
