//! Multi-cell slotted-Aloha access with NOMA/SIC decoding: simulation, exact
//! evaluation, distributed and centralized optimization of per-device
//! transmission probabilities.

pub mod baselines;
pub mod br;
pub mod channel;
pub mod env;
pub mod error;
pub mod harness;
pub mod icnn;
pub mod metrics;
pub mod oracle;
pub mod rng;
pub mod topology;

pub use error::{Error, Result};
