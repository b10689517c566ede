//! Time-causal variational autoencoder with a coupling-flow prior, plus the
//! tooling to judge what it generates: weak and adapted optimal-transport
//! metrics, path signatures, market simulators and stochastic-optimization
//! evaluators.

pub mod error;
pub mod flow;
pub mod metrics;
pub mod nn;
pub mod path_data;
pub mod rng;
pub mod simulators;
pub mod stoch_opt;
pub mod tcvae;

pub use error::{Error, Result};
pub use path_data::{NormScheme, NormalizationRecord, PathSet};
