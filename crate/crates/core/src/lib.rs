//! Explosive stochastic-volatility filtering, asymmetric GARCH-in-mean
//! benchmarks, volatility-risk factors and crisis-dummy contagion
//! regressions for daily equity returns.

pub mod config;
pub mod contagion;
pub mod diagnostics;
pub mod error;
pub mod esv;
pub mod factors;
pub mod garch;
pub mod halft;
pub mod ingest;
pub mod model;
pub mod optim;
pub mod pipeline;
pub mod rng;
pub mod simulate;

pub use error::{Error, Result};
pub use model::{FilterOutput, MeanEstimate, MeanModel, MeanModelSpec, VolRegressor};
