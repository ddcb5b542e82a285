//! Mixed linear regression (MLR) toolkit.
//!
//! Each observed response is generated by one of `K` unknown linear models.
//! This crate implements a sequential solver (`mix_irls`) that recovers the
//! components one at a time with robust-regression tools, the simultaneous
//! baselines it is usually compared against (`baselines`), the evaluation
//! metrics and stopping rules (`metrics`), closed-form quantities from the
//! two-component recovery guarantee (`theory`), CSV ingestion for real
//! datasets (`data_io`) and a declarative, seeded benchmark harness
//! (`bench`).

pub mod baselines;
pub mod bench;
pub mod data_io;
pub mod error;
pub mod lstsq;
pub mod metrics;
pub mod mix_irls;
pub mod model;
pub mod synth;
pub mod theory;

pub use error::{Error, Result};
pub use model::{BaselineConfig, Dataset, FitReport, MixtureSpec, MlrModel, SolverConfig};
