//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// The weighted Gram matrix of a least-squares solve is rank deficient
    /// beyond tolerance. `context` identifies the offending solve (round or
    /// component index).
    #[error("rank-deficient least-squares system in {context} (sigma_min/sigma_max = {ratio:.3e})")]
    DegenerateSystem { context: String, ratio: f64 },

    /// Threshold adaptation ran out of room: the weight threshold reached its
    /// cap or the restart budget was exhausted before every component had
    /// enough poor-fit samples to continue.
    #[error(
        "threshold adaptation exhausted after {restarts} restarts (w_th = {final_w_th}, \
         starved at round {round} with {poor_fit} poor-fit samples, needed {needed})"
    )]
    ThresholdExhausted {
        restarts: usize,
        final_w_th: f64,
        round: usize,
        poor_fit: usize,
        needed: usize,
    },

    /// Not enough samples to estimate even one component (or a labelled
    /// component is smaller than the dimension).
    #[error("insufficient data: {0}")]
    InsufficientData(String),

    /// An EM mixture weight collapsed below 1/n.
    #[error("component {component} collapsed (mixing proportion {proportion:.3e} < 1/n)")]
    DegenerateComponent { component: usize, proportion: f64 },

    /// Gradient descent diverged; suggests a smaller step size.
    #[error(
        "gradient descent diverged at iteration {iteration} (loss {loss:.3e} > 1e6 x initial); \
         try a smaller step size"
    )]
    Diverged { iteration: usize, loss: f64 },

    /// The analysis variant found an empty sample subset and would need
    /// threshold adaptation; it never restarts on its own.
    #[error("empty subset {subset} in the norm-bounded variant; raise w_th and retry")]
    EmptySubset { subset: String },

    /// The response vector is constant, so the variance-normalized data fit
    /// is undefined.
    #[error("response variance is zero")]
    ZeroVariance,

    /// Convergence cannot be judged against an all-zero model.
    #[error("convergence indeterminate: current model is identically zero")]
    Indeterminate,

    /// The admissible w_th interval is empty for these inputs.
    #[error("admissible w_th interval is empty (lo = {lo:.6} >= hi = {hi:.6})")]
    EmptyRange { lo: f64, hi: f64 },

    /// A guarantee-side quantity is undefined for these inputs.
    #[error("inapplicable: {0}")]
    Inapplicable(String),

    /// Model/data shapes do not line up.
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// A mixture or solver configuration violates its invariants.
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    /// A column could not be used by the ingestion pipeline.
    #[error("column '{column}' {reason}")]
    BadColumn { column: String, reason: String },

    /// Requested dataset is not in the registry.
    #[error("unknown dataset '{0}'")]
    UnknownDataset(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
