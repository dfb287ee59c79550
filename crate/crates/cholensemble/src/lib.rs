//! Ensemble covariance estimation built on regression-based Cholesky
//! factorizations.
//!
//! For a fixed ordering of the variables, the covariance matrix factors as
//! `Sigma = L * D * L'` where row `j` of the unit lower-triangular `L` holds
//! the coefficients from regressing variable `j` on the residuals of the
//! variables placed before it, and `D` holds the residual variances.
//! Penalizing those regressions keeps the estimate well conditioned when `p`
//! is close to `n`, but makes it depend on the (arbitrary) ordering. The
//! estimators here average the per-ordering estimates over many random
//! orderings, with weights chosen by a quadratic program over the
//! probability simplex that targets the Frobenius risk of the average.
//!
//! Module map:
//! - [`linalg`]: dense symmetric-matrix primitives (eigen, LDL^T, permutation
//!   conjugation).
//! - [`mcd`]: the per-ordering factorization and its penalized regressions.
//! - [`simplex_qp`]: the simplex-constrained quadratic program shared by the
//!   weight optimization and the minimum-variance portfolio.
//! - [`ensemble`]: candidate construction, risk quadratic, weight selection.
//! - [`simlab`]: simulation scenarios, samplers, losses, experiment harness.
//! - [`portfolio`]: expanding-window minimum-variance backtest.
//! - [`format`]: number and CSV rendering shared by report writers.

pub mod ensemble;
pub mod format;
pub mod linalg;
pub mod mcd;
pub mod portfolio;
pub mod simlab;
pub mod simplex_qp;

mod rng;

/// Errors shared across the estimation pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A caller-supplied value violated a precondition.
    #[error("invalid input: {0}")]
    InvalidInput(String),
    /// A factorization hit a non-positive pivot.
    #[error("matrix is not positive definite (smallest pivot {smallest_pivot:e})")]
    NotPositiveDefinite { smallest_pivot: f64 },
    /// An iterative solver ran out of iterations; `last_iterate` holds the
    /// best point seen and `residual` its optimality violation.
    #[error("{context}: no convergence (residual {residual:e})")]
    ConvergenceFailure {
        context: String,
        residual: f64,
        last_iterate: Vec<f64>,
    },
    /// The feasible set of an optimization problem is empty.
    #[error("infeasible problem: {0}")]
    InfeasibleProblem(String),
    /// Every penalty level in the grid was skipped.
    #[error("no penalty level in the grid produced a usable estimate")]
    NoFeasibleXi,
    /// Context wrapper identifying the pipeline stage that failed.
    #[error("{stage}: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    /// Wraps an error with the pipeline stage it came from.
    pub fn in_stage(self, stage: impl Into<String>) -> Error {
        Error::Stage {
            stage: stage.into(),
            source: Box::new(self),
        }
    }

    /// The innermost error, unwrapping stage labels.
    pub fn root(&self) -> &Error {
        match self {
            Error::Stage { source, .. } => source.root(),
            other => other,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidInput(msg.into())
}

/// Validates that every value in `values` is finite.
pub(crate) fn check_finite(values: &[f64], what: &str) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(invalid(format!("{what} contains a non-finite value")))
    }
}
