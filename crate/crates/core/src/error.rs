//! Error type shared across the crate.

/// Residual score variance at or below this threshold is treated as zero:
/// the moment equation carries no information about the group effect.
pub const IDENTIFICATION_TOLERANCE: f64 = 1e-12;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Input violated a documented precondition.
    #[error("invalid input: {0}")]
    Validation(String),

    /// A nuisance function returned a non-finite value.
    #[error("nuisance function `{name}` returned a non-finite value at row {row}")]
    NuisanceEvaluation { name: &'static str, row: usize },

    /// The group effect is not identified: the estimated residual score
    /// variance is numerically zero, i.e. the score is (within tolerance)
    /// a deterministic function of the covariates.
    #[error(
        "not identified: residual score variance {v_star_hat:.3e} is at or below \
         {IDENTIFICATION_TOLERANCE:.0e}; the score carries no variation beyond the \
         covariates (p = r(X)), so the moment equation is uninformative"
    )]
    NotIdentified { v_star_hat: f64 },

    /// Normal equations could not be factorized.
    #[error("singular normal equations; refit with lambda > 0")]
    SingularSystem,

    /// A conditioning cell required by an estimator contained no rows.
    #[error("cell `{0}` is empty")]
    EmptyCell(&'static str),

    /// Numeric failure that is not an input error.
    #[error("computation failed: {0}")]
    Computation(String),
}

pub type Result<T> = std::result::Result<T, Error>;
