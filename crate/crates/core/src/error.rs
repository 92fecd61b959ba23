use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dense assembly of {cols} columns exceeds the cap of {cap}")]
    TooLarge { cols: usize, cap: usize },

    #[error("power iteration did not converge after {iterations} iterations (last estimate {estimate})")]
    NotConverged { estimate: f64, iterations: usize },

    #[error("iterate diverged at iteration {iteration}")]
    Diverged { iteration: usize },

    #[error("bound is vacuous: alpha = {alpha} >= 1")]
    BoundVacuous { alpha: f64 },

    #[error("empirical mean {mean} exceeds bound {bound} at iteration {iteration}")]
    BoundViolated {
        iteration: usize,
        mean: f64,
        bound: f64,
    },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}

pub(crate) fn check_len(context: &'static str, expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            context,
            expected,
            found,
        })
    }
}
