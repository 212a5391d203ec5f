use thiserror::Error;

/// Errors raised by the numerical pipeline.
///
/// Variants split into two families: precondition failures (resonance,
/// hyperbolicity, unsupported configurations) and numerical failures
/// (non-convergence, ill-conditioning). See [`Error::is_precondition`].
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("not hyperbolic: exponent {exponent:.6} lies within {tol} of zero")]
    NotHyperbolic { exponent: f64, tol: f64 },

    #[error("resonant triple (i={i}, k={k}, j={j}): lambda_i + lambda_k - lambda_j = {defect:.3e}")]
    Resonant { i: usize, k: usize, j: usize, defect: f64 },

    #[error("precondition failed: {0}")]
    Precondition(String),

    #[error("{what}: no convergence after {iterations} iterations (last change {last:.3e})")]
    NoConvergence { what: &'static str, iterations: usize, last: f64 },

    #[error("{what}: contraction failed (ratio {ratio:.3}); shrink the cut-off radius")]
    Contraction { what: &'static str, ratio: f64 },

    #[error("horizon too small: tail bound {bound:.3e} exceeds {tol:.3e}")]
    Horizon { bound: f64, tol: f64 },

    #[error("ill-conditioned: {0}")]
    IllConditioned(String),
}

impl Error {
    /// True for errors the CLI reports with exit status 2.
    pub fn is_precondition(&self) -> bool {
        matches!(
            self,
            Error::Invalid(_)
                | Error::NotHyperbolic { .. }
                | Error::Resonant { .. }
                | Error::Precondition(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
