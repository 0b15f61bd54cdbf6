use thiserror::Error;

/// Errors raised by the numerical routines.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("divergent integral: {0}")]
    DivergentIntegral(String),
    #[error("quadrature failed to converge: {0}")]
    Quadrature(String),
    #[error("jump measure has no mass above eps = {eps}")]
    ZeroTail { eps: f64 },
    #[error("unsupported measure: {0}")]
    UnsupportedMeasure(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("infeasible certificate constants: {0}")]
    Infeasible(String),
    #[error("degenerate fit: {0}")]
    DegenerateFit(String),
    #[error("expression error: {0}")]
    Expr(String),
}

impl Error {
    /// True for failures that arise during computation rather than from bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::DivergentIntegral(_)
                | Error::Quadrature(_)
                | Error::ZeroTail { .. }
                | Error::Infeasible(_)
                | Error::DegenerateFit(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidParameter(msg.into()))
}
