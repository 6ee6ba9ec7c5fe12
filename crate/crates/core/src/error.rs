use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("device {id} cannot meet the round deadline")]
    InfeasibleDevice { id: usize },

    #[error("scheduled set does not fit in the available bandwidth: {0}")]
    InfeasibleSet(String),

    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    #[error("alternating optimisation did not converge within {iterations} iterations")]
    ConvergenceFailure { iterations: usize },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("invalid data: {0}")]
    Data(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn domain(msg: impl Into<String>) -> Error {
    Error::Domain(msg.into())
}
