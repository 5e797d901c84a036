use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid system parameters: {0}")]
    InvalidSystem(String),

    #[error("invalid tuning: {0}")]
    InvalidTuning(String),

    #[error("invalid workload: {0}")]
    InvalidWorkload(String),

    #[error("infeasible search bounds: {0}")]
    Infeasible(String),

    #[error("capacity exceeded: {0}")]
    Capacity(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("numeric failure: {0}")]
    Numeric(String),
}

impl Error {
    /// True for errors caused by memory or capacity limits rather than bad input.
    pub fn is_infeasible(&self) -> bool {
        matches!(self, Error::Infeasible(_) | Error::Capacity(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
