use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("all feature directions fell below the drop tolerance")]
    DegenerateFeatures,
    #[error("state became non-finite at inner step {step}")]
    NumericalBlowup { step: u64 },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidInput(msg.into())
}
