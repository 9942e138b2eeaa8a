use thiserror::Error;

/// Errors shared by every module of the crate.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid rotation: {0}")]
    InvalidRotation(String),

    #[error("out of domain: {0}")]
    OutOfDomain(String),

    #[error("singular configuration: {0}")]
    Singularity(String),

    #[error("unsupported multipole order (n, m) = ({n}, {m})")]
    UnsupportedOrder { n: usize, m: usize },

    #[error("unsupported case: {0}")]
    UnsupportedCase(String),

    #[error("delta {delta} is not below the connectivity threshold {delta0}")]
    UnsupportedDelta { delta: f64, delta0: f64 },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("non-finite function value: {0}")]
    Evaluation(String),

    #[error("ill-posed resolvent: {0}")]
    IllPosedResolvent(String),

    #[error("resolution cap reached: achieved bound {achieved} exceeds requested {requested}")]
    ResolutionExceeded { achieved: f64, requested: f64 },

    #[error("surgery failed: {0}")]
    Surgery(String),

    #[error("construction failed: {0}")]
    Construction(String),
}

impl Error {
    /// Stable machine-readable tag for each variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidInput(_) => "invalid-input",
            Error::InvalidRotation(_) => "invalid-rotation",
            Error::OutOfDomain(_) => "out-of-domain",
            Error::Singularity(_) => "singularity",
            Error::UnsupportedOrder { .. } => "unsupported-order",
            Error::UnsupportedCase(_) => "unsupported-case",
            Error::UnsupportedDelta { .. } => "unsupported-delta",
            Error::Precondition(_) => "precondition",
            Error::Evaluation(_) => "evaluation",
            Error::IllPosedResolvent(_) => "ill-posed-resolvent",
            Error::ResolutionExceeded { .. } => "resolution-exceeded",
            Error::Surgery(_) => "surgery-failure",
            Error::Construction(_) => "construction-failure",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
