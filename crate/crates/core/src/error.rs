use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("point {x} lies outside {domain}")]
    Domain { x: f64, domain: &'static str },

    #[error("invalid parameter bounds [{min}, {max}] for family {family}: {reason}")]
    InvalidBounds {
        family: &'static str,
        min: f64,
        max: f64,
        reason: &'static str,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected} bins, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("masked-bin fraction {fraction:.4} exceeds the allowed {limit}")]
    MaskedOverflow { fraction: f64, limit: f64 },

    #[error("no partition cell has mass above the floor {floor}")]
    NoCellAboveFloor { floor: f64 },

    #[error("degenerate variance {0}: route the observable to the coboundary test")]
    DegenerateVariance(f64),

    #[error("inadmissible rate parameters: {0}")]
    InadmissibleRate(String),

    #[error("numerical failure: {0}")]
    Numeric(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit status: 2 for bad input, 3 for numerical failure, 4 for I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Domain { .. }
            | Error::InvalidBounds { .. }
            | Error::InvalidArgument(_)
            | Error::InadmissibleRate(_)
            | Error::Config(_) => 2,
            Error::DimensionMismatch { .. }
            | Error::MaskedOverflow { .. }
            | Error::NoCellAboveFloor { .. }
            | Error::DegenerateVariance(_)
            | Error::Numeric(_) => 3,
            Error::Io(_) => 4,
        }
    }
}
