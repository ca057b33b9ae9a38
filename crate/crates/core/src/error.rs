use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("degenerate covariance: largest eigenvalue {max_eigenvalue:e} is not above the floor {floor:e}")]
    DegenerateCovariance { max_eigenvalue: f64, floor: f64 },

    #[error("degenerate channel {channel}: variance {variance:e} is effectively zero")]
    DegenerateChannel { channel: usize, variance: f64 },

    #[error("ill-conditioned matrix: condition estimate {condition:e}")]
    IllConditioned { condition: f64 },

    #[error("divergence at {at}: weight norm {norm:e} exceeded {limit:e}")]
    Divergence { at: String, norm: f64, limit: f64 },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("format error at byte offset {offset}: {message}")]
    Format { offset: u64, message: String },

    #[error("unsupported encoding: {0}")]
    UnsupportedEncoding(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    /// True for failures of the numerics rather than of the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::DegenerateCovariance { .. }
                | Error::IllConditioned { .. }
                | Error::Divergence { .. }
                | Error::DegenerateChannel { .. }
        )
    }
}
