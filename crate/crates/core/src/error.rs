use std::io;

/// Errors produced anywhere in the simulation pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Tensor or matrix shapes do not line up.
    #[error("dimension error: {0}")]
    Dimension(String),
    /// A caller violated an operation precondition.
    #[error("contract error: {0}")]
    Contract(String),
    /// A forward value became NaN or infinite.
    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },
    /// Invalid or inconsistent configuration.
    #[error("config error: {0}")]
    Config(String),
    /// A binary file is malformed; `field` names the offending header field or record.
    #[error("format error in field `{field}`: {reason}")]
    Format { field: String, reason: String },
    /// Training diverged.
    #[error("non-finite loss at step {step} (tau={tau}, snr_db={snr_db})")]
    Diverged { step: u64, tau: f64, snr_db: f64 },
    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn format(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Format {
            field: field.into(),
            reason: reason.into(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
