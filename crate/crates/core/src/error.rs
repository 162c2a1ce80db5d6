use alloc::string::String;

/// Errors produced by the simulation and detection routines.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    /// A configuration value is out of range.
    #[error("invalid configuration: {0}")]
    Config(String),
    /// Input shapes or values violate an operation's domain.
    #[error("domain error: {0}")]
    Domain(String),
    /// The requested exhaustive search is too large.
    #[error("instance too large: {0}")]
    Capacity(String),
    /// Training produced a non-finite loss.
    #[error("training diverged: {0}")]
    Training(String),
    /// A checkpoint does not match the model it is loaded into.
    #[error("checkpoint mismatch: {0}")]
    Checkpoint(String),
}

pub type Result<T> = core::result::Result<T, Error>;

macro_rules! bail {
    ($kind:ident, $($arg:tt)*) => {
        return Err($crate::Error::$kind(alloc::format!($($arg)*)))
    };
}
pub(crate) use bail;
