use alloc::string::String;

/// Failures reported by the numerical routines.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("matrix of layer {layer} is not positive definite after jitter escalation")]
    Factorization { layer: usize },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("non-finite objective: {0}")]
    NonFinite(String),
    #[error("{0}")]
    Partition(String),
}

pub type Result<T> = core::result::Result<T, Error>;

macro_rules! bail {
    ($kind:ident, $($arg:tt)*) => {
        return Err($crate::Error::$kind(alloc::format!($($arg)*)))
    };
}
pub(crate) use bail;
