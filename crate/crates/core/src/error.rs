use alloc::string::String;

/// Errors raised by the numerical core.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch in {context}: expected {expected}, got {actual}")]
    ShapeMismatch {
        context: &'static str,
        expected: String,
        actual: String,
    },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("patch of size {size} does not fit in a {height}x{width} image")]
    PatchTooLarge {
        size: usize,
        height: usize,
        width: usize,
    },
    #[error("requested {requested} images but the dataset holds {available}")]
    NotEnoughImages { requested: usize, available: usize },
    #[error("spectrum is not conjugate-symmetric (residual {0:e}); cannot produce a real grid")]
    NotHermitian(f64),
    #[error("queue capacity {capacity} is smaller than the pushed batch of {batch}")]
    QueueOverflow { capacity: usize, batch: usize },
    #[error("negative queue is empty")]
    EmptyQueue,
    #[error("image of {height}x{width} is smaller than the {window}x{window} window")]
    ImageTooSmall {
        height: usize,
        width: usize,
        window: usize,
    },
}

pub type Result<T, E = Error> = core::result::Result<T, E>;

pub(crate) fn shape_err(
    context: &'static str,
    expected: impl core::fmt::Debug,
    actual: impl core::fmt::Debug,
) -> Error {
    Error::ShapeMismatch {
        context,
        expected: alloc::format!("{expected:?}"),
        actual: alloc::format!("{actual:?}"),
    }
}
