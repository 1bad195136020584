use alloc::string::String;

use crate::category::Category;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    /// A precondition on a numeric argument was violated.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("bin index ({i}, {j}) out of range 1..={nkr}")]
    IndexOutOfRange { i: usize, j: usize, nkr: usize },

    /// An explicit update would have driven a bin density negative.
    #[error("stiffness: {category} bin {bin} would become {value:e} in substep {substep}")]
    Stiffness {
        category: Category,
        bin: usize,
        value: f64,
        substep: usize,
    },

    /// Stiffness error tagged with the grid point it occurred at.
    #[error("at grid point (i={i}, k={k}, j={j}): {source}")]
    AtPoint {
        i: i64,
        k: i64,
        j: i64,
        #[source]
        source: alloc::boxed::Box<Error>,
    },

    #[error("failed to allocate {bytes} bytes of scratch storage")]
    Allocation { bytes: u128 },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("non-finite input: {0}")]
    NonFinite(f64),

    #[error("duplicate phase name {0:?}")]
    DuplicatePhase(String),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    /// Strips grid-point context, returning the underlying error.
    pub fn root(&self) -> &Error {
        match self {
            Error::AtPoint { source, .. } => source.root(),
            other => other,
        }
    }
}
