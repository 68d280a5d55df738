use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AutodiffError {
    #[error("{op}: incompatible shapes {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: invalid argument: {detail}")]
    InvalidArgument { op: &'static str, detail: String },
    #[error("shape {shape:?} does not hold {len} elements")]
    ElementCount { shape: Vec<usize>, len: usize },
    #[error("{op}: non-finite output for input of shape {shape:?}")]
    NonFinite { op: &'static str, shape: Vec<usize> },
    #[error("grad: output must be scalar, got shape {0:?}")]
    NotScalar(Vec<usize>),
}

pub type Result<T, E = AutodiffError> = std::result::Result<T, E>;
