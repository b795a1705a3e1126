use alloc::string::String;
use alloc::vec::Vec;

use crate::config::Violation;

/// Errors raised while assembling or driving a model.
#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum ModelError {
    #[error("invalid config: {} violation(s)", .0.len())]
    InvalidConfig(Vec<Violation>),
    #[error("missing tensor `{0}`")]
    MissingTensor(String),
    #[error("duplicate tensor `{0}`")]
    DuplicateTensor(String),
    #[error("tensor `{name}` has shape {found:?}, expected {expected:?}")]
    ShapeMismatch { name: String, expected: Vec<usize>, found: Vec<usize> },
    #[error("{what}: expected length {expected}, got {found}")]
    Dimension { what: &'static str, expected: usize, found: usize },
    #[error("the segmentation decoder is not present in these weights")]
    NoDecoder,
    #[error("shift {shift} must be below the window size {window}")]
    Shift { shift: usize, window: usize },
    #[error("no action class has both positives and a defined score")]
    NoScoredClass,
    #[error("malformed state snapshot: {0}")]
    Snapshot(&'static str),
}
