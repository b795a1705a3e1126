use std::fmt;
use std::path::PathBuf;

use cwct_core::{ConfigError, ModelError, Violation};

/// What went wrong inside a binary or text file.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Problem {
    BadMagic { expected: [u8; 4], found: [u8; 4] },
    UnsupportedVersion(u32),
    Truncated { needed: usize, available: usize },
    ShapeOverflow,
    NameTooLong(usize),
    NotAscii,
    DuplicateName(String),
    TrailingBytes(usize),
    MissingEntry,
    WrongRank { expected: usize, found: usize },
    BadCursor,
    /// Unparseable text field.
    Syntax(String),
}

impl fmt::Display for Problem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Problem::BadMagic { expected, found } => {
                write!(f, "bad magic {:?}, expected {:?}", String::from_utf8_lossy(found), String::from_utf8_lossy(expected))
            }
            Problem::UnsupportedVersion(v) => write!(f, "unsupported version {v}"),
            Problem::Truncated { needed, available } => write!(f, "truncated: need {needed} bytes, {available} left"),
            Problem::ShapeOverflow => write!(f, "size does not fit the format"),
            Problem::NameTooLong(n) => write!(f, "name of {n} bytes exceeds 65535"),
            Problem::NotAscii => write!(f, "name is not ASCII"),
            Problem::DuplicateName(n) => write!(f, "duplicate tensor `{n}`"),
            Problem::TrailingBytes(n) => write!(f, "{n} unexpected trailing bytes"),
            Problem::MissingEntry => write!(f, "entry missing"),
            Problem::WrongRank { expected, found } => write!(f, "rank {found}, expected {expected}"),
            Problem::BadCursor => write!(f, "cursor must be one small nonnegative integer"),
            Problem::Syntax(s) => write!(f, "{s}"),
        }
    }
}

/// A malformed file, located by byte offset and field.
#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
#[error("byte {offset}, {field}: {problem}")]
pub struct FormatError {
    pub offset: usize,
    pub field: String,
    pub problem: Problem,
}

impl FormatError {
    pub fn new(offset: usize, field: impl Into<String>, problem: Problem) -> Self {
        Self { offset, field: field.into(), problem }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Format { path: PathBuf, source: FormatError },
    #[error("{path}, line {line}: {source}")]
    ConfigFile { path: PathBuf, line: usize, source: ConfigError },
    #[error("invalid config:{}", list(.0))]
    Violations(Vec<Violation>),
    #[error("{0}")]
    Config(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("{0}")]
    Dimension(String),
    #[error("{0}")]
    Mismatch(String),
    /// A check ran to completion and did not pass; details were already
    /// reported.
    #[error("{0}")]
    Failed(String),
}

fn list(v: &[Violation]) -> String {
    v.iter().map(|v| format!("\n  {v}")).collect()
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::ConfigFile { .. } | CliError::Violations(_) | CliError::Config(_) => 2,
            CliError::Model(ModelError::InvalidConfig(_)) => 2,
            CliError::Dimension(_) => 3,
            CliError::Model(
                ModelError::Dimension { .. } | ModelError::ShapeMismatch { .. } | ModelError::MissingTensor(_),
            ) => 3,
            CliError::Mismatch(_) | CliError::Model(ModelError::NoScoredClass) => 4,
            _ => 1,
        }
    }
}
