//! Error type shared by every module of the crate.

use crate::triangle::Cell;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("triangle has missing cells: {}", fmt_cells(.0))]
    MissingCell(Vec<Cell>),

    #[error("non-positive loss values: {}", fmt_valued(.0))]
    NonPositiveValue(Vec<(Cell, f64)>),

    #[error("payment triangle has J={payments} but incurred triangle has J={incurred}")]
    ShapeMismatch { payments: usize, incurred: usize },

    #[error("cells outside the upper-left triangle: {}", fmt_cells(.0))]
    OutOfTriangle(Vec<Cell>),

    #[error("duplicate cells: {}", fmt_cells(.0))]
    DuplicateCell(Vec<Cell>),

    #[error("terminal constraint violated: P(0,J)={payment} but I(0,J)={incurred}")]
    TerminalMismatch { payment: f64, incurred: f64 },

    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("invalid permutation: {0}")]
    InvalidPermutation(String),

    #[error("matrix is not symmetric positive definite: {0}")]
    NotSpd(String),

    #[error("empty block list")]
    EmptyList,

    #[error("observed block of the covariance is singular")]
    SingularObservedBlock,

    #[error("invalid index set: {0}")]
    InvalidIndex(String),

    #[error("invalid degrees of freedom k={k} for dimension p={p}")]
    InvalidDof { k: f64, p: usize },

    #[error("parameter out of domain: {0}")]
    ParamOutOfDomain(String),

    #[error("copula dimension {dim} exceeds the supported maximum {max}")]
    DimensionTooLarge { dim: usize, max: usize },

    #[error("copula argument on or outside the boundary of the unit cube: {0}")]
    BoundaryInput(f64),

    #[error("scale ordering violated at j={j}: nu^2={nu2} <= omega^2={omega2}")]
    ScaleOrderingViolated { j: usize, nu2: f64, omega2: f64 },

    #[error("whitening transform is singular")]
    SingularTransform,

    #[error("NaN passed to the acceptance step")]
    NanInput,

    #[error("at least two chains are required, got {0}")]
    InsufficientChains(usize),

    #[error("trace too short: need more than {need} values, got {got}")]
    TooShort { need: usize, got: usize },

    #[error("unknown trace column `{0}`")]
    UnknownName(String),

    #[error("configuration error in `{field}`: {msg}")]
    Config { field: String, msg: String },

    #[error("missing trace files in {0}")]
    MissingTrace(String),

    #[error("{path}:{line}: {msg}")]
    Parse { path: String, line: u64, msg: String },

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn config(field: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Config { field: field.into(), msg: msg.into() }
    }

    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io { path: path.as_ref().display().to_string(), source }
    }
}

fn fmt_cells(cells: &[Cell]) -> String {
    cells.iter().map(|c| c.to_string()).collect::<Vec<_>>().join(", ")
}

fn fmt_valued(cells: &[(Cell, f64)]) -> String {
    cells
        .iter()
        .map(|(c, v)| format!("{c}={v}"))
        .collect::<Vec<_>>()
        .join(", ")
}
