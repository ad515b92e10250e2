use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, LabError>;

#[derive(Debug, Error)]
pub enum LabError {
    #[error("unsupported dimension {0}: only d = 1 and d = 2 are implemented")]
    Dimension(usize),
    #[error("invalid cube: {0}")]
    Cube(String),
    #[error("invalid grid: {0}")]
    Grid(String),
    #[error("grid mismatch: {0}")]
    GridMismatch(String),
    #[error("non-finite sample at point {point:?}")]
    NonFinite { point: Vec<f64> },
    #[error("dyadic generation cap exceeded: requested {requested}, cap {cap}")]
    GenerationCap { requested: usize, cap: usize },
    #[error("cube is not aligned with grid cells: {0}")]
    NotAligned(String),
    #[error("cube too small for the grid: {cells} cells, need at least {min}")]
    CubeTooSmall { cells: usize, min: usize },
    #[error("support escapes the grid box at point {point:?}")]
    SupportEscape { point: Vec<f64> },
    #[error("grid too coarse: {0}")]
    TooCoarse(String),
    #[error("invalid bump: {0}")]
    Bump(String),
    #[error("unknown kernel `{0}`")]
    UnknownKernel(String),
    #[error("kernel parameter error: {0}")]
    KernelParam(String),
    #[error("arity mismatch: {0}")]
    Arity(String),
    #[error("invalid argument: {0}")]
    Invalid(String),
    #[error("fit needs at least {need} rows, got {got}")]
    TooFewRows { need: usize, got: usize },
    #[error("missing operator norm estimate for {0}")]
    MissingNorm(String),
    #[error("generation {k} outside certificate range {lo}..={hi}")]
    GenerationRange { k: i64, lo: i64, hi: i64 },
    #[error("mollifier width underflows the grid: {0}")]
    Underflow(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("csv error in {path}: {msg}")]
    Csv { path: PathBuf, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
