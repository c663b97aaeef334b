use std::path::PathBuf;

use thiserror::Error;

/// Grid node index `(i, j)`: `i` runs along x₁, `j` along x₂.
pub type Node = (usize, usize);

#[derive(Debug, Error)]
pub enum LmaError {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("gridtxt parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("potential is not convex: {count} interior nodes with indefinite Hessian or failed midpoint test (first {first:?})")]
    NonConvex { count: usize, first: Option<Node> },

    #[error("det D²φ leaves [{lo}, {hi}] at {} nodes", nodes.len())]
    DetOutOfBounds { lo: f64, hi: f64, nodes: Vec<Node> },

    #[error("section is empty at height {h}: below grid resolution")]
    EmptySection { h: f64 },

    #[error("section at height {h} touches the domain boundary")]
    SectionNotInterior { h: f64 },

    #[error("forward map not monotone on slice j={row}")]
    NotMonotone { row: usize },

    #[error("image too small: inscribed radius {delta} below one grid cell {cell}")]
    DegenerateImage { delta: f64, cell: f64 },

    #[error("{count} target nodes lie outside the image (first {first:?})")]
    OutsideImage { count: usize, first: Option<Node> },

    #[error("transformed coefficient leaves [{lo}, {hi}] at {} nodes", nodes.len())]
    EllipticityViolated { lo: f64, hi: f64, nodes: Vec<Node> },

    #[error("system is singular: {0}")]
    SingularSystem(String),

    #[error("conjugate gradient stalled after {iterations} iterations (relative residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("Hessian not SPD at {} nodes", nodes.len())]
    NotSpd { nodes: Vec<Node> },

    #[error("iteration exponent beta = {0} must exceed 1")]
    BetaNotAboveOne(f64),

    #[error("F = 0 and f = 0 but sup u exceeds boundary sup by {excess:e}")]
    DegenerateDenominator { excess: f64 },

    #[error("zero Φ-energy: u vanishes identically")]
    ZeroEnergy,

    #[error("solution of the homogeneous problem is not positive at {} nodes", nodes.len())]
    NonPositiveSolution { nodes: Vec<Node> },

    #[error("log-log fit ill conditioned: {0}")]
    FitIllConditioned(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<LmaError>,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl LmaError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        LmaError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn in_stage(self, stage: &'static str) -> Self {
        LmaError::Stage {
            stage,
            source: Box::new(self),
        }
    }
}

pub type Result<T> = std::result::Result<T, LmaError>;
