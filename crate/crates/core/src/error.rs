use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("unknown geometry `{0}`")]
    UnknownGeometry(String),

    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("cell {cell:?}: the interface crosses a cell edge more than once")]
    MultiCut { cell: [usize; 3] },

    #[error("quadrature did not resolve the interface near {near:?} (depth cap {depth})")]
    Quadrature { near: [f64; 3], depth: usize },

    #[error("region has zero measure")]
    ZeroMeasure,

    #[error(
        "rank-deficient stencil system for {location}: {rows} rows, {monomials} monomials, rank {rank}"
    )]
    RankDeficient {
        location: String,
        rows: usize,
        monomials: usize,
        rank: usize,
    },

    #[error("size mismatch: expected {expected}, got {got}")]
    SizeMismatch { expected: usize, got: usize },

    #[error("GMRES stopped after {iterations} iterations at relative residual {residual:.3e}")]
    NoConvergence {
        iterations: usize,
        residual: f64,
        best: Vec<f64>,
    },

    #[error("eigensolver did not converge: {0}")]
    Eigen(String),

    #[error("unknown manufactured solution `{0}`")]
    UnknownSolution(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("matrix market: {0}")]
    MatrixMarket(String),

    #[error("{stage} failed ({context}): {source}")]
    Stage {
        stage: &'static str,
        context: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn at_stage(self, stage: &'static str, context: impl Into<String>) -> Error {
        Error::Stage {
            stage,
            context: context.into(),
            source: Box::new(self),
        }
    }
}
