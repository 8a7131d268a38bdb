use ndarray::Array1;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid problem spec: {0}")]
    InvalidSpec(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("objective {objective} evaluated to a non-finite value")]
    DomainEvaluation { objective: usize },

    #[error("simplex QP did not reach tolerance: residual {residual:.3e} after {iterations} iterations")]
    Convergence {
        best: Array1<f64>,
        residual: f64,
        iterations: usize,
    },

    #[error("backtracking exceeded {0} doublings")]
    RunawayBacktracking(usize),

    #[error("no start reached the reference residual bar")]
    EmptyReference,

    #[error("invalid flow state: {0}")]
    InvalidState(String),

    #[error("flow integration blew up at t = {t}")]
    BlowUp { t: f64 },

    #[error("iteration {iteration}: {source}")]
    Solver {
        iteration: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn at_iteration(self, iteration: usize) -> Self {
        match self {
            e @ Error::Solver { .. } => e,
            e => Error::Solver {
                iteration,
                source: Box::new(e),
            },
        }
    }
}
