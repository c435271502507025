use thiserror::Error;

use crate::grid::BusId;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("duplicate bus id {0}")]
    DuplicateBus(BusId),
    #[error("line {line} references unknown bus {bus}")]
    DanglingLine { line: usize, bus: BusId },
    #[error("bus {0} is not connected to the slack bus")]
    Disconnected(BusId),
    #[error("series impedance of line {0} is singular")]
    SingularImpedance(usize),
    #[error("PMU placed at unknown bus {0}")]
    UnknownPmuBus(BusId),
    #[error("PMU set is empty")]
    EmptyPmuSet,
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("measurement matrix is rank deficient (rank {rank} < {states} states)")]
    Unobservable { rank: usize, states: usize },
    #[error("variance entry {index} is not strictly positive ({value:e})")]
    NonPositiveVariance { index: usize, value: f64 },
    #[error(
        "load flow did not converge after {iterations} iterations (last update {last_update:e} pu)"
    )]
    NonConvergence { iterations: usize, last_update: f64 },
    #[error("zero voltage at node {0} during load flow")]
    ZeroVoltage(usize),
    #[error("filter hypothesis violated: {0}")]
    Hypothesis(String),
    #[error("least-squares design matrix is rank deficient")]
    RankDeficient,
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },
    #[error("step {step}: {source}")]
    AtStep {
        step: usize,
        #[source]
        source: Box<Error>,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn at_step(self, step: usize) -> Self {
        Error::AtStep {
            step,
            source: Box::new(self),
        }
    }

    /// Process exit code used by the command line tool: 3 for violations of
    /// the numerical working hypotheses, 2 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::AtStep { source, .. } => source.exit_code(),
            Error::Unobservable { .. }
            | Error::NonConvergence { .. }
            | Error::ZeroVoltage(_)
            | Error::Hypothesis(_)
            | Error::RankDeficient => 3,
            _ => 2,
        }
    }
}
