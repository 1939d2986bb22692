use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("{what}: expected length {expected}, got {got}")]
    LengthMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("index {index} out of range 1..={len}")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("unidentifiable: {0}")]
    Unidentifiable(String),

    #[error("regressor column {column} is linearly dependent on the preceding columns")]
    RankDeficient { column: usize },

    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("invalid profile geometry: {0}")]
    Geometry(String),

    #[error("no feasible incumbent found: {0}")]
    NoFeasibleIncumbent(String),

    #[error("node budget exhausted: {0}")]
    BudgetExhausted(String),

    #[error("linear program failed: {0}")]
    Lp(String),
}

pub(crate) fn check_len(what: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::LengthMismatch {
            what,
            expected,
            got,
        })
    }
}
