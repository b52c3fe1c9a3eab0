use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("structure contains no C-alpha atoms")]
    EmptyStructure,

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("atoms {0} and {1} coincide; bond direction is undefined")]
    CoincidentAtoms(usize, usize),

    #[error("atom {atom}: coordinate {value} does not fit in {bits}-bit fixed point")]
    FixedPointOverflow { atom: usize, value: f64, bits: u32 },

    #[error("duplicate data-loader index {0}")]
    IndexCollision(usize),

    #[error("gate {0} is not a classical permutation gate")]
    NonClassicalGate(String),

    #[error("zero-energy initial condition cannot be amplitude encoded")]
    ZeroEnergy,

    #[error("encoded state is not in the range of the incidence factor (residual {residual:.3e})")]
    CorruptedEncoding { residual: f64 },

    #[error("rejection sampler exhausted its counter block after {attempts} attempts")]
    RejectionLimit { attempts: usize },

    #[error("covariance routes disagree: relative difference {0:.3e}")]
    RouteDisagreement(f64),

    #[error("system is not stabilizable: found {found} stable eigenvalues, need {needed}")]
    Unstabilizable { found: usize, needed: usize },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
