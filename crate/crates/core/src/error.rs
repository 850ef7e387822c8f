use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("not positive semidefinite (smallest eigenvalue {min_eigenvalue:e})")]
    NotPositiveSemidefinite { min_eigenvalue: f64 },

    #[error("invalid Levy triplet: {0}")]
    InvalidTriplet(String),

    #[error("coefficient overflow at x = {x:?}")]
    CoefficientOverflow { x: Vec<f64> },

    #[error("rate negative at x = {x:?} (reaction {reaction})")]
    NegativeRate { x: Vec<f64>, reaction: usize },

    #[error("dimension mismatch for {what}: expected {expected}, found {found}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("matrix is singular")]
    SingularMatrix,

    #[error("non-finite entries in {0}")]
    NonFinite(&'static str),

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("shared simulation requires bit-identical driver triplets")]
    DriverMismatch,

    #[error("embedding defined only for constant interventions")]
    NonConstantEmbedding,

    #[error("interventions on the integrators are not supported (target Z{})", .0 + 1)]
    IntegratorIntervention(usize),

    #[error("post-intervention graph is not a DAG")]
    NotADag,

    #[error("intervened reversion matrix singular; no OU closed form (condition estimate {condition:e})")]
    SingularReducedReversion { condition: f64 },

    #[error("declared signature misses probed edge {from}->{to}")]
    SignatureViolation { from: usize, to: usize },

    #[error(transparent)]
    Parse(#[from] crate::expr::ParseError),

    #[error("empty sample")]
    EmptySample,

    #[error("sample too small: need at least {needed}, found {found}")]
    InsufficientSample { needed: usize, found: usize },

    #[error("unknown builtin system `{0}`")]
    UnknownBuiltin(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}
