use thiserror::Error;

/// Errors raised by model construction, enumeration and the experiment drivers.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("model must have at least one spin")]
    EmptyModel,

    #[error("spin index {index} out of range for a model with {num_spins} spins")]
    IndexOutOfRange { index: usize, num_spins: usize },

    #[error("self-coupling on spin {0}")]
    SelfCoupling(usize),

    #[error("duplicate coupling between spins {0} and {1}")]
    DuplicateCoupling(usize, usize),

    #[error("expected {expected} local fields, got {got}")]
    FieldCount { expected: usize, got: usize },

    #[error("non-finite parameter: {0}")]
    NonFinite(&'static str),

    #[error("configuration has {got} spins but the model has {expected}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("spin value {0} is not -1 or +1")]
    InvalidSpin(i64),

    #[error("{states_log2} spins exceed the enumeration cap of 2^{cap_log2} states")]
    TooLarge { states_log2: usize, cap_log2: u32 },

    #[error("table over {chains} chains exceeds the supported maximum of {max}")]
    TableTooLarge { chains: usize, max: usize },

    #[error("chain length must be at least 1")]
    InvalidChainLength,

    #[error("chain coupling must be ferromagnetic (negative), got {0}")]
    NonFerromagneticChain(f64),

    #[error("chain {0} is broken")]
    BrokenChain(usize),

    #[error("embedding does not match model: {0}")]
    EmbeddingMismatch(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("distribution support mismatch: {0}")]
    SupportMismatch(String),

    #[error("singular fit: {0}")]
    SingularFit(String),

    #[error("parse error on line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
