use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("duplicate mode label `{0}`")]
    DuplicateMode(String),
    #[error("mode sets overlap on `{0}`")]
    OverlappingModes(String),
    #[error("states have mismatched mode sets or photon counts")]
    MismatchedStates,
    #[error("state norm² {norm_sq} is not 1 within tolerance")]
    NotNormalized { norm_sq: f64 },
    #[error("state has no terms")]
    EmptyState,
    #[error("invalid ensemble weights: {0}")]
    InvalidWeights(String),
    #[error("invalid noise parameters: {0}")]
    InvalidNoiseParams(String),
    #[error("mode `{mode}` already occupied; element would collide photons")]
    ModeCollision { mode: String },
    #[error("element {index} failed: {source}")]
    ElementFailed {
        index: usize,
        #[source]
        source: Box<Error>,
    },
    #[error("mode `{0}` is not declared in the circuit")]
    UndeclaredMode(String),
    #[error("delay {delay} exceeds the enumerated maximum {max}")]
    DelayOverflow { delay: u32, max: u32 },
    #[error("assembled circuit matrix deviates from unitarity by {deviation}")]
    NonUnitary { deviation: f64 },
    #[error("internal consistency violation: {0}")]
    InternalConsistency(String),
    #[error("party count {0} outside supported range 2..={max}", max = crate::protocol::MAX_PARTIES)]
    PartiesOutOfRange(usize),
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit code for this error: 1 for configuration or input
    /// problems, 2 for engine-internal consistency failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_)
            | Error::InvalidNoiseParams(_)
            | Error::PartiesOutOfRange(_)
            | Error::Io(_) => 1,
            _ => 2,
        }
    }
}
