use thiserror::Error;

pub type Result<T> = std::result::Result<T, CliError>;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{path}:{line}: {message}")]
    Parse { path: String, line: usize, message: String },

    /// Missing file, missing matrix, inconsistent dimensions.
    #[error("{0}")]
    Input(String),

    #[error(transparent)]
    Core(#[from] frobenius_core::Error),

    #[error("{context}: {source}")]
    Output {
        context: String,
        #[source]
        source: std::io::Error,
    },
}

pub const EXIT_OK: u8 = 0;
pub const EXIT_INTERNAL: u8 = 1;
pub const EXIT_INPUT: u8 = 2;
pub const EXIT_DIVERGENCE: u8 = 3;

/// Exit code for a core error.
pub fn core_exit_code(e: &frobenius_core::Error) -> u8 {
    use frobenius_core::Error::*;
    match e {
        InvalidInput(_) | NotComplementary(_) | DegenerateSplit | OutOfBall { .. } | NoInverseInBall | NeedsSplitting
        | NotCofinal { .. } | NotInS | InvalidDirection { .. } | NotRegular { .. } | Evaluation { .. } => EXIT_INPUT,
        InverseFailure { .. } | OutOfNeighborhood { .. } | AbortedLeaf { .. } | Divergence { .. } => EXIT_DIVERGENCE,
        Inconsistent(_) => EXIT_INTERNAL,
    }
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Parse { .. } | CliError::Input(_) => EXIT_INPUT,
            CliError::Core(e) => core_exit_code(e),
            CliError::Output { .. } => EXIT_INTERNAL,
        }
    }
}
