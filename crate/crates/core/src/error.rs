use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Errors surfaced by every module of the crate.
///
/// Each variant maps onto a stable machine-readable code (see [`Error::code`])
/// that the command-line front end reports verbatim.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("validation error: {0}")]
    Validation(String),

    #[error("chain {chain} failed at iteration {iteration}: {message}")]
    Chain {
        chain: usize,
        iteration: usize,
        message: String,
    },

    #[error("empty subpopulation: no retained subjects in arm T={treatment}")]
    EmptySubpopulation { treatment: u8 },

    #[error(
        "improper Dirichlet posterior in arm T={treatment}: category {category} has parameter {value}; use a proper prior (alpha0 > 0)"
    )]
    ImproperPosterior {
        treatment: u8,
        category: usize,
        value: f64,
    },

    #[error("elicitation error: {0}")]
    Elicitation(String),

    #[error("infeasible design: {reason} (n = {n}, achieved power = {power:.4})")]
    Infeasible { reason: String, n: u64, power: f64 },

    #[error("decision error: {0}")]
    Decision(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("ingestion error at row {row}, column '{column}': {message}")]
    Ingestion {
        row: usize,
        column: String,
        message: String,
    },

    #[error("i/o error: {0}")]
    Io(String),
}

impl Error {
    pub fn code(&self) -> &'static str {
        match self {
            Error::Config(_) => "E_CONFIG",
            Error::Validation(_) => "E_VALIDATION",
            Error::Chain { .. } => "E_CHAIN",
            Error::EmptySubpopulation { .. } => "E_EMPTY_SUBPOPULATION",
            Error::ImproperPosterior { .. } => "E_IMPROPER_POSTERIOR",
            Error::Elicitation(_) => "E_ELICITATION",
            Error::Infeasible { .. } => "E_INFEASIBLE",
            Error::Decision(_) => "E_DECISION",
            Error::Unsupported(_) => "E_UNSUPPORTED",
            Error::Ingestion { .. } => "E_INGESTION",
            Error::Io(_) => "E_IO",
        }
    }
}

pub(crate) fn validation(msg: impl Into<String>) -> Error {
    Error::Validation(msg.into())
}
