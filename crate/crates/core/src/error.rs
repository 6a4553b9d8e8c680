use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A caller broke an operation's precondition (dimension mismatch, empty
    /// input, action outside the grid, ...).
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("training diverged at iteration {iteration} (last finite loss {last_finite_loss:?}): {detail}")]
    Divergence {
        iteration: usize,
        last_finite_loss: Option<f64>,
        detail: String,
    },

    #[error("environment error: {0}")]
    Environment(String),

    #[error("simulator error: {0}")]
    Simulator(String),

    #[error("plugin launch failed: {0}")]
    Launch(String),

    #[error("plugin session error: {message} (unfulfilled ids: {unfulfilled:?})")]
    Session { message: String, unfulfilled: Vec<u64> },

    #[error("no usable action: {0}")]
    NoUsableAction(String),

    #[error("round {round}: {source}")]
    Round {
        round: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("invalid config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn contract(msg: impl Into<String>) -> Error {
    Error::Contract(msg.into())
}

impl Error {
    pub fn in_round(self, round: usize) -> Self {
        match self {
            e @ Error::Round { .. } => e,
            e => Error::Round {
                round,
                source: Box::new(e),
            },
        }
    }
}
