use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("invalid input: {0}")]
    Input(String),

    #[error("policy selected tool {tool_id} but the registry has {registry_size} tools")]
    ToolOutOfRange { tool_id: usize, registry_size: usize },

    #[error("action {0} is masked in the current state")]
    MaskedAction(String),

    #[error("no action is available in the current state")]
    NoActions,

    #[error("round budget exhausted without a verdict and forced conclusion is disabled")]
    BudgetExhausted,

    #[error("episode for sample {sample_id} failed: {source}")]
    Episode {
        sample_id: u64,
        #[source]
        source: Box<Error>,
    },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// True for errors caused by bad user-supplied configuration or input files.
    pub fn is_config(&self) -> bool {
        matches!(self, Error::Config(_) | Error::Json(_) | Error::Checkpoint(_))
    }
}
