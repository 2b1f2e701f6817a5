use crate::model::NodeId;
use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("topology error: {0}")]
    Topology(String),

    #[error("invalid network: {0}")]
    Validation(String),

    #[error("{}", format_config_error(.key, .line, .message))]
    Config {
        key: Option<String>,
        line: Option<usize>,
        message: String,
    },

    /// The controller produced a decision that consumes more energy than
    /// the node had stored at the start of the slot.
    #[error(
        "energy availability violated at node {node} in slot {slot}: stored {stored}, consumption {consumption}"
    )]
    EnergyAvailability {
        node: NodeId,
        slot: u64,
        stored: f64,
        consumption: f64,
    },

    #[error(
        "data availability violated at node {node} for session {session} in slot {slot}: backlog would become {backlog}"
    )]
    DataAvailability {
        node: NodeId,
        session: usize,
        slot: u64,
        backlog: f64,
    },

    #[error("node {0} has no grid supply")]
    NoGridSupply(NodeId),

    #[error("stored energy {energy} exceeds battery capacity {capacity}")]
    StateCorruption { energy: f64, capacity: f64 },

    #[error("power budget breached at node {node}: {total} > {budget}")]
    BudgetBreach {
        node: NodeId,
        total: f64,
        budget: f64,
    },

    #[error("grid oracle handles at most 3 links, got {0}")]
    OracleSize(usize),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

fn format_config_error(key: &Option<String>, line: &Option<usize>, message: &str) -> String {
    match (key, line) {
        (Some(k), Some(l)) => format!("config error at line {l} (key `{k}`): {message}"),
        (Some(k), None) => format!("config error (key `{k}`): {message}"),
        (None, Some(l)) => format!("config error at line {l}: {message}"),
        (None, None) => format!("config error: {message}"),
    }
}

impl Error {
    pub(crate) fn config(key: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            key: Some(key.into()),
            line: None,
            message: message.into(),
        }
    }
}
