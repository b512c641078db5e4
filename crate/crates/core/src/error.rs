use std::time::Duration;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("key {key} is outside the key space [0, {max_key}]")]
    KeyOutOfRange { key: u64, max_key: u64 },

    #[error("multicast kernel is shut down")]
    Shutdown,

    #[error("replica {0} has crashed")]
    Crashed(usize),

    #[error("unknown replica {0}")]
    UnknownReplica(usize),

    #[error("malformed command payload: {0}")]
    Decode(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("invocation cancelled")]
    Cancelled,

    #[error("no live replica to compare")]
    NoLiveReplicas,

    #[error("history line {line}: {msg}")]
    History { line: usize, msg: String },

    #[error("watchdog: no progress for {0:?}")]
    Watchdog(Duration),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
