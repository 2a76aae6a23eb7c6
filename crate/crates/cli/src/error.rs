use cascade_trace::{Cpid, QueryError};
use cascade_trace_sim::{ScenarioError, SimError};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Transport(String),
    #[error("unknown CPID {0}")]
    NotFound(Cpid),
    /// The scenario ran but did not finish (barrier timeout, store error).
    #[error("{0}")]
    Failed(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Transport(_) => 2,
            CliError::NotFound(_) => 3,
            CliError::Failed(_) => 4,
        }
    }
}

impl From<QueryError> for CliError {
    fn from(e: QueryError) -> Self {
        match e {
            QueryError::NotFound(c) => CliError::NotFound(c),
            QueryError::Rejected(m) => {
                CliError::Transport(format!("trace server rejected the request: {m}"))
            }
            QueryError::Transport(m) => {
                CliError::Transport(format!("trace server unreachable: {m}"))
            }
        }
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Query(q) => q.into(),
            SimError::MissingSeed => CliError::Usage("--deterministic needs --seed".into()),
            SimError::Log(io) => CliError::Usage(format!("cannot open log file: {io}")),
            other => CliError::Failed(other.to_string()),
        }
    }
}

impl From<ScenarioError> for CliError {
    fn from(e: ScenarioError) -> Self {
        CliError::Usage(e.to_string())
    }
}
