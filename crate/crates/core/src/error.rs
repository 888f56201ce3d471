use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("weight not finite at ({x}, {y})")]
    WeightNotFinite { x: f64, y: f64 },

    #[error("kernel singular at agent position (agent {agent})")]
    KernelSingular { agent: usize },

    #[error("CFL violated: Courant number {courant} exceeds 1")]
    CflViolated { courant: f64 },

    #[error("characteristic blow-up at t = {t}")]
    CharacteristicBlowUp { t: f64 },

    #[error("strategy integrand not finite for agent {agent}")]
    StrategyIntegrandNotFinite { agent: usize },

    #[error("agent escaped: agent {agent} at ({x}, {y})")]
    AgentEscaped { agent: usize, x: f64, y: f64 },

    #[error("config error at `{key}`: {reason}")]
    Config { key: String, reason: String },

    #[error("unknown preset `{0}`")]
    UnknownPreset(String),

    #[error("malformed field file: {0}")]
    FieldFormat(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn config(key: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Configuration problems (as opposed to numerical failures during a run).
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            Error::Config { .. }
                | Error::UnknownPreset(_)
                | Error::InvalidGrid(_)
                | Error::Io { .. }
        )
    }
}
