use std::fmt;

use blocknav::agent::AgentError;
use blocknav::envgraph::{EnvError, WorldFileError};
use blocknav::harness::HarnessError;
use blocknav::worldgen::{DatasetError, GenError};

/// Failure classes, each with its own exit code.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(anyhow::Error),
    Runtime(anyhow::Error),
}

impl CliError {
    pub fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }

    pub fn data(e: impl Into<anyhow::Error>) -> Self {
        CliError::Data(e.into())
    }

    pub fn runtime(e: impl Into<anyhow::Error>) -> Self {
        CliError::Runtime(e.into())
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "{m}"),
            CliError::Data(e) | CliError::Runtime(e) => write!(f, "{e:#}"),
        }
    }
}

impl From<AgentError> for CliError {
    fn from(e: AgentError) -> Self {
        match e {
            AgentError::InvalidConfig(_) | AgentError::Checkpoint(_) => CliError::data(e),
            _ => CliError::runtime(e),
        }
    }
}

impl From<HarnessError> for CliError {
    fn from(e: HarnessError) -> Self {
        match e {
            HarnessError::Agent(a) => a.into(),
            HarnessError::Env(_)
            | HarnessError::Dataset(_)
            | HarnessError::Unreachable { .. }
            | HarnessError::InvalidConfig(_) => CliError::data(e),
            HarnessError::Io(_) | HarnessError::Csv(_) | HarnessError::Json(_) => CliError::runtime(e),
        }
    }
}

impl From<WorldFileError> for CliError {
    fn from(e: WorldFileError) -> Self {
        match e {
            WorldFileError::Io(_) => CliError::runtime(e),
            _ => CliError::data(e),
        }
    }
}

impl From<DatasetError> for CliError {
    fn from(e: DatasetError) -> Self {
        match e {
            DatasetError::Io(_) => CliError::runtime(e),
            _ => CliError::data(e),
        }
    }
}

impl From<GenError> for CliError {
    fn from(e: GenError) -> Self {
        CliError::data(e)
    }
}

impl From<EnvError> for CliError {
    fn from(e: EnvError) -> Self {
        CliError::data(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::runtime(e)
    }
}
