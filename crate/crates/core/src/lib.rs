//! FinMem: a trading agent with layered long-term memory, driven through a
//! deterministic daily backtest.
//!
//! Data flows from [`market_data`] into the [`agent`], which summarizes
//! documents into the [`memory`] store, reflects through the [`llm`] gateway
//! and emits one decision per day to the [`backtest`] harness.

pub mod agent;
pub mod backtest;
pub mod config;
pub mod embedding;
pub mod llm;
pub mod market_data;
pub mod memory;
pub mod net;
pub mod report;
pub mod runner;
pub mod synthetic;

use std::path::PathBuf;

use agent::AgentError;
use backtest::BacktestError;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Config(#[from] config::ConfigError),
    #[error(transparent)]
    Data(#[from] market_data::DataError),
    #[error(transparent)]
    Provider(#[from] llm::LlmError),
    #[error(transparent)]
    Embedding(#[from] embedding::EmbedError),
    #[error(transparent)]
    Memory(#[from] memory::MemoryError),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Backtest(#[from] BacktestError),
    #[error(transparent)]
    Report(#[from] report::ReportError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_PROVIDER: i32 = 4;

fn agent_exit_code(e: &AgentError) -> i32 {
    match e {
        AgentError::UnknownTicker(_)
        | AgentError::EmptyWindow { .. }
        | AgentError::Metadata(_)
        | AgentError::Data(_) => EXIT_DATA,
        AgentError::Llm(_) | AgentError::Embedding(_) => EXIT_PROVIDER,
        AgentError::Memory(_) => 1,
    }
}

impl Error {
    /// Process exit code: 2 config, 3 data, 4 provider, 1 anything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => EXIT_CONFIG,
            Error::Data(_) | Error::Report(_) => EXIT_DATA,
            Error::Provider(_) | Error::Embedding(_) => EXIT_PROVIDER,
            Error::Agent(e) => agent_exit_code(e),
            Error::Backtest(e) => match e {
                BacktestError::WindowOutOfRange(_) | BacktestError::OverlappingWindows { .. } => {
                    EXIT_CONFIG
                }
                BacktestError::Data(_) => EXIT_DATA,
                BacktestError::Agent { source, .. } => agent_exit_code(source),
                BacktestError::Metric(_) => 1,
            },
            Error::Memory(_) | Error::Io { .. } => 1,
        }
    }
}
