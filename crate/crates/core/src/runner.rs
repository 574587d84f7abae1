//! Builds a run from a [`RunConfig`] and writes its artifacts.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use crate::agent::{build_profile, FinMemAgent, ProfileCatalog};
use crate::backtest::{self, BacktestOutcome};
use crate::config::{ProviderKind, RunConfig};
use crate::embedding::{Embedder, HashEmbedder};
use crate::llm::{Gateway, LlmProvider, MockProvider, Rulebook};
use crate::market_data::{load_documents, load_ohlcv, DocumentKind, Warehouse};
use crate::memory::MemoryStore;
use crate::report::{
    write_decisions_csv, MeanMetrics, RunMetadata, RunReport, TrialSummary, BASELINE_FILE,
    BASELINE_LEDGER_FILE, DECISIONS_FILE, LEDGER_FILE, MEMORY_FILE, REPORT_FILE,
};
use crate::{net, Error};

/// Loaded market data and profile metadata, shared by every trial of a config.
#[derive(Debug, Clone)]
pub struct RunInputs {
    pub warehouse: Warehouse,
    pub catalog: ProfileCatalog,
}

impl RunInputs {
    pub fn load(config: &RunConfig) -> Result<Self, Error> {
        let mut warehouse = Warehouse::new();
        warehouse.insert_prices(load_ohlcv(&config.data.prices, &config.ticker)?);
        warehouse.insert_documents(load_documents(&config.data.documents)?)?;
        let catalog = ProfileCatalog::load(&config.data.metadata)?;
        Ok(Self { warehouse, catalog })
    }
}

/// Document counts and date coverage for one ticker.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize)]
pub struct IngestSummary {
    pub ticker: String,
    pub trading_days: usize,
    pub first_price_date: Option<chrono::NaiveDate>,
    pub last_price_date: Option<chrono::NaiveDate>,
    pub news: usize,
    pub filings_10q: usize,
    pub filings_10k: usize,
    pub first_document_date: Option<chrono::NaiveDate>,
    pub last_document_date: Option<chrono::NaiveDate>,
}

impl IngestSummary {
    pub fn of(warehouse: &Warehouse, ticker: &str) -> Result<Self, Error> {
        let prices = warehouse.prices(ticker)?;
        let docs = warehouse.documents(ticker);
        let count = |k| docs.iter().filter(|d| d.kind == k).count();
        Ok(Self {
            ticker: ticker.to_string(),
            trading_days: prices.len(),
            first_price_date: prices.rows().first().map(|r| r.date),
            last_price_date: prices.rows().last().map(|r| r.date),
            news: count(DocumentKind::News),
            filings_10q: count(DocumentKind::Filing10Q),
            filings_10k: count(DocumentKind::Filing10K),
            first_document_date: docs.iter().map(|d| d.date).min(),
            last_document_date: docs.iter().map(|d| d.date).max(),
        })
    }
}

impl std::fmt::Display for IngestSummary {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let range = |a: Option<chrono::NaiveDate>, b: Option<chrono::NaiveDate>| match (a, b) {
            (Some(a), Some(b)) => format!("{a}..{b}"),
            _ => "none".to_string(),
        };
        writeln!(f, "ticker: {}", self.ticker)?;
        writeln!(
            f,
            "prices: {} trading days ({})",
            self.trading_days,
            range(self.first_price_date, self.last_price_date)
        )?;
        writeln!(f, "news: {}", self.news)?;
        writeln!(f, "10q: {}", self.filings_10q)?;
        writeln!(f, "10k: {}", self.filings_10k)?;
        write!(
            f,
            "documents: {}",
            range(self.first_document_date, self.last_document_date)
        )
    }
}

pub struct RunArtifacts {
    pub outcome: BacktestOutcome,
    pub report: RunReport,
    pub baseline: RunReport,
    pub memory_snapshot: Vec<u8>,
}

type Providers = (Arc<dyn LlmProvider>, Arc<dyn Embedder>);

fn providers(config: &RunConfig) -> Result<Providers, Error> {
    match config.provider {
        ProviderKind::Mock => {
            net::forbid_network();
            let rulebook = match &config.data.rulebook {
                Some(path) => Rulebook::load(path)?,
                None => Rulebook::default(),
            };
            Ok((
                Arc::new(MockProvider::new(rulebook)?),
                Arc::new(HashEmbedder::new(config.embedding_dim)),
            ))
        }
        #[cfg(feature = "remote")]
        ProviderKind::Remote => {
            use crate::embedding::{RemoteEmbedder, RemoteEmbedderConfig};
            use crate::llm::{RemoteLlmConfig, RemoteProvider};
            let r = &config.remote;
            let llm = RemoteProvider::from_env(RemoteLlmConfig {
                model: r.llm_model.clone(),
                timeout_secs: r.llm_timeout_secs,
                max_retries: r.llm_max_retries,
            })?;
            let embedder = RemoteEmbedder::from_env(RemoteEmbedderConfig {
                endpoint: r.embedding_endpoint.clone(),
                model: r.embedding_model.clone(),
                dim: r.embedding_dim,
                timeout_secs: r.embedding_timeout_secs,
                max_retries: r.llm_max_retries,
                max_in_flight: r.max_in_flight,
            })?;
            Ok((Arc::new(llm), Arc::new(embedder)))
        }
        #[cfg(not(feature = "remote"))]
        ProviderKind::Remote => Err(crate::llm::LlmError::ProviderUnavailable(
            "built without the `remote` feature".into(),
        )
        .into()),
    }
}

/// Runs one backtest for `config` with the given provider.
pub fn execute_with(
    config: &RunConfig,
    inputs: &RunInputs,
    provider: Arc<dyn LlmProvider>,
    embedder: Arc<dyn Embedder>,
) -> Result<RunArtifacts, Error> {
    config.validate()?;
    let seed = config.seed.unwrap_or(0);
    let profile = build_profile(
        &config.ticker,
        &inputs.warehouse,
        &inputs.catalog,
        (config.windows.train_start, config.windows.train_end),
        config.risk,
        config.switch_window,
    )?;
    let gateway = Gateway::new(provider)
        .with_max_retries(config.max_retries)
        .with_max_in_flight(config.remote.max_in_flight);
    let store = MemoryStore::new(config.memory_params(), seed)?;
    let mut agent = FinMemAgent::new(profile, config.agent_settings(), gateway, embedder, store);
    let outcome = backtest::run(
        &mut agent,
        &inputs.warehouse,
        &config.windows,
        &config.backtest_settings(),
    )?;

    let metadata = RunMetadata::from_config(config, outcome.ledger.len());
    let report = RunReport {
        label: "FinMem".into(),
        metrics: outcome.report.clone(),
        metadata: metadata.clone(),
        config: config.clone(),
    };
    let baseline = RunReport {
        label: "B&H".into(),
        metrics: outcome.baseline_report.clone(),
        metadata,
        config: config.clone(),
    };
    let mut memory_snapshot = Vec::new();
    agent.store().save_snapshot(&mut memory_snapshot)?;
    Ok(RunArtifacts {
        outcome,
        report,
        baseline,
        memory_snapshot,
    })
}

pub fn execute(config: &RunConfig, inputs: &RunInputs) -> Result<RunArtifacts, Error> {
    let (provider, embedder) = providers(config)?;
    execute_with(config, inputs, provider, embedder)
}

fn io_error(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

impl RunArtifacts {
    /// Writes report, baseline, ledgers, decision log and memory snapshot into `dir`.
    pub fn write_to(&self, dir: &Path) -> Result<Vec<PathBuf>, Error> {
        std::fs::create_dir_all(dir).map_err(io_error(dir))?;
        let mut written = Vec::new();
        let mut put = |name: &str, bytes: &[u8]| -> Result<(), Error> {
            let path = dir.join(name);
            std::fs::write(&path, bytes).map_err(io_error(&path))?;
            written.push(path);
            Ok(())
        };
        put(REPORT_FILE, self.report.to_json().as_bytes())?;
        put(BASELINE_FILE, self.baseline.to_json().as_bytes())?;
        let csv_bytes = |f: &dyn Fn(&mut Vec<u8>) -> Result<(), csv::Error>| {
            let mut buf = Vec::new();
            f(&mut buf).map(|_| buf)
        };
        let ledger = csv_bytes(&|b| self.outcome.ledger.write_csv(b)).map_err(csv_io)?;
        put(LEDGER_FILE, &ledger)?;
        let baseline = csv_bytes(&|b| self.outcome.baseline_ledger.write_csv(b)).map_err(csv_io)?;
        put(BASELINE_LEDGER_FILE, &baseline)?;
        let decisions = csv_bytes(&|b| write_decisions_csv(&self.outcome.decisions, b)).map_err(csv_io)?;
        put(DECISIONS_FILE, &decisions)?;
        put(MEMORY_FILE, &self.memory_snapshot)?;
        Ok(written)
    }
}

fn csv_io(e: csv::Error) -> Error {
    Error::Io {
        path: PathBuf::from("<csv buffer>"),
        source: std::io::Error::other(e),
    }
}

/// Runs `n` trials with seeds `seed, seed + 1, ...`, optionally on separate threads.
pub fn run_trials(
    config: &RunConfig,
    inputs: &RunInputs,
    n: usize,
    parallel: bool,
) -> Result<(Vec<RunArtifacts>, TrialSummary), Error> {
    let base = config.seed.unwrap_or(0);
    let configs: Vec<RunConfig> = (0..n as u64)
        .map(|i| RunConfig {
            seed: Some(base.wrapping_add(i)),
            ..config.clone()
        })
        .collect();
    let runs: Vec<RunArtifacts> = if parallel {
        std::thread::scope(|s| {
            let handles: Vec<_> = configs
                .iter()
                .map(|c| s.spawn(move || execute(c, inputs)))
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("trial thread panicked"))
                .collect::<Result<_, _>>()
        })?
    } else {
        configs
            .iter()
            .map(|c| execute(c, inputs))
            .collect::<Result<_, _>>()?
    };
    let agent: Vec<_> = runs.iter().map(|r| &r.report.metrics).collect();
    let baseline: Vec<_> = runs.iter().map(|r| &r.baseline.metrics).collect();
    let summary = TrialSummary {
        seeds: configs.iter().filter_map(|c| c.seed).collect(),
        agent: MeanMetrics::of(&agent),
        baseline: MeanMetrics::of(&baseline),
    };
    Ok((runs, summary))
}
