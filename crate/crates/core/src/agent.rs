//! The trading agent: profile, working-memory operations and the daily step.
//!
//! A step ingests the day's documents as summarized memories, purges decayed
//! memories, observes the market, retrieves the top-K events of every layer,
//! reflects on them through the gateway, feeds citations back into the store
//! and, in the test phase, writes an extended reflection into the deep layer.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::sync::Arc;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::backtest::{Action, LedgerEntry};
use crate::embedding::{EmbedError, Embedder};
use crate::llm::{
    self, Gateway, LayerIds, LlmError, Payload, PromptRequest, ReflectionPayload, TemplateId,
};
use crate::market_data::{
    DataError, MarketDirection, PriceHistory, PriceSeries, RawDocument, Warehouse,
};
use crate::memory::{Layer, LayeredRetrieval, MemoryError, MemoryStore, NewMemory, SourceKind};

#[derive(Debug, thiserror::Error)]
pub enum AgentError {
    #[error("unknown ticker `{0}` in profile metadata")]
    UnknownTicker(String),
    #[error("training window {start}..={end} holds fewer than 2 trading days")]
    EmptyWindow { start: NaiveDate, end: NaiveDate },
    #[error("profile metadata: {0}")]
    Metadata(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Memory(#[from] MemoryError),
    #[error(transparent)]
    Embedding(#[from] EmbedError),
    #[error(transparent)]
    Llm(#[from] LlmError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RiskMode {
    RiskSeeking,
    RiskAverse,
    SelfAdaptive,
}

impl RiskMode {
    pub fn as_str(self) -> &'static str {
        match self {
            RiskMode::RiskSeeking => "risk_seeking",
            RiskMode::RiskAverse => "risk_averse",
            RiskMode::SelfAdaptive => "self_adaptive",
        }
    }
}

impl fmt::Display for RiskMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EffectiveRisk {
    Seeking,
    Averse,
}

impl EffectiveRisk {
    pub fn label(self) -> &'static str {
        match self {
            EffectiveRisk::Seeking => "risk-seeking",
            EffectiveRisk::Averse => "risk-averse",
        }
    }

    pub fn paragraph(self) -> &'static str {
        match self {
            EffectiveRisk::Seeking => llm::RISK_SEEKING_TEXT,
            EffectiveRisk::Averse => llm::RISK_AVERSE_TEXT,
        }
    }
}

impl fmt::Display for EffectiveRisk {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EffectiveRisk::Seeking => "Seeking",
            EffectiveRisk::Averse => "Averse",
        })
    }
}

pub const DEFAULT_SWITCH_WINDOW: usize = 3;
pub const DEFAULT_M_WINDOW: usize = 5;
pub const DEFAULT_K_TOP: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentProfile {
    pub ticker: String,
    pub sector_background: String,
    pub history_overview: String,
    pub risk: RiskMode,
    /// Trading days summed by the self-adaptive switch.
    pub switch_window: usize,
}

impl AgentProfile {
    /// Profile text used at the top of every reflection prompt.
    pub fn text(&self) -> String {
        let slots = [
            ("ticker", self.ticker.as_str()),
            ("sector_text", self.sector_background.as_str()),
            ("history_overview", self.history_overview.as_str()),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect();
        llm::render(TemplateId::ProfileCompose, &slots).expect("profile slots are complete")
    }
}

/// Per-ticker sector descriptions, loaded from JSON `{ticker, sector_text}`
/// objects (a single object or an array of them).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ProfileCatalog {
    sectors: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProfileMetadata {
    pub ticker: String,
    pub sector_text: String,
}

impl ProfileCatalog {
    pub fn from_entries(entries: impl IntoIterator<Item = ProfileMetadata>) -> Self {
        Self {
            sectors: entries
                .into_iter()
                .map(|m| (m.ticker, m.sector_text))
                .collect(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self, AgentError> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum OneOrMany {
            One(ProfileMetadata),
            Many(Vec<ProfileMetadata>),
        }
        let parsed: OneOrMany =
            serde_json::from_str(text).map_err(|e| AgentError::Metadata(e.to_string()))?;
        let entries = match parsed {
            OneOrMany::One(m) => vec![m],
            OneOrMany::Many(v) => v,
        };
        if let Some(m) = entries.iter().find(|m| m.sector_text.trim().is_empty()) {
            return Err(AgentError::Metadata(format!(
                "empty sector_text for {}",
                m.ticker
            )));
        }
        Ok(Self::from_entries(entries))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, AgentError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| AgentError::Metadata(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn sector(&self, ticker: &str) -> Option<&str> {
        self.sectors.get(ticker).map(String::as_str)
    }
}

/// Composes the profile from sector metadata and the training-window price history.
pub fn build_profile(
    ticker: &str,
    warehouse: &Warehouse,
    catalog: &ProfileCatalog,
    training_window: (NaiveDate, NaiveDate),
    risk: RiskMode,
    switch_window: usize,
) -> Result<AgentProfile, AgentError> {
    let sector = catalog
        .sector(ticker)
        .ok_or_else(|| AgentError::UnknownTicker(ticker.to_string()))?;
    let prices = warehouse.prices(ticker)?;
    let (start, end) = training_window;
    let rows: Vec<_> = prices
        .rows()
        .iter()
        .filter(|r| r.date >= start && r.date <= end)
        .collect();
    if rows.len() < 2 {
        return Err(AgentError::EmptyWindow { start, end });
    }
    let first = rows[0];
    let last = rows[rows.len() - 1];
    let log_return = (last.adj_close / first.adj_close).ln();
    let history_overview = format!(
        "Between {} and {} ({} trading days) the adjusted close of {ticker} moved from {:.2} to {:.2}, \
         a cumulative log return of {:.2}%.",
        first.date,
        last.date,
        rows.len(),
        first.adj_close,
        last.adj_close,
        100.0 * log_return,
    );
    Ok(AgentProfile {
        ticker: ticker.to_string(),
        sector_background: sector.to_string(),
        history_overview,
        risk,
        switch_window: switch_window.max(1),
    })
}

/// Fixed modes return themselves. Self-adaptive turns averse exactly when the
/// sum of the last `switch_window` realized daily returns is strictly negative;
/// days without history count as zero.
pub fn effective_risk(profile: &AgentProfile, realized_returns: &[f64]) -> EffectiveRisk {
    match profile.risk {
        RiskMode::RiskSeeking => EffectiveRisk::Seeking,
        RiskMode::RiskAverse => EffectiveRisk::Averse,
        RiskMode::SelfAdaptive => {
            let n = realized_returns.len();
            let window = &realized_returns[n.saturating_sub(profile.switch_window)..];
            if window.iter().sum::<f64>() < 0.0 {
                EffectiveRisk::Averse
            } else {
                EffectiveRisk::Seeking
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Train,
    Test,
}

/// Price access granted for one step. The test variant only carries rows up
/// to the decision date.
#[derive(Debug, Clone, Copy)]
pub enum MarketView<'a> {
    Train(&'a PriceSeries),
    Test(PriceHistory<'a>),
}

impl MarketView<'_> {
    pub fn phase(&self) -> Phase {
        match self {
            MarketView::Train(_) => Phase::Train,
            MarketView::Test(_) => Phase::Test,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarketIndication {
    pub phase: Phase,
    pub train_label: Option<MarketDirection>,
    /// Trailing log return over `window_days`.
    pub trailing_return: Option<f64>,
    pub window_days: usize,
}

/// Training reads the next-day label; testing reads the trailing `m`-day
/// return. With fewer than `m` prior days the test window shrinks to what is
/// available.
pub fn observe(
    view: MarketView<'_>,
    date: NaiveDate,
    m: usize,
) -> Result<MarketIndication, DataError> {
    match view {
        MarketView::Train(prices) => Ok(MarketIndication {
            phase: Phase::Train,
            train_label: Some(prices.direction_label(date)?),
            trailing_return: None,
            window_days: 0,
        }),
        MarketView::Test(history) => {
            if history.last_date() != Some(date) {
                return Err(DataError::DateNotFound(date));
            }
            let window = m.min(history.rows().len() - 1);
            Ok(MarketIndication {
                phase: Phase::Test,
                train_label: None,
                trailing_return: Some(history.trailing_cumulative_return(window)?),
                window_days: window,
            })
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImmediateReflection {
    pub date: NaiveDate,
    pub direction: Option<Action>,
    pub rationale: String,
    pub cited: LayerIds,
    /// The gateway failed and the reflection is a Hold/NoOp fallback.
    pub degraded: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtendedReflection {
    pub date: NaiveDate,
    pub window_m: usize,
    pub trend_summary: String,
    pub window_return: f64,
    pub event_id: u64,
}

/// Gateway summary of one document and the layer it belongs in.
pub fn summarize(doc: &RawDocument, gateway: &Gateway) -> Result<(String, Layer), LlmError> {
    let request = PromptRequest::new(TemplateId::Summarize)
        .slot("ticker", doc.ticker.as_str())
        .slot("date", doc.date.to_string())
        .slot("kind", doc.kind.as_str())
        .slot("text", doc.text.as_str());
    match gateway.complete(&request)?.payload {
        Payload::Summary { summary } => Ok((summary, Layer::for_document(doc.kind))),
        other => unreachable!("summarize validated as {other:?}"),
    }
}

pub(crate) fn format_memories(retrieval: &LayeredRetrieval, layer: Layer) -> String {
    let items = retrieval.layer(layer);
    if items.is_empty() {
        return "(none)".to_string();
    }
    items
        .iter()
        .map(|r| format!("- [id {}] {}", r.event.id, r.event.text.replace('\n', " ")))
        .collect::<Vec<_>>()
        .join("\n")
}

fn offered_ids(retrieval: &LayeredRetrieval) -> LayerIds {
    Layer::ALL.map(|l| retrieval.ids(l))
}

/// Merges the market indication and retrieved memories into a reflection.
/// Gateway failures degrade to Hold (test) or an empty NoOp reflection (train).
pub fn reflect_immediate(
    profile: &AgentProfile,
    risk: EffectiveRisk,
    indication: &MarketIndication,
    retrieval: &LayeredRetrieval,
    gateway: &Gateway,
    date: NaiveDate,
    temperature: f64,
) -> ImmediateReflection {
    let template = match indication.phase {
        Phase::Train => TemplateId::ImmediateReflectTrain,
        Phase::Test => TemplateId::ImmediateReflectTest,
    };
    let mut request = PromptRequest::new(template)
        .temperature(temperature)
        .slot("profile", profile.text())
        .slot("risk_label", risk.label())
        .slot("risk_paragraph", risk.paragraph().trim())
        .slot("ticker", profile.ticker.as_str())
        .slot("date", date.to_string())
        .slot("shallow_memories", format_memories(retrieval, Layer::Shallow))
        .slot("intermediate_memories", format_memories(retrieval, Layer::Intermediate))
        .slot("deep_memories", format_memories(retrieval, Layer::Deep))
        .offered(offered_ids(retrieval));
    if let Some(label) = indication.train_label {
        request = request.slot("train_label", label.to_string());
    }
    if let Some(r) = indication.trailing_return {
        request = request
            .slot("trailing_return", r.to_string())
            .slot("window_days", indication.window_days.to_string());
    }

    match gateway.complete(&request) {
        Ok(resp) => match resp.payload {
            Payload::Reflection(ReflectionPayload {
                direction,
                rationale,
                cited,
            }) => ImmediateReflection {
                date,
                direction,
                rationale,
                cited,
                degraded: false,
            },
            other => unreachable!("reflection validated as {other:?}"),
        },
        Err(err) => {
            log::warn!("{date}: immediate reflection failed, holding: {err}");
            ImmediateReflection {
                date,
                direction: match indication.phase {
                    Phase::Train => None,
                    Phase::Test => Some(Action::Hold),
                },
                rationale: "validation failure".to_string(),
                cited: Default::default(),
                degraded: true,
            }
        }
    }
}

/// Sum of realized ledger returns for the given decision dates, in ledger order.
pub fn window_return(realized: &[LedgerEntry], dates: &[NaiveDate]) -> f64 {
    realized
        .iter()
        .filter(|e| dates.contains(&e.date))
        .map(|e| e.daily_return)
        .sum()
}

/// Trend summary over the last `m` immediate reflections, stored as a deep
/// memory. `realized` holds ledger entries settled so far, so the window return
/// covers the window's decisions whose next-day close is already known.
#[allow(clippy::too_many_arguments)]
pub fn reflect_extended(
    profile: &AgentProfile,
    reflections: &[ImmediateReflection],
    realized: &[LedgerEntry],
    m: usize,
    gateway: &Gateway,
    embedder: &dyn Embedder,
    store: &mut MemoryStore,
    date: NaiveDate,
) -> Result<ExtendedReflection, AgentError> {
    let window = &reflections[reflections.len().saturating_sub(m)..];
    let dates: Vec<NaiveDate> = window.iter().map(|r| r.date).collect();
    let ret = window_return(realized, &dates);
    let lines = window
        .iter()
        .map(|r| {
            let action = r.direction.map_or("NoOp", Action::as_str);
            format!("- {}: {action} ({})", r.date, r.rationale)
        })
        .collect::<Vec<_>>()
        .join("\n");
    let request = PromptRequest::new(TemplateId::ExtendedReflect)
        .slot("profile", profile.text())
        .slot("ticker", profile.ticker.as_str())
        .slot("date", date.to_string())
        .slot("window_days", window.len().to_string())
        .slot("window_return", ret.to_string())
        .slot("reflections", lines);
    let summary = match gateway.complete(&request) {
        Ok(resp) => match resp.payload {
            Payload::Extended { trend_summary } => trend_summary,
            other => unreachable!("extended reflection validated as {other:?}"),
        },
        Err(err) => {
            log::warn!("{date}: extended reflection failed: {err}");
            format!(
                "Extended reflection unavailable; {} days with realized return {ret}.",
                window.len()
            )
        }
    };
    let text = format!("Extended reflection {date}: {summary}");
    let vector = embedder.embed(&text)?;
    let event_id = store
        .ingest(NewMemory {
            ticker: profile.ticker.clone(),
            layer: Layer::Deep,
            text,
            vector,
            date,
            source_kind: SourceKind::ExtendedReflection,
        })?
        .id;
    Ok(ExtendedReflection {
        date,
        window_m: window.len(),
        trend_summary: summary,
        window_return: ret,
        event_id,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgentSettings {
    pub k_top: usize,
    pub m_window: usize,
    pub temperature: f64,
}

impl Default for AgentSettings {
    fn default() -> Self {
        Self {
            k_top: DEFAULT_K_TOP,
            m_window: DEFAULT_M_WINDOW,
            temperature: llm::DEFAULT_TEMPERATURE,
        }
    }
}

/// Everything the harness hands the agent for one day.
#[derive(Debug, Clone)]
pub struct StepInput<'a> {
    pub date: NaiveDate,
    pub market: MarketView<'a>,
    /// Documents newly visible today, ordered by id.
    pub documents: Vec<&'a RawDocument>,
    /// Ledger entries settled before today.
    pub realized: &'a [LedgerEntry],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TradeDecision {
    pub date: NaiveDate,
    pub phase: Phase,
    /// `None` is a training-phase NoOp.
    pub action: Option<Action>,
    pub effective_risk: EffectiveRisk,
    pub rationale: String,
    pub cited_ids: Vec<u64>,
}

/// Per-step bookkeeping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepTrace {
    pub date: NaiveDate,
    pub phase: Phase,
    pub documents_ingested: usize,
    pub documents_skipped: Vec<String>,
    pub purged: usize,
    pub layer_sizes: [usize; 3],
    pub retrieved: [usize; 3],
    pub promoted: Vec<u64>,
    pub degraded: bool,
    pub extended: Option<ExtendedReflection>,
}

pub struct FinMemAgent {
    profile: AgentProfile,
    settings: AgentSettings,
    gateway: Gateway,
    embedder: Arc<dyn Embedder>,
    store: MemoryStore,
    reflections: Vec<ImmediateReflection>,
}

impl FinMemAgent {
    pub fn new(
        profile: AgentProfile,
        settings: AgentSettings,
        gateway: Gateway,
        embedder: Arc<dyn Embedder>,
        store: MemoryStore,
    ) -> Self {
        Self {
            profile,
            settings,
            gateway,
            embedder,
            store,
            reflections: Vec::new(),
        }
    }

    pub fn profile(&self) -> &AgentProfile {
        &self.profile
    }

    pub fn settings(&self) -> &AgentSettings {
        &self.settings
    }

    pub fn store(&self) -> &MemoryStore {
        &self.store
    }

    pub fn reflections(&self) -> &[ImmediateReflection] {
        &self.reflections
    }

    /// Summarizes and stores one document. `Ok(None)` means the gateway
    /// failed and the document was skipped.
    pub fn ingest_document(&mut self, doc: &RawDocument) -> Result<Option<u64>, AgentError> {
        let (insight, layer) = match summarize(doc, &self.gateway) {
            Ok(s) => s,
            Err(err) => {
                log::warn!("{}: skipping document {}: {err}", doc.date, doc.id);
                return Ok(None);
            }
        };
        let vector = self.embedder.embed(&insight)?;
        let event = self.store.ingest(NewMemory {
            ticker: doc.ticker.clone(),
            layer,
            text: insight,
            vector,
            date: doc.date,
            source_kind: doc.kind.into(),
        })?;
        Ok(Some(event.id))
    }

    fn query_text(&self, date: NaiveDate, risk: EffectiveRisk) -> String {
        format!(
            "Trading inquiry: should I buy, sell or hold {} on {date}? {}",
            self.profile.ticker,
            risk.paragraph().trim()
        )
    }

    pub fn step(&mut self, input: StepInput<'_>) -> Result<(TradeDecision, StepTrace), AgentError> {
        let date = input.date;
        let phase = input.market.phase();

        let mut ingested = 0;
        let mut skipped = Vec::new();
        for doc in &input.documents {
            match self.ingest_document(doc)? {
                Some(_) => ingested += 1,
                None => skipped.push(doc.id.clone()),
            }
        }
        let purged = self.store.decay_and_purge(date).len();

        let indication = observe(input.market, date, self.settings.m_window)?;
        let realized: Vec<f64> = input.realized.iter().map(|e| e.daily_return).collect();
        let risk = effective_risk(&self.profile, &realized);

        let query = self.embedder.embed(&self.query_text(date, risk))?;
        let layer_sizes = self.store.layer_sizes(&self.profile.ticker);
        let retrieval =
            self.store
                .retrieve_top_k(&self.profile.ticker, &query, date, self.settings.k_top)?;
        let retrieved = Layer::ALL.map(|l| retrieval.layer(l).len());

        let reflection = reflect_immediate(
            &self.profile,
            risk,
            &indication,
            &retrieval,
            &self.gateway,
            date,
            self.settings.temperature,
        );
        let cited: Vec<u64> = reflection.cited.iter().flatten().copied().collect();
        let promoted = self.store.register_access(&cited, date)?;

        let mut extended = None;
        if phase == Phase::Test {
            self.reflections.push(reflection.clone());
            let ext = reflect_extended(
                &self.profile,
                &self.reflections,
                input.realized,
                self.settings.m_window,
                &self.gateway,
                self.embedder.as_ref(),
                &mut self.store,
                date,
            )?;
            extended = Some(ext);
        }

        let decision = TradeDecision {
            date,
            phase,
            action: match phase {
                Phase::Train => None,
                Phase::Test => Some(reflection.direction.unwrap_or(Action::Hold)),
            },
            effective_risk: risk,
            rationale: reflection.rationale.clone(),
            cited_ids: cited,
        };
        let trace = StepTrace {
            date,
            phase,
            documents_ingested: ingested,
            documents_skipped: skipped,
            purged,
            layer_sizes,
            retrieved,
            promoted,
            degraded: reflection.degraded,
            extended,
        };
        Ok((decision, trace))
    }

    pub fn into_store(self) -> MemoryStore {
        self.store
    }
}
