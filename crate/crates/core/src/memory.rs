//! Layered long-term memory.
//!
//! Events live in one of three layers with progressively slower decay. Each
//! event is scored against a query by
//!
//! ```text
//! gamma = exp(-δ/Q) + max(0, cos(m_E, m_P)) + min(1, (v + bonus)·α^δ / 100)
//! ```
//!
//! where δ is the age in calendar days since the event's anchor date, Q and α
//! are per-layer constants and v ∈ {40, 60, 80} is sampled once at ingestion
//! from a per-layer categorical distribution. Events whose recency drops below
//! 0.05 or whose unscaled importance drops below 5 are purged. Every citation
//! adds 5 importance points; enough citations move an event one layer deeper
//! and reset its anchor date.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{BufRead, Write};

use chrono::NaiveDate;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::embedding::{cosine, EmbedError, EmbeddingVector};
use crate::market_data::DocumentKind;

pub const IMPORTANCE_VALUES: [u32; 3] = [40, 60, 80];
pub const ACCESS_BONUS_POINTS: u32 = 5;
pub const RECENCY_PURGE_THRESHOLD: f64 = 0.05;
pub const IMPORTANCE_PURGE_THRESHOLD: f64 = 5.0;
/// Divisor mapping raw importance points onto [0, 1] before clamping.
pub const IMPORTANCE_NORMALIZER: f64 = 100.0;
pub const DEFAULT_PROMOTION_THRESHOLD: u32 = 3;

/// ChaCha stream id reserved for importance sampling.
const IMPORTANCE_STREAM: u64 = 0x696d_706f_7274; // "import"

#[derive(Debug, thiserror::Error)]
pub enum MemoryError {
    #[error("memory text is empty")]
    EmptyText,
    #[error("query date {query} precedes event anchor date {anchor}")]
    FutureEvent { anchor: NaiveDate, query: NaiveDate },
    #[error("unknown memory event id {0}")]
    UnknownEventId(u64),
    #[error("top-k requires k >= 1")]
    InvalidK,
    #[error("invalid layer parameters for {layer}: {reason}")]
    InvalidParams { layer: Layer, reason: String },
    #[error(transparent)]
    Embedding(#[from] EmbedError),
    #[error("snapshot line {line}: {reason}")]
    Snapshot { line: usize, reason: String },
    #[error("snapshot io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Layer {
    Shallow,
    Intermediate,
    Deep,
}

impl Layer {
    pub const ALL: [Layer; 3] = [Layer::Shallow, Layer::Intermediate, Layer::Deep];

    pub fn index(self) -> usize {
        self as usize
    }

    /// The next layer down, or `None` at the deep layer.
    pub fn deeper(self) -> Option<Layer> {
        match self {
            Layer::Shallow => Some(Layer::Intermediate),
            Layer::Intermediate => Some(Layer::Deep),
            Layer::Deep => None,
        }
    }

    pub fn for_document(kind: DocumentKind) -> Layer {
        match kind {
            DocumentKind::News => Layer::Shallow,
            DocumentKind::Filing10Q => Layer::Intermediate,
            DocumentKind::Filing10K => Layer::Deep,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Layer::Shallow => "shallow",
            Layer::Intermediate => "intermediate",
            Layer::Deep => "deep",
        }
    }
}

impl fmt::Display for Layer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerParams {
    /// Stability Q in days.
    pub q_stability: f64,
    /// Per-day importance decay base α.
    pub alpha: f64,
    /// Probabilities of importance values 40, 60, 80.
    pub importance_probs: [f64; 3],
}

impl LayerParams {
    pub const SHALLOW: LayerParams = LayerParams {
        q_stability: 14.0,
        alpha: 0.9,
        importance_probs: [0.8, 0.15, 0.05],
    };
    pub const INTERMEDIATE: LayerParams = LayerParams {
        q_stability: 90.0,
        alpha: 0.967,
        importance_probs: [0.05, 0.8, 0.15],
    };
    pub const DEEP: LayerParams = LayerParams {
        q_stability: 365.0,
        alpha: 0.988,
        importance_probs: [0.05, 0.15, 0.8],
    };

    fn validate(&self, layer: Layer) -> Result<(), MemoryError> {
        let fail = |reason: String| Err(MemoryError::InvalidParams { layer, reason });
        if !(self.q_stability.is_finite() && self.q_stability > 0.0) {
            return fail(format!("q_stability must be > 0, got {}", self.q_stability));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return fail(format!("alpha must lie in (0, 1), got {}", self.alpha));
        }
        if self.importance_probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return fail("importance_probs must lie in [0, 1]".into());
        }
        let total: f64 = self.importance_probs.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return fail(format!("importance_probs must sum to 1, got {total}"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MemoryParams {
    pub shallow: LayerParams,
    pub intermediate: LayerParams,
    pub deep: LayerParams,
    /// Citations needed to move an event one layer deeper.
    pub promotion_threshold: u32,
}

impl Default for MemoryParams {
    fn default() -> Self {
        Self {
            shallow: LayerParams::SHALLOW,
            intermediate: LayerParams::INTERMEDIATE,
            deep: LayerParams::DEEP,
            promotion_threshold: DEFAULT_PROMOTION_THRESHOLD,
        }
    }
}

impl MemoryParams {
    pub fn layer(&self, layer: Layer) -> &LayerParams {
        match layer {
            Layer::Shallow => &self.shallow,
            Layer::Intermediate => &self.intermediate,
            Layer::Deep => &self.deep,
        }
    }

    pub fn validate(&self) -> Result<(), MemoryError> {
        for layer in Layer::ALL {
            self.layer(layer).validate(layer)?;
        }
        if self.promotion_threshold == 0 {
            return Err(MemoryError::InvalidParams {
                layer: Layer::Shallow,
                reason: "promotion_threshold must be >= 1".into(),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceKind {
    News,
    Filing10Q,
    Filing10K,
    ExtendedReflection,
}

impl From<DocumentKind> for SourceKind {
    fn from(kind: DocumentKind) -> Self {
        match kind {
            DocumentKind::News => SourceKind::News,
            DocumentKind::Filing10Q => SourceKind::Filing10Q,
            DocumentKind::Filing10K => SourceKind::Filing10K,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MemoryEvent {
    pub id: u64,
    pub ticker: String,
    pub layer: Layer,
    pub text: String,
    pub vector: EmbeddingVector,
    /// Creation date; reset when the event is promoted.
    pub anchor_date: NaiveDate,
    /// Sampled once at ingestion, never changed.
    pub importance_value: u32,
    /// 5 points per citation over the event's lifetime.
    pub access_bonus: u32,
    /// Citations since ingestion or the last promotion.
    pub access_count: u32,
    pub source_kind: SourceKind,
}

impl MemoryEvent {
    pub fn age_days(&self, query_date: NaiveDate) -> Result<i64, MemoryError> {
        let delta = (query_date - self.anchor_date).num_days();
        if delta < 0 {
            return Err(MemoryError::FutureEvent {
                anchor: self.anchor_date,
                query: query_date,
            });
        }
        Ok(delta)
    }
}

/// exp(-δ/Q).
pub fn recency(age_days: i64, q_stability: f64) -> f64 {
    (-(age_days as f64) / q_stability).exp()
}

/// α^δ.
pub fn importance_decay(age_days: i64, alpha: f64) -> f64 {
    alpha.powf(age_days as f64)
}

/// (v + bonus)·α^δ, unscaled.
pub fn importance_raw(points: u32, age_days: i64, alpha: f64) -> f64 {
    points as f64 * importance_decay(age_days, alpha)
}

/// Inverse-CDF draw over [`IMPORTANCE_VALUES`] for a uniform `u` in [0, 1).
pub fn importance_for_draw(probs: &[f64; 3], u: f64) -> u32 {
    if u < probs[0] {
        IMPORTANCE_VALUES[0]
    } else if u < probs[0] + probs[1] {
        IMPORTANCE_VALUES[1]
    } else {
        IMPORTANCE_VALUES[2]
    }
}

pub fn sample_importance<R: Rng + ?Sized>(probs: &[f64; 3], rng: &mut R) -> u32 {
    importance_for_draw(probs, rng.gen::<f64>())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoredEvent {
    pub id: u64,
    pub recency: f64,
    pub relevancy: f64,
    pub importance: f64,
    pub gamma: f64,
}

pub fn recency_score(
    params: &MemoryParams,
    event: &MemoryEvent,
    query_date: NaiveDate,
) -> Result<f64, MemoryError> {
    let age = event.age_days(query_date)?;
    Ok(recency(age, params.layer(event.layer).q_stability))
}

/// Cosine similarity with negative values clamped to 0.
pub fn relevancy_score(event: &MemoryEvent, query: &EmbeddingVector) -> Result<f64, MemoryError> {
    Ok(cosine(&event.vector, query)?.max(0.0))
}

pub fn importance_score_raw(
    params: &MemoryParams,
    event: &MemoryEvent,
    query_date: NaiveDate,
) -> Result<f64, MemoryError> {
    let age = event.age_days(query_date)?;
    Ok(importance_raw(
        event.importance_value + event.access_bonus,
        age,
        params.layer(event.layer).alpha,
    ))
}

pub fn retrieval_score(
    params: &MemoryParams,
    event: &MemoryEvent,
    query: &EmbeddingVector,
    query_date: NaiveDate,
) -> Result<ScoredEvent, MemoryError> {
    let recency = recency_score(params, event, query_date)?;
    let relevancy = relevancy_score(event, query)?;
    let importance =
        (importance_score_raw(params, event, query_date)? / IMPORTANCE_NORMALIZER).min(1.0);
    Ok(ScoredEvent {
        id: event.id,
        recency,
        relevancy,
        importance,
        gamma: recency + relevancy + importance,
    })
}

/// True when the event falls under either purge threshold at `query_date`.
pub fn should_purge(
    params: &MemoryParams,
    event: &MemoryEvent,
    query_date: NaiveDate,
) -> Result<bool, MemoryError> {
    Ok(recency_score(params, event, query_date)? < RECENCY_PURGE_THRESHOLD
        || importance_score_raw(params, event, query_date)? < IMPORTANCE_PURGE_THRESHOLD)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RetrievedEvent {
    pub event: MemoryEvent,
    pub score: ScoredEvent,
}

/// Top-k retrieval result, one list per layer in descending gamma order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LayeredRetrieval {
    pub layers: [Vec<RetrievedEvent>; 3],
}

impl LayeredRetrieval {
    pub fn layer(&self, layer: Layer) -> &[RetrievedEvent] {
        &self.layers[layer.index()]
    }

    pub fn total(&self) -> usize {
        self.layers.iter().map(Vec::len).sum()
    }

    pub fn ids(&self, layer: Layer) -> Vec<u64> {
        self.layer(layer).iter().map(|r| r.event.id).collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = (Layer, &RetrievedEvent)> {
        Layer::ALL
            .into_iter()
            .flat_map(move |l| self.layer(l).iter().map(move |r| (l, r)))
    }
}

/// Input for [`MemoryStore::ingest`].
#[derive(Debug, Clone)]
pub struct NewMemory {
    pub ticker: String,
    pub layer: Layer,
    pub text: String,
    pub vector: EmbeddingVector,
    pub date: NaiveDate,
    pub source_kind: SourceKind,
}

/// In-process event store with linear-scan retrieval.
#[derive(Debug, Clone)]
pub struct MemoryStore {
    params: MemoryParams,
    events: BTreeMap<u64, MemoryEvent>,
    next_id: u64,
    rng: ChaCha8Rng,
}

impl MemoryStore {
    pub fn new(params: MemoryParams, seed: u64) -> Result<Self, MemoryError> {
        params.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(IMPORTANCE_STREAM);
        Ok(Self {
            params,
            events: BTreeMap::new(),
            next_id: 1,
            rng,
        })
    }

    pub fn params(&self) -> &MemoryParams {
        &self.params
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn get(&self, id: u64) -> Option<&MemoryEvent> {
        self.events.get(&id)
    }

    pub fn contains(&self, id: u64) -> bool {
        self.events.contains_key(&id)
    }

    /// Events in ascending id order.
    pub fn events(&self) -> impl Iterator<Item = &MemoryEvent> {
        self.events.values()
    }

    pub fn layer_events<'a>(
        &'a self,
        ticker: &'a str,
        layer: Layer,
    ) -> impl Iterator<Item = &'a MemoryEvent> + 'a {
        self.events
            .values()
            .filter(move |e| e.layer == layer && e.ticker == ticker)
    }

    pub fn layer_sizes(&self, ticker: &str) -> [usize; 3] {
        let mut sizes = [0; 3];
        for e in self.events.values().filter(|e| e.ticker == ticker) {
            sizes[e.layer.index()] += 1;
        }
        sizes
    }

    /// Stores a new event, drawing its importance value from the store's
    /// seeded importance stream.
    pub fn ingest(&mut self, memory: NewMemory) -> Result<&MemoryEvent, MemoryError> {
        if memory.text.trim().is_empty() {
            return Err(MemoryError::EmptyText);
        }
        let probs = self.params.layer(memory.layer).importance_probs;
        let value = sample_importance(&probs, &mut self.rng);
        Ok(self.insert(memory, value))
    }

    /// Like [`ingest`](Self::ingest) but draws importance from `rng`.
    pub fn ingest_with_rng<R: Rng + ?Sized>(
        &mut self,
        memory: NewMemory,
        rng: &mut R,
    ) -> Result<&MemoryEvent, MemoryError> {
        if memory.text.trim().is_empty() {
            return Err(MemoryError::EmptyText);
        }
        let probs = self.params.layer(memory.layer).importance_probs;
        let value = sample_importance(&probs, rng);
        Ok(self.insert(memory, value))
    }

    fn insert(&mut self, memory: NewMemory, importance_value: u32) -> &MemoryEvent {
        let id = self.next_id;
        self.next_id += 1;
        let event = MemoryEvent {
            id,
            ticker: memory.ticker,
            layer: memory.layer,
            text: memory.text,
            vector: memory.vector,
            anchor_date: memory.date,
            importance_value,
            access_bonus: 0,
            access_count: 0,
            source_kind: memory.source_kind,
        };
        self.events.entry(id).or_insert(event)
    }

    pub fn score(
        &self,
        event: &MemoryEvent,
        query: &EmbeddingVector,
        query_date: NaiveDate,
    ) -> Result<ScoredEvent, MemoryError> {
        retrieval_score(&self.params, event, query, query_date)
    }

    /// The k highest-gamma events of each layer for `ticker`. Ties go to the
    /// newer (higher) id.
    pub fn retrieve_top_k(
        &self,
        ticker: &str,
        query: &EmbeddingVector,
        query_date: NaiveDate,
        k: usize,
    ) -> Result<LayeredRetrieval, MemoryError> {
        if k == 0 {
            return Err(MemoryError::InvalidK);
        }
        let mut out = LayeredRetrieval::default();
        for layer in Layer::ALL {
            let mut scored = self
                .layer_events(ticker, layer)
                .map(|e| {
                    self.score(e, query, query_date).map(|score| RetrievedEvent {
                        event: e.clone(),
                        score,
                    })
                })
                .collect::<Result<Vec<_>, _>>()?;
            scored.sort_by(|a, b| {
                b.score
                    .gamma
                    .total_cmp(&a.score.gamma)
                    .then(b.event.id.cmp(&a.event.id))
            });
            scored.truncate(k);
            out.layers[layer.index()] = scored;
        }
        Ok(out)
    }

    /// Removes every event below either purge threshold at `query_date` and
    /// returns the removed ids in ascending order. Events anchored after
    /// `query_date` are left alone.
    pub fn decay_and_purge(&mut self, query_date: NaiveDate) -> Vec<u64> {
        let params = &self.params;
        let purged: Vec<u64> = self
            .events
            .values()
            .filter(|e| should_purge(params, e, query_date).unwrap_or(false))
            .map(|e| e.id)
            .collect();
        for id in &purged {
            self.events.remove(id);
        }
        purged
    }

    /// Records one citation for each distinct id. Returns the ids promoted to
    /// a deeper layer. Fails without mutating anything if any id is unknown.
    pub fn register_access(
        &mut self,
        cited: &[u64],
        query_date: NaiveDate,
    ) -> Result<Vec<u64>, MemoryError> {
        let ids: BTreeSet<u64> = cited.iter().copied().collect();
        if let Some(&missing) = ids.iter().find(|id| !self.events.contains_key(id)) {
            return Err(MemoryError::UnknownEventId(missing));
        }
        let threshold = self.params.promotion_threshold;
        let mut promoted = Vec::new();
        for id in ids {
            let event = self.events.get_mut(&id).expect("checked above");
            event.access_count += 1;
            event.access_bonus += ACCESS_BONUS_POINTS;
            if event.access_count >= threshold {
                if let Some(next) = event.layer.deeper() {
                    event.layer = next;
                    event.anchor_date = query_date;
                    event.access_count = 0;
                    promoted.push(id);
                }
            }
        }
        Ok(promoted)
    }

    /// Writes one JSON event per line in ascending id order.
    pub fn save_snapshot(&self, mut writer: impl Write) -> Result<(), MemoryError> {
        for event in self.events.values() {
            serde_json::to_writer(&mut writer, event).map_err(std::io::Error::from)?;
            writer.write_all(b"\n")?;
        }
        Ok(())
    }

    /// Rebuilds a store from a snapshot. New ids continue after the largest
    /// loaded id; the importance stream restarts from `seed`.
    pub fn load_snapshot(
        reader: impl BufRead,
        params: MemoryParams,
        seed: u64,
    ) -> Result<Self, MemoryError> {
        let mut store = Self::new(params, seed)?;
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let event: MemoryEvent =
                serde_json::from_str(&line).map_err(|e| MemoryError::Snapshot {
                    line: i + 1,
                    reason: e.to_string(),
                })?;
            if store.events.contains_key(&event.id) {
                return Err(MemoryError::Snapshot {
                    line: i + 1,
                    reason: format!("duplicate id {}", event.id),
                });
            }
            store.next_id = store.next_id.max(event.id + 1);
            store.events.insert(event.id, event);
        }
        Ok(store)
    }
}
