//! Independent oracles and fixture helpers shared by the integration tests.
#![allow(dead_code)]

use std::sync::Arc;

use chrono::NaiveDate;
use finmem_core::agent::{
    build_profile, AgentSettings, EffectiveRisk, FinMemAgent, ProfileCatalog, RiskMode,
};
use finmem_core::backtest::{self, BacktestOutcome, BacktestSettings, Windows};
use finmem_core::embedding::{EmbeddingVector, HashEmbedder};
use finmem_core::llm::{Gateway, LlmError, LlmProvider, MockProvider, ProviderRequest, Rulebook, TemplateId};
use finmem_core::market_data::Warehouse;
use finmem_core::memory::{Layer, MemoryEvent, MemoryParams, MemoryStore, NewMemory, SourceKind};
use finmem_core::synthetic::{generate, SyntheticData, SyntheticSpec};
use proptest::prelude::*;

pub fn day(n: i64) -> NaiveDate {
    NaiveDate::from_ymd_opt(2022, 1, 1).unwrap() + chrono::Duration::days(n)
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (a - b).abs() / a.abs().max(b.abs())
    }
}

// Scoring, evaluated from the closed forms.

pub fn recency(delta: i64, q: f64) -> f64 {
    std::f64::consts::E.powf(-(delta as f64) / q)
}

pub fn decay(delta: i64, alpha: f64) -> f64 {
    (delta as f64 * alpha.ln()).exp()
}

pub fn importance(points: u32, delta: i64, alpha: f64) -> f64 {
    points as f64 * decay(delta, alpha)
}

pub fn layer_qa(params: &MemoryParams, layer: Layer) -> (f64, f64) {
    let p = match layer {
        Layer::Shallow => params.shallow,
        Layer::Intermediate => params.intermediate,
        Layer::Deep => params.deep,
    };
    (p.q_stability, p.alpha)
}

pub fn age(e: &MemoryEvent, date: NaiveDate) -> i64 {
    (date - e.anchor_date).num_days()
}

pub fn should_purge(params: &MemoryParams, e: &MemoryEvent, date: NaiveDate) -> bool {
    let (q, a) = layer_qa(params, e.layer);
    let d = age(e, date);
    recency(d, q) < 0.05 || importance(e.importance_value + e.access_bonus, d, a) < 5.0
}

/// Score every event, sort the whole layer, keep k. Ties go to the higher id.
pub fn top_k(
    params: &MemoryParams,
    events: &[MemoryEvent],
    query: &[f64],
    date: NaiveDate,
    k: usize,
) -> [Vec<u64>; 3] {
    let mut out: [Vec<u64>; 3] = Default::default();
    for (slot, layer) in [Layer::Shallow, Layer::Intermediate, Layer::Deep].into_iter().enumerate() {
        let (q, a) = layer_qa(params, layer);
        let mut scored: Vec<(f64, u64)> = events
            .iter()
            .filter(|e| e.layer == layer)
            .map(|e| {
                let d = age(e, date);
                let mut dot = 0.0;
                for (x, y) in e.vector.as_slice().iter().zip(query) {
                    dot += x * y;
                }
                let rel = dot.clamp(-1.0, 1.0).max(0.0);
                let imp = (e.importance_value + e.access_bonus) as f64 * a.powf(d as f64) / 100.0;
                (recency(d, q) + rel + imp.min(1.0), e.id)
            })
            .collect();
        // Bubble sort on (gamma desc, id desc).
        for i in 0..scored.len() {
            for j in 0..scored.len() - 1 - i {
                let (ga, ia) = scored[j];
                let (gb, ib) = scored[j + 1];
                if gb > ga || (gb == ga && ib > ia) {
                    scored.swap(j, j + 1);
                }
            }
        }
        out[slot] = scored.into_iter().take(k).map(|(_, id)| id).collect();
    }
    out
}

// Metrics.

pub fn cumulative_return(r: &[f64]) -> f64 {
    let mut s = 0.0;
    for x in r {
        s += x;
    }
    100.0 * s
}

fn two_pass_std(r: &[f64]) -> f64 {
    let n = r.len() as f64;
    let mean = r.iter().sum::<f64>() / n;
    let var = r.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    var.sqrt()
}

pub fn sharpe(r: &[f64], rf: f64, annualize: bool) -> Option<f64> {
    if r.len() < 2 {
        return None;
    }
    let sd = two_pass_std(r);
    if sd == 0.0 || r.iter().all(|x| *x == r[0]) {
        return None;
    }
    let n = r.len() as f64;
    let excess: f64 = r.iter().map(|x| x - rf).sum::<f64>() / n;
    let s = excess / sd;
    Some(if annualize { s * 252f64.sqrt() } else { s })
}

pub fn daily_vol(r: &[f64]) -> f64 {
    if r.iter().all(|x| *x == r[0]) {
        return 0.0;
    }
    100.0 * two_pass_std(r)
}

/// Enumerates every (peak, trough) pair on the equity curve including V₀ = 1.
pub fn max_drawdown(r: &[f64]) -> f64 {
    let mut equity = vec![1.0];
    let mut acc = 0.0;
    for x in r {
        acc += x;
        equity.push(f64::exp(acc));
    }
    let mut worst = 0.0_f64;
    for i in 0..equity.len() {
        for j in i..equity.len() {
            worst = worst.max((equity[i] - equity[j]) / equity[i]);
        }
    }
    100.0 * worst
}

/// Expected effective risk for every day of a path: day t sees returns[..t].
pub fn risk_scan(returns: &[f64], window: usize) -> Vec<EffectiveRisk> {
    (0..returns.len())
        .map(|t| {
            let lo = t.saturating_sub(window);
            let mut sum = 0.0;
            for x in &returns[lo..t] {
                sum += x;
            }
            if sum < 0.0 {
                EffectiveRisk::Averse
            } else {
                EffectiveRisk::Seeking
            }
        })
        .collect()
}

// Fixtures.

pub struct Fixture {
    pub data: SyntheticData,
    pub warehouse: Warehouse,
    pub catalog: ProfileCatalog,
    pub windows: Windows,
}

pub const TRAIN_DAYS: usize = 20;

pub fn fixture(spec: &SyntheticSpec) -> Fixture {
    let data = generate(spec);
    let mut warehouse = Warehouse::new();
    warehouse.insert_prices(data.prices.clone());
    warehouse.insert_documents(data.documents.clone()).unwrap();
    let catalog = ProfileCatalog::from_entries([data.metadata.clone()]);
    let windows = data.windows(TRAIN_DAYS);
    Fixture {
        data,
        warehouse,
        catalog,
        windows,
    }
}

pub fn agent_with(
    fx: &Fixture,
    provider: Arc<dyn LlmProvider>,
    risk: RiskMode,
    settings: AgentSettings,
    seed: u64,
) -> FinMemAgent {
    let profile = build_profile(
        fx.data.prices.ticker(),
        &fx.warehouse,
        &fx.catalog,
        (fx.windows.train_start, fx.windows.train_end),
        risk,
        3,
    )
    .unwrap();
    FinMemAgent::new(
        profile,
        settings,
        Gateway::new(provider),
        Arc::new(HashEmbedder::default()),
        MemoryStore::new(MemoryParams::default(), seed).unwrap(),
    )
}

pub fn mock() -> Arc<dyn LlmProvider> {
    Arc::new(MockProvider::new(Rulebook::default()).unwrap())
}

pub fn run_mock(fx: &Fixture, risk: RiskMode, k: usize, seed: u64) -> (BacktestOutcome, FinMemAgent) {
    let settings = AgentSettings {
        k_top: k,
        ..AgentSettings::default()
    };
    let mut agent = agent_with(fx, mock(), risk, settings, seed);
    let out = backtest::run(&mut agent, &fx.warehouse, &fx.windows, &BacktestSettings::default())
        .unwrap();
    (out, agent)
}

/// Mock summaries and extended reflections, but every test-phase reflection
/// returns the same direction and cites nothing.
pub struct FixedDirection {
    inner: MockProvider,
    direction: &'static str,
}

impl FixedDirection {
    pub fn provider(direction: &'static str) -> Arc<dyn LlmProvider> {
        Arc::new(Self {
            inner: MockProvider::new(Rulebook::default()).unwrap(),
            direction,
        })
    }
}

impl LlmProvider for FixedDirection {
    fn name(&self) -> &str {
        "fixed"
    }

    fn complete(&self, req: &ProviderRequest<'_>) -> Result<String, LlmError> {
        if req.template == TemplateId::ImmediateReflectTest {
            return Ok(format!(
                r#"{{"direction":"{}","rationale":"fixed","shallow_ids":[],"intermediate_ids":[],"deep_ids":[]}}"#,
                self.direction
            ));
        }
        self.inner.complete(req)
    }
}

// Random stores and histories.

#[derive(Debug, Clone)]
pub struct EventSpec {
    pub layer: usize,
    pub offset: i64,
    pub vector: usize,
    pub citations: usize,
}

#[derive(Debug, Clone)]
pub struct StoreCase {
    pub pool: Vec<Vec<f64>>,
    pub events: Vec<EventSpec>,
    pub query: usize,
    pub extra_days: i64,
    pub k: usize,
    pub seed: u64,
}

pub const LAYERS: [Layer; 3] = [Layer::Shallow, Layer::Intermediate, Layer::Deep];

pub fn store_case(max_events: usize) -> impl Strategy<Value = StoreCase> {
    let pool = prop::collection::vec(prop::collection::vec(-1.0f64..1.0, 8), 1..6);
    (pool, 0..=max_events).prop_flat_map(|(pool, n)| {
        let np = pool.len();
        let event = (0..3usize, 0..60i64, 0..np, 0..5usize).prop_map(|(layer, offset, vector, citations)| {
            EventSpec {
                layer,
                offset,
                vector,
                citations,
            }
        });
        (
            Just(pool),
            prop::collection::vec(event, n),
            0..np + 1,
            0..30i64,
            1..12usize,
            any::<u64>(),
        )
            .prop_map(|(pool, events, query, extra_days, k, seed)| StoreCase {
                pool,
                events,
                query,
                extra_days,
                k,
                seed,
            })
    })
}

pub fn unit(v: &[f64]) -> EmbeddingVector {
    EmbeddingVector::normalized(v.to_vec()).unwrap()
}

/// Builds the store described by `case` and returns it with the query vector and date.
pub fn build_store(case: &StoreCase) -> (MemoryStore, EmbeddingVector, NaiveDate) {
    let params = MemoryParams::default();
    let mut store = MemoryStore::new(params, case.seed).unwrap();
    let last = case.events.iter().map(|e| e.offset).max().unwrap_or(0);
    let cite_day = day(last);
    let mut ids = Vec::new();
    for (i, e) in case.events.iter().enumerate() {
        let id = store
            .ingest(NewMemory {
                ticker: "T".into(),
                layer: LAYERS[e.layer],
                text: format!("event {i}"),
                vector: unit(&case.pool[e.vector]),
                date: day(e.offset),
                source_kind: SourceKind::News,
            })
            .unwrap()
            .id;
        ids.push(id);
    }
    for (e, id) in case.events.iter().zip(&ids) {
        for _ in 0..e.citations {
            store.register_access(&[*id], cite_day).unwrap();
        }
    }
    let query = match case.pool.get(case.query) {
        Some(v) => unit(v),
        None => EmbeddingVector::basis(8, 3),
    };
    (store, query, day(last + case.extra_days))
}

pub fn check_retrieval(case: &StoreCase) -> Result<(), String> {
    let (store, query, date) = build_store(case);
    let got = store.retrieve_top_k("T", &query, date, case.k).map_err(|e| e.to_string())?;
    let events: Vec<MemoryEvent> = store.events().cloned().collect();
    let want = top_k(store.params(), &events, query.as_slice(), date, case.k);
    for (i, layer) in LAYERS.into_iter().enumerate() {
        if got.ids(layer) != want[i] {
            return Err(format!("{layer}: got {:?}, oracle {:?}", got.ids(layer), want[i]));
        }
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct HistoryDay {
    pub gap: i64,
    pub new_layers: Vec<usize>,
    pub cite_picks: Vec<usize>,
}

pub fn history(max_days: usize) -> impl Strategy<Value = (u64, Vec<HistoryDay>)> {
    let day_ops = (
        1..9i64,
        prop::collection::vec(0..3usize, 0..4),
        prop::collection::vec(0..64usize, 0..5),
    )
        .prop_map(|(gap, new_layers, cite_picks)| HistoryDay {
            gap,
            new_layers,
            cite_picks,
        });
    (any::<u64>(), prop::collection::vec(day_ops, 1..max_days))
}

#[derive(Debug, Clone, PartialEq)]
struct Model {
    layer: Layer,
    anchor: NaiveDate,
    value: u32,
    bonus: u32,
    count: u32,
}

/// Replays a random history against the store and a hand-written model of
/// citation, promotion and purge rules.
pub fn check_lifecycle(seed: u64, days: &[HistoryDay]) -> Result<(), String> {
    let params = MemoryParams::default();
    let mut store = MemoryStore::new(params.clone(), seed).unwrap();
    let mut model: std::collections::BTreeMap<u64, Model> = Default::default();
    let mut offset = 0;
    for (n, ops) in days.iter().enumerate() {
        offset += ops.gap;
        let today = day(offset);
        for (j, &l) in ops.new_layers.iter().enumerate() {
            let e = store
                .ingest(NewMemory {
                    ticker: "T".into(),
                    layer: LAYERS[l],
                    text: format!("day {n} item {j}"),
                    vector: EmbeddingVector::basis(4, l),
                    date: today,
                    source_kind: SourceKind::News,
                })
                .unwrap();
            model.insert(
                e.id,
                Model {
                    layer: e.layer,
                    anchor: today,
                    value: e.importance_value,
                    bonus: 0,
                    count: 0,
                },
            );
        }

        let live: Vec<u64> = model.keys().copied().collect();
        let mut cited: Vec<u64> = ops
            .cite_picks
            .iter()
            .filter(|_| !live.is_empty())
            .map(|p| live[p % live.len()])
            .collect();
        cited.sort_unstable();
        cited.dedup();
        let count_before = store.len();
        let promoted = store.register_access(&cited, today).map_err(|e| e.to_string())?;
        if store.len() != count_before {
            return Err("citation changed the event count".into());
        }
        let mut expected_promoted = Vec::new();
        for id in &cited {
            let m = model.get_mut(id).unwrap();
            m.bonus += 5;
            m.count += 1;
            if m.count == 3 && m.layer != Layer::Deep {
                m.layer = match m.layer {
                    Layer::Shallow => Layer::Intermediate,
                    _ => Layer::Deep,
                };
                m.anchor = today;
                m.count = 0;
                expected_promoted.push(*id);
            }
        }
        if promoted != expected_promoted {
            return Err(format!("day {n}: promoted {promoted:?}, model {expected_promoted:?}"));
        }
        for id in &promoted {
            let e = store.get(*id).unwrap();
            let (q, _) = layer_qa(&params, e.layer);
            if recency(age(e, today), q) != 1.0 {
                return Err(format!("promoted {id} recency not reset"));
            }
        }

        let expected_purge: Vec<u64> = store
            .events()
            .filter(|e| should_purge(&params, e, today))
            .map(|e| e.id)
            .collect();
        let purged = store.decay_and_purge(today);
        if purged != expected_purge {
            return Err(format!("day {n}: purged {purged:?}, oracle {expected_purge:?}"));
        }
        for id in &purged {
            model.remove(id);
        }
        if let Some(e) = store.events().find(|e| should_purge(&params, e, today)) {
            return Err(format!("survivor {} violates a threshold", e.id));
        }

        for e in store.events() {
            let m = model.get(&e.id).ok_or(format!("unexpected event {}", e.id))?;
            let got = Model {
                layer: e.layer,
                anchor: e.anchor_date,
                value: e.importance_value,
                bonus: e.access_bonus,
                count: e.access_count,
            };
            // Deep events keep counting citations; their count is not compared.
            let comparable = |x: &Model| Model {
                count: if x.layer == Layer::Deep { 0 } else { x.count },
                ..x.clone()
            };
            if comparable(&got) != comparable(m) {
                return Err(format!("day {n}: event {} is {got:?}, model {m:?}", e.id));
            }
        }
        if store.len() != model.len() {
            return Err("store and model disagree on size".into());
        }
    }
    Ok(())
}
