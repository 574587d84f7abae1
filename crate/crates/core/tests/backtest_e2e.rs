mod common;

use common::*;
use finmem_core::agent::*;
use finmem_core::backtest::{self, Action, BacktestSettings};
use finmem_core::market_data::DocumentKind;
use finmem_core::memory::{Layer, SourceKind};
use finmem_core::synthetic::SyntheticSpec;

fn snapshot(agent: &FinMemAgent) -> Vec<u8> {
    let mut buf = Vec::new();
    agent.store().save_snapshot(&mut buf).unwrap();
    buf
}

#[test]
fn replay_is_identical() {
    let fx = fixture(&SyntheticSpec::leading_news(7));
    let (a, agent_a) = run_mock(&fx, RiskMode::SelfAdaptive, 5, 7);
    let (b, agent_b) = run_mock(&fx, RiskMode::SelfAdaptive, 5, 7);
    assert_eq!(a.decisions, b.decisions);
    assert_eq!(a.ledger, b.ledger);
    assert_eq!(a.report, b.report);
    assert_eq!(snapshot(&agent_a), snapshot(&agent_b));
}

fn forced(direction: &'static str) -> backtest::BacktestOutcome {
    let fx = fixture(&SyntheticSpec::leading_news(4));
    let mut agent = agent_with(&fx, FixedDirection::provider(direction), RiskMode::RiskSeeking, AgentSettings::default(), 4);
    backtest::run(&mut agent, &fx.warehouse, &fx.windows, &BacktestSettings::default()).unwrap()
}

#[test]
fn all_buy_equals_buy_and_hold() {
    let out = forced("Buy");
    assert_eq!(out.ledger, out.baseline_ledger);
    assert_eq!(out.report, out.baseline_report);
}

#[test]
fn all_hold_is_degenerate() {
    let out = forced("Hold");
    assert_eq!(out.report.cumulative_return, 0.0);
    assert_eq!(out.report.daily_volatility, Some(0.0));
    assert_eq!(out.report.annualized_volatility, Some(0.0));
    assert_eq!(out.report.sharpe, None);
    assert!(out.report.degenerate.iter().any(|d| d.starts_with("sharpe")));
    assert_eq!(out.report.max_drawdown, 0.0);
}

#[test]
fn training_days_take_no_position() {
    let fx = fixture(&SyntheticSpec::leading_news(5));
    let (out, _) = run_mock(&fx, RiskMode::RiskSeeking, 5, 5);
    let train: Vec<_> = out.decisions.iter().filter(|d| d.phase == Phase::Train).collect();
    assert_eq!(train.len(), TRAIN_DAYS);
    assert!(train.iter().all(|d| d.action.is_none()));
    let test_days = out.decisions.len() - TRAIN_DAYS;
    assert_eq!(out.ledger.len(), test_days);
    assert_eq!(out.ledger.entries()[0].date, fx.windows.test_start);
}

#[test]
fn extended_reflection_each_test_day_matches_ledger() {
    let fx = fixture(&SyntheticSpec::leading_news(6));
    let (out, agent) = run_mock(&fx, RiskMode::SelfAdaptive, 5, 6);
    let m = agent.settings().m_window;
    let entries = out.ledger.entries();
    let mut test_index = 0;
    for t in &out.traces {
        match t.phase {
            Phase::Train => assert!(t.extended.is_none()),
            Phase::Test => {
                let ext = t.extended.as_ref().expect("one extended reflection per test day");
                assert_eq!(ext.window_m, (test_index + 1).min(m));
                let lo = (test_index + 1).saturating_sub(m);
                let expected: f64 = entries[lo..test_index].iter().map(|e| e.daily_return).sum();
                assert_eq!(ext.window_return, expected, "{}", t.date);
                if let Some(e) = agent.store().get(ext.event_id) {
                    assert_eq!(e.layer, Layer::Deep);
                    assert_eq!(e.source_kind, SourceKind::ExtendedReflection);
                }
                test_index += 1;
            }
        }
    }
    assert_eq!(test_index, entries.len());
}

#[test]
fn every_document_becomes_one_memory() {
    let fx = fixture(&SyntheticSpec::leading_news(8));
    let (out, _) = run_mock(&fx, RiskMode::SelfAdaptive, 5, 8);
    let last = out.decisions.last().unwrap().date;
    let delivered: usize = out.traces.iter().map(|t| t.documents_ingested + t.documents_skipped.len()).sum();
    let expected = fx.data.documents.iter().filter(|d| d.date <= last).count();
    assert_eq!(delivered, expected);
    assert!(out.traces.iter().all(|t| t.documents_skipped.is_empty()));
    assert!(fx.data.documents.iter().any(|d| d.kind == DocumentKind::Filing10K));
}

#[test]
fn citations_increment_access_once() {
    let fx = fixture(&SyntheticSpec::leading_news(9));
    let mut agent = agent_with(&fx, mock(), RiskMode::SelfAdaptive, AgentSettings::default(), 9);
    let prices = fx.warehouse.prices("TSLA").unwrap();
    let mut previous = None;
    let days: Vec<_> = fx.windows.train_days(prices);
    for date in days {
        let before = agent.store().clone();
        let docs = fx.warehouse.documents_between("TSLA", previous, date);
        previous = Some(date);
        let (decision, trace) = agent
            .step(StepInput {
                date,
                market: MarketView::Train(prices),
                documents: docs,
                realized: &[],
            })
            .unwrap();
        for id in &decision.cited_ids {
            let after = agent.store().get(*id).unwrap();
            let prior = before.get(*id);
            let prior_count = prior.map_or(0, |e| e.access_count);
            let prior_bonus = prior.map_or(0, |e| e.access_bonus);
            assert_eq!(after.access_bonus, prior_bonus + 5);
            if trace.promoted.contains(id) {
                assert_eq!(prior_count + 1, 3);
                assert_eq!(after.access_count, 0);
                assert_eq!(after.anchor_date, date);
            } else {
                assert_eq!(after.access_count, prior_count + 1);
            }
        }
    }
}

#[test]
fn test_phase_never_sees_the_future() {
    let fx = fixture(&SyntheticSpec::leading_news(10));
    let (out, _) = run_mock(&fx, RiskMode::SelfAdaptive, 5, 10);
    let test: Vec<_> = out.audit.iter().filter(|a| a.phase == Phase::Test).collect();
    assert!(!test.is_empty());
    assert!(test.iter().all(|a| a.is_causal()), "{test:?}");
}

#[test]
fn all_sell_mirrors_buy_and_hold() {
    let out = forced("Sell");
    assert_eq!(out.report.cumulative_return, -out.baseline_report.cumulative_return);
    assert!(out.ledger.entries().iter().all(|e| e.action == Action::Sell));
}
