//! Train-then-test simulation loop.

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use super::{Action, BacktestError, PerformanceReport, TradeLedger};
use crate::agent::{FinMemAgent, MarketView, Phase, StepInput, StepTrace, TradeDecision};
use crate::market_data::{PriceSeries, Warehouse};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Windows {
    pub train_start: NaiveDate,
    pub train_end: NaiveDate,
    pub test_start: NaiveDate,
    pub test_end: NaiveDate,
}

impl Windows {
    /// Checks ordering and that every bound lies inside the price data.
    pub fn validate(&self, prices: &PriceSeries) -> Result<(), BacktestError> {
        if self.train_start > self.train_end {
            return Err(BacktestError::WindowOutOfRange(format!(
                "train_start {} is after train_end {}",
                self.train_start, self.train_end
            )));
        }
        if self.test_start > self.test_end {
            return Err(BacktestError::WindowOutOfRange(format!(
                "test_start {} is after test_end {}",
                self.test_start, self.test_end
            )));
        }
        if self.train_end >= self.test_start {
            return Err(BacktestError::OverlappingWindows {
                train_end: self.train_end,
                test_start: self.test_start,
            });
        }
        let rows = prices.rows();
        let (first, last) = match (rows.first(), rows.last()) {
            (Some(f), Some(l)) => (f.date, l.date),
            _ => {
                return Err(BacktestError::WindowOutOfRange(format!(
                    "no prices for {}",
                    prices.ticker()
                )))
            }
        };
        for (name, date) in [
            ("train_start", self.train_start),
            ("train_end", self.train_end),
            ("test_start", self.test_start),
            ("test_end", self.test_end),
        ] {
            if date < first || date > last {
                return Err(BacktestError::WindowOutOfRange(format!(
                    "{name} {date} outside data range {first}..={last}"
                )));
            }
        }
        Ok(())
    }

    /// Trading days in `[start, end]` that have a following trading day.
    fn decision_days(prices: &PriceSeries, start: NaiveDate, end: NaiveDate) -> Vec<NaiveDate> {
        let rows = prices.rows();
        rows.windows(2)
            .map(|w| w[0].date)
            .filter(|d| *d >= start && *d <= end)
            .collect()
    }

    pub fn train_days(&self, prices: &PriceSeries) -> Vec<NaiveDate> {
        Self::decision_days(prices, self.train_start, self.train_end)
    }

    pub fn test_days(&self, prices: &PriceSeries) -> Vec<NaiveDate> {
        Self::decision_days(prices, self.test_start, self.test_end)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BacktestSettings {
    pub risk_free_daily: f64,
    pub annualize_sharpe: bool,
}

impl Default for BacktestSettings {
    fn default() -> Self {
        Self {
            risk_free_daily: 0.0,
            annualize_sharpe: true,
        }
    }
}

/// What the agent could see on one step, recorded for the information-leak check.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditRecord {
    pub decision_date: NaiveDate,
    pub phase: Phase,
    /// Latest price row handed to the agent.
    pub latest_price_date: NaiveDate,
    /// Latest document date handed to the agent, if any.
    pub latest_document_date: Option<NaiveDate>,
    /// Latest anchor date in the memory store after the step.
    pub latest_anchor_date: Option<NaiveDate>,
}

impl AuditRecord {
    /// True when nothing dated after the decision date was visible.
    pub fn is_causal(&self) -> bool {
        let ok = |d: Option<NaiveDate>| d.is_none_or(|d| d <= self.decision_date);
        self.latest_price_date <= self.decision_date
            && ok(self.latest_document_date)
            && ok(self.latest_anchor_date)
    }
}

#[derive(Debug, Clone)]
pub struct BacktestOutcome {
    pub ledger: TradeLedger,
    pub report: PerformanceReport,
    pub baseline_ledger: TradeLedger,
    pub baseline_report: PerformanceReport,
    pub decisions: Vec<TradeDecision>,
    pub traces: Vec<StepTrace>,
    pub audit: Vec<AuditRecord>,
}

/// Runs the training loop (memory building, no positions) and then the test
/// loop (one ledger entry per decision day), and scores the agent against
/// buy-and-hold over the same days.
pub fn run(
    agent: &mut FinMemAgent,
    warehouse: &Warehouse,
    windows: &Windows,
    settings: &BacktestSettings,
) -> Result<BacktestOutcome, BacktestError> {
    let ticker = agent.profile().ticker.clone();
    let prices = warehouse.prices(&ticker)?;
    windows.validate(prices)?;
    let train_days = windows.train_days(prices);
    let test_days = windows.test_days(prices);
    if train_days.is_empty() {
        return Err(BacktestError::WindowOutOfRange(
            "training window holds no decision day".into(),
        ));
    }
    if test_days.is_empty() {
        return Err(BacktestError::WindowOutOfRange(
            "test window holds no decision day with a following trading day".into(),
        ));
    }

    let mut ledger = TradeLedger::new();
    let mut decisions = Vec::new();
    let mut traces = Vec::new();
    let mut audit = Vec::new();
    let mut previous: Option<NaiveDate> = None;

    let days = train_days
        .iter()
        .map(|d| (*d, Phase::Train))
        .chain(test_days.iter().map(|d| (*d, Phase::Test)));
    for (date, phase) in days {
        let documents = warehouse.documents_between(&ticker, previous, date);
        previous = Some(date);
        let latest_document_date = documents.iter().map(|d| d.date).max();
        let (market, latest_price_date) = match phase {
            Phase::Train => (
                MarketView::Train(prices),
                prices.next_trading_day(date).unwrap_or(date),
            ),
            Phase::Test => {
                let history = prices.history_through(date);
                let last = history.last_date().unwrap_or(date);
                (MarketView::Test(history), last)
            }
        };
        let (decision, trace) = agent
            .step(StepInput {
                date,
                market,
                documents,
                realized: ledger.entries(),
            })
            .map_err(|source| BacktestError::Agent { date, source })?;
        audit.push(AuditRecord {
            decision_date: date,
            phase,
            latest_price_date,
            latest_document_date,
            latest_anchor_date: agent.store().events().map(|e| e.anchor_date).max(),
        });
        if phase == Phase::Test {
            ledger.record(prices, date, decision.action.unwrap_or(Action::Hold))?;
        }
        log::debug!(
            "{date} {:?}: {}",
            phase,
            decision.action.map_or("NoOp", Action::as_str)
        );
        decisions.push(decision);
        traces.push(trace);
    }

    let baseline_actions: Vec<_> = test_days.iter().map(|d| (*d, Action::Buy)).collect();
    let baseline_ledger = TradeLedger::from_actions(prices, &baseline_actions)?;
    let report = ledger.report(settings.risk_free_daily, settings.annualize_sharpe)?;
    let baseline_report =
        baseline_ledger.report(settings.risk_free_daily, settings.annualize_sharpe)?;
    Ok(BacktestOutcome {
        ledger,
        report,
        baseline_ledger,
        baseline_report,
        decisions,
        traces,
        audit,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market_data::PriceRow;

    fn d(s: &str) -> NaiveDate {
        NaiveDate::parse_from_str(s, "%Y-%m-%d").unwrap()
    }

    fn prices(n: usize) -> PriceSeries {
        let start = d("2022-10-03");
        let rows = (0..n)
            .map(|i| PriceRow {
                date: start + chrono::Days::new(i as u64),
                open: 1.0,
                high: 1.0,
                low: 1.0,
                close: 1.0,
                adj_close: 1.0 + i as f64,
                volume: 1,
            })
            .collect();
        PriceSeries::from_rows("T", rows).unwrap()
    }

    #[test]
    fn window_validation() {
        let p = prices(10);
        let ok = Windows {
            train_start: d("2022-10-03"),
            train_end: d("2022-10-06"),
            test_start: d("2022-10-07"),
            test_end: d("2022-10-12"),
        };
        ok.validate(&p).unwrap();
        assert_eq!(ok.train_days(&p).len(), 4);
        // Last row has no successor and is trimmed.
        assert_eq!(ok.test_days(&p).len(), 5);

        let overlap = Windows {
            test_start: d("2022-10-06"),
            ..ok
        };
        assert!(matches!(
            overlap.validate(&p),
            Err(BacktestError::OverlappingWindows { .. })
        ));
        let outside = Windows {
            test_end: d("2022-10-20"),
            ..ok
        };
        assert!(matches!(
            outside.validate(&p),
            Err(BacktestError::WindowOutOfRange(_))
        ));
    }

    #[test]
    fn audit_flags_future_reads() {
        let rec = AuditRecord {
            decision_date: d("2022-10-05"),
            phase: Phase::Test,
            latest_price_date: d("2022-10-05"),
            latest_document_date: Some(d("2022-10-04")),
            latest_anchor_date: None,
        };
        assert!(rec.is_causal());
        let leak = AuditRecord {
            latest_document_date: Some(d("2022-10-06")),
            ..rec
        };
        assert!(!leak.is_causal());
    }
}
