//! Single-share daily backtest: ledger, metrics and the train/test driver.

mod metrics;
mod run;

use std::fmt;
use std::io::Write;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::market_data::{DataError, PriceSeries};

pub use metrics::{
    cumulative_return, equity_curve, max_drawdown, sharpe, volatility, MetricError,
    PerformanceReport, TRADING_DAYS_PER_YEAR,
};
pub use run::{run, AuditRecord, BacktestOutcome, BacktestSettings, Windows};

#[derive(Debug, thiserror::Error)]
pub enum BacktestError {
    #[error("window out of range: {0}")]
    WindowOutOfRange(String),
    #[error("train window ({train_end}) must end before the test window starts ({test_start})")]
    OverlappingWindows {
        train_end: NaiveDate,
        test_start: NaiveDate,
    },
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error("{date}: {source}")]
    Agent {
        date: NaiveDate,
        #[source]
        source: crate::agent::AgentError,
    },
}

/// Daily trading action on one share. The position it implies is held from
/// today's close to the next trading day's close.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Action {
    Buy,
    Sell,
    Hold,
}

impl Action {
    /// +1 long, −1 short, 0 flat.
    pub fn position(self) -> i8 {
        match self {
            Action::Buy => 1,
            Action::Sell => -1,
            Action::Hold => 0,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Action::Buy => "Buy",
            Action::Sell => "Sell",
            Action::Hold => "Hold",
        }
    }

    pub fn negated(self) -> Action {
        match self {
            Action::Buy => Action::Sell,
            Action::Sell => Action::Buy,
            Action::Hold => Action::Hold,
        }
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub date: NaiveDate,
    pub action: Action,
    /// ln(p_{t+1}/p_t) × position.
    pub daily_return: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TradeLedger {
    entries: Vec<LedgerEntry>,
}

impl TradeLedger {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends the entry for `date`, realizing it against the next trading day's
    /// adjusted close.
    pub fn record(
        &mut self,
        prices: &PriceSeries,
        date: NaiveDate,
        action: Action,
    ) -> Result<&LedgerEntry, DataError> {
        let i = prices.index_of(date)?;
        let next = prices.rows().get(i + 1).ok_or(DataError::NoNextDay(date))?;
        let log_return = (next.adj_close / prices.rows()[i].adj_close).ln();
        self.entries.push(LedgerEntry {
            date,
            action,
            daily_return: log_return * action.position() as f64,
        });
        Ok(self.entries.last().expect("just pushed"))
    }

    pub fn from_actions(
        prices: &PriceSeries,
        actions: &[(NaiveDate, Action)],
    ) -> Result<Self, DataError> {
        let mut ledger = Self::new();
        for &(date, action) in actions {
            ledger.record(prices, date, action)?;
        }
        Ok(ledger)
    }

    pub fn entries(&self) -> &[LedgerEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn returns(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.daily_return).collect()
    }

    pub fn report(&self, risk_free_daily: f64, annualize: bool) -> Result<PerformanceReport, MetricError> {
        PerformanceReport::from_returns(&self.returns(), risk_free_daily, annualize)
    }

    /// CSV `date,action,daily_return,equity`, equity after each day's return.
    pub fn write_csv(&self, writer: impl Write) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["date", "action", "daily_return", "equity"])?;
        let curve = equity_curve(&self.returns());
        for (entry, equity) in self.entries.iter().zip(&curve[1..]) {
            w.write_record([
                entry.date.to_string(),
                entry.action.to_string(),
                entry.daily_return.to_string(),
                equity.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market_data::PriceRow;

    fn prices(adj: &[f64]) -> PriceSeries {
        let start = NaiveDate::from_ymd_opt(2022, 10, 3).unwrap();
        let rows = adj
            .iter()
            .enumerate()
            .map(|(i, &p)| PriceRow {
                date: start + chrono::Days::new(i as u64),
                open: p,
                high: p,
                low: p,
                close: p,
                adj_close: p,
                volume: 1,
            })
            .collect();
        PriceSeries::from_rows("T", rows).unwrap()
    }

    #[test]
    fn ledger_realizes_next_day_return() {
        let p = prices(&[100.0, 110.0, 99.0]);
        let dates: Vec<_> = p.dates().collect();
        let ledger =
            TradeLedger::from_actions(&p, &[(dates[0], Action::Buy), (dates[1], Action::Sell)])
                .unwrap();
        let r = ledger.returns();
        assert_eq!(r[0], (110.0f64 / 100.0).ln());
        assert_eq!(r[1], -(99.0f64 / 110.0).ln());
        let rep = ledger.report(0.0, true).unwrap();
        assert!((rep.cumulative_return - 20.067).abs() < 1e-3);
        assert!(matches!(
            TradeLedger::from_actions(&p, &[(dates[2], Action::Buy)]),
            Err(DataError::NoNextDay(_))
        ));
    }

    #[test]
    fn ledger_csv_has_equity() {
        let p = prices(&[100.0, 110.0]);
        let d0 = p.dates().next().unwrap();
        let ledger = TradeLedger::from_actions(&p, &[(d0, Action::Buy)]).unwrap();
        let mut out = Vec::new();
        ledger.write_csv(&mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("date,action,daily_return,equity"));
        let row: Vec<&str> = lines.next().unwrap().split(',').collect();
        assert_eq!(row[0], "2022-10-03");
        assert_eq!(row[1], "Buy");
        assert!((row[3].parse::<f64>().unwrap() - 1.1).abs() < 1e-12);
    }
}
