//! Run reports, output files and report comparison.

use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::agent::{RiskMode, TradeDecision};
use crate::backtest::{Action, PerformanceReport, Windows};
use crate::config::{ProviderKind, RunConfig};

#[derive(Debug, thiserror::Error)]
pub enum ReportError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: not a run report: {reason}")]
    SchemaMismatch { path: PathBuf, reason: String },
    #[error("need at least 2 reports to compare, got {0}")]
    TooFewReports(usize),
}

pub const REPORT_FILE: &str = "report.json";
pub const BASELINE_FILE: &str = "baseline.json";
pub const LEDGER_FILE: &str = "ledger.csv";
pub const BASELINE_LEDGER_FILE: &str = "baseline_ledger.csv";
pub const DECISIONS_FILE: &str = "decisions.csv";
pub const MEMORY_FILE: &str = "memory.jsonl";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunMetadata {
    pub ticker: String,
    pub seed: Option<u64>,
    pub provider: ProviderKind,
    pub risk: RiskMode,
    pub k_top: usize,
    pub m_window: usize,
    pub switch_window: usize,
    pub windows: Windows,
    pub test_days: usize,
    pub sharpe_annualized: bool,
    pub risk_free_daily: f64,
}

impl RunMetadata {
    pub fn from_config(config: &RunConfig, test_days: usize) -> Self {
        Self {
            ticker: config.ticker.clone(),
            seed: config.seed,
            provider: config.provider,
            risk: config.risk,
            k_top: config.k_top,
            m_window: config.m_window,
            switch_window: config.switch_window,
            windows: config.windows,
            test_days,
            sharpe_annualized: config.annualize_sharpe,
            risk_free_daily: config.risk_free_daily,
        }
    }
}

/// One strategy's metrics plus the run that produced them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunReport {
    pub label: String,
    pub metrics: PerformanceReport,
    pub metadata: RunMetadata,
    pub config: RunConfig,
}

impl RunReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ReportError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ReportError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        serde_json::from_str(&text).map_err(|e| ReportError::SchemaMismatch {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })
    }
}

pub fn rationale_hash(rationale: &str) -> String {
    Sha256::digest(rationale.as_bytes())
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// CSV `date,action,effective_risk,rationale_hash,cited_ids`. Training days
/// are logged with action `NoOp`; cited ids are `;`-separated.
pub fn write_decisions_csv(decisions: &[TradeDecision], writer: impl Write) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["date", "action", "effective_risk", "rationale_hash", "cited_ids"])?;
    for d in decisions {
        let cited = d
            .cited_ids
            .iter()
            .map(u64::to_string)
            .collect::<Vec<_>>()
            .join(";");
        w.write_record([
            d.date.to_string(),
            d.action.map_or("NoOp", Action::as_str).to_string(),
            d.effective_risk.to_string(),
            rationale_hash(&d.rationale),
            cited,
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub const METRIC_COLUMNS: [&str; 5] = [
    "Cumulative Return (%)",
    "Sharpe Ratio",
    "Daily Volatility (%)",
    "Annualized Volatility (%)",
    "Max Drawdown (%)",
];

fn metric_values(m: &PerformanceReport) -> [Option<f64>; 5] {
    [
        Some(m.cumulative_return),
        m.sharpe,
        m.daily_volatility,
        m.annualized_volatility,
        Some(m.max_drawdown),
    ]
}

/// Aligned metric table. A column's best value is marked only when exactly
/// one row holds it.
#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonTable {
    pub rows: Vec<(String, [Option<f64>; 5])>,
    pub best: [Option<usize>; 5],
}

pub fn compare(reports: &[(String, PerformanceReport)]) -> Result<ComparisonTable, ReportError> {
    if reports.len() < 2 {
        return Err(ReportError::TooFewReports(reports.len()));
    }
    let rows: Vec<(String, [Option<f64>; 5])> = reports
        .iter()
        .map(|(label, m)| (label.clone(), metric_values(m)))
        .collect();
    // Higher is better for return and Sharpe, lower for the rest.
    let higher_better = [true, true, false, false, false];
    let mut best = [None; 5];
    for col in 0..5 {
        let values: Vec<(usize, f64)> = rows
            .iter()
            .enumerate()
            .filter_map(|(i, (_, v))| v[col].map(|x| (i, x)))
            .collect();
        let Some(target) = values
            .iter()
            .map(|(_, x)| *x)
            .reduce(|a, b| if higher_better[col] { a.max(b) } else { a.min(b) })
        else {
            continue;
        };
        let winners: Vec<usize> = values
            .iter()
            .filter(|(_, x)| *x == target)
            .map(|(i, _)| *i)
            .collect();
        if winners.len() == 1 {
            best[col] = Some(winners[0]);
        }
    }
    Ok(ComparisonTable { rows, best })
}

impl fmt::Display for ComparisonTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let label_width = self
            .rows
            .iter()
            .map(|(l, _)| l.len())
            .chain(std::iter::once("Strategy".len()))
            .max()
            .unwrap_or(8);
        write!(f, "{:<label_width$}", "Strategy")?;
        for c in METRIC_COLUMNS {
            write!(f, " | {c:>w$}", w = c.len().max(12))?;
        }
        writeln!(f)?;
        for (i, (label, values)) in self.rows.iter().enumerate() {
            write!(f, "{label:<label_width$}")?;
            for (col, v) in values.iter().enumerate() {
                let mut cell = v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.4}"));
                if self.best[col] == Some(i) {
                    cell.push('*');
                }
                write!(f, " | {cell:>w$}", w = METRIC_COLUMNS[col].len().max(12))?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

/// Per-metric means over repeated trials. A mean is `None` when no trial
/// produced that metric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanMetrics {
    pub cumulative_return: f64,
    pub sharpe: Option<f64>,
    pub daily_volatility: Option<f64>,
    pub annualized_volatility: Option<f64>,
    pub max_drawdown: f64,
}

impl MeanMetrics {
    pub fn of(reports: &[&PerformanceReport]) -> Self {
        let mean = |xs: Vec<f64>| (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64);
        let pick = |f: fn(&PerformanceReport) -> Option<f64>| mean(reports.iter().filter_map(|r| f(r)).collect());
        Self {
            cumulative_return: pick(|r| Some(r.cumulative_return)).unwrap_or(0.0),
            sharpe: pick(|r| r.sharpe),
            daily_volatility: pick(|r| r.daily_volatility),
            annualized_volatility: pick(|r| r.annualized_volatility),
            max_drawdown: pick(|r| Some(r.max_drawdown)).unwrap_or(0.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialSummary {
    pub seeds: Vec<u64>,
    pub agent: MeanMetrics,
    pub baseline: MeanMetrics,
}

impl TrialSummary {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("summary serializes") + "\n"
    }
}
