//! Performance metrics over daily log returns.
//!
//! All inputs are per-day position-weighted log returns `r_t = ln(p_{t+1}/p_t)·action_t`.
//! Outputs are percentages except the Sharpe ratio.

use serde::{Deserialize, Serialize};

pub const TRADING_DAYS_PER_YEAR: f64 = 252.0;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MetricError {
    #[error("ledger is empty")]
    EmptyLedger,
    #[error("need at least 2 returns, got {0}")]
    InsufficientData(usize),
    #[error("returns have zero volatility")]
    ZeroVolatility,
}

/// 100 × Σ r_t.
pub fn cumulative_return(returns: &[f64]) -> Result<f64, MetricError> {
    if returns.is_empty() {
        return Err(MetricError::EmptyLedger);
    }
    Ok(100.0 * returns.iter().sum::<f64>())
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation (n − 1). Exactly zero for a constant series.
fn sample_std(xs: &[f64]) -> f64 {
    if xs.windows(2).all(|w| w[0] == w[1]) {
        return 0.0;
    }
    let m = mean(xs);
    let ss: f64 = xs.iter().map(|x| (x - m) * (x - m)).sum();
    (ss / (xs.len() - 1) as f64).sqrt()
}

/// mean(r − rf) / std(r), times √252 when `annualize` is set.
pub fn sharpe(returns: &[f64], risk_free_daily: f64, annualize: bool) -> Result<f64, MetricError> {
    if returns.len() < 2 {
        return Err(MetricError::InsufficientData(returns.len()));
    }
    let std = sample_std(returns);
    if std == 0.0 {
        return Err(MetricError::ZeroVolatility);
    }
    let excess = mean(returns) - risk_free_daily;
    let ratio = excess / std;
    Ok(if annualize {
        ratio * TRADING_DAYS_PER_YEAR.sqrt()
    } else {
        ratio
    })
}

/// (daily, annualized) volatility in percent.
pub fn volatility(returns: &[f64]) -> Result<(f64, f64), MetricError> {
    if returns.len() < 2 {
        return Err(MetricError::InsufficientData(returns.len()));
    }
    let daily = 100.0 * sample_std(returns);
    Ok((daily, daily * TRADING_DAYS_PER_YEAR.sqrt()))
}

/// Equity V_t = exp(Σ_{s≤t} r_s), starting with V_0 = 1.
pub fn equity_curve(returns: &[f64]) -> Vec<f64> {
    let mut curve = Vec::with_capacity(returns.len() + 1);
    curve.push(1.0);
    let mut acc = 0.0;
    for r in returns {
        acc += r;
        curve.push(acc.exp());
    }
    curve
}

/// Largest peak-to-trough decline of the compounded equity curve, in percent.
pub fn max_drawdown(returns: &[f64]) -> f64 {
    let mut peak = f64::MIN;
    let mut worst = 0.0_f64;
    for v in equity_curve(returns) {
        peak = peak.max(v);
        worst = worst.max((peak - v) / peak);
    }
    100.0 * worst
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerformanceReport {
    /// Percent.
    pub cumulative_return: f64,
    /// `None` when degenerate; see `degenerate`.
    pub sharpe: Option<f64>,
    pub daily_volatility: Option<f64>,
    pub annualized_volatility: Option<f64>,
    pub max_drawdown: f64,
    pub sharpe_annualized: bool,
    /// Metrics that could not be computed, with the reason.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub degenerate: Vec<String>,
}

impl PerformanceReport {
    pub fn from_returns(
        returns: &[f64],
        risk_free_daily: f64,
        annualize: bool,
    ) -> Result<Self, MetricError> {
        let cumulative_return = cumulative_return(returns)?;
        let mut degenerate = Vec::new();
        let sharpe = sharpe(returns, risk_free_daily, annualize)
            .map_err(|e| degenerate.push(format!("sharpe: {e}")))
            .ok();
        let (daily_volatility, annualized_volatility) = match volatility(returns) {
            Ok((d, a)) => (Some(d), Some(a)),
            Err(e) => {
                degenerate.push(format!("volatility: {e}"));
                (None, None)
            }
        };
        Ok(Self {
            cumulative_return,
            sharpe,
            daily_volatility,
            annualized_volatility,
            max_drawdown: max_drawdown(returns),
            sharpe_annualized: annualize,
            degenerate,
        })
    }
}
