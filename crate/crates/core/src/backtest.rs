//! Long-only sign-signal strategy, transaction costs, portfolio weighting
//! and performance statistics.
//!
//! A stock is bought at the end of month `t` when both the forecast and the
//! realised return of `t` are positive, and sold at the end of `t` when both
//! are negative. Exposure therefore runs from the month after the entry
//! signal through the exit month.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Weighting {
    Equal,
    Value,
}

impl Weighting {
    pub fn name(self) -> &'static str {
        match self {
            Weighting::Equal => "equal",
            Weighting::Value => "value",
        }
    }
}

/// How the cost rate is charged on a round trip.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CostConvention {
    /// `(1 − c)` at entry and again at exit.
    #[default]
    PerSide,
    /// `(1 − c)` once, at entry.
    RoundTrip,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EventKind {
    Open,
    Close,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Event {
    pub month: usize,
    pub kind: EventKind,
}

/// Positions of one stock over the test months.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PositionSeries {
    /// Whether the stock is held after the signal of month `t`.
    pub held: Vec<bool>,
    pub events: Vec<Event>,
}

impl PositionSeries {
    pub fn len(&self) -> usize {
        self.held.len()
    }

    pub fn is_empty(&self) -> bool {
        self.held.is_empty()
    }

    /// Whether month `t`'s return is earned: held after month `t − 1`.
    pub fn exposure(&self) -> Vec<bool> {
        let mut out = vec![false; self.held.len()];
        for t in 1..self.held.len() {
            out[t] = self.held[t - 1];
        }
        out
    }
}

/// Runs the open/close state machine. Zeros and NaNs never trigger.
pub fn generate_signals(actual: &[f64], predicted: &[f64]) -> PositionSeries {
    assert_eq!(actual.len(), predicted.len(), "signals need aligned series");
    let mut held = Vec::with_capacity(actual.len());
    let mut events = Vec::new();
    let mut long = false;
    for (t, (&r, &p)) in actual.iter().zip(predicted).enumerate() {
        if !long && p > 0.0 && r > 0.0 {
            long = true;
            events.push(Event {
                month: t,
                kind: EventKind::Open,
            });
        } else if long && p < 0.0 && r < 0.0 {
            long = false;
            events.push(Event {
                month: t,
                kind: EventKind::Close,
            });
        }
        held.push(long);
    }
    PositionSeries { held, events }
}

/// Monthly net strategy returns for one stock.
///
/// Unexposed months return 0; a missing return while exposed counts as 0.
/// The entry haircut lands in the first exposed month and the exit haircut
/// in the closing month; a position still open at the end is not charged
/// an exit.
pub fn apply_costs(
    positions: &PositionSeries,
    returns: &[f64],
    cost_bp: f64,
    convention: CostConvention,
) -> Result<Vec<f64>> {
    if !(cost_bp >= 0.0) || !cost_bp.is_finite() {
        return Err(Error::Config(format!(
            "cost_bp must be non-negative, got {cost_bp}"
        )));
    }
    if returns.len() != positions.len() {
        return Err(Error::Validation(format!(
            "{} returns for {} position months",
            returns.len(),
            positions.len()
        )));
    }
    let keep = 1.0 - cost_bp / 10_000.0;
    let mut haircuts = vec![0i32; returns.len()];
    for e in &positions.events {
        match e.kind {
            EventKind::Open => {
                if let Some(h) = haircuts.get_mut(e.month + 1) {
                    *h += 1;
                }
            }
            EventKind::Close => {
                if convention == CostConvention::PerSide {
                    haircuts[e.month] += 1;
                }
            }
        }
    }
    Ok(positions
        .exposure()
        .iter()
        .zip(returns)
        .zip(haircuts)
        .map(|((&on, &r), h)| {
            let gross = if on && r.is_finite() { r } else { 0.0 };
            if h == 0 || keep == 1.0 {
                gross
            } else {
                (1.0 + gross) * keep.powi(h) - 1.0
            }
        })
        .collect())
}

/// Net strategy returns (`T × N`) from aligned actual and forecast panels.
pub fn strategy_returns(
    actual: &Matrix,
    predicted: &Matrix,
    cost_bp: f64,
    convention: CostConvention,
) -> Result<Matrix> {
    if actual.shape() != predicted.shape() {
        return Err(Error::Validation(
            "actual and forecast panels differ in shape".into(),
        ));
    }
    let mut out = Matrix::zeros(actual.rows(), actual.cols());
    for i in 0..actual.cols() {
        let r = actual.column(i);
        let pos = generate_signals(&r, &predicted.column(i));
        out.set_column(i, &apply_costs(&pos, &r, cost_bp, convention)?);
    }
    Ok(out)
}

/// Portfolio return per month. Missing (non-finite) stock returns drop out
/// of that month. `prior_caps` row `t` holds the caps of month `t − 1`.
pub fn aggregate_portfolio(
    returns: &Matrix,
    weighting: Weighting,
    prior_caps: Option<&Matrix>,
) -> Result<Vec<f64>> {
    let caps = match weighting {
        Weighting::Equal => None,
        Weighting::Value => {
            let caps = prior_caps
                .ok_or_else(|| Error::Validation("value weighting needs market caps".into()))?;
            if caps.shape() != returns.shape() {
                return Err(Error::Validation(format!(
                    "caps shape {:?} does not match returns {:?}",
                    caps.shape(),
                    returns.shape()
                )));
            }
            Some(caps)
        }
    };
    (0..returns.rows())
        .map(|t| {
            let mut num = 0.0;
            let mut den = 0.0;
            for (i, &r) in returns.row(t).iter().enumerate() {
                if !r.is_finite() {
                    continue;
                }
                let w = match caps {
                    None => 1.0,
                    Some(c) => {
                        let w = c[(t, i)];
                        if !(w > 0.0) || !w.is_finite() {
                            return Err(Error::Validation(format!(
                                "missing market cap for stock {i} before month {t}"
                            )));
                        }
                        w
                    }
                };
                num += w * r;
                den += w;
            }
            Ok(if den > 0.0 { num / den } else { 0.0 })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BacktestResult {
    pub returns: Vec<f64>,
    /// Cumulative value `Π(1 + r)`, starting from 1 before the first month.
    pub cumulative: Vec<f64>,
    pub max_drawdown: f64,
    pub ann_return: f64,
    pub sharpe: Option<f64>,
    pub sortino: Option<f64>,
    pub returns_std: f64,
    pub ann_sharpe: Option<f64>,
    pub ann_sortino: Option<f64>,
}

/// Monthly Sharpe or Sortino ratio scaled to annual: `× √12`.
pub fn annualise_ratio(monthly: f64) -> f64 {
    monthly * 12f64.sqrt()
}

/// Largest peak-to-trough loss on a value curve, as a fraction of the peak.
pub fn max_drawdown(curve: &[f64]) -> f64 {
    let mut peak = f64::NEG_INFINITY;
    let mut worst: f64 = 0.0;
    for &c in curve {
        peak = peak.max(c);
        if peak > 0.0 {
            worst = worst.max((peak - c) / peak);
        }
    }
    worst.min(1.0)
}

pub fn performance_stats(series: &[f64], rf: &[f64]) -> Result<BacktestResult> {
    let n = series.len();
    if n < 2 {
        return Err(Error::Validation(format!(
            "performance statistics need at least 2 months, got {n}"
        )));
    }
    if rf.len() != n {
        return Err(Error::Validation(format!(
            "{} risk-free values for {n} months",
            rf.len()
        )));
    }
    if series.iter().chain(rf).any(|v| !v.is_finite()) {
        return Err(Error::Validation(
            "portfolio or risk-free series has non-finite values".into(),
        ));
    }
    let mut cumulative = Vec::with_capacity(n + 1);
    cumulative.push(1.0);
    for r in series {
        let last = cumulative[cumulative.len() - 1];
        cumulative.push(last * (1.0 + r));
    }
    let growth = cumulative[n];
    let ann_return = if growth > 0.0 {
        growth.powf(12.0 / n as f64) - 1.0
    } else {
        -1.0
    };
    let mean_r = series.iter().sum::<f64>() / n as f64;
    let mean_rf = rf.iter().sum::<f64>() / n as f64;
    let excess = mean_r - mean_rf;
    let returns_std =
        (series.iter().map(|r| (r - mean_r).powi(2)).sum::<f64>() / (n as f64 - 1.0)).sqrt();
    let downs: Vec<f64> = series.iter().copied().filter(|r| *r < 0.0).collect();
    let downside = if downs.is_empty() {
        0.0
    } else {
        (downs.iter().map(|r| r * r).sum::<f64>() / downs.len() as f64).sqrt()
    };
    let ratio = |den: f64| (den > 1e-15).then(|| excess / den);
    let sharpe = ratio(returns_std);
    let sortino = ratio(downside);
    Ok(BacktestResult {
        returns: series.to_vec(),
        max_drawdown: max_drawdown(&cumulative),
        cumulative,
        ann_return,
        ann_sharpe: sharpe.map(annualise_ratio),
        ann_sortino: sortino.map(annualise_ratio),
        sharpe,
        sortino,
        returns_std,
    })
}

/// Always-long portfolio without costs.
pub fn buy_and_hold(
    returns: &Matrix,
    weighting: Weighting,
    prior_caps: Option<&Matrix>,
    rf: &[f64],
) -> Result<BacktestResult> {
    performance_stats(&aggregate_portfolio(returns, weighting, prior_caps)?, rf)
}
