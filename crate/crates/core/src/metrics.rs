//! Out-of-sample statistics: R², pooled MSE, residual alpha,
//! Diebold-Mariano tests on absolute errors and permutation importance.
//!
//! Non-finite actual or predicted values mark a missing observation and are
//! skipped pairwise.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::data::Month;
use crate::error::{Error, Result};
use crate::numeric::{Matrix, RngState};
use crate::training::TrainedModel;

/// One stock's aligned test-period series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StockForecasts {
    pub id: String,
    pub actual: Vec<f64>,
    pub predicted: Vec<f64>,
    /// Mean return over the stock's training block, the R² benchmark.
    pub train_mean: f64,
}

impl StockForecasts {
    fn pairs(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.actual
            .iter()
            .zip(&self.predicted)
            .filter(|(a, p)| a.is_finite() && p.is_finite())
            .map(|(a, p)| (*a, *p))
    }
}

/// Forecasts of one model for all stocks over a common test range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastSet {
    /// Month of each test position (the month being forecast).
    pub dates: Vec<Month>,
    pub stocks: Vec<StockForecasts>,
}

impl ForecastSet {
    pub fn new(dates: Vec<Month>, stocks: Vec<StockForecasts>) -> Result<Self> {
        for s in &stocks {
            if s.actual.len() != dates.len() || s.predicted.len() != dates.len() {
                return Err(Error::Validation(format!(
                    "stock {} has {} actuals and {} forecasts for {} test months",
                    s.id,
                    s.actual.len(),
                    s.predicted.len(),
                    dates.len()
                )));
            }
        }
        Ok(Self { dates, stocks })
    }

    pub fn len(&self) -> usize {
        self.dates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dates.is_empty()
    }

    /// `r − r̂` as a `T × N` matrix, NaN where either side is missing.
    pub fn error_matrix(&self) -> Matrix {
        let mut e = Matrix::filled(self.len(), self.stocks.len(), f64::NAN);
        for (i, s) in self.stocks.iter().enumerate() {
            for t in 0..self.len() {
                let (a, p) = (s.actual[t], s.predicted[t]);
                if a.is_finite() && p.is_finite() {
                    e[(t, i)] = a - p;
                }
            }
        }
        e
    }
}

/// `1 − Σ(r − r̂)² / Σ(r − r̄_train)²`.
pub fn oos_r2(actual: &[f64], predicted: &[f64], train_mean: f64) -> Result<f64> {
    let (mut num, mut den) = (0.0, 0.0);
    for (a, p) in actual.iter().zip(predicted) {
        if a.is_finite() && p.is_finite() {
            num += (a - p) * (a - p);
            den += (a - train_mean) * (a - train_mean);
        }
    }
    if den == 0.0 {
        return Err(Error::UndefinedMetric("R² denominator is zero".into()));
    }
    Ok(1.0 - num / den)
}

/// Mean of the per-stock R² values that are defined.
pub fn avg_r2(set: &ForecastSet) -> Result<f64> {
    let vals: Vec<f64> = set
        .stocks
        .iter()
        .filter_map(|s| oos_r2(&s.actual, &s.predicted, s.train_mean).ok())
        .collect();
    if vals.is_empty() {
        return Err(Error::UndefinedMetric("no stock has a defined R²".into()));
    }
    Ok(mean(&vals))
}

/// Pooled `1/(TN) Σ (r − r̂)²`; zero for an empty set.
pub fn oos_mse(set: &ForecastSet) -> f64 {
    let (sum, n) = set
        .stocks
        .iter()
        .flat_map(|s| s.pairs())
        .fold((0.0, 0usize), |(s, n), (a, p)| {
            (s + (a - p) * (a - p), n + 1)
        });
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlphaSummary {
    pub per_stock: Vec<f64>,
    pub avg: f64,
    /// `12 · avg`.
    pub annualised: f64,
    /// Cross-sectional t-statistic; `None` when undefined.
    pub t_stat: Option<f64>,
}

/// Monthly alpha scaled to annual: `× 12`.
pub fn annualise_alpha(monthly: f64) -> f64 {
    12.0 * monthly
}

/// Per-stock mean forecast error `α_i`, its cross-sectional average and
/// t-statistic `ᾱ √N / sd(α_i)`.
pub fn residual_alpha(set: &ForecastSet) -> Result<AlphaSummary> {
    let per_stock: Vec<f64> = set
        .stocks
        .iter()
        .map(|s| {
            let errs: Vec<f64> = s.pairs().map(|(a, p)| a - p).collect();
            if errs.is_empty() {
                f64::NAN
            } else {
                mean(&errs)
            }
        })
        .collect();
    let defined: Vec<f64> = per_stock
        .iter()
        .copied()
        .filter(|a| a.is_finite())
        .collect();
    if defined.is_empty() {
        return Err(Error::UndefinedMetric(
            "no stock has observed forecast errors".into(),
        ));
    }
    let avg = mean(&defined);
    Ok(AlphaSummary {
        annualised: annualise_alpha(avg),
        t_stat: alpha_t_stat(&defined).ok(),
        avg,
        per_stock,
    })
}

pub fn alpha_t_stat(alphas: &[f64]) -> Result<f64> {
    if alphas.len() < 2 {
        return Err(Error::UndefinedMetric(
            "alpha t-statistic needs at least two stocks".into(),
        ));
    }
    let sd = sample_std(alphas);
    if !(sd > 0.0) {
        return Err(Error::UndefinedMetric(
            "alphas have zero cross-sectional variance".into(),
        ));
    }
    Ok(mean(alphas) * (alphas.len() as f64).sqrt() / sd)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DmResult {
    pub stat: f64,
    pub p_value: f64,
}

/// Diebold-Mariano test on cross-sectionally averaged absolute-error
/// differences `d_t = mean_i(|e^m| − |e^n|)`.
///
/// `hac_lags = None` uses the sample standard deviation of `d`; `Some(L)`
/// uses a Bartlett-weighted long-run variance with `L` lags. Positive
/// statistics mean model `m` has the larger errors.
pub fn dm_test(errors_m: &Matrix, errors_n: &Matrix, hac_lags: Option<usize>) -> Result<DmResult> {
    if errors_m.shape() != errors_n.shape() {
        return Err(Error::Validation(format!(
            "error panels differ in shape: {:?} vs {:?}",
            errors_m.shape(),
            errors_n.shape()
        )));
    }
    let d: Vec<f64> = (0..errors_m.rows())
        .filter_map(|t| {
            let diffs: Vec<f64> = errors_m
                .row(t)
                .iter()
                .zip(errors_n.row(t))
                .filter(|(a, b)| a.is_finite() && b.is_finite())
                .map(|(a, b)| a.abs() - b.abs())
                .collect();
            (!diffs.is_empty()).then(|| mean(&diffs))
        })
        .collect();
    if d.len() < 3 {
        return Err(Error::DegenerateTest(format!(
            "DM test needs at least 3 periods, got {}",
            d.len()
        )));
    }
    let n = d.len() as f64;
    let d_bar = mean(&d);
    let var = match hac_lags {
        None => sample_std(&d).powi(2),
        Some(lags) => newey_west_variance(&d, lags),
    };
    let se = (var / n).sqrt();
    if !(se > 0.0) || !se.is_finite() {
        return Err(Error::DegenerateTest(
            "loss differential has zero standard error".into(),
        ));
    }
    let stat = d_bar / se;
    Ok(DmResult {
        stat,
        p_value: two_sided_p(stat),
    })
}

fn newey_west_variance(d: &[f64], lags: usize) -> f64 {
    let n = d.len();
    let m = mean(d);
    let gamma = |l: usize| (l..n).map(|t| (d[t] - m) * (d[t - l] - m)).sum::<f64>() / n as f64;
    let lags = lags.min(n - 1);
    let mut var = gamma(0);
    for l in 1..=lags {
        var += 2.0 * (1.0 - l as f64 / (lags + 1) as f64) * gamma(l);
    }
    var
}

/// `2 (1 − Φ(|z|))`.
pub fn two_sided_p(z: f64) -> f64 {
    let normal = Normal::standard();
    2.0 * (1.0 - normal.cdf(z.abs()))
}

/// `*`, `**`, `***` at the two-sided 10%, 5% and 1% levels.
pub fn stars(stat: f64) -> &'static str {
    let z = stat.abs();
    if z > 2.576 {
        "***"
    } else if z > 1.960 {
        "**"
    } else if z > 1.645 {
        "*"
    } else {
        ""
    }
}

/// Mean increase in MSE over `rows` when column `c` of `x` is permuted
/// within those rows, averaged over `repeats` draws of `permute`.
///
/// `predict` maps the full input matrix to forecasts for `rows`.
pub fn permutation_importance_with<P, S>(
    mut predict: P,
    x: &Matrix,
    y: &[f64],
    rows: &[usize],
    repeats: usize,
    mut permute: S,
) -> Result<Vec<f64>>
where
    P: FnMut(&Matrix) -> Result<Vec<f64>>,
    S: FnMut(&mut [f64]),
{
    if repeats == 0 {
        return Err(Error::Config(
            "permutation importance needs at least one repeat".into(),
        ));
    }
    let targets: Vec<f64> = rows.iter().map(|&t| y[t]).collect();
    let score = |pred: &[f64]| {
        let (s, n) = pred
            .iter()
            .zip(&targets)
            .filter(|(p, a)| p.is_finite() && a.is_finite())
            .fold((0.0, 0usize), |(s, n), (p, a)| {
                (s + (a - p) * (a - p), n + 1)
            });
        s / n.max(1) as f64
    };
    let baseline = score(&predict(x)?);
    let mut out = Vec::with_capacity(x.cols());
    let mut shuffled = x.clone();
    for c in 0..x.cols() {
        let original: Vec<f64> = rows.iter().map(|&t| x[(t, c)]).collect();
        let mut total = 0.0;
        for _ in 0..repeats {
            let mut col = original.clone();
            permute(&mut col);
            for (&t, v) in rows.iter().zip(&col) {
                shuffled[(t, c)] = *v;
            }
            total += score(&predict(&shuffled)?) - baseline;
        }
        for (&t, v) in rows.iter().zip(&original) {
            shuffled[(t, c)] = *v;
        }
        out.push(total / repeats as f64);
    }
    Ok(out)
}

/// Seeded permutation importance of each input column of a trained model,
/// evaluated on the forecast indices `rows` (each forecasting `y[row]`).
pub fn permutation_importance(
    model: &TrainedModel,
    x: &Matrix,
    y: &[f64],
    rows: &[usize],
    repeats: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    let mut rng = RngState::new(seed);
    permutation_importance_with(
        |m| model.forecast_many(m, rows),
        x,
        y,
        rows,
        repeats,
        |col| rng.shuffle(col),
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelMetrics {
    pub model: String,
    pub avg_r2: Option<f64>,
    pub avg_mse: f64,
    pub avg_alpha: f64,
    pub ann_alpha: f64,
    pub alpha_t: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DmEntry {
    pub row: String,
    pub col: String,
    pub result: Option<DmResult>,
}

impl DmEntry {
    pub fn stars(&self) -> &'static str {
        self.result.map_or("", |r| stars(r.stat))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub models: Vec<ModelMetrics>,
    /// Lower triangle: `row` tested against every earlier `col`.
    pub dm: Vec<DmEntry>,
    /// Per model, per input column.
    pub importance: Vec<(String, Vec<f64>)>,
}

impl MetricsReport {
    pub fn build(sets: &[(String, ForecastSet)], hac_lags: Option<usize>) -> Result<Self> {
        let mut models = Vec::with_capacity(sets.len());
        for (name, set) in sets {
            let alpha = residual_alpha(set)?;
            models.push(ModelMetrics {
                model: name.clone(),
                avg_r2: avg_r2(set).ok(),
                avg_mse: oos_mse(set),
                avg_alpha: alpha.avg,
                ann_alpha: alpha.annualised,
                alpha_t: alpha.t_stat,
            });
        }
        let errors: Vec<Matrix> = sets.iter().map(|(_, s)| s.error_matrix()).collect();
        let mut dm = Vec::new();
        for i in 0..sets.len() {
            for j in 0..i {
                dm.push(DmEntry {
                    row: sets[i].0.clone(),
                    col: sets[j].0.clone(),
                    result: dm_test(&errors[i], &errors[j], hac_lags).ok(),
                });
            }
        }
        Ok(Self {
            models,
            dm,
            importance: Vec::new(),
        })
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn sample_std(v: &[f64]) -> f64 {
    let m = mean(v);
    (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() as f64 - 1.0)).sqrt()
}
