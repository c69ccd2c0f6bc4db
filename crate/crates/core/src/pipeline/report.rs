//! CSV writers and readers for forecasts and report tables.

use std::fmt::Write as _;
use std::path::Path;

use crate::backtest::BacktestResult;
use crate::data::Month;
use crate::error::{Error, Result};
use crate::metrics::{ForecastSet, MetricsReport, StockForecasts};

fn num(v: f64) -> String {
    if v.is_finite() {
        format!("{v}")
    } else {
        String::new()
    }
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), num)
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Long format: `stock,date,actual,predicted,train_mean`; blanks are missing.
pub fn write_forecasts(path: &Path, set: &ForecastSet) -> Result<()> {
    let mut out = String::from("stock,date,actual,predicted,train_mean\n");
    for s in &set.stocks {
        for (t, d) in set.dates.iter().enumerate() {
            let _ = writeln!(
                out,
                "{},{d},{},{},{}",
                s.id,
                num(s.actual[t]),
                num(s.predicted[t]),
                num(s.train_mean)
            );
        }
    }
    write(path, &out)
}

pub fn read_forecasts(path: &Path) -> Result<ForecastSet> {
    let file = path.display().to_string();
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::Format {
            file: file.clone(),
            row: 1,
            col: 1,
            msg: e.to_string(),
        })?;
    let mut stocks: Vec<StockForecasts> = Vec::new();
    let mut dates: Vec<Month> = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let row = i + 2;
        let rec = rec.map_err(|e| Error::Format {
            file: file.clone(),
            row,
            col: 1,
            msg: e.to_string(),
        })?;
        if rec.len() != 5 {
            return Err(Error::Format {
                file,
                row,
                col: 1,
                msg: format!("expected 5 fields, found {}", rec.len()),
            });
        }
        let parse = |col: usize| -> Result<f64> {
            let cell = &rec[col];
            if cell.is_empty() {
                return Ok(f64::NAN);
            }
            cell.parse().map_err(|_| Error::Format {
                file: file.clone(),
                row,
                col: col + 1,
                msg: format!("not a number: `{cell}`"),
            })
        };
        let date: Month = rec[1].parse().map_err(|_| Error::Format {
            file: file.clone(),
            row,
            col: 2,
            msg: format!("bad date `{}`", &rec[1]),
        })?;
        let (actual, predicted, train_mean) = (parse(2)?, parse(3)?, parse(4)?);
        let id = &rec[0];
        if stocks.last().is_none_or(|s| s.id != id) {
            stocks.push(StockForecasts {
                id: id.to_string(),
                actual: Vec::new(),
                predicted: Vec::new(),
                train_mean,
            });
        }
        let first_stock = stocks.len() == 1;
        let s = stocks.last_mut().expect("just pushed");
        if first_stock {
            dates.push(date);
        } else if dates.get(s.actual.len()) != Some(&date) {
            return Err(Error::Validation(format!(
                "{file}: stock {id} has a different date axis"
            )));
        }
        s.actual.push(actual);
        s.predicted.push(predicted);
    }
    ForecastSet::new(dates, stocks)
}

pub fn write_metrics(path: &Path, report: &MetricsReport) -> Result<()> {
    let mut out = String::from("model,avg_r2,avg_mse,avg_alpha,ann_alpha,alpha_t\n");
    for m in &report.models {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            m.model,
            opt(m.avg_r2),
            num(m.avg_mse),
            num(m.avg_alpha),
            num(m.ann_alpha),
            opt(m.alpha_t)
        );
    }
    write(path, &out)
}

/// Lower-triangular grid of DM statistics with significance stars.
pub fn write_dm(path: &Path, report: &MetricsReport) -> Result<()> {
    let names: Vec<&str> = report.models.iter().map(|m| m.model.as_str()).collect();
    let mut out = String::from("model");
    for n in &names {
        let _ = write!(out, ",{n}");
    }
    out.push('\n');
    for row in &names {
        out.push_str(row);
        for col in &names {
            let cell = report
                .dm
                .iter()
                .find(|e| e.row == *row && e.col == *col)
                .map(|e| match e.result {
                    Some(r) => format!("{:.4}{}", r.stat, e.stars()),
                    None => "NA".to_string(),
                })
                .unwrap_or_default();
            let _ = write!(out, ",{cell}");
        }
        out.push('\n');
    }
    write(path, &out)
}

pub fn write_importance(
    path: &Path,
    factors: &[String],
    rows: &[(String, Vec<f64>)],
) -> Result<()> {
    let mut out = String::from("model");
    for f in factors {
        let _ = write!(out, ",{f}");
    }
    out.push('\n');
    for (model, vals) in rows {
        out.push_str(model);
        for v in vals {
            let _ = write!(out, ",{}", num(*v));
        }
        out.push('\n');
    }
    write(path, &out)
}

pub fn write_backtest(path: &Path, rows: &[(String, BacktestResult)]) -> Result<()> {
    let mut out = String::from(
        "strategy,ann_return,sharpe,sortino,max_drawdown,returns_std,ann_sharpe,ann_sortino\n",
    );
    for (name, r) in rows {
        let _ = writeln!(
            out,
            "{name},{},{},{},{},{},{},{}",
            num(r.ann_return),
            opt(r.sharpe),
            opt(r.sortino),
            num(r.max_drawdown),
            num(r.returns_std),
            opt(r.ann_sharpe),
            opt(r.ann_sortino)
        );
    }
    write(path, &out)
}

/// `date,<model>,BH` cumulative values after each test month.
pub fn write_cumret(
    path: &Path,
    dates: &[Month],
    model: &str,
    strat: &BacktestResult,
    bh: &BacktestResult,
) -> Result<()> {
    let mut out = format!("date,{model},BH\n");
    for (t, d) in dates.iter().enumerate() {
        let _ = writeln!(
            out,
            "{d},{},{}",
            num(strat.cumulative[t + 1]),
            num(bh.cumulative[t + 1])
        );
    }
    write(path, &out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn forecasts_round_trip_exactly() {
        let s = Month::new(2013, 1).unwrap();
        let set = ForecastSet::new(
            vec![s, s.succ(), s.offset(2)],
            vec![
                StockForecasts {
                    id: "A".into(),
                    actual: vec![0.1, f64::NAN, -0.3],
                    predicted: vec![1.0 / 3.0, 0.2, 1e-17],
                    train_mean: 0.012345678901234567,
                },
                StockForecasts {
                    id: "B".into(),
                    actual: vec![0.0, 0.5, -0.25],
                    predicted: vec![f64::NAN, 0.1, 0.2],
                    train_mean: -0.5,
                },
            ],
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.csv");
        write_forecasts(&p, &set).unwrap();
        let back = read_forecasts(&p).unwrap();
        assert_eq!(back.dates, set.dates);
        for (a, b) in back.stocks.iter().zip(&set.stocks) {
            assert_eq!(a.id, b.id);
            assert_eq!(a.train_mean.to_bits(), b.train_mean.to_bits());
            for (x, y) in a
                .actual
                .iter()
                .chain(&a.predicted)
                .zip(b.actual.iter().chain(&b.predicted))
            {
                assert!(x.to_bits() == y.to_bits() || (x.is_nan() && y.is_nan()));
            }
        }
    }

    #[test]
    fn malformed_forecast_cell() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.csv");
        std::fs::write(
            &p,
            "stock,date,actual,predicted,train_mean\nA,2013-01,0.1,abc,0\n",
        )
        .unwrap();
        match read_forecasts(&p) {
            Err(Error::Format { row, col, .. }) => assert_eq!((row, col), (2, 4)),
            other => panic!("{other:?}"),
        }
    }
}
