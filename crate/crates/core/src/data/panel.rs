use std::collections::BTreeSet;

use crate::error::{Error, Result};
use crate::numeric::Matrix;

use super::Month;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PanelKind {
    Factor,
    Returns,
    Caps,
    RiskFree,
}

/// A dated `T × k` panel with an observation mask.
///
/// Missing cells hold `NaN` in `values` and `false` in the mask.
#[derive(Debug, Clone, PartialEq)]
pub struct Panel {
    pub dates: Vec<Month>,
    /// Factor labels or tickers.
    pub names: Vec<String>,
    pub values: Matrix,
    /// Row-major, `true` = observed.
    pub mask: Vec<bool>,
}

/// Monthly factor portfolio returns, decimal units.
pub type FactorPanel = Panel;
/// Monthly stock excess returns, decimal units.
pub type ReturnsPanel = Panel;
/// Market capitalisation per stock and month.
pub type MarketCapPanel = Panel;

impl Panel {
    /// Builds a panel, deriving the mask from `NaN` cells.
    pub fn new(dates: Vec<Month>, names: Vec<String>, values: Matrix) -> Result<Self> {
        if values.rows() != dates.len() || values.cols() != names.len() {
            return Err(Error::Validation(format!(
                "panel shape {:?} does not match {} dates x {} names",
                values.shape(),
                dates.len(),
                names.len()
            )));
        }
        let mask = values.data().iter().map(|v| !v.is_nan()).collect();
        let panel = Self {
            dates,
            names,
            values,
            mask,
        };
        panel.check_axes()?;
        Ok(panel)
    }

    fn check_axes(&self) -> Result<()> {
        if let Some(w) = self.dates.windows(2).find(|w| w[0] >= w[1]) {
            return Err(Error::Validation(format!(
                "dates must be strictly increasing ({} then {})",
                w[0], w[1]
            )));
        }
        let mut seen = BTreeSet::new();
        for n in &self.names {
            if !seen.insert(n) {
                return Err(Error::Validation(format!("duplicate column name {n:?}")));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.dates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dates.is_empty()
    }

    pub fn width(&self) -> usize {
        self.names.len()
    }

    #[inline]
    pub fn observed(&self, r: usize, c: usize) -> bool {
        self.mask[r * self.width() + c]
    }

    pub fn missing_fraction(&self, c: usize) -> f64 {
        if self.is_empty() {
            return 0.0;
        }
        let missing = (0..self.len()).filter(|&r| !self.observed(r, c)).count();
        missing as f64 / self.len() as f64
    }

    pub fn row_of(&self, date: Month) -> Option<usize> {
        self.dates.binary_search(&date).ok()
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn select_columns(&self, cols: &[usize]) -> Panel {
        let w = self.width();
        let mask = (0..self.len())
            .flat_map(|r| cols.iter().map(move |&c| r * w + c))
            .map(|i| self.mask[i])
            .collect();
        Panel {
            dates: self.dates.clone(),
            names: cols.iter().map(|&c| self.names[c].clone()).collect(),
            values: self.values.select_columns(cols),
            mask,
        }
    }

    pub fn select_rows(&self, rows: &[usize]) -> Panel {
        let w = self.width();
        let mut values = Matrix::zeros(rows.len(), w);
        let mut mask = Vec::with_capacity(rows.len() * w);
        for (k, &r) in rows.iter().enumerate() {
            values.row_mut(k).copy_from_slice(self.values.row(r));
            mask.extend_from_slice(&self.mask[r * w..(r + 1) * w]);
        }
        Panel {
            dates: rows.iter().map(|&r| self.dates[r]).collect(),
            names: self.names.clone(),
            values,
            mask,
        }
    }

    /// Checks the per-kind value invariants on observed cells.
    pub fn validate(&self, kind: PanelKind) -> Result<()> {
        self.check_axes()?;
        for r in 0..self.len() {
            for c in 0..self.width() {
                if !self.observed(r, c) {
                    continue;
                }
                let v = self.values[(r, c)];
                if !v.is_finite() {
                    return Err(Error::Validation(format!(
                        "non-finite value at {} / {}",
                        self.dates[r], self.names[c]
                    )));
                }
                if kind == PanelKind::Caps && v <= 0.0 {
                    return Err(Error::Validation(format!(
                        "market cap must be positive at {} / {}",
                        self.dates[r], self.names[c]
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Drops every column whose missing fraction exceeds `max_missing`.
/// A column exactly at the threshold is kept; column order is preserved.
pub fn filter_by_missingness(panel: &Panel, max_missing: f64) -> Result<Panel> {
    if !(0.0..1.0).contains(&max_missing) {
        return Err(Error::Config(format!(
            "max_missing must lie in [0, 1), got {max_missing}"
        )));
    }
    let keep: Vec<usize> = (0..panel.width())
        .filter(|&c| panel.missing_fraction(c) <= max_missing + 1e-12)
        .collect();
    if keep.is_empty() {
        return Err(Error::EmptyPanel(format!(
            "all {} columns exceed {:.0}% missing",
            panel.width(),
            max_missing * 100.0
        )));
    }
    Ok(panel.select_columns(&keep))
}

/// Restricts every panel to the dates they all share.
///
/// Returns the number of rows dropped from each panel and logs a warning
/// whenever anything had to be dropped.
pub fn align_on_dates(panels: &mut [&mut Panel]) -> Vec<usize> {
    let Some(first) = panels.first() else {
        return Vec::new();
    };
    let mut common: BTreeSet<Month> = first.dates.iter().copied().collect();
    for p in panels.iter().skip(1) {
        let other: BTreeSet<Month> = p.dates.iter().copied().collect();
        common = common.intersection(&other).copied().collect();
    }
    panels
        .iter_mut()
        .map(|p| {
            let rows: Vec<usize> = (0..p.len())
                .filter(|&r| common.contains(&p.dates[r]))
                .collect();
            let dropped = p.len() - rows.len();
            if dropped > 0 {
                log::warn!(
                    "dropping {dropped} of {} rows not shared by all panels",
                    p.len()
                );
                **p = p.select_rows(&rows);
            }
            dropped
        })
        .collect()
}

/// Monthly risk-free rate, decimal units.
#[derive(Debug, Clone, PartialEq)]
pub struct RiskFreeSeries {
    pub dates: Vec<Month>,
    pub rf: Vec<f64>,
}

impl RiskFreeSeries {
    pub fn zeros(dates: Vec<Month>) -> Self {
        let rf = vec![0.0; dates.len()];
        Self { dates, rf }
    }

    pub fn from_panel(panel: &Panel) -> Result<Self> {
        if panel.width() != 1 {
            return Err(Error::Validation(format!(
                "risk-free file must have exactly one value column, found {}",
                panel.width()
            )));
        }
        if panel.mask.iter().any(|m| !m) {
            return Err(Error::Validation(
                "risk-free series has missing cells".into(),
            ));
        }
        Ok(Self {
            dates: panel.dates.clone(),
            rf: panel.values.column(0),
        })
    }

    /// Rates for the given months; missing months are a validation error.
    pub fn lookup(&self, months: &[Month]) -> Result<Vec<f64>> {
        months
            .iter()
            .map(|m| {
                self.dates
                    .binary_search(m)
                    .map(|i| self.rf[i])
                    .map_err(|_| Error::Validation(format!("risk-free rate missing for {m}")))
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn months(n: usize) -> Vec<Month> {
        let start = Month::new(2000, 1).unwrap();
        (0..n).map(|i| start.offset(i as i32)).collect()
    }

    fn panel_with_missing(missing_per_col: &[usize], rows: usize) -> Panel {
        let mut values = Matrix::filled(rows, missing_per_col.len(), 0.01);
        for (c, &m) in missing_per_col.iter().enumerate() {
            for r in 0..m {
                values[(r, c)] = f64::NAN;
            }
        }
        let names = (0..missing_per_col.len())
            .map(|c| format!("f{c}"))
            .collect();
        Panel::new(months(rows), names, values).unwrap()
    }

    #[test]
    fn boundary_column_retained() {
        // 4 of 10 missing is exactly 40%
        let p = panel_with_missing(&[4, 5, 0], 10);
        let f = filter_by_missingness(&p, 0.40).unwrap();
        assert_eq!(f.names, vec!["f0", "f2"]);
    }

    #[test]
    fn above_threshold_dropped() {
        // 41 of 100 missing
        let p = panel_with_missing(&[41, 40], 100);
        let f = filter_by_missingness(&p, 0.40).unwrap();
        assert_eq!(f.names, vec!["f1"]);
    }

    #[test]
    fn fully_observed_unchanged_and_idempotent() {
        let p = panel_with_missing(&[0, 0, 0], 6);
        let f = filter_by_missingness(&p, 0.40).unwrap();
        assert_eq!(f, p);
        let q = panel_with_missing(&[1, 3, 5], 6);
        let once = filter_by_missingness(&q, 0.40).unwrap();
        let twice = filter_by_missingness(&once, 0.40).unwrap();
        assert_eq!(once.names, twice.names);
        assert_eq!(once.mask, twice.mask);
    }

    #[test]
    fn all_columns_removed_is_error() {
        let p = panel_with_missing(&[9, 9], 10);
        assert!(matches!(
            filter_by_missingness(&p, 0.4),
            Err(Error::EmptyPanel(_))
        ));
        assert!(matches!(
            filter_by_missingness(&p, 1.0),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn align_intersects_dates() {
        let mut a = panel_with_missing(&[0], 5);
        let mut b = panel_with_missing(&[0], 5);
        b = b.select_rows(&[1, 2, 3, 4]);
        let dropped = align_on_dates(&mut [&mut a, &mut b]);
        assert_eq!(dropped, vec![1, 0]);
        assert_eq!(a.dates, b.dates);
    }

    #[test]
    fn caps_must_be_positive() {
        let mut p = panel_with_missing(&[0, 0], 3);
        p.values[(1, 1)] = -2.0;
        assert!(p.validate(PanelKind::Caps).is_err());
        assert!(p.validate(PanelKind::Returns).is_ok());
    }
}
