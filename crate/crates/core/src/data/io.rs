use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::numeric::Matrix;

use super::{Month, Panel, PanelKind, RiskFreeSeries};

/// Reads a `date,<col>,<col>...` CSV. Empty cells are missing; rows are
/// sorted by date.
///
/// Format errors report the 1-based file line and column.
pub fn load_panel(path: impl AsRef<Path>, kind: PanelKind) -> Result<Panel> {
    let path = path.as_ref();
    let file_name = path.display().to_string();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(file);

    let fmt_err = |row: usize, col: usize, msg: String| Error::Format {
        file: file_name.clone(),
        row,
        col,
        msg,
    };

    let headers = reader
        .headers()
        .map_err(|e| fmt_err(1, 1, e.to_string()))?
        .clone();
    if headers.is_empty() || !headers[0].eq_ignore_ascii_case("date") {
        return Err(fmt_err(1, 1, "first header must be `date`".into()));
    }
    let names: Vec<String> = headers.iter().skip(1).map(str::to_owned).collect();
    if names.is_empty() {
        return Err(fmt_err(1, 2, "no value columns".into()));
    }
    if kind == PanelKind::RiskFree && names.len() != 1 {
        return Err(fmt_err(
            1,
            2,
            "risk-free file must have columns `date,rf`".into(),
        ));
    }

    let mut rows: Vec<(Month, Vec<f64>)> = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let line = i + 2;
        let record = record.map_err(|e| fmt_err(line, 1, e.to_string()))?;
        if record.len() != names.len() + 1 {
            return Err(fmt_err(
                line,
                record.len().min(names.len() + 1),
                format!(
                    "expected {} fields, found {}",
                    names.len() + 1,
                    record.len()
                ),
            ));
        }
        let date: Month = record[0].parse().map_err(|e| fmt_err(line, 1, e))?;
        let values = record
            .iter()
            .enumerate()
            .skip(1)
            .map(|(c, cell)| {
                if cell.is_empty() {
                    Ok(f64::NAN)
                } else {
                    cell.parse::<f64>()
                        .ok()
                        .filter(|v| !v.is_nan())
                        .ok_or_else(|| fmt_err(line, c + 1, format!("not a number: {cell:?}")))
                }
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push((date, values));
    }

    rows.sort_by_key(|(d, _)| *d);
    if let Some(w) = rows.windows(2).find(|w| w[0].0 == w[1].0) {
        return Err(Error::Validation(format!(
            "{file_name}: duplicate date {}",
            w[0].0
        )));
    }

    let width = names.len();
    let dates = rows.iter().map(|(d, _)| *d).collect();
    let data = rows.into_iter().flat_map(|(_, v)| v).collect::<Vec<_>>();
    let values = Matrix::from_vec(data.len() / width, width, data);
    let panel = Panel::new(dates, names, values)?;
    panel.validate(kind)?;
    Ok(panel)
}

pub fn load_riskfree(path: impl AsRef<Path>) -> Result<RiskFreeSeries> {
    RiskFreeSeries::from_panel(&load_panel(path, PanelKind::RiskFree)?)
}

/// Writes a panel in the same format [`load_panel`] reads. Values use the
/// shortest representation that parses back to the identical `f64`.
pub fn write_panel(path: impl AsRef<Path>, panel: &Panel) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    write!(w, "date").map_err(io)?;
    for n in &panel.names {
        write!(w, ",{n}").map_err(io)?;
    }
    writeln!(w).map_err(io)?;
    for r in 0..panel.len() {
        write!(w, "{}", panel.dates[r]).map_err(io)?;
        for c in 0..panel.width() {
            if panel.observed(r, c) {
                write!(w, ",{}", panel.values[(r, c)]).map_err(io)?;
            } else {
                write!(w, ",").map_err(io)?;
            }
        }
        writeln!(w).map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn write_riskfree(path: impl AsRef<Path>, rf: &RiskFreeSeries) -> Result<()> {
    let values = Matrix::from_vec(rf.rf.len(), 1, rf.rf.clone());
    write_panel(
        path,
        &Panel::new(rf.dates.clone(), vec!["rf".into()], values)?,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn write_tmp(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    #[test]
    fn parses_with_missing_cell() {
        let f = write_tmp("date,a,b\n2020-01,0.01,0.02\n2020-02,,0.03\n2020-03,0.04,-0.01\n");
        let p = load_panel(f.path(), PanelKind::Factor).unwrap();
        assert_eq!((p.len(), p.width()), (3, 2));
        assert_eq!(p.mask.iter().filter(|m| !**m).count(), 1);
        assert!(!p.observed(1, 0));
    }

    #[test]
    fn sorts_dates() {
        let f = write_tmp("date,a\n2020-03,3\n2020-01,1\n2020-02,2\n");
        let p = load_panel(f.path(), PanelKind::Factor).unwrap();
        assert_eq!(p.values.column(0), vec![1.0, 2.0, 3.0]);
        assert_eq!(p.dates[0].to_string(), "2020-01");
    }

    #[test]
    fn bad_cell_reports_position() {
        let f = write_tmp("date,a,b\n2020-01,1,2\n2020-02,3,abc\n");
        match load_panel(f.path(), PanelKind::Factor) {
            Err(Error::Format { row, col, .. }) => assert_eq!((row, col), (3, 3)),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn duplicate_date_rejected() {
        let f = write_tmp("date,a\n2020-01,1\n2020-01,2\n");
        assert!(matches!(
            load_panel(f.path(), PanelKind::Factor),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn riskfree_shape() {
        let f = write_tmp("date,rf\n2020-01,0.001\n2020-02,0.002\n");
        let rf = load_riskfree(f.path()).unwrap();
        assert_eq!(rf.rf, vec![0.001, 0.002]);
        let g = write_tmp("date,rf,x\n2020-01,0.001,1\n");
        assert!(load_riskfree(g.path()).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn write_load_round_trip(cells in prop::collection::vec(prop_oneof![Just(f64::NAN), -1e6..1e6f64, -1e-9..1e-9f64], 12)) {
            let start = Month::new(1999, 7).unwrap();
            let dates = (0..4).map(|i| start.offset(i)).collect();
            let panel = Panel::new(dates, vec!["x".into(), "y".into(), "z".into()], Matrix::from_vec(4, 3, cells)).unwrap();
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("p.csv");
            write_panel(&path, &panel).unwrap();
            let back = load_panel(&path, PanelKind::Factor).unwrap();
            prop_assert_eq!(&back.mask, &panel.mask);
            for (a, b) in back.values.data().iter().zip(panel.values.data()) {
                prop_assert!(a.to_bits() == b.to_bits() || (a.is_nan() && b.is_nan()));
            }
        }
    }
}
