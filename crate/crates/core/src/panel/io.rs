//! Long- and wide-format CSV for panels.

use std::collections::HashMap;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{PanelMatrix, PeriodIndex, PeriodRange};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::scalar::Scalar;

/// Column names of a long-format panel file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CsvSchema {
    pub unit: String,
    pub period: String,
    pub value: String,
}

impl Default for CsvSchema {
    fn default() -> Self {
        Self { unit: "unit".into(), period: "period".into(), value: "value".into() }
    }
}

impl CsvSchema {
    /// Default `unit`/`period` columns with a named outcome column.
    pub fn with_value(value: &str) -> Self {
        Self { value: value.to_string(), ..Self::default() }
    }
}

/// Reads a long-format panel (`unit,period,value`).
///
/// Units keep their order of first appearance; the period axis spans the
/// earliest to the latest date seen and absent cells are unobserved.
pub fn load_panel<T: Scalar, R: Read>(source: R, schema: &CsvSchema) -> Result<PanelMatrix<T>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(source);
    let headers = rdr.headers()?.clone();
    let column = |name: &str| {
        headers.iter().position(|h| h == name).ok_or_else(|| Error::Parse {
            row: 1,
            message: format!("missing column `{name}`"),
        })
    };
    let (ci, cp, cv) = (column(&schema.unit)?, column(&schema.period)?, column(&schema.value)?);

    let mut units: Vec<String> = Vec::new();
    let mut unit_pos: HashMap<String, usize> = HashMap::new();
    let mut cells: Vec<(usize, PeriodIndex, T, usize)> = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let row = rec.position().map_or(0, |p| p.line() as usize);
        let field = |c: usize| rec.get(c).unwrap_or("");
        let unit = field(ci);
        if unit.is_empty() {
            return Err(Error::Parse { row, message: "empty unit".into() });
        }
        let period: PeriodIndex = field(cp)
            .parse()
            .map_err(|e: Error| Error::Parse { row, message: e.to_string() })?;
        let raw = field(cv);
        let value = T::from_str_radix(raw, 10)
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| Error::Parse { row, message: format!("value `{raw}` is not a finite number") })?;
        let next = units.len();
        let u = *unit_pos.entry(unit.to_string()).or_insert(next);
        if u == next {
            units.push(unit.to_string());
        }
        cells.push((u, period, value, row));
    }

    let (first, last) = match (cells.iter().map(|c| c.1).min(), cells.iter().map(|c| c.1).max()) {
        (Some(a), Some(b)) => (a, b),
        _ => return Err(Error::Insufficient("panel file has no data rows".into())),
    };
    if first.frequency != last.frequency {
        let row = cells.iter().find(|c| c.1.frequency != first.frequency).map_or(0, |c| c.3);
        return Err(Error::Parse { row, message: "monthly and annual periods mixed".into() });
    }
    let periods = PeriodRange::inclusive(first, last)?;
    let mut values = Matrix::zeros(units.len(), periods.len);
    let mut mask = vec![false; units.len() * periods.len];
    for (u, p, v, _) in cells {
        let t = periods.position(&p).expect("period inside its own span");
        let k = u * periods.len + t;
        if mask[k] {
            return Err(Error::DuplicateCell { unit: units[u].clone(), period: p.to_string() });
        }
        mask[k] = true;
        values[(u, t)] = v;
    }
    PanelMatrix::new(units, periods, values, mask)
}

pub fn load_panel_path<T: Scalar>(path: &Path, schema: &CsvSchema) -> Result<PanelMatrix<T>> {
    let file = File::open(path).map_err(|source| Error::Io { path: path.to_path_buf(), source })?;
    load_panel(file, schema)
}

/// Writes observed cells in long format, unit-major.
pub fn write_long_csv<T: Scalar, W: Write>(panel: &PanelMatrix<T>, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["unit", "period", "value"])?;
    for (i, unit) in panel.units().iter().enumerate() {
        for (t, p) in panel.periods().iter().enumerate() {
            if let Some(v) = panel.get(i, t) {
                w.write_record([unit.as_str(), &p.to_string(), &v.to_string()])?;
            }
        }
    }
    w.flush().map_err(|source| Error::Io { path: "<csv writer>".into(), source })?;
    Ok(())
}

/// Debug export: one row per period, one column per unit, empty = unobserved.
pub fn write_wide_csv<T: Scalar, W: Write>(panel: &PanelMatrix<T>, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["period".to_string()];
    header.extend(panel.units().iter().cloned());
    w.write_record(&header)?;
    for (t, p) in panel.periods().iter().enumerate() {
        let mut row = vec![p.to_string()];
        row.extend((0..panel.n_units()).map(|i| panel.get(i, t).map_or(String::new(), |v| v.to_string())));
        w.write_record(&row)?;
    }
    w.flush().map_err(|source| Error::Io { path: "<csv writer>".into(), source })?;
    Ok(())
}
