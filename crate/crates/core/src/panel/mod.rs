//! Panel data model: a unit × period outcome grid with an observation mask.

mod io;
mod period;
mod transform;
mod treatment;

pub use io::{load_panel, load_panel_path, write_long_csv, write_wide_csv, CsvSchema};
pub use period::{CalendarDate, Frequency, PeriodIndex, PeriodRange};
pub use transform::{growth_rate, spread, GrowthMethod};
pub use treatment::{build_observed_sets, ObservedSets, TreatmentAssignment, RECOMMENDED_PRE_PERIODS};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::scalar::Scalar;

/// Rectangular unit × period grid of outcomes.
///
/// Cells whose mask entry is `false` are unobserved; their stored value is
/// forced to zero and never read by the estimators.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct PanelMatrix<T> {
    units: Vec<String>,
    periods: PeriodRange,
    values: Matrix<T>,
    mask: Vec<bool>,
}

impl<T: Scalar> PanelMatrix<T> {
    pub fn new(
        units: Vec<String>,
        periods: PeriodRange,
        mut values: Matrix<T>,
        mask: Vec<bool>,
    ) -> Result<Self> {
        if units.len() < 2 {
            return Err(Error::Validation(format!("panel needs at least 2 units, got {}", units.len())));
        }
        if periods.len < 3 {
            return Err(Error::Validation(format!(
                "panel needs at least 3 periods, got {}",
                periods.len
            )));
        }
        if values.shape() != (units.len(), periods.len) || mask.len() != units.len() * periods.len {
            return Err(Error::Shape(format!(
                "grid {:?} / mask {} do not match {} units x {} periods",
                values.shape(),
                mask.len(),
                units.len(),
                periods.len
            )));
        }
        let mut seen = std::collections::HashSet::new();
        for u in &units {
            if !seen.insert(u.as_str()) {
                return Err(Error::Validation(format!("unit `{u}` listed twice")));
            }
        }
        for (v, &m) in values.as_mut_slice().iter_mut().zip(&mask) {
            if !m {
                *v = T::zero();
            } else if !v.is_finite() {
                return Err(Error::NonFinite("observed panel value".into()));
            }
        }
        Ok(Self { units, periods, values, mask })
    }

    /// Fully observed panel.
    pub fn complete(units: Vec<String>, periods: PeriodRange, values: Matrix<T>) -> Result<Self> {
        let mask = vec![true; values.rows() * values.cols()];
        Self::new(units, periods, values, mask)
    }

    pub fn units(&self) -> &[String] {
        &self.units
    }

    pub fn periods(&self) -> &PeriodRange {
        &self.periods
    }

    pub fn values(&self) -> &Matrix<T> {
        &self.values
    }

    pub fn n_units(&self) -> usize {
        self.units.len()
    }

    pub fn n_periods(&self) -> usize {
        self.periods.len
    }

    pub fn unit_index(&self, unit: &str) -> Result<usize> {
        self.units
            .iter()
            .position(|u| u == unit)
            .ok_or_else(|| Error::UnknownUnit(unit.to_string()))
    }

    pub fn period_position(&self, p: &PeriodIndex) -> Option<usize> {
        self.periods.position(p)
    }

    #[inline]
    pub fn is_observed(&self, unit: usize, period: usize) -> bool {
        self.mask[unit * self.periods.len + period]
    }

    /// The observed value, or `None` for a hole.
    #[inline]
    pub fn get(&self, unit: usize, period: usize) -> Option<T> {
        self.is_observed(unit, period).then(|| self.values[(unit, period)])
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn observed_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    /// Sub-panel with the given units (in that order).
    pub fn select_units(&self, idx: &[usize]) -> Result<Self> {
        let units = idx.iter().map(|&i| self.units[i].clone()).collect();
        let mut mask = Vec::with_capacity(idx.len() * self.periods.len);
        for &i in idx {
            mask.extend_from_slice(&self.mask[i * self.periods.len..(i + 1) * self.periods.len]);
        }
        Self::new(units, self.periods, self.values.select_rows(idx), mask)
    }

    /// Keeps the leading `len` periods.
    pub fn truncate_periods(&self, len: usize) -> Result<Self> {
        let len = len.min(self.periods.len);
        let n = self.units.len();
        let values = self.values.leading_cols(len);
        let mask = (0..n)
            .flat_map(|i| (0..len).map(move |t| (i, t)))
            .map(|(i, t)| self.is_observed(i, t))
            .collect();
        Self::new(self.units.clone(), PeriodRange::new(self.periods.start, len), values, mask)
    }

    /// Copy with `f` applied to every observed value.
    pub fn map_values(&self, f: impl Fn(T) -> T) -> Result<Self> {
        Self::new(self.units.clone(), self.periods, self.values.map(f), self.mask.clone())
    }

    /// Copy with one cell overwritten (and marked observed).
    pub fn with_value(&self, unit: usize, period: usize, value: T) -> Result<Self> {
        let mut values = self.values.clone();
        let mut mask = self.mask.clone();
        values[(unit, period)] = value;
        mask[unit * self.periods.len + period] = true;
        Self::new(self.units.clone(), self.periods, values, mask)
    }

    /// Copy with one cell hidden.
    pub fn without_value(&self, unit: usize, period: usize) -> Result<Self> {
        let mut mask = self.mask.clone();
        mask[unit * self.periods.len + period] = false;
        Self::new(self.units.clone(), self.periods, self.values.clone(), mask)
    }

    /// Observed values of one unit, `None` for holes.
    pub fn series(&self, unit: usize) -> Vec<Option<T>> {
        (0..self.periods.len).map(|t| self.get(unit, t)).collect()
    }

    /// Subtracts a benchmark unit's series from every other unit and drops the
    /// benchmark. A cell is observed only when both inputs are.
    pub fn spread_against(&self, benchmark: &str) -> Result<Self> {
        let b = self.unit_index(benchmark)?;
        let keep: Vec<usize> = (0..self.n_units()).filter(|&i| i != b).collect();
        let t_len = self.periods.len;
        let mut values = Matrix::zeros(keep.len(), t_len);
        let mut mask = vec![false; keep.len() * t_len];
        for (r, &i) in keep.iter().enumerate() {
            let base: Vec<T> = (0..t_len).map(|t| self.values[(i, t)]).collect();
            let bench: Vec<T> = (0..t_len).map(|t| self.values[(b, t)]).collect();
            let diff = spread(&base, &bench)?;
            for t in 0..t_len {
                if self.is_observed(i, t) && self.is_observed(b, t) {
                    values[(r, t)] = diff[t];
                    mask[r * t_len + t] = true;
                }
            }
        }
        let units = keep.iter().map(|&i| self.units[i].clone()).collect();
        Self::new(units, self.periods, values, mask)
    }

    /// Period-on-period growth of every unit; the first period is dropped.
    pub fn growth_rates(&self, method: GrowthMethod) -> Result<Self> {
        let t_len = self.periods.len - 1;
        let n = self.n_units();
        let mut values = Matrix::zeros(n, t_len);
        let mut mask = vec![false; n * t_len];
        for i in 0..n {
            for t in 1..self.periods.len {
                if let (Some(prev), Some(cur)) = (self.get(i, t - 1), self.get(i, t)) {
                    let g = growth_rate(&[prev, cur], method).map_err(|e| {
                        Error::Domain(format!("unit `{}` at {}: {e}", self.units[i], self.periods.get(t)))
                    })?;
                    values[(i, t - 1)] = g[0];
                    mask[i * t_len + t - 1] = true;
                }
            }
        }
        let start = self.periods.get(1).normalized();
        Self::new(self.units.clone(), PeriodRange::new(start, t_len), values, mask)
    }
}
