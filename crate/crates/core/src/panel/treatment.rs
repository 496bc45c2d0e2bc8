use serde::{Deserialize, Serialize};

use super::{PanelMatrix, PeriodIndex};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Pre-period count below which a warning is logged.
pub const RECOMMENDED_PRE_PERIODS: usize = 24;

/// A single treated unit exposed from `t0` onward.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TreatmentAssignment {
    pub treated_unit: String,
    pub t0: PeriodIndex,
}

impl TreatmentAssignment {
    pub fn new(treated_unit: impl Into<String>, t0: PeriodIndex) -> Self {
        Self { treated_unit: treated_unit.into(), t0 }
    }

    /// Resolves to (treated row, first treated column) within `panel`.
    pub fn locate<T: Scalar>(&self, panel: &PanelMatrix<T>) -> Result<(usize, usize)> {
        let unit = panel.unit_index(&self.treated_unit)?;
        let t0 = panel.period_position(&self.t0).ok_or_else(|| {
            Error::InvalidPeriod(format!(
                "t0 {} outside panel span {}..{}",
                self.t0,
                panel.periods().start,
                panel.periods().last()
            ))
        })?;
        if t0 == 0 {
            return Err(Error::InvalidPeriod(format!("t0 {} leaves no pre-treatment periods", self.t0)));
        }
        Ok((unit, t0))
    }
}

/// Partition of the observed cells into the fitting set and the block to impute.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObservedSets {
    pub treated: usize,
    pub t0: usize,
    pub n_units: usize,
    pub n_periods: usize,
    /// Observed untreated cells `(unit, period)`, row-major order.
    pub omega: Vec<(usize, usize)>,
    /// Treated cells at or after `t0`, in time order.
    pub missing: Vec<(usize, usize)>,
    in_omega: Vec<bool>,
}

impl ObservedSets {
    #[inline]
    pub fn in_omega(&self, unit: usize, period: usize) -> bool {
        self.in_omega[unit * self.n_periods + period]
    }

    /// Row-major membership bitmap of the fitting set.
    pub fn omega_mask(&self) -> &[bool] {
        &self.in_omega
    }

    pub fn omega_per_unit(&self) -> Vec<usize> {
        let mut n = vec![0; self.n_units];
        for &(i, _) in &self.omega {
            n[i] += 1;
        }
        n
    }

    pub fn omega_per_period(&self) -> Vec<usize> {
        let mut n = vec![0; self.n_periods];
        for &(_, t) in &self.omega {
            n[t] += 1;
        }
        n
    }

    pub fn missing_periods(&self) -> Vec<usize> {
        self.missing.iter().map(|&(_, t)| t).collect()
    }

    /// Sets built from an explicit fitting bitmap and missing list.
    pub(crate) fn from_parts(
        treated: usize,
        t0: usize,
        n_units: usize,
        n_periods: usize,
        in_omega: Vec<bool>,
        missing: Vec<(usize, usize)>,
    ) -> Self {
        let omega = (0..n_units)
            .flat_map(|i| (0..n_periods).map(move |t| (i, t)))
            .filter(|&(i, t)| in_omega[i * n_periods + t])
            .collect();
        Self { treated, t0, n_units, n_periods, omega, missing, in_omega }
    }
}

/// Splits mask-true cells into the fitting set Ω and the treated block ℳ.
pub fn build_observed_sets<T: Scalar>(
    panel: &PanelMatrix<T>,
    treat: &TreatmentAssignment,
) -> Result<ObservedSets> {
    let (treated, t0) = treat.locate(panel)?;
    if t0 < RECOMMENDED_PRE_PERIODS {
        log::warn!(
            "only {t0} pre-treatment periods before {} (at least {RECOMMENDED_PRE_PERIODS} recommended)",
            treat.t0
        );
    }
    let (n, t_len) = (panel.n_units(), panel.n_periods());
    let mut in_omega = panel.mask().to_vec();
    let mut missing = Vec::new();
    for t in t0..t_len {
        if panel.is_observed(treated, t) {
            in_omega[treated * t_len + t] = false;
            missing.push((treated, t));
        }
    }
    Ok(ObservedSets::from_parts(treated, t0, n, t_len, in_omega, missing))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::Matrix;
    use crate::panel::PeriodRange;

    fn panel(n: usize, t: usize, start: &str) -> PanelMatrix<f64> {
        let units = (0..n).map(|i| format!("u{i}")).collect();
        let periods = PeriodRange::new(start.parse().unwrap(), t);
        PanelMatrix::complete(units, periods, Matrix::from_fn(n, t, |i, j| (i * 10 + j) as f64)).unwrap()
    }

    #[test]
    fn counting_examples() {
        let p = panel(3, 4, "2020-01");
        // t0 = third period
        let s = build_observed_sets(&p, &TreatmentAssignment::new("u0", "2020-03".parse().unwrap())).unwrap();
        assert_eq!((s.missing.len(), s.omega.len()), (2, 10));
        let s = build_observed_sets(&p, &TreatmentAssignment::new("u0", "2020-04".parse().unwrap())).unwrap();
        assert_eq!(s.missing.len(), 1);
    }

    #[test]
    fn sample_geometry() {
        let p = panel(12, 212, "2008-01");
        let s = build_observed_sets(&p, &TreatmentAssignment::new("u0", "2023-10".parse().unwrap())).unwrap();
        // 2023-10 ..= 2025-08: 3 months of 2023, 12 of 2024, 8 of 2025
        assert_eq!(s.missing.len(), 3 + 12 + 8);
        assert_eq!(s.omega.len() + s.missing.len(), p.observed_count());
    }

    #[test]
    fn invalid_assignments() {
        let p = panel(3, 4, "2020-01");
        assert!(matches!(
            build_observed_sets(&p, &TreatmentAssignment::new("zz", "2020-03".parse().unwrap())),
            Err(Error::UnknownUnit(_))
        ));
        assert!(build_observed_sets(&p, &TreatmentAssignment::new("u0", "2020-01".parse().unwrap())).is_err());
        assert!(build_observed_sets(&p, &TreatmentAssignment::new("u0", "2021-01".parse().unwrap())).is_err());
    }

    #[test]
    fn holes_are_excluded_from_both_sets() {
        let p = panel(3, 4, "2020-01").without_value(1, 0).unwrap().without_value(0, 3).unwrap();
        let s = build_observed_sets(&p, &TreatmentAssignment::new("u0", "2020-03".parse().unwrap())).unwrap();
        assert_eq!(s.missing, vec![(0, 2)]);
        assert_eq!(s.omega.len() + s.missing.len(), p.observed_count());
        assert!(!s.in_omega(1, 0));
    }
}
