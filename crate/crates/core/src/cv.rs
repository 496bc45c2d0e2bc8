//! Rolling-origin cross-validation of the shrinkage weight.
//!
//! Each fold truncates the panel at the end of its validation window and
//! hides only the treated unit's validation cells, mimicking the real
//! forward-imputation problem. Donor data is never masked.

use std::ops::Range;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::panel::{build_observed_sets, PanelMatrix, TreatmentAssignment};
use crate::scalar::Scalar;
use crate::solver::{fit_path, McConfig};

/// Relative slack under which two mean validation errors count as tied.
pub const TIE_REL_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct CvPlan<T> {
    /// Strictly ascending, non-negative.
    pub lambda_grid: Vec<T>,
    pub horizon: usize,
    pub n_folds: usize,
    pub min_train: usize,
}

/// `n` log-spaced values from `lo` to `hi` inclusive.
pub fn log_grid<T: Scalar>(lo: f64, hi: f64, n: usize) -> Vec<T> {
    if n == 1 {
        return vec![T::of(lo)];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..n).map(|k| T::of((a + (b - a) * k as f64 / (n - 1) as f64).exp())).collect()
}

impl<T: Scalar> CvPlan<T> {
    /// Defaults for a post-treatment block of `post_len` periods: horizon
    /// `min(post_len, 24)`, four folds, 60 training periods, and 12
    /// log-spaced values from 1e-5 to 1e-1.
    pub fn for_post_len(post_len: usize) -> Self {
        Self { lambda_grid: log_grid(1e-5, 1e-1, 12), horizon: post_len.clamp(1, 24), n_folds: 4, min_train: 60 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.lambda_grid.is_empty() {
            return Err(Error::Validation("empty lambda grid".into()));
        }
        if self.lambda_grid.iter().any(|&l| !(l >= T::zero()) || !l.is_finite()) {
            return Err(Error::Validation("lambda grid values must be finite and >= 0".into()));
        }
        if self.lambda_grid.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Validation("lambda grid must be strictly ascending".into()));
        }
        if self.horizon == 0 || self.n_folds == 0 {
            return Err(Error::Validation("horizon and n_folds must be >= 1".into()));
        }
        Ok(())
    }

    /// Smallest pre-period length these folds need.
    pub fn required_pre_periods(&self) -> usize {
        self.min_train + self.horizon * self.n_folds
    }
}

/// Training covers periods `0..train_end`; validation is `train_end..train_end + horizon`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    pub train_end: usize,
    pub validation: Range<usize>,
}

/// Folds ending at the last pre-treatment period and stepping backward,
/// most recent first.
pub fn make_folds<T: Scalar>(pre_periods: usize, plan: &CvPlan<T>) -> Result<Vec<Fold>> {
    plan.validate()?;
    let need = plan.required_pre_periods();
    if pre_periods < need {
        return Err(Error::Insufficient(format!(
            "{pre_periods} pre-treatment periods; {} folds of horizon {} with {} training periods need >= {need}",
            plan.n_folds, plan.horizon, plan.min_train
        )));
    }
    Ok((0..plan.n_folds)
        .map(|k| {
            let end = pre_periods - plan.horizon * k;
            let train_end = end - plan.horizon;
            Fold { train_end, validation: train_end..end }
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SelectionRule {
    /// Minimum mean validation error, near-ties to the larger λ.
    #[default]
    Min,
    /// Largest λ within one standard error of the minimum.
    OneSe,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct CvReport<T> {
    pub plan: CvPlan<T>,
    pub folds: Vec<Fold>,
    /// `mse[λ][fold]`; `None` where the fit failed or was non-finite.
    pub mse: Vec<Vec<Option<T>>>,
    pub mean_mse: Vec<Option<T>>,
    pub se: Vec<Option<T>>,
    pub selected_lambda: T,
    pub one_se_lambda: T,
    pub rule: SelectionRule,
}

impl<T: Scalar> CvReport<T> {
    /// The λ picked by `rule`.
    pub fn chosen(&self) -> T {
        match self.rule {
            SelectionRule::Min => self.selected_lambda,
            SelectionRule::OneSe => self.one_se_lambda,
        }
    }
}

/// Validation MSE of every λ on one fold, solved along a warm-started path.
fn fold_errors<T: Scalar>(
    panel: &PanelMatrix<T>,
    treated: &str,
    fold: &Fold,
    plan: &CvPlan<T>,
    template: &McConfig<T>,
) -> Result<Vec<Option<T>>> {
    let sub = panel.truncate_periods(fold.validation.end)?;
    let treat = TreatmentAssignment::new(treated, sub.periods().get(fold.train_end));
    let sets = build_observed_sets(&sub, &treat)?;
    if sets.missing.is_empty() {
        return Err(Error::Insufficient(format!(
            "treated unit has no observed values in validation window {:?}",
            fold.validation
        )));
    }
    let fits = match fit_path(&sub, &sets, &plan.lambda_grid, template) {
        Ok(f) => f,
        Err(Error::NonFinite(msg)) => {
            log::warn!("fold ending {} diverged: {msg}", fold.validation.end);
            return Ok(vec![None; plan.lambda_grid.len()]);
        }
        Err(e) => return Err(e),
    };
    Ok(fits
        .iter()
        .map(|f| {
            let sq: T = sets
                .missing
                .iter()
                .zip(&f.imputed)
                .map(|(&(i, t), &imp)| {
                    let d = sub.values()[(i, t)] - imp;
                    d * d
                })
                .sum();
            let mse = sq / T::of_usize(sets.missing.len());
            mse.is_finite().then_some(mse)
        })
        .collect())
}

/// Runs the fold × λ grid and picks the shrinkage weight.
pub fn select_lambda<T: Scalar>(
    panel: &PanelMatrix<T>,
    treat: &TreatmentAssignment,
    plan: &CvPlan<T>,
    template: &McConfig<T>,
) -> Result<CvReport<T>> {
    let (_, t0) = treat.locate(panel)?;
    let folds = make_folds(t0, plan)?;
    debug_assert!(folds.iter().all(|f| f.validation.end <= t0));
    let per_fold: Vec<Vec<Option<T>>> = folds
        .par_iter()
        .map(|fold| fold_errors(panel, &treat.treated_unit, fold, plan, template))
        .collect::<Result<_>>()?;

    let n_lambda = plan.lambda_grid.len();
    let mse: Vec<Vec<Option<T>>> = (0..n_lambda).map(|l| per_fold.iter().map(|f| f[l]).collect()).collect();
    let mut mean_mse = Vec::with_capacity(n_lambda);
    let mut se = Vec::with_capacity(n_lambda);
    for row in &mse {
        let vals: Option<Vec<T>> = row.iter().copied().collect();
        match vals {
            Some(v) => {
                let k = T::of_usize(v.len());
                let m = v.iter().copied().sum::<T>() / k;
                let s = if v.len() > 1 {
                    let var = v.iter().map(|&x| (x - m) * (x - m)).sum::<T>() / (k - T::one());
                    (var / k).sqrt()
                } else {
                    T::zero()
                };
                mean_mse.push(Some(m));
                se.push(Some(s));
            }
            None => {
                mean_mse.push(None);
                se.push(None);
            }
        }
    }
    let best = mean_mse
        .iter()
        .enumerate()
        .filter_map(|(i, m)| m.map(|v| (i, v)))
        .min_by(|a, b| a.1.partial_cmp(&b.1).unwrap_or(std::cmp::Ordering::Equal))
        .ok_or_else(|| {
            Error::NonFinite(format!("every lambda in {:?} failed on some fold", plan.lambda_grid))
        })?;
    let tie = best.1 * T::of(TIE_REL_TOL) + T::min_positive_value();
    let largest_within = |bound: T| {
        (0..n_lambda).rev().find(|&i| mean_mse[i].is_some_and(|m| m <= bound)).unwrap_or(best.0)
    };
    let selected = largest_within(best.1 + tie);
    let one_se = largest_within(best.1 + se[best.0].unwrap_or_else(T::zero) + tie);
    Ok(CvReport {
        plan: plan.clone(),
        folds,
        mse,
        mean_mse,
        se,
        selected_lambda: plan.lambda_grid[selected],
        one_se_lambda: plan.lambda_grid[one_se],
        rule: SelectionRule::Min,
    })
}

impl<T: Scalar> CvReport<T> {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}
