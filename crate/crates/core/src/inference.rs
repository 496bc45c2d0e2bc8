//! Design-based inference: in-space and in-time placebos, +1-corrected
//! p-values, empirical intervals and bootstrap stability of the placebo set.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cv::{select_lambda, CvPlan};
use crate::effects::effect_path;
use crate::error::{Error, Result};
use crate::panel::{build_observed_sets, PanelMatrix, PeriodIndex, TreatmentAssignment};
use crate::scalar::Scalar;
use crate::solver::{fit, McConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PlaceboKind {
    InSpace,
    InTime,
    Sdid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct PlaceboRun<T> {
    /// Pseudo-treated unit or pseudo-date.
    pub label: String,
    pub ate: T,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlaceboFailure {
    pub label: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct PlaceboDistribution<T> {
    pub kind: PlaceboKind,
    pub observed_ate: T,
    pub runs: Vec<PlaceboRun<T>>,
    /// `(1 + #{|placebo| ≥ |observed|}) / (1 + n_runs)`.
    pub p_value: T,
    pub ci_low: T,
    pub ci_high: T,
    pub n_runs: usize,
    /// Runs excluded because their fit failed.
    pub failures: Vec<PlaceboFailure>,
}

/// Linearly interpolated percentile (`q ∈ [0, 1]`) of sorted values.
pub fn percentile<T: Scalar>(sorted: &[T], q: f64) -> T {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let pos = q.clamp(0.0, 1.0) * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    let w = T::of(pos - lo as f64);
    sorted[lo] + (sorted[hi] - sorted[lo]) * w
}

/// `(1 + #{|e| ≥ |observed|}) / (1 + n)`.
pub fn placebo_p_value<T: Scalar>(observed: T, effects: &[T]) -> T {
    let bar = observed.abs();
    let hits = effects.iter().filter(|e| e.abs() >= bar).count();
    T::of_usize(1 + hits) / T::of_usize(1 + effects.len())
}

impl<T: Scalar> PlaceboDistribution<T> {
    pub fn new(kind: PlaceboKind, observed_ate: T, runs: Vec<PlaceboRun<T>>, failures: Vec<PlaceboFailure>) -> Result<Self> {
        if runs.is_empty() {
            return Err(Error::Insufficient(format!("no successful placebo runs ({} failed)", failures.len())));
        }
        let effects: Vec<T> = runs.iter().map(|r| r.ate).collect();
        let mut sorted = effects.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
        Ok(Self {
            kind,
            observed_ate,
            p_value: placebo_p_value(observed_ate, &effects),
            ci_low: percentile(&sorted, 0.025),
            ci_high: percentile(&sorted, 0.975),
            n_runs: runs.len(),
            runs,
            failures,
        })
    }

    pub fn effects(&self) -> Vec<T> {
        self.runs.iter().map(|r| r.ate).collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Seed of run `index` under `root`: independent of execution order.
pub fn derive_seed(root: u64, index: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(root);
    rng.set_stream(index.wrapping_add(1));
    rng.next_u64()
}

/// How each placebo run chooses λ.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct PlaceboConfig<T> {
    /// Solver settings; `mc.lambda` is the value selected on the real run.
    pub mc: McConfig<T>,
    /// Re-run cross-validation inside every placebo instead.
    pub recv: Option<CvPlan<T>>,
    pub seed: u64,
}

impl<T: Scalar> PlaceboConfig<T> {
    pub fn fixed(mc: McConfig<T>, seed: u64) -> Self {
        Self { mc, recv: None, seed }
    }
}

/// Fits the estimator for one assignment and returns its ATE.
pub fn pipeline_ate<T: Scalar>(panel: &PanelMatrix<T>, treat: &TreatmentAssignment, cfg: &PlaceboConfig<T>) -> Result<T> {
    let mut mc = cfg.mc;
    if let Some(plan) = &cfg.recv {
        mc.lambda = select_lambda(panel, treat, plan, &mc)?.chosen();
    }
    let sets = build_observed_sets(panel, treat)?;
    let f = fit(panel, &sets, &mc)?;
    Ok(effect_path(panel, &sets, &f)?.ate)
}

fn collect<T: Scalar>(
    kind: PlaceboKind,
    observed: T,
    outcomes: Vec<(String, u64, Result<T>)>,
) -> Result<PlaceboDistribution<T>> {
    let mut runs = Vec::new();
    let mut failures = Vec::new();
    for (label, seed, res) in outcomes {
        match res {
            Ok(ate) if ate.is_finite() => runs.push(PlaceboRun { label, ate, seed }),
            Ok(ate) => failures.push(PlaceboFailure { label, reason: format!("non-finite ATE {ate}") }),
            Err(e) => failures.push(PlaceboFailure { label, reason: e.to_string() }),
        }
    }
    if !failures.is_empty() {
        log::warn!("{} of {} placebo runs failed and were excluded", failures.len(), failures.len() + runs.len());
    }
    PlaceboDistribution::new(kind, observed, runs, failures)
}

/// Reassigns treatment to every donor at the true `t0`. The true treated
/// unit is dropped from each placebo panel, so its post-treatment values
/// are never read.
pub fn in_space_placebos<T: Scalar>(
    panel: &PanelMatrix<T>,
    treat: &TreatmentAssignment,
    cfg: &PlaceboConfig<T>,
) -> Result<PlaceboDistribution<T>> {
    let treated = panel.unit_index(&treat.treated_unit)?;
    let donors: Vec<usize> = (0..panel.n_units()).filter(|&i| i != treated).collect();
    if donors.len() < 2 {
        return Err(Error::Insufficient(format!("{} donors; in-space placebos need >= 2", donors.len())));
    }
    let observed = pipeline_ate(panel, treat, cfg)?;
    let pool = panel.select_units(&donors)?;
    let outcomes = donors
        .par_iter()
        .enumerate()
        .map(|(k, &d)| {
            let name = panel.units()[d].clone();
            let seed = derive_seed(cfg.seed, k as u64);
            let pseudo = TreatmentAssignment::new(name.clone(), treat.t0);
            let res = pipeline_ate(&pool, &pseudo, cfg);
            (name, seed, res)
        })
        .collect();
    collect(PlaceboKind::InSpace, observed, outcomes)
}

/// Extent of the pseudo-treated block in an in-time placebo.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PseudoBlock {
    /// Truncate at the true `t0`; the block runs from the pseudo-date to `t0 − 1`.
    #[default]
    UntilTreatment,
    /// Truncate `horizon` periods after the pseudo-date so every block has
    /// the same length as the real post window.
    Horizon,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct InTimePlan {
    pub min_train: usize,
    pub horizon: usize,
    pub block: PseudoBlock,
}

impl InTimePlan {
    /// Every `step`-th period from `min_train` to `t0 − horizon`.
    pub fn default_dates(&self, panel_start: PeriodIndex, t0: usize, step: usize) -> Vec<PeriodIndex> {
        if t0 < self.horizon + self.min_train || step == 0 {
            return Vec::new();
        }
        (self.min_train..=t0 - self.horizon).step_by(step).map(|p| panel_start.shifted(p as i64)).collect()
    }
}

/// Moves treatment to each pseudo-date inside the pre-period; the real
/// post-treatment data is cut off before any placebo fit.
pub fn in_time_placebos<T: Scalar>(
    panel: &PanelMatrix<T>,
    treat: &TreatmentAssignment,
    pseudo_dates: &[PeriodIndex],
    plan: &InTimePlan,
    cfg: &PlaceboConfig<T>,
) -> Result<PlaceboDistribution<T>> {
    let (_, t0) = treat.locate(panel)?;
    if pseudo_dates.is_empty() {
        return Err(Error::Validation("no pseudo-dates".into()));
    }
    let mut positions = Vec::with_capacity(pseudo_dates.len());
    for date in pseudo_dates {
        let pos = panel
            .period_position(date)
            .ok_or_else(|| Error::InvalidPeriod(format!("pseudo-date {date} outside the panel")))?;
        if pos < plan.min_train || pos + plan.horizon > t0 {
            return Err(Error::InvalidPeriod(format!(
                "pseudo-date {date} infeasible: needs {} <= position <= {} (min_train {}, horizon {}, t0 {})",
                plan.min_train,
                t0.saturating_sub(plan.horizon),
                plan.min_train,
                plan.horizon,
                treat.t0
            )));
        }
        positions.push(pos);
    }
    let observed = pipeline_ate(panel, treat, cfg)?;
    let pre = panel.truncate_periods(t0)?;
    let outcomes = positions
        .par_iter()
        .zip(pseudo_dates)
        .enumerate()
        .map(|(k, (&pos, date))| {
            let seed = derive_seed(cfg.seed, k as u64);
            let res = match plan.block {
                PseudoBlock::UntilTreatment => Ok(pre.clone()),
                PseudoBlock::Horizon => pre.truncate_periods(pos + plan.horizon),
            }
            .and_then(|sub| pipeline_ate(&sub, &TreatmentAssignment::new(treat.treated_unit.clone(), *date), cfg));
            (date.to_string(), seed, res)
        })
        .collect();
    collect(PlaceboKind::InTime, observed, outcomes)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct ResampleSummary<T> {
    pub n_boot: usize,
    pub seed: u64,
    /// Bootstrap standard error of the mean placebo effect.
    pub se_location: T,
    /// Bootstrap standard error of the p-value.
    pub se_p_value: T,
    /// Every placebo effect is identical.
    pub degenerate: bool,
}

/// Resamples the placebo set with replacement `n_boot` times.
pub fn resample_summary<T: Scalar>(dist: &PlaceboDistribution<T>, n_boot: usize, seed: u64) -> Result<ResampleSummary<T>> {
    let effects = dist.effects();
    let n = effects.len();
    if n < 2 {
        return Err(Error::Insufficient(format!("{n} placebo runs; resampling needs >= 2")));
    }
    if n_boot < 2 {
        return Err(Error::Validation("n_boot must be >= 2".into()));
    }
    let degenerate = effects.iter().all(|&e| e == effects[0]);
    if degenerate {
        return Ok(ResampleSummary { n_boot, seed, se_location: T::zero(), se_p_value: T::zero(), degenerate });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut means = Vec::with_capacity(n_boot);
    let mut ps = Vec::with_capacity(n_boot);
    let mut draw = vec![T::zero(); n];
    for _ in 0..n_boot {
        for slot in draw.iter_mut() {
            *slot = effects[rng.random_range(0..n)];
        }
        means.push(draw.iter().copied().sum::<T>() / T::of_usize(n));
        ps.push(placebo_p_value(dist.observed_ate, &draw));
    }
    Ok(ResampleSummary { n_boot, seed, se_location: sd(&means), se_p_value: sd(&ps), degenerate })
}

/// Bootstrap replication counts reported side by side.
pub const BOOT_SIZES: [usize; 3] = [100, 1000, 10000];

/// [`resample_summary`] at each of [`BOOT_SIZES`] with derived seeds.
pub fn resample_stability<T: Scalar>(dist: &PlaceboDistribution<T>, seed: u64) -> Result<Vec<ResampleSummary<T>>> {
    BOOT_SIZES.iter().enumerate().map(|(k, &b)| resample_summary(dist, b, derive_seed(seed, k as u64))).collect()
}

fn sd<T: Scalar>(xs: &[T]) -> T {
    let n = T::of_usize(xs.len());
    let m = xs.iter().copied().sum::<T>() / n;
    (xs.iter().map(|&x| (x - m) * (x - m)).sum::<T>() / (n - T::one())).sqrt()
}
