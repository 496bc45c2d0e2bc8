//! Dynamic effects, window averages and pre-treatment fit diagnostics.

use std::io::Write;
use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::panel::{ObservedSets, PanelMatrix, PeriodIndex};
use crate::scalar::{mean, Scalar};
use crate::solver::McFit;

/// Default number of sign flips in [`pre_fit_report`].
pub const DEFAULT_FLIPS: usize = 2000;
/// Fewest pre-treatment residuals [`pre_fit_report`] accepts.
pub const MIN_PRE_RESIDUALS: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct EffectPath<T> {
    /// Post-treatment periods with an observed treated value.
    pub periods: Vec<PeriodIndex>,
    pub tau: Vec<T>,
    pub ate: T,
    pub pre_periods: Vec<PeriodIndex>,
    pub pre_residuals: Vec<T>,
    pub pre_mse: T,
    pub pre_mean: T,
}

/// `τ_t = Y_tr,t − Ŷ_tr,t(0)` on the missing block, plus in-sample residuals
/// of the treated unit before `t0`.
pub fn effect_path<T: Scalar>(panel: &PanelMatrix<T>, sets: &ObservedSets, fit: &McFit<T>) -> Result<EffectPath<T>> {
    if fit.l.shape() != panel.values().shape()
        || sets.n_units != panel.n_units()
        || sets.n_periods != panel.n_periods()
        || fit.treated != sets.treated
        || fit.imputed.len() != sets.missing.len()
    {
        return Err(Error::Shape("fit was not produced on this panel and treatment".into()));
    }
    let tr = sets.treated;
    let periods = sets.missing.iter().map(|&(_, t)| panel.periods().get(t)).collect();
    let tau: Vec<T> = sets.missing.iter().zip(&fit.imputed).map(|(&(i, t), &m)| panel.values()[(i, t)] - m).collect();
    let ate = mean(&tau).ok_or_else(|| Error::Insufficient("no observed post-treatment values".into()))?;
    let mut pre_periods = Vec::new();
    let mut pre_residuals = Vec::new();
    for t in 0..sets.t0 {
        if let Some(y) = panel.get(tr, t) {
            pre_periods.push(panel.periods().get(t));
            pre_residuals.push(y - fit.fitted(tr, t));
        }
    }
    let pre_mean = mean(&pre_residuals).unwrap_or_else(T::zero);
    let sq: Vec<T> = pre_residuals.iter().map(|&d| d * d).collect();
    let pre_mse = mean(&sq).unwrap_or_else(T::zero);
    Ok(EffectPath { periods, tau, ate, pre_periods, pre_residuals, pre_mse, pre_mean })
}

impl<T: Scalar> EffectPath<T> {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Tidy `period,tau` export.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["period", "tau"])?;
        for (p, t) in self.periods.iter().zip(&self.tau) {
            w.write_record([p.to_string(), t.to_string()])?;
        }
        w.flush().map_err(|source| Error::Io { path: "<csv writer>".into(), source })?;
        Ok(())
    }
}

/// Mean of `τ` over post-period positions `window` (0-based, half-open).
pub fn window_ate<T: Scalar>(path: &EffectPath<T>, window: Range<usize>) -> Result<T> {
    if window.is_empty() {
        return Err(Error::Validation(format!("empty window {window:?}")));
    }
    if window.end > path.tau.len() {
        return Err(Error::Validation(format!(
            "window {window:?} extends past the {} post-treatment periods",
            path.tau.len()
        )));
    }
    Ok(mean(&path.tau[window]).expect("non-empty"))
}

/// Impact, adjustment and persistence windows as post-period positions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HorizonWindows {
    pub impact: Range<usize>,
    pub adjustment: Range<usize>,
    pub persistence: Range<usize>,
}

impl HorizonWindows {
    /// Consecutive windows of the given lengths; persistence takes the rest.
    pub fn from_lengths(impact: usize, adjustment: usize, post_len: usize) -> Result<Self> {
        let w = Self {
            impact: 0..impact,
            adjustment: impact..impact + adjustment,
            persistence: impact + adjustment..post_len,
        };
        w.validate(post_len)?;
        Ok(w)
    }

    /// Months 1–3, 4–12 and 13 to the end.
    pub fn defaults(post_len: usize) -> Result<Self> {
        Self::from_lengths(3, 9, post_len)
    }

    /// Parses `i:a:p` window lengths; they must add up to `post_len`.
    pub fn parse(spec: &str, post_len: usize) -> Result<Self> {
        let parts: Vec<usize> = spec
            .split(':')
            .map(|s| s.trim().parse::<usize>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Validation(format!("windows '{spec}': {e}")))?;
        let [i, a, p] = parts[..] else {
            return Err(Error::Validation(format!("windows '{spec}' must look like i:a:p")));
        };
        if i + a + p != post_len {
            return Err(Error::Validation(format!("windows {i}+{a}+{p} do not cover {post_len} post periods")));
        }
        Self::from_lengths(i, a, post_len)
    }

    pub fn validate(&self, post_len: usize) -> Result<()> {
        let ok = self.impact.start == 0
            && self.impact.end == self.adjustment.start
            && self.adjustment.end == self.persistence.start
            && self.persistence.end == post_len
            && !self.impact.is_empty()
            && !self.adjustment.is_empty()
            && !self.persistence.is_empty();
        if ok {
            Ok(())
        } else {
            Err(Error::Validation(format!(
                "windows {:?}/{:?}/{:?} must be non-empty, contiguous and cover {post_len} post periods",
                self.impact, self.adjustment, self.persistence
            )))
        }
    }

    pub fn lengths(&self) -> [usize; 3] {
        [self.impact.len(), self.adjustment.len(), self.persistence.len()]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct HorizonAtes<T> {
    pub impact: T,
    pub adjustment: T,
    pub persistence: T,
}

pub fn horizon_decomposition<T: Scalar>(path: &EffectPath<T>, windows: &HorizonWindows) -> Result<HorizonAtes<T>> {
    windows.validate(path.tau.len())?;
    Ok(HorizonAtes {
        impact: window_ate(path, windows.impact.clone())?,
        adjustment: window_ate(path, windows.adjustment.clone())?,
        persistence: window_ate(path, windows.persistence.clone())?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct PreFitReport<T> {
    pub n_pre: usize,
    pub pre_mean: T,
    pub pre_mse: T,
    pub lag1_autocorrelation: T,
    /// `(1 + #{|flipped mean| ≥ |mean|}) / (flips + 1)`.
    pub sign_flip_p: T,
    pub flips: usize,
    pub seed: u64,
}

/// Mean, MSE and lag-1 autocorrelation of the pre-treatment residuals and a
/// seeded sign-flip test of a zero mean.
pub fn pre_fit_report<T: Scalar>(path: &EffectPath<T>, flips: usize, seed: u64) -> Result<PreFitReport<T>> {
    sign_flip_report(&path.pre_residuals, flips, seed)
}

/// [`pre_fit_report`] on a bare residual series.
pub fn sign_flip_report<T: Scalar>(residuals: &[T], flips: usize, seed: u64) -> Result<PreFitReport<T>> {
    let n = residuals.len();
    if n < MIN_PRE_RESIDUALS {
        return Err(Error::Insufficient(format!("{n} pre-treatment residuals, need >= {MIN_PRE_RESIDUALS}")));
    }
    if flips == 0 {
        return Err(Error::Validation("flips must be >= 1".into()));
    }
    let nt = T::of_usize(n);
    let m = residuals.iter().copied().sum::<T>() / nt;
    let mse = residuals.iter().map(|&d| d * d).sum::<T>() / nt;
    let centred: Vec<T> = residuals.iter().map(|&d| d - m).collect();
    let denom: T = centred.iter().map(|&d| d * d).sum();
    let num: T = centred.windows(2).map(|w| w[0] * w[1]).sum();
    let lag1 = if denom > T::zero() { num / denom } else { T::zero() };

    let observed = m.abs();
    // Exact ties (e.g. all-zero residuals) must count as exceedances.
    let bar = observed - observed * T::of(1e-12);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut hits = 0usize;
    for _ in 0..flips {
        let s: T = residuals.iter().map(|&d| if rng.random::<bool>() { d } else { -d }).sum();
        if (s / nt).abs() >= bar {
            hits += 1;
        }
    }
    let p = T::of_usize(1 + hits) / T::of_usize(flips + 1);
    Ok(PreFitReport { n_pre: n, pre_mean: m, pre_mse: mse, lag1_autocorrelation: lag1, sign_flip_p: p, flips, seed })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::solver::{fit, McConfig};
    use crate::testutil::{panel_from, random_values};
    use rand_distr::StandardNormal;

    fn path_with(tau: Vec<f64>) -> EffectPath<f64> {
        let start = PeriodIndex::monthly(2020, 1).unwrap();
        let ate = tau.iter().sum::<f64>() / tau.len() as f64;
        EffectPath {
            periods: (0..tau.len()).map(|k| start.shifted(k as i64)).collect(),
            tau,
            ate,
            pre_periods: vec![],
            pre_residuals: vec![],
            pre_mse: 0.0,
            pre_mean: 0.0,
        }
    }

    #[test]
    fn window_examples() {
        let p = path_with(vec![0.5, 0.6, 0.7]);
        assert!((window_ate(&p, 0..3).unwrap() - 0.6).abs() < 1e-15);
        assert_eq!(window_ate(&p, 0..3).unwrap(), p.ate);
        assert!(window_ate(&p, 1..1).is_err());
        assert!(window_ate(&p, 2..4).is_err());
    }

    #[test]
    fn partition_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let tau: Vec<f64> = (0..23).map(|_| rng.sample(StandardNormal)).collect();
        let p = path_with(tau);
        let w = HorizonWindows::defaults(23).unwrap();
        assert_eq!(w.lengths(), [3, 9, 11]);
        let h = horizon_decomposition(&p, &w).unwrap();
        let combined = (3.0 * h.impact + 9.0 * h.adjustment + 11.0 * h.persistence) / 23.0;
        assert!((combined - p.ate).abs() < 1e-12);
    }

    #[test]
    fn constant_tau_gives_equal_windows() {
        let p = path_with(vec![0.7; 23]);
        let h = horizon_decomposition(&p, &HorizonWindows::defaults(23).unwrap()).unwrap();
        assert!((h.impact - 0.7).abs() < 1e-15 && (h.adjustment - 0.7).abs() < 1e-15 && (h.persistence - 0.7).abs() < 1e-15);
    }

    #[test]
    fn window_parsing() {
        assert_eq!(HorizonWindows::parse("3:9:11", 23).unwrap().lengths(), [3, 9, 11]);
        assert!(HorizonWindows::parse("3:9:10", 23).is_err());
        assert!(HorizonWindows::parse("3:9", 12).is_err());
        assert!(HorizonWindows::parse("0:9:14", 23).is_err());
        assert!(HorizonWindows::defaults(12).is_err());
    }

    #[test]
    fn effect_path_identities() {
        let y = random_values(6, 40, 2, 0.1, 3);
        let (panel, sets) = panel_from(y, 30);
        let f = fit(&panel, &sets, &McConfig::with_lambda(0.1)).unwrap();
        let p = effect_path(&panel, &sets, &f).unwrap();
        assert_eq!(p.tau.len(), 10);
        assert_eq!(p.pre_residuals.len(), 30);
        assert!((p.ate - p.tau.iter().sum::<f64>() / 10.0).abs() < 1e-15);
        assert_eq!(p.periods[0], panel.periods().get(30));

        // Observed equal to the counterfactual gives zero effects.
        let mut same = panel.clone();
        for (k, &(i, t)) in sets.missing.iter().enumerate() {
            same = same.with_value(i, t, f.imputed[k]).unwrap();
        }
        let z = effect_path(&same, &sets, &f).unwrap();
        assert!(z.tau.iter().all(|&v| v.abs() < 1e-15) && z.ate.abs() < 1e-15);

        let (other, other_sets) = panel_from(random_values(5, 40, 1, 0.1, 3), 30);
        assert!(effect_path(&other, &other_sets, &f).is_err());
    }

    #[test]
    fn shift_invariance() {
        let y = random_values(6, 40, 2, 0.1, 5);
        let (panel, sets) = panel_from(y, 30);
        let c = McConfig::with_lambda(0.05);
        let a = effect_path(&panel, &sets, &fit(&panel, &sets, &c).unwrap()).unwrap();
        let moved = panel.map_values(|v| v - 17.5).unwrap();
        let b = effect_path(&moved, &sets, &fit(&moved, &sets, &c).unwrap()).unwrap();
        for (x, z) in a.tau.iter().zip(&b.tau) {
            assert!((x - z).abs() < 1e-8, "{x} {z}");
        }
    }

    #[test]
    fn sign_flip_basics() {
        let r = sign_flip_report(&[0.0f64; 12], 500, 1).unwrap();
        assert_eq!(r.pre_mean, 0.0);
        assert_eq!(r.pre_mse, 0.0);
        assert_eq!(r.sign_flip_p, 1.0);
        assert!(sign_flip_report(&[0.0f64; 7], 500, 1).is_err());
        let r = sign_flip_report(&[1.0f64; 20], 999, 1).unwrap();
        assert!(r.sign_flip_p >= 1.0 / 1000.0 && r.sign_flip_p <= 0.01);
        let a = sign_flip_report(&[0.3, -0.1, 0.2, 0.5, -0.4, 0.1, 0.0, 0.2, 0.9], 200, 42).unwrap();
        let b = sign_flip_report(&[0.3, -0.1, 0.2, 0.5, -0.4, 0.1, 0.0, 0.2, 0.9], 200, 42).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn lag_one_autocorrelation_of_alternating_series() {
        let alt: Vec<f64> = (0..20).map(|k| if k % 2 == 0 { 1.0 } else { -1.0 }).collect();
        let r = sign_flip_report(&alt, 10, 0).unwrap();
        assert!(r.lag1_autocorrelation < -0.9);
    }
}
