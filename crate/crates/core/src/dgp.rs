//! Seeded latent-factor panel generator with known ground truth.
//!
//! `Y(0) = α_i + γ_t + Σ_k λ_ik f_kt + ε_it` with AR(1) factors; the first
//! unit is treated from `t0` and receives the configured effect profile.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::panel::{PanelMatrix, PeriodIndex, PeriodRange, TreatmentAssignment};
use crate::scalar::Scalar;

/// Donor pool used when the default 12-unit geometry is generated.
pub const DEFAULT_DONORS: [&str; 11] = [
    "Australia",
    "Canada",
    "Denmark",
    "Japan",
    "New Zealand",
    "Norway",
    "South Korea",
    "Sweden",
    "Switzerland",
    "United Kingdom",
    "United States",
];

pub const DEFAULT_TREATED: &str = "Israel";

/// Additive effect on the treated unit's post-treatment periods.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum EffectProfile {
    Zero,
    Constant { tau: f64 },
    /// See [`hump_profile`].
    Hump { peak: f64, peak_time: usize, decay: f64, floor: f64 },
}

impl EffectProfile {
    pub fn path(&self, len: usize) -> Result<Vec<f64>> {
        match *self {
            EffectProfile::Zero => Ok(vec![0.0; len]),
            EffectProfile::Constant { tau } => Ok(vec![tau; len]),
            EffectProfile::Hump { peak, peak_time, decay, floor } => hump_profile(peak, peak_time, decay, floor, len),
        }
    }
}

/// Hump-shaped effect over `len` post periods: a linear rise reaching
/// `peak` in month `peak_time` (1-based), then geometric decay at rate
/// `decay` toward `peak·(1 − floor)`. `floor ≤ 0.6` keeps the long-run
/// level at or above 0.4·peak.
pub fn hump_profile(peak: f64, peak_time: usize, decay: f64, floor: f64, len: usize) -> Result<Vec<f64>> {
    if peak_time == 0 {
        return Err(Error::Validation("peak_time must be >= 1".into()));
    }
    if !(0.0..1.0).contains(&decay) {
        return Err(Error::Validation(format!("decay must lie in [0, 1), got {decay}")));
    }
    if !(0.0..=0.6).contains(&floor) {
        return Err(Error::Validation(format!("floor must lie in [0, 0.6], got {floor}")));
    }
    let rest = peak * (1.0 - floor);
    Ok((1..=len)
        .map(|m| {
            if m <= peak_time {
                peak * m as f64 / peak_time as f64
            } else {
                rest + (peak - rest) * (1.0 - decay).powi((m - peak_time) as i32)
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DgpSpec {
    pub n_units: usize,
    pub n_periods: usize,
    /// Offset of the first treated period.
    pub t0: usize,
    pub rank: usize,
    pub factor_persistence: f64,
    pub loading_scale: f64,
    pub fe_scale: f64,
    pub noise_sigma: f64,
    pub effect: EffectProfile,
    pub seed: u64,
    pub start: PeriodIndex,
}

impl Default for DgpSpec {
    /// 12 units × 212 months from 2008-01, treated from 2023-10 (23 post
    /// periods), rank 2, ρ_f = 0.9, σ = 0.1, constant effect 0.7.
    fn default() -> Self {
        Self {
            n_units: 12,
            n_periods: 212,
            t0: 189,
            rank: 2,
            factor_persistence: 0.9,
            loading_scale: 1.0,
            fe_scale: 1.0,
            noise_sigma: 0.1,
            effect: EffectProfile::Constant { tau: 0.7 },
            seed: 7,
            start: PeriodIndex::monthly(2008, 1).expect("valid date"),
        }
    }
}

impl DgpSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Validation(m));
        if self.n_units < 2 || self.n_periods < 3 {
            return bad(format!("need at least 2 units and 3 periods, got {}x{}", self.n_units, self.n_periods));
        }
        if self.rank > self.n_units.min(self.n_periods) {
            return bad(format!("rank {} exceeds min({}, {})", self.rank, self.n_units, self.n_periods));
        }
        if self.t0 == 0 || self.t0 >= self.n_periods {
            return bad(format!("t0 offset {} must be interior to 1..{}", self.t0, self.n_periods));
        }
        if !(0.0..1.0).contains(&self.factor_persistence) {
            return bad(format!("factor persistence must lie in [0, 1), got {}", self.factor_persistence));
        }
        for (name, v) in [("noise_sigma", self.noise_sigma), ("loading_scale", self.loading_scale), ("fe_scale", self.fe_scale)] {
            if !(v >= 0.0) || !v.is_finite() {
                return bad(format!("{name} must be finite and >= 0, got {v}"));
            }
        }
        self.effect.path(1).map(|_| ())
    }

    pub fn post_len(&self) -> usize {
        self.n_periods - self.t0
    }

    pub fn unit_names(&self) -> Vec<String> {
        if self.n_units == DEFAULT_DONORS.len() + 1 {
            std::iter::once(DEFAULT_TREATED).chain(DEFAULT_DONORS).map(String::from).collect()
        } else {
            (0..self.n_units).map(|i| format!("unit{i:02}")).collect()
        }
    }
}

/// Everything the generator knows that an estimator does not.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct GroundTruth<T> {
    pub spec: DgpSpec,
    pub treated_unit: String,
    pub t0: PeriodIndex,
    /// Untreated potential outcome of the treated unit on its post periods.
    pub y0_missing: Vec<T>,
    pub effect: Vec<T>,
    pub ate: T,
    pub alpha: Vec<T>,
    pub gamma: Vec<T>,
    pub low_rank: Matrix<T>,
}

#[derive(Debug, Clone)]
pub struct Generated<T> {
    pub panel: PanelMatrix<T>,
    pub treatment: TreatmentAssignment,
    pub truth: GroundTruth<T>,
}

/// Draws a panel. The draw order is fixed (α, γ, loadings, factors,
/// noise), so a spec and seed always give the same bits.
pub fn generate<T: Scalar>(spec: &DgpSpec) -> Result<Generated<T>> {
    spec.validate()?;
    let (n, tl, r) = (spec.n_units, spec.n_periods, spec.rank);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut normal = || -> f64 { rng.sample(StandardNormal) };
    let alpha: Vec<f64> = (0..n).map(|_| spec.fe_scale * normal()).collect();
    let gamma: Vec<f64> = (0..tl).map(|_| spec.fe_scale * normal()).collect();
    let loadings: Vec<f64> = (0..n * r).map(|_| spec.loading_scale * normal()).collect();
    // Unit stationary variance: innovations scaled by sqrt(1 − ρ²).
    let rho = spec.factor_persistence;
    let innov = (1.0 - rho * rho).sqrt();
    let mut factors = vec![0.0; r * tl];
    for k in 0..r {
        factors[k * tl] = normal();
        for t in 1..tl {
            factors[k * tl + t] = rho * factors[k * tl + t - 1] + innov * normal();
        }
    }
    let noise: Vec<f64> = (0..n * tl).map(|_| spec.noise_sigma * normal()).collect();
    let low_rank = Matrix::from_fn(n, tl, |i, t| (0..r).map(|k| loadings[i * r + k] * factors[k * tl + t]).sum::<f64>());
    let effect = spec.effect.path(spec.post_len())?;
    let y0 = Matrix::from_fn(n, tl, |i, t| alpha[i] + gamma[t] + low_rank[(i, t)] + noise[i * tl + t]);
    let y = Matrix::from_fn(n, tl, |i, t| if i == 0 && t >= spec.t0 { y0[(i, t)] + effect[t - spec.t0] } else { y0[(i, t)] });

    let names = spec.unit_names();
    let periods = PeriodRange::new(spec.start, tl);
    let panel = PanelMatrix::complete(names.clone(), periods, y.cast())?;
    let t0 = periods.get(spec.t0);
    let treatment = TreatmentAssignment::new(names[0].clone(), t0);
    let ate = effect.iter().sum::<f64>() / effect.len() as f64;
    let cast = |v: &[f64]| v.iter().map(|&x| T::of(x)).collect::<Vec<T>>();
    let truth = GroundTruth {
        spec: spec.clone(),
        treated_unit: names[0].clone(),
        t0,
        y0_missing: cast(&(spec.t0..tl).map(|t| y0[(0, t)]).collect::<Vec<_>>()),
        effect: cast(&effect),
        ate: T::of(ate),
        alpha: cast(&alpha),
        gamma: cast(&gamma),
        low_rank: low_rank.cast(),
    };
    Ok(Generated { panel, treatment, truth })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::singular_values;

    #[test]
    fn default_geometry() {
        let g = generate::<f64>(&DgpSpec::default()).unwrap();
        assert_eq!(g.panel.n_units(), 12);
        assert_eq!(g.panel.n_periods(), 212);
        assert_eq!(g.panel.units()[0], "Israel");
        assert_eq!(g.treatment.t0.to_string(), "2023-10");
        assert_eq!(g.panel.periods().last().to_string(), "2025-08");
        assert_eq!(g.truth.y0_missing.len(), 23);
    }

    #[test]
    fn determinism_and_seed_sensitivity() {
        let a = generate::<f64>(&DgpSpec::default()).unwrap();
        let b = generate::<f64>(&DgpSpec::default()).unwrap();
        assert_eq!(a.panel, b.panel);
        let c = generate::<f64>(&DgpSpec { seed: 8, ..DgpSpec::default() }).unwrap();
        assert_ne!(a.panel, c.panel);
    }

    #[test]
    fn low_rank_term_has_spec_rank() {
        for r in 0..4 {
            let g = generate::<f64>(&DgpSpec { rank: r, n_units: 8, n_periods: 40, t0: 30, ..DgpSpec::default() }).unwrap();
            let s = singular_values(&g.truth.low_rank).unwrap();
            let scale = s.first().copied().unwrap_or(0.0).max(1.0);
            assert!(s.iter().filter(|&&v| v > 1e-9 * scale).count() <= r);
        }
    }

    #[test]
    fn effect_accounting_is_exact() {
        let spec = DgpSpec { effect: EffectProfile::Hump { peak: 0.8, peak_time: 12, decay: 0.5, floor: 0.5 }, ..DgpSpec::default() };
        let g = generate::<f64>(&spec).unwrap();
        for (k, t) in (189..212).enumerate() {
            let obs = g.panel.values()[(0, t)];
            assert!((obs - g.truth.y0_missing[k] - g.truth.effect[k]).abs() < 1e-12);
        }
        let z = generate::<f64>(&DgpSpec { effect: EffectProfile::Zero, ..DgpSpec::default() }).unwrap();
        for (k, t) in (189..212).enumerate() {
            assert_eq!(z.panel.values()[(0, t)], z.truth.y0_missing[k]);
        }
    }

    #[test]
    fn pure_two_way_when_rank_and_noise_vanish() {
        let g = generate::<f64>(&DgpSpec { rank: 0, noise_sigma: 0.0, effect: EffectProfile::Zero, ..DgpSpec::default() }).unwrap();
        let y = g.panel.values();
        for i in 0..12 {
            for t in 0..212 {
                assert!((y[(i, t)] - g.truth.alpha[i] - g.truth.gamma[t]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn hump_examples() {
        let immediate = hump_profile(1.0, 1, 0.5, 0.5, 4).unwrap();
        assert_eq!(immediate[0], 1.0);
        assert!(immediate[1] < 1.0);
        let flat = hump_profile(1.0, 3, 0.0, 0.5, 6).unwrap();
        assert_eq!(&flat[2..], &[1.0, 1.0, 1.0, 1.0]);
        let h = hump_profile(0.8, 12, 0.5, 0.5, 23).unwrap();
        let adj = h[3..12].iter().sum::<f64>() / 9.0;
        let per = h[12..].iter().sum::<f64>() / 11.0;
        assert!(per < adj && per > 0.0);
        assert!(h.iter().skip(12).all(|&v| v >= 0.4 * 0.8 - 1e-12));
        assert!(hump_profile(1.0, 0, 0.5, 0.5, 3).is_err());
        assert!(hump_profile(1.0, 2, 1.0, 0.5, 3).is_err());
        assert!(hump_profile(1.0, 2, 0.5, 0.7, 3).is_err());
    }

    #[test]
    fn spec_validation() {
        let d = DgpSpec::default();
        assert!(DgpSpec { rank: 13, ..d.clone() }.validate().is_err());
        assert!(DgpSpec { t0: 0, ..d.clone() }.validate().is_err());
        assert!(DgpSpec { t0: 212, ..d.clone() }.validate().is_err());
        assert!(DgpSpec { noise_sigma: -1.0, ..d.clone() }.validate().is_err());
        assert!(DgpSpec { factor_persistence: 1.0, ..d }.validate().is_err());
    }
}
