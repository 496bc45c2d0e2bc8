//! Synthetic difference-in-differences cross-estimator.
//!
//! Unit weights reproduce the treated unit's pre-treatment path from the
//! donors (ridge-penalized, simplex-constrained, free intercept); time
//! weights reproduce the donors' post-treatment means from their
//! pre-treatment periods. The effect is the weighted DiD contrast.

use std::io::Write;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inference::{derive_seed, PlaceboDistribution, PlaceboFailure, PlaceboKind, PlaceboRun};
use crate::panel::{PanelMatrix, TreatmentAssignment};
use crate::scalar::Scalar;
use crate::simplex::SimplexQp;

/// Weights below this are reported as zero in exports.
pub const REPORT_ZERO: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", content = "value", rename_all = "lowercase")]
pub enum ZetaMode<T> {
    /// `(N_donors · T_post)^{1/4} · σ̂`, σ̂ the standard deviation of
    /// first-differenced donor pre-treatment outcomes.
    Auto,
    Fixed(T),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct SdidConfig<T> {
    pub zeta: ZetaMode<T>,
    pub max_iters: usize,
    /// Target KKT residual of both weight problems.
    pub tol: T,
}

impl<T: Scalar> Default for SdidConfig<T> {
    fn default() -> Self {
        Self { zeta: ZetaMode::Auto, max_iters: 100_000, tol: T::of(1e-8).max(T::epsilon() * T::of(100.0)) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct WeightFit<T> {
    pub weights: Vec<T>,
    pub intercept: T,
    pub objective: T,
    pub kkt_residual: T,
    pub iters: usize,
    pub converged: bool,
    /// Objective after every solver iteration.
    #[serde(skip)]
    pub trace: Vec<T>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct SdidWeights<T> {
    pub donors: Vec<String>,
    pub omega: Vec<T>,
    pub omega_intercept: T,
    pub time_weights: Vec<T>,
    pub time_intercept: T,
    pub zeta: T,
    pub unit_fit: WeightFit<T>,
    pub time_fit: WeightFit<T>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct SdidEstimate<T> {
    pub tau: T,
    pub per_donor_delta: Vec<T>,
    pub treated_delta: T,
    pub weights: SdidWeights<T>,
}

/// Treated series, donor series and the pre-period count, all fully observed.
struct Layout<T> {
    treated: Vec<T>,
    donors: Vec<Vec<T>>,
    donor_names: Vec<String>,
    t0: usize,
}

fn layout<T: Scalar>(panel: &PanelMatrix<T>, treat: &TreatmentAssignment) -> Result<Layout<T>> {
    let (tr, t0) = treat.locate(panel)?;
    let series = |i: usize| -> Result<Vec<T>> {
        panel
            .series(i)
            .into_iter()
            .enumerate()
            .map(|(t, v)| {
                v.ok_or_else(|| {
                    Error::Validation(format!(
                        "synthetic DiD needs a complete panel; {} is missing at {}",
                        panel.units()[i],
                        panel.periods().get(t)
                    ))
                })
            })
            .collect()
    };
    let mut donors = Vec::new();
    let mut donor_names = Vec::new();
    for i in (0..panel.n_units()).filter(|&i| i != tr) {
        donors.push(series(i)?);
        donor_names.push(panel.units()[i].clone());
    }
    Ok(Layout { treated: series(tr)?, donors, donor_names, t0 })
}

fn centred<T: Scalar>(v: &[T]) -> (Vec<T>, T) {
    let m = v.iter().copied().sum::<T>() / T::of_usize(v.len());
    (v.iter().map(|&x| x - m).collect(), m)
}

fn mean_of<T: Scalar>(v: &[T]) -> T {
    v.iter().copied().sum::<T>() / T::of_usize(v.len())
}

fn weight_fit<T: Scalar>(qp: &SimplexQp<T>, cfg: &SdidConfig<T>, intercept: impl Fn(&[T]) -> T) -> WeightFit<T> {
    let sol = qp.solve(None, cfg.max_iters, cfg.tol);
    if !sol.converged {
        log::warn!("simplex weights stopped at KKT residual {} after {} iterations", sol.kkt_residual, sol.iters);
    }
    WeightFit {
        intercept: intercept(&sol.weights),
        weights: sol.weights,
        objective: sol.objective,
        kkt_residual: sol.kkt_residual,
        iters: sol.iters,
        converged: sol.converged,
        trace: sol.trace,
    }
}

fn unit_weights_for<T: Scalar>(lay: &Layout<T>, zeta: T, cfg: &SdidConfig<T>) -> Result<WeightFit<T>> {
    if lay.donors.len() < 2 || lay.t0 < 2 {
        return Err(Error::Insufficient(format!(
            "unit weights need >= 2 donors and >= 2 pre-periods, got {} and {}",
            lay.donors.len(),
            lay.t0
        )));
    }
    let pre = lay.t0;
    let (b, b_mean) = centred(&lay.treated[..pre]);
    let cols: Vec<(Vec<T>, T)> = lay.donors.iter().map(|d| centred(&d[..pre])).collect();
    let a: Vec<Vec<T>> = cols.iter().map(|(c, _)| c.clone()).collect();
    let ridge = zeta * zeta * T::of_usize(pre);
    let qp = SimplexQp::least_squares(&a, &b, ridge);
    Ok(weight_fit(&qp, cfg, |w| b_mean - w.iter().zip(&cols).map(|(&wi, (_, m))| wi * *m).sum::<T>()))
}

fn time_weights_for<T: Scalar>(lay: &Layout<T>, cfg: &SdidConfig<T>) -> Result<WeightFit<T>> {
    let (pre, total) = (lay.t0, lay.treated.len());
    if pre < 1 || total <= pre {
        return Err(Error::Insufficient("time weights need >= 1 pre-period and >= 1 post-period".into()));
    }
    if pre == 1 {
        let post: Vec<T> = lay.donors.iter().map(|d| mean_of(&d[pre..])).collect();
        let first: Vec<T> = lay.donors.iter().map(|d| d[0]).collect();
        let intercept = mean_of(&post) - mean_of(&first);
        return Ok(WeightFit {
            weights: vec![T::one()],
            intercept,
            objective: T::zero(),
            kkt_residual: T::zero(),
            iters: 0,
            converged: true,
            trace: vec![],
        });
    }
    let post: Vec<T> = lay.donors.iter().map(|d| mean_of(&d[pre..])).collect();
    let (b, b_mean) = centred(&post);
    let cols: Vec<(Vec<T>, T)> =
        (0..pre).map(|t| centred(&lay.donors.iter().map(|d| d[t]).collect::<Vec<T>>())).collect();
    let a: Vec<Vec<T>> = cols.iter().map(|(c, _)| c.clone()).collect();
    let qp = SimplexQp::least_squares(&a, &b, T::zero());
    Ok(weight_fit(&qp, cfg, |w| b_mean - w.iter().zip(&cols).map(|(&wi, (_, m))| wi * *m).sum::<T>()))
}

fn auto_zeta<T: Scalar>(lay: &Layout<T>) -> T {
    let diffs: Vec<T> = lay.donors.iter().flat_map(|d| d[..lay.t0].windows(2).map(|w| w[1] - w[0])).collect();
    let n = diffs.len();
    if n < 2 {
        return T::zero();
    }
    let m = mean_of(&diffs);
    let sigma = (diffs.iter().map(|&x| (x - m) * (x - m)).sum::<T>() / T::of_usize(n - 1)).sqrt();
    let post = lay.treated.len() - lay.t0;
    T::of_usize(lay.donors.len() * post).powf(T::of(0.25)) * sigma
}

fn resolve_zeta<T: Scalar>(lay: &Layout<T>, mode: ZetaMode<T>) -> Result<T> {
    match mode {
        ZetaMode::Auto => Ok(auto_zeta(lay)),
        ZetaMode::Fixed(z) if z >= T::zero() && z.is_finite() => Ok(z),
        ZetaMode::Fixed(z) => Err(Error::Validation(format!("zeta must be finite and >= 0, got {z}"))),
    }
}

/// Simplex unit weights with ridge `ζ²·T_pre·‖ω‖²` and a free intercept.
pub fn solve_unit_weights<T: Scalar>(
    panel: &PanelMatrix<T>,
    treat: &TreatmentAssignment,
    zeta: T,
    cfg: &SdidConfig<T>,
) -> Result<WeightFit<T>> {
    let lay = layout(panel, treat)?;
    unit_weights_for(&lay, resolve_zeta(&lay, ZetaMode::Fixed(zeta))?, cfg)
}

/// Simplex time weights over pre-periods with a free intercept, no ridge.
pub fn solve_time_weights<T: Scalar>(
    panel: &PanelMatrix<T>,
    treat: &TreatmentAssignment,
    cfg: &SdidConfig<T>,
) -> Result<WeightFit<T>> {
    time_weights_for(&layout(panel, treat)?, cfg)
}

/// `δ̂ = mean_post(Y) − Σ_t λ_t Y_t` for one series.
fn delta<T: Scalar>(series: &[T], t0: usize, lambda: &[T]) -> T {
    mean_of(&series[t0..]) - lambda.iter().zip(&series[..t0]).map(|(&l, &y)| l * y).sum::<T>()
}

/// Weighted DiD contrast for given unit and time weights.
pub fn weighted_did<T: Scalar>(
    panel: &PanelMatrix<T>,
    treat: &TreatmentAssignment,
    omega: &[T],
    lambda: &[T],
) -> Result<(T, T, Vec<T>)> {
    let lay = layout(panel, treat)?;
    if omega.len() != lay.donors.len() || lambda.len() != lay.t0 {
        return Err(Error::Shape(format!(
            "expected {} unit and {} time weights, got {} and {}",
            lay.donors.len(),
            lay.t0,
            omega.len(),
            lambda.len()
        )));
    }
    Ok(contrast(&lay, omega, lambda))
}

fn contrast<T: Scalar>(lay: &Layout<T>, omega: &[T], lambda: &[T]) -> (T, T, Vec<T>) {
    let treated = delta(&lay.treated, lay.t0, lambda);
    let donors: Vec<T> = lay.donors.iter().map(|d| delta(d, lay.t0, lambda)).collect();
    let tau = treated - omega.iter().zip(&donors).map(|(&w, &d)| w * d).sum::<T>();
    (tau, treated, donors)
}

fn estimate_layout<T: Scalar>(lay: &Layout<T>, cfg: &SdidConfig<T>) -> Result<SdidEstimate<T>> {
    let zeta = resolve_zeta(lay, cfg.zeta)?;
    let unit_fit = unit_weights_for(lay, zeta, cfg)?;
    let time_fit = time_weights_for(lay, cfg)?;
    let (tau, treated_delta, per_donor_delta) = contrast(lay, &unit_fit.weights, &time_fit.weights);
    Ok(SdidEstimate {
        tau,
        per_donor_delta,
        treated_delta,
        weights: SdidWeights {
            donors: lay.donor_names.clone(),
            omega: unit_fit.weights.clone(),
            omega_intercept: unit_fit.intercept,
            time_weights: time_fit.weights.clone(),
            time_intercept: time_fit.intercept,
            zeta,
            unit_fit,
            time_fit,
        },
    })
}

/// Synthetic DiD estimate; every unit other than the treated one is a donor.
pub fn sdid_estimate<T: Scalar>(
    panel: &PanelMatrix<T>,
    treat: &TreatmentAssignment,
    cfg: &SdidConfig<T>,
) -> Result<SdidEstimate<T>> {
    estimate_layout(&layout(panel, treat)?, cfg)
}

/// Placebo distribution from reassigning treatment to donors. With
/// `n ≥ N_donors` every donor is used once (the exact permutation
/// distribution); otherwise `n` distinct donors are drawn with the seed.
pub fn sdid_placebo<T: Scalar>(
    panel: &PanelMatrix<T>,
    treat: &TreatmentAssignment,
    cfg: &SdidConfig<T>,
    n: usize,
    seed: u64,
) -> Result<PlaceboDistribution<T>> {
    let tr = panel.unit_index(&treat.treated_unit)?;
    let donors: Vec<usize> = (0..panel.n_units()).filter(|&i| i != tr).collect();
    if donors.len() < 3 {
        return Err(Error::Insufficient(format!("{} donors; placebos need >= 3", donors.len())));
    }
    if n == 0 {
        return Err(Error::Validation("n must be >= 1".into()));
    }
    let observed = sdid_estimate(panel, treat, cfg)?.tau;
    let chosen: Vec<usize> = if n >= donors.len() {
        donors.clone()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut idx = sample(&mut rng, donors.len(), n).into_vec();
        idx.sort_unstable();
        idx.into_iter().map(|k| donors[k]).collect()
    };
    let pool = panel.select_units(&donors)?;
    let outcomes: Vec<(String, u64, Result<T>)> = chosen
        .par_iter()
        .enumerate()
        .map(|(k, &d)| {
            let name = panel.units()[d].clone();
            let pseudo = TreatmentAssignment::new(name.clone(), treat.t0);
            (name, derive_seed(seed, k as u64), sdid_estimate(&pool, &pseudo, cfg).map(|e| e.tau))
        })
        .collect();
    let mut runs = Vec::new();
    let mut failures = Vec::new();
    for (label, seed, res) in outcomes {
        match res {
            Ok(ate) => runs.push(PlaceboRun { label, ate, seed }),
            Err(e) => failures.push(PlaceboFailure { label, reason: e.to_string() }),
        }
    }
    PlaceboDistribution::new(PlaceboKind::Sdid, observed, runs, failures)
}

impl<T: Scalar> SdidEstimate<T> {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// `donor,weight` rows; weights under [`REPORT_ZERO`] print as 0.
    pub fn write_weights_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["donor", "weight"])?;
        for (name, &v) in self.weights.donors.iter().zip(&self.weights.omega) {
            let shown = if v.as_f64() < REPORT_ZERO { "0".to_string() } else { format!("{:.4}", v.as_f64()) };
            w.write_record([name.as_str(), &shown])?;
        }
        w.flush().map_err(|source| Error::Io { path: "<csv writer>".into(), source })?;
        Ok(())
    }
}
