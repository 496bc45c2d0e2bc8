//! Matrix-completion estimator with two-way fixed effects.
//!
//! Minimizes `Σ_Ω (Y − α_i − γ_t − L_it)² + λ‖L‖_*` by block-coordinate
//! descent: exact fixed-effect updates given `L`, then a soft-impute
//! proximal step `L ← svt(P_Ω(Y − α − γ) + P_Ω⊥(L), λ/2)`. The halved
//! threshold matches the un-halved squared-error term, so `λ` carries over
//! literally from the objective. Every block step is a (majorized) exact
//! minimization, which makes the objective trace monotone.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{nuclear_norm, singular_values, svt_parts};
use crate::matrix::Matrix;
use crate::panel::{ObservedSets, PanelMatrix};
use crate::scalar::Scalar;

/// Singular values at or below this count as zero in `effective_rank`.
pub const RANK_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeMode {
    /// Unit and period effects.
    #[default]
    Both,
    /// No additive effects; `L` carries everything.
    None,
}

/// How `McConfig::lambda` is turned into the absolute penalty weight.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LambdaScale {
    /// Use `lambda` as given.
    #[default]
    Absolute,
    /// Multiply by the largest singular value of the initial fixed-effect
    /// residual matrix (handy for synthetic data of arbitrary scale).
    MaxSingular,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct McConfig<T> {
    pub lambda: T,
    pub lambda_scale: LambdaScale,
    pub max_iters: usize,
    pub rel_tol: T,
    pub fe_mode: FeMode,
}

impl<T: Scalar> Default for McConfig<T> {
    fn default() -> Self {
        Self {
            lambda: T::of(1e-3),
            lambda_scale: LambdaScale::Absolute,
            max_iters: 10_000,
            rel_tol: T::default_tol(),
            fe_mode: FeMode::Both,
        }
    }
}

impl<T: Scalar> McConfig<T> {
    pub fn with_lambda(lambda: T) -> Self {
        Self { lambda, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= T::zero()) || !self.lambda.is_finite() {
            return Err(Error::Validation(format!("lambda must be finite and >= 0, got {}", self.lambda)));
        }
        if !(self.rel_tol > T::zero()) {
            return Err(Error::Validation("rel_tol must be > 0".into()));
        }
        if self.max_iters == 0 {
            return Err(Error::Validation("max_iters must be >= 1".into()));
        }
        Ok(())
    }
}

/// Fitted fixed effects, low-rank term and the imputed treated block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct McFit<T> {
    pub alpha: Vec<T>,
    pub gamma: Vec<T>,
    pub l: Matrix<T>,
    /// Counterfactual for each missing cell, in time order.
    pub imputed: Vec<T>,
    pub objective_trace: Vec<T>,
    pub converged: bool,
    pub iters: usize,
    pub effective_rank: usize,
    /// Absolute penalty weight actually applied.
    pub lambda: T,
    pub treated: usize,
}

impl<T: Scalar> McFit<T> {
    /// Fitted untreated outcome `α_i + γ_t + L_it`.
    #[inline]
    pub fn fitted(&self, unit: usize, period: usize) -> T {
        self.alpha[unit] + self.gamma[period] + self.l[(unit, period)]
    }

    pub fn final_objective(&self) -> T {
        *self.objective_trace.last().expect("trace starts non-empty")
    }
}

fn check_shapes<T: Scalar>(panel: &PanelMatrix<T>, sets: &ObservedSets) -> Result<()> {
    if sets.n_units != panel.n_units() || sets.n_periods != panel.n_periods() {
        return Err(Error::Shape(format!(
            "observed sets built for {}x{}, panel is {}x{}",
            sets.n_units,
            sets.n_periods,
            panel.n_units(),
            panel.n_periods()
        )));
    }
    Ok(())
}

fn check_identification(sets: &ObservedSets, fe_mode: FeMode) -> Result<()> {
    let (n, t) = (sets.n_units, sets.n_periods);
    if sets.omega.len() < n + t {
        return Err(Error::Identification(format!(
            "{} fitting cells cannot identify {n} unit and {t} period effects",
            sets.omega.len()
        )));
    }
    if fe_mode == FeMode::Both {
        if let Some(i) = sets.omega_per_unit().iter().position(|&c| c == 0) {
            return Err(Error::Identification(format!("unit {i} has no fitting cells")));
        }
        if let Some(p) = sets.omega_per_period().iter().position(|&c| c == 0) {
            return Err(Error::Identification(format!("period {p} has no fitting cells")));
        }
    }
    Ok(())
}

/// Working state shared by the block updates.
struct Problem<'a, T> {
    y: &'a Matrix<T>,
    omega: &'a [bool],
    n: usize,
    t: usize,
    count_unit: Vec<T>,
    count_period: Vec<T>,
    fe_mode: FeMode,
}

impl<'a, T: Scalar> Problem<'a, T> {
    fn build(panel: &'a PanelMatrix<T>, sets: &'a ObservedSets, fe_mode: FeMode) -> Self {
        let count_unit = sets.omega_per_unit().into_iter().map(T::of_usize).collect();
        let count_period = sets.omega_per_period().into_iter().map(T::of_usize).collect();
        Self {
            y: panel.values(),
            omega: sets.omega_mask(),
            n: panel.n_units(),
            t: panel.n_periods(),
            count_unit,
            count_period,
            fe_mode,
        }
    }

    #[inline]
    fn observed(&self, i: usize, t: usize) -> bool {
        self.omega[i * self.t + t]
    }

    /// Exact minimization over (α, γ) given `l`, by alternating Ω-restricted
    /// means, followed by the Ω-weighted zero-mean normalization of α.
    fn update_effects(&self, l: &Matrix<T>, alpha: &mut [T], gamma: &mut [T]) {
        if self.fe_mode == FeMode::None {
            alpha.iter_mut().for_each(|a| *a = T::zero());
            gamma.iter_mut().for_each(|g| *g = T::zero());
            return;
        }
        let (n, tl) = (self.n, self.t);
        let scale = T::one() + self.y.max_abs() + l.max_abs();
        let tol = T::epsilon() * T::of(64.0) * scale;
        let mut col_acc = vec![T::zero(); tl];
        for _sweep in 0..1000 {
            let mut delta = T::zero();
            for i in 0..n {
                let yr = self.y.row(i);
                let lr = l.row(i);
                let mut acc = T::zero();
                for t in 0..tl {
                    if self.observed(i, t) {
                        acc += yr[t] - lr[t] - gamma[t];
                    }
                }
                let next = acc / self.count_unit[i];
                delta = delta.max((next - alpha[i]).abs());
                alpha[i] = next;
            }
            col_acc.iter_mut().for_each(|c| *c = T::zero());
            for i in 0..n {
                let yr = self.y.row(i);
                let lr = l.row(i);
                for t in 0..tl {
                    if self.observed(i, t) {
                        col_acc[t] += yr[t] - lr[t] - alpha[i];
                    }
                }
            }
            for t in 0..tl {
                let next = col_acc[t] / self.count_period[t];
                delta = delta.max((next - gamma[t]).abs());
                gamma[t] = next;
            }
            if delta <= tol {
                break;
            }
        }
        let total: T = self.count_unit.iter().copied().sum();
        let shift = alpha.iter().zip(&self.count_unit).map(|(&a, &c)| a * c).sum::<T>() / total;
        alpha.iter_mut().for_each(|a| *a -= shift);
        gamma.iter_mut().for_each(|g| *g += shift);
    }

    fn data_term(&self, alpha: &[T], gamma: &[T], l: &Matrix<T>) -> T {
        let mut acc = T::zero();
        for i in 0..self.n {
            for t in 0..self.t {
                if self.observed(i, t) {
                    let r = self.y[(i, t)] - alpha[i] - gamma[t] - l[(i, t)];
                    acc += r * r;
                }
            }
        }
        acc
    }

    /// Residuals on Ω, current `l` elsewhere.
    fn completed(&self, alpha: &[T], gamma: &[T], l: &Matrix<T>) -> Matrix<T> {
        Matrix::from_fn(self.n, self.t, |i, t| {
            if self.observed(i, t) {
                self.y[(i, t)] - alpha[i] - gamma[t]
            } else {
                l[(i, t)]
            }
        })
    }
}

/// Residual matrix of the fixed-effects-only fit: `Y − α − γ` on Ω, zero elsewhere.
pub fn fe_residual_matrix<T: Scalar>(
    panel: &PanelMatrix<T>,
    sets: &ObservedSets,
    fe_mode: FeMode,
) -> Result<Matrix<T>> {
    check_shapes(panel, sets)?;
    check_identification(sets, fe_mode)?;
    let prob = Problem::build(panel, sets, fe_mode);
    let zero_l = Matrix::zeros(prob.n, prob.t);
    let mut alpha = vec![T::zero(); prob.n];
    let mut gamma = vec![T::zero(); prob.t];
    prob.update_effects(&zero_l, &mut alpha, &mut gamma);
    Ok(prob.completed(&alpha, &gamma, &zero_l))
}

/// Largest singular value of [`fe_residual_matrix`]; the unit of
/// [`LambdaScale::MaxSingular`].
pub fn lambda_unit<T: Scalar>(panel: &PanelMatrix<T>, sets: &ObservedSets, fe_mode: FeMode) -> Result<T> {
    let r = fe_residual_matrix(panel, sets, fe_mode)?;
    Ok(singular_values(&r)?.first().copied().unwrap_or_else(T::zero))
}

fn absolute_lambda<T: Scalar>(panel: &PanelMatrix<T>, sets: &ObservedSets, config: &McConfig<T>) -> Result<T> {
    Ok(match config.lambda_scale {
        LambdaScale::Absolute => config.lambda,
        LambdaScale::MaxSingular => config.lambda * lambda_unit(panel, sets, config.fe_mode)?,
    })
}

/// Fits from the cold start (effects from Ω means, `L = 0`).
pub fn fit<T: Scalar>(panel: &PanelMatrix<T>, sets: &ObservedSets, config: &McConfig<T>) -> Result<McFit<T>> {
    let lambda = absolute_lambda(panel, sets, config)?;
    run(panel, sets, config, lambda, None)
}

/// Fits starting from a previous solution on the same panel (warm start).
pub fn fit_warm<T: Scalar>(
    panel: &PanelMatrix<T>,
    sets: &ObservedSets,
    config: &McConfig<T>,
    start: &McFit<T>,
) -> Result<McFit<T>> {
    let lambda = absolute_lambda(panel, sets, config)?;
    run(panel, sets, config, lambda, Some(start))
}

/// Solves along a penalty path from the largest to the smallest value,
/// warm-starting each fit from the previous one. The largest value is
/// cold-started. Results are returned in the order of `lambdas`.
pub fn fit_path<T: Scalar>(
    panel: &PanelMatrix<T>,
    sets: &ObservedSets,
    lambdas: &[T],
    template: &McConfig<T>,
) -> Result<Vec<McFit<T>>> {
    if lambdas.is_empty() {
        return Err(Error::Validation("empty lambda path".into()));
    }
    let unit = match template.lambda_scale {
        LambdaScale::Absolute => T::one(),
        LambdaScale::MaxSingular => lambda_unit(panel, sets, template.fe_mode)?,
    };
    let mut order: Vec<usize> = (0..lambdas.len()).collect();
    order.sort_by(|&a, &b| lambdas[b].partial_cmp(&lambdas[a]).unwrap_or(std::cmp::Ordering::Equal));
    let mut out: Vec<Option<McFit<T>>> = vec![None; lambdas.len()];
    let mut prev: Option<McFit<T>> = None;
    for k in order {
        let config = McConfig { lambda: lambdas[k], ..*template };
        config.validate()?;
        let fit = run(panel, sets, &config, lambdas[k] * unit, prev.as_ref())?;
        prev = Some(fit.clone());
        out[k] = Some(fit);
    }
    Ok(out.into_iter().map(|f| f.expect("every lambda visited")).collect())
}

/// One accepted point of the descent: effects, low-rank term and objective.
#[derive(Clone)]
struct Iterate<T> {
    alpha: Vec<T>,
    gamma: Vec<T>,
    l: Matrix<T>,
    rank: usize,
    objective: T,
}

/// Depth of the Anderson history.
const ANDERSON_DEPTH: usize = 6;

impl<'a, T: Scalar> Problem<'a, T> {
    /// One block-coordinate sweep: proximal step on `L`, then exact effects.
    fn sweep(&self, alpha: &[T], gamma: &[T], l: &Matrix<T>, lambda: T) -> Result<Iterate<T>> {
        let shrunk = svt_parts(&self.completed(alpha, gamma, l), lambda / T::of(2.0))?;
        let rank = shrunk.rank(T::of(RANK_TOL));
        let nuc = shrunk.nuclear_norm();
        let l = shrunk.matrix;
        let mut alpha = alpha.to_vec();
        let mut gamma = gamma.to_vec();
        self.update_effects(&l, &mut alpha, &mut gamma);
        let objective = self.data_term(&alpha, &gamma, &l) + lambda * nuc;
        Ok(Iterate { alpha, gamma, l, rank, objective })
    }

    /// The sweep only reads the effects and the free (non-Ω) cells of `L`.
    fn pack(&self, it: &Iterate<T>) -> Vec<T> {
        let mut v = Vec::with_capacity(self.n + self.t);
        v.extend_from_slice(&it.alpha);
        v.extend_from_slice(&it.gamma);
        for i in 0..self.n {
            for t in 0..self.t {
                if !self.observed(i, t) {
                    v.push(it.l[(i, t)]);
                }
            }
        }
        v
    }

    fn unpack(&self, v: &[T]) -> (Vec<T>, Vec<T>, Matrix<T>) {
        let alpha = v[..self.n].to_vec();
        let gamma = v[self.n..self.n + self.t].to_vec();
        let mut l = Matrix::zeros(self.n, self.t);
        let mut k = self.n + self.t;
        for i in 0..self.n {
            for t in 0..self.t {
                if !self.observed(i, t) {
                    l[(i, t)] = v[k];
                    k += 1;
                }
            }
        }
        (alpha, gamma, l)
    }
}

/// Type-II Anderson extrapolation from `(x_j, g(x_j))` pairs; the last pair
/// is the anchor. Returns `None` when the history is too short or the small
/// least-squares system is degenerate.
fn anderson<T: Scalar>(history: &[(Vec<T>, Vec<T>)]) -> Option<Vec<T>> {
    if history.len() < 2 {
        return None;
    }
    let (x_last, g_last) = history.last()?;
    let f_last: Vec<T> = g_last.iter().zip(x_last).map(|(&g, &x)| g - x).collect();
    let cols: Vec<Vec<T>> = history[..history.len() - 1]
        .iter()
        .map(|(x, g)| g.iter().zip(x).zip(&f_last).map(|((&g, &x), &f)| (g - x) - f).collect())
        .collect();
    let m = cols.len();
    let dot = |a: &[T], b: &[T]| a.iter().zip(b).map(|(&x, &y)| x * y).sum::<T>();
    let mut gram = Matrix::from_fn(m, m, |i, j| dot(&cols[i], &cols[j]));
    let trace: T = (0..m).map(|i| gram[(i, i)]).sum();
    if !(trace > T::zero()) {
        return None;
    }
    let ridge = trace * T::of(1e-10);
    for i in 0..m {
        gram[(i, i)] += ridge;
    }
    let rhs: Vec<T> = cols.iter().map(|c| -dot(c, &f_last)).collect();
    let c = crate::linalg::solve(&gram, &rhs).ok()?;
    let mut out = g_last.clone();
    for (j, (x, g)) in history[..m].iter().enumerate() {
        for k in 0..out.len() {
            out[k] += c[j] * ((g[k] - x[k]) - (g_last[k] - x_last[k]) + (x[k] - x_last[k]));
        }
    }
    out.iter().all(|v| v.is_finite()).then_some(out)
}

fn run<T: Scalar>(
    panel: &PanelMatrix<T>,
    sets: &ObservedSets,
    config: &McConfig<T>,
    lambda: T,
    start: Option<&McFit<T>>,
) -> Result<McFit<T>> {
    config.validate()?;
    check_shapes(panel, sets)?;
    check_identification(sets, config.fe_mode)?;
    let prob = Problem::build(panel, sets, config.fe_mode);
    let (n, tl) = (prob.n, prob.t);

    let mut current = match start {
        Some(s) => {
            if s.l.shape() != (n, tl) {
                return Err(Error::Shape("warm start has a different panel shape".into()));
            }
            let nuc = nuclear_norm(&s.l)?;
            let objective = prob.data_term(&s.alpha, &s.gamma, &s.l) + lambda * nuc;
            Iterate { alpha: s.alpha.clone(), gamma: s.gamma.clone(), l: s.l.clone(), rank: s.effective_rank, objective }
        }
        None => {
            let l = Matrix::zeros(n, tl);
            let mut alpha = vec![T::zero(); n];
            let mut gamma = vec![T::zero(); tl];
            prob.update_effects(&l, &mut alpha, &mut gamma);
            let objective = prob.data_term(&alpha, &gamma, &l);
            Iterate { alpha, gamma, l, rank: 0, objective }
        }
    };
    if !current.objective.is_finite() {
        return Err(Error::NonFinite("initial objective".into()));
    }
    // Guards the relative stop against an objective that is exactly zero.
    let floor = T::epsilon() * sets.omega.iter().map(|&(i, t)| prob.y[(i, t)] * prob.y[(i, t)]).sum::<T>();
    // The objective is nearly flat along the free cells when λ is small, so
    // a stop also needs the plain sweep to have (almost) stopped moving.
    let step_tol = (config.rel_tol * lambda * T::of(1e-2)).max(T::epsilon() * T::of(100.0) * (T::one() + prob.y.max_abs()));
    let mut trace = vec![current.objective];
    let mut history: Vec<(Vec<T>, Vec<T>)> = Vec::new();
    let mut stretch = T::of(2.0);
    let mut converged = false;
    let mut iters = 0;
    while iters < config.max_iters {
        iters += 1;
        let x = prob.pack(&current);
        let plain = prob.sweep(&current.alpha, &current.gamma, &current.l, lambda)?;
        if !plain.objective.is_finite() {
            return Err(Error::NonFinite(format!("objective at iteration {iters}")));
        }
        let gx = prob.pack(&plain);
        let displacement = gx.iter().zip(&x).map(|(&g, &v)| (g - v).abs()).fold(T::zero(), T::max);
        history.push((x.clone(), gx.clone()));
        if history.len() > ANDERSON_DEPTH {
            history.remove(0);
        }
        // Safeguard: an extrapolated point is only kept if the sweep from it
        // beats the plain sweep, so every accepted objective is a descent.
        let mut next = plain;
        if let Some(xa) = anderson(&history) {
            let (a, g, l) = prob.unpack(&xa);
            if let Ok(cand) = prob.sweep(&a, &g, &l, lambda) {
                if cand.objective.is_finite() && cand.objective < next.objective {
                    history.push((xa, prob.pack(&cand)));
                    next = cand;
                } else {
                    history.drain(..history.len() - 1);
                }
            }
        }
        // Far from the optimum at small λ the sweep drifts with a nearly
        // constant step; a doubling line search along it covers the distance.
        let mut accepted_scale = None;
        let mut scale = stretch;
        for _ in 0..40 {
            let xs: Vec<T> = x.iter().zip(&gx).map(|(&v, &g)| v + scale * (g - v)).collect();
            let (a, g, l) = prob.unpack(&xs);
            match prob.sweep(&a, &g, &l, lambda) {
                Ok(cand) if cand.objective.is_finite() && cand.objective < next.objective => {
                    history.push((xs, prob.pack(&cand)));
                    next = cand;
                    accepted_scale = Some(scale);
                    scale *= T::of(2.0);
                }
                _ => break,
            }
        }
        stretch = match accepted_scale {
            Some(s) => s,
            None => (stretch / T::of(4.0)).max(T::of(2.0)),
        };
        while history.len() > ANDERSON_DEPTH {
            history.remove(0);
        }
        let change = (current.objective - next.objective).abs();
        current = next;
        trace.push(current.objective);
        let flat = change <= config.rel_tol * current.objective.abs().max(floor).max(T::min_positive_value());
        if flat && displacement <= step_tol {
            converged = true;
            break;
        }
    }
    if !converged {
        log::warn!("matrix completion hit max_iters={} without converging", config.max_iters);
    }
    let Iterate { alpha, gamma, l, rank, .. } = current;
    let imputed = sets.missing.iter().map(|&(i, t)| alpha[i] + gamma[t] + l[(i, t)]).collect();
    Ok(McFit {
        alpha,
        gamma,
        l,
        imputed,
        objective_trace: trace,
        converged,
        iters,
        effective_rank: rank,
        lambda,
        treated: sets.treated,
    })
}

/// `Σ_Ω (Y − α_i − γ_t − L_it)² + λ‖L‖_*`.
pub fn objective<T: Scalar>(
    panel: &PanelMatrix<T>,
    sets: &ObservedSets,
    alpha: &[T],
    gamma: &[T],
    l: &Matrix<T>,
    lambda: T,
) -> Result<T> {
    check_shapes(panel, sets)?;
    if alpha.len() != panel.n_units() || gamma.len() != panel.n_periods() || l.shape() != panel.values().shape() {
        return Err(Error::Shape("effects or low-rank term do not match the panel".into()));
    }
    let prob = Problem::build(panel, sets, FeMode::Both);
    let penalty = if lambda == T::zero() { T::zero() } else { lambda * nuclear_norm(l)? };
    Ok(prob.data_term(alpha, gamma, l) + penalty)
}

/// Counterfactual `α_tr + γ_t + L_tr,t` for every missing cell, in time order.
pub fn impute_counterfactual<T: Scalar>(fit: &McFit<T>, sets: &ObservedSets) -> Vec<T> {
    sets.missing.iter().map(|&(i, t)| fit.fitted(i, t)).collect()
}
