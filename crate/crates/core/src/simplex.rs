//! Least squares over the probability simplex.
//!
//! Minimizes `wᵀQw − 2cᵀw + k` subject to `w ≥ 0`, `Σw = 1` with monotone
//! FISTA and a final equality-constrained polish on the detected support.

use crate::linalg::solve;
use crate::matrix::Matrix;
use crate::scalar::Scalar;

/// Euclidean projection onto the probability simplex (sort-based).
pub(crate) fn project_simplex<T: Scalar>(v: &[T]) -> Vec<T> {
    let mut sorted = v.to_vec();
    sorted.sort_by(|a, b| b.partial_cmp(a).unwrap_or(std::cmp::Ordering::Equal));
    let mut cumsum = T::zero();
    let mut theta = T::zero();
    for (k, &u) in sorted.iter().enumerate() {
        cumsum += u;
        let candidate = (cumsum - T::one()) / T::of_usize(k + 1);
        if u - candidate > T::zero() {
            theta = candidate;
        }
    }
    let mut out: Vec<T> = v.iter().map(|&x| (x - theta).max(T::zero())).collect();
    let total: T = out.iter().copied().sum();
    if total > T::zero() {
        out.iter_mut().for_each(|x| *x /= total);
    } else {
        let u = T::one() / T::of_usize(v.len());
        out.iter_mut().for_each(|x| *x = u);
    }
    out
}

/// Quadratic `wᵀQw − 2cᵀw + k` with `Q` symmetric positive semidefinite.
#[derive(Debug, Clone)]
pub(crate) struct SimplexQp<T> {
    pub q: Matrix<T>,
    pub c: Vec<T>,
    pub k: T,
}

#[derive(Debug, Clone)]
pub(crate) struct QpSolution<T> {
    pub weights: Vec<T>,
    pub objective: T,
    pub kkt_residual: T,
    pub iters: usize,
    pub converged: bool,
    pub trace: Vec<T>,
}

impl<T: Scalar> SimplexQp<T> {
    /// Least squares `‖A w − b‖² + ridge·‖w‖²`, `A` given column by column.
    pub fn least_squares(columns: &[Vec<T>], b: &[T], ridge: T) -> Self {
        let m = columns.len();
        let dot = |x: &[T], y: &[T]| x.iter().zip(y).map(|(&a, &b)| a * b).sum::<T>();
        let mut q = Matrix::from_fn(m, m, |i, j| dot(&columns[i], &columns[j]));
        for i in 0..m {
            q[(i, i)] += ridge;
        }
        let c = columns.iter().map(|col| dot(col, b)).collect();
        Self { q, c, k: dot(b, b) }
    }

    pub fn dim(&self) -> usize {
        self.c.len()
    }

    pub fn objective(&self, w: &[T]) -> T {
        let m = self.dim();
        let mut acc = self.k;
        for i in 0..m {
            let row = self.q.row(i);
            let qw: T = row.iter().zip(w).map(|(&a, &b)| a * b).sum();
            acc += w[i] * qw - T::of(2.0) * self.c[i] * w[i];
        }
        acc
    }

    pub fn gradient(&self, w: &[T]) -> Vec<T> {
        (0..self.dim())
            .map(|i| {
                let qw: T = self.q.row(i).iter().zip(w).map(|(&a, &b)| a * b).sum();
                T::of(2.0) * (qw - self.c[i])
            })
            .collect()
    }

    /// Gershgorin bound on the gradient's Lipschitz constant.
    fn lipschitz(&self) -> T {
        let bound = (0..self.dim())
            .map(|i| self.q.row(i).iter().map(|v| v.abs()).sum::<T>())
            .fold(T::zero(), T::max);
        (T::of(2.0) * bound).max(T::min_positive_value().sqrt())
    }

    /// `‖w − Π(w − ∇f(w)/L)‖∞`: zero exactly at a KKT point.
    pub fn kkt_residual(&self, w: &[T]) -> T {
        let l = self.lipschitz();
        let g = self.gradient(w);
        let stepped: Vec<T> = w.iter().zip(&g).map(|(&x, &d)| x - d / l).collect();
        project_simplex(&stepped).iter().zip(w).map(|(&p, &x)| (p - x).abs()).fold(T::zero(), T::max)
    }

    /// Solves `min f` over the support `S` with `Σ_S w = 1` and no sign
    /// constraint; accepted only if the result is non-negative and better.
    fn polish(&self, w: &[T], threshold: T) -> Option<Vec<T>> {
        let support: Vec<usize> = (0..self.dim()).filter(|&i| w[i] > threshold).collect();
        let s = support.len();
        if s == 0 {
            return None;
        }
        let mut kkt = Matrix::zeros(s + 1, s + 1);
        let mut rhs = vec![T::zero(); s + 1];
        for (a, &i) in support.iter().enumerate() {
            for (b, &j) in support.iter().enumerate() {
                kkt[(a, b)] = self.q[(i, j)];
            }
            kkt[(a, s)] = T::one();
            kkt[(s, a)] = T::one();
            rhs[a] = self.c[i];
        }
        rhs[s] = T::one();
        let sol = solve(&kkt, &rhs).ok()?;
        if sol[..s].iter().any(|&v| v < T::zero() || !v.is_finite()) {
            return None;
        }
        let mut out = vec![T::zero(); self.dim()];
        for (a, &i) in support.iter().enumerate() {
            out[i] = sol[a];
        }
        let total: T = out.iter().copied().sum();
        out.iter_mut().for_each(|v| *v /= total);
        Some(out)
    }

    /// Minimizer on the face spanned by `support` with `Σw = 1` and no sign
    /// constraint. A relative ridge of `1e-13` keeps rank-deficient faces
    /// solvable.
    fn face_minimizer(&self, support: &[usize]) -> Option<Vec<T>> {
        let s = support.len();
        let scale = support.iter().map(|&i| self.q[(i, i)].abs()).fold(T::zero(), T::max);
        let eps = scale * T::of(1e-13);
        let mut kkt = Matrix::zeros(s + 1, s + 1);
        let mut rhs = vec![T::zero(); s + 1];
        for (a, &i) in support.iter().enumerate() {
            for (b, &j) in support.iter().enumerate() {
                kkt[(a, b)] = self.q[(i, j)];
            }
            kkt[(a, a)] += eps;
            kkt[(a, s)] = T::one();
            kkt[(s, a)] = T::one();
            rhs[a] = self.c[i];
        }
        rhs[s] = T::one();
        let sol = solve(&kkt, &rhs).ok()?;
        sol.iter().all(|v| v.is_finite()).then(|| sol[..s].to_vec())
    }

    /// Primal active-set method (Lawson–Hanson style, adapted to the
    /// simplex). Iterates stay feasible and the objective never increases.
    fn active_set(&self, tol: T, trace: &mut Vec<T>) -> (Vec<T>, usize) {
        let m = self.dim();
        let start = (0..m)
            .min_by(|&a, &b| {
                let fa = self.q[(a, a)] - T::of(2.0) * self.c[a];
                let fb = self.q[(b, b)] - T::of(2.0) * self.c[b];
                fa.partial_cmp(&fb).unwrap_or(std::cmp::Ordering::Equal)
            })
            .unwrap_or(0);
        let mut w = vec![T::zero(); m];
        w[start] = T::one();
        let mut passive = vec![false; m];
        passive[start] = true;
        trace.push(self.objective(&w));
        let mut iters = 0;
        let cap = 20 * m + 50;
        while iters < cap {
            iters += 1;
            let g = self.gradient(&w);
            let support: Vec<usize> = (0..m).filter(|&i| passive[i]).collect();
            let mu = support.iter().map(|&i| g[i]).sum::<T>() / T::of_usize(support.len());
            let scale = g.iter().map(|v| v.abs()).fold(T::one(), T::max);
            let entering = (0..m)
                .filter(|&i| !passive[i])
                .map(|i| (i, g[i] - mu))
                .min_by(|a, b| a.1.partial_cmp(&b.1).unwrap_or(std::cmp::Ordering::Equal));
            match entering {
                Some((i, d)) if d < -tol * scale => passive[i] = true,
                _ => break,
            }
            // Inner loop: move toward the face minimizer, dropping blocking
            // coordinates until the minimizer is strictly interior.
            loop {
                let support: Vec<usize> = (0..m).filter(|&i| passive[i]).collect();
                let Some(z) = self.face_minimizer(&support) else {
                    return (w, iters);
                };
                if z.iter().all(|&v| v > T::zero()) {
                    let mut next = vec![T::zero(); m];
                    for (a, &i) in support.iter().enumerate() {
                        next[i] = z[a];
                    }
                    if self.objective(&next) <= *trace.last().expect("non-empty") {
                        w = next;
                    }
                    break;
                }
                let mut step = T::one();
                for (a, &i) in support.iter().enumerate() {
                    if z[a] <= T::zero() {
                        let denom = w[i] - z[a];
                        if denom > T::zero() {
                            step = step.min(w[i] / denom);
                        }
                    }
                }
                for (a, &i) in support.iter().enumerate() {
                    let wi = w[i];
                    w[i] = wi + step * (z[a] - wi);
                }
                let mut dropped = false;
                for (a, &i) in support.iter().enumerate() {
                    if z[a] <= T::zero() && w[i] <= T::epsilon() {
                        w[i] = T::zero();
                        passive[i] = false;
                        dropped = true;
                    }
                }
                if !dropped {
                    break;
                }
                let total: T = w.iter().copied().sum();
                w.iter_mut().for_each(|v| *v /= total);
                trace.push(self.objective(&w));
            }
            w.iter_mut().for_each(|v| *v = v.max(T::zero()));
            let total: T = w.iter().copied().sum();
            w.iter_mut().for_each(|v| *v /= total);
            trace.push(self.objective(&w));
        }
        (w, iters)
    }

    /// Active-set solve, finished with accelerated projected gradient when
    /// the KKT residual is still above `tol`.
    pub fn solve(&self, start: Option<&[T]>, max_iters: usize, tol: T) -> QpSolution<T> {
        if start.is_none() {
            // Ties resolve to the uniform point, matching a uniform warm start.
            let m = self.dim();
            let uniform = vec![T::one() / T::of_usize(m); m];
            let residual = self.kkt_residual(&uniform);
            if residual <= tol {
                let objective = self.objective(&uniform);
                return QpSolution { weights: uniform, objective, kkt_residual: residual, iters: 0, converged: true, trace: vec![objective] };
            }
            let mut trace = Vec::new();
            let (w, iters) = self.active_set(tol, &mut trace);
            let residual = self.kkt_residual(&w);
            if residual <= tol {
                let objective = self.objective(&w);
                return QpSolution { weights: w, objective, kkt_residual: residual, iters, converged: true, trace };
            }
            let mut rest = self.fista(Some(&w), max_iters, tol);
            trace.append(&mut rest.trace);
            rest.trace = trace;
            rest.iters += iters;
            return rest;
        }
        self.fista(start, max_iters, tol)
    }

    /// Monotone accelerated projected gradient (MFISTA with restarts).
    pub fn fista(&self, start: Option<&[T]>, max_iters: usize, tol: T) -> QpSolution<T> {
        let m = self.dim();
        let l = self.lipschitz();
        let mut x = match start {
            Some(s) if s.len() == m => project_simplex(s),
            _ => vec![T::one() / T::of_usize(m); m],
        };
        let mut fx = self.objective(&x);
        let mut trace = vec![fx];
        let mut y = x.clone();
        let mut t = T::one();
        let mut iters = 0;
        let mut residual = self.kkt_residual(&x);
        // Rounding allowance when comparing a polished point's objective.
        let slack = T::epsilon() * T::of(16.0) * (self.k.abs() + fx.abs());
        while iters < max_iters && residual > tol {
            iters += 1;
            let g = self.gradient(&y);
            let z = project_simplex(&y.iter().zip(&g).map(|(&v, &d)| v - d / l).collect::<Vec<_>>());
            let fz = self.objective(&z);
            let x_prev = x.clone();
            if fz <= fx {
                x = z.clone();
                fx = fz;
            }
            let t_next = (T::one() + (T::one() + T::of(4.0) * t * t).sqrt()) / T::of(2.0);
            y = (0..m)
                .map(|i| x[i] + (t / t_next) * (z[i] - x[i]) + ((t - T::one()) / t_next) * (x[i] - x_prev[i]))
                .collect();
            t = t_next;
            trace.push(fx);
            if iters % 10 == 0 || iters == max_iters {
                residual = self.kkt_residual(&x);
                // Restarting the momentum keeps long runs from oscillating.
                if iters % 200 == 0 {
                    y = x.clone();
                    t = T::one();
                }
            }
            if iters % 50 == 0 {
                if let Some(p) = self.polish(&x, T::epsilon().sqrt() * T::of(1e-2)) {
                    let fp = self.objective(&p);
                    let rp = self.kkt_residual(&p);
                    if fp <= fx + slack && rp < residual {
                        x = p;
                        fx = fp;
                        residual = rp;
                        y = x.clone();
                        t = T::one();
                        *trace.last_mut().expect("non-empty") = fx;
                    }
                }
            }
        }
        if residual > tol {
            if let Some(p) = self.polish(&x, T::epsilon().sqrt() * T::of(1e-2)) {
                let (fp, rp) = (self.objective(&p), self.kkt_residual(&p));
                if fp <= fx + slack && rp < residual {
                    x = p;
                    fx = fp;
                    residual = rp;
                    trace.push(fx);
                }
            }
        }
        QpSolution { weights: x, objective: fx, kkt_residual: residual, iters, converged: residual <= tol, trace }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::simplex_grid_min3;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn projection_examples() {
        assert_eq!(project_simplex(&[0.2, 0.3, 0.5]), vec![0.2, 0.3, 0.5]);
        assert_eq!(project_simplex(&[5.0, 0.0]), vec![1.0, 0.0]);
        let p = project_simplex(&[1.0f64, 1.0, 1.0]);
        assert!(p.iter().all(|&v| (v - 1.0 / 3.0).abs() < 1e-15));
        let p = project_simplex(&[-3.0, -3.0]);
        assert_eq!(p, vec![0.5, 0.5]);
    }

    proptest! {
        #[test]
        fn projection_is_feasible_and_idempotent(v in proptest::collection::vec(-10.0f64..10.0, 1..20)) {
            let p = project_simplex(&v);
            prop_assert!(p.iter().all(|&x| x >= 0.0));
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            let again = project_simplex(&p);
            for (a, b) in p.iter().zip(&again) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }
    }

    fn random_problem(m: usize, rows: usize, ridge: f64, seed: u64) -> (Vec<Vec<f64>>, Vec<f64>, SimplexQp<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cols: Vec<Vec<f64>> = (0..m).map(|_| (0..rows).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let b: Vec<f64> = (0..rows).map(|_| rng.random_range(-1.0..1.0)).collect();
        let qp = SimplexQp::least_squares(&cols, &b, ridge);
        (cols, b, qp)
    }

    #[test]
    fn matches_grid_oracle_in_three_dimensions() {
        for seed in 0..8 {
            let (cols, b, qp) = random_problem(3, 15, 0.01, seed);
            let sol = qp.solve(None, 10_000, 1e-10);
            assert!(sol.converged, "{} {:?} {}", sol.kkt_residual, sol.weights, sol.iters);
            let f = |w: &[f64; 3]| {
                let r: f64 = (0..15)
                    .map(|t| (b[t] - (0..3).map(|k| w[k] * cols[k][t]).sum::<f64>()).powi(2))
                    .sum();
                r + 0.01 * w.iter().map(|x| x * x).sum::<f64>()
            };
            let grid = simplex_grid_min3(f, 1e-3);
            for k in 0..3 {
                assert!((sol.weights[k] - grid[k]).abs() < 2e-3, "seed {seed}: {:?} vs {grid:?}", sol.weights);
            }
        }
    }

    #[test]
    fn trace_is_monotone_and_kkt_tight() {
        for seed in 0..10 {
            let (_, _, qp) = random_problem(12, 40, 0.0, 100 + seed);
            let sol = qp.solve(None, 50_000, 1e-8);
            assert!(sol.converged, "residual {}", sol.kkt_residual);
            for w in sol.trace.windows(2) {
                assert!(w[1] <= w[0] + 1e-12);
            }
            assert!(sol.weights.iter().all(|&v| v >= 0.0));
            assert!((sol.weights.iter().sum::<f64>() - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn wide_singular_problem_converges() {
        let (_, _, qp) = random_problem(150, 10, 0.0, 5);
        let sol = qp.solve(None, 100_000, 1e-8);
        assert!(sol.kkt_residual < 1e-6, "{}", sol.kkt_residual);
    }

    #[test]
    fn exact_match_gets_all_weight() {
        let cols: Vec<Vec<f64>> = vec![vec![1.0, 2.0, 3.0], vec![0.0, 5.0, -1.0], vec![2.0, 2.0, 2.0]];
        let qp = SimplexQp::least_squares(&cols, &[0.0, 5.0, -1.0], 0.0);
        let sol = qp.solve(None, 10_000, 1e-10);
        assert!((sol.weights[1] - 1.0).abs() < 1e-8);
        assert!(sol.objective.abs() < 1e-12);
    }

    #[test]
    fn active_set_agrees_with_projected_gradient() {
        for seed in 0..6 {
            let (_, _, qp) = random_problem(40, 15, 1e-3, 300 + seed);
            let exact = qp.solve(None, 200_000, 1e-10);
            let slow = qp.fista(None, 200_000, 1e-10);
            assert!(exact.converged && slow.converged);
            assert!((exact.objective - slow.objective).abs() <= 1e-9 * (1.0 + slow.objective.abs()));
            for (a, b) in exact.weights.iter().zip(&slow.weights) {
                assert!((a - b).abs() < 1e-6, "{a} vs {b}");
            }
        }
    }
}
