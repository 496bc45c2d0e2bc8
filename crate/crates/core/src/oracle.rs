//! Independent reference implementations used only by tests.
//!
//! None of these share code paths with the production estimators.

use crate::matrix::Matrix;

/// One-sided (Hestenes) Jacobi SVD. Returns `(u, s, v)` with `s` descending.
pub fn jacobi_svd(a: &Matrix<f64>) -> (Matrix<f64>, Vec<f64>, Matrix<f64>) {
    let transposed = a.rows() < a.cols();
    let work = if transposed { a.transpose() } else { a.clone() };
    let (m, n) = work.shape();
    let mut cols: Vec<Vec<f64>> = (0..n).map(|j| work.column(j)).collect();
    let mut v: Vec<Vec<f64>> = (0..n).map(|j| (0..n).map(|i| if i == j { 1.0 } else { 0.0 }).collect()).collect();
    for _sweep in 0..100 {
        let mut off = 0.0f64;
        for p in 0..n {
            for q in (p + 1)..n {
                let alpha: f64 = cols[p].iter().map(|x| x * x).sum();
                let beta: f64 = cols[q].iter().map(|x| x * x).sum();
                let gamma: f64 = cols[p].iter().zip(&cols[q]).map(|(x, y)| x * y).sum();
                if gamma == 0.0 {
                    continue;
                }
                off = off.max(gamma.abs() / (alpha * beta).sqrt().max(f64::MIN_POSITIVE));
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let t = if zeta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for i in 0..m {
                    let (x, y) = (cols[p][i], cols[q][i]);
                    cols[p][i] = c * x - s * y;
                    cols[q][i] = s * x + c * y;
                }
                for i in 0..n {
                    let (x, y) = (v[p][i], v[q][i]);
                    v[p][i] = c * x - s * y;
                    v[q][i] = s * x + c * y;
                }
            }
        }
        if off < 1e-15 {
            break;
        }
    }
    let mut order: Vec<(f64, usize)> =
        cols.iter().enumerate().map(|(j, c)| (c.iter().map(|x| x * x).sum::<f64>().sqrt(), j)).collect();
    order.sort_by(|a, b| b.0.total_cmp(&a.0));
    let s: Vec<f64> = order.iter().map(|o| o.0).collect();
    let u = Matrix::from_fn(m, n, |i, k| {
        let (sk, j) = order[k];
        if sk > 0.0 {
            cols[j][i] / sk
        } else {
            0.0
        }
    });
    let vm = Matrix::from_fn(n, n, |i, k| v[order[k].1][i]);
    if transposed {
        (vm, s, u)
    } else {
        (u, s, vm)
    }
}

/// `u · diag(max(s − λ, 0)) · vᵀ` from the Jacobi factorization.
pub fn jacobi_svt(a: &Matrix<f64>, threshold: f64) -> Matrix<f64> {
    let (u, s, v) = jacobi_svd(a);
    Matrix::from_fn(a.rows(), a.cols(), |i, j| {
        s.iter().enumerate().map(|(k, &sk)| u[(i, k)] * (sk - threshold).max(0.0) * v[(j, k)]).sum()
    })
}

/// Dense least squares by normal equations and Gaussian elimination with
/// partial pivoting. Rank-deficient designs are handled by a tiny ridge.
pub fn least_squares(x: &[Vec<f64>], y: &[f64]) -> Vec<f64> {
    let p = x[0].len();
    let mut a = vec![vec![0.0; p + 1]; p];
    for (row, &yi) in x.iter().zip(y) {
        for j in 0..p {
            for k in 0..p {
                a[j][k] += row[j] * row[k];
            }
            a[j][p] += row[j] * yi;
        }
    }
    for (j, r) in a.iter_mut().enumerate() {
        r[j] += 1e-12;
    }
    for col in 0..p {
        let piv = (col..p).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs())).unwrap();
        a.swap(col, piv);
        for r in (col + 1)..p {
            let f = a[r][col] / a[col][col];
            for c in col..=p {
                a[r][c] -= f * a[col][c];
            }
        }
    }
    let mut beta = vec![0.0; p];
    for r in (0..p).rev() {
        let acc: f64 = ((r + 1)..p).map(|c| a[r][c] * beta[c]).sum();
        beta[r] = (a[r][p] - acc) / a[r][r];
    }
    beta
}

/// Two-way fixed-effects prediction for every cell, fitted by least squares
/// on the cells flagged in `fit_mask` (row-major). Design: intercept, unit
/// dummies 1.., period dummies 1.. (first of each dropped).
pub fn twfe_prediction(values: &Matrix<f64>, fit_mask: &[bool]) -> Matrix<f64> {
    let (n, t) = values.shape();
    let p = 1 + (n - 1) + (t - 1);
    let design = |i: usize, j: usize| {
        let mut row = vec![0.0; p];
        row[0] = 1.0;
        if i > 0 {
            row[i] = 1.0;
        }
        if j > 0 {
            row[n - 1 + j] = 1.0;
        }
        row
    };
    let mut x = Vec::new();
    let mut y = Vec::new();
    for i in 0..n {
        for j in 0..t {
            if fit_mask[i * t + j] {
                x.push(design(i, j));
                y.push(values[(i, j)]);
            }
        }
    }
    let beta = least_squares(&x, &y);
    Matrix::from_fn(n, t, |i, j| design(i, j).iter().zip(&beta).map(|(a, b)| a * b).sum())
}

/// Brute-force minimizer of `f` over the probability simplex in 3 dimensions
/// on a grid of the given resolution.
pub fn simplex_grid_min3(f: impl Fn(&[f64; 3]) -> f64, resolution: f64) -> [f64; 3] {
    let steps = (1.0 / resolution).round() as usize;
    let mut best = ([1.0 / 3.0; 3], f64::INFINITY);
    for i in 0..=steps {
        for j in 0..=(steps - i) {
            let w = [i as f64 / steps as f64, j as f64 / steps as f64, (steps - i - j) as f64 / steps as f64];
            let val = f(&w);
            if val < best.1 {
                best = (w, val);
            }
        }
    }
    best.0
}
