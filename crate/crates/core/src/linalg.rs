//! Thin SVD, singular-value soft-thresholding and the nuclear norm.
//!
//! The SVD follows the Golub–Kahan–Reinsch scheme: Householder
//! bidiagonalization followed by implicitly shifted QR sweeps on the
//! bidiagonal. Wide inputs are handled through their transpose.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::scalar::Scalar;

/// Thin SVD `a = u · diag(s) · vᵀ` with `k = min(m, n)` components.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct SvdResult<T> {
    pub u: Matrix<T>,
    /// Descending and non-negative.
    pub s: Vec<T>,
    pub v: Matrix<T>,
}

impl<T: Scalar> SvdResult<T> {
    pub fn reconstruct(&self) -> Matrix<T> {
        reconstruct(&self.u, &self.s, &self.v)
    }

    /// Number of singular values strictly above `tol`.
    pub fn rank(&self, tol: T) -> usize {
        self.s.iter().filter(|&&x| x > tol).count()
    }
}

fn reconstruct<T: Scalar>(u: &Matrix<T>, s: &[T], v: &Matrix<T>) -> Matrix<T> {
    let (m, n) = (u.rows(), v.rows());
    let mut out = Matrix::zeros(m, n);
    for (k, &sk) in s.iter().enumerate() {
        if sk == T::zero() {
            continue;
        }
        for i in 0..m {
            let a = u[(i, k)] * sk;
            if a == T::zero() {
                continue;
            }
            for (o, j) in out.row_mut(i).iter_mut().zip(0..n) {
                *o += a * v[(j, k)];
            }
        }
    }
    out
}

fn check_finite<T: Scalar>(a: &Matrix<T>) -> Result<()> {
    if a.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite("matrix passed to SVD".into()))
    }
}

/// Thin singular value decomposition.
pub fn svd<T: Scalar>(a: &Matrix<T>) -> Result<SvdResult<T>> {
    check_finite(a)?;
    if a.rows() >= a.cols() {
        let (u, s, v) = golub_kahan(a, true)?;
        Ok(SvdResult { u, s, v })
    } else {
        let (u, s, v) = golub_kahan(&a.transpose(), true)?;
        Ok(SvdResult { u: v, s, v: u })
    }
}

/// Singular values only, descending.
pub fn singular_values<T: Scalar>(a: &Matrix<T>) -> Result<Vec<T>> {
    check_finite(a)?;
    let (_, s, _) = if a.rows() >= a.cols() {
        golub_kahan(a, false)?
    } else {
        golub_kahan(&a.transpose(), false)?
    };
    Ok(s)
}

/// Sum of singular values.
pub fn nuclear_norm<T: Scalar>(a: &Matrix<T>) -> Result<T> {
    Ok(singular_values(a)?.into_iter().sum())
}

/// Output of [`svt_parts`]: the shrunk matrix plus its singular values.
#[derive(Debug, Clone)]
pub struct Shrunk<T> {
    pub matrix: Matrix<T>,
    /// `max(s − threshold, 0)`, descending.
    pub singular_values: Vec<T>,
}

impl<T: Scalar> Shrunk<T> {
    pub fn nuclear_norm(&self) -> T {
        self.singular_values.iter().copied().sum()
    }

    pub fn rank(&self, tol: T) -> usize {
        self.singular_values.iter().filter(|&&x| x > tol).count()
    }
}

/// Proximal map of `threshold · ‖·‖_*`: `u · diag(max(s − threshold, 0)) · vᵀ`.
pub fn svt<T: Scalar>(a: &Matrix<T>, threshold: T) -> Result<Matrix<T>> {
    Ok(svt_parts(a, threshold)?.matrix)
}

pub fn svt_parts<T: Scalar>(a: &Matrix<T>, threshold: T) -> Result<Shrunk<T>> {
    if !(threshold >= T::zero()) {
        return Err(Error::Validation(format!("SVT threshold must be >= 0, got {threshold}")));
    }
    let d = svd(a)?;
    let shrunk: Vec<T> = d.s.iter().map(|&x| (x - threshold).max(T::zero())).collect();
    let matrix = reconstruct(&d.u, &shrunk, &d.v);
    Ok(Shrunk { matrix, singular_values: shrunk })
}

/// Golub–Kahan–Reinsch SVD of a tall (`m >= n`) matrix.
///
/// Works on column-major copies so Householder and Givens updates touch
/// contiguous memory. Returns `(u: m×n, s, v: n×n)`.
#[allow(clippy::needless_range_loop)]
/// Solves the square system `a x = b` by Gaussian elimination with partial
/// pivoting. Fails when a pivot is exactly zero or non-finite.
pub fn solve<T: Scalar>(a: &Matrix<T>, b: &[T]) -> Result<Vec<T>> {
    let n = a.rows();
    if a.cols() != n || b.len() != n {
        return Err(Error::Shape(format!("solve needs a square system, got {:?} and {}", a.shape(), b.len())));
    }
    let mut m = a.clone();
    let mut x = b.to_vec();
    for k in 0..n {
        let p = (k..n)
            .max_by(|&i, &j| m[(i, k)].abs().partial_cmp(&m[(j, k)].abs()).unwrap_or(std::cmp::Ordering::Equal))
            .expect("non-empty pivot range");
        let pivot = m[(p, k)];
        if pivot == T::zero() || !pivot.is_finite() {
            return Err(Error::Domain("singular linear system".into()));
        }
        if p != k {
            for j in 0..n {
                let tmp = m[(k, j)];
                m[(k, j)] = m[(p, j)];
                m[(p, j)] = tmp;
            }
            x.swap(k, p);
        }
        for i in k + 1..n {
            let f = m[(i, k)] / pivot;
            if f == T::zero() {
                continue;
            }
            for j in k..n {
                let v = m[(k, j)];
                m[(i, j)] -= f * v;
            }
            let v = x[k];
            x[i] -= f * v;
        }
    }
    for k in (0..n).rev() {
        let mut acc = x[k];
        for j in k + 1..n {
            acc -= m[(k, j)] * x[j];
        }
        x[k] = acc / m[(k, k)];
    }
    Ok(x)
}

fn golub_kahan<T: Scalar>(input: &Matrix<T>, want_vectors: bool) -> Result<(Matrix<T>, Vec<T>, Matrix<T>)> {
    let (m, n) = input.shape();
    debug_assert!(m >= n);
    if n == 0 {
        return Ok((Matrix::zeros(m, 0), Vec::new(), Matrix::zeros(0, 0)));
    }
    let zero = T::zero();
    let one = T::one();
    let nu = n;
    // a[j][i] = A(i, j)
    let mut a: Vec<Vec<T>> = (0..n).map(|j| input.column(j)).collect();
    let mut s = vec![zero; (m + 1).min(n)];
    let mut u: Vec<Vec<T>> = if want_vectors { vec![vec![zero; m]; nu] } else { Vec::new() };
    let mut v: Vec<Vec<T>> = if want_vectors { vec![vec![zero; n]; n] } else { Vec::new() };
    let mut e = vec![zero; n];
    let mut work = vec![zero; m];

    let nct = (m - 1).min(n);
    let nrt = n.saturating_sub(2).min(m);
    for k in 0..nct.max(nrt) {
        if k < nct {
            let mut norm = zero;
            for i in k..m {
                norm = norm.hypot(a[k][i]);
            }
            if norm != zero {
                if a[k][k] < zero {
                    norm = -norm;
                }
                for i in k..m {
                    a[k][i] /= norm;
                }
                a[k][k] += one;
            }
            s[k] = -norm;
        }
        for j in (k + 1)..n {
            if k < nct && s[k] != zero {
                let (left, right) = a.split_at_mut(j);
                let (ak, aj) = (&left[k], &mut right[0]);
                let mut t = zero;
                for i in k..m {
                    t += ak[i] * aj[i];
                }
                t = -t / ak[k];
                for i in k..m {
                    aj[i] += t * ak[i];
                }
            }
            e[j] = a[j][k];
        }
        if want_vectors && k < nct {
            for i in k..m {
                u[k][i] = a[k][i];
            }
        }
        if k < nrt {
            let mut norm = zero;
            for i in (k + 1)..n {
                norm = norm.hypot(e[i]);
            }
            if norm != zero {
                if e[k + 1] < zero {
                    norm = -norm;
                }
                for i in (k + 1)..n {
                    e[i] /= norm;
                }
                e[k + 1] += one;
            }
            e[k] = -norm;
            if k + 1 < m && e[k] != zero {
                for w in work.iter_mut().skip(k + 1) {
                    *w = zero;
                }
                for j in (k + 1)..n {
                    for i in (k + 1)..m {
                        work[i] += e[j] * a[j][i];
                    }
                }
                for j in (k + 1)..n {
                    let t = -e[j] / e[k + 1];
                    for i in (k + 1)..m {
                        a[j][i] += t * work[i];
                    }
                }
            }
            if want_vectors {
                for i in (k + 1)..n {
                    v[k][i] = e[i];
                }
            }
        }
    }

    let mut p = n.min(m + 1);
    if nct < n {
        s[nct] = a[nct][nct];
    }
    if m < p {
        s[p - 1] = zero;
    }
    if nrt + 1 < p {
        e[nrt] = a[p - 1][nrt];
    }
    e[p - 1] = zero;

    if want_vectors {
        for j in nct..nu {
            for i in 0..m {
                u[j][i] = zero;
            }
            u[j][j] = one;
        }
        for k in (0..nct).rev() {
            if s[k] != zero {
                for j in (k + 1)..nu {
                    let (left, right) = u.split_at_mut(j);
                    let (uk, uj) = (&left[k], &mut right[0]);
                    let mut t = zero;
                    for i in k..m {
                        t += uk[i] * uj[i];
                    }
                    t = -t / uk[k];
                    for i in k..m {
                        uj[i] += t * uk[i];
                    }
                }
                for i in k..m {
                    u[k][i] = -u[k][i];
                }
                u[k][k] = one + u[k][k];
                for i in 0..k {
                    u[k][i] = zero;
                }
            } else {
                for i in 0..m {
                    u[k][i] = zero;
                }
                u[k][k] = one;
            }
        }
        for k in (0..n).rev() {
            if k < nrt && e[k] != zero {
                for j in (k + 1)..nu {
                    let (left, right) = v.split_at_mut(j);
                    let (vk, vj) = (&left[k], &mut right[0]);
                    let mut t = zero;
                    for i in (k + 1)..n {
                        t += vk[i] * vj[i];
                    }
                    t = -t / vk[k + 1];
                    for i in (k + 1)..n {
                        vj[i] += t * vk[i];
                    }
                }
            }
            for i in 0..n {
                v[k][i] = zero;
            }
            v[k][k] = one;
        }
    }

    // Rotate columns `a` and `b` of a column-major basis.
    fn rotate<T: Scalar>(cols: &mut [Vec<T>], a: usize, b: usize, cs: T, sn: T) {
        let (lo, hi, swap) = if a < b { (a, b, false) } else { (b, a, true) };
        let (left, right) = cols.split_at_mut(hi);
        let (x, y) = if swap { (&mut right[0], &mut left[lo]) } else { (&mut left[lo], &mut right[0]) };
        for (xi, yi) in x.iter_mut().zip(y.iter_mut()) {
            let t = cs * *xi + sn * *yi;
            *yi = -sn * *xi + cs * *yi;
            *xi = t;
        }
    }

    let pp = p - 1;
    let eps = T::epsilon();
    let tiny = T::min_positive_value() / T::epsilon();
    let max_sweeps = 75 * n.max(1) + 100;
    let mut sweeps = 0usize;
    while p > 0 {
        // Locate the trailing unreduced block.
        let mut k: isize = p as isize - 2;
        while k >= 0 {
            let ku = k as usize;
            if e[ku].abs() <= tiny + eps * (s[ku].abs() + s[ku + 1].abs()) {
                e[ku] = zero;
                break;
            }
            k -= 1;
        }
        let kase;
        if k == p as isize - 2 {
            kase = 4;
        } else {
            let mut ks: isize = p as isize - 1;
            while ks > k {
                let ksu = ks as usize;
                let t = (if ksu != p { e[ksu].abs() } else { zero })
                    + (if ks != k + 1 { e[ksu - 1].abs() } else { zero });
                if s[ksu].abs() <= tiny + eps * t {
                    s[ksu] = zero;
                    break;
                }
                ks -= 1;
            }
            if ks == k {
                kase = 3;
            } else if ks == p as isize - 1 {
                kase = 1;
            } else {
                kase = 2;
                k = ks;
            }
        }
        let k = (k + 1) as usize;

        match kase {
            // Deflate negligible s[p-1].
            1 => {
                let mut f = e[p - 2];
                e[p - 2] = zero;
                for j in (k..=p - 2).rev() {
                    let t = s[j].hypot(f);
                    let cs = s[j] / t;
                    let sn = f / t;
                    s[j] = t;
                    if j != k {
                        f = -sn * e[j - 1];
                        e[j - 1] = cs * e[j - 1];
                    }
                    if want_vectors {
                        rotate(&mut v, j, p - 1, cs, sn);
                    }
                }
            }
            // Split at negligible s[k-1].
            2 => {
                let mut f = e[k - 1];
                e[k - 1] = zero;
                for j in k..p {
                    let t = s[j].hypot(f);
                    let cs = s[j] / t;
                    let sn = f / t;
                    s[j] = t;
                    f = -sn * e[j];
                    e[j] = cs * e[j];
                    if want_vectors {
                        rotate(&mut u, j, k - 1, cs, sn);
                    }
                }
            }
            // One implicitly shifted QR step.
            3 => {
                sweeps += 1;
                if sweeps > max_sweeps {
                    return Err(Error::NonFinite("SVD failed to converge".into()));
                }
                let scale = s[p - 1]
                    .abs()
                    .max(s[p - 2].abs())
                    .max(e[p - 2].abs())
                    .max(s[k].abs())
                    .max(e[k].abs());
                let sp = s[p - 1] / scale;
                let spm1 = s[p - 2] / scale;
                let epm1 = e[p - 2] / scale;
                let sk = s[k] / scale;
                let ek = e[k] / scale;
                let two = T::of(2.0);
                let b = ((spm1 + sp) * (spm1 - sp) + epm1 * epm1) / two;
                let c = (sp * epm1) * (sp * epm1);
                let mut shift = zero;
                if b != zero || c != zero {
                    shift = (b * b + c).sqrt();
                    if b < zero {
                        shift = -shift;
                    }
                    shift = c / (b + shift);
                }
                let mut f = (sk + sp) * (sk - sp) + shift;
                let mut g = sk * ek;
                for j in k..p - 1 {
                    let mut t = f.hypot(g);
                    let mut cs = f / t;
                    let mut sn = g / t;
                    if j != k {
                        e[j - 1] = t;
                    }
                    f = cs * s[j] + sn * e[j];
                    e[j] = cs * e[j] - sn * s[j];
                    g = sn * s[j + 1];
                    s[j + 1] = cs * s[j + 1];
                    if want_vectors {
                        rotate(&mut v, j, j + 1, cs, sn);
                    }
                    t = f.hypot(g);
                    cs = f / t;
                    sn = g / t;
                    s[j] = t;
                    f = cs * e[j] + sn * s[j + 1];
                    s[j + 1] = -sn * e[j] + cs * s[j + 1];
                    g = sn * e[j + 1];
                    e[j + 1] = cs * e[j + 1];
                    if want_vectors && j < m - 1 {
                        rotate(&mut u, j, j + 1, cs, sn);
                    }
                }
                e[p - 2] = f;
            }
            // Converged: fix sign, bubble into descending order.
            _ => {
                let mut k = k;
                if s[k] <= zero {
                    s[k] = if s[k] < zero { -s[k] } else { zero };
                    if want_vectors {
                        for x in v[k].iter_mut().take(pp + 1) {
                            *x = -*x;
                        }
                    }
                }
                while k < pp {
                    if s[k] >= s[k + 1] {
                        break;
                    }
                    s.swap(k, k + 1);
                    if want_vectors {
                        if k < n - 1 {
                            v.swap(k, k + 1);
                        }
                        if k < m - 1 {
                            u.swap(k, k + 1);
                        }
                    }
                    k += 1;
                }
                p -= 1;
            }
        }
    }

    s.truncate(n);
    if !want_vectors {
        return Ok((Matrix::zeros(0, 0), s, Matrix::zeros(0, 0)));
    }
    let u_mat = Matrix::from_fn(m, nu, |i, j| u[j][i]);
    let v_mat = Matrix::from_fn(n, n, |i, j| v[j][i]);
    Ok((u_mat, s, v_mat))
}
