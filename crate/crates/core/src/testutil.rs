//! Small fixtures shared by unit tests.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::matrix::Matrix;
use crate::panel::{build_observed_sets, ObservedSets, PanelMatrix, PeriodIndex, PeriodRange, TreatmentAssignment};

pub fn unit_names(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("u{i}")).collect()
}

/// Complete monthly panel starting 2000-01 with unit 0 treated from `t0`.
pub fn panel_from(values: Matrix<f64>, t0: usize) -> (PanelMatrix<f64>, ObservedSets) {
    let (n, t) = values.shape();
    let start = PeriodIndex::monthly(2000, 1).unwrap();
    let panel = PanelMatrix::complete(unit_names(n), PeriodRange::new(start, t), values).unwrap();
    let treat = TreatmentAssignment::new("u0", start.shifted(t0 as i64));
    let sets = build_observed_sets(&panel, &treat).unwrap();
    (panel, sets)
}

/// Two-way effects plus a rank-`rank` interaction plus Gaussian noise.
pub fn random_values(n: usize, t: usize, rank: usize, noise: f64, seed: u64) -> Matrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut g = || -> f64 { rng.sample(StandardNormal) };
    let alpha: Vec<f64> = (0..n).map(|_| g()).collect();
    let gamma: Vec<f64> = (0..t).map(|_| g()).collect();
    let u: Vec<Vec<f64>> = (0..n).map(|_| (0..rank).map(|_| g()).collect()).collect();
    let v: Vec<Vec<f64>> = (0..t).map(|_| (0..rank).map(|_| g()).collect()).collect();
    let eps: Vec<f64> = (0..n * t).map(|_| noise * g()).collect();
    Matrix::from_fn(n, t, |i, j| {
        let inter: f64 = (0..rank).map(|k| u[i][k] * v[j][k]).sum();
        alpha[i] + gamma[j] + inter + eps[i * t + j]
    })
}
