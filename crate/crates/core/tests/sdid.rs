use panelgap_core::dgp::{generate, DgpSpec, EffectProfile};
use panelgap_core::sdid::{sdid_estimate, sdid_placebo, solve_unit_weights, SdidConfig, ZetaMode};
use panelgap_core::{Matrix, PanelMatrix, PeriodRange, TreatmentAssignment};

fn grid_min3(f: impl Fn(&[f64; 3]) -> f64, step: f64) -> [f64; 3] {
    let n = (1.0 / step).round() as usize;
    let mut best = ([1.0, 0.0, 0.0], f64::INFINITY);
    for a in 0..=n {
        for b in 0..=n - a {
            let w = [a as f64 / n as f64, b as f64 / n as f64, (n - a - b) as f64 / n as f64];
            let v = f(&w);
            if v < best.1 {
                best = (w, v);
            }
        }
    }
    best.0
}

#[test]
fn weights_are_valid_on_generated_panels() {
    for seed in 0..10 {
        let g = generate::<f64>(&DgpSpec { seed, ..DgpSpec::default() }).unwrap();
        let est = sdid_estimate(&g.panel, &g.treatment, &SdidConfig::default()).unwrap();
        let w = &est.weights;
        for v in [&w.omega, &w.time_weights] {
            assert!(v.iter().all(|&x| x >= 0.0));
            assert!((v.iter().sum::<f64>() - 1.0).abs() <= 1e-8);
        }
        assert!(w.unit_fit.converged && w.time_fit.converged);
    }
}

#[test]
fn three_donor_weights_match_grid_search() {
    let spec = DgpSpec { n_units: 4, n_periods: 40, t0: 30, seed: 3, ..DgpSpec::default() };
    let g = generate::<f64>(&spec).unwrap();
    let zeta = 0.2;
    let fit = solve_unit_weights(&g.panel, &g.treatment, zeta, &SdidConfig::default()).unwrap();
    let y = g.panel.values();
    let pre = spec.t0;
    // Profile out the intercept: it equals the mean pre-period gap.
    let loss = |w: &[f64; 3]| {
        let gaps: Vec<f64> = (0..pre).map(|t| y[(0, t)] - (0..3).map(|d| w[d] * y[(d + 1, t)]).sum::<f64>()).collect();
        let m = gaps.iter().sum::<f64>() / pre as f64;
        gaps.iter().map(|g| (g - m).powi(2)).sum::<f64>() + zeta * zeta * pre as f64 * w.iter().map(|v| v * v).sum::<f64>()
    };
    let oracle = grid_min3(loss, 1e-3);
    for (a, b) in fit.weights.iter().zip(&oracle) {
        assert!((a - b).abs() <= 2e-3, "{:?} vs {oracle:?}", fit.weights);
    }
}

#[test]
fn parallel_trends_recover_injected_effect() {
    let (n, t, t0) = (6, 30, 24);
    let values = Matrix::from_fn(n, t, |i, j| {
        let base = 1.5 * i as f64 + 0.05 * j as f64 + (j as f64 * 0.7).sin();
        if i == 0 && j >= t0 { base + 0.9 } else { base }
    });
    let units: Vec<String> = (0..n).map(|i| format!("u{i}")).collect();
    let periods = PeriodRange::new("2015-01".parse().unwrap(), t);
    let panel = PanelMatrix::complete(units, periods, values).unwrap();
    let treat = TreatmentAssignment::new("u0", periods.get(t0));
    let est = sdid_estimate(&panel, &treat, &SdidConfig::default()).unwrap();
    assert!((est.tau - 0.9).abs() < 1e-8, "tau {}", est.tau);
}

#[test]
fn fixed_zeta_is_used_and_reported() {
    let g = generate::<f64>(&DgpSpec::default()).unwrap();
    let cfg = SdidConfig { zeta: ZetaMode::Fixed(1e-4), ..SdidConfig::default() };
    let est = sdid_estimate(&g.panel, &g.treatment, &cfg).unwrap();
    assert_eq!(est.weights.zeta, 1e-4);
    assert!(est.to_json().unwrap().contains("\"zeta\": 0.0001"));
}

#[test]
fn placebo_uses_every_donor_once_and_is_deterministic() {
    let spec = DgpSpec { effect: EffectProfile::Constant { tau: 2.0 }, ..DgpSpec::default() };
    let g = generate::<f64>(&spec).unwrap();
    let a = sdid_placebo(&g.panel, &g.treatment, &SdidConfig::default(), 100, 5).unwrap();
    let b = sdid_placebo(&g.panel, &g.treatment, &SdidConfig::default(), 100, 5).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.n_runs, 11);
    assert!((a.p_value - 1.0 / 12.0).abs() < 1e-12);
    let sub = sdid_placebo(&g.panel, &g.treatment, &SdidConfig::default(), 5, 5).unwrap();
    assert_eq!(sub.n_runs, 5);
}
