use panelgap_core::cv::{log_grid, select_lambda, CvPlan};
use panelgap_core::dgp::{generate, DgpSpec, EffectProfile};
use panelgap_core::effects::{effect_path, horizon_decomposition, HorizonWindows};
use panelgap_core::panel::build_observed_sets;
use panelgap_core::solver::{fit, impute_counterfactual, LambdaScale, McConfig};

#[test]
fn constant_effect_is_recovered_at_cv_lambda() {
    let g = generate::<f64>(&DgpSpec::default()).unwrap();
    let treat = g.treatment.clone();
    let plan = CvPlan::for_post_len(g.truth.effect.len());
    let cv = select_lambda(&g.panel, &treat, &plan, &McConfig::with_lambda(1e-3)).unwrap();
    let sets = build_observed_sets(&g.panel, &treat).unwrap();
    let f = fit(&g.panel, &sets, &McConfig::with_lambda(cv.chosen())).unwrap();
    assert!(f.converged);
    let path = effect_path(&g.panel, &sets, &f).unwrap();
    assert_eq!(path.tau.len(), 23);
    assert!((path.ate - 0.7).abs() <= 0.15, "ate {}", path.ate);
}

#[test]
fn small_panel_imputation_rmse_within_three_sigma() {
    let spec = DgpSpec { n_periods: 60, t0: 50, ..DgpSpec::default() };
    let g = generate::<f64>(&spec).unwrap();
    let treat = g.treatment.clone();
    let plan = CvPlan { lambda_grid: log_grid(1e-5, 1e-1, 9), horizon: 5, n_folds: 3, min_train: 30 };
    let cv = select_lambda(&g.panel, &treat, &plan, &McConfig::with_lambda(1e-3)).unwrap();
    let sets = build_observed_sets(&g.panel, &treat).unwrap();
    let f = fit(&g.panel, &sets, &McConfig::with_lambda(cv.chosen())).unwrap();
    let imputed = impute_counterfactual(&f, &sets);
    let n = imputed.len() as f64;
    let rmse = (imputed.iter().zip(&g.truth.y0_missing).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / n).sqrt();
    assert!(rmse <= 3.0 * spec.noise_sigma, "rmse {rmse}");
}

#[test]
fn noiseless_low_rank_panel_selects_small_lambda() {
    let spec = DgpSpec { noise_sigma: 0.0, effect: EffectProfile::Zero, ..DgpSpec::default() };
    let g = generate::<f64>(&spec).unwrap();
    let plan = CvPlan::for_post_len(spec.post_len());
    let cv = select_lambda(&g.panel, &g.treatment, &plan, &McConfig::with_lambda(1e-3)).unwrap();
    let grid = &plan.lambda_grid;
    let pos = grid.iter().position(|&l| l == cv.selected_lambda).unwrap();
    assert!(pos < grid.len() / 2, "selected {} from {:?}", cv.selected_lambda, grid);
    assert!(cv.mean_mse[pos].unwrap() <= 1e-6, "mse {:?}", cv.mean_mse[pos]);
}

#[test]
fn pure_noise_panel_one_se_rule_zeroes_the_low_rank_term() {
    let spec = DgpSpec { rank: 0, effect: EffectProfile::Zero, ..DgpSpec::default() };
    let g = generate::<f64>(&spec).unwrap();
    let template = McConfig { lambda_scale: LambdaScale::MaxSingular, ..McConfig::with_lambda(1.0) };
    let plan = CvPlan { lambda_grid: log_grid(1e-3, 3.0, 8), ..CvPlan::for_post_len(spec.post_len()) };
    let cv = select_lambda(&g.panel, &g.treatment, &plan, &template).unwrap();
    assert!(cv.one_se_lambda >= 2.0, "one-se picked {}", cv.one_se_lambda);
    let sets = build_observed_sets(&g.panel, &g.treatment).unwrap();
    let f = fit(&g.panel, &sets, &McConfig { lambda: cv.one_se_lambda, ..template }).unwrap();
    assert_eq!(f.effective_rank, 0);
    assert_eq!(f.l.max_abs(), 0.0);
}

#[test]
fn hump_effect_has_adjustment_above_persistence() {
    let spec = DgpSpec {
        effect: EffectProfile::Hump { peak: 0.8, peak_time: 12, decay: 0.5, floor: 0.5 },
        ..DgpSpec::default()
    };
    let g = generate::<f64>(&spec).unwrap();
    let sets = build_observed_sets(&g.panel, &g.treatment).unwrap();
    let f = fit(&g.panel, &sets, &McConfig::with_lambda(0.1)).unwrap();
    let path = effect_path(&g.panel, &sets, &f).unwrap();
    let w = HorizonWindows::defaults(path.tau.len()).unwrap();
    let h = horizon_decomposition(&path, &w).unwrap();
    assert!(h.adjustment > h.persistence && h.persistence > 0.0, "{h:?}");
}

#[test]
fn f32_pipeline_tracks_f64() {
    let spec = DgpSpec::default();
    let g64 = generate::<f64>(&spec).unwrap();
    let g32 = generate::<f32>(&spec).unwrap();
    let s64 = build_observed_sets(&g64.panel, &g64.treatment).unwrap();
    let s32 = build_observed_sets(&g32.panel, &g32.treatment).unwrap();
    let a64 = effect_path(&g64.panel, &s64, &fit(&g64.panel, &s64, &McConfig::with_lambda(0.1)).unwrap()).unwrap().ate;
    let a32 = effect_path(&g32.panel, &s32, &fit(&g32.panel, &s32, &McConfig::with_lambda(0.1f32)).unwrap()).unwrap().ate;
    assert!((a64 - a32 as f64).abs() < 1e-3, "{a64} vs {a32}");
}
