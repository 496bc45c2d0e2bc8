use panelgap_core::cv::{select_lambda, CvPlan, CvReport, SelectionRule};
use panelgap_core::dgp::{generate, DgpSpec, DEFAULT_DONORS};
use panelgap_core::effects::{effect_path, horizon_decomposition, pre_fit_report, HorizonWindows};
use panelgap_core::inference::{
    in_space_placebos, in_time_placebos, resample_stability, InTimePlan, PlaceboConfig, PseudoBlock,
};
use panelgap_core::panel::{build_observed_sets, load_panel_path, write_long_csv, CsvSchema};
use panelgap_core::sdid::{sdid_estimate, sdid_placebo, SdidConfig, ZetaMode};
use panelgap_core::solver::{fit, LambdaScale, McConfig};
use panelgap_core::{Error, PanelMatrix, PeriodIndex, Result, TreatmentAssignment};
use serde::Serialize;

use crate::args::{
    Block, CvArgs, DataArgs, EstimateArgs, FitArgs, LambdaArg, PlaceboArgs, PlaceboKindArg, Scale, SdidArgs,
    SimulateArgs, ZetaArg,
};
use crate::report::{OutDir, Report, RunConfig};

const VERSION: &str = env!("CARGO_PKG_VERSION");

fn report<'a, S: Serialize, R: Serialize>(
    command: &'a str,
    config: &'a RunConfig,
    settings: &'a S,
    result: &'a R,
) -> Report<'a, RunConfig, S, R> {
    Report { command, version: VERSION, config, settings, result }
}

/// How a successful run ended.
#[derive(Debug, PartialEq, Eq)]
pub enum Status {
    Ok,
    /// Results were written but the solver hit its iteration cap.
    NotConverged,
}

/// Loads, transforms and restricts the panel to the treated unit plus donors.
fn load(data: &DataArgs) -> Result<(PanelMatrix<f64>, TreatmentAssignment, RunConfig)> {
    let mut panel = load_panel_path::<f64>(&data.input, &CsvSchema::with_value(&data.outcome))?;
    if let Some(bench) = &data.spread_vs {
        panel = panel.spread_against(bench)?;
    }
    if let Some(g) = data.growth {
        panel = panel.growth_rates(g.into())?;
    }
    let treated = panel.unit_index(&data.treated)?;
    let donors: Vec<String> = match &data.donors {
        Some(list) if list.len() == 1 && list[0].eq_ignore_ascii_case("all") => {
            panel.units().iter().filter(|u| **u != data.treated).cloned().collect()
        }
        Some(list) => list.iter().map(|s| s.trim().to_string()).collect(),
        None => DEFAULT_DONORS.iter().map(|s| s.to_string()).collect(),
    };
    let mut keep = vec![treated];
    for d in &donors {
        if *d == data.treated {
            return Err(Error::Validation(format!("treated unit `{d}` also listed as a donor")));
        }
        let i = panel.unit_index(d)?;
        if keep.contains(&i) {
            return Err(Error::Validation(format!("donor `{d}` listed twice")));
        }
        keep.push(i);
    }
    let panel = panel.select_units(&keep)?;
    let treat = TreatmentAssignment::new(data.treated.clone(), data.t0);
    treat.locate(&panel)?;
    let config = RunConfig {
        input: data.input.display().to_string(),
        outcome: data.outcome.clone(),
        treated: data.treated.clone(),
        t0: data.t0,
        donors,
        spread_vs: data.spread_vs.clone(),
        growth: data.growth,
        seed: data.seed,
    };
    Ok((panel, treat, config))
}

fn post_len(panel: &PanelMatrix<f64>, treat: &TreatmentAssignment) -> Result<usize> {
    let (_, t0) = treat.locate(panel)?;
    Ok(panel.n_periods() - t0)
}

#[derive(Debug, Clone, Serialize)]
struct FitSettings {
    lambda: LambdaArg,
    lambda_scale: Scale,
    one_se: bool,
    max_iters: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    cv_plan: Option<CvPlan<f64>>,
}

fn cv_plan(args: &FitArgs, post: usize) -> Result<CvPlan<f64>> {
    let mut plan = CvPlan::for_post_len(post);
    if let Some(grid) = &args.lambda_grid {
        plan.lambda_grid = grid.clone();
    }
    if let Some(k) = args.cv_folds {
        plan.n_folds = k;
    }
    if let Some(h) = args.cv_horizon {
        plan.horizon = h;
    }
    if let Some(m) = args.cv_min_train {
        plan.min_train = m;
    }
    plan.validate()?;
    Ok(plan)
}

fn template(args: &FitArgs, lambda: f64) -> McConfig<f64> {
    McConfig {
        lambda,
        lambda_scale: LambdaScale::from(args.lambda_scale),
        max_iters: args.max_iters,
        ..McConfig::default()
    }
}

/// Fixed λ, or the cross-validated choice with its report.
fn resolve_lambda(
    args: &FitArgs,
    panel: &PanelMatrix<f64>,
    treat: &TreatmentAssignment,
) -> Result<(McConfig<f64>, Option<CvReport<f64>>, FitSettings)> {
    let mut settings = FitSettings {
        lambda: args.lambda,
        lambda_scale: args.lambda_scale,
        one_se: args.one_se,
        max_iters: args.max_iters,
        cv_plan: None,
    };
    match args.lambda {
        LambdaArg::Value(v) => {
            let mc = template(args, v);
            mc.validate()?;
            Ok((mc, None, settings))
        }
        LambdaArg::Cv => {
            let plan = cv_plan(args, post_len(panel, treat)?)?;
            let mut report = select_lambda(panel, treat, &plan, &template(args, 0.0))?;
            if args.one_se {
                report.rule = SelectionRule::OneSe;
            }
            settings.cv_plan = Some(plan);
            Ok((template(args, report.chosen()), Some(report), settings))
        }
    }
}

#[derive(Serialize)]
struct Named<K: Serialize> {
    key: K,
    value: f64,
}

#[derive(Serialize)]
struct FitSummary {
    lambda_applied: f64,
    converged: bool,
    iters: usize,
    effective_rank: usize,
    final_objective: f64,
    alpha: Vec<Named<String>>,
    gamma: Vec<Named<PeriodIndex>>,
    imputed: Vec<Named<PeriodIndex>>,
    objective_trace: Vec<f64>,
}

#[derive(Serialize)]
struct EstimateSettings<'a> {
    fit: &'a FitSettings,
    windows: [usize; 3],
    flips: usize,
}

#[derive(Serialize)]
struct EffectsResult<'a, P: Serialize, H: Serialize, F: Serialize> {
    path: &'a P,
    horizon: &'a H,
    pre_fit: &'a F,
}

pub fn estimate(args: &EstimateArgs, jobs: Option<usize>) -> Result<Status> {
    let (panel, treat, config) = load(&args.data)?;
    let mut out = OutDir::create(&args.data.out_dir)?;
    let (mc, cv, fit_settings) = resolve_lambda(&args.fit, &panel, &treat)?;
    let sets = build_observed_sets(&panel, &treat)?;
    let f = fit(&panel, &sets, &mc)?;
    let path = effect_path(&panel, &sets, &f)?;
    let post = path.tau.len();
    let windows = match &args.windows {
        Some(s) => HorizonWindows::parse(s, post)?,
        None => HorizonWindows::defaults(post)?,
    };
    let horizon = horizon_decomposition(&path, &windows)?;
    let pre_fit = pre_fit_report(&path, args.flips, args.data.seed)?;
    let settings = EstimateSettings { fit: &fit_settings, windows: windows.lengths(), flips: args.flips };

    let periods = panel.periods();
    let summary = FitSummary {
        lambda_applied: f.lambda,
        converged: f.converged,
        iters: f.iters,
        effective_rank: f.effective_rank,
        final_objective: f.final_objective(),
        alpha: panel.units().iter().zip(&f.alpha).map(|(u, &v)| Named { key: u.clone(), value: v }).collect(),
        gamma: f.gamma.iter().enumerate().map(|(t, &v)| Named { key: periods.get(t), value: v }).collect(),
        imputed: path.periods.iter().zip(&f.imputed).map(|(&p, &v)| Named { key: p, value: v }).collect(),
        objective_trace: f.objective_trace.clone(),
    };
    out.write_json("fit.json", &report("estimate", &config, &settings, &summary))?;
    let effects = EffectsResult { path: &path, horizon: &horizon, pre_fit: &pre_fit };
    out.write_json("effects.json", &report("estimate", &config, &settings, &effects))?;
    out.write_with("effects.csv", |w| path.write_csv(w))?;
    if let Some(cv) = &cv {
        out.write_json("cv.json", &report("estimate", &config, &settings, cv))?;
    }
    out.finish("estimate", jobs)?;
    if f.converged {
        Ok(Status::Ok)
    } else {
        Ok(Status::NotConverged)
    }
}

pub fn cv(args: &CvArgs, jobs: Option<usize>) -> Result<Status> {
    let (panel, treat, config) = load(&args.data)?;
    let mut out = OutDir::create(&args.data.out_dir)?;
    let fit_args = FitArgs { lambda: LambdaArg::Cv, ..args.fit.clone() };
    let (_, cv, settings) = resolve_lambda(&fit_args, &panel, &treat)?;
    let cv = cv.expect("cross-validation requested");
    out.write_json("cv.json", &report("cv", &config, &settings, &cv))?;
    out.finish("cv", jobs)?;
    Ok(Status::Ok)
}

#[derive(Serialize)]
struct PlaceboSettings<'a> {
    kind: &'static str,
    fit: &'a FitSettings,
    recv: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    in_time: Option<InTimePlan>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pseudo_dates: Option<Vec<PeriodIndex>>,
}

#[derive(Serialize)]
struct PlaceboResult<'a, D: Serialize, R: Serialize> {
    distribution: &'a D,
    resample: &'a R,
}

pub fn placebo(args: &PlaceboArgs, jobs: Option<usize>) -> Result<Status> {
    let (panel, treat, config) = load(&args.data)?;
    let mut out = OutDir::create(&args.data.out_dir)?;
    let (mc, _, fit_settings) = resolve_lambda(&args.fit, &panel, &treat)?;
    let mut cfg = PlaceboConfig::fixed(mc, args.data.seed);
    if args.recv {
        cfg.recv = Some(fit_settings.cv_plan.clone().map_or_else(|| cv_plan(&args.fit, post_len(&panel, &treat)?), Ok)?);
    }
    let (dist, kind, in_time, dates) = match args.kind {
        PlaceboKindArg::Space => (in_space_placebos(&panel, &treat, &cfg)?, "space", None, None),
        PlaceboKindArg::Time => {
            let (_, t0) = treat.locate(&panel)?;
            let plan = InTimePlan {
                min_train: args.min_train,
                horizon: args.horizon.unwrap_or(panel.n_periods() - t0),
                block: match args.block {
                    Block::UntilTreatment => PseudoBlock::UntilTreatment,
                    Block::Horizon => PseudoBlock::Horizon,
                },
            };
            let dates = match &args.pseudo_dates {
                Some(d) => d.clone(),
                None => plan.default_dates(panel.periods().start, t0, args.step),
            };
            if dates.is_empty() {
                return Err(Error::Insufficient(format!(
                    "no feasible pseudo-dates: {t0} pre-periods, min_train {}, horizon {}",
                    plan.min_train, plan.horizon
                )));
            }
            (in_time_placebos(&panel, &treat, &dates, &plan, &cfg)?, "time", Some(plan), Some(dates))
        }
    };
    let resample = if dist.n_runs >= 2 { resample_stability(&dist, args.data.seed)? } else { Vec::new() };
    let settings = PlaceboSettings { kind, fit: &fit_settings, recv: args.recv, in_time, pseudo_dates: dates };
    let result = PlaceboResult { distribution: &dist, resample: &resample };
    out.write_json("placebo.json", &report("placebo", &config, &settings, &result))?;
    out.finish("placebo", jobs)?;
    Ok(Status::Ok)
}

#[derive(Serialize)]
struct SdidSettings {
    zeta: ZetaMode<f64>,
    placebos: usize,
    tol: f64,
    max_iters: usize,
}

#[derive(Serialize)]
struct SdidResult<'a, E: Serialize, D: Serialize> {
    estimate: &'a E,
    placebo: &'a D,
}

pub fn sdid(args: &SdidArgs, jobs: Option<usize>) -> Result<Status> {
    let (panel, treat, config) = load(&args.data)?;
    let mut out = OutDir::create(&args.data.out_dir)?;
    let cfg = SdidConfig {
        zeta: match args.zeta {
            ZetaArg::Auto => ZetaMode::Auto,
            ZetaArg::Value(v) => ZetaMode::Fixed(v),
        },
        ..SdidConfig::default()
    };
    let est = sdid_estimate(&panel, &treat, &cfg)?;
    let placebo = sdid_placebo(&panel, &treat, &cfg, args.placebos, args.data.seed)?;
    let settings = SdidSettings { zeta: cfg.zeta, placebos: args.placebos, tol: cfg.tol, max_iters: cfg.max_iters };
    let result = SdidResult { estimate: &est, placebo: &placebo };
    out.write_json("sdid.json", &report("sdid", &config, &settings, &result))?;
    out.write_with("sdid_weights.csv", |w| est.write_weights_csv(w))?;
    out.finish("sdid", jobs)?;
    let converged = est.weights.unit_fit.converged && est.weights.time_fit.converged;
    Ok(if converged { Status::Ok } else { Status::NotConverged })
}

pub fn simulate(args: &SimulateArgs, jobs: Option<usize>) -> Result<Status> {
    let spec = DgpSpec {
        n_units: args.units,
        n_periods: args.periods,
        t0: args.t0_offset,
        rank: args.rank,
        factor_persistence: args.persistence,
        loading_scale: args.loading_scale,
        fe_scale: args.fe_scale,
        noise_sigma: args.sigma,
        effect: args.effect.0,
        seed: args.seed,
        start: args.start,
    };
    let g = generate::<f64>(&spec)?;
    let mut out = OutDir::create(&args.out_dir)?;
    out.write_with("panel.csv", |w| write_long_csv(&g.panel, w))?;
    #[derive(Serialize)]
    struct Truth<'a, T: Serialize> {
        command: &'a str,
        version: &'a str,
        treatment: &'a TreatmentAssignment,
        truth: &'a T,
    }
    out.write_json("truth.json", &Truth { command: "simulate", version: VERSION, treatment: &g.treatment, truth: &g.truth })?;
    out.finish("simulate", jobs)?;
    Ok(Status::Ok)
}
