use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand, ValueEnum};
use panelgap_core::dgp::{EffectProfile, DEFAULT_TREATED};
use panelgap_core::panel::GrowthMethod;
use panelgap_core::solver::LambdaScale;
use panelgap_core::PeriodIndex;
use serde::{Serialize, Serializer};

#[derive(Debug, Parser)]
#[command(name = "panelgap", version, about = "Counterfactual effects for a single treated unit in panel data")]
pub struct Cli {
    /// Worker threads for cross-validation and placebo grids.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit the matrix-completion estimator and write the effect path.
    Estimate(EstimateArgs),
    /// In-space or in-time placebo inference.
    Placebo(PlaceboArgs),
    /// Synthetic difference-in-differences cross-check.
    Sdid(SdidArgs),
    /// Cross-validate the shrinkage weight only.
    Cv(CvArgs),
    /// Generate a synthetic panel with known ground truth.
    Simulate(SimulateArgs),
}

#[derive(Debug, Clone, Args)]
pub struct DataArgs {
    /// Long-format CSV with `unit`, `period` and outcome columns.
    #[arg(long)]
    pub input: PathBuf,

    /// Outcome column name.
    #[arg(long, default_value = "value")]
    pub outcome: String,

    #[arg(long, default_value = DEFAULT_TREATED)]
    pub treated: String,

    /// First treated period, YYYY-MM or YYYY.
    #[arg(long, default_value = "2023-10")]
    pub t0: PeriodIndex,

    /// Comma-separated donor units, or `all`. Defaults to the 11-country pool.
    #[arg(long, value_delimiter = ',')]
    pub donors: Option<Vec<String>>,

    /// Subtract this unit's series from every other unit and drop it.
    #[arg(long)]
    pub spread_vs: Option<String>,

    /// Replace levels by period-on-period growth rates.
    #[arg(long, value_enum)]
    pub growth: Option<Growth>,

    #[arg(long, default_value = "out")]
    pub out_dir: PathBuf,

    #[arg(long, env = "PANELGAP_SEED", default_value_t = 7)]
    pub seed: u64,
}

#[derive(Debug, Clone, Args)]
pub struct FitArgs {
    /// Shrinkage weight, or `cv` to select it by rolling-origin validation.
    #[arg(long, default_value = "cv")]
    pub lambda: LambdaArg,

    #[arg(long, value_enum, default_value_t = Scale::Absolute)]
    pub lambda_scale: Scale,

    /// Pick the largest λ within one standard error of the best.
    #[arg(long)]
    pub one_se: bool,

    /// Comma-separated λ grid for cross-validation.
    #[arg(long, value_delimiter = ',')]
    pub lambda_grid: Option<Vec<f64>>,

    #[arg(long)]
    pub cv_folds: Option<usize>,

    /// Validation window length (defaults to the post-period length, capped at 24).
    #[arg(long)]
    pub cv_horizon: Option<usize>,

    #[arg(long)]
    pub cv_min_train: Option<usize>,

    #[arg(long, default_value_t = 10_000)]
    pub max_iters: usize,
}

#[derive(Debug, Args)]
pub struct EstimateArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub fit: FitArgs,

    /// Impact:adjustment:persistence window lengths in periods.
    #[arg(long)]
    pub windows: Option<String>,

    /// Sign flips for the pre-period residual test.
    #[arg(long, default_value_t = 2000)]
    pub flips: usize,
}

#[derive(Debug, Args)]
pub struct PlaceboArgs {
    #[arg(value_enum)]
    pub kind: PlaceboKindArg,
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub fit: FitArgs,

    /// Re-run cross-validation inside every placebo.
    #[arg(long)]
    pub recv: bool,

    /// Comma-separated pseudo-treatment dates for in-time placebos.
    #[arg(long, value_delimiter = ',')]
    pub pseudo_dates: Option<Vec<PeriodIndex>>,

    /// Spacing of default pseudo-dates.
    #[arg(long, default_value_t = 6)]
    pub step: usize,

    #[arg(long, default_value_t = 60)]
    pub min_train: usize,

    /// Pseudo-treated block length (defaults to the post-period length).
    #[arg(long)]
    pub horizon: Option<usize>,

    #[arg(long, value_enum, default_value_t = Block::UntilTreatment)]
    pub block: Block,
}

#[derive(Debug, Args)]
pub struct SdidArgs {
    #[command(flatten)]
    pub data: DataArgs,

    /// Unit-weight regularization, `auto` or a value.
    #[arg(long, default_value = "auto")]
    pub zeta: ZetaArg,

    /// Placebo reassignments; at least the donor count runs every donor once.
    #[arg(long, default_value_t = 200)]
    pub placebos: usize,
}

#[derive(Debug, Args)]
pub struct CvArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub fit: FitArgs,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long, default_value_t = 12)]
    pub units: usize,
    #[arg(long, default_value_t = 212)]
    pub periods: usize,
    /// Offset of the first treated period.
    #[arg(long, default_value_t = 189)]
    pub t0_offset: usize,
    #[arg(long, default_value_t = 2)]
    pub rank: usize,
    #[arg(long, default_value_t = 0.9)]
    pub persistence: f64,
    #[arg(long, default_value_t = 1.0)]
    pub loading_scale: f64,
    #[arg(long, default_value_t = 1.0)]
    pub fe_scale: f64,
    #[arg(long, default_value_t = 0.1)]
    pub sigma: f64,
    /// `zero`, `constant:TAU` or `hump:PEAK:PEAK_TIME:DECAY:FLOOR`.
    #[arg(long, default_value = "constant:0.7")]
    pub effect: EffectArg,
    #[arg(long, default_value = "2008-01")]
    pub start: PeriodIndex,
    #[arg(long, env = "PANELGAP_SEED", default_value_t = 7)]
    pub seed: u64,
    #[arg(long, default_value = "out")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Growth {
    Simple,
    Log,
}

impl From<Growth> for GrowthMethod {
    fn from(g: Growth) -> Self {
        match g {
            Growth::Simple => GrowthMethod::Simple,
            Growth::Log => GrowthMethod::Log,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scale {
    Absolute,
    MaxSingular,
}

impl From<Scale> for LambdaScale {
    fn from(s: Scale) -> Self {
        match s {
            Scale::Absolute => LambdaScale::Absolute,
            Scale::MaxSingular => LambdaScale::MaxSingular,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PlaceboKindArg {
    Space,
    Time,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Block {
    UntilTreatment,
    Horizon,
}

fn parse_nonneg(s: &str, what: &str) -> Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if v >= 0.0 && v.is_finite() => Ok(v),
        _ => Err(format!("{what} must be a finite number >= 0, got `{s}`")),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LambdaArg {
    Cv,
    Value(f64),
}

impl FromStr for LambdaArg {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        if s.eq_ignore_ascii_case("cv") {
            Ok(Self::Cv)
        } else {
            parse_nonneg(s, "lambda").map(Self::Value)
        }
    }
}

impl fmt::Display for LambdaArg {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Cv => f.write_str("cv"),
            Self::Value(v) => write!(f, "{v}"),
        }
    }
}

impl Serialize for LambdaArg {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Self::Cv => s.serialize_str("cv"),
            Self::Value(v) => s.serialize_f64(*v),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ZetaArg {
    Auto,
    Value(f64),
}

impl FromStr for ZetaArg {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        if s.eq_ignore_ascii_case("auto") {
            Ok(Self::Auto)
        } else {
            parse_nonneg(s, "zeta").map(Self::Value)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EffectArg(pub EffectProfile);

impl FromStr for EffectArg {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        let parts: Vec<&str> = s.split(':').collect();
        let num = |i: usize| parts[i].parse::<f64>().map_err(|_| format!("bad number `{}` in effect `{s}`", parts[i]));
        let profile = match (parts[0], parts.len()) {
            ("zero", 1) => EffectProfile::Zero,
            ("constant", 2) => EffectProfile::Constant { tau: num(1)? },
            ("hump", 5) => EffectProfile::Hump {
                peak: num(1)?,
                peak_time: parts[2].parse().map_err(|_| format!("bad peak time `{}`", parts[2]))?,
                decay: num(3)?,
                floor: num(4)?,
            },
            _ => return Err(format!("effect must be zero, constant:TAU or hump:PEAK:TIME:DECAY:FLOOR, got `{s}`")),
        };
        Ok(Self(profile))
    }
}
