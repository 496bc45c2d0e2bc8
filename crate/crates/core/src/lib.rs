//! Single-treated-unit counterfactual inference on panel data.
//!
//! The crate imputes the treated unit's post-event outcomes with a
//! nuclear-norm regularized matrix-completion estimator (two-way fixed
//! effects plus a low-rank interactive term), tunes the shrinkage weight by
//! rolling-origin cross-validation, summarizes dynamic effects, runs
//! in-space and in-time placebo inference, and cross-checks against a
//! synthetic difference-in-differences estimator. A seeded latent-factor
//! generator supplies ground truth for testing.
//!
//! Numerical code is generic over [`Scalar`] (`f32` or `f64`); the `*64`
//! aliases below fix the common double-precision case.

pub mod cv;
pub mod dgp;
pub mod effects;
pub mod error;
pub mod inference;
pub mod linalg;
pub mod matrix;
pub mod panel;
pub mod scalar;
pub mod sdid;
mod simplex;
pub mod solver;

#[cfg(any(test, feature = "oracles"))]
pub mod oracle;
#[cfg(test)]
mod testutil;

pub use error::{Error, Result};
pub use matrix::Matrix;
pub use panel::{ObservedSets, PanelMatrix, PeriodIndex, PeriodRange, TreatmentAssignment};
pub use scalar::Scalar;

pub type Matrix64 = Matrix<f64>;
pub type Matrix32 = Matrix<f32>;
pub type Panel64 = PanelMatrix<f64>;
pub type Panel32 = PanelMatrix<f32>;
pub type McConfig64 = solver::McConfig<f64>;
pub type McFit64 = solver::McFit<f64>;
pub type McFit32 = solver::McFit<f32>;
pub type CvPlan64 = cv::CvPlan<f64>;
pub type CvReport64 = cv::CvReport<f64>;
pub type EffectPath64 = effects::EffectPath<f64>;
pub type PlaceboDistribution64 = inference::PlaceboDistribution<f64>;
pub type SdidEstimate64 = sdid::SdidEstimate<f64>;
