//! Bayesian additive regression trees with additivity assessment.
//!
//! Everything numeric is generic over [`Real`] (`f32` or `f64`); the aliases
//! at the crate root fix the scalar to `f64`.

pub mod additive;
pub mod comparison;
pub mod continuous;
pub mod data;
pub mod error;
pub mod forest;
pub mod logit;
pub mod model;
pub mod rng;
pub mod scalar;
pub mod sim_design;
pub mod trees;

pub use additive::{
    fit_treatment_bart, fit_treatment_bart_binary, fit_two_bart, fit_two_bart_binary,
    AdditiveConfig,
};
pub use comparison::{
    compare_additivity, compute_cpo, compute_lpml, compute_ospe, psbf_verdict, r_ospe,
    AdditiveForm, ComparisonConfig, ComparisonReport,
};
pub use continuous::{default_lambda, fit_bart, BartConfig};
pub use data::{load_csv, make_folds, CovariateSplit, FoldAssignment, ResponseKind};
pub use error::{Error, Result};
pub use logit::{draw_lambda, draw_truncated_normal, fit_logit_bart};
pub use model::{ModelFit, ModelSpec};
pub use scalar::Real;

pub type Dataset = data::Dataset<f64>;
pub type Dataset32 = data::Dataset<f32>;
pub type Tree = trees::DecisionTree<f64>;
pub type Tree32 = trees::DecisionTree<f32>;
pub type Fit = model::ModelFit<f64>;
pub type Fit32 = model::ModelFit<f32>;
