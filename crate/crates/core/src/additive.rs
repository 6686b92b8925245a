//! Additive sum-of-trees models: two forests over disjoint covariate blocks,
//! or a linear treatment effect plus one forest.

use serde::{Deserialize, Serialize};

use crate::continuous::BartConfig;
use crate::data::{CovariateSplit, Dataset, ResponseKind};
use crate::error::{Error, Result};
use crate::model::{require_kind, run_chain, AdditiveFit, ModelSpec};
use crate::scalar::{sample_variance, Real};

/// Variance of the standard logistic distribution, used in place of var(y)
/// when defaulting the treatment prior of binary models.
const LOGISTIC_VARIANCE: f64 = std::f64::consts::PI * std::f64::consts::PI / 3.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdditiveConfig {
    /// Chain settings; `bart.trees` is the tree count of the treatment model's forest.
    pub bart: BartConfig,
    /// Trees per forest in the two-forest models.
    pub trees_per_component: usize,
    /// μ₀
    pub treatment_prior_mean: f64,
    /// σ₀²; defaults to 100 · var(y) / ΣA_i².
    pub treatment_prior_var: Option<f64>,
}

impl Default for AdditiveConfig {
    fn default() -> Self {
        Self::from_single(BartConfig::default())
    }
}

impl AdditiveConfig {
    /// Matches a single-forest configuration: each of the two forests gets half its trees.
    pub fn from_single(bart: BartConfig) -> Self {
        Self {
            trees_per_component: (bart.trees / 2).max(1),
            bart,
            treatment_prior_mean: 0.0,
            treatment_prior_var: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.bart.validate()?;
        if self.trees_per_component == 0 {
            return Err(Error::InvalidConfig("trees per component must be at least 1".into()));
        }
        if !self.treatment_prior_mean.is_finite() {
            return Err(Error::InvalidConfig("treatment prior mean must be finite".into()));
        }
        if let Some(v) = self.treatment_prior_var {
            if !(v > 0.0) {
                return Err(Error::InvalidConfig(format!(
                    "treatment prior variance must be positive, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// Conjugate update for β in r_i = βA_i + ε_i, ε_i ~ N(0, σ²), β ~ N(μ₀, σ₀²).
/// Returns (mean, variance). An infinite `prior_var` gives the flat-prior limit.
pub fn treatment_posterior<T: Real>(
    residual: &[T],
    a: &[T],
    sigma2: T,
    prior_mean: T,
    prior_var: T,
) -> (T, T) {
    let saa: T = a.iter().map(|&x| x * x).sum();
    let sra: T = residual.iter().zip(a).map(|(&r, &x)| r * x).sum();
    if prior_var.is_infinite() {
        return (sra / saa, sigma2 / saa);
    }
    let denom = saa * prior_var + sigma2;
    ((sra * prior_var + prior_mean * sigma2) / denom, sigma2 * prior_var / denom)
}

/// Conjugate update for β with per-observation variances λ_i:
/// V = (σ₀⁻² + Σ A_i²/λ_i)⁻¹, B = V (σ₀⁻² μ₀ + Σ A_i z_i/λ_i).
pub fn treatment_posterior_weighted<T: Real>(
    z: &[T],
    a: &[T],
    lambda: &[T],
    prior_mean: T,
    prior_var: T,
) -> (T, T) {
    let mut prec = T::one() / prior_var;
    let mut lin = prior_mean / prior_var;
    if prior_var.is_infinite() {
        lin = T::zero();
    }
    for ((&zi, &ai), &li) in z.iter().zip(a).zip(lambda) {
        prec = prec + ai * ai / li;
        lin = lin + ai * zi / li;
    }
    let v = T::one() / prec;
    (v * lin, v)
}

fn treatment_spec<T: Real>(
    data: &Dataset<T>,
    treatment: usize,
    config: &AdditiveConfig,
    outcome_variance: f64,
) -> Result<ModelSpec> {
    if treatment >= data.p() {
        return Err(Error::InvalidConfig(format!(
            "treatment column {treatment} out of range for {} covariates",
            data.p()
        )));
    }
    if data.p() < 2 {
        return Err(Error::InvalidConfig(
            "the treatment model needs at least one covariate besides the treatment".into(),
        ));
    }
    let saa: f64 = data.column(treatment).iter().map(|&x| x.as_f64() * x.as_f64()).sum();
    if !(saa > 0.0) {
        return Err(Error::InvalidData("treatment column is identically zero".into()));
    }
    let prior_var = match config.treatment_prior_var {
        Some(v) => v,
        None => {
            let v = 100.0 * outcome_variance / saa;
            if !(v > 0.0) {
                // constant response: keep the prior proper on the unit scale
                100.0 / saa
            } else {
                v
            }
        }
    };
    Ok(ModelSpec::Treatment {
        treatment,
        columns: (0..data.p()).filter(|&j| j != treatment).collect(),
        prior_mean: config.treatment_prior_mean,
        prior_var,
    })
}

/// y = f₁(x⁻) + f₂(x⁺) + ε.
pub fn fit_two_bart<T: Real>(
    data: &Dataset<T>,
    split: &CovariateSplit,
    config: &AdditiveConfig,
) -> Result<AdditiveFit<T>> {
    fit_two_bart_with_test(data, split, None, config)
}

pub fn fit_two_bart_with_test<T: Real>(
    data: &Dataset<T>,
    split: &CovariateSplit,
    test: Option<&Dataset<T>>,
    config: &AdditiveConfig,
) -> Result<AdditiveFit<T>> {
    require_kind(data, ResponseKind::Continuous)?;
    two_bart(data, split, test, config)
}

/// P(Y = 1 | x) = F(f₁(x⁻) + f₂(x⁺)).
pub fn fit_two_bart_binary<T: Real>(
    data: &Dataset<T>,
    split: &CovariateSplit,
    config: &AdditiveConfig,
) -> Result<AdditiveFit<T>> {
    fit_two_bart_binary_with_test(data, split, None, config)
}

pub fn fit_two_bart_binary_with_test<T: Real>(
    data: &Dataset<T>,
    split: &CovariateSplit,
    test: Option<&Dataset<T>>,
    config: &AdditiveConfig,
) -> Result<AdditiveFit<T>> {
    require_kind(data, ResponseKind::Binary)?;
    two_bart(data, split, test, config)
}

fn two_bart<T: Real>(
    data: &Dataset<T>,
    split: &CovariateSplit,
    test: Option<&Dataset<T>>,
    config: &AdditiveConfig,
) -> Result<AdditiveFit<T>> {
    config.validate()?;
    // re-validate: the split may have been built by hand
    let split = CovariateSplit::new(split.minus.clone(), split.plus.clone(), data.p())?;
    run_chain(
        data,
        test,
        ModelSpec::TwoBart { split },
        config.trees_per_component,
        &config.bart,
    )
}

/// y = βA + f(x) + ε with A the `treatment` column, excluded from f's covariates.
pub fn fit_treatment_bart<T: Real>(
    data: &Dataset<T>,
    treatment: usize,
    config: &AdditiveConfig,
) -> Result<AdditiveFit<T>> {
    fit_treatment_bart_with_test(data, treatment, None, config)
}

pub fn fit_treatment_bart_with_test<T: Real>(
    data: &Dataset<T>,
    treatment: usize,
    test: Option<&Dataset<T>>,
    config: &AdditiveConfig,
) -> Result<AdditiveFit<T>> {
    require_kind(data, ResponseKind::Continuous)?;
    config.validate()?;
    let var_y = sample_variance(data.y()).as_f64();
    let spec = treatment_spec(data, treatment, config, var_y)?;
    run_chain(data, test, spec, config.bart.trees, &config.bart)
}

/// P(Y = 1 | x) = F(βA + f(x)).
pub fn fit_treatment_bart_binary<T: Real>(
    data: &Dataset<T>,
    treatment: usize,
    config: &AdditiveConfig,
) -> Result<AdditiveFit<T>> {
    fit_treatment_bart_binary_with_test(data, treatment, None, config)
}

pub fn fit_treatment_bart_binary_with_test<T: Real>(
    data: &Dataset<T>,
    treatment: usize,
    test: Option<&Dataset<T>>,
    config: &AdditiveConfig,
) -> Result<AdditiveFit<T>> {
    require_kind(data, ResponseKind::Binary)?;
    config.validate()?;
    let spec = treatment_spec(data, treatment, config, LOGISTIC_VARIANCE)?;
    run_chain(data, test, spec, config.bart.trees, &config.bart)
}
