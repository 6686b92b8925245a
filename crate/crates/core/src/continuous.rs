//! Single-forest sampler for continuous responses.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::data::{Dataset, ResponseKind, DEFAULT_MAX_CUTS};
use crate::error::{Error, Result};
use crate::model::{require_kind, run_chain, ModelFit, ModelSpec};
use crate::scalar::{sample_variance, Real};
use crate::trees::MoveProbs;

/// Hyperparameters and run length of one MCMC chain.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BartConfig {
    /// Number of trees m.
    pub trees: usize,
    /// Leaf prior tuning: σ_μ = c / (k √m).
    pub k: f64,
    /// Error-variance prior degrees of freedom ν.
    pub nu: f64,
    /// Error-variance prior scale λ on the response scale; calibrated from the
    /// data through `sigma_quantile` when absent.
    pub lambda: Option<f64>,
    /// Prior probability that σ is below sd(y) when λ is calibrated.
    pub sigma_quantile: f64,
    pub burn_in: usize,
    pub draws: usize,
    pub thin: usize,
    pub seed: u64,
    pub max_cuts: usize,
    /// Tree prior: split probability base · (1 + depth)^(-power).
    pub base: f64,
    pub power: f64,
    pub moves: MoveProbs,
    /// Keep every retained forest so the fit can predict at new rows.
    pub keep_trees: bool,
}

impl Default for BartConfig {
    fn default() -> Self {
        Self {
            trees: 200,
            k: 2.0,
            nu: 3.0,
            lambda: None,
            sigma_quantile: 0.9,
            burn_in: 1000,
            draws: 1000,
            thin: 1,
            seed: 0,
            max_cuts: DEFAULT_MAX_CUTS,
            base: 0.95,
            power: 2.0,
            moves: MoveProbs::default(),
            keep_trees: false,
        }
    }
}

impl BartConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.trees == 0 {
            return bad("tree count must be at least 1".into());
        }
        if !(self.k > 0.0) {
            return bad(format!("k must be positive, got {}", self.k));
        }
        if !(self.nu > 0.0) {
            return bad(format!("nu must be positive, got {}", self.nu));
        }
        if let Some(l) = self.lambda {
            if !(l > 0.0 && l.is_finite()) {
                return bad(format!("lambda must be positive, got {l}"));
            }
        }
        if !(self.sigma_quantile > 0.0 && self.sigma_quantile < 1.0) {
            return bad(format!("sigma quantile must lie in (0, 1), got {}", self.sigma_quantile));
        }
        if self.draws == 0 {
            return bad("draw count must be at least 1".into());
        }
        if self.thin == 0 {
            return bad("thinning interval must be at least 1".into());
        }
        if self.max_cuts == 0 {
            return bad("max_cuts must be at least 1".into());
        }
        if !(self.base >= 0.0 && self.base < 1.0) {
            return bad(format!("tree prior base must lie in [0, 1), got {}", self.base));
        }
        if !(self.power >= 0.0) {
            return bad(format!("tree prior power must be >= 0, got {}", self.power));
        }
        Ok(())
    }

    pub fn iterations(&self) -> usize {
        self.burn_in + self.draws * self.thin
    }
}

/// λ such that P(σ < sd(y)) = q under σ² ~ νλ / χ²_ν.
pub fn default_lambda<T: Real>(y: &[T], nu: f64, q: f64) -> Result<T> {
    if y.len() < 2 {
        return Err(Error::InvalidData("need at least two responses".into()));
    }
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::InvalidConfig(format!("quantile must lie in (0, 1), got {q}")));
    }
    let var = sample_variance(y).as_f64();
    if !(var > 0.0) {
        return Err(Error::InvalidData("response is constant".into()));
    }
    Ok(T::lit(var * chi_squared_quantile(1.0 - q, nu)? / nu))
}

pub(crate) fn chi_squared_quantile(p: f64, nu: f64) -> Result<f64> {
    let dist = ChiSquared::new(nu)
        .map_err(|e| Error::InvalidConfig(format!("nu = {nu}: {e}")))?;
    Ok(dist.inverse_cdf(p))
}

/// Sum-of-trees regression y = f(x) + ε, ε ~ N(0, σ²), over all covariates.
pub fn fit_bart<T: Real>(data: &Dataset<T>, config: &BartConfig) -> Result<ModelFit<T>> {
    fit_bart_with_test(data, None, config)
}

/// As [`fit_bart`], also recording per-draw predictions at `test` rows.
pub fn fit_bart_with_test<T: Real>(
    data: &Dataset<T>,
    test: Option<&Dataset<T>>,
    config: &BartConfig,
) -> Result<ModelFit<T>> {
    require_kind(data, ResponseKind::Continuous)?;
    let spec = ModelSpec::Single {
        columns: (0..data.p()).collect(),
    };
    run_chain(data, test, spec, config.trees, config)
}
