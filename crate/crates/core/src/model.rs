//! Posterior draw archives and the shared Gibbs driver behind every sampler.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::additive::{treatment_posterior, treatment_posterior_weighted};
use crate::continuous::{chi_squared_quantile, default_lambda, BartConfig};
use crate::data::{build_cutpoints, CovariateSplit, Dataset, ResponseKind, SplitIndex};
use crate::error::{Error, Result};
use crate::forest::Forest;
use crate::logit::LatentState;
use crate::rng;
use crate::scalar::{log_logistic_cdf, logistic_cdf, mean, sample_variance, Real};
use crate::trees::{DecisionTree, TreePrior, TreeSpace};

/// Residual sd assumed for the prior calibration when the response is constant,
/// relative to the internal response scale.
const CONSTANT_RESPONSE_SD: f64 = 1e-8;

/// Which sum-of-trees model produced a fit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum ModelSpec {
    /// One forest f(x) over `columns`.
    Single { columns: Vec<usize> },
    /// f₁(x⁻) + f₂(x⁺), one forest per block.
    TwoBart { split: CovariateSplit },
    /// βA + f(x) with A the `treatment` column and f over `columns`.
    Treatment {
        treatment: usize,
        columns: Vec<usize>,
        prior_mean: f64,
        prior_var: f64,
    },
}

impl ModelSpec {
    pub fn is_additive(&self) -> bool {
        !matches!(self, ModelSpec::Single { .. })
    }

    fn blocks(&self) -> Vec<Vec<usize>> {
        match self {
            ModelSpec::Single { columns } => vec![columns.clone()],
            ModelSpec::TwoBart { split } => vec![split.minus.clone(), split.plus.clone()],
            ModelSpec::Treatment { columns, .. } => vec![columns.clone()],
        }
    }

    fn component_names(&self) -> Vec<String> {
        match self {
            ModelSpec::Single { .. } => vec![],
            ModelSpec::TwoBart { .. } => vec!["f1".into(), "f2".into()],
            ModelSpec::Treatment { .. } => vec!["treatment".into(), "f".into()],
        }
    }
}

/// Per-draw values of one additive component at the training rows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct Component<T> {
    pub name: String,
    /// S × n
    pub draws: Vec<Vec<T>>,
}

/// Everything retained from one chain.
///
/// `fits` holds f(x_i) on the response scale for continuous models and the
/// linear predictor (log-odds) for binary ones. For additive models the
/// per-draw total is the sum of the per-draw components.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct ModelFit<T> {
    pub spec: ModelSpec,
    pub response: ResponseKind,
    pub config: BartConfig,
    pub trees_per_forest: usize,
    pub n: usize,
    pub p: usize,
    /// Internal response transform: y = shift + scale · y_internal.
    pub shift: T,
    pub scale: T,
    pub leaf_sd: T,
    /// σ² prior scale on the response scale (continuous models).
    pub lambda: Option<T>,
    /// S × n
    pub fits: Vec<Vec<T>>,
    pub components: Vec<Component<T>>,
    pub sigma2: Vec<T>,
    pub beta: Vec<T>,
    /// S × n matrix of log p(y_i | θ^s).
    pub log_lik: Vec<Vec<T>>,
    /// S × n_test, filled when test rows were supplied.
    pub test_fits: Vec<Vec<T>>,
    /// Per draw, per forest, the trees on the internal scale (only with `keep_trees`).
    pub trees: Vec<Vec<Vec<DecisionTree<T>>>>,
    pub acceptance_rate: f64,
}

/// Continuous models fitted by the additive samplers share the archive format.
pub type AdditiveFit<T> = ModelFit<T>;

impl<T: Real> ModelFit<T> {
    pub fn n_draws(&self) -> usize {
        self.fits.len()
    }

    pub fn component(&self, name: &str) -> Option<&Component<T>> {
        self.components.iter().find(|c| c.name == name)
    }

    /// Row average of the per-draw fits.
    pub fn posterior_mean(&self) -> Vec<T> {
        column_means(&self.fits)
    }

    /// Posterior mean of P(Y = 1 | x_i) for binary models.
    pub fn posterior_mean_probability(&self) -> Vec<T> {
        let probs: Vec<Vec<T>> = self
            .fits
            .iter()
            .map(|row| row.iter().map(|&e| logistic_cdf(e)).collect())
            .collect();
        column_means(&probs)
    }

    /// Posterior-mean prediction at the test rows supplied to the sampler: the
    /// mean response for continuous models, the event probability for binary ones.
    pub fn test_prediction(&self) -> Vec<T> {
        match self.response {
            ResponseKind::Continuous => column_means(&self.test_fits),
            ResponseKind::Binary => {
                let probs: Vec<Vec<T>> = self
                    .test_fits
                    .iter()
                    .map(|row| row.iter().map(|&e| logistic_cdf(e)).collect())
                    .collect();
                column_means(&probs)
            }
        }
    }

    /// Posterior-mean component fits, each shifted to in-sample mean zero
    /// except the last, which absorbs the shifts so the sum is unchanged.
    pub fn centered_components(&self) -> Vec<(String, Vec<T>)> {
        let means: Vec<(String, Vec<T>)> = self
            .components
            .iter()
            .map(|c| (c.name.clone(), column_means(&c.draws)))
            .collect();
        if means.is_empty() {
            return means;
        }
        let last = means.len() - 1;
        let mut total_shift = T::zero();
        let mut out = Vec::with_capacity(means.len());
        for (j, (name, v)) in means.into_iter().enumerate() {
            if j < last {
                let m = mean(&v);
                total_shift = total_shift + m;
                out.push((name, v.into_iter().map(|x| x - m).collect()));
            } else {
                out.push((name, v.into_iter().map(|x| x + total_shift).collect()));
            }
        }
        out
    }

    /// Per-draw fits at new covariate rows; requires `keep_trees`.
    pub fn predict(&self, rows: &[Vec<T>]) -> Result<Vec<Vec<T>>> {
        if self.trees.is_empty() {
            return Err(Error::InvalidConfig(
                "fit was run without keep_trees; no forests to predict with".into(),
            ));
        }
        if let Some((i, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != self.p) {
            return Err(Error::InvalidData(format!(
                "row {i} has {} columns, the model was fitted on {}",
                r.len(),
                self.p
            )));
        }
        let treatment = match self.spec {
            ModelSpec::Treatment { treatment, .. } => Some(treatment),
            _ => None,
        };
        Ok(self
            .trees
            .iter()
            .enumerate()
            .map(|(s, forests)| {
                let beta = self.beta.get(s).copied().unwrap_or_else(T::zero);
                rows.iter()
                    .map(|row| {
                        let sums: Vec<T> = forests.iter().map(|f| sum_rows(f, row)).collect();
                        let a = treatment.map(|t| row[t]).unwrap_or_else(T::zero);
                        combine(&self.spec, &sums, beta, a, self.shift, self.scale).0
                    })
                    .collect()
            })
            .collect())
    }

    pub fn save_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        serde_json::to_writer(std::io::BufWriter::new(file), self)?;
        Ok(())
    }

    pub fn load_json(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Ok(serde_json::from_reader(std::io::BufReader::new(file))?)
    }
}

fn sum_rows<T: Real>(trees: &[DecisionTree<T>], row: &[T]) -> T {
    let mut acc = T::zero();
    for t in trees {
        acc = acc + crate::trees::evaluate(t, row);
    }
    acc
}

pub(crate) fn column_means<T: Real>(m: &[Vec<T>]) -> Vec<T> {
    let Some(first) = m.first() else {
        return Vec::new();
    };
    let mut acc = vec![T::zero(); first.len()];
    for row in m {
        for (a, &v) in acc.iter_mut().zip(row) {
            *a = *a + v;
        }
    }
    let s = T::lit(m.len() as f64);
    acc.into_iter().map(|a| a / s).collect()
}

/// Maps internal forest sums to (total, components) on the response scale.
/// Training fits and predictions both go through here so they agree bit for bit.
fn combine<T: Real>(spec: &ModelSpec, sums: &[T], beta: T, a: T, shift: T, scale: T) -> (T, [T; 2]) {
    match spec {
        ModelSpec::Single { .. } => (shift + scale * sums[0], [T::zero(); 2]),
        ModelSpec::TwoBart { .. } => {
            let c1 = shift + scale * sums[0];
            let c2 = scale * sums[1];
            (c1 + c2, [c1, c2])
        }
        ModelSpec::Treatment { .. } => {
            let c1 = beta * a;
            let c2 = shift + scale * sums[0];
            (c1 + c2, [c1, c2])
        }
    }
}

pub(crate) fn require_kind<T: Real>(data: &Dataset<T>, kind: ResponseKind) -> Result<()> {
    if data.kind() != kind {
        return Err(Error::WrongResponseKind(format!(
            "this model needs a {} response, got {}",
            kind.as_str(),
            data.kind().as_str()
        )));
    }
    Ok(())
}

/// Runs one chain of the blocked Gibbs sampler for `spec`.
///
/// Per iteration: latent utilities (binary), each forest in block order against
/// the partial residual of everything else, β (treatment models), then σ²
/// (continuous) or the mixture variances λ_i (binary).
pub(crate) fn run_chain<T: Real>(
    data: &Dataset<T>,
    test: Option<&Dataset<T>>,
    spec: ModelSpec,
    trees_per_forest: usize,
    config: &BartConfig,
) -> Result<ModelFit<T>> {
    config.validate()?;
    if trees_per_forest == 0 {
        return Err(Error::InvalidConfig("each forest needs at least one tree".into()));
    }
    let n = data.n();
    if n < 2 {
        return Err(Error::InvalidData(format!("need at least two observations, got {n}")));
    }
    if let Some(i) = data.y().iter().position(|v| !v.is_finite()) {
        return Err(Error::InvalidData(format!("non-finite response at row {}", i + 1)));
    }
    if let Some(t) = test {
        if t.p() != data.p() {
            return Err(Error::InvalidData(format!(
                "test rows have {} columns, training data has {}",
                t.p(),
                data.p()
            )));
        }
    }
    let binary = data.kind() == ResponseKind::Binary;
    let y = data.y();

    let grid = build_cutpoints(data, config.max_cuts);
    let index = SplitIndex::new(data, &grid);
    let blocks = spec.blocks();
    let total_trees = trees_per_forest * blocks.len();
    let numerator = if binary { 3.0 } else { 0.5 };
    let leaf_sd = T::lit(numerator / (config.k * (total_trees as f64).sqrt()));
    let prior = TreePrior::new(T::lit(config.base), T::lit(config.power), leaf_sd)?;
    let spaces = blocks
        .iter()
        .map(|b| TreeSpace::new(&index, &grid, b.clone(), prior, config.moves))
        .collect::<Result<Vec<_>>>()?;

    // internal response scale
    let (shift, scale) = if binary {
        (T::zero(), T::one())
    } else {
        let (lo, hi) = y
            .iter()
            .fold((T::infinity(), T::neg_infinity()), |(a, b), &v| (a.min(v), b.max(v)));
        if hi > lo {
            ((hi + lo) / T::lit(2.0), hi - lo)
        } else {
            (lo, lo.abs().max(T::one()))
        }
    };
    let ys: Vec<T> = y.iter().map(|&v| (v - shift) / scale).collect();

    let (lambda_s, mut sigma2_s) = if binary {
        (T::zero(), T::one())
    } else {
        let lambda_s = match config.lambda {
            Some(l) => T::lit(l) / (scale * scale),
            None => match default_lambda(&ys, config.nu, config.sigma_quantile) {
                Ok(l) => l,
                Err(_) => T::lit(
                    CONSTANT_RESPONSE_SD * CONSTANT_RESPONSE_SD
                        * chi_squared_quantile(1.0 - config.sigma_quantile, config.nu)?
                        / config.nu,
                ),
            },
        };
        let v = sample_variance(&ys);
        (lambda_s, if v > T::zero() { v } else { lambda_s })
    };

    let (a, treat_prior) = match &spec {
        ModelSpec::Treatment {
            treatment,
            prior_mean,
            prior_var,
            ..
        } => {
            let a = data.column(*treatment).to_vec();
            let m0 = T::lit(*prior_mean) / scale;
            let v0 = T::lit(*prior_var) / (scale * scale);
            (Some(a), Some((m0, v0)))
        }
        _ => (None, None),
    };
    let a_test: Option<Vec<T>> = match (&spec, test) {
        (ModelSpec::Treatment { treatment, .. }, Some(t)) => Some(t.column(*treatment).to_vec()),
        _ => None,
    };
    let test_rows = test.map(|t| t.rows());

    let mut rng = rng::seeded(config.seed);
    let mut forests: Vec<Forest<T>> = blocks.iter().map(|_| Forest::new(trees_per_forest, n)).collect();
    let mut beta_s = T::zero();
    let mut latent = binary.then(|| LatentState::initial(y));

    let names = spec.component_names();
    let mut fit = ModelFit {
        spec: spec.clone(),
        response: data.kind(),
        config: config.clone(),
        trees_per_forest,
        n,
        p: data.p(),
        shift,
        scale,
        leaf_sd,
        lambda: (!binary).then(|| lambda_s * scale * scale),
        fits: Vec::with_capacity(config.draws),
        components: names
            .into_iter()
            .map(|name| Component {
                name,
                draws: Vec::with_capacity(config.draws),
            })
            .collect(),
        sigma2: Vec::new(),
        beta: Vec::new(),
        log_lik: Vec::with_capacity(config.draws),
        test_fits: Vec::new(),
        trees: Vec::new(),
        acceptance_rate: 0.0,
    };

    let mut target = vec![T::zero(); n];
    let mut eta = vec![T::zero(); n];
    let linear_predictor = |forests: &[Forest<T>], beta_s: T, eta: &mut [T]| {
        for i in 0..n {
            let mut e = a.as_ref().map_or(T::zero(), |a| beta_s * a[i]);
            for f in forests {
                e = e + f.fit()[i];
            }
            eta[i] = e;
        }
    };

    for it in 0..config.iterations() {
        if let Some(lat) = latent.as_mut() {
            linear_predictor(&forests, beta_s, &mut eta);
            lat.refresh_z(y, &eta, &mut rng);
        }
        let weights = latent.as_ref().map(|l| l.weights());
        let response: &[T] = latent.as_ref().map_or(&ys, |l| &l.z);
        let s2 = if binary { T::one() } else { sigma2_s };

        for b in 0..forests.len() {
            for i in 0..n {
                let mut t = response[i];
                if let Some(a) = &a {
                    t = t - beta_s * a[i];
                }
                for (c, f) in forests.iter().enumerate() {
                    if c != b {
                        t = t - f.fit()[i];
                    }
                }
                target[i] = t;
            }
            forests[b].sweep(&spaces[b], &target, weights.as_deref(), s2, &mut rng);
        }

        if let (Some(a), Some((m0, v0))) = (&a, treat_prior) {
            for i in 0..n {
                let mut t = response[i];
                for f in &forests {
                    t = t - f.fit()[i];
                }
                target[i] = t;
            }
            let (mu, var) = match &latent {
                Some(l) => treatment_posterior_weighted(&target, a, &l.lambda, m0, v0),
                None => treatment_posterior(&target, a, sigma2_s, m0, v0),
            };
            beta_s = mu + var.sqrt() * T::lit(rng::std_normal(&mut rng));
        }

        linear_predictor(&forests, beta_s, &mut eta);
        match latent.as_mut() {
            Some(lat) => {
                lat.refresh_lambda(&eta, &mut rng);
                if !lat.is_sign_consistent(y) {
                    return Err(Error::InvalidData(format!(
                        "latent utilities lost sign consistency at iteration {it}"
                    )));
                }
            }
            None => {
                let sse: T = ys.iter().zip(&eta).map(|(&v, &e)| (v - e) * (v - e)).sum();
                let nu = T::lit(config.nu);
                let chi = T::lit(rng::chi_squared(&mut rng, config.nu + n as f64));
                sigma2_s = (nu * lambda_s + sse) / chi;
            }
        }

        if it < config.burn_in || (it - config.burn_in + 1) % config.thin != 0 {
            continue;
        }

        let beta = beta_s * scale;
        let sigma2 = sigma2_s * scale * scale;
        let mut totals = Vec::with_capacity(n);
        let mut comps = [Vec::with_capacity(n), Vec::with_capacity(n)];
        for i in 0..n {
            let sums: Vec<T> = forests.iter().map(|f| f.fit()[i]).collect();
            let ai = a.as_ref().map_or(T::zero(), |a| a[i]);
            let (total, c) = combine(&spec, &sums, beta, ai, shift, scale);
            totals.push(total);
            comps[0].push(c[0]);
            comps[1].push(c[1]);
        }
        let ll: Vec<T> = if binary {
            totals
                .iter()
                .zip(y)
                .map(|(&e, &v)| if v > T::lit(0.5) { log_logistic_cdf(e) } else { log_logistic_cdf(-e) })
                .collect()
        } else {
            let c = T::lit(-0.5) * (T::lit(2.0 * std::f64::consts::PI) * sigma2).ln();
            totals
                .iter()
                .zip(y)
                .map(|(&f, &v)| c - (v - f) * (v - f) / (T::lit(2.0) * sigma2))
                .collect()
        };
        if let Some(rows) = &test_rows {
            let preds = rows
                .iter()
                .enumerate()
                .map(|(i, row)| {
                    let sums: Vec<T> = forests.iter().map(|f| f.evaluate_row(row)).collect();
                    let ai = a_test.as_ref().map_or(T::zero(), |a| a[i]);
                    combine(&spec, &sums, beta, ai, shift, scale).0
                })
                .collect();
            fit.test_fits.push(preds);
        }
        for (c, v) in fit.components.iter_mut().zip(comps) {
            c.draws.push(v);
        }
        fit.fits.push(totals);
        fit.log_lik.push(ll);
        if !binary {
            fit.sigma2.push(sigma2);
        }
        if a.is_some() {
            fit.beta.push(beta);
        }
        if config.keep_trees {
            fit.trees.push(forests.iter().map(|f| f.trees()).collect());
        }
    }
    let (prop, acc) = forests
        .iter()
        .fold((0.0, 0.0), |(p, q), f| (p + 1.0, q + f.acceptance_rate()));
    fit.acceptance_rate = if prop > 0.0 { acc / prop } else { 0.0 };
    Ok(fit)
}
