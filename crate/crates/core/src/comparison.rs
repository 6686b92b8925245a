//! CPO/LPML, pseudo Bayes factors, cross-validated prediction error and the
//! additive-versus-nonadditive comparison driver.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::additive::{
    fit_treatment_bart_binary_with_test, fit_treatment_bart_with_test,
    fit_two_bart_binary_with_test, fit_two_bart_with_test, AdditiveConfig,
};
use crate::continuous::BartConfig;
use crate::data::{make_folds, CovariateSplit, Dataset, FoldAssignment, ResponseKind};
use crate::error::{Error, Result};
use crate::model::{run_chain, ModelFit, ModelSpec};
use crate::rng::derive_seed;
use crate::scalar::{log_sum_exp, Real};

/// Per-observation conditional predictive ordinates, stored as logs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct CpoVector<T> {
    pub log_cpo: Vec<T>,
}

impl<T: Real> CpoVector<T> {
    pub fn len(&self) -> usize {
        self.log_cpo.len()
    }

    pub fn is_empty(&self) -> bool {
        self.log_cpo.is_empty()
    }

    pub fn cpo(&self) -> Vec<T> {
        self.log_cpo.iter().map(|v| v.exp()).collect()
    }

    pub fn lpml(&self) -> T {
        compute_lpml(self)
    }
}

/// Harmonic-mean CPO estimate from an S × n matrix of log p(y_i | θ^s):
/// CPO_i = [ (1/S) Σ_s 1 / p(y_i | θ^s) ]⁻¹, evaluated in log space.
pub fn compute_cpo<T: Real>(log_lik: &[Vec<T>]) -> Result<CpoVector<T>> {
    let s = log_lik.len();
    if s == 0 {
        return Err(Error::InvalidData("likelihood matrix has no draws".into()));
    }
    let n = log_lik[0].len();
    for (d, row) in log_lik.iter().enumerate() {
        if row.len() != n {
            return Err(Error::InvalidData(format!(
                "draw {d} has {} observations, expected {n}",
                row.len()
            )));
        }
        if let Some(i) = row.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidLikelihood {
                draw: d,
                obs: i,
                value: row[i].as_f64().exp(),
            });
        }
    }
    let log_s = T::lit(s as f64).ln();
    let log_cpo = (0..n)
        .map(|i| log_s - log_sum_exp(log_lik.iter().map(|row| -row[i])))
        .collect();
    Ok(CpoVector { log_cpo })
}

/// As [`compute_cpo`] from densities or masses rather than their logs.
pub fn compute_cpo_from_likelihoods<T: Real>(lik: &[Vec<T>]) -> Result<CpoVector<T>> {
    let mut logs = Vec::with_capacity(lik.len());
    for (d, row) in lik.iter().enumerate() {
        let mut out = Vec::with_capacity(row.len());
        for (i, &v) in row.iter().enumerate() {
            if !(v > T::zero() && v.is_finite()) {
                return Err(Error::InvalidLikelihood {
                    draw: d,
                    obs: i,
                    value: v.as_f64(),
                });
            }
            out.push(v.ln());
        }
        logs.push(out);
    }
    compute_cpo(&logs)
}

/// LPML = Σ_i log CPO_i.
pub fn compute_lpml<T: Real>(cpo: &CpoVector<T>) -> T {
    cpo.log_cpo.iter().copied().sum()
}

/// LPML straight from a fit's likelihood archive.
pub fn fit_lpml<T: Real>(fit: &ModelFit<T>) -> Result<T> {
    Ok(compute_lpml(&compute_cpo(&fit.log_lik)?))
}

/// Evidence bands for a (pseudo) Bayes factor.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvidenceBand {
    /// 1/3 ≤ PsBF ≤ 3: barely worth mentioning.
    Indifferent,
    Substantial,
    Strong,
    VeryStrong,
    Decisive,
}

impl EvidenceBand {
    pub fn label(self) -> &'static str {
        match self {
            EvidenceBand::Indifferent => "barely worth mentioning",
            EvidenceBand::Substantial => "substantial",
            EvidenceBand::Strong => "strong",
            EvidenceBand::VeryStrong => "very strong",
            EvidenceBand::Decisive => "decisive",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Favors {
    First,
    Second,
    Neither,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    /// exp(LPML_a − LPML_b); may overflow to infinity for very large differences.
    pub psbf: f64,
    pub log10_psbf: f64,
    pub band: EvidenceBand,
    pub favors: Favors,
}

/// Classifies exp(lpml_a − lpml_b) on the Jeffreys-style scale. Bands are
/// decided on the log scale so swapping the arguments mirrors the verdict exactly.
pub fn psbf_verdict(lpml_a: f64, lpml_b: f64) -> Verdict {
    let d = lpml_a - lpml_b;
    let a = d.abs();
    let band = if a <= 3f64.ln() {
        EvidenceBand::Indifferent
    } else if a <= 10f64.ln() {
        EvidenceBand::Substantial
    } else if a <= 30f64.ln() {
        EvidenceBand::Strong
    } else if a <= 100f64.ln() {
        EvidenceBand::VeryStrong
    } else {
        EvidenceBand::Decisive
    };
    let favors = match band {
        EvidenceBand::Indifferent => Favors::Neither,
        _ if d > 0.0 => Favors::First,
        _ => Favors::Second,
    };
    Verdict {
        psbf: d.exp(),
        log10_psbf: d / std::f64::consts::LN_10,
        band,
        favors,
    }
}

/// Verdict from a PsBF value rather than two LPMLs.
pub fn classify_psbf(psbf: f64) -> Verdict {
    psbf_verdict(psbf.ln(), 0.0)
}

/// Loss used to score held-out predictions.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OspeLoss {
    /// (y − ŷ)²; for binary responses ŷ is the event probability (Brier score).
    #[default]
    Squared,
    /// 1{y ≠ round(ŷ)}, binary responses only.
    Misclassification,
}

/// Anything that can be trained on one slice of data and predict another.
///
/// Predictions are posterior means: the mean response for continuous data and
/// the event probability for binary data.
pub trait Fitter<T: Real>: Sync {
    fn fit_predict(&self, train: &Dataset<T>, test: &Dataset<T>, fold: usize) -> Result<Vec<T>>;
}

impl<T: Real, F> Fitter<T> for F
where
    F: Fn(&Dataset<T>, &Dataset<T>, usize) -> Result<Vec<T>> + Sync,
{
    fn fit_predict(&self, train: &Dataset<T>, test: &Dataset<T>, fold: usize) -> Result<Vec<T>> {
        self(train, test, fold)
    }
}

/// Pooled k-fold mean squared prediction error.
pub fn compute_ospe<T: Real, F: Fitter<T> + ?Sized>(
    data: &Dataset<T>,
    fitter: &F,
    folds: &FoldAssignment,
) -> Result<T> {
    compute_ospe_with(data, fitter, folds, OspeLoss::Squared)
}

pub fn compute_ospe_with<T: Real, F: Fitter<T> + ?Sized>(
    data: &Dataset<T>,
    fitter: &F,
    folds: &FoldAssignment,
    loss: OspeLoss,
) -> Result<T> {
    if folds.n() != data.n() {
        return Err(Error::InvalidData(format!(
            "fold assignment covers {} rows, data has {}",
            folds.n(),
            data.n()
        )));
    }
    if loss == OspeLoss::Misclassification && data.kind() != ResponseKind::Binary {
        return Err(Error::InvalidConfig(
            "misclassification loss needs a binary response".into(),
        ));
    }
    let per_fold: Vec<Result<T>> = (0..folds.k)
        .into_par_iter()
        .map(|k| {
            let test_idx = folds.test_indices(k);
            if test_idx.is_empty() {
                return Ok(T::zero());
            }
            let train = data.subset(&folds.train_indices(k));
            let test = data.subset(&test_idx);
            let pred = fitter.fit_predict(&train, &test, k)?;
            if pred.len() != test.n() {
                return Err(Error::InvalidData(format!(
                    "fold {k}: {} predictions for {} held-out rows",
                    pred.len(),
                    test.n()
                )));
            }
            Ok(test
                .y()
                .iter()
                .zip(&pred)
                .map(|(&y, &p)| match loss {
                    OspeLoss::Squared => (y - p) * (y - p),
                    OspeLoss::Misclassification => {
                        let class = if p > T::lit(0.5) { T::one() } else { T::zero() };
                        if class == y { T::zero() } else { T::one() }
                    }
                })
                .sum())
        })
        .collect();
    let mut total = T::zero();
    for r in per_fold {
        total = total + r?;
    }
    Ok(total / T::lit(data.n() as f64))
}

/// R_OSPE = OSPE_nonadditive / OSPE_additive; values above 1 favor the additive model.
pub fn r_ospe(ospe_nonadditive: f64, ospe_additive: f64) -> Result<f64> {
    if !(ospe_additive > 0.0) || !(ospe_nonadditive >= 0.0) {
        return Err(Error::InvalidData(format!(
            "OSPE ratio needs a positive denominator, got {ospe_nonadditive} / {ospe_additive}"
        )));
    }
    Ok(ospe_nonadditive / ospe_additive)
}

/// The additive alternative to a single forest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "snake_case")]
pub enum AdditiveForm {
    Split { split: CovariateSplit },
    Treatment { column: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OspeSettings {
    pub folds: usize,
    pub seed: u64,
    pub loss: OspeLoss,
}

impl Default for OspeSettings {
    fn default() -> Self {
        Self {
            folds: 5,
            seed: 0,
            loss: OspeLoss::Squared,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonConfig {
    pub nonadditive: BartConfig,
    pub additive: AdditiveConfig,
    pub ospe: Option<OspeSettings>,
}

impl ComparisonConfig {
    /// Applies the half-tree rule to the additive model and gives it its own seed.
    pub fn from_single(single: BartConfig) -> Self {
        let mut additive = AdditiveConfig::from_single(single.clone());
        additive.bart.seed = derive_seed(single.seed, 1);
        Self {
            nonadditive: single,
            additive,
            ospe: None,
        }
    }

    pub fn with_ospe(mut self, settings: OspeSettings) -> Self {
        self.ospe = Some(settings);
        self
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EffectSummary {
    pub mean: f64,
    pub lower: f64,
    pub upper: f64,
}

impl EffectSummary {
    /// Posterior mean with the central 95% interval.
    pub fn from_draws(draws: &[f64]) -> Option<Self> {
        if draws.is_empty() {
            return None;
        }
        let mut s = draws.to_vec();
        s.sort_by(|a, b| a.total_cmp(b));
        Some(Self {
            mean: s.iter().sum::<f64>() / s.len() as f64,
            lower: quantile_sorted(&s, 0.025),
            upper: quantile_sorted(&s, 0.975),
        })
    }
}

/// Linear-interpolation quantile of sorted data.
pub(crate) fn quantile_sorted(s: &[f64], q: f64) -> f64 {
    let h = (s.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    s[lo] + (h - lo as f64) * (s[hi] - s[lo])
}

/// Both LPMLs, the PsBF oriented nonadditive over additive, and optionally
/// the cross-validated pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub response: ResponseKind,
    pub n: usize,
    pub form: AdditiveForm,
    pub draws: usize,
    pub lpml_nonadditive: f64,
    pub lpml_additive: f64,
    pub psbf: f64,
    pub log10_psbf: f64,
    pub verdict: Verdict,
    pub ospe_nonadditive: Option<f64>,
    pub ospe_additive: Option<f64>,
    pub r_ospe: Option<f64>,
    /// β summary for treatment forms.
    pub treatment_effect: Option<EffectSummary>,
    pub config: ComparisonConfig,
}

impl ComparisonReport {
    /// Which model the PsBF points to, if any.
    pub fn favored(&self) -> Option<&'static str> {
        match self.verdict.favors {
            Favors::First => Some("nonadditive"),
            Favors::Second => Some("additive"),
            Favors::Neither => None,
        }
    }
}

fn single_columns<T: Real>(data: &Dataset<T>, form: &AdditiveForm) -> Vec<usize> {
    match form {
        AdditiveForm::Split { split } => split.union(),
        AdditiveForm::Treatment { .. } => (0..data.p()).collect(),
    }
}

/// The nonadditive comparator: one forest over the covariates the additive model uses.
pub fn fit_nonadditive<T: Real>(
    data: &Dataset<T>,
    form: &AdditiveForm,
    test: Option<&Dataset<T>>,
    config: &BartConfig,
) -> Result<ModelFit<T>> {
    let spec = ModelSpec::Single {
        columns: single_columns(data, form),
    };
    run_chain(data, test, spec, config.trees, config)
}

pub fn fit_additive<T: Real>(
    data: &Dataset<T>,
    form: &AdditiveForm,
    test: Option<&Dataset<T>>,
    config: &AdditiveConfig,
) -> Result<ModelFit<T>> {
    match (form, data.kind()) {
        (AdditiveForm::Split { split }, ResponseKind::Continuous) => {
            fit_two_bart_with_test(data, split, test, config)
        }
        (AdditiveForm::Split { split }, ResponseKind::Binary) => {
            fit_two_bart_binary_with_test(data, split, test, config)
        }
        (AdditiveForm::Treatment { column }, ResponseKind::Continuous) => {
            fit_treatment_bart_with_test(data, *column, test, config)
        }
        (AdditiveForm::Treatment { column }, ResponseKind::Binary) => {
            fit_treatment_bart_binary_with_test(data, *column, test, config)
        }
    }
}

/// Fits the single forest and its additive counterpart on the same data and
/// compares them by LPML (and by k-fold OSPE when configured).
pub fn compare_additivity<T: Real>(
    data: &Dataset<T>,
    form: &AdditiveForm,
    config: &ComparisonConfig,
) -> Result<ComparisonReport> {
    if config.nonadditive.draws != config.additive.bart.draws {
        return Err(Error::InvalidConfig(format!(
            "both models must keep the same number of draws ({} vs {})",
            config.nonadditive.draws, config.additive.bart.draws
        )));
    }
    let single = fit_nonadditive(data, form, None, &config.nonadditive)?;
    let additive = fit_additive(data, form, None, &config.additive)?;
    let lpml_nonadditive = fit_lpml(&single)?.as_f64();
    let lpml_additive = fit_lpml(&additive)?.as_f64();
    let verdict = psbf_verdict(lpml_nonadditive, lpml_additive);
    let beta: Vec<f64> = additive.beta.iter().map(|b| b.as_f64()).collect();

    let (ospe_nonadditive, ospe_additive, r) = match &config.ospe {
        None => (None, None, None),
        Some(settings) => {
            let folds = make_folds(data.n(), settings.folds, settings.seed)?;
            let (a, b) = ospe_pair(data, form, config, &folds, settings.loss)?;
            (Some(a), Some(b), Some(r_ospe(a, b)?))
        }
    };

    Ok(ComparisonReport {
        response: data.kind(),
        n: data.n(),
        form: form.clone(),
        draws: single.n_draws(),
        lpml_nonadditive,
        lpml_additive,
        psbf: verdict.psbf,
        log10_psbf: verdict.log10_psbf,
        verdict,
        ospe_nonadditive,
        ospe_additive,
        r_ospe: r,
        treatment_effect: EffectSummary::from_draws(&beta),
        config: config.clone(),
    })
}

/// OSPE of the nonadditive and additive models over the same folds. Each fold
/// fit gets a seed derived from the model's seed and the fold index.
pub fn ospe_pair<T: Real>(
    data: &Dataset<T>,
    form: &AdditiveForm,
    config: &ComparisonConfig,
    folds: &FoldAssignment,
    loss: OspeLoss,
) -> Result<(f64, f64)> {
    let single = |train: &Dataset<T>, test: &Dataset<T>, k: usize| -> Result<Vec<T>> {
        let mut c = config.nonadditive.clone();
        c.seed = derive_seed(c.seed, 100 + k as u64);
        c.keep_trees = false;
        Ok(fit_nonadditive(train, form, Some(test), &c)?.test_prediction())
    };
    let additive = |train: &Dataset<T>, test: &Dataset<T>, k: usize| -> Result<Vec<T>> {
        let mut c = config.additive.clone();
        c.bart.seed = derive_seed(c.bart.seed, 100 + k as u64);
        c.bart.keep_trees = false;
        Ok(fit_additive(train, form, Some(test), &c)?.test_prediction())
    };
    let a = compute_ospe_with(data, &single, folds, loss)?.as_f64();
    let b = compute_ospe_with(data, &additive, folds, loss)?.as_f64();
    Ok((a, b))
}
