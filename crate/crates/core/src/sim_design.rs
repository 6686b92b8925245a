//! Simulation designs calibrated by variance ratios: scenario registry,
//! Monte Carlo moments, coefficient solvers, data generation and the
//! replication study driver.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::comparison::{compare_additivity, AdditiveForm, ComparisonConfig, OspeSettings};
use crate::data::{CovariateSplit, Dataset, ResponseKind};
use crate::error::{Error, Result};
use crate::rng::{self, derive_seed};
use crate::scalar::logistic_cdf;

/// Total linear-predictor variance targeted by the binary designs (1.5²).
pub const BINARY_NU: f64 = 2.25;
pub const DEFAULT_MC_SIZE: usize = 1_000_000;
const MC_BLOCK: usize = 1 << 16;
const TOLERANCE: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ScenarioId {
    SC1,
    SC2,
    SC3,
    SC4,
}

impl ScenarioId {
    pub const ALL: [ScenarioId; 4] = [ScenarioId::SC1, ScenarioId::SC2, ScenarioId::SC3, ScenarioId::SC4];

    fn index(self) -> u64 {
        self as u64
    }
}

impl fmt::Display for ScenarioId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

impl FromStr for ScenarioId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "SC1" | "1" => Ok(ScenarioId::SC1),
            "SC2" | "2" => Ok(ScenarioId::SC2),
            "SC3" | "3" => Ok(ScenarioId::SC3),
            "SC4" | "4" => Ok(ScenarioId::SC4),
            other => Err(Error::InvalidConfig(format!("unknown scenario `{other}`"))),
        }
    }
}

/// Response type and the form of the X⁺ part of a design.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    /// f(X⁺) = (X₆ + X₇)², continuous response.
    Continuous,
    Binary,
    /// f(A) = A with A ~ Bernoulli(0.5), continuous response.
    ContinuousTreatment,
    BinaryTreatment,
}

impl Family {
    pub const ALL: [Family; 4] = [
        Family::Continuous,
        Family::Binary,
        Family::ContinuousTreatment,
        Family::BinaryTreatment,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Family::Continuous => "continuous",
            Family::Binary => "binary",
            Family::ContinuousTreatment => "continuous-treatment",
            Family::BinaryTreatment => "binary-treatment",
        }
    }

    pub fn is_binary(self) -> bool {
        matches!(self, Family::Binary | Family::BinaryTreatment)
    }

    pub fn is_treatment(self) -> bool {
        matches!(self, Family::ContinuousTreatment | Family::BinaryTreatment)
    }

    pub fn response(self) -> ResponseKind {
        if self.is_binary() {
            ResponseKind::Binary
        } else {
            ResponseKind::Continuous
        }
    }

    fn index(self) -> u64 {
        self as u64
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Family::ALL
            .into_iter()
            .find(|f| f.as_str() == s.trim().to_ascii_lowercase())
            .ok_or_else(|| Error::InvalidConfig(format!("unknown design family `{s}`")))
    }
}

/// Distribution of each X⁻ component (independent, identically distributed).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "snake_case")]
pub enum CovariateLaw {
    StandardNormal,
    Uniform { lo: f64, hi: f64 },
}

impl CovariateLaw {
    fn draw<R: Rng + ?Sized>(self, rng: &mut R) -> f64 {
        match self {
            CovariateLaw::StandardNormal => rng::std_normal(rng),
            CovariateLaw::Uniform { lo, hi } => lo + (hi - lo) * rng::uniform(rng),
        }
    }
}

/// One row of the scenario table: g and h act on X⁻, f on X⁺.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub id: ScenarioId,
    /// X⁺ is the binary treatment A rather than (X₆, X₇).
    pub treatment: bool,
    pub n_minus: usize,
    pub law: CovariateLaw,
}

impl Scenario {
    pub fn new(id: ScenarioId, treatment: bool) -> Self {
        let (n_minus, law) = match id {
            ScenarioId::SC1 | ScenarioId::SC3 => (3, CovariateLaw::StandardNormal),
            ScenarioId::SC2 => (2, CovariateLaw::Uniform { lo: -3.0, hi: 3.0 }),
            ScenarioId::SC4 => (5, CovariateLaw::Uniform { lo: 0.0, hi: 1.0 }),
        };
        Self {
            id,
            treatment,
            n_minus,
            law,
        }
    }

    pub fn n_plus(&self) -> usize {
        if self.treatment { 1 } else { 2 }
    }

    pub fn g(&self, x: &[f64]) -> f64 {
        match self.id {
            ScenarioId::SC1 => 3.0 + 3.0 * x[0] - 3.0 * x[1] - 2.0 * x[2],
            ScenarioId::SC2 => 2.0 - 3.0 * x[0] * x[0] - 3.0 * x[1] * x[1] + 3.0 * x[0] * x[1],
            ScenarioId::SC3 => 3.5 - x[0] + x[1] + 2.0 * indicator(x[2] < 1.0),
            ScenarioId::SC4 => {
                10.0 * (std::f64::consts::PI * x[0] * x[1]).sin()
                    + 20.0 * (x[2] - 0.5).powi(2)
                    + 10.0 * x[3]
                    + 5.0 * x[4]
            }
        }
    }

    pub fn h(&self, x: &[f64]) -> f64 {
        match self.id {
            ScenarioId::SC1 => -2.0 * x[0] - 7.0 * x[1] - x[2] + 3.0 * x[1] * x[2],
            ScenarioId::SC2 => -x[0] + x[1] - 2.5 * x[0] * x[1],
            ScenarioId::SC3 => x[0] - 0.5 * x[1] - 3.0 * indicator(x[2] < 1.0),
            ScenarioId::SC4 => 2.3 * x[0] - 3.0 * x[1] * x[3],
        }
    }

    pub fn f(&self, x_plus: &[f64]) -> f64 {
        if self.treatment {
            x_plus[0]
        } else {
            (x_plus[0] + x_plus[1]).powi(2)
        }
    }

    /// Fills one covariate draw: X⁻ components first, then X⁺.
    pub fn draw_covariates<R: Rng + ?Sized>(&self, x_minus: &mut [f64], x_plus: &mut [f64], rng: &mut R) {
        for v in x_minus.iter_mut() {
            *v = self.law.draw(rng);
        }
        if self.treatment {
            x_plus[0] = indicator(rng::uniform(rng) < 0.5);
        } else {
            for v in x_plus.iter_mut() {
                *v = rng::std_normal(rng);
            }
        }
    }

    pub fn column_names(&self) -> Vec<String> {
        let mut names: Vec<String> = (1..=self.n_minus).map(|j| format!("x{j}")).collect();
        if self.treatment {
            names.push("trt".into());
        } else {
            names.push("x6".into());
            names.push("x7".into());
        }
        names
    }

    /// The additive form matching the generated column layout.
    pub fn additive_form(&self) -> AdditiveForm {
        if self.treatment {
            AdditiveForm::Treatment {
                column: self.n_minus,
            }
        } else {
            AdditiveForm::Split {
                split: CovariateSplit {
                    minus: (0..self.n_minus).collect(),
                    plus: (self.n_minus..self.n_minus + 2).collect(),
                },
            }
        }
    }
}

#[inline]
fn indicator(b: bool) -> f64 {
    if b { 1.0 } else { 0.0 }
}

/// Target variance ratios.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DesignTargets {
    /// Noise fraction of var(Y) (continuous designs).
    pub alpha: f64,
    /// Fraction of the non-noise variance attributable to X⁺.
    pub delta: f64,
    /// Fraction of the non-noise variance due to the interaction term.
    pub gamma: f64,
    /// Linear-predictor variance (binary designs).
    pub nu: f64,
}

impl DesignTargets {
    pub fn continuous(alpha: f64, delta: f64, gamma: f64) -> Self {
        Self {
            alpha,
            delta,
            gamma,
            nu: BINARY_NU,
        }
    }

    pub fn binary(delta: f64, gamma: f64) -> Self {
        Self {
            alpha: 0.2,
            delta,
            gamma,
            nu: BINARY_NU,
        }
    }

    fn validate(&self, binary: bool) -> Result<()> {
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::InfeasibleDesign(format!(
                "delta must lie in (0, 1), got {}",
                self.delta
            )));
        }
        if !(self.gamma >= 0.0 && self.gamma <= self.delta) {
            return Err(Error::InfeasibleDesign(format!(
                "need 0 <= gamma <= delta, got gamma = {} with delta = {}",
                self.gamma, self.delta
            )));
        }
        if binary {
            if !(self.nu > 0.0) {
                return Err(Error::InfeasibleDesign(format!("nu must be positive, got {}", self.nu)));
            }
        } else if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::InfeasibleDesign(format!(
                "alpha must lie in (0, 1), got {}",
                self.alpha
            )));
        }
        Ok(())
    }
}

/// Non-noise variance implied by noise fraction α at noise sd σ: σ²(1 − α)/α.
pub fn non_noise_variance(alpha: f64, sigma: f64) -> f64 {
    sigma * sigma * (1.0 - alpha) / alpha
}

/// Monte Carlo moments of the design functions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentSet {
    pub scenario: ScenarioId,
    pub treatment: bool,
    /// f and h centered at their means before forming the product f·h.
    pub centered: bool,
    pub v_g: f64,
    pub v_f: f64,
    pub v_fh: f64,
    pub c_g_fh: f64,
    pub c_f_fh: f64,
    pub mean_g: f64,
    pub mean_f: f64,
    pub mean_h: f64,
    pub mc_sample_size: usize,
    pub seed: u64,
}

impl MomentSet {
    pub fn scenario(&self) -> Scenario {
        Scenario::new(self.scenario, self.treatment)
    }
}

#[derive(Clone, Copy, Default)]
struct Sums {
    n: f64,
    g: f64,
    f: f64,
    h: f64,
    p: f64,
    gg: f64,
    ff: f64,
    pp: f64,
    gp: f64,
    fp: f64,
}

impl Sums {
    fn add(mut self, o: Sums) -> Sums {
        self.n += o.n;
        self.g += o.g;
        self.f += o.f;
        self.h += o.h;
        self.p += o.p;
        self.gg += o.gg;
        self.ff += o.ff;
        self.pp += o.pp;
        self.gp += o.gp;
        self.fp += o.fp;
        self
    }
}

/// Sums over one block of covariate draws, shifted by `center` = (g, f, h, p)
/// and with p = (f − c_f)(h − c_h) when `centered` else f·h.
fn block_sums(sc: &Scenario, seed: u64, block: usize, len: usize, center: [f64; 4], centered: bool) -> Sums {
    let mut r = rng::seeded(derive_seed(seed, block as u64));
    let mut xm = vec![0.0; sc.n_minus];
    let mut xp = vec![0.0; sc.n_plus()];
    let mut s = Sums::default();
    for _ in 0..len {
        sc.draw_covariates(&mut xm, &mut xp, &mut r);
        let g = sc.g(&xm);
        let f = sc.f(&xp);
        let h = sc.h(&xm);
        let p = if centered { (f - center[1]) * (h - center[2]) } else { f * h };
        let (dg, df, dh, dp) = (g - center[0], f - center[1], h - center[2], p - center[3]);
        s.n += 1.0;
        s.g += dg;
        s.f += df;
        s.h += dh;
        s.p += dp;
        s.gg += dg * dg;
        s.ff += df * df;
        s.pp += dp * dp;
        s.gp += dg * dp;
        s.fp += df * dp;
    }
    s
}

fn mc_sums(sc: &Scenario, n_mc: usize, seed: u64, center: [f64; 4], centered: bool) -> Sums {
    let blocks = n_mc.div_ceil(MC_BLOCK);
    let parts: Vec<Sums> = (0..blocks)
        .into_par_iter()
        .map(|b| {
            let len = MC_BLOCK.min(n_mc - b * MC_BLOCK);
            block_sums(sc, seed, b, len, center, centered)
        })
        .collect();
    parts.into_iter().fold(Sums::default(), Sums::add)
}

/// Estimates the moments from `n_mc` independent covariate draws. Blocks of
/// draws use seeds derived from `seed`, so results do not depend on threading.
pub fn estimate_moments(scenario: &Scenario, n_mc: usize, seed: u64, centered: bool) -> Result<MomentSet> {
    if n_mc < 2 {
        return Err(Error::InvalidConfig("need at least two Monte Carlo draws".into()));
    }
    let first = mc_sums(scenario, n_mc, seed, [0.0; 4], false);
    let n = first.n;
    let (mg, mf, mh) = (first.g / n, first.f / n, first.h / n);
    let mp = if centered { 0.0 } else { first.p / n };
    let s = mc_sums(scenario, n_mc, seed, [mg, mf, mh, mp], centered);
    let cov = |xy: f64, x: f64, y: f64| (xy - x * y / n) / (n - 1.0);
    Ok(MomentSet {
        scenario: scenario.id,
        treatment: scenario.treatment,
        centered,
        v_g: cov(s.gg, s.g, s.g),
        v_f: cov(s.ff, s.f, s.f),
        v_fh: cov(s.pp, s.p, s.p),
        c_g_fh: cov(s.gp, s.g, s.p),
        c_f_fh: cov(s.fp, s.f, s.p),
        mean_g: mg,
        mean_f: mf,
        mean_h: mh,
        mc_sample_size: n_mc,
        seed,
    })
}

/// Ratios implied by a solution under the moment set.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AchievedRatios {
    pub alpha: Option<f64>,
    pub delta: f64,
    pub gamma: f64,
    /// Variance of the non-noise part (the linear predictor for binary designs).
    pub total_variance: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DesignSolution {
    pub family: Family,
    pub targets: DesignTargets,
    /// Noise sd (continuous designs).
    pub sigma: Option<f64>,
    /// Scale on g (binary designs).
    pub beta0: Option<f64>,
    pub beta1: f64,
    pub c: f64,
    pub beta2: f64,
    /// Echo of the linear-predictor variance target (binary designs).
    pub nu: Option<f64>,
    pub achieved: AchievedRatios,
    pub moments: MomentSet,
}

impl DesignSolution {
    pub fn scenario(&self) -> Scenario {
        self.moments.scenario()
    }
}

fn require_moments(m: &MomentSet, gamma: f64) -> Result<()> {
    if !(m.v_f > 0.0) {
        return Err(Error::InfeasibleDesign("var(f) is zero".into()));
    }
    if gamma > 0.0 && !(m.v_fh > 0.0) {
        return Err(Error::InfeasibleDesign("var(f·h) is zero but gamma > 0".into()));
    }
    if !(m.v_g > 0.0) {
        return Err(Error::InfeasibleDesign("var(g) is zero".into()));
    }
    Ok(())
}

/// Positive root of a x² + b x + c = 0 nearest `near`.
fn positive_root(a: f64, b: f64, c: f64, near: f64, what: &str) -> Result<f64> {
    let disc = b * b - 4.0 * a * c;
    if disc < 0.0 {
        return Err(Error::InfeasibleDesign(format!(
            "no real solution for {what} (discriminant {disc:.3e})"
        )));
    }
    let sq = disc.sqrt();
    // numerically stable pair of roots
    let q = -0.5 * (b + b.signum() * sq);
    let roots = if q == 0.0 { [0.0, 0.0] } else { [q / a, c / q] };
    roots
        .into_iter()
        .filter(|r| *r > 0.0 && r.is_finite())
        .min_by(|x, y| (x - near).abs().total_cmp(&(y - near).abs()))
        .ok_or_else(|| Error::InfeasibleDesign(format!("no positive solution for {what}")))
}

/// Non-noise parts of the variance under coefficients (b0 scales g).
fn expansion(m: &MomentSet, b0: f64, b1: f64, c: f64, b2: f64) -> (f64, f64, f64) {
    let plus = c * c * b1 * b1 * m.v_f + b2 * b2 * m.v_fh + 2.0 * c * b1 * b2 * m.c_f_fh;
    let total = b0 * b0 * m.v_g + plus + 2.0 * b0 * b2 * m.c_g_fh;
    (total, plus, b2 * b2 * m.v_fh)
}

fn check_achieved(targets: &DesignTargets, a: &AchievedRatios, binary: bool) -> Result<()> {
    let mut worst = (a.delta - targets.delta).abs().max((a.gamma - targets.gamma).abs());
    if let Some(al) = a.alpha {
        worst = worst.max((al - targets.alpha).abs());
    }
    if binary {
        worst = worst.max((a.total_variance - targets.nu).abs() / targets.nu);
    }
    if worst > TOLERANCE {
        return Err(Error::InfeasibleDesign(format!(
            "solution misses the targets by {worst:.2e}"
        )));
    }
    Ok(())
}

/// Solves Y = g + cβ₁f + β₂fh + σε for (σ, β₁, c, β₂).
///
/// β₁ is the coefficient that gives the X⁺ fraction δ in the additive model
/// (c = 1, β₂ = 0); β₂ and c then absorb the interaction at the same δ, and σ
/// is set so that noise is a fraction α of var(Y).
pub fn solve_continuous(targets: &DesignTargets, moments: &MomentSet) -> Result<DesignSolution> {
    targets.validate(false)?;
    require_moments(moments, targets.gamma)?;
    let m = moments;
    let (d, g) = (targets.delta, targets.gamma);
    let beta1 = (d * m.v_g / ((1.0 - d) * m.v_f)).sqrt();
    let beta2 = if g == 0.0 {
        0.0
    } else {
        positive_root(m.v_fh * (1.0 - d), -2.0 * g * m.c_g_fh, -g * m.v_g, 0.0, "beta2")?
    };
    let total = (m.v_g + 2.0 * beta2 * m.c_g_fh) / (1.0 - d);
    if !(total > 0.0) {
        return Err(Error::InfeasibleDesign("non-noise variance is not positive".into()));
    }
    let c = if g == 0.0 {
        1.0
    } else {
        let a = beta1 * beta1 * m.v_f;
        positive_root(
            a,
            2.0 * beta1 * beta2 * m.c_f_fh,
            beta2 * beta2 * m.v_fh - d * total,
            1.0,
            "c",
        )?
    };
    let sigma2 = targets.alpha * total / (1.0 - targets.alpha);
    let (t, plus, inter) = expansion(m, 1.0, beta1, c, beta2);
    let achieved = AchievedRatios {
        alpha: Some(sigma2 / (t + sigma2)),
        delta: plus / t,
        gamma: inter / t,
        total_variance: t,
    };
    check_achieved(targets, &achieved, false)?;
    Ok(DesignSolution {
        family: if m.treatment { Family::ContinuousTreatment } else { Family::Continuous },
        targets: *targets,
        sigma: Some(sigma2.sqrt()),
        beta0: None,
        beta1,
        c,
        beta2,
        nu: None,
        achieved,
        moments: moments.clone(),
    })
}

/// Solves l = β₀g + cβ₁f + β₂fh (centered functions) for (β₀, β₁, c, β₂) with
/// var(l) = ν, X⁺ fraction δ and interaction fraction γ.
pub fn solve_binary(targets: &DesignTargets, moments: &MomentSet) -> Result<DesignSolution> {
    targets.validate(true)?;
    if !moments.centered {
        return Err(Error::InvalidConfig(
            "binary designs need moments of the centered functions".into(),
        ));
    }
    require_moments(moments, targets.gamma)?;
    let m = moments;
    let (d, g, nu) = (targets.delta, targets.gamma, targets.nu);
    let beta1 = (d * nu / m.v_f).sqrt();
    let beta2 = (g * nu / m.v_fh.max(f64::MIN_POSITIVE)).sqrt();
    let beta2 = if g == 0.0 { 0.0 } else { beta2 };
    let c = if g == 0.0 {
        1.0
    } else {
        positive_root(
            beta1 * beta1 * m.v_f,
            2.0 * beta1 * beta2 * m.c_f_fh,
            beta2 * beta2 * m.v_fh - d * nu,
            1.0,
            "c",
        )?
    };
    let beta0 = positive_root(m.v_g, 2.0 * beta2 * m.c_g_fh, -(1.0 - d) * nu, 1.0, "beta0")?;
    let (t, plus, inter) = expansion(m, beta0, beta1, c, beta2);
    let achieved = AchievedRatios {
        alpha: None,
        delta: plus / t,
        gamma: inter / t,
        total_variance: t,
    };
    check_achieved(targets, &achieved, true)?;
    Ok(DesignSolution {
        family: if m.treatment { Family::BinaryTreatment } else { Family::Binary },
        targets: *targets,
        sigma: None,
        beta0: Some(beta0),
        beta1,
        c,
        beta2,
        nu: Some(nu),
        achieved,
        moments: moments.clone(),
    })
}

/// Moments and solution for one scenario/family/targets cell.
pub fn solve_design(
    id: ScenarioId,
    family: Family,
    targets: &DesignTargets,
    n_mc: usize,
    seed: u64,
) -> Result<DesignSolution> {
    let sc = Scenario::new(id, family.is_treatment());
    let m = estimate_moments(&sc, n_mc, seed, family.is_binary())?;
    if family.is_binary() {
        solve_binary(targets, &m)
    } else {
        solve_continuous(targets, &m)
    }
}

/// Covariates plus the additive pieces of one generated sample.
#[derive(Clone, Debug, PartialEq)]
pub struct DesignSample {
    /// Column-major covariates, X⁻ then X⁺.
    pub columns: Vec<Vec<f64>>,
    /// g part (β₀ g for binary designs).
    pub g_part: Vec<f64>,
    /// cβ₁f + β₂fh
    pub plus_part: Vec<f64>,
    /// β₂fh
    pub interaction: Vec<f64>,
    /// Noise (continuous designs; zeros for binary).
    pub noise: Vec<f64>,
    pub y: Vec<f64>,
}

impl DesignSample {
    pub fn linear_predictor(&self) -> Vec<f64> {
        self.g_part.iter().zip(&self.plus_part).map(|(a, b)| a + b).collect()
    }

    /// Empirical (α, δ, γ, var of the non-noise part).
    pub fn empirical_ratios(&self) -> AchievedRatios {
        let l = self.linear_predictor();
        let vl = variance(&l);
        let vn = variance(&self.noise);
        let y_non_binary: Vec<f64> = l.iter().zip(&self.noise).map(|(a, b)| a + b).collect();
        AchievedRatios {
            alpha: (vn > 0.0).then(|| vn / variance(&y_non_binary)),
            delta: variance(&self.plus_part) / vl,
            gamma: variance(&self.interaction) / vl,
            total_variance: vl,
        }
    }
}

fn variance(x: &[f64]) -> f64 {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n - 1.0)
}

/// Draws `n` observations from a solved design.
///
/// Binary designs center g, f and h by their sample means before forming the
/// linear predictor.
pub fn generate_sample(solution: &DesignSolution, n: usize, seed: u64) -> DesignSample {
    let sc = solution.scenario();
    let binary = solution.family.is_binary();
    let mut r = rng::seeded(seed);
    let p = sc.n_minus + sc.n_plus();
    let mut columns = vec![Vec::with_capacity(n); p];
    let (mut gs, mut fs, mut hs) = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
    let mut xm = vec![0.0; sc.n_minus];
    let mut xp = vec![0.0; sc.n_plus()];
    for _ in 0..n {
        sc.draw_covariates(&mut xm, &mut xp, &mut r);
        for (j, &v) in xm.iter().chain(&xp).enumerate() {
            columns[j].push(v);
        }
        gs.push(sc.g(&xm));
        fs.push(sc.f(&xp));
        hs.push(sc.h(&xm));
    }
    if binary {
        for v in [&mut gs, &mut fs, &mut hs] {
            let m = v.iter().sum::<f64>() / n.max(1) as f64;
            v.iter_mut().for_each(|x| *x -= m);
        }
    }
    let b0 = solution.beta0.unwrap_or(1.0);
    let (b1, c, b2) = (solution.beta1, solution.c, solution.beta2);
    let g_part: Vec<f64> = gs.iter().map(|g| b0 * g).collect();
    let interaction: Vec<f64> = fs.iter().zip(&hs).map(|(f, h)| b2 * f * h).collect();
    let plus_part: Vec<f64> = fs.iter().zip(&interaction).map(|(f, i)| c * b1 * f + i).collect();
    let mut noise = vec![0.0; n];
    let mut y = Vec::with_capacity(n);
    for i in 0..n {
        let l = g_part[i] + plus_part[i];
        if binary {
            let u = rng::uniform(&mut r);
            y.push(indicator(u < logistic_cdf(l)));
        } else {
            noise[i] = solution.sigma.unwrap_or(1.0) * rng::std_normal(&mut r);
            y.push(l + noise[i]);
        }
    }
    DesignSample {
        columns,
        g_part,
        plus_part,
        interaction,
        noise,
        y,
    }
}

/// A dataset drawn from a solved design, response named `y`.
pub fn generate_dataset(solution: &DesignSolution, n: usize, seed: u64) -> Result<Dataset<f64>> {
    let s = generate_sample(solution, n, seed);
    Dataset::new(
        s.y,
        s.columns,
        solution.scenario().column_names(),
        "y",
        solution.family.response(),
    )
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    Correct,
    Indifferent,
    Incorrect,
}

impl Decision {
    pub fn as_str(self) -> &'static str {
        match self {
            Decision::Correct => "correct",
            Decision::Indifferent => "indifferent",
            Decision::Incorrect => "incorrect",
        }
    }

    /// Classifies a correctly oriented log₁₀ PsBF at ±log₁₀ 3.
    pub fn from_log10_psbf(oriented: f64) -> Self {
        let t = 3f64.log10();
        if oriented > t {
            Decision::Correct
        } else if oriented < -t {
            Decision::Incorrect
        } else {
            Decision::Indifferent
        }
    }
}

/// The grid of cells and the settings shared by every replicate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudyPlan {
    pub scenarios: Vec<ScenarioId>,
    pub families: Vec<Family>,
    pub gammas: Vec<f64>,
    pub sizes: Vec<usize>,
    pub replicates: usize,
    pub alpha: f64,
    pub delta: f64,
    pub nu: f64,
    pub n_mc: usize,
    pub seed: u64,
    /// Per-replicate seeds replace the seeds in this template.
    pub comparison: ComparisonConfig,
    pub ospe_folds: Option<usize>,
}

impl StudyPlan {
    pub fn new(comparison: ComparisonConfig) -> Self {
        Self {
            scenarios: vec![ScenarioId::SC1],
            families: vec![Family::Continuous],
            gammas: vec![0.0, 0.25, 0.44],
            sizes: vec![500],
            replicates: 20,
            alpha: 0.2,
            delta: 0.45,
            nu: BINARY_NU,
            n_mc: DEFAULT_MC_SIZE,
            seed: 0,
            comparison,
            ospe_folds: None,
        }
    }

    fn targets(&self, family: Family, gamma: f64) -> DesignTargets {
        DesignTargets {
            alpha: self.alpha,
            delta: self.delta,
            gamma,
            nu: if family.is_binary() { self.nu } else { BINARY_NU },
        }
    }
}

/// One replicate of one cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplicateRow {
    pub scenario: ScenarioId,
    pub kind: Family,
    pub n: usize,
    pub gamma: f64,
    pub replicate: usize,
    pub lpml_add: f64,
    pub lpml_nonadd: f64,
    /// Positive when the PsBF points to the generating model.
    pub log10_psbf_correct_oriented: f64,
    pub r_ospe: Option<f64>,
    pub decision: Decision,
}

impl ReplicateRow {
    /// Whether R_OSPE points to the generating model (nonadditive when γ > 0).
    pub fn ospe_correct(&self) -> Option<bool> {
        self.r_ospe
            .map(|r| if self.gamma > 0.0 { r < 1.0 } else { r > 1.0 })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellFailure {
    pub scenario: ScenarioId,
    pub kind: Family,
    pub gamma: f64,
    pub n: Option<usize>,
    pub replicate: Option<usize>,
    pub message: String,
}

impl fmt::Display for CellFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {} gamma={}", self.scenario, self.kind, self.gamma)?;
        if let Some(n) = self.n {
            write!(f, " n={n}")?;
        }
        if let Some(r) = self.replicate {
            write!(f, " replicate={r}")?;
        }
        write!(f, ": {}", self.message)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudyResult {
    pub rows: Vec<ReplicateRow>,
    pub failures: Vec<CellFailure>,
    pub solutions: Vec<DesignSolution>,
}

fn cell_key(sc: ScenarioId, fam: Family, gi: usize, ni: usize, rep: usize) -> u64 {
    (((sc.index() * 8 + fam.index()) * 256 + gi as u64) * 256 + ni as u64) * (1 << 24) + rep as u64
}

/// Runs every replicate of every cell. Designs that cannot be solved are
/// reported in `failures` and the remaining cells still run.
pub fn run_replication_study(plan: &StudyPlan) -> Result<StudyResult> {
    if plan.replicates == 0 {
        return Err(Error::InvalidConfig("need at least one replicate".into()));
    }
    let mut failures = Vec::new();
    let mut solutions = Vec::new();
    let mut tasks = Vec::new();
    for &sc in &plan.scenarios {
        for &fam in &plan.families {
            let moment_seed = derive_seed(plan.seed, 1_000_000 + sc.index() * 8 + fam.index());
            let scenario = Scenario::new(sc, fam.is_treatment());
            let moments = match estimate_moments(&scenario, plan.n_mc, moment_seed, fam.is_binary()) {
                Ok(m) => m,
                Err(e) => {
                    for &gamma in &plan.gammas {
                        failures.push(CellFailure {
                            scenario: sc,
                            kind: fam,
                            gamma,
                            n: None,
                            replicate: None,
                            message: e.to_string(),
                        });
                    }
                    continue;
                }
            };
            for (gi, &gamma) in plan.gammas.iter().enumerate() {
                let targets = plan.targets(fam, gamma);
                let solved = if fam.is_binary() {
                    solve_binary(&targets, &moments)
                } else {
                    solve_continuous(&targets, &moments)
                };
                match solved {
                    Ok(sol) => {
                        let s = solutions.len();
                        solutions.push(sol);
                        for (ni, &n) in plan.sizes.iter().enumerate() {
                            for rep in 0..plan.replicates {
                                tasks.push((s, sc, fam, gamma, n, rep, cell_key(sc, fam, gi, ni, rep)));
                            }
                        }
                    }
                    Err(e) => failures.push(CellFailure {
                        scenario: sc,
                        kind: fam,
                        gamma,
                        n: None,
                        replicate: None,
                        message: e.to_string(),
                    }),
                }
            }
        }
    }

    let outcomes: Vec<std::result::Result<ReplicateRow, CellFailure>> = tasks
        .par_iter()
        .map(|&(s, sc, fam, gamma, n, rep, key)| {
            let sol = &solutions[s];
            let data_seed = derive_seed(plan.seed, key);
            let fail = |e: Error| CellFailure {
                scenario: sc,
                kind: fam,
                gamma,
                n: Some(n),
                replicate: Some(rep),
                message: e.to_string(),
            };
            let data = generate_dataset(sol, n, data_seed).map_err(fail)?;
            let mut cfg = plan.comparison.clone();
            cfg.nonadditive.seed = derive_seed(data_seed, 1);
            cfg.additive.bart.seed = derive_seed(data_seed, 2);
            if let Some(k) = plan.ospe_folds {
                cfg.ospe = Some(OspeSettings {
                    folds: k,
                    seed: derive_seed(data_seed, 3),
                    ..cfg.ospe.clone().unwrap_or_default()
                });
            }
            let report = compare_additivity(&data, &sol.scenario().additive_form(), &cfg).map_err(fail)?;
            let oriented = if gamma > 0.0 { report.log10_psbf } else { -report.log10_psbf };
            Ok(ReplicateRow {
                scenario: sc,
                kind: fam,
                n,
                gamma,
                replicate: rep + 1,
                lpml_add: report.lpml_additive,
                lpml_nonadd: report.lpml_nonadditive,
                log10_psbf_correct_oriented: oriented,
                r_ospe: report.r_ospe,
                decision: Decision::from_log10_psbf(oriented),
            })
        })
        .collect();

    let mut rows = Vec::with_capacity(outcomes.len());
    for o in outcomes {
        match o {
            Ok(r) => rows.push(r),
            Err(f) => failures.push(f),
        }
    }
    Ok(StudyResult {
        rows,
        failures,
        solutions,
    })
}

/// Replicate-level table, one line per replicate.
pub fn write_rows_csv<W: Write>(rows: &[ReplicateRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "scenario",
        "kind",
        "n",
        "gamma",
        "replicate",
        "lpml_add",
        "lpml_nonadd",
        "log10_psbf_correct_oriented",
        "r_ospe",
        "decision",
    ])?;
    for r in rows {
        w.write_record([
            r.scenario.to_string(),
            r.kind.to_string(),
            r.n.to_string(),
            r.gamma.to_string(),
            r.replicate.to_string(),
            r.lpml_add.to_string(),
            r.lpml_nonadd.to_string(),
            r.log10_psbf_correct_oriented.to_string(),
            r.r_ospe.map(|v| v.to_string()).unwrap_or_default(),
            r.decision.as_str().to_string(),
        ])?;
    }
    w.flush().map_err(|source| Error::Io {
        path: "<replicates>".into(),
        source,
    })?;
    Ok(())
}

/// Decision proportions for one cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub scenario: ScenarioId,
    pub kind: Family,
    pub n: usize,
    pub gamma: f64,
    pub replicates: usize,
    pub median_log10_psbf: f64,
    pub p_correct_psbf: f64,
    pub p_indiff_psbf: f64,
    pub p_incorrect_psbf: f64,
    pub p_correct_ospe: Option<f64>,
    pub p_incorrect_ospe: Option<f64>,
}

pub fn median(values: &[f64]) -> f64 {
    let mut s = values.to_vec();
    s.sort_by(|a, b| a.total_cmp(b));
    crate::comparison::quantile_sorted(&s, 0.5)
}

/// Groups rows by (scenario, kind, n, gamma) in first-appearance order.
pub fn summarize(rows: &[ReplicateRow]) -> Vec<CellSummary> {
    let mut keys: Vec<(ScenarioId, Family, usize, f64)> = Vec::new();
    for r in rows {
        let k = (r.scenario, r.kind, r.n, r.gamma);
        if !keys.contains(&k) {
            keys.push(k);
        }
    }
    keys.into_iter()
        .map(|(scenario, kind, n, gamma)| {
            let cell: Vec<&ReplicateRow> = rows
                .iter()
                .filter(|r| (r.scenario, r.kind, r.n, r.gamma) == (scenario, kind, n, gamma))
                .collect();
            let m = cell.len() as f64;
            let frac = |d: Decision| cell.iter().filter(|r| r.decision == d).count() as f64 / m;
            let ospe: Vec<bool> = cell.iter().filter_map(|r| r.ospe_correct()).collect();
            let p_ospe = (!ospe.is_empty())
                .then(|| ospe.iter().filter(|&&b| b).count() as f64 / ospe.len() as f64);
            let logs: Vec<f64> = cell.iter().map(|r| r.log10_psbf_correct_oriented).collect();
            CellSummary {
                scenario,
                kind,
                n,
                gamma,
                replicates: cell.len(),
                median_log10_psbf: median(&logs),
                p_correct_psbf: frac(Decision::Correct),
                p_indiff_psbf: frac(Decision::Indifferent),
                p_incorrect_psbf: frac(Decision::Incorrect),
                p_correct_ospe: p_ospe,
                p_incorrect_ospe: p_ospe.map(|p| 1.0 - p),
            }
        })
        .collect()
}

pub fn write_summary_csv<W: Write>(cells: &[CellSummary], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "scenario",
        "kind",
        "n",
        "gamma",
        "replicates",
        "median_log10_psbf",
        "p_correct_psbf",
        "p_indiff_psbf",
        "p_incorrect_psbf",
        "p_correct_ospe",
        "p_incorrect_ospe",
    ])?;
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for c in cells {
        w.write_record([
            c.scenario.to_string(),
            c.kind.to_string(),
            c.n.to_string(),
            c.gamma.to_string(),
            c.replicates.to_string(),
            c.median_log10_psbf.to_string(),
            c.p_correct_psbf.to_string(),
            c.p_indiff_psbf.to_string(),
            c.p_incorrect_psbf.to_string(),
            opt(c.p_correct_ospe),
            opt(c.p_incorrect_ospe),
        ])?;
    }
    w.flush().map_err(|source| Error::Io {
        path: "<summary>".into(),
        source,
    })?;
    Ok(())
}
