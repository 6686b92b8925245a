//! Logistic regression by scale-mixture data augmentation: z_i = f(x_i) + ε_i with
//! ε_i ~ N(0, λ_i), λ_i = (2φ_i)² and φ_i Kolmogorov–Smirnov distributed, which
//! makes ε_i standard logistic.

use std::f64::consts::PI;

use rand::Rng;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::continuous::BartConfig;
use crate::data::{Dataset, ResponseKind};
use crate::error::Result;
use crate::model::{require_kind, run_chain, ModelFit, ModelSpec};
use crate::rng;
use crate::scalar::Real;

/// Above this standardized truncation point the exponential-proposal sampler is used.
const TAIL_SWITCH: f64 = 4.0;

/// Latent utilities and mixture variances for the binary samplers.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentState<T> {
    pub z: Vec<T>,
    pub lambda: Vec<T>,
}

impl<T: Real> LatentState<T> {
    /// z = +0.5 for successes and -0.5 for failures, all λ = 1.
    pub fn initial(y: &[T]) -> Self {
        let half = T::lit(0.5);
        Self {
            z: y.iter().map(|&v| if v > half { half } else { -half }).collect(),
            lambda: vec![T::one(); y.len()],
        }
    }

    pub fn is_sign_consistent(&self, y: &[T]) -> bool {
        let half = T::lit(0.5);
        self.z.len() == y.len()
            && self.z.iter().zip(y).all(|(&z, &v)| {
                if v > half {
                    z > T::zero()
                } else {
                    z <= T::zero()
                }
            })
            && self.lambda.iter().all(|&l| l > T::zero() && l.is_finite())
    }

    /// Precisions 1/λ_i used as observation weights by the tree updates.
    pub fn weights(&self) -> Vec<T> {
        self.lambda.iter().map(|&l| T::one() / l).collect()
    }

    /// Redraws every z_i given the linear predictor `eta`.
    pub(crate) fn refresh_z<R: Rng + ?Sized>(&mut self, y: &[T], eta: &[T], rng: &mut R) {
        let half = T::lit(0.5);
        for i in 0..y.len() {
            let z = draw_truncated_normal(eta[i].as_f64(), self.lambda[i].as_f64(), y[i] > half, rng);
            self.z[i] = T::lit(z);
        }
    }

    pub(crate) fn refresh_lambda<R: Rng + ?Sized>(&mut self, eta: &[T], rng: &mut R) {
        for i in 0..eta.len() {
            self.lambda[i] = T::lit(draw_lambda((self.z[i] - eta[i]).as_f64(), rng));
        }
    }
}

/// Exact draw from N(mean, variance) restricted to (0, ∞) when `positive`,
/// otherwise to (-∞, 0].
pub fn draw_truncated_normal<R: Rng + ?Sized>(
    mean: f64,
    variance: f64,
    positive: bool,
    rng: &mut R,
) -> f64 {
    let sd = variance.sqrt();
    if positive {
        mean + sd * std_normal_above(-mean / sd, rng)
    } else {
        let x = -(-mean + sd * std_normal_above(mean / sd, rng));
        // keep the sign contract when the draw lands exactly on zero from above
        if x > 0.0 { 0.0 } else { x }
    }
}

/// Standard normal conditioned on Z > a.
fn std_normal_above<R: Rng + ?Sized>(a: f64, rng: &mut R) -> f64 {
    if a <= 0.0 {
        // acceptance probability at least one half
        loop {
            let z = rng::std_normal(rng);
            if z > a {
                return z;
            }
        }
    } else if a <= TAIL_SWITCH {
        // invert through the upper tail mass, which stays well resolved up to a = 4
        let n = Normal::standard();
        let tail = n.sf(a);
        let u = rng::uniform_open(rng);
        let z = -n.inverse_cdf(u * tail);
        if z > a { z } else { a + f64::EPSILON * a }
    } else {
        // exponential proposal with the optimal rate
        let rate = 0.5 * (a + (a * a + 4.0).sqrt());
        loop {
            let z = a + rng::exp1(rng) / rate;
            let d = z - rate;
            if rng::uniform(rng) <= (-0.5 * d * d).exp() {
                return z;
            }
        }
    }
}

/// Draws λ from p(λ | r) ∝ λ^{-1/2} exp(-r²/(2λ)) π(λ), where π is the density
/// of (2φ)² for φ Kolmogorov–Smirnov.
///
/// Proposals come from the generalized inverse Gaussian GIG(1/2, 1, r²) and are
/// accepted by squeezing the alternating series for the KS density.
pub fn draw_lambda<R: Rng + ?Sized>(residual: f64, rng: &mut R) -> f64 {
    let r = residual.abs();
    loop {
        let n = rng::std_normal(rng);
        let mut y = n * n;
        let lambda = if r < 1e-8 {
            // GIG(1/2, 1, 0) is chi-square with one degree of freedom
            y
        } else {
            y = 1.0 + (y - (y * (4.0 * r + y)).sqrt()) / (2.0 * r);
            if rng::uniform(rng) <= 1.0 / (1.0 + y) {
                r / y
            } else {
                r * y
            }
        };
        if !(lambda > 0.0 && lambda.is_finite()) {
            continue;
        }
        let u = rng::uniform_open(rng);
        let ok = if lambda > 4.0 / 3.0 {
            rightmost_interval(u, lambda)
        } else {
            leftmost_interval(u, lambda)
        };
        if ok {
            return lambda;
        }
    }
}

fn rightmost_interval(u: f64, lambda: f64) -> bool {
    let mut z = 1.0;
    let x = (-0.5 * lambda).exp();
    let mut j = 0_i32;
    loop {
        j += 1;
        let k = ((j + 1) * (j + 1)) as f64;
        z -= k * x.powf(k - 1.0);
        if z > u {
            return true;
        }
        j += 1;
        let k = ((j + 1) * (j + 1)) as f64;
        z += k * x.powf(k - 1.0);
        if z < u {
            return false;
        }
    }
}

fn leftmost_interval(u: f64, lambda: f64) -> bool {
    let h = 0.5 * 2.0_f64.ln() + 2.5 * PI.ln() - 2.5 * lambda.ln() - PI * PI / (2.0 * lambda)
        + 0.5 * lambda;
    let lu = u.ln();
    let mut z = 1.0_f64;
    let x = (-PI * PI / (2.0 * lambda)).exp();
    let k = lambda / (PI * PI);
    let mut j = 0_i32;
    loop {
        j += 1;
        z -= k * x.powf((j * j - 1) as f64);
        if h + z.ln() > lu {
            return true;
        }
        j += 1;
        let jj = ((j + 1) * (j + 1)) as f64;
        z += jj * x.powf(jj - 1.0);
        if h + z.ln() < lu {
            return false;
        }
    }
}

/// Single logit BART: P(Y = 1 | x) = F(f(x)) with F the standard logistic CDF.
pub fn fit_logit_bart<T: Real>(data: &Dataset<T>, config: &BartConfig) -> Result<ModelFit<T>> {
    fit_logit_bart_with_test(data, None, config)
}

/// As [`fit_logit_bart`], also recording per-draw linear predictors at `test` rows.
pub fn fit_logit_bart_with_test<T: Real>(
    data: &Dataset<T>,
    test: Option<&Dataset<T>>,
    config: &BartConfig,
) -> Result<ModelFit<T>> {
    require_kind(data, ResponseKind::Binary)?;
    let spec = ModelSpec::Single {
        columns: (0..data.p()).collect(),
    };
    run_chain(data, test, spec, config.trees, config)
}
