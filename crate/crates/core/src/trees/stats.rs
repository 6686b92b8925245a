use rand::Rng;

use super::DecisionTree;
use crate::error::{Error, Result};
use crate::rng;
use crate::scalar::Real;

/// Precision-weighted sufficient statistics of the residuals routed to one leaf.
///
/// Observation `i` carries weight `w_i` and has variance `sigma2 / w_i`. The
/// homoscedastic sampler uses `w_i = 1` with the error variance as `sigma2`;
/// the latent-variable samplers use `w_i = 1 / lambda_i` with `sigma2 = 1`.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct SufficientStats<T> {
    pub count: usize,
    /// Σ w_i
    pub weight: T,
    /// Σ w_i r_i
    pub sum: T,
    /// Σ w_i r_i²
    pub sum_sq: T,
    /// Σ log w_i
    pub log_weight: T,
}

impl<T: Real> SufficientStats<T> {
    pub fn from_residuals(residuals: &[T]) -> Self {
        let mut s = Self::default();
        for &r in residuals {
            s.push(r);
        }
        s
    }

    #[inline]
    pub fn push(&mut self, r: T) {
        self.count += 1;
        self.weight = self.weight + T::one();
        self.sum = self.sum + r;
        self.sum_sq = self.sum_sq + r * r;
    }

    #[inline]
    pub fn push_weighted(&mut self, r: T, w: T) {
        self.count += 1;
        self.weight = self.weight + w;
        let wr = w * r;
        self.sum = self.sum + wr;
        self.sum_sq = self.sum_sq + wr * r;
        self.log_weight = self.log_weight + w.ln();
    }

    pub fn merge(&self, other: &Self) -> Self {
        Self {
            count: self.count + other.count,
            weight: self.weight + other.weight,
            sum: self.sum + other.sum,
            sum_sq: self.sum_sq + other.sum_sq,
            log_weight: self.log_weight + other.log_weight,
        }
    }
}

/// log ∫ Π_i N(r_i; μ, σ²/w_i) · N(μ; 0, σ_μ²) dμ.
pub fn leaf_log_marginal<T: Real>(
    stats: &SufficientStats<T>,
    sigma2: T,
    leaf_sd: T,
) -> Result<T> {
    if !(sigma2 > T::zero()) {
        return Err(Error::InvalidConfig(format!(
            "error variance must be positive, got {sigma2}"
        )));
    }
    let half = T::lit(0.5);
    let n = T::lit(stats.count as f64);
    let two_pi_s2 = T::lit(2.0 * std::f64::consts::PI) * sigma2;
    Ok(-half * n * two_pi_s2.ln() + half * stats.log_weight - stats.sum_sq / (T::lit(2.0) * sigma2)
        + log_marginal_kernel(stats, sigma2, leaf_sd * leaf_sd))
}

/// The part of [`leaf_log_marginal`] that changes when observations are regrouped
/// into different leaves; the remainder is a sum over observations.
#[inline]
pub(crate) fn log_marginal_kernel<T: Real>(
    stats: &SufficientStats<T>,
    sigma2: T,
    leaf_var: T,
) -> T {
    let denom = sigma2 + stats.weight * leaf_var;
    let half = T::lit(0.5);
    half * (sigma2 / denom).ln() + leaf_var * stats.sum * stats.sum / (T::lit(2.0) * sigma2 * denom)
}

/// Mean and variance of the conjugate normal update for one leaf value.
pub fn leaf_posterior<T: Real>(stats: &SufficientStats<T>, sigma2: T, leaf_sd: T) -> (T, T) {
    let leaf_var = leaf_sd * leaf_sd;
    let denom = sigma2 + stats.weight * leaf_var;
    (leaf_var * stats.sum / denom, sigma2 * leaf_var / denom)
}

/// Redraws every leaf value from its conditional posterior.
///
/// `stats` is indexed by node id (see [`DecisionTree::capacity`]); entries for
/// non-leaf nodes are ignored.
pub fn draw_leaf_values<T: Real, R: Rng + ?Sized>(
    tree: &mut DecisionTree<T>,
    stats: &[SufficientStats<T>],
    sigma2: T,
    leaf_sd: T,
    rng: &mut R,
) {
    for id in tree.leaves() {
        let (mean, var) = leaf_posterior(&stats[id], sigma2, leaf_sd);
        let z = T::lit(rng::std_normal(rng));
        tree.set_leaf_value(id, mean + var.sqrt() * z);
    }
}
