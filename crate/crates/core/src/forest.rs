//! Sum-of-trees state and the Bayesian backfitting sweep.

use rand::Rng;

use crate::scalar::Real;
use crate::trees::{draw_leaf_values, mh_step, DecisionTree, TreeSpace, TreeState};

/// `m` trees over one covariate block plus their summed in-sample fit.
#[derive(Clone, Debug)]
pub struct Forest<T> {
    trees: Vec<TreeState<T>>,
    fit: Vec<T>,
    proposals: u64,
    accepted: u64,
}

impl<T: Real> Forest<T> {
    /// `m` single-leaf trees at zero.
    pub fn new(m: usize, n: usize) -> Self {
        Self {
            trees: (0..m).map(|_| TreeState::new(n, T::zero())).collect(),
            fit: vec![T::zero(); n],
            proposals: 0,
            accepted: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.trees.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trees.is_empty()
    }

    /// Σ_j g(x_i; T_j, M_j) at every training observation.
    pub fn fit(&self) -> &[T] {
        &self.fit
    }

    pub fn states(&self) -> &[TreeState<T>] {
        &self.trees
    }

    pub fn trees(&self) -> Vec<DecisionTree<T>> {
        self.trees.iter().map(|s| s.tree.clone()).collect()
    }

    /// Fraction of tree proposals accepted so far.
    pub fn acceptance_rate(&self) -> f64 {
        if self.proposals == 0 {
            0.0
        } else {
            self.accepted as f64 / self.proposals as f64
        }
    }

    /// Rebuilds the summed fit from the trees, adding them in index order.
    pub fn recompute_fit(&mut self) {
        self.fit.iter_mut().for_each(|f| *f = T::zero());
        for state in &self.trees {
            let v = state.tree.values_by_id();
            for (f, &l) in self.fit.iter_mut().zip(&state.leaf_of) {
                *f = *f + v[l as usize];
            }
        }
    }

    /// Sum of tree evaluations at a covariate row, in index order.
    pub fn evaluate_row(&self, row: &[T]) -> T {
        let mut acc = T::zero();
        for s in &self.trees {
            acc = acc + crate::trees::evaluate(&s.tree, row);
        }
        acc
    }

    /// One backfitting pass: each tree in turn gets an MH structure update and
    /// fresh leaf values against the partial residuals of all other trees.
    ///
    /// `target` is what this forest should explain; `weights` are per-observation
    /// precisions relative to `sigma2` (`None` means all ones).
    pub fn sweep<R: Rng + ?Sized>(
        &mut self,
        space: &TreeSpace<'_, T>,
        target: &[T],
        weights: Option<&[T]>,
        sigma2: T,
        rng: &mut R,
    ) {
        let mut resid: Vec<T> = target.iter().zip(&self.fit).map(|(&t, &f)| t - f).collect();
        let leaf_sd = space.prior.leaf_sd;
        for state in &mut self.trees {
            let old = state.tree.values_by_id();
            for (r, &l) in resid.iter_mut().zip(&state.leaf_of) {
                *r = *r + old[l as usize];
            }
            let outcome = mh_step(state, space, &resid, weights, sigma2, rng);
            if outcome.kind.is_some() {
                self.proposals += 1;
                self.accepted += u64::from(outcome.accepted);
            }
            let stats = state.leaf_stats(&resid, weights);
            draw_leaf_values(&mut state.tree, &stats, sigma2, leaf_sd, rng);
            let new = state.tree.values_by_id();
            for (r, &l) in resid.iter_mut().zip(&state.leaf_of) {
                *r = *r - new[l as usize];
            }
        }
        self.recompute_fit();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{build_cutpoints, Dataset, ResponseKind, SplitIndex};
    use crate::rng;
    use crate::trees::{MoveProbs, TreePrior};

    #[test]
    fn sweep_keeps_fit_equal_to_tree_sum() {
        let mut r = rng::seeded(1);
        let n = 60;
        let x: Vec<f64> = (0..n).map(|i| i as f64 / n as f64).collect();
        let y: Vec<f64> = x.iter().map(|&v| if v < 0.5 { -0.3 } else { 0.4 }).collect();
        let d = Dataset::new(y.clone(), vec![x], vec!["x".into()], "y", ResponseKind::Continuous)
            .unwrap();
        let g = build_cutpoints(&d, 20);
        let idx = SplitIndex::new(&d, &g);
        let prior = TreePrior::new(0.95, 2.0, 0.1).unwrap();
        let space = TreeSpace::new(&idx, &g, vec![0], prior, MoveProbs::default()).unwrap();
        let mut f = Forest::new(10, n);
        for _ in 0..50 {
            f.sweep(&space, &y, None, 0.01, &mut r);
            let rows = d.rows();
            for (i, row) in rows.iter().enumerate() {
                assert!((f.evaluate_row(row) - f.fit()[i]).abs() < 1e-12);
            }
            assert!(f.states().iter().all(|s| s.is_consistent(&idx)));
        }
        let mse: f64 = y.iter().zip(f.fit()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / n as f64;
        assert!(mse < 0.02, "mse {mse}");
        assert!(f.acceptance_rate() > 0.0);
    }
}
