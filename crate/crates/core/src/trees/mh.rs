use rand::Rng;
use serde::{Deserialize, Serialize};

use super::prior::{available_slots, draw_rule, has_available, narrow, subtree_log_prior, ColumnSet, Ranges};
use super::stats::{log_marginal_kernel, SufficientStats};
use super::{DecisionTree, NodeId, SplitRule, TreePrior};
use crate::data::{CutpointGrid, SplitIndex};
use crate::error::{Error, Result};
use crate::rng;
use crate::scalar::Real;

/// Base mixture over proposal kinds. Kinds that are impossible for the
/// current tree get zero mass and the rest are renormalized.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MoveProbs {
    pub grow: f64,
    pub prune: f64,
    pub change: f64,
}

impl Default for MoveProbs {
    fn default() -> Self {
        Self {
            grow: 0.25,
            prune: 0.25,
            change: 0.5,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MoveKind {
    Grow,
    Prune,
    Change,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MoveOutcome {
    pub kind: Option<MoveKind>,
    pub accepted: bool,
}

/// Everything a tree kernel needs besides the tree: binned training data,
/// the cutpoint grid, the admissible covariates and the prior.
#[derive(Clone, Debug)]
pub struct TreeSpace<'a, T> {
    pub index: &'a SplitIndex,
    pub grid: &'a CutpointGrid<T>,
    pub prior: TreePrior<T>,
    pub moves: MoveProbs,
    cols: ColumnSet,
}

/// A tree together with the leaf each training observation falls in.
#[derive(Clone, Debug, PartialEq)]
pub struct TreeState<T> {
    pub tree: DecisionTree<T>,
    pub leaf_of: Vec<u32>,
}

impl<T: Real> TreeState<T> {
    pub fn new(n: usize, value: T) -> Self {
        Self {
            tree: DecisionTree::leaf(value),
            leaf_of: vec![DecisionTree::<T>::ROOT as u32; n],
        }
    }

    /// g(x_i) for every training observation.
    pub fn fitted(&self) -> Vec<T> {
        let v = self.tree.values_by_id();
        self.leaf_of.iter().map(|&l| v[l as usize]).collect()
    }

    /// Per-leaf statistics, indexed by node id.
    pub fn leaf_stats(&self, residuals: &[T], weights: Option<&[T]>) -> Vec<SufficientStats<T>> {
        let mut stats = vec![SufficientStats::default(); self.tree.capacity()];
        for (i, &leaf) in self.leaf_of.iter().enumerate() {
            push_obs(&mut stats[leaf as usize], residuals, weights, i);
        }
        stats
    }

    /// True when the cached leaf assignment agrees with routing every observation afresh.
    pub fn is_consistent(&self, index: &SplitIndex) -> bool {
        self.leaf_of.iter().enumerate().all(|(i, &l)| {
            self.tree.route_binned(DecisionTree::<T>::ROOT, index, i) == l as usize
        })
    }
}

#[inline]
fn push_obs<T: Real>(s: &mut SufficientStats<T>, r: &[T], w: Option<&[T]>, i: usize) {
    match w {
        Some(w) => s.push_weighted(r[i], w[i]),
        None => s.push(r[i]),
    }
}

/// A fully scored proposal: the candidate tree, the observations whose leaf
/// changes, and the log Metropolis–Hastings acceptance ratio.
#[derive(Clone, Debug)]
pub struct Proposal<T> {
    pub kind: MoveKind,
    pub log_ratio: T,
    pub tree: DecisionTree<T>,
    reassign: Vec<(usize, u32)>,
}

impl<T: Real> Proposal<T> {
    pub fn apply(self, state: &mut TreeState<T>) {
        for (i, leaf) in self.reassign {
            state.leaf_of[i] = leaf;
        }
        state.tree = self.tree;
    }
}

struct Survey {
    growable: Vec<NodeId>,
    prunable: Vec<NodeId>,
    interior: Vec<NodeId>,
}

impl<'a, T: Real> TreeSpace<'a, T> {
    pub fn new(
        index: &'a SplitIndex,
        grid: &'a CutpointGrid<T>,
        columns: Vec<usize>,
        prior: TreePrior<T>,
        moves: MoveProbs,
    ) -> Result<Self> {
        if columns.is_empty() {
            return Err(Error::InvalidConfig("a tree needs at least one covariate".into()));
        }
        if let Some(&c) = columns.iter().find(|&&c| c >= grid.n_columns()) {
            return Err(Error::InvalidConfig(format!(
                "covariate {c} outside grid of {} columns",
                grid.n_columns()
            )));
        }
        let probs = [moves.grow, moves.prune, moves.change];
        if probs.iter().any(|&p| !(p >= 0.0)) || moves.grow <= 0.0 || moves.prune <= 0.0 {
            return Err(Error::InvalidConfig(
                "grow and prune probabilities must be positive, change nonnegative".into(),
            ));
        }
        let n_columns = grid.n_columns();
        Ok(Self {
            index,
            grid,
            prior,
            moves,
            cols: ColumnSet::new(columns, n_columns),
        })
    }

    pub fn columns(&self) -> &[usize] {
        &self.cols.columns
    }

    fn survey(&self, tree: &DecisionTree<T>) -> Survey {
        let mut s = Survey {
            growable: Vec::new(),
            prunable: Vec::new(),
            interior: Vec::new(),
        };
        let mut ranges = self.cols.full_ranges(self.grid);
        self.survey_at(tree, DecisionTree::<T>::ROOT, &mut ranges, &mut s);
        s
    }

    fn survey_at(&self, tree: &DecisionTree<T>, node: NodeId, ranges: &mut Ranges, s: &mut Survey) {
        match tree.children(node) {
            None => {
                if has_available(ranges) {
                    s.growable.push(node);
                }
            }
            Some((l, r)) => {
                s.interior.push(node);
                if tree.is_leaf(l) && tree.is_leaf(r) {
                    s.prunable.push(node);
                }
                let rule = tree.rule(node).expect("split");
                match self.cols.slot(rule.column) {
                    Some(slot) => {
                        let saved = ranges[slot];
                        narrow(&mut ranges[slot], rule.cut, true);
                        self.survey_at(tree, l, ranges, s);
                        ranges[slot] = saved;
                        narrow(&mut ranges[slot], rule.cut, false);
                        self.survey_at(tree, r, ranges, s);
                        ranges[slot] = saved;
                    }
                    None => {
                        self.survey_at(tree, l, ranges, s);
                        self.survey_at(tree, r, ranges, s);
                    }
                }
            }
        }
    }

    /// Renormalized (grow, prune, change) probabilities for a surveyed tree.
    fn move_weights(&self, s: &Survey) -> [f64; 3] {
        let w = [
            if s.growable.is_empty() { 0.0 } else { self.moves.grow },
            if s.prunable.is_empty() { 0.0 } else { self.moves.prune },
            if s.interior.is_empty() { 0.0 } else { self.moves.change },
        ];
        let total: f64 = w.iter().sum();
        if total > 0.0 {
            w.map(|x| x / total)
        } else {
            w
        }
    }

    fn subtree_prior(&self, tree: &DecisionTree<T>, node: NodeId, ranges: &Ranges) -> Option<T> {
        let mut r = ranges.clone();
        subtree_log_prior(tree, node, &mut r, &self.prior, &self.cols)
    }

    fn rule_for(&self, column: usize, cut: u32) -> SplitRule<T> {
        SplitRule {
            column,
            cut,
            value: self.grid.column(column)[cut as usize],
        }
    }

    /// Scores splitting `leaf` on `(column, cut)`; `None` if the rule is not
    /// available there or would leave a child without training observations.
    #[allow(clippy::too_many_arguments)]
    pub fn propose_grow(
        &self,
        state: &TreeState<T>,
        leaf: NodeId,
        column: usize,
        cut: u32,
        residuals: &[T],
        weights: Option<&[T]>,
        sigma2: T,
    ) -> Option<Proposal<T>> {
        let tree = &state.tree;
        if !tree.is_leaf(leaf) {
            return None;
        }
        let ranges = self.cols.ranges_at(tree, leaf, self.grid);
        let slot = self.cols.slot(column)?;
        let (lo, hi) = ranges[slot];
        if cut < lo || cut >= hi {
            return None;
        }
        let ranks = self.index.column(column);
        let mut left = SufficientStats::default();
        let mut right = SufficientStats::default();
        let mut moved = Vec::with_capacity(state.leaf_of.len());
        for (i, &l) in state.leaf_of.iter().enumerate() {
            if l as usize == leaf {
                let goes_left = ranks[i] <= cut;
                push_obs(if goes_left { &mut left } else { &mut right }, residuals, weights, i);
                moved.push((i, goes_left));
            }
        }
        if left.count == 0 || right.count == 0 {
            return None;
        }
        let mut next = tree.clone();
        let mu = tree.leaf_value(leaf).expect("leaf");
        let (l_id, r_id) = next.split_leaf(leaf, self.rule_for(column, cut), mu, mu);

        let before = self.survey(tree);
        let after = self.survey(&next);
        let (wb, wa) = (self.move_weights(&before), self.move_weights(&after));
        let leaf_var = self.prior.leaf_sd * self.prior.leaf_sd;
        let kern = |s: &SufficientStats<T>| log_marginal_kernel(s, sigma2, leaf_var);

        let log_prior = self.subtree_prior(&next, leaf, &ranges)? - self.subtree_prior(tree, leaf, &ranges)?;
        let log_lik = kern(&left) + kern(&right) - kern(&left.merge(&right));
        let log_fwd = T::lit(wb[0]).ln()
            - T::lit(before.growable.len() as f64).ln()
            - T::lit(available_slots(&ranges).len() as f64).ln()
            - T::lit((hi - lo) as f64).ln();
        let log_rev = T::lit(wa[1]).ln() - T::lit(after.prunable.len() as f64).ln();

        Some(Proposal {
            kind: MoveKind::Grow,
            log_ratio: log_prior + log_lik + log_rev - log_fwd,
            tree: next,
            reassign: moved
                .into_iter()
                .map(|(i, gl)| (i, if gl { l_id } else { r_id } as u32))
                .collect(),
        })
    }

    /// Scores collapsing `node`, whose children must both be leaves.
    pub fn propose_prune(
        &self,
        state: &TreeState<T>,
        node: NodeId,
        residuals: &[T],
        weights: Option<&[T]>,
        sigma2: T,
    ) -> Option<Proposal<T>> {
        let tree = &state.tree;
        let (l_id, r_id) = tree.children(node)?;
        if !(tree.is_leaf(l_id) && tree.is_leaf(r_id)) {
            return None;
        }
        let rule = tree.rule(node).expect("split");
        let ranges = self.cols.ranges_at(tree, node, self.grid);
        let slot = self.cols.slot(rule.column)?;
        let (lo, hi) = ranges[slot];

        let mut left = SufficientStats::default();
        let mut right = SufficientStats::default();
        let mut moved = Vec::with_capacity(state.leaf_of.len());
        for (i, &l) in state.leaf_of.iter().enumerate() {
            let l = l as usize;
            if l == l_id {
                push_obs(&mut left, residuals, weights, i);
                moved.push((i, node as u32));
            } else if l == r_id {
                push_obs(&mut right, residuals, weights, i);
                moved.push((i, node as u32));
            }
        }
        let mut next = tree.clone();
        next.collapse(node, T::zero());

        let before = self.survey(tree);
        let after = self.survey(&next);
        let (wb, wa) = (self.move_weights(&before), self.move_weights(&after));
        let leaf_var = self.prior.leaf_sd * self.prior.leaf_sd;
        let kern = |s: &SufficientStats<T>| log_marginal_kernel(s, sigma2, leaf_var);

        let log_prior = self.subtree_prior(&next, node, &ranges)? - self.subtree_prior(tree, node, &ranges)?;
        let log_lik = kern(&left.merge(&right)) - kern(&left) - kern(&right);
        let log_fwd = T::lit(wb[1]).ln() - T::lit(before.prunable.len() as f64).ln();
        let log_rev = T::lit(wa[0]).ln()
            - T::lit(after.growable.len() as f64).ln()
            - T::lit(available_slots(&ranges).len() as f64).ln()
            - T::lit((hi - lo) as f64).ln();

        Some(Proposal {
            kind: MoveKind::Prune,
            log_ratio: log_prior + log_lik + log_rev - log_fwd,
            tree: next,
            reassign: moved,
        })
    }

    /// Scores replacing the rule at interior `node` by `(column, cut)`.
    #[allow(clippy::too_many_arguments)]
    pub fn propose_change(
        &self,
        state: &TreeState<T>,
        node: NodeId,
        column: usize,
        cut: u32,
        residuals: &[T],
        weights: Option<&[T]>,
        sigma2: T,
    ) -> Option<Proposal<T>> {
        let tree = &state.tree;
        let old_rule = tree.rule(node)?;
        let ranges = self.cols.ranges_at(tree, node, self.grid);
        let new_slot = self.cols.slot(column)?;
        let old_slot = self.cols.slot(old_rule.column)?;
        let (new_lo, new_hi) = ranges[new_slot];
        let (old_lo, old_hi) = ranges[old_slot];
        if cut < new_lo || cut >= new_hi {
            return None;
        }
        let mut next = tree.clone();
        next.set_rule(node, self.rule_for(column, cut));
        let log_prior = self.subtree_prior(&next, node, &ranges)? - self.subtree_prior(tree, node, &ranges)?;

        let mut in_subtree = vec![false; tree.capacity()];
        let mut stack = vec![node];
        while let Some(id) = stack.pop() {
            in_subtree[id] = true;
            if let Some((l, r)) = tree.children(id) {
                stack.push(l);
                stack.push(r);
            }
        }
        let mut old_stats = vec![SufficientStats::default(); tree.capacity()];
        let mut new_stats = vec![SufficientStats::default(); tree.capacity()];
        let mut moved = Vec::with_capacity(state.leaf_of.len());
        for (i, &l) in state.leaf_of.iter().enumerate() {
            let l = l as usize;
            if in_subtree[l] {
                push_obs(&mut old_stats[l], residuals, weights, i);
                let nl = next.route_binned(node, self.index, i);
                push_obs(&mut new_stats[nl], residuals, weights, i);
                if nl != l {
                    moved.push((i, nl as u32));
                }
            }
        }
        let leaf_var = self.prior.leaf_sd * self.prior.leaf_sd;
        let mut log_lik = T::zero();
        for id in (0..tree.capacity()).filter(|&id| in_subtree[id] && tree.is_leaf(id)) {
            if new_stats[id].count == 0 {
                return None;
            }
            log_lik = log_lik + log_marginal_kernel(&new_stats[id], sigma2, leaf_var)
                - log_marginal_kernel(&old_stats[id], sigma2, leaf_var);
        }

        let before = self.survey(tree);
        let after = self.survey(&next);
        let (wb, wa) = (self.move_weights(&before), self.move_weights(&after));
        let n_vars = T::lit(available_slots(&ranges).len() as f64).ln();
        let log_fwd = T::lit(wb[2]).ln()
            - T::lit(before.interior.len() as f64).ln()
            - n_vars
            - T::lit((new_hi - new_lo) as f64).ln();
        let log_rev = T::lit(wa[2]).ln()
            - T::lit(after.interior.len() as f64).ln()
            - n_vars
            - T::lit((old_hi - old_lo) as f64).ln();

        Some(Proposal {
            kind: MoveKind::Change,
            log_ratio: log_prior + log_lik + log_rev - log_fwd,
            tree: next,
            reassign: moved,
        })
    }
}

/// One Metropolis–Hastings update of a tree's structure, with leaf values
/// integrated out against `residuals` (observation `i` has variance `sigma2 / w_i`).
pub fn mh_step<T: Real, R: Rng + ?Sized>(
    state: &mut TreeState<T>,
    space: &TreeSpace<'_, T>,
    residuals: &[T],
    weights: Option<&[T]>,
    sigma2: T,
    rng: &mut R,
) -> MoveOutcome {
    let survey = space.survey(&state.tree);
    let w = space.move_weights(&survey);
    if w.iter().sum::<f64>() <= 0.0 {
        return MoveOutcome {
            kind: None,
            accepted: false,
        };
    }
    let u = rng::uniform(rng);
    let kind = if u < w[0] {
        MoveKind::Grow
    } else if u < w[0] + w[1] {
        MoveKind::Prune
    } else {
        MoveKind::Change
    };
    let pick = |v: &[NodeId], rng: &mut R| v[rng.random_range(0..v.len())];
    let proposal = match kind {
        MoveKind::Grow => {
            let leaf = pick(&survey.growable, rng);
            let ranges = space.cols.ranges_at(&state.tree, leaf, space.grid);
            draw_rule(&ranges, rng).and_then(|(slot, cut)| {
                space.propose_grow(state, leaf, space.cols.columns[slot], cut, residuals, weights, sigma2)
            })
        }
        MoveKind::Prune => {
            let node = pick(&survey.prunable, rng);
            space.propose_prune(state, node, residuals, weights, sigma2)
        }
        MoveKind::Change => {
            let node = pick(&survey.interior, rng);
            let ranges = space.cols.ranges_at(&state.tree, node, space.grid);
            draw_rule(&ranges, rng).and_then(|(slot, cut)| {
                space.propose_change(state, node, space.cols.columns[slot], cut, residuals, weights, sigma2)
            })
        }
    };
    let accepted = match proposal {
        Some(p) if rng::uniform_open(rng).ln() < p.log_ratio.as_f64() => {
            p.apply(state);
            true
        }
        _ => false,
    };
    MoveOutcome {
        kind: Some(kind),
        accepted,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{build_cutpoints, Dataset, ResponseKind};

    fn toy() -> (Dataset<f64>, CutpointGrid<f64>, SplitIndex) {
        let x1 = vec![0.0, 1.0, 2.0, 3.0, 0.0, 1.0, 2.0, 3.0];
        let x2 = vec![0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 1.0];
        let d = Dataset::new(
            vec![0.0; 8],
            vec![x1, x2],
            vec!["a".into(), "b".into()],
            "y",
            ResponseKind::Continuous,
        )
        .unwrap();
        let g = build_cutpoints(&d, 10);
        let idx = SplitIndex::new(&d, &g);
        (d, g, idx)
    }

    #[test]
    fn single_leaf_tree_only_grows() {
        let (_, g, idx) = toy();
        let prior = TreePrior::new(0.95, 2.0, 0.5).unwrap();
        let space = TreeSpace::new(&idx, &g, vec![0, 1], prior, MoveProbs::default()).unwrap();
        let s = space.survey(&DecisionTree::leaf(0.0));
        assert_eq!(space.move_weights(&s), [1.0, 0.0, 0.0]);
        let state = TreeState::new(8, 0.0);
        let r = vec![0.1; 8];
        assert!(space.propose_prune(&state, 0, &r, None, 1.0).is_none());
    }

    #[test]
    fn grow_then_prune_ratios_cancel() {
        let (_, g, idx) = toy();
        let prior = TreePrior::new(0.95, 2.0, 0.5).unwrap();
        let space = TreeSpace::new(&idx, &g, vec![0, 1], prior, MoveProbs::default()).unwrap();
        let r = vec![1.0, -0.5, 0.3, 2.0, 0.0, 0.7, -1.2, 0.4];
        let mut state = TreeState::new(8, 0.0);
        // grow twice so the prune happens in a non-trivial tree
        let first = space.propose_grow(&state, 0, 0, 1, &r, None, 0.7).unwrap();
        first.apply(&mut state);
        let leaf = state.tree.leaves()[1];
        let grow = space.propose_grow(&state, leaf, 1, 0, &r, None, 0.7).unwrap();
        let grow_ratio = grow.log_ratio;
        let mut grown = state.clone();
        grow.apply(&mut grown);
        assert!(grown.is_consistent(&idx));
        let prune = space.propose_prune(&grown, leaf, &r, None, 0.7).unwrap();
        assert!((grow_ratio + prune.log_ratio).abs() < 1e-12);
        let mut back = grown.clone();
        prune.apply(&mut back);
        assert_eq!(back.tree.to_json(), state.tree.to_json());
        assert!(back.is_consistent(&idx));
    }

    #[test]
    fn change_ratio_is_antisymmetric() {
        let (_, g, idx) = toy();
        let prior = TreePrior::new(0.95, 1.0, 0.5).unwrap();
        let space = TreeSpace::new(&idx, &g, vec![0, 1], prior, MoveProbs::default()).unwrap();
        let r = vec![1.0, -0.5, 0.3, 2.0, 0.0, 0.7, -1.2, 0.4];
        let mut state = TreeState::new(8, 0.0);
        space.propose_grow(&state, 0, 0, 1, &r, None, 0.7).unwrap().apply(&mut state);
        let fwd = space.propose_change(&state, 0, 1, 0, &r, None, 0.7).unwrap();
        let mut changed = state.clone();
        let fwd_ratio = fwd.log_ratio;
        fwd.apply(&mut changed);
        assert!(changed.is_consistent(&idx));
        let back = space.propose_change(&changed, 0, 0, 1, &r, None, 0.7).unwrap();
        assert!((fwd_ratio + back.log_ratio).abs() < 1e-12);
    }

    #[test]
    fn empty_children_are_rejected() {
        let (_, g, idx) = toy();
        let prior = TreePrior::new(0.95, 2.0, 0.5).unwrap();
        let space = TreeSpace::new(&idx, &g, vec![0, 1], prior, MoveProbs::default()).unwrap();
        let r = vec![0.0; 8];
        let mut state = TreeState::new(8, 0.0);
        // a = 0 on the left, then split that leaf on a again: no cut left there
        space.propose_grow(&state, 0, 0, 0, &r, None, 1.0).unwrap().apply(&mut state);
        let left = state.tree.children(0).unwrap().0;
        assert!(space.propose_grow(&state, left, 0, 0, &r, None, 1.0).is_none());
        // b splits the a<0.5 leaf fine
        assert!(space.propose_grow(&state, left, 1, 0, &r, None, 1.0).is_some());
    }

    #[test]
    fn mh_chain_keeps_cache_consistent() {
        let (_, g, idx) = toy();
        let prior = TreePrior::new(0.95, 0.5, 0.5).unwrap();
        let space = TreeSpace::new(&idx, &g, vec![0, 1], prior, MoveProbs::default()).unwrap();
        let r = vec![1.0, -0.5, 0.3, 2.0, 0.0, 0.7, -1.2, 0.4];
        let mut state = TreeState::new(8, 0.0);
        let mut rng = rng::seeded(9);
        let mut accepted = 0;
        for _ in 0..5000 {
            if mh_step(&mut state, &space, &r, None, 0.3, &mut rng).accepted {
                accepted += 1;
            }
            assert!(state.is_consistent(&idx));
            assert_eq!(state.tree.interior().len() + 1, state.tree.n_leaves());
        }
        assert!(accepted > 100);
    }
}
