use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{DecisionTree, NodeId, SplitRule};
use crate::data::CutpointGrid;
use crate::error::{Error, Result};
use crate::rng;
use crate::scalar::Real;

/// Regeneration prior over tree shapes plus the normal leaf prior.
///
/// A node at depth `d` splits with probability `base * (1 + d)^(-power)`
/// provided some covariate still has an available cutpoint in its region.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct TreePrior<T> {
    pub base: T,
    pub power: T,
    pub leaf_sd: T,
}

impl<T: Real> TreePrior<T> {
    /// `base` may be zero, which pins every tree to a single leaf.
    pub fn new(base: T, power: T, leaf_sd: T) -> Result<Self> {
        if !(base >= T::zero() && base < T::one()) {
            return Err(Error::InvalidConfig(format!(
                "tree prior base must lie in [0, 1), got {base}"
            )));
        }
        if !(power >= T::zero()) {
            return Err(Error::InvalidConfig(format!(
                "tree prior power must be >= 0, got {power}"
            )));
        }
        if !(leaf_sd > T::zero()) {
            return Err(Error::InvalidConfig(format!(
                "leaf prior sd must be positive, got {leaf_sd}"
            )));
        }
        Ok(Self {
            base,
            power,
            leaf_sd,
        })
    }

    #[inline]
    pub fn split_probability(&self, depth: u32) -> T {
        self.base * (T::one() + T::lit(depth as f64)).powf(-self.power)
    }
}

/// Half-open cut-index interval `[lo, hi)` still available per column slot.
pub(crate) type Ranges = Vec<(u32, u32)>;

/// The covariates a tree may split on, with a reverse lookup from column index.
#[derive(Clone, Debug)]
pub(crate) struct ColumnSet {
    pub columns: Vec<usize>,
    slot: Vec<Option<usize>>,
}

impl ColumnSet {
    pub fn new(columns: Vec<usize>, n_columns: usize) -> Self {
        let mut slot = vec![None; n_columns];
        for (s, &c) in columns.iter().enumerate() {
            slot[c] = Some(s);
        }
        Self { columns, slot }
    }

    #[inline]
    pub fn slot(&self, column: usize) -> Option<usize> {
        self.slot.get(column).copied().flatten()
    }

    pub fn full_ranges<T: Real>(&self, grid: &CutpointGrid<T>) -> Ranges {
        self.columns
            .iter()
            .map(|&c| (0, grid.n_cuts(c) as u32))
            .collect()
    }

    /// Ranges in force at `node`, from the splits on its ancestor path.
    pub fn ranges_at<T: Real>(
        &self,
        tree: &DecisionTree<T>,
        node: NodeId,
        grid: &CutpointGrid<T>,
    ) -> Ranges {
        let mut ranges = self.full_ranges(grid);
        let mut child = node;
        while let Some(parent) = tree.parent(child) {
            let rule = tree.rule(parent).expect("parent is a split");
            let (left, _) = tree.children(parent).expect("parent is a split");
            if let Some(s) = self.slot(rule.column) {
                narrow(&mut ranges[s], rule.cut, child == left);
            }
            child = parent;
        }
        ranges
    }
}

#[inline]
pub(crate) fn narrow(range: &mut (u32, u32), cut: u32, left: bool) {
    if left {
        range.1 = range.1.min(cut);
    } else {
        range.0 = range.0.max(cut + 1);
    }
}

/// Column slots with at least one available cutpoint.
pub(crate) fn available_slots(ranges: &Ranges) -> Vec<usize> {
    ranges
        .iter()
        .enumerate()
        .filter(|(_, (lo, hi))| lo < hi)
        .map(|(s, _)| s)
        .collect()
}

#[inline]
pub(crate) fn has_available(ranges: &Ranges) -> bool {
    ranges.iter().any(|(lo, hi)| lo < hi)
}

/// Log prior probability of the subtree rooted at `node` (shape and split rules),
/// given the ranges in force at `node`. `None` when a rule is not realizable.
pub(crate) fn subtree_log_prior<T: Real>(
    tree: &DecisionTree<T>,
    node: NodeId,
    ranges: &mut Ranges,
    prior: &TreePrior<T>,
    cols: &ColumnSet,
) -> Option<T> {
    let p_split = prior.split_probability(tree.depth(node));
    match tree.rule(node) {
        None => Some(if has_available(ranges) {
            (T::one() - p_split).ln()
        } else {
            T::zero()
        }),
        Some(rule) => {
            let s = cols.slot(rule.column)?;
            let (lo, hi) = ranges[s];
            if rule.cut < lo || rule.cut >= hi {
                return None;
            }
            let n_vars = available_slots(ranges).len();
            let here = p_split.ln()
                - T::lit(n_vars as f64).ln()
                - T::lit((hi - lo) as f64).ln();
            let (left, right) = tree.children(node).expect("split has children");
            ranges[s].1 = rule.cut;
            let l = subtree_log_prior(tree, left, ranges, prior, cols);
            ranges[s] = (rule.cut + 1, hi);
            let r = subtree_log_prior(tree, right, ranges, prior, cols);
            ranges[s] = (lo, hi);
            Some(here + l? + r?)
        }
    }
}

/// Draws a uniformly chosen available rule: `(slot, cut)`.
pub(crate) fn draw_rule<R: Rng + ?Sized>(ranges: &Ranges, rng: &mut R) -> Option<(usize, u32)> {
    let slots = available_slots(ranges);
    if slots.is_empty() {
        return None;
    }
    let s = slots[rng.random_range(0..slots.len())];
    let (lo, hi) = ranges[s];
    Some((s, rng.random_range(lo..hi)))
}

/// Draws a tree (shape, split rules and leaf values) from the prior over all grid columns.
pub fn sample_tree_from_prior<T: Real, R: Rng + ?Sized>(
    prior: &TreePrior<T>,
    grid: &CutpointGrid<T>,
    rng: &mut R,
) -> DecisionTree<T> {
    let cols = ColumnSet::new((0..grid.n_columns()).collect(), grid.n_columns());
    let mut tree = DecisionTree::leaf(T::zero());
    let mut ranges = cols.full_ranges(grid);
    grow_from_prior(&mut tree, DecisionTree::<T>::ROOT, &mut ranges, prior, grid, &cols, rng);
    tree
}

fn grow_from_prior<T: Real, R: Rng + ?Sized>(
    tree: &mut DecisionTree<T>,
    node: NodeId,
    ranges: &mut Ranges,
    prior: &TreePrior<T>,
    grid: &CutpointGrid<T>,
    cols: &ColumnSet,
    rng: &mut R,
) {
    let p = prior.split_probability(tree.depth(node)).as_f64();
    let rule = if rng::uniform(rng) < p {
        draw_rule(ranges, rng)
    } else {
        None
    };
    match rule {
        None => {
            let mu = prior.leaf_sd * T::lit(rng::std_normal(rng));
            tree.set_leaf_value(node, mu);
        }
        Some((s, cut)) => {
            let column = cols.columns[s];
            let rule = SplitRule {
                column,
                cut,
                value: grid.column(column)[cut as usize],
            };
            let (left, right) = tree.split_leaf(node, rule, T::zero(), T::zero());
            let saved = ranges[s];
            ranges[s].1 = cut;
            grow_from_prior(tree, left, ranges, prior, grid, cols, rng);
            ranges[s] = (cut + 1, saved.1);
            grow_from_prior(tree, right, ranges, prior, grid, cols, rng);
            ranges[s] = saved;
        }
    }
}
