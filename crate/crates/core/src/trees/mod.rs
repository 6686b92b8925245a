//! Binary regression trees: structure, prior, leaf integrals and the Metropolis–Hastings kernel.

mod mh;
mod prior;
mod stats;

pub use mh::{mh_step, MoveKind, MoveOutcome, MoveProbs, Proposal, TreeSpace, TreeState};
pub use prior::{sample_tree_from_prior, TreePrior};
pub use stats::{draw_leaf_values, leaf_log_marginal, leaf_posterior, SufficientStats};

use serde::{Deserialize, Serialize};

use crate::data::SplitIndex;
use crate::error::{Error, Result};
use crate::scalar::Real;

pub type NodeId = usize;

/// Split rule: rows with `x[column] < value` go left. `cut` is the index of
/// `value` in the cutpoint grid the tree was grown on.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitRule<T> {
    pub column: usize,
    pub cut: u32,
    pub value: T,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Node<T> {
    Leaf {
        value: T,
    },
    Split {
        rule: SplitRule<T>,
        left: NodeId,
        right: NodeId,
    },
    /// Slot vacated by a prune, reused by the next grow.
    Vacant,
}

#[derive(Clone, Debug, PartialEq)]
struct Slot<T> {
    node: Node<T>,
    parent: Option<NodeId>,
    depth: u32,
}

/// Arena-backed binary tree; node 0 is the root.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(into = "TreeJson<T>", try_from = "TreeJson<T>", bound = "T: Real")]
pub struct DecisionTree<T> {
    slots: Vec<Slot<T>>,
    vacant: Vec<NodeId>,
}

impl<T: Real> DecisionTree<T> {
    pub const ROOT: NodeId = 0;

    pub fn leaf(value: T) -> Self {
        Self {
            slots: vec![Slot {
                node: Node::Leaf { value },
                parent: None,
                depth: 0,
            }],
            vacant: Vec::new(),
        }
    }

    pub fn node(&self, id: NodeId) -> &Node<T> {
        &self.slots[id].node
    }

    pub fn parent(&self, id: NodeId) -> Option<NodeId> {
        self.slots[id].parent
    }

    pub fn depth(&self, id: NodeId) -> u32 {
        self.slots[id].depth
    }

    /// Upper bound (exclusive) on node ids.
    pub fn capacity(&self) -> usize {
        self.slots.len()
    }

    pub fn is_leaf(&self, id: NodeId) -> bool {
        matches!(self.slots[id].node, Node::Leaf { .. })
    }

    pub fn children(&self, id: NodeId) -> Option<(NodeId, NodeId)> {
        match self.slots[id].node {
            Node::Split { left, right, .. } => Some((left, right)),
            _ => None,
        }
    }

    pub fn rule(&self, id: NodeId) -> Option<SplitRule<T>> {
        match self.slots[id].node {
            Node::Split { rule, .. } => Some(rule),
            _ => None,
        }
    }

    pub fn leaf_value(&self, id: NodeId) -> Option<T> {
        match self.slots[id].node {
            Node::Leaf { value } => Some(value),
            _ => None,
        }
    }

    pub fn set_leaf_value(&mut self, id: NodeId, v: T) {
        match &mut self.slots[id].node {
            Node::Leaf { value } => *value = v,
            other => panic!("node {id} is not a leaf: {other:?}"),
        }
    }

    pub fn set_rule(&mut self, id: NodeId, new_rule: SplitRule<T>) {
        match &mut self.slots[id].node {
            Node::Split { rule, .. } => *rule = new_rule,
            other => panic!("node {id} is not a split: {other:?}"),
        }
    }

    /// Node ids in depth-first (pre-order) order.
    pub fn preorder(&self) -> Vec<NodeId> {
        let mut out = Vec::with_capacity(self.slots.len());
        let mut stack = vec![Self::ROOT];
        while let Some(id) = stack.pop() {
            out.push(id);
            if let Some((l, r)) = self.children(id) {
                stack.push(r);
                stack.push(l);
            }
        }
        out
    }

    pub fn leaves(&self) -> Vec<NodeId> {
        self.preorder()
            .into_iter()
            .filter(|&id| self.is_leaf(id))
            .collect()
    }

    pub fn interior(&self) -> Vec<NodeId> {
        self.preorder()
            .into_iter()
            .filter(|&id| !self.is_leaf(id))
            .collect()
    }

    /// Interior nodes whose two children are both leaves.
    pub fn prunable(&self) -> Vec<NodeId> {
        self.interior()
            .into_iter()
            .filter(|&id| {
                let (l, r) = self.children(id).expect("interior");
                self.is_leaf(l) && self.is_leaf(r)
            })
            .collect()
    }

    pub fn n_leaves(&self) -> usize {
        self.leaves().len()
    }

    pub fn max_depth(&self) -> u32 {
        self.leaves()
            .into_iter()
            .map(|id| self.depth(id))
            .max()
            .unwrap_or(0)
    }

    fn alloc(&mut self, slot: Slot<T>) -> NodeId {
        if let Some(id) = self.vacant.pop() {
            self.slots[id] = slot;
            id
        } else {
            self.slots.push(slot);
            self.slots.len() - 1
        }
    }

    /// Turns a leaf into a split with two fresh leaves; returns `(left, right)`.
    pub fn split_leaf(
        &mut self,
        id: NodeId,
        rule: SplitRule<T>,
        left_value: T,
        right_value: T,
    ) -> (NodeId, NodeId) {
        assert!(self.is_leaf(id), "split_leaf on non-leaf {id}");
        let depth = self.depth(id) + 1;
        let left = self.alloc(Slot {
            node: Node::Leaf { value: left_value },
            parent: Some(id),
            depth,
        });
        let right = self.alloc(Slot {
            node: Node::Leaf { value: right_value },
            parent: Some(id),
            depth,
        });
        self.slots[id].node = Node::Split { rule, left, right };
        (left, right)
    }

    /// Replaces a split whose children are leaves by a single leaf.
    pub fn collapse(&mut self, id: NodeId, value: T) {
        let (l, r) = self.children(id).expect("collapse on a leaf");
        assert!(self.is_leaf(l) && self.is_leaf(r), "collapse needs leaf children");
        for c in [l, r] {
            self.slots[c].node = Node::Vacant;
            self.slots[c].parent = None;
            self.vacant.push(c);
        }
        self.slots[id].node = Node::Leaf { value };
    }

    /// Leaf reached by a covariate row.
    pub fn route(&self, row: &[T]) -> NodeId {
        self.route_from(Self::ROOT, |rule| row[rule.column] < rule.value)
    }

    /// Leaf reached from `start` by training observation `obs`, using cut ranks.
    #[inline]
    pub fn route_binned(&self, start: NodeId, index: &SplitIndex, obs: usize) -> NodeId {
        self.route_from(start, |rule| index.rank(rule.column, obs) <= rule.cut)
    }

    #[inline]
    fn route_from(&self, start: NodeId, mut goes_left: impl FnMut(&SplitRule<T>) -> bool) -> NodeId {
        let mut id = start;
        loop {
            match &self.slots[id].node {
                Node::Split { rule, left, right } => {
                    id = if goes_left(rule) { *left } else { *right };
                }
                _ => return id,
            }
        }
    }

    /// Leaf values indexed by node id (zero at non-leaves).
    pub fn values_by_id(&self) -> Vec<T> {
        self.slots
            .iter()
            .map(|s| match s.node {
                Node::Leaf { value } => value,
                _ => T::zero(),
            })
            .collect()
    }

    pub fn to_json(&self) -> TreeJson<T> {
        self.json_at(Self::ROOT)
    }

    fn json_at(&self, id: NodeId) -> TreeJson<T> {
        match &self.slots[id].node {
            Node::Leaf { value } => TreeJson::Leaf { value: *value },
            Node::Split { rule, left, right } => TreeJson::Split {
                column: rule.column,
                cut: rule.cut,
                value: rule.value,
                left: Box::new(self.json_at(*left)),
                right: Box::new(self.json_at(*right)),
            },
            Node::Vacant => unreachable!("vacant slot reachable from root"),
        }
    }

    pub fn from_json(json: &TreeJson<T>) -> Self {
        fn build<T: Real>(tree: &mut DecisionTree<T>, id: NodeId, json: &TreeJson<T>) {
            if let TreeJson::Split {
                column,
                cut,
                value,
                left,
                right,
            } = json
            {
                let rule = SplitRule {
                    column: *column,
                    cut: *cut,
                    value: *value,
                };
                let (l, r) = tree.split_leaf(id, rule, T::zero(), T::zero());
                build(tree, l, left);
                build(tree, r, right);
            } else if let TreeJson::Leaf { value } = json {
                tree.set_leaf_value(id, *value);
            }
        }
        let mut tree = Self::leaf(T::zero());
        build(&mut tree, Self::ROOT, json);
        tree
    }
}

/// Nested serialization of a tree: `{"kind":"split","column":..,"cut":..,"value":..,"left":..,"right":..}`
/// or `{"kind":"leaf","value":..}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", bound = "T: Real")]
pub enum TreeJson<T> {
    Leaf {
        value: T,
    },
    Split {
        column: usize,
        cut: u32,
        value: T,
        left: Box<TreeJson<T>>,
        right: Box<TreeJson<T>>,
    },
}

impl<T: Real> From<DecisionTree<T>> for TreeJson<T> {
    fn from(t: DecisionTree<T>) -> Self {
        t.to_json()
    }
}

impl<T: Real> TryFrom<TreeJson<T>> for DecisionTree<T> {
    type Error = Error;
    fn try_from(j: TreeJson<T>) -> Result<Self> {
        Ok(DecisionTree::from_json(&j))
    }
}

/// g(x; T, M): the leaf value reached by `row`.
pub fn evaluate<T: Real>(tree: &DecisionTree<T>, row: &[T]) -> T {
    tree.leaf_value(tree.route(row)).expect("route ends at a leaf")
}

/// Σ_j g(x; T_j, M_j).
pub fn sum_evaluate<T: Real>(forest: &[DecisionTree<T>], row: &[T]) -> T {
    forest.iter().map(|t| evaluate(t, row)).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rule(column: usize, value: f64) -> SplitRule<f64> {
        SplitRule {
            column,
            cut: 0,
            value,
        }
    }

    /// Left panel: X1 < 4 → 10; else X2 < 4 → 20, else 30.
    fn left_example() -> DecisionTree<f64> {
        let mut t = DecisionTree::leaf(0.0);
        let (_, r) = t.split_leaf(0, rule(0, 4.0), 10.0, 0.0);
        t.split_leaf(r, rule(1, 4.0), 20.0, 30.0);
        t
    }

    /// Right panel: X2 < 2 → (X1 < 1 → 20, else 40); else 60.
    fn right_example() -> DecisionTree<f64> {
        let mut t = DecisionTree::leaf(0.0);
        let (l, _) = t.split_leaf(0, rule(1, 2.0), 0.0, 60.0);
        t.split_leaf(l, rule(0, 1.0), 20.0, 40.0);
        t
    }

    #[test]
    fn two_tree_sum_example() {
        let x = [5.0, 3.0];
        assert_eq!(evaluate(&left_example(), &x), 20.0);
        assert_eq!(evaluate(&right_example(), &x), 60.0);
        assert_eq!(sum_evaluate(&[left_example(), right_example()], &x), 80.0);
        // remaining regions of the summed partition
        let sum = |x1: f64, x2: f64| sum_evaluate(&[left_example(), right_example()], &[x1, x2]);
        assert_eq!(sum(0.5, 1.0), 30.0);
        assert_eq!(sum(2.0, 1.0), 50.0);
        assert_eq!(sum(2.0, 3.0), 70.0);
        assert_eq!(sum(5.0, 1.0), 60.0);
        assert_eq!(sum(5.0, 5.0), 90.0);
    }

    #[test]
    fn trivial_forests() {
        let t = DecisionTree::leaf(7.0);
        assert_eq!(evaluate(&t, &[1.0, -3.0]), 7.0);
        assert_eq!(sum_evaluate::<f64>(&[], &[1.0]), 0.0);
        let f = vec![DecisionTree::leaf(1.5), DecisionTree::leaf(1.5)];
        assert_eq!(sum_evaluate(&f, &[0.0]), 3.0);
    }

    #[test]
    fn leaf_and_interior_counts() {
        let t = left_example();
        assert_eq!(t.n_leaves(), 3);
        assert_eq!(t.interior().len(), 2);
        assert_eq!(t.prunable(), vec![2]);
        assert_eq!(t.max_depth(), 2);
    }

    #[test]
    fn collapse_reuses_slots() {
        let mut t = left_example();
        t.collapse(2, 25.0);
        assert_eq!(t.n_leaves(), 2);
        assert_eq!(evaluate(&t, &[5.0, 3.0]), 25.0);
        let (l, r) = t.split_leaf(2, rule(1, 1.0), 1.0, 2.0);
        assert!(l < 5 && r < 5);
        assert_eq!(t.capacity(), 5);
        assert_eq!(evaluate(&t, &[5.0, 3.0]), 2.0);
    }

    #[test]
    fn json_round_trip() {
        let t = right_example();
        let s = serde_json::to_string(&t).unwrap();
        assert!(s.starts_with(r#"{"kind":"split","column":1"#), "{s}");
        let back: DecisionTree<f64> = serde_json::from_str(&s).unwrap();
        for x in [[0.0, 0.0], [2.0, 1.0], [0.0, 9.0]] {
            assert_eq!(evaluate(&back, &x), evaluate(&t, &x));
        }
        assert_eq!(back.to_json(), t.to_json());
    }

    #[test]
    fn piecewise_constant_within_a_leaf() {
        let t = left_example();
        assert_eq!(evaluate(&t, &[4.5, 0.0]), evaluate(&t, &[100.0, 3.9]));
        assert_eq!(evaluate(&t, &[-9.0, 0.0]), evaluate(&t, &[3.99, 100.0]));
    }
}
