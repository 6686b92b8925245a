mod common;

use std::collections::HashMap;

use addbart::data::{build_cutpoints, CutpointGrid, ResponseKind, SplitIndex};
use addbart::rng;
use addbart::trees::{
    evaluate, leaf_log_marginal, mh_step, sample_tree_from_prior, DecisionTree, MoveProbs,
    SufficientStats, TreeJson, TreePrior, TreeSpace, TreeState,
};
use common::dataset;
use proptest::prelude::*;

fn shape(t: &TreeJson<f64>) -> String {
    match t {
        TreeJson::Leaf { .. } => "L".into(),
        TreeJson::Split { column, left, right, .. } => format!("S{column}({},{})", shape(left), shape(right)),
    }
}

/// Exact leaf-count law of the split-probability prior when rules never run out.
fn leaf_count_law(base: f64, power: f64, max_leaves: usize) -> Vec<f64> {
    // law[d][k]: probability a subtree rooted at depth d has k leaves, k <= max_leaves
    let depth_cap = 40;
    let mut law = vec![vec![0.0; max_leaves + 1]; depth_cap + 1];
    law[depth_cap][1] = 1.0;
    for d in (0..depth_cap).rev() {
        let p = base * (1.0 + d as f64).powf(-power);
        law[d][1] = 1.0 - p;
        for k in 2..=max_leaves {
            let conv: f64 = (1..k).map(|a| law[d + 1][a] * law[d + 1][k - a]).sum();
            law[d][k] = p * conv;
        }
    }
    law[0].clone()
}

#[test]
fn prior_leaf_counts_match_reference_values() {
    let exact = leaf_count_law(0.95, 2.0, 4);
    let mut want = exact[1..=4].to_vec();
    want.push(1.0 - want.iter().sum::<f64>());
    let reference = [0.05, 0.55, 0.28, 0.09, 0.03];
    for (e, t) in want.iter().zip(reference) {
        assert!(((e * 100.0).round() / 100.0 - t).abs() < 1e-12, "{e} vs {t}");
    }

    // plenty of cutpoints so running out of rules never matters
    let grid = CutpointGrid::from_cuts((0..10).map(|_| (0..100).map(f64::from).collect()).collect()).unwrap();
    let prior = TreePrior::new(0.95, 2.0, 1.0).unwrap();
    let mut r = rng::seeded(1);
    let draws = 100_000;
    let mut counts = [0usize; 5];
    for _ in 0..draws {
        let leaves = sample_tree_from_prior(&prior, &grid, &mut r).n_leaves();
        counts[leaves.min(5) - 1] += 1;
    }
    for (k, (&c, &p)) in counts.iter().zip(&want).enumerate() {
        let f = c as f64 / draws as f64;
        let se = (p * (1.0 - p) / draws as f64).sqrt();
        assert!((f - p).abs() < 3.0 * se, "{} leaves: {f} vs {p}", k + 1);
    }
}

/// Exact tree posterior on four points at the corners of the unit square,
/// where each covariate has a single cutpoint.
struct Corners {
    residuals: Vec<f64>,
    sigma2: f64,
    leaf_sd: f64,
    prior: TreePrior<f64>,
}

impl Corners {
    fn log_marginal(&self, obs: &[usize]) -> f64 {
        // r ~ N(0, σ² I + τ² 11') in closed form
        let n = obs.len() as f64;
        let (s2, t2) = (self.sigma2, self.leaf_sd * self.leaf_sd);
        let sum: f64 = obs.iter().map(|&i| self.residuals[i]).sum();
        let sq: f64 = obs.iter().map(|&i| self.residuals[i].powi(2)).sum();
        let log_det = n * s2.ln() + (1.0 + n * t2 / s2).ln();
        let quad = (sq - t2 * sum * sum / (s2 + n * t2)) / s2;
        -0.5 * (n * (2.0 * std::f64::consts::PI).ln() + log_det + quad)
    }

    /// (shape, log prior + log likelihood) for every tree on `obs`.
    fn enumerate(&self, obs: &[usize], free: &[usize], depth: u32, x: &[[f64; 2]]) -> Vec<(String, f64)> {
        let leaf = self.log_marginal(obs);
        if free.is_empty() {
            return vec![("L".into(), leaf)];
        }
        let p = self.prior.split_probability(depth);
        let mut out = vec![("L".into(), (1.0 - p).ln() + leaf)];
        for &c in free {
            let rest: Vec<usize> = free.iter().copied().filter(|&f| f != c).collect();
            let left: Vec<usize> = obs.iter().copied().filter(|&i| x[i][c] < 0.5).collect();
            let right: Vec<usize> = obs.iter().copied().filter(|&i| x[i][c] >= 0.5).collect();
            let pick = (p / free.len() as f64).ln();
            for (ls, lw) in self.enumerate(&left, &rest, depth + 1, x) {
                for (rs, rw) in self.enumerate(&right, &rest, depth + 1, x) {
                    out.push((format!("S{c}({ls},{rs})"), pick + lw + rw));
                }
            }
        }
        out
    }
}

#[test]
fn structure_chain_matches_enumerated_posterior() {
    let x = [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0]];
    let d = dataset(
        vec![0.0; 4],
        vec![x.iter().map(|r| r[0]).collect(), x.iter().map(|r| r[1]).collect()],
        ResponseKind::Continuous,
    );
    let grid = build_cutpoints(&d, 100);
    assert_eq!((grid.n_cuts(0), grid.n_cuts(1)), (1, 1));
    let index = SplitIndex::new(&d, &grid);
    let prior = TreePrior::new(0.95, 1.0, 1.0).unwrap();
    let oracle = Corners {
        residuals: vec![1.0, -0.4, 0.3, 1.6],
        sigma2: 0.5,
        leaf_sd: 1.0,
        prior,
    };
    let table = oracle.enumerate(&[0, 1, 2, 3], &[0, 1], 0, &x);
    assert_eq!(table.len(), 9);
    let top = table.iter().map(|t| t.1).fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = table.iter().map(|t| (t.1 - top).exp()).sum();
    let exact: HashMap<String, f64> = table.iter().map(|(s, w)| (s.clone(), (w - top).exp() / z)).collect();

    let space = TreeSpace::new(&index, &grid, vec![0, 1], prior, MoveProbs::default()).unwrap();
    let mut state = TreeState::new(4, 0.0);
    let mut r = rng::seeded(2);
    let steps = 400_000;
    let mut seen: HashMap<String, usize> = HashMap::new();
    for _ in 0..steps {
        mh_step(&mut state, &space, &oracle.residuals, None, oracle.sigma2, &mut r);
        *seen.entry(shape(&state.tree.to_json())).or_default() += 1;
    }
    let mut tv = 0.0;
    for (s, p) in &exact {
        let f = *seen.get(s).unwrap_or(&0) as f64 / steps as f64;
        tv += 0.5 * (f - p).abs();
    }
    assert!(seen.keys().all(|k| exact.contains_key(k)));
    assert!(tv < 0.02, "total variation {tv}");
}

#[test]
fn weighted_marginal_with_unit_weights_equals_plain() {
    let r = [0.3_f64, -1.2, 2.5, 0.0, 0.7];
    let plain = SufficientStats::from_residuals(&r);
    let mut weighted = SufficientStats::default();
    for &v in &r {
        weighted.push_weighted(v, 1.0);
    }
    let a = leaf_log_marginal(&plain, 0.8, 0.4).unwrap();
    let b = leaf_log_marginal(&weighted, 0.8, 0.4).unwrap();
    assert!((a - b).abs() < 1e-12);
}

fn random_grid(cols: usize, cuts: usize) -> CutpointGrid<f64> {
    CutpointGrid::from_cuts((0..cols).map(|_| (0..cuts).map(|k| k as f64 + 0.5).collect()).collect()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn prior_trees_are_well_formed(seed in any::<u64>(), cols in 1usize..4, cuts in 1usize..6) {
        let grid = random_grid(cols, cuts);
        let prior = TreePrior::new(0.95, 1.0, 0.5).unwrap();
        let t = sample_tree_from_prior(&prior, &grid, &mut rng::seeded(seed));
        prop_assert_eq!(t.interior().len() + 1, t.n_leaves());
        let back = DecisionTree::from_json(&t.to_json());
        prop_assert_eq!(back.to_json(), t.to_json());
        // along every path a column's cut indices strictly narrow
        for leaf in t.leaves() {
            let mut lo = vec![0u32; cols];
            let mut hi = vec![cuts as u32; cols];
            let mut path = vec![leaf];
            while let Some(p) = t.parent(*path.last().unwrap()) {
                path.push(p);
            }
            path.reverse();
            for w in path.windows(2) {
                let rule = t.rule(w[0]).unwrap();
                prop_assert!(rule.cut >= lo[rule.column] && rule.cut < hi[rule.column]);
                if t.children(w[0]).unwrap().0 == w[1] {
                    hi[rule.column] = rule.cut;
                } else {
                    lo[rule.column] = rule.cut + 1;
                }
            }
        }
    }

    #[test]
    fn mh_keeps_leaf_cache_consistent(seed in any::<u64>(), ys in prop::collection::vec(-3.0f64..3.0, 12)) {
        let cols: Vec<Vec<f64>> = (0..2).map(|j| (0..12).map(|i| ((i * (j + 3)) % 7) as f64).collect()).collect();
        let d = dataset(ys.clone(), cols, ResponseKind::Continuous);
        let grid = build_cutpoints(&d, 100);
        let index = SplitIndex::new(&d, &grid);
        let prior = TreePrior::new(0.95, 0.5, 1.0).unwrap();
        let space = TreeSpace::new(&index, &grid, vec![0, 1], prior, MoveProbs::default()).unwrap();
        let mut state = TreeState::new(12, 0.0);
        let mut r = rng::seeded(seed);
        for _ in 0..200 {
            mh_step(&mut state, &space, &ys, None, 0.5, &mut r);
            prop_assert!(state.is_consistent(&index));
            // every leaf keeps at least one training observation
            let stats = state.leaf_stats(&ys, None);
            for leaf in state.tree.leaves() {
                prop_assert!(stats[leaf].count > 0);
            }
        }
        // binned routing and raw-value routing agree on the training rows
        for i in 0..12 {
            prop_assert_eq!(state.tree.route(&d.row(i)), state.leaf_of[i] as usize);
            prop_assert_eq!(evaluate(&state.tree, &d.row(i)), state.tree.values_by_id()[state.leaf_of[i] as usize]);
        }
    }

    #[test]
    fn leaf_marginal_is_permutation_invariant(mut r in prop::collection::vec(-5.0f64..5.0, 1..20), s2 in 0.05f64..5.0, tau in 0.05f64..3.0) {
        let a = leaf_log_marginal(&SufficientStats::from_residuals(&r), s2, tau).unwrap();
        r.reverse();
        let b = leaf_log_marginal(&SufficientStats::from_residuals(&r), s2, tau).unwrap();
        prop_assert!((a - b).abs() < 1e-9 * a.abs().max(1.0));
    }
}
