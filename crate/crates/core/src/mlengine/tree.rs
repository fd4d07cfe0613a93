//! Binary decision trees: CART classification trees (Gini) and the node
//! storage shared with the boosted regression trees.

use serde::{Deserialize, Serialize};

use super::Samples;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TreeNode {
    /// Rows with `x[feature] <= threshold` go left.
    Split { feature: u16, threshold: f64, left: u32, right: u32 },
    Leaf { value: f64 },
}

/// Nodes in pre-order; node 0 is the root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<TreeNode>,
}

impl Tree {
    pub fn leaf(value: f64) -> Self {
        Tree { nodes: vec![TreeNode::Leaf { value }] }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        let mut i = 0usize;
        loop {
            match self.nodes[i] {
                TreeNode::Leaf { value } => return value,
                TreeNode::Split { feature, threshold, left, right } => {
                    i = if x[feature as usize] <= threshold { left as usize } else { right as usize };
                }
            }
        }
    }

    pub fn root_split(&self) -> Option<(usize, f64)> {
        match self.nodes.first()? {
            TreeNode::Split { feature, threshold, .. } => Some((*feature as usize, *threshold)),
            TreeNode::Leaf { .. } => None,
        }
    }

    pub fn depth(&self) -> usize {
        fn go(t: &Tree, i: usize) -> usize {
            match t.nodes[i] {
                TreeNode::Leaf { .. } => 0,
                TreeNode::Split { left, right, .. } => 1 + go(t, left as usize).max(go(t, right as usize)),
            }
        }
        go(self, 0)
    }

    pub fn leaf_count(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, TreeNode::Leaf { .. })).count()
    }
}

/// Row indices sorted by each feature (ties by row index).
pub(crate) type SortedRows = Vec<Vec<usize>>;

pub(crate) fn presort(samples: &Samples, idx: &[usize]) -> SortedRows {
    (0..samples.n_features)
        .map(|f| {
            let mut order = idx.to_vec();
            order.sort_unstable_by(|&a, &b| samples.value(a, f).total_cmp(&samples.value(b, f)).then(a.cmp(&b)));
            order
        })
        .collect()
}

/// Stable split of every per-feature list by `x[feature] <= threshold`.
pub(crate) fn partition_sorted(
    samples: &Samples,
    sorted: &SortedRows,
    feature: usize,
    threshold: f64,
) -> (SortedRows, SortedRows) {
    sorted
        .iter()
        .map(|list| list.iter().partition::<Vec<usize>, _>(|&&i| samples.value(i, feature) <= threshold))
        .unzip()
}

/// Split purity score `(a^2 + b^2) / n` for a child with `a` positives and
/// `b` negatives. Weighted Gini of a split is `1 - (sum over children) / n`,
/// so maximizing the children's summed score minimizes weighted Gini.
/// Scores are compared exactly as fractions.
#[derive(Debug, Clone, Copy)]
struct SplitScore {
    num: u128,
    den: u128,
}

impl SplitScore {
    fn new(l_pos: u64, l_n: u64, r_pos: u64, r_n: u64) -> Self {
        let sq = |pos: u64, n: u64| {
            let neg = n - pos;
            u128::from(pos) * u128::from(pos) + u128::from(neg) * u128::from(neg)
        };
        SplitScore {
            num: sq(l_pos, l_n) * u128::from(r_n) + sq(r_pos, r_n) * u128::from(l_n),
            den: u128::from(l_n) * u128::from(r_n),
        }
    }

    fn beats(&self, other: &SplitScore) -> bool {
        self.num * other.den > other.num * self.den
    }
}

/// Best Gini split of the rows in `idx`, or `None` when no split leaves at
/// least `min_leaf` rows on each side. Ties go to the lower feature index,
/// then the lower threshold.
pub fn best_gini_split(samples: &Samples, idx: &[usize], min_leaf: usize) -> Option<(usize, f64)> {
    best_gini_split_sorted(samples, &presort(samples, idx), min_leaf)
}

fn best_gini_split_sorted(samples: &Samples, sorted: &SortedRows, min_leaf: usize) -> Option<(usize, f64)> {
    let n = sorted[0].len();
    let min_leaf = min_leaf.max(1);
    if n < 2 * min_leaf {
        return None;
    }
    let total_pos = sorted[0].iter().filter(|&&i| samples.y[i]).count() as u64;
    let mut best: Option<(SplitScore, usize, f64)> = None;
    for (f, order) in sorted.iter().enumerate() {
        let mut left_pos = 0u64;
        for k in 0..n - 1 {
            left_pos += u64::from(samples.y[order[k]]);
            let left_n = k + 1;
            let (lo, hi) = (samples.value(order[k], f), samples.value(order[k + 1], f));
            if lo == hi || left_n < min_leaf || n - left_n < min_leaf {
                continue;
            }
            let score = SplitScore::new(left_pos, left_n as u64, total_pos - left_pos, (n - left_n) as u64);
            if best.as_ref().is_none_or(|(b, _, _)| score.beats(b)) {
                best = Some((score, f, midpoint(lo, hi)));
            }
        }
    }
    best.map(|(_, f, t)| (f, t))
}

/// Threshold between two distinct sorted values; always `lo <= t < hi`.
pub(crate) fn midpoint(lo: f64, hi: f64) -> f64 {
    let m = lo + (hi - lo) / 2.0;
    if m >= hi {
        lo
    } else {
        m
    }
}

/// Greedy CART classification tree. Leaves hold the positive-class fraction.
pub fn train_decision_tree(samples: &Samples, max_depth: usize, min_leaf: usize) -> Tree {
    let idx: Vec<usize> = (0..samples.len()).collect();
    let mut tree = Tree { nodes: Vec::new() };
    grow(samples, presort(samples, &idx), 0, max_depth, min_leaf, &mut tree);
    tree
}

fn grow(samples: &Samples, sorted: SortedRows, depth: usize, max_depth: usize, min_leaf: usize, tree: &mut Tree) -> u32 {
    let id = tree.nodes.len() as u32;
    let idx = &sorted[0];
    let pos = idx.iter().filter(|&&i| samples.y[i]).count();
    let value = if idx.is_empty() { 0.0 } else { pos as f64 / idx.len() as f64 };
    tree.nodes.push(TreeNode::Leaf { value });
    if depth >= max_depth || pos == 0 || pos == idx.len() {
        return id;
    }
    let Some((feature, threshold)) = best_gini_split_sorted(samples, &sorted, min_leaf) else {
        return id;
    };
    let (l, r) = partition_sorted(samples, &sorted, feature, threshold);
    drop(sorted);
    let left = grow(samples, l, depth + 1, max_depth, min_leaf, tree);
    let right = grow(samples, r, depth + 1, max_depth, min_leaf, tree);
    tree.nodes[id as usize] = TreeNode::Split { feature: feature as u16, threshold, left, right };
    id
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_points_split_at_midpoint() {
        let s = Samples::new(1, vec![0.0, 1.0], vec![false, true]);
        let t = train_decision_tree(&s, 3, 1);
        assert_eq!(t.root_split(), Some((0, 0.5)));
        assert_eq!(t.eval(&[0.0]), 0.0);
        assert_eq!(t.eval(&[1.0]), 1.0);
        assert_eq!(t.nodes.len(), 3);
    }

    #[test]
    fn xor_is_solved_at_depth_two() {
        let pts = [(0.0, 0.0, false), (0.0, 1.0, true), (1.0, 0.0, true), (1.0, 1.0, false)];
        let x: Vec<f64> = pts.iter().flat_map(|p| [p.0, p.1]).collect();
        let s = Samples::new(2, x, pts.iter().map(|p| p.2).collect());
        let t = train_decision_tree(&s, 2, 1);
        assert_eq!(t.root_split(), Some((0, 0.5)));
        for p in pts {
            assert_eq!(t.eval(&[p.0, p.1]) > 0.5, p.2);
        }
    }

    #[test]
    fn min_leaf_is_respected() {
        let s = Samples::new(1, (0..10).map(f64::from).collect(), (0..10).map(|i| i == 9).collect());
        let t = train_decision_tree(&s, 5, 3);
        assert_eq!(t.root_split().map(|r| r.1), Some(6.5));
    }
}
