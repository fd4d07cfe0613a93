//! Gradient-boosted regression trees on the logistic loss.
//!
//! Splits use the second-order gain `G_L^2/(H_L+l) + G_R^2/(H_R+l) - G^2/(H+l)`.
//! Each leaf value minimizes the L2-regularized leaf loss by damped Newton
//! steps and is then shrunk by the learning rate. Because the leaf loss is
//! convex and zero is always a candidate, no round can increase the
//! training loss.

use serde::{Deserialize, Serialize};

use super::tree::{midpoint, partition_sorted, presort, SortedRows, Tree, TreeNode};
use super::Samples;

pub const LEAF_L2: f64 = 1.0;
const NEWTON_ITERS: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gbdt {
    /// Prior log-odds.
    pub base_score: f64,
    pub learning_rate: f64,
    /// Leaf values already include the learning rate.
    pub trees: Vec<Tree>,
}

impl Gbdt {
    pub fn logit(&self, x: &[f64]) -> f64 {
        self.base_score + self.trees.iter().map(|t| t.eval(x)).sum::<f64>()
    }

    pub fn score(&self, x: &[f64]) -> f64 {
        sigmoid(self.logit(x))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GbdtFit {
    pub model: Gbdt,
    /// Mean logistic loss on the training rows after 0, 1, .., n rounds.
    pub loss_history: Vec<f64>,
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `-[y ln p + (1-y) ln(1-p)]` with `p = sigmoid(z)`, evaluated stably.
pub fn logistic_loss(z: f64, y: bool) -> f64 {
    let yf = f64::from(u8::from(y));
    z.max(0.0) - z * yf + (-z.abs()).exp().ln_1p()
}

fn mean_loss(logits: &[f64], y: &[bool]) -> f64 {
    logits.iter().zip(y).map(|(&z, &t)| logistic_loss(z, t)).sum::<f64>() / logits.len() as f64
}

pub fn train_gbdt(samples: &Samples, n_trees: usize, depth: usize, learning_rate: f64, min_leaf: usize) -> GbdtFit {
    let n = samples.len();
    let pos = samples.y.iter().filter(|&&y| y).count() as f64;
    let prior = (pos / n as f64).clamp(1e-6, 1.0 - 1e-6);
    let base_score = (prior / (1.0 - prior)).ln();
    let mut logits = vec![base_score; n];
    let mut history = vec![mean_loss(&logits, &samples.y)];
    let mut trees = Vec::with_capacity(n_trees);
    let mut grad = vec![0.0; n];
    let mut hess = vec![0.0; n];
    let all: Vec<usize> = (0..n).collect();
    let sorted = presort(samples, &all);
    for _ in 0..n_trees {
        for i in 0..n {
            let p = sigmoid(logits[i]);
            grad[i] = p - f64::from(u8::from(samples.y[i]));
            hess[i] = p * (1.0 - p);
        }
        let mut builder = Builder { samples, grad: &grad, hess: &hess, logits: &logits, lr: learning_rate, min_leaf, nodes: Vec::new() };
        builder.grow(sorted.clone(), 0, depth);
        let tree = Tree { nodes: builder.nodes };
        for (i, z) in logits.iter_mut().enumerate() {
            *z += tree.eval(samples.row(i));
        }
        history.push(mean_loss(&logits, &samples.y));
        trees.push(tree);
    }
    GbdtFit { model: Gbdt { base_score, learning_rate, trees }, loss_history: history }
}

struct Builder<'a> {
    samples: &'a Samples,
    grad: &'a [f64],
    hess: &'a [f64],
    logits: &'a [f64],
    lr: f64,
    min_leaf: usize,
    nodes: Vec<TreeNode>,
}

impl Builder<'_> {
    fn grow(&mut self, sorted: SortedRows, depth: usize, max_depth: usize) -> u32 {
        let id = self.nodes.len() as u32;
        let split = if depth < max_depth { self.best_split(&sorted) } else { None };
        let Some((feature, threshold)) = split else {
            let value = self.leaf_value(&sorted[0]);
            self.nodes.push(TreeNode::Leaf { value });
            return id;
        };
        self.nodes.push(TreeNode::Leaf { value: 0.0 });
        let (l, r) = partition_sorted(self.samples, &sorted, feature, threshold);
        drop(sorted);
        let left = self.grow(l, depth + 1, max_depth);
        let right = self.grow(r, depth + 1, max_depth);
        self.nodes[id as usize] = TreeNode::Split { feature: feature as u16, threshold, left, right };
        id
    }

    fn best_split(&self, sorted: &SortedRows) -> Option<(usize, f64)> {
        let idx = &sorted[0];
        let n = idx.len();
        let min_leaf = self.min_leaf.max(1);
        if n < 2 * min_leaf {
            return None;
        }
        let g_tot: f64 = idx.iter().map(|&i| self.grad[i]).sum();
        let h_tot: f64 = idx.iter().map(|&i| self.hess[i]).sum();
        let parent = g_tot * g_tot / (h_tot + LEAF_L2);
        let mut best_gain = 1e-12;
        let mut best = None;
        for (f, order) in sorted.iter().enumerate() {
            let (mut gl, mut hl) = (0.0, 0.0);
            for k in 0..n - 1 {
                gl += self.grad[order[k]];
                hl += self.hess[order[k]];
                let left_n = k + 1;
                let (lo, hi) = (self.samples.value(order[k], f), self.samples.value(order[k + 1], f));
                if lo == hi || left_n < min_leaf || n - left_n < min_leaf {
                    continue;
                }
                let (gr, hr) = (g_tot - gl, h_tot - hl);
                let gain = gl * gl / (hl + LEAF_L2) + gr * gr / (hr + LEAF_L2) - parent;
                if gain > best_gain {
                    best_gain = gain;
                    best = Some((f, midpoint(lo, hi)));
                }
            }
        }
        best
    }

    /// Regularized leaf objective `sum loss(z_i + v) + l v^2 / 2`.
    fn leaf_objective(&self, idx: &[usize], v: f64) -> f64 {
        idx.iter().map(|&i| logistic_loss(self.logits[i] + v, self.samples.y[i])).sum::<f64>()
            + 0.5 * LEAF_L2 * v * v
    }

    fn leaf_value(&self, idx: &[usize]) -> f64 {
        if idx.is_empty() {
            return 0.0;
        }
        let mut v = 0.0;
        let mut obj = self.leaf_objective(idx, v);
        let base = obj;
        for _ in 0..NEWTON_ITERS {
            let (mut g, mut h) = (LEAF_L2 * v, LEAF_L2);
            for &i in idx {
                let p = sigmoid(self.logits[i] + v);
                g += p - f64::from(u8::from(self.samples.y[i]));
                h += p * (1.0 - p);
            }
            let mut step = -g / h;
            if step.abs() < 1e-9 {
                break;
            }
            let mut improved = false;
            for _ in 0..30 {
                let cand = self.leaf_objective(idx, v + step);
                if cand < obj {
                    v += step;
                    obj = cand;
                    improved = true;
                    break;
                }
                step *= 0.5;
            }
            if !improved {
                break;
            }
        }
        let shrunk = self.lr * v;
        if self.leaf_objective(idx, shrunk) <= base {
            shrunk
        } else {
            0.0
        }
    }
}
