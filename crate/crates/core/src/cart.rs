//! Depth-limited CART regression trees with exact greedy split search.
//!
//! Split candidates are the distinct observed values of each feature inside a
//! node. Rows go left iff `x[feature] < threshold`, so the right child is the
//! closed side `x[feature] >= threshold`. Among equal-gain candidates the
//! smallest feature index wins, then the smallest threshold.

use ndarray::{Array1, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative slack used both for "no split reduces error" and for tie detection.
pub const SPLIT_REL_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Node {
    Split {
        feature: usize,
        threshold: f64,
        left: Box<Node>,
        right: Box<Node>,
    },
    Leaf {
        value: f64,
    },
}

impl Node {
    fn predict_row(&self, x: ArrayView1<f64>) -> f64 {
        let mut node = self;
        loop {
            match node {
                Node::Leaf { value } => return *value,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    node = if x[*feature] < *threshold {
                        left
                    } else {
                        right
                    }
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionTree {
    pub max_depth: usize,
    pub n_features: usize,
    pub root: Node,
}

impl RegressionTree {
    pub fn leaf(value: f64, n_features: usize) -> Self {
        RegressionTree {
            max_depth: 0,
            n_features,
            root: Node::Leaf { value },
        }
    }

    pub fn predict_row(&self, x: ArrayView1<f64>) -> f64 {
        self.root.predict_row(x)
    }

    pub fn predict(&self, features: ArrayView2<f64>) -> Result<Array1<f64>> {
        if features.ncols() != self.n_features {
            return Err(Error::DimensionMismatch {
                expected: self.n_features,
                found: features.ncols(),
            });
        }
        Ok(features
            .rows()
            .into_iter()
            .map(|row| self.root.predict_row(row))
            .collect())
    }

    pub fn is_leaf(&self) -> bool {
        matches!(self.root, Node::Leaf { .. })
    }

    pub fn n_leaves(&self) -> usize {
        fn count(node: &Node) -> usize {
            match node {
                Node::Leaf { .. } => 1,
                Node::Split { left, right, .. } => count(left) + count(right),
            }
        }
        count(&self.root)
    }

    /// Longest root-to-leaf path actually realized.
    pub fn depth(&self) -> usize {
        fn depth(node: &Node) -> usize {
            match node {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + depth(left).max(depth(right)),
            }
        }
        depth(&self.root)
    }

    pub fn max_leaf_abs(&self) -> f64 {
        self.to_rectangles()
            .iter()
            .map(|r| r.coefficient.abs())
            .fold(0.0, f64::max)
    }

    /// One rectangle per leaf; their coefficient-weighted indicators sum to the tree.
    pub fn to_rectangles(&self) -> Vec<Rectangle> {
        fn walk(node: &Node, lower: &mut Vec<f64>, upper: &mut Vec<f64>, out: &mut Vec<Rectangle>) {
            match node {
                Node::Leaf { value } => out.push(Rectangle {
                    lower: lower.clone(),
                    upper: upper.clone(),
                    coefficient: *value,
                }),
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    let f = *feature;
                    let saved = upper[f];
                    upper[f] = saved.min(*threshold);
                    walk(left, lower, upper, out);
                    upper[f] = saved;

                    let saved = lower[f];
                    lower[f] = saved.max(*threshold);
                    walk(right, lower, upper, out);
                    lower[f] = saved;
                }
            }
        }
        let mut lower = vec![f64::NEG_INFINITY; self.n_features];
        let mut upper = vec![f64::INFINITY; self.n_features];
        let mut out = Vec::new();
        walk(&self.root, &mut lower, &mut upper, &mut out);
        out
    }
}

/// Half-open box `lower <= x < upper` with a weight.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rectangle {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub coefficient: f64,
}

impl Rectangle {
    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .all(|(v, (lo, hi))| lo <= v && v < hi)
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }
}

/// Per-feature row orderings, computed once and reused across boosting rounds.
#[derive(Debug, Clone)]
pub struct SortedColumns {
    order: Vec<Vec<u32>>,
}

impl SortedColumns {
    pub fn new(features: ArrayView2<f64>) -> Self {
        let n = features.nrows();
        let order = features
            .columns()
            .into_iter()
            .map(|col| {
                let mut idx: Vec<u32> = (0..n as u32).collect();
                // stable, so equal values keep row order
                idx.sort_by(|&a, &b| col[a as usize].total_cmp(&col[b as usize]));
                idx
            })
            .collect();
        SortedColumns { order }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TreeParams {
    pub max_depth: usize,
    pub min_leaf: usize,
}

impl Default for TreeParams {
    fn default() -> Self {
        TreeParams {
            max_depth: 1,
            min_leaf: 1,
        }
    }
}

pub fn fit_tree(
    features: ArrayView2<f64>,
    targets: ArrayView1<f64>,
    max_depth: usize,
    min_leaf: usize,
) -> Result<RegressionTree> {
    if features.nrows() == 0 {
        return Err(Error::Empty("no rows to fit a tree on"));
    }
    if targets.len() != features.nrows() {
        return Err(Error::DimensionMismatch {
            expected: features.nrows(),
            found: targets.len(),
        });
    }
    if min_leaf == 0 {
        return Err(Error::Config("min_leaf must be at least 1".into()));
    }
    let sorted = SortedColumns::new(features);
    let targets: Vec<f64> = targets.to_vec();
    let (tree, _) = fit_presorted(
        features,
        &sorted,
        &targets,
        TreeParams {
            max_depth,
            min_leaf,
        },
    );
    Ok(tree)
}

/// Fits a tree and also returns its prediction for every training row.
pub(crate) fn fit_presorted(
    features: ArrayView2<f64>,
    sorted: &SortedColumns,
    targets: &[f64],
    params: TreeParams,
) -> (RegressionTree, Vec<f64>) {
    let n = features.nrows();
    let mut builder = Builder {
        features,
        targets,
        params,
        go_left: vec![false; n],
        fitted: vec![0.0; n],
    };
    let root = builder.grow(sorted.order.clone(), 0);
    let tree = RegressionTree {
        max_depth: params.max_depth,
        n_features: features.ncols(),
        root,
    };
    (tree, builder.fitted)
}

#[derive(Debug, Clone, Copy)]
struct Candidate {
    feature: usize,
    threshold: f64,
    /// Position within the feature's sorted node list where the right child starts.
    cut: usize,
    gain: f64,
}

struct Builder<'a> {
    features: ArrayView2<'a, f64>,
    targets: &'a [f64],
    params: TreeParams,
    go_left: Vec<bool>,
    fitted: Vec<f64>,
}

impl Builder<'_> {
    fn grow(&mut self, lists: Vec<Vec<u32>>, depth: usize) -> Node {
        let rows = &lists[0];
        let m = rows.len();
        let mean = rows.iter().map(|&i| self.targets[i as usize]).sum::<f64>() / m as f64;

        let split = if depth < self.params.max_depth && m >= 2 * self.params.min_leaf {
            self.best_split(&lists, mean)
        } else {
            None
        };

        let Some(split) = split else {
            for &i in rows {
                self.fitted[i as usize] = mean;
            }
            return Node::Leaf { value: mean };
        };

        let split_list = &lists[split.feature];
        for &i in &split_list[..split.cut] {
            self.go_left[i as usize] = true;
        }
        for &i in &split_list[split.cut..] {
            self.go_left[i as usize] = false;
        }
        let (mut left, mut right) = (
            Vec::with_capacity(lists.len()),
            Vec::with_capacity(lists.len()),
        );
        for list in &lists {
            let (l, r): (Vec<u32>, Vec<u32>) =
                list.iter().partition(|&&i| self.go_left[i as usize]);
            left.push(l);
            right.push(r);
        }
        drop(lists);
        let left = self.grow(left, depth + 1);
        let right = self.grow(right, depth + 1);
        Node::Split {
            feature: split.feature,
            threshold: split.threshold,
            left: Box::new(left),
            right: Box::new(right),
        }
    }

    fn best_split(&self, lists: &[Vec<u32>], mean: f64) -> Option<Candidate> {
        let rows = &lists[0];
        let m = rows.len();
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        let mut parent_sse = 0.0;
        for &i in rows {
            let y = self.targets[i as usize];
            lo = lo.min(y);
            hi = hi.max(y);
            parent_sse += (y - mean) * (y - mean);
        }
        if lo == hi || parent_sse <= 0.0 {
            return None;
        }
        let tol = SPLIT_REL_TOL * parent_sse;
        let min_leaf = self.params.min_leaf;

        let mut best: Option<Candidate> = None;
        for (feature, list) in lists.iter().enumerate() {
            let col = self.features.column(feature);
            // centred targets: the total is ~0 and the score is directly the SSE reduction
            let total: f64 = list.iter().map(|&i| self.targets[i as usize] - mean).sum();
            let mut left_sum = 0.0;
            for cut in 1..m {
                let prev = list[cut - 1] as usize;
                left_sum += self.targets[prev] - mean;
                let x_prev = col[prev];
                let x_here = col[list[cut] as usize];
                if !(x_prev < x_here) {
                    continue;
                }
                let (nl, nr) = (cut, m - cut);
                if nl < min_leaf || nr < min_leaf {
                    continue;
                }
                let right_sum = total - left_sum;
                let gain = left_sum * left_sum / nl as f64 + right_sum * right_sum / nr as f64
                    - total * total / m as f64;
                let better = match best {
                    None => gain > tol,
                    Some(b) => gain > b.gain + tol,
                };
                if better {
                    best = Some(Candidate {
                        feature,
                        threshold: x_here,
                        cut,
                        gain,
                    });
                }
            }
        }
        best
    }
}
