//! Least-squares gradient boosting over depth-limited regression trees.
//!
//! Each round fits a tree to the current residuals with exact greedy splits
//! (threshold at the midpoint between adjacent distinct values, `x <= t` goes
//! left) and adds `learning_rate ×` its output. Row subsampling without
//! replacement is driven by the fit seed.

use std::collections::BTreeMap;

use ndarray::Array2;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::EnsembleError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbtParams {
    pub n_trees: usize,
    pub max_depth: usize,
    pub learning_rate: f64,
    /// Fraction of rows drawn (without replacement) per tree.
    pub subsample: f64,
    pub min_samples_leaf: usize,
}

impl Default for GbtParams {
    fn default() -> Self {
        Self { n_trees: 100, max_depth: 3, learning_rate: 0.1, subsample: 1.0, min_samples_leaf: 1 }
    }
}

impl GbtParams {
    pub(super) fn from_hyper(hyper: &BTreeMap<String, f64>) -> Result<Self, EnsembleError> {
        let mut p = Self::default();
        for (k, &v) in hyper {
            match k.as_str() {
                "n_trees" | "n_estimators" => p.n_trees = v as usize,
                "max_depth" => p.max_depth = v as usize,
                "learning_rate" => p.learning_rate = v,
                "subsample" => p.subsample = v,
                "min_samples_leaf" => p.min_samples_leaf = v as usize,
                _ => {
                    return Err(EnsembleError::UnknownHyper {
                        kind: "gradient_boosted_trees",
                        key: k.clone(),
                    })
                }
            }
        }
        let bad = |message: &str| EnsembleError::InvalidHyper {
            kind: "gradient_boosted_trees",
            message: message.to_string(),
        };
        if p.n_trees == 0 || p.max_depth == 0 || p.min_samples_leaf == 0 {
            return Err(bad("n_trees, max_depth and min_samples_leaf must be at least 1"));
        }
        if !(p.learning_rate > 0.0 && p.learning_rate.is_finite()) {
            return Err(bad("learning_rate must be positive"));
        }
        if !(p.subsample > 0.0 && p.subsample <= 1.0) {
            return Err(bad("subsample must be in (0, 1]"));
        }
        Ok(p)
    }

    pub(super) fn to_hyper(&self) -> BTreeMap<String, f64> {
        BTreeMap::from([
            ("n_trees".to_string(), self.n_trees as f64),
            ("max_depth".to_string(), self.max_depth as f64),
            ("learning_rate".to_string(), self.learning_rate),
            ("subsample".to_string(), self.subsample),
            ("min_samples_leaf".to_string(), self.min_samples_leaf as f64),
        ])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Node {
    Split { feature: usize, threshold: f64, left: usize, right: usize },
    Leaf { value: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn predict(&self, row: &[f64]) -> f64 {
        let mut at = 0;
        loop {
            match self.nodes[at] {
                Node::Leaf { value } => return value,
                Node::Split { feature, threshold, left, right } => {
                    at = if row[feature] <= threshold { left } else { right };
                }
            }
        }
    }
}

struct Builder<'a> {
    x: &'a Array2<f64>,
    r: &'a [f64],
    max_depth: usize,
    min_leaf: usize,
    nodes: Vec<Node>,
}

impl Builder<'_> {
    fn leaf(&mut self, idx: &[usize]) -> usize {
        let value = idx.iter().map(|&i| self.r[i]).sum::<f64>() / idx.len() as f64;
        self.nodes.push(Node::Leaf { value });
        self.nodes.len() - 1
    }

    /// Best (gain, feature, threshold) by squared-error reduction.
    fn best_split(&self, idx: &[usize]) -> Option<(f64, usize, f64)> {
        let n = idx.len();
        let total: f64 = idx.iter().map(|&i| self.r[i]).sum();
        let parent = total * total / n as f64;
        let mut best: Option<(f64, usize, f64)> = None;
        let mut sorted = idx.to_vec();
        for f in 0..self.x.ncols() {
            sorted.sort_by(|&a, &b| self.x[[a, f]].total_cmp(&self.x[[b, f]]).then(a.cmp(&b)));
            let mut left_sum = 0.0;
            for k in 0..n - 1 {
                left_sum += self.r[sorted[k]];
                let n_left = k + 1;
                let n_right = n - n_left;
                if n_left < self.min_leaf || n_right < self.min_leaf {
                    continue;
                }
                let lo = self.x[[sorted[k], f]];
                let hi = self.x[[sorted[k + 1], f]];
                if lo == hi {
                    continue;
                }
                let right_sum = total - left_sum;
                let gain = left_sum * left_sum / n_left as f64
                    + right_sum * right_sum / n_right as f64
                    - parent;
                if best.is_none_or(|(g, _, _)| gain > g) {
                    let mut threshold = lo / 2.0 + hi / 2.0;
                    if threshold >= hi {
                        threshold = lo;
                    }
                    best = Some((gain, f, threshold));
                }
            }
        }
        best.filter(|(g, _, _)| *g > 0.0)
    }

    fn grow(&mut self, idx: &[usize], depth: usize) -> usize {
        let pure = idx.iter().all(|&i| self.r[i] == self.r[idx[0]]);
        if depth >= self.max_depth || idx.len() < 2 * self.min_leaf || pure {
            return self.leaf(idx);
        }
        let Some((_, feature, threshold)) = self.best_split(idx) else {
            return self.leaf(idx);
        };
        let (l, r): (Vec<usize>, Vec<usize>) =
            idx.iter().partition(|&&i| self.x[[i, feature]] <= threshold);
        let at = self.nodes.len();
        self.nodes.push(Node::Leaf { value: 0.0 });
        let left = self.grow(&l, depth + 1);
        let right = self.grow(&r, depth + 1);
        self.nodes[at] = Node::Split { feature, threshold, left, right };
        at
    }
}

fn fit_tree(x: &Array2<f64>, r: &[f64], rows: &[usize], params: &GbtParams) -> Tree {
    let mut b = Builder {
        x,
        r,
        max_depth: params.max_depth,
        min_leaf: params.min_samples_leaf,
        nodes: Vec::new(),
    };
    b.grow(rows, 0);
    Tree { nodes: b.nodes }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbtModel {
    pub init: f64,
    pub learning_rate: f64,
    pub trees: Vec<Tree>,
}

impl GbtModel {
    pub fn fit(x: &Array2<f64>, y: &[f64], params: &GbtParams, seed: u64) -> Result<Self, EnsembleError> {
        let n = x.nrows();
        let init = y.iter().sum::<f64>() / n as f64;
        let mut f = vec![init; n];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n_sub = ((params.subsample * n as f64) as usize).clamp(1, n);
        let mut trees = Vec::with_capacity(params.n_trees);
        for _ in 0..params.n_trees {
            let residual: Vec<f64> = y.iter().zip(&f).map(|(y, f)| y - f).collect();
            let rows: Vec<usize> = if n_sub < n {
                let mut s = sample(&mut rng, n, n_sub).into_vec();
                s.sort_unstable();
                s
            } else {
                (0..n).collect()
            };
            let tree = fit_tree(x, &residual, &rows, params);
            for (i, fi) in f.iter_mut().enumerate() {
                let row: Vec<f64> = x.row(i).to_vec();
                *fi += params.learning_rate * tree.predict(&row);
            }
            trees.push(tree);
        }
        Ok(Self { init, learning_rate: params.learning_rate, trees })
    }

    pub fn predict(&self, row: &[f64]) -> f64 {
        let mut out = self.init;
        for t in &self.trees {
            out += self.learning_rate * t.predict(row);
        }
        out
    }
}
