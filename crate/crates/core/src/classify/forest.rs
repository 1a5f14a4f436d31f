//! Bagged CART classification forest.
//!
//! Each tree is grown on a bootstrap sample with Gini impurity, trying
//! `floor(sqrt(p))` randomly chosen features per split (more only when none of
//! those admits a split honoring `min_leaf`). Trees are grown to purity or
//! until no valid split remains; impure nodes split even when the best split
//! does not lower impurity, so interactions such as XOR stay learnable.
//! Prediction averages the leaf class distributions.

use rand::seq::SliceRandom;
use rand::Rng as _;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::rng;

pub const DEFAULT_TREES: usize = 50;
pub const DEFAULT_MIN_LEAF: usize = 5;

#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        probs: Vec<f64>,
    },
}

/// Nodes in preorder; the root is node 0. `x[feature] <= threshold` goes left.
#[derive(Debug, Clone, PartialEq)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn leaf_probs(&self, x: &[f64]) -> &[f64] {
        let mut at = 0;
        loop {
            match &self.nodes[at] {
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => at = if x[*feature] <= *threshold { *left } else { *right },
                Node::Leaf { probs } => return probs,
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn go(t: &Tree, at: usize) -> usize {
            match &t.nodes[at] {
                Node::Split { left, right, .. } => 1 + go(t, *left).max(go(t, *right)),
                Node::Leaf { .. } => 0,
            }
        }
        go(self, 0)
    }
}

/// Node still to grow: sample, depth, parent slot to patch `(parent, is_left)`.
type Pending = (Vec<usize>, usize, Option<(usize, bool)>);

#[derive(Debug, Clone, PartialEq)]
pub struct ForestModel {
    pub trees: Vec<Tree>,
    pub min_leaf: usize,
    pub feature_names: Vec<String>,
    pub class_names: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ForestParams {
    pub n_trees: usize,
    pub min_leaf: usize,
    /// Features tried per split; `None` means `floor(sqrt(p))`.
    pub max_features: Option<usize>,
    /// Draw a bootstrap sample per tree (disable to fit single exact trees).
    pub bootstrap: bool,
    pub max_depth: Option<usize>,
    pub seed: u64,
}

impl Default for ForestParams {
    fn default() -> Self {
        ForestParams {
            n_trees: DEFAULT_TREES,
            min_leaf: DEFAULT_MIN_LEAF,
            max_features: None,
            bootstrap: true,
            max_depth: None,
            seed: 0,
        }
    }
}

impl ForestModel {
    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    pub fn n_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn predict_proba(&self, x: &[f64]) -> Vec<f64> {
        let mut p = vec![0.0; self.n_classes()];
        for t in &self.trees {
            for (acc, v) in p.iter_mut().zip(t.leaf_probs(x)) {
                *acc += v;
            }
        }
        let n = self.trees.len() as f64;
        p.iter_mut().for_each(|v| *v /= n);
        p
    }

    pub fn predict(&self, x: &[f64]) -> usize {
        argmax(&self.predict_proba(x))
    }
}

/// Index of the largest value; lowest index on ties.
pub fn argmax(p: &[f64]) -> usize {
    p.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |b, (i, &v)| if v > b.1 { (i, v) } else { b })
        .0
}

struct Grower<'a> {
    x: &'a [Vec<f64>],
    y: &'a [usize],
    n_classes: usize,
    n_features: usize,
    mtry: usize,
    min_leaf: usize,
    max_depth: usize,
}

struct BestSplit {
    feature: usize,
    threshold: f64,
    score: f64,
}

impl Grower<'_> {
    fn class_counts(&self, idx: &[usize]) -> Vec<usize> {
        let mut c = vec![0; self.n_classes];
        for &i in idx {
            c[self.y[i]] += 1;
        }
        c
    }

    /// Best boundary for one feature, scored by `sum_c l_c^2/n_l + sum_c r_c^2/n_r`
    /// (larger is purer; equivalent to minimizing weighted Gini).
    fn best_on_feature(
        &self,
        f: usize,
        idx: &[usize],
        total: &[usize],
        buf: &mut Vec<(f64, usize)>,
    ) -> Option<(f64, f64)> {
        buf.clear();
        buf.extend(idx.iter().map(|&i| (self.x[i][f], self.y[i])));
        buf.sort_unstable_by(|a, b| a.0.total_cmp(&b.0));
        let n = buf.len();
        if buf[0].0 == buf[n - 1].0 {
            return None;
        }
        let mut left = vec![0usize; self.n_classes];
        let mut left_sq = 0.0f64;
        let mut right_sq: f64 = total.iter().map(|&c| (c * c) as f64).sum();
        let mut right = total.to_vec();
        let mut best: Option<(f64, f64)> = None;
        for p in 1..n {
            let c = buf[p - 1].1;
            left_sq += (2 * left[c] + 1) as f64;
            left[c] += 1;
            right_sq -= (2 * right[c] - 1) as f64;
            right[c] -= 1;
            if p < self.min_leaf || n - p < self.min_leaf {
                continue;
            }
            let (lo, hi) = (buf[p - 1].0, buf[p].0);
            if lo == hi {
                continue;
            }
            let score = left_sq / p as f64 + right_sq / (n - p) as f64;
            if best.is_none_or(|b| score > b.0 + 1e-12) {
                let mid = lo + (hi - lo) / 2.0;
                let threshold = if mid < hi { mid } else { lo };
                best = Some((score, threshold));
            }
        }
        best
    }

    fn find_split(&self, idx: &[usize], total: &[usize], rng: &mut rng::Rng) -> Option<BestSplit> {
        let mut features: Vec<usize> = (0..self.n_features).collect();
        features.shuffle(rng);
        let mut buf = Vec::with_capacity(idx.len());
        let mut best: Option<BestSplit> = None;
        for (tried, &f) in features.iter().enumerate() {
            if tried >= self.mtry && best.is_some() {
                break;
            }
            if let Some((score, threshold)) = self.best_on_feature(f, idx, total, &mut buf) {
                if best.as_ref().is_none_or(|b| score > b.score + 1e-12) {
                    best = Some(BestSplit {
                        feature: f,
                        threshold,
                        score,
                    });
                }
            }
        }
        best
    }

    fn grow(&self, sample: Vec<usize>, rng: &mut rng::Rng) -> Tree {
        let mut nodes: Vec<Node> = Vec::new();
        let mut stack: Vec<Pending> = vec![(sample, 0, None)];
        while let Some((idx, depth, parent)) = stack.pop() {
            let id = nodes.len();
            if let Some((p, is_left)) = parent {
                if let Node::Split { left, right, .. } = &mut nodes[p] {
                    if is_left {
                        *left = id;
                    } else {
                        *right = id;
                    }
                }
            }
            let total = self.class_counts(&idx);
            let pure = total.iter().filter(|&&c| c > 0).count() <= 1;
            let split = if pure || idx.len() < 2 * self.min_leaf || depth >= self.max_depth {
                None
            } else {
                self.find_split(&idx, &total, rng)
            };
            match split {
                None => {
                    let n = idx.len() as f64;
                    nodes.push(Node::Leaf {
                        probs: total.iter().map(|&c| c as f64 / n).collect(),
                    });
                }
                Some(s) => {
                    let (l, r): (Vec<usize>, Vec<usize>) = idx
                        .iter()
                        .partition(|&&i| self.x[i][s.feature] <= s.threshold);
                    nodes.push(Node::Split {
                        feature: s.feature,
                        threshold: s.threshold,
                        left: usize::MAX,
                        right: usize::MAX,
                    });
                    // right pushed first so the left subtree is laid out next (preorder)
                    stack.push((r, depth + 1, Some((id, false))));
                    stack.push((l, depth + 1, Some((id, true))));
                }
            }
        }
        Tree { nodes }
    }
}

/// Train a forest on rows `x` with class indices `y` into `class_names`.
pub fn train_forest(
    x: &[Vec<f64>],
    y: &[usize],
    feature_names: &[String],
    class_names: &[String],
    params: &ForestParams,
) -> Result<ForestModel> {
    if x.len() != y.len() || x.is_empty() {
        return Err(Error::InvalidInput("training rows and labels must be non-empty and aligned".into()));
    }
    let p = feature_names.len();
    if p == 0 || x.iter().any(|r| r.len() != p) {
        return Err(Error::InvalidInput("row width differs from feature count".into()));
    }
    if class_names.len() < 2 {
        return Err(Error::InvalidInput("at least 2 classes are required".into()));
    }
    if params.n_trees == 0 || params.min_leaf == 0 {
        return Err(Error::InvalidInput("n_trees and min_leaf must be positive".into()));
    }
    let mut present = vec![false; class_names.len()];
    for &c in y {
        if c >= class_names.len() {
            return Err(Error::InvalidInput(format!("label {c} out of range")));
        }
        present[c] = true;
    }
    let missing: Vec<String> = class_names
        .iter()
        .zip(&present)
        .filter(|(_, &p)| !p)
        .map(|(n, _)| n.clone())
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingClasses(missing));
    }

    let grower = Grower {
        x,
        y,
        n_classes: class_names.len(),
        n_features: p,
        mtry: params
            .max_features
            .unwrap_or_else(|| ((p as f64).sqrt().floor() as usize).max(1))
            .clamp(1, p),
        min_leaf: params.min_leaf,
        max_depth: params.max_depth.unwrap_or(usize::MAX),
    };
    let n = x.len();
    let trees = (0..params.n_trees)
        .into_par_iter()
        .map(|t| {
            let mut r = rng::rng(params.seed, t as u64);
            let sample: Vec<usize> = if params.bootstrap {
                (0..n).map(|_| r.random_range(0..n)).collect()
            } else {
                (0..n).collect()
            };
            grower.grow(sample, &mut r)
        })
        .collect();
    Ok(ForestModel {
        trees,
        min_leaf: params.min_leaf,
        feature_names: feature_names.to_vec(),
        class_names: class_names.to_vec(),
    })
}
