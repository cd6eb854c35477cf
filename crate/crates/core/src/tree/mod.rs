//! CART classification trees with probabilistic leaves and per-leaf,
//! per-class outcome statistics.
//!
//! Splits minimise the weighted Gini impurity of the two children over
//! candidate thresholds at midpoints between consecutive distinct feature
//! values. Samples with `x[feature] <= threshold` go left. Candidates are
//! compared with exact integer arithmetic, so equal-impurity splits are true
//! ties and resolve to the lowest feature index, then the lowest threshold.

mod export;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use export::TreeJson;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TreeHyperparams {
    pub max_depth: usize,
    pub min_leaf_fraction: f64,
    #[serde(default)]
    pub seed: u64,
}

impl Default for TreeHyperparams {
    fn default() -> Self {
        Self { max_depth: 4, min_leaf_fraction: 0.02, seed: 0 }
    }
}

impl TreeHyperparams {
    pub fn validate(&self) -> Result<()> {
        if self.max_depth < 1 {
            return Err(Error::InvalidHyperparams("max_depth must be at least 1".into()));
        }
        if !(self.min_leaf_fraction > 0.0 && self.min_leaf_fraction < 0.5) {
            return Err(Error::InvalidHyperparams(format!(
                "min_leaf_fraction must lie in (0, 0.5), got {}",
                self.min_leaf_fraction
            )));
        }
        Ok(())
    }

    /// Minimum samples per leaf for a training set of size `n`.
    pub fn min_leaf_samples(&self, n: usize) -> usize {
        // the epsilon absorbs representation error, e.g. 0.01 * 200
        ((self.min_leaf_fraction * n as f64 - 1e-9).ceil() as usize).max(1)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitNode {
    pub feature: usize,
    pub threshold: f64,
    pub left: usize,
    pub right: usize,
    pub counts: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LeafNode {
    /// Leaf id, numbered in pre-order from 0.
    pub id: usize,
    pub counts: Vec<u64>,
    pub outcome_sum: Vec<f64>,
    pub outcome_count: Vec<u64>,
}

impl LeafNode {
    pub fn n(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn probabilities(&self) -> Vec<f64> {
        let n = self.n() as f64;
        self.counts.iter().map(|&c| c as f64 / n).collect()
    }

    /// Average outcome of class `c` in this leaf, or `None` when no sample
    /// of that class carried an outcome.
    pub fn outcome_avg(&self, c: usize) -> Option<f64> {
        match self.outcome_count.get(c) {
            Some(&n) if n > 0 => Some(self.outcome_sum[c] / n as f64),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    Split(SplitNode),
    Leaf(LeafNode),
}

impl Node {
    pub fn counts(&self) -> &[u64] {
        match self {
            Node::Split(s) => &s.counts,
            Node::Leaf(l) => &l.counts,
        }
    }
}

/// A fitted tree. Nodes are stored in pre-order; the root is node 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "TreeJson", try_from = "TreeJson")]
pub struct DecisionTree {
    nodes: Vec<Node>,
    n_classes: usize,
    n_features: usize,
    depth: usize,
    feature_names: Vec<String>,
}

/// A candidate split and the weighted Gini impurity of its children.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitCandidate {
    pub feature: usize,
    pub threshold: f64,
    pub weighted_impurity: f64,
}

pub fn gini(counts: &[u64]) -> f64 {
    let n: u64 = counts.iter().sum();
    if n == 0 {
        return 0.0;
    }
    let n = n as f64;
    1.0 - counts.iter().map(|&c| (c as f64 / n).powi(2)).sum::<f64>()
}

fn class_counts(y: &[usize], idx: &[usize], n_classes: usize) -> Vec<u64> {
    let mut counts = vec![0u64; n_classes];
    for &i in idx {
        counts[y[i]] += 1;
    }
    counts
}

fn midpoint(a: f64, b: f64) -> f64 {
    let m = a + (b - a) / 2.0;
    if m < b {
        m
    } else {
        a
    }
}

/// Best Gini split of the samples `idx`, honouring a minimum child size.
///
/// Maximises `SL/nL + SR/nR` where `S` is the sum of squared class counts of
/// a child, which is equivalent to minimising the weighted child impurity.
pub fn best_split<X: AsRef<[f64]>>(
    x: &[X],
    y: &[usize],
    idx: &[usize],
    n_classes: usize,
    min_leaf: usize,
) -> Option<SplitCandidate> {
    let n = idx.len();
    if n < 2 * min_leaf.max(1) {
        return None;
    }
    let n_features = x[idx[0]].as_ref().len();
    let total = class_counts(y, idx, n_classes);
    let total_sq: u64 = total.iter().map(|c| c * c).sum();

    // (feature, position of last left sample, numerator, denominator)
    let mut best: Option<(usize, f64, u128, u128)> = None;
    let mut pairs: Vec<(f64, usize)> = Vec::with_capacity(n);
    let mut left = vec![0u64; n_classes];
    let mut right = vec![0u64; n_classes];
    for f in 0..n_features {
        pairs.clear();
        pairs.extend(idx.iter().map(|&i| (x[i].as_ref()[f], y[i])));
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        left.iter_mut().for_each(|c| *c = 0);
        right.copy_from_slice(&total);
        let (mut sl, mut sr) = (0u64, total_sq);
        for i in 0..n - 1 {
            let c = pairs[i].1;
            sl += 2 * left[c] + 1;
            left[c] += 1;
            sr -= 2 * right[c] - 1;
            right[c] -= 1;
            let (nl, nr) = ((i + 1) as u64, (n - i - 1) as u64);
            if nl < min_leaf as u64 {
                continue;
            }
            if nr < min_leaf as u64 {
                break;
            }
            if pairs[i].0 >= pairs[i + 1].0 {
                continue;
            }
            let num = sl as u128 * nr as u128 + sr as u128 * nl as u128;
            let den = nl as u128 * nr as u128;
            let better = match best {
                None => true,
                Some((_, _, bn, bd)) => num * bd > bn * den,
            };
            if better {
                best = Some((f, midpoint(pairs[i].0, pairs[i + 1].0), num, den));
            }
        }
    }
    best.map(|(feature, threshold, num, den)| SplitCandidate {
        feature,
        threshold,
        weighted_impurity: 1.0 - (num as f64 / den as f64) / n as f64,
    })
}

struct Builder<'a, X> {
    x: &'a [X],
    y: &'a [usize],
    n_classes: usize,
    max_depth: usize,
    min_leaf: usize,
    nodes: Vec<Node>,
    n_leaves: usize,
    depth: usize,
}

impl<X: AsRef<[f64]>> Builder<'_, X> {
    fn leaf(&mut self, counts: Vec<u64>, depth: usize) -> usize {
        let id = self.n_leaves;
        self.n_leaves += 1;
        self.depth = self.depth.max(depth);
        self.nodes.push(Node::Leaf(LeafNode {
            id,
            counts,
            outcome_sum: vec![0.0; self.n_classes],
            outcome_count: vec![0; self.n_classes],
        }));
        self.nodes.len() - 1
    }

    fn build(&mut self, idx: &mut [usize], depth: usize) -> usize {
        let counts = class_counts(self.y, idx, self.n_classes);
        let pure = counts.iter().filter(|&&c| c > 0).count() <= 1;
        if pure || depth >= self.max_depth {
            return self.leaf(counts, depth);
        }
        let Some(split) = best_split(self.x, self.y, idx, self.n_classes, self.min_leaf) else {
            return self.leaf(counts, depth);
        };
        // stable partition keeps child sample order deterministic
        let (mut l, mut r): (Vec<usize>, Vec<usize>) =
            idx.iter().partition(|&&i| self.x[i].as_ref()[split.feature] <= split.threshold);
        let at = self.nodes.len();
        self.nodes.push(Node::Leaf(LeafNode { id: usize::MAX, counts: vec![], outcome_sum: vec![], outcome_count: vec![] }));
        let left = self.build(&mut l, depth + 1);
        let right = self.build(&mut r, depth + 1);
        self.nodes[at] = Node::Split(SplitNode { feature: split.feature, threshold: split.threshold, left, right, counts });
        at
    }
}

impl DecisionTree {
    /// Fits a tree to rows `x` with class labels `y` in `0..n_classes`.
    pub fn fit<X: AsRef<[f64]>>(x: &[X], y: &[usize], n_classes: usize, hp: &TreeHyperparams) -> Result<Self> {
        hp.validate()?;
        if x.is_empty() {
            return Err(Error::EmptyInput("tree training set"));
        }
        if x.len() != y.len() {
            return Err(Error::DimensionMismatch { expected: x.len(), got: y.len() });
        }
        if n_classes == 0 {
            return Err(Error::InvalidHyperparams("n_classes must be positive".into()));
        }
        let n_features = x[0].as_ref().len();
        for (row, &label) in x.iter().zip(y) {
            let row = row.as_ref();
            if row.len() != n_features {
                return Err(Error::DimensionMismatch { expected: n_features, got: row.len() });
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::Validation("tree inputs must be finite".into()));
            }
            if label >= n_classes {
                return Err(Error::Validation(format!("class label {label} >= n_classes {n_classes}")));
            }
        }
        let mut builder = Builder {
            x,
            y,
            n_classes,
            max_depth: hp.max_depth,
            min_leaf: hp.min_leaf_samples(x.len()),
            nodes: Vec::new(),
            n_leaves: 0,
            depth: 0,
        };
        let mut idx: Vec<usize> = (0..x.len()).collect();
        builder.build(&mut idx, 0);
        Ok(Self {
            nodes: builder.nodes,
            n_classes,
            n_features,
            depth: builder.depth,
            feature_names: (0..n_features).map(|j| format!("x{j}")).collect(),
        })
    }

    pub fn with_feature_names(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.n_features {
            return Err(Error::DimensionMismatch { expected: self.n_features, got: names.len() });
        }
        self.feature_names = names;
        Ok(self)
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn n_leaves(&self) -> usize {
        self.leaves().count()
    }

    pub fn leaves(&self) -> impl Iterator<Item = &LeafNode> {
        self.nodes.iter().filter_map(|n| match n {
            Node::Leaf(l) => Some(l),
            Node::Split(_) => None,
        })
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.n_features {
            return Err(Error::DimensionMismatch { expected: self.n_features, got: x.len() });
        }
        Ok(())
    }

    /// Node indices from the root to the reached leaf.
    pub fn path(&self, x: &[f64]) -> Result<Vec<usize>> {
        self.check_dim(x)?;
        let mut at = 0;
        let mut path = vec![0];
        while let Node::Split(s) = &self.nodes[at] {
            at = if x[s.feature] <= s.threshold { s.left } else { s.right };
            path.push(at);
        }
        Ok(path)
    }

    fn leaf_node_index(&self, x: &[f64]) -> Result<usize> {
        self.check_dim(x)?;
        let mut at = 0;
        while let Node::Split(s) = &self.nodes[at] {
            at = if x[s.feature] <= s.threshold { s.left } else { s.right };
        }
        Ok(at)
    }

    pub fn leaf(&self, x: &[f64]) -> Result<&LeafNode> {
        match &self.nodes[self.leaf_node_index(x)?] {
            Node::Leaf(l) => Ok(l),
            Node::Split(_) => unreachable!("routing ends at a leaf"),
        }
    }

    pub fn leaf_index(&self, x: &[f64]) -> Result<usize> {
        Ok(self.leaf(x)?.id)
    }

    /// Empirical class distribution of the reached leaf.
    pub fn predict_proba(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.leaf(x)?.probabilities())
    }

    /// Copy of the tree whose leaves hold per-class outcome sums and counts
    /// tallied from `(x, y, outcomes)`.
    pub fn attach_outcomes<X: AsRef<[f64]>>(&self, x: &[X], y: &[usize], outcomes: &[f64]) -> Result<Self> {
        if x.len() != y.len() || x.len() != outcomes.len() {
            return Err(Error::DimensionMismatch { expected: x.len(), got: y.len().min(outcomes.len()) });
        }
        let mut tree = self.clone();
        for node in &mut tree.nodes {
            if let Node::Leaf(l) = node {
                l.outcome_sum = vec![0.0; self.n_classes];
                l.outcome_count = vec![0; self.n_classes];
            }
        }
        for ((row, &c), &o) in x.iter().zip(y).zip(outcomes) {
            if c >= self.n_classes {
                return Err(Error::Validation(format!("class label {c} >= n_classes {}", self.n_classes)));
            }
            let at = tree.leaf_node_index(row.as_ref())?;
            if let Node::Leaf(l) = &mut tree.nodes[at] {
                l.outcome_sum[c] += o;
                l.outcome_count[c] += 1;
            }
        }
        Ok(tree)
    }
}
