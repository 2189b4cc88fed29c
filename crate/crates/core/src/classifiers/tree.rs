//! Entropy-criterion binary decision tree.

use std::cmp::Ordering;

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::params::Reader;
use super::{check_training_set, vote, FitError};
use crate::data::{BinaryLabel, Dataset};
use crate::Real;

/// Splits whose information gain does not exceed this are treated as
/// gainless; it absorbs rounding in `H(parent) − Σ w H(child)`.
pub const MIN_GAIN: f64 = 1e-12;

/// Shannon entropy in bits of a label histogram, with `0·log 0 = 0`.
pub fn entropy<F: Real>(counts: &[usize]) -> F {
    let total: usize = counts.iter().sum();
    if total == 0 {
        return F::zero();
    }
    let n = F::from_usize_lossy(total);
    counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = F::from_usize_lossy(c) / n;
            -p * p.log2()
        })
        .sum()
}

/// Information gain of splitting `parent` into `left` and `right`.
pub(crate) fn information_gain<F: Real>(parent: [usize; 2], left: [usize; 2], right: [usize; 2]) -> F {
    let n = F::from_usize_lossy(parent[0] + parent[1]);
    let nl = F::from_usize_lossy(left[0] + left[1]);
    let nr = F::from_usize_lossy(right[0] + right[1]);
    entropy::<F>(&parent) - (nl / n) * entropy::<F>(&left) - (nr / n) * entropy::<F>(&right)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Split<F> {
    pub feature: usize,
    /// Rows with `x[feature] <= threshold` go left.
    pub threshold: F,
    pub gain: F,
}

/// Best entropy split of the rows at `indices` over `features`, or `None`
/// when no candidate has positive gain (the node should be a leaf).
///
/// Candidate thresholds are midpoints between consecutive distinct values.
/// Ties keep the lowest feature index, then the lowest threshold.
pub fn best_split<F: Real>(
    data: &Dataset<F>,
    indices: &[usize],
    features: &[usize],
) -> Option<Split<F>> {
    best_split_min_leaf(data, indices, features, 1)
}

pub(crate) fn best_split_min_leaf<F: Real>(
    data: &Dataset<F>,
    indices: &[usize],
    features: &[usize],
    min_leaf: usize,
) -> Option<Split<F>> {
    let parent = counts_of(data, indices);
    if parent[0] == 0 || parent[1] == 0 {
        return None;
    }
    let n = indices.len();
    let mut best: Option<Split<F>> = None;
    let mut sorted: Vec<(F, BinaryLabel)> = Vec::with_capacity(n);
    let mut feats = features.to_vec();
    feats.sort_unstable();
    for &f in &feats {
        sorted.clear();
        sorted.extend(indices.iter().map(|&i| (data.features[i][f], data.labels[i])));
        sorted.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(Ordering::Equal));
        let mut left = [0usize; 2];
        for i in 0..n - 1 {
            left[sorted[i].1.index()] += 1;
            let (v, next) = (sorted[i].0, sorted[i + 1].0);
            if v == next || i + 1 < min_leaf || n - i - 1 < min_leaf {
                continue;
            }
            let right = [parent[0] - left[0], parent[1] - left[1]];
            let gain: F = information_gain(parent, left, right);
            if gain > F::lit(MIN_GAIN) && best.is_none_or(|b| gain > b.gain) {
                best = Some(Split {
                    feature: f,
                    threshold: (v + next) / F::lit(2.0),
                    gain,
                });
            }
        }
    }
    best
}

fn counts_of<F: Real>(data: &Dataset<F>, indices: &[usize]) -> [usize; 2] {
    let mut c = [0usize; 2];
    for &i in indices {
        c[data.labels[i].index()] += 1;
    }
    c
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TreeParams {
    /// `None` grows until leaves are pure or unsplittable.
    pub max_depth: Option<usize>,
    pub min_samples_leaf: usize,
}

impl Default for TreeParams {
    fn default() -> Self {
        TreeParams {
            max_depth: None,
            min_samples_leaf: 1,
        }
    }
}

impl TreeParams {
    pub const NAMES: &'static [&'static str] = &["max_depth", "min_samples_leaf"];

    pub(crate) fn read(r: &Reader) -> Result<Self, FitError> {
        Ok(TreeParams {
            max_depth: r.opt_count("max_depth")?,
            min_samples_leaf: r.count("min_samples_leaf", 1, 1)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "F: Real")]
pub enum TreeNode<F> {
    Split {
        feature: usize,
        threshold: F,
        left: usize,
        right: usize,
    },
    Leaf {
        label: BinaryLabel,
        /// `[normal, abnormal]` training counts that reached this leaf.
        counts: [usize; 2],
    },
}

/// Nodes in an arena; node 0 is the root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "F: Real")]
pub struct TreeModel<F> {
    pub nodes: Vec<TreeNode<F>>,
    pub n_features: usize,
}

impl<F: Real> TreeModel<F> {
    fn leaf(&self, x: &[F]) -> &TreeNode<F> {
        let mut node = &self.nodes[0];
        loop {
            match node {
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    node = if x[*feature] <= *threshold {
                        &self.nodes[*left]
                    } else {
                        &self.nodes[*right]
                    }
                }
                leaf => return leaf,
            }
        }
    }

    pub fn predict(&self, x: &[F]) -> BinaryLabel {
        match self.leaf(x) {
            TreeNode::Leaf { label, .. } => *label,
            TreeNode::Split { .. } => unreachable!("leaf() stops at leaves"),
        }
    }

    /// Abnormal fraction of the training samples in the reached leaf.
    pub fn predict_proba(&self, x: &[F]) -> F {
        match self.leaf(x) {
            TreeNode::Leaf { counts, .. } => {
                F::from_usize_lossy(counts[1]) / F::from_usize_lossy(counts[0] + counts[1])
            }
            TreeNode::Split { .. } => unreachable!("leaf() stops at leaves"),
        }
    }

    pub fn depth(&self) -> usize {
        fn walk<F>(nodes: &[TreeNode<F>], i: usize) -> usize {
            match &nodes[i] {
                TreeNode::Leaf { .. } => 0,
                TreeNode::Split { left, right, .. } => 1 + walk(nodes, *left).max(walk(nodes, *right)),
            }
        }
        walk(&self.nodes, 0)
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| matches!(n, TreeNode::Leaf { .. }))
            .count()
    }
}

pub fn fit_tree<F: Real>(data: &Dataset<F>, params: &TreeParams) -> Result<TreeModel<F>, FitError> {
    check_training_set(data)?;
    let indices: Vec<usize> = (0..data.len()).collect();
    Ok(grow(data, indices, params, None::<(usize, &mut rand_chacha::ChaCha8Rng)>))
}

/// Grows a tree on `indices` (duplicates allowed, as produced by bootstrap
/// resampling). With `feature_sampling = Some((m, rng))` each split
/// considers `m` features drawn without replacement.
pub(crate) fn grow<F: Real, R: Rng>(
    data: &Dataset<F>,
    indices: Vec<usize>,
    params: &TreeParams,
    mut feature_sampling: Option<(usize, &mut R)>,
) -> TreeModel<F> {
    let d = data.n_features();
    let all: Vec<usize> = (0..d).collect();
    let mut nodes: Vec<TreeNode<F>> = Vec::new();
    // (node slot, rows, depth)
    let mut stack = vec![(0usize, indices, 0usize)];
    nodes.push(TreeNode::Leaf {
        label: BinaryLabel::Abnormal,
        counts: [0, 0],
    });
    while let Some((slot, rows, depth)) = stack.pop() {
        let counts = counts_of(data, &rows);
        let leaf = TreeNode::Leaf {
            label: vote(counts[1], counts[0]),
            counts,
        };
        let can_split = params.max_depth.is_none_or(|m| depth < m)
            && rows.len() >= 2 * params.min_samples_leaf;
        let split = if can_split {
            let candidates = match feature_sampling.as_mut() {
                Some((m, rng)) if *m < d => {
                    let mut f = sample(&mut **rng, d, *m).into_vec();
                    f.sort_unstable();
                    f
                }
                _ => all.clone(),
            };
            best_split_min_leaf(data, &rows, &candidates, params.min_samples_leaf)
        } else {
            None
        };
        match split {
            None => nodes[slot] = leaf,
            Some(s) => {
                let (l, r): (Vec<usize>, Vec<usize>) = rows
                    .into_iter()
                    .partition(|&i| data.features[i][s.feature] <= s.threshold);
                let (li, ri) = (nodes.len(), nodes.len() + 1);
                nodes.push(leaf.clone());
                nodes.push(leaf);
                nodes[slot] = TreeNode::Split {
                    feature: s.feature,
                    threshold: s.threshold,
                    left: li,
                    right: ri,
                };
                // right first so the left subtree is numbered first
                stack.push((ri, r, depth + 1));
                stack.push((li, l, depth + 1));
            }
        }
    }
    TreeModel {
        nodes,
        n_features: d,
    }
}
