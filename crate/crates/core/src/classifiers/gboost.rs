//! Second-order gradient boosting of regression trees on the logistic loss.
//!
//! Each round computes per-sample gradients `g = p − y` and hessians
//! `h = p(1 − p)` at the current margin, grows a regression tree by exact
//! greedy enumeration of the regularized split gain, and adds its leaf
//! weights `−G/(H + λ)` to the margin scaled by the learning rate.

use std::cmp::Ordering;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::logreg::{logit_loss, sigmoid};
use super::params::Reader;
use super::{check_training_set, FitError};
use crate::data::{BinaryLabel, Dataset};
use crate::Real;

/// Optimal leaf weight `−G / (H + λ)`.
pub fn gb_leaf_weight<F: Real>(g: F, h: F, lambda: F) -> F {
    if g == F::zero() {
        return F::zero();
    }
    -g / (h + lambda)
}

/// Structure-score improvement of a split, minus the complexity penalty:
/// `½[G_L²/(H_L+λ) + G_R²/(H_R+λ) − (G_L+G_R)²/(H_L+H_R+λ)] − γ`.
pub fn gb_split_gain<F: Real>(gl: F, hl: F, gr: F, hr: F, lambda: F, gamma: F) -> F {
    let score = |g: F, h: F| g * g / (h + lambda);
    F::lit(0.5) * (score(gl, hl) + score(gr, hr) - score(gl + gr, hl + hr)) - gamma
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GbParams {
    pub n_rounds: usize,
    pub eta: f64,
    pub lambda: f64,
    pub gamma: f64,
    pub max_depth: usize,
}

impl Default for GbParams {
    fn default() -> Self {
        GbParams {
            n_rounds: 100,
            eta: 0.1,
            lambda: 1.0,
            gamma: 0.0,
            max_depth: 4,
        }
    }
}

impl GbParams {
    pub const NAMES: &'static [&'static str] = &["n_rounds", "eta", "lambda", "gamma", "max_depth"];

    pub(crate) fn read(r: &Reader) -> Result<Self, FitError> {
        let d = Self::default();
        Ok(GbParams {
            n_rounds: r.count("n_rounds", d.n_rounds, 0)?,
            eta: r.real("eta", d.eta, "in [0, 1]", |v| (0.0..=1.0).contains(&v))?,
            lambda: r.real("lambda", d.lambda, "non-negative", |v| v >= 0.0)?,
            gamma: r.real("gamma", d.gamma, "non-negative", |v| v >= 0.0)?,
            max_depth: r.count("max_depth", d.max_depth, 1)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "F: Real")]
pub enum GbNode<F> {
    Split {
        feature: usize,
        threshold: F,
        left: usize,
        right: usize,
    },
    Leaf {
        weight: F,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "F: Real")]
pub struct RegressionTree<F> {
    pub nodes: Vec<GbNode<F>>,
}

impl<F: Real> RegressionTree<F> {
    pub fn eval(&self, x: &[F]) -> F {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                GbNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if x[*feature] <= *threshold { *left } else { *right },
                GbNode::Leaf { weight } => return *weight,
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "F: Real")]
pub struct GbModel<F> {
    /// Initial margin: log-odds of the training abnormal rate.
    pub base_score: F,
    pub eta: F,
    pub lambda: F,
    pub gamma: F,
    pub max_depth: usize,
    pub trees: Vec<RegressionTree<F>>,
    pub n_features: usize,
}

impl<F: Real> GbModel<F> {
    /// `base + η · Σ tree(x)`.
    pub fn margin(&self, x: &[F]) -> F {
        self.base_score + self.eta * self.trees.iter().map(|t| t.eval(x)).sum::<F>()
    }

    pub fn predict_proba(&self, x: &[F]) -> F {
        sigmoid(self.margin(x))
    }

    /// Non-negative margins map to abnormal.
    pub fn predict(&self, x: &[F]) -> BinaryLabel {
        BinaryLabel::from_positive(self.margin(x) >= F::zero())
    }
}

/// Fits the booster and returns the mean training log-loss at the base
/// score followed by the loss after every round.
pub fn fit_gboost<F: Real>(data: &Dataset<F>, params: &GbParams) -> Result<(GbModel<F>, Vec<F>), FitError> {
    check_training_set(data)?;
    let n = data.len();
    let [normal, abnormal] = data.label_counts();
    let rate = (abnormal as f64 / n as f64).clamp(1e-12, 1.0 - 1e-12);
    let base = F::lit((rate / (1.0 - rate)).ln());
    let mut model = GbModel {
        base_score: base,
        eta: F::lit(params.eta),
        lambda: F::lit(params.lambda),
        gamma: F::lit(params.gamma),
        max_depth: params.max_depth,
        trees: Vec::new(),
        n_features: data.n_features(),
    };
    let mut margin = vec![base; n];
    let loss = |margin: &[F]| -> F {
        margin
            .iter()
            .zip(&data.labels)
            .map(|(&m, y)| logit_loss(m, y.is_positive()))
            .sum::<F>()
            / F::from_usize_lossy(n)
    };
    let mut history = vec![loss(&margin)];
    if normal == 0 || abnormal == 0 {
        return Ok((model, history));
    }
    // Presorted row order per feature, reused by every node.
    let order: Vec<Vec<usize>> = (0..model.n_features)
        .map(|f| {
            let mut idx: Vec<usize> = (0..n).collect();
            idx.sort_by(|&a, &b| {
                data.features[a][f]
                    .partial_cmp(&data.features[b][f])
                    .unwrap_or(Ordering::Equal)
                    .then(a.cmp(&b))
            });
            idx
        })
        .collect();
    let mut g = vec![F::zero(); n];
    let mut h = vec![F::zero(); n];
    for round in 0..params.n_rounds {
        for i in 0..n {
            let p = sigmoid(margin[i]);
            g[i] = p - data.labels[i].target::<F>();
            h[i] = p * (F::one() - p);
        }
        let tree = grow_regression_tree(data, &order, &g, &h, &model);
        for (i, m) in margin.iter_mut().enumerate() {
            *m += model.eta * tree.eval(&data.features[i]);
        }
        model.trees.push(tree);
        let l = loss(&margin);
        if !l.is_finite() {
            return Err(FitError::NonFiniteLoss { iteration: round });
        }
        history.push(l);
    }
    Ok((model, history))
}

struct Candidate<F> {
    feature: usize,
    threshold: F,
    gain: F,
}

fn grow_regression_tree<F: Real>(
    data: &Dataset<F>,
    order: &[Vec<usize>],
    g: &[F],
    h: &[F],
    model: &GbModel<F>,
) -> RegressionTree<F> {
    let n = data.len();
    let mut nodes = vec![GbNode::Leaf { weight: F::zero() }];
    // node id per row; rows not in an open node are parked at usize::MAX
    let mut stack: Vec<(usize, Vec<bool>, usize)> = vec![(0, vec![true; n], 0)];
    while let Some((slot, member, depth)) = stack.pop() {
        let (gs, hs) = member
            .iter()
            .enumerate()
            .filter(|(_, &m)| m)
            .fold((F::zero(), F::zero()), |(a, b), (i, _)| (a + g[i], b + h[i]));
        let weight = gb_leaf_weight(gs, hs, model.lambda);
        let split = if depth < model.max_depth {
            best_gb_split(data, order, g, h, &member, gs, hs, model)
        } else {
            None
        };
        match split {
            None => nodes[slot] = GbNode::Leaf { weight },
            Some(c) => {
                let mut left = vec![false; n];
                let mut right = vec![false; n];
                for i in 0..n {
                    if member[i] {
                        if data.features[i][c.feature] <= c.threshold {
                            left[i] = true;
                        } else {
                            right[i] = true;
                        }
                    }
                }
                let (li, ri) = (nodes.len(), nodes.len() + 1);
                nodes.push(GbNode::Leaf { weight });
                nodes.push(GbNode::Leaf { weight });
                nodes[slot] = GbNode::Split {
                    feature: c.feature,
                    threshold: c.threshold,
                    left: li,
                    right: ri,
                };
                stack.push((ri, right, depth + 1));
                stack.push((li, left, depth + 1));
            }
        }
    }
    RegressionTree { nodes }
}

/// Exact greedy search, parallel over features. Only splits with strictly
/// positive gain (after `γ`) are returned; ties keep the lowest feature,
/// then the lowest threshold.
#[allow(clippy::too_many_arguments)]
fn best_gb_split<F: Real>(
    data: &Dataset<F>,
    order: &[Vec<usize>],
    g: &[F],
    h: &[F],
    member: &[bool],
    gs: F,
    hs: F,
    model: &GbModel<F>,
) -> Option<Candidate<F>> {
    let per_feature: Vec<Option<Candidate<F>>> = order
        .par_iter()
        .enumerate()
        .map(|(f, idx)| {
            let rows: Vec<usize> = idx.iter().copied().filter(|&i| member[i]).collect();
            let mut best: Option<Candidate<F>> = None;
            let (mut gl, mut hl) = (F::zero(), F::zero());
            for w in 0..rows.len().saturating_sub(1) {
                let i = rows[w];
                gl += g[i];
                hl += h[i];
                let (v, next) = (data.features[i][f], data.features[rows[w + 1]][f]);
                if v == next {
                    continue;
                }
                let gain = gb_split_gain(gl, hl, gs - gl, hs - hl, model.lambda, model.gamma);
                if gain > F::zero() && best.as_ref().is_none_or(|b| gain > b.gain) {
                    best = Some(Candidate {
                        feature: f,
                        threshold: (v + next) / F::lit(2.0),
                        gain,
                    });
                }
            }
            best
        })
        .collect();
    per_feature
        .into_iter()
        .flatten()
        .fold(None, |acc: Option<Candidate<F>>, c| match acc {
            Some(a) if a.gain >= c.gain => Some(a),
            _ => Some(c),
        })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth_blobs;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};

    #[test]
    fn leaf_weight_values() {
        assert_abs_diff_eq!(gb_leaf_weight(2.0f64, 4.0, 1.0), -0.4, epsilon = 1e-15);
        assert_eq!(gb_leaf_weight(0.0f64, 4.0, 1.0), 0.0);
        assert!(gb_leaf_weight(3.0f64, 2.0, 1e12).abs() < 1e-11);
    }

    #[test]
    fn split_gain_values() {
        assert_abs_diff_eq!(gb_split_gain(1.5f64, 2.0, 1.5, 2.0, 0.0, 0.3), -0.3, epsilon = 1e-12);
        assert!(gb_split_gain(-2.0f64, 1.0, 0.0, 1.0, 1.0, 0.0) > 0.0);
        assert_abs_diff_eq!(gb_split_gain(1.5f64, 2.0, 1.5, 2.0, 1.0, 0.0), -0.15, epsilon = 1e-12);
    }

    /// Regularized objective `Σ_leaves [G w + ½ (H+λ) w²] + γ·leaves` at the
    /// optimal weights, evaluated directly from per-sample values.
    fn objective(g: &[f64], h: &[f64], groups: &[&[usize]], lambda: f64, gamma: f64) -> f64 {
        groups
            .iter()
            .map(|idx| {
                let gs: f64 = idx.iter().map(|&i| g[i]).sum();
                let hs: f64 = idx.iter().map(|&i| h[i]).sum();
                let w = -gs / (hs + lambda);
                gs * w + 0.5 * (hs + lambda) * w * w + gamma
            })
            .sum()
    }

    #[test]
    fn split_gain_matches_objective_difference() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        for _ in 0..200 {
            let n = rng.random_range(2..30);
            let g: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let h: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..0.25)).collect();
            let cut = rng.random_range(1..n);
            let lambda = rng.random_range(0.0..3.0);
            let gamma = rng.random_range(0.0..0.5);
            let all: Vec<usize> = (0..n).collect();
            let (l, r) = all.split_at(cut);
            let before = objective(&g, &h, &[&all], lambda, gamma);
            let after = objective(&g, &h, &[l, r], lambda, gamma);
            let gl: f64 = l.iter().map(|&i| g[i]).sum();
            let hl: f64 = l.iter().map(|&i| h[i]).sum();
            let gr: f64 = r.iter().map(|&i| g[i]).sum();
            let hr: f64 = r.iter().map(|&i| h[i]).sum();
            let gain = gb_split_gain(gl, hl, gr, hr, lambda, gamma);
            assert_abs_diff_eq!(gain, before - after, epsilon = 1e-10);
        }
    }

    #[test]
    fn separable_blobs_and_decreasing_loss() {
        let data = synth_blobs::<f64>(50, 4, 10.0, 3).unwrap().to_dataset();
        let params = GbParams {
            n_rounds: 50,
            ..GbParams::default()
        };
        let (m, hist) = fit_gboost(&data, &params).unwrap();
        for (x, y) in data.features.iter().zip(&data.labels) {
            assert_eq!(m.predict(x), *y);
        }
        assert_eq!(hist.len(), 51);
        assert!(hist[50] < hist[1]);
        for w in hist[..11].windows(2) {
            assert!(w[1] < w[0]);
        }
    }

    #[test]
    fn zero_learning_rate_predicts_majority() {
        let mut t = synth_blobs::<f64>(10, 2, 2.0, 3).unwrap().to_dataset();
        t.labels[0] = BinaryLabel::Abnormal;
        let (m, _) = fit_gboost(
            &t,
            &GbParams {
                eta: 0.0,
                n_rounds: 5,
                ..GbParams::default()
            },
        )
        .unwrap();
        for x in &t.features {
            assert_eq!(m.predict(x), BinaryLabel::Abnormal);
            assert_abs_diff_eq!(m.margin(x), m.base_score, epsilon = 0.0);
        }
    }

    #[test]
    fn single_class_returns_base_only() {
        let data = Dataset::new(vec![vec![1.0f64], vec![2.0]], vec![BinaryLabel::Normal; 2]).unwrap();
        let (m, hist) = fit_gboost(&data, &GbParams::default()).unwrap();
        assert!(m.trees.is_empty());
        assert!(m.base_score.is_finite() && m.base_score < 0.0);
        assert_eq!(hist.len(), 1);
        assert_eq!(m.predict(&[1.5]), BinaryLabel::Normal);
    }
}
