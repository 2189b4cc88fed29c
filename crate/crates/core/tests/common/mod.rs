//! Reference implementations the library is checked against. Each one is the
//! slowest obvious way to compute the same quantity.
#![allow(dead_code)]

use cytobench::classifiers::{entropy, Split};
use cytobench::data::{BinaryLabel, Dataset};
use cytobench::metrics::{ConfusionMatrix, Metric};
use cytobench::nn::{Conv2d, Tensor};
use num_rational::Ratio;
use rand::Rng;

pub fn label(positive: bool) -> BinaryLabel {
    if positive {
        BinaryLabel::Abnormal
    } else {
        BinaryLabel::Normal
    }
}

pub fn random_labels(rng: &mut impl Rng, n: usize, p_abnormal: f64) -> Vec<BinaryLabel> {
    (0..n).map(|_| label(rng.random_bool(p_abnormal))).collect()
}

/// Per-sample counting, abnormal positive.
pub fn brute_confusion(pred: &[BinaryLabel], truth: &[BinaryLabel]) -> ConfusionMatrix {
    let (mut tp, mut tn, mut fp, mut fn_) = (0, 0, 0, 0);
    for i in 0..pred.len() {
        match (pred[i] == BinaryLabel::Abnormal, truth[i] == BinaryLabel::Abnormal) {
            (true, true) => tp += 1,
            (false, false) => tn += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
        }
    }
    ConfusionMatrix::new(tp, tn, fp, fn_)
}

/// Table formulas in exact rationals; F1 as the harmonic mean of P and R.
pub fn brute_rate(cm: &ConfusionMatrix, m: Metric) -> Option<Ratio<u64>> {
    let r = |a: u64, b: u64| (b > 0).then(|| Ratio::new(a, b));
    let (tp, tn, fp, fn_) = (cm.tp, cm.tn, cm.fp, cm.fn_);
    match m {
        Metric::Accuracy => r(tp + tn, tp + tn + fp + fn_),
        Metric::Recall => r(tp, tp + fn_),
        Metric::Precision => r(tp, tp + fp),
        Metric::Specificity => r(tn, tn + fp),
        Metric::F1 => {
            let p = r(tp, tp + fp)?;
            let rc = r(tp, tp + fn_)?;
            let sum = p + rc;
            (sum != Ratio::from_integer(0)).then(|| Ratio::from_integer(2) * p * rc / sum)
        }
    }
}

/// Sorts every training point by `Σ|d|^p` (monotone in the distance),
/// breaking ties by index, and votes over the first `k`; ties go abnormal.
pub fn knn_scan(points: &[Vec<f64>], labels: &[BinaryLabel], k: usize, p: f64, x: &[f64]) -> BinaryLabel {
    let mut d: Vec<(f64, usize)> = points
        .iter()
        .enumerate()
        .map(|(i, q)| (q.iter().zip(x).map(|(a, b)| (a - b).abs().powf(p)).sum(), i))
        .collect();
    d.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
    let abnormal = d[..k].iter().filter(|(_, i)| labels[*i] == BinaryLabel::Abnormal).count();
    label(2 * abnormal >= k)
}

/// Every (feature, midpoint) pair, first strictly best kept.
pub fn split_scan(data: &Dataset<f64>, rows: &[usize], features: &[usize]) -> Option<Split<f64>> {
    let count = |sel: &mut dyn Iterator<Item = usize>| {
        let mut c = [0usize; 2];
        for i in sel {
            c[data.labels[i].index()] += 1;
        }
        c
    };
    let parent = count(&mut rows.iter().copied());
    let n = rows.len() as f64;
    let mut feats = features.to_vec();
    feats.sort_unstable();
    let mut best: Option<Split<f64>> = None;
    for &f in &feats {
        let mut values: Vec<f64> = rows.iter().map(|&i| data.features[i][f]).collect();
        values.sort_by(|a, b| a.partial_cmp(b).unwrap());
        values.dedup();
        for w in values.windows(2) {
            let t = (w[0] + w[1]) / 2.0;
            let left = count(&mut rows.iter().copied().filter(|&i| data.features[i][f] <= t));
            let right = [parent[0] - left[0], parent[1] - left[1]];
            let nl = (left[0] + left[1]) as f64;
            let nr = (right[0] + right[1]) as f64;
            let gain = entropy::<f64>(&parent) - (nl / n) * entropy::<f64>(&left) - (nr / n) * entropy::<f64>(&right);
            if gain > 1e-12 && best.is_none_or(|b| gain > b.gain) {
                best = Some(Split { feature: f, threshold: t, gain });
            }
        }
    }
    best
}

/// `P(c) Π N(x_j; μ, σ²)` normalized, with two-pass moments.
pub fn gnb_posterior(data: &Dataset<f64>, x: &[f64], var_floor: f64) -> [f64; 2] {
    let mut joint = [0.0; 2];
    for (c, j) in joint.iter_mut().enumerate() {
        let rows: Vec<&Vec<f64>> = data
            .features
            .iter()
            .zip(&data.labels)
            .filter(|(_, y)| y.index() == c)
            .map(|(r, _)| r)
            .collect();
        let n = rows.len() as f64;
        let mut density = n / data.len() as f64;
        for f in 0..x.len() {
            let mean = rows.iter().map(|r| r[f]).sum::<f64>() / n;
            let var = (rows.iter().map(|r| (r[f] - mean).powi(2)).sum::<f64>() / n).max(var_floor);
            density *= (-(x[f] - mean).powi(2) / (2.0 * var)).exp() / (2.0 * std::f64::consts::PI * var).sqrt();
        }
        *j = density;
    }
    let s = joint[0] + joint[1];
    [joint[0] / s, joint[1] / s]
}

/// Exact soft-margin dual for a handful of points.
///
/// Every assignment of each multiplier to {0, free, C} is tried; for the
/// free set the stationarity equations plus `Σ αᵢyᵢ = 0` are solved
/// directly and the candidate is kept if it satisfies every KKT condition.
/// The multipliers are unique for a positive definite Gram matrix but the
/// bias need not be, so the hull of every KKT point's bias is returned. The
/// decision function is `Σ αᵢ yᵢ K(xᵢ, x) + b`.
pub struct DualSolution {
    pub alpha: Vec<f64>,
    pub b_low: f64,
    pub b_high: f64,
}

pub fn svm_dual(gram: &[Vec<f64>], y: &[f64], c: f64) -> DualSolution {
    let n = y.len();
    let q = |i: usize, j: usize| y[i] * y[j] * gram[i][j];
    let tol = 1e-9;
    let mut found: Option<DualSolution> = None;
    for code in 0..3usize.pow(n as u32) {
        let status: Vec<usize> = (0..n).map(|i| code / 3usize.pow(i as u32) % 3).collect();
        let free: Vec<usize> = (0..n).filter(|&i| status[i] == 1).collect();
        let mut alpha: Vec<f64> = status.iter().map(|&s| if s == 2 { c } else { 0.0 }).collect();
        let mut nu_fixed = None;
        if !free.is_empty() {
            let m = free.len() + 1;
            let mut a = vec![vec![0.0; m + 1]; m];
            for (r, &i) in free.iter().enumerate() {
                for (s, &j) in free.iter().enumerate() {
                    a[r][s] = q(i, j);
                }
                a[r][m - 1] = y[i];
                a[r][m] = 1.0 - (0..n).filter(|&j| status[j] == 2).map(|j| q(i, j) * c).sum::<f64>();
            }
            for (s, &j) in free.iter().enumerate() {
                a[m - 1][s] = y[j];
            }
            a[m - 1][m] = -(0..n).filter(|&j| status[j] == 2).map(|j| y[j] * c).sum::<f64>();
            let Some(sol) = solve(a) else { continue };
            for (s, &i) in free.iter().enumerate() {
                alpha[i] = sol[s];
            }
            nu_fixed = Some(sol[m - 1]);
        }
        if alpha.iter().any(|&a| a < -tol || a > c + tol) {
            continue;
        }
        if (0..n).map(|i| alpha[i] * y[i]).sum::<f64>().abs() > tol {
            continue;
        }
        // g_i + ν y_i must be ≥ 0 at 0, ≤ 0 at C, = 0 when free
        let g: Vec<f64> = (0..n).map(|i| (0..n).map(|j| q(i, j) * alpha[j]).sum::<f64>() - 1.0).collect();
        let (mut lo, mut hi) = (f64::NEG_INFINITY, f64::INFINITY);
        for i in 0..n {
            let bound = -g[i] * y[i];
            let at_zero = status[i] == 0;
            match status[i] {
                1 => {}
                _ => {
                    // y_i ν ≥ −g_i (at 0) or y_i ν ≤ −g_i (at C)
                    let lower = (y[i] > 0.0) == at_zero;
                    if lower {
                        lo = lo.max(bound);
                    } else {
                        hi = hi.min(bound);
                    }
                }
            }
        }
        if let Some(nu) = nu_fixed {
            if nu < lo - 1e-7 || nu > hi + 1e-7 {
                continue;
            }
            lo = nu;
            hi = nu;
        }
        if lo > hi + 1e-7 {
            continue;
        }
        match &mut found {
            None => {
                found = Some(DualSolution {
                    alpha,
                    b_low: lo,
                    b_high: hi,
                })
            }
            Some(f) => {
                assert!(f.alpha.iter().zip(&alpha).all(|(a, b)| (a - b).abs() < 1e-6));
                f.b_low = f.b_low.min(lo);
                f.b_high = f.b_high.max(hi);
            }
        }
    }
    found.expect("no KKT point found")
}

fn solve(mut a: Vec<Vec<f64>>) -> Option<Vec<f64>> {
    let m = a.len();
    for col in 0..m {
        let piv = (col..m).max_by(|&i, &j| a[i][col].abs().partial_cmp(&a[j][col].abs()).unwrap())?;
        if a[piv][col].abs() < 1e-12 {
            return None;
        }
        a.swap(col, piv);
        for r in 0..m {
            if r != col {
                let f = a[r][col] / a[col][col];
                let pivot = a[col].clone();
                for (v, pv) in a[r][col..].iter_mut().zip(&pivot[col..]) {
                    *v -= f * pv;
                }
            }
        }
    }
    Some((0..m).map(|i| a[i][m] / a[i][i]).collect())
}

/// Same-padding, stride-1 convolution as four nested loops over
/// output position, output channel, kernel offset and input channel.
pub fn conv_naive(input: &Tensor<f64>, conv: &Conv2d<f64>) -> Vec<f64> {
    let (h, w, cin) = (input.shape()[0], input.shape()[1], input.shape()[2]);
    let (k, cout) = (conv.kernel, conv.out_channels);
    let pad = (k / 2) as isize;
    let mut out = vec![0.0; h * w * cout];
    for y in 0..h {
        for x in 0..w {
            for o in 0..cout {
                let mut acc = conv.bias[o];
                for dy in 0..k {
                    for dx in 0..k {
                        let sy = y as isize + dy as isize - pad;
                        let sx = x as isize + dx as isize - pad;
                        if sy < 0 || sx < 0 || sy >= h as isize || sx >= w as isize {
                            continue;
                        }
                        for i in 0..cin {
                            let v = input.at(&[sy as usize, sx as usize, i]);
                            acc += v * conv.weights[((dy * k + dx) * cin + i) * cout + o];
                        }
                    }
                }
                out[(y * w + x) * cout + o] = acc;
            }
        }
    }
    out
}
