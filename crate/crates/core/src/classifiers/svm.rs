//! Soft-margin SVM trained by sequential minimal optimization.
//!
//! The dual is
//!
//! ```text
//! max W(α) = Σα_i − ½ ΣΣ α_i α_j y_i y_j K(x_i, x_j)
//! s.t. 0 ≤ α_i ≤ C,  Σ α_i y_i = 0
//! ```
//!
//! and is solved two multipliers at a time. The second multiplier is chosen
//! by the first-order heuristic (largest |E₁ − E₂| among unbound points),
//! falling back to scans over unbound and then all points. Outer passes
//! alternate between all points and unbound violators until a full pass
//! changes nothing or `max_passes` is reached.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::params::Reader;
use super::{check_training_set, FitError};
use crate::data::{BinaryLabel, Dataset};
use crate::scalar::{dot, squared_distance};
use crate::Real;

/// `exp(−γ‖a−b‖²)`.
pub fn rbf<F: Real>(a: &[F], b: &[F], gamma: F) -> F {
    (-gamma * squared_distance(a, b)).exp()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", bound = "F: Real")]
pub enum Kernel<F> {
    Rbf { gamma: F },
    Linear,
}

impl<F: Real> Kernel<F> {
    #[inline]
    pub fn eval(&self, a: &[F], b: &[F]) -> F {
        match *self {
            Kernel::Rbf { gamma } => rbf(a, b, gamma),
            Kernel::Linear => dot(a, b),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KernelChoice {
    Rbf,
    Linear,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SvmParams {
    pub c: f64,
    /// `None` selects `1 / (n_features · var(X))` at fit time.
    pub gamma: Option<f64>,
    pub tol: f64,
    pub max_passes: usize,
    pub kernel: KernelChoice,
}

impl Default for SvmParams {
    fn default() -> Self {
        SvmParams {
            c: 1.0,
            gamma: None,
            tol: 1e-3,
            max_passes: 100,
            kernel: KernelChoice::Rbf,
        }
    }
}

impl SvmParams {
    pub const NAMES: &'static [&'static str] = &["C", "gamma", "tol", "max_passes", "kernel"];

    pub(crate) fn read(r: &Reader) -> Result<Self, FitError> {
        let d = Self::default();
        let gamma = match r.text("gamma") {
            Ok(Some("scale")) => None,
            Ok(Some(other)) => {
                return Err(FitError::InvalidParam {
                    name: "gamma".into(),
                    reason: format!("expected a number or `scale`, got `{other}`"),
                })
            }
            Ok(None) => None,
            Err(_) => r.opt_real("gamma", ">= 0", |v| v >= 0.0)?,
        };
        let kernel = match r.text("kernel")? {
            None | Some("rbf") => KernelChoice::Rbf,
            Some("linear") => KernelChoice::Linear,
            Some(other) => {
                return Err(FitError::InvalidParam {
                    name: "kernel".into(),
                    reason: format!("expected rbf or linear, got `{other}`"),
                })
            }
        };
        Ok(SvmParams {
            c: r.real("C", d.c, "positive", |v| v > 0.0)?,
            gamma,
            tol: r.real("tol", d.tol, "positive", |v| v > 0.0)?,
            max_passes: r.count("max_passes", d.max_passes, 1)?,
            kernel,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "F: Real")]
pub struct SvmModel<F> {
    pub kernel: Kernel<F>,
    pub c: F,
    pub support_vectors: Vec<Vec<F>>,
    /// `α_i · y_i` for each support vector.
    pub dual_coef: Vec<F>,
    /// Decision function is `Σ dual_coef_i K(sv_i, x) − bias`.
    pub bias: F,
    pub n_features: usize,
    pub converged: bool,
    pub max_kkt_violation: F,
}

impl<F: Real> SvmModel<F> {
    pub fn decision(&self, x: &[F]) -> F {
        self.support_vectors
            .iter()
            .zip(&self.dual_coef)
            .map(|(sv, &c)| c * self.kernel.eval(sv, x))
            .sum::<F>()
            - self.bias
    }

    /// Non-negative decision values map to abnormal.
    pub fn predict(&self, x: &[F]) -> BinaryLabel {
        BinaryLabel::from_positive(self.decision(x) >= F::zero())
    }
}

/// Full result of an SMO run.
#[derive(Debug, Clone)]
pub struct SvmFit<F> {
    pub model: SvmModel<F>,
    /// Multiplier for every training point (not just support vectors).
    pub alphas: Vec<F>,
    pub passes: usize,
    /// Dual objective after every accepted pair update.
    pub objective_trace: Vec<F>,
}

/// Default RBF width: `1 / (d · var(X))` over all feature entries.
pub fn scale_gamma<F: Real>(rows: &[Vec<F>]) -> F {
    let d = rows.first().map_or(1, Vec::len).max(1);
    let n = F::from_usize_lossy(rows.len() * d);
    let mean = rows.iter().flatten().copied().sum::<F>() / n;
    let var = rows
        .iter()
        .flatten()
        .map(|&v| (v - mean) * (v - mean))
        .sum::<F>()
        / n;
    if var > F::zero() {
        (F::from_usize_lossy(d) * var).recip()
    } else {
        F::one()
    }
}

struct Smo<'a, F> {
    kmat: Vec<F>,
    n: usize,
    y: Vec<F>,
    alpha: Vec<F>,
    /// `Σ_j α_j y_j K_ij`, i.e. the decision value without the bias.
    f: Vec<F>,
    b: F,
    c: F,
    tol: F,
    eps: F,
    rng: ChaCha8Rng,
    trace: Option<&'a mut Vec<F>>,
}

impl<F: Real> Smo<'_, F> {
    #[inline]
    fn k(&self, i: usize, j: usize) -> F {
        self.kmat[i * self.n + j]
    }

    #[inline]
    fn err(&self, i: usize) -> F {
        self.f[i] - self.b - self.y[i]
    }

    fn unbound(&self, i: usize) -> bool {
        self.alpha[i] > F::zero() && self.alpha[i] < self.c
    }

    fn objective(&self) -> F {
        let s: F = self.alpha.iter().copied().sum();
        let q: F = (0..self.n).map(|i| self.alpha[i] * self.y[i] * self.f[i]).sum();
        s - F::lit(0.5) * q
    }

    fn violates(&self, i: usize) -> bool {
        let r = self.err(i) * self.y[i];
        (r < -self.tol && self.alpha[i] < self.c) || (r > self.tol && self.alpha[i] > F::zero())
    }

    /// Largest KKT violation `max(0, ·)` over all points.
    fn max_violation(&self) -> F {
        (0..self.n)
            .map(|i| {
                let r = self.err(i) * self.y[i];
                let mut v = F::zero();
                if self.alpha[i] < self.c {
                    v = v.max(-r);
                }
                if self.alpha[i] > F::zero() {
                    v = v.max(r);
                }
                v
            })
            .fold(F::zero(), F::max)
    }

    /// Bias consistent with the final multipliers: the mean of `f_i − y_i`
    /// over free vectors, or else the middle of the interval the bounded
    /// ones allow.
    fn settle_bias(&mut self) {
        let free: Vec<usize> = (0..self.n).filter(|&i| self.unbound(i)).collect();
        if !free.is_empty() {
            let sum: F = free.iter().map(|&i| self.f[i] - self.y[i]).sum();
            self.b = sum / F::from_usize_lossy(free.len());
            return;
        }
        let (mut lo, mut hi) = (F::neg_infinity(), F::infinity());
        for i in 0..self.n {
            let v = self.f[i] - self.y[i];
            // at 0 need y(f − b) ≥ 1, at C need y(f − b) ≤ 1
            if (self.y[i] > F::zero()) == (self.alpha[i] <= F::zero()) {
                hi = hi.min(v);
            } else {
                lo = lo.max(v);
            }
        }
        self.b = match (lo.is_finite(), hi.is_finite()) {
            (true, true) => (lo + hi) * F::lit(0.5),
            (true, false) => lo,
            (false, true) => hi,
            (false, false) => self.b,
        };
    }

    fn take_step(&mut self, i1: usize, i2: usize) -> bool {
        if i1 == i2 {
            return false;
        }
        let (a1_old, a2_old) = (self.alpha[i1], self.alpha[i2]);
        let (y1, y2) = (self.y[i1], self.y[i2]);
        let (e1, e2) = (self.err(i1), self.err(i2));
        let s = y1 * y2;
        let c = self.c;
        let zero = F::zero();
        let (lo, hi) = if y1 != y2 {
            (zero.max(a2_old - a1_old), c.min(c + a2_old - a1_old))
        } else {
            (zero.max(a2_old + a1_old - c), c.min(a2_old + a1_old))
        };
        if lo >= hi {
            return false;
        }
        let (k11, k12, k22) = (self.k(i1, i1), self.k(i1, i2), self.k(i2, i2));
        let eta = k11 + k22 - F::lit(2.0) * k12;
        let mut a2 = if eta > zero {
            (a2_old + y2 * (e1 - e2) / eta).max(lo).min(hi)
        } else {
            // the negated dual is linear or concave along the constraint
            // line; take the endpoint where it is smaller
            let f1 = y1 * (e1 + self.b) - a1_old * k11 - s * a2_old * k12;
            let f2 = y2 * (e2 + self.b) - s * a1_old * k12 - a2_old * k22;
            let half = F::lit(0.5);
            let psi = |a2: F| {
                let a1 = a1_old + s * (a2_old - a2);
                a1 * f1 + a2 * f2 + half * a1 * a1 * k11 + half * a2 * a2 * k22 + s * a1 * a2 * k12
            };
            let (lobj, hobj) = (psi(lo), psi(hi));
            if lobj < hobj - self.eps {
                lo
            } else if lobj > hobj + self.eps {
                hi
            } else {
                a2_old
            }
        };
        if a2 < F::lit(1e-12) * c {
            a2 = zero;
        } else if a2 > c - F::lit(1e-12) * c {
            a2 = c;
        }
        if (a2 - a2_old).abs() < self.eps * (a2 + a2_old + self.eps) {
            return false;
        }
        let mut a1 = a1_old + s * (a2_old - a2);
        if a1 < F::lit(1e-12) * c {
            a1 = zero;
        } else if a1 > c - F::lit(1e-12) * c {
            a1 = c;
        }
        let (d1, d2) = (y1 * (a1 - a1_old), y2 * (a2 - a2_old));
        let b1 = e1 + d1 * k11 + d2 * k12 + self.b;
        let b2 = e2 + d1 * k12 + d2 * k22 + self.b;
        self.b = if a1 > zero && a1 < c {
            b1
        } else if a2 > zero && a2 < c {
            b2
        } else {
            (b1 + b2) * F::lit(0.5)
        };
        for i in 0..self.n {
            self.f[i] += d1 * self.kmat[i * self.n + i1] + d2 * self.kmat[i * self.n + i2];
        }
        self.alpha[i1] = a1;
        self.alpha[i2] = a2;
        if self.trace.is_some() {
            let w = self.objective();
            if let Some(t) = self.trace.as_mut() {
                t.push(w);
            }
        }
        true
    }

    fn examine(&mut self, i2: usize) -> bool {
        if !self.violates(i2) {
            return false;
        }
        let e2 = self.err(i2);
        let unbound: Vec<usize> = (0..self.n).filter(|&i| self.unbound(i)).collect();
        if unbound.len() > 1 {
            let mut best: Option<(F, usize)> = None;
            for &i in &unbound {
                let gap = (self.err(i) - e2).abs();
                if best.is_none_or(|(g, _)| gap > g) {
                    best = Some((gap, i));
                }
            }
            if let Some((_, i1)) = best {
                if self.take_step(i1, i2) {
                    return true;
                }
            }
        }
        if !unbound.is_empty() {
            let start = self.rng.random_range(0..unbound.len());
            for off in 0..unbound.len() {
                let i1 = unbound[(start + off) % unbound.len()];
                if self.take_step(i1, i2) {
                    return true;
                }
            }
        }
        let start = self.rng.random_range(0..self.n);
        for off in 0..self.n {
            let i1 = (start + off) % self.n;
            if self.take_step(i1, i2) {
                return true;
            }
        }
        false
    }
}

/// Trains the SVM. Non-convergence within `max_passes` is not an error: the
/// last iterate is returned with `converged = false` and a warning logged.
pub fn fit_svm<F: Real>(data: &Dataset<F>, params: &SvmParams) -> Result<SvmFit<F>, FitError> {
    fit_svm_inner(data, params, false)
}

/// As [`fit_svm`], also recording the dual objective after every step.
pub fn fit_svm_traced<F: Real>(
    data: &Dataset<F>,
    params: &SvmParams,
) -> Result<SvmFit<F>, FitError> {
    fit_svm_inner(data, params, true)
}

fn fit_svm_inner<F: Real>(
    data: &Dataset<F>,
    params: &SvmParams,
    traced: bool,
) -> Result<SvmFit<F>, FitError> {
    check_training_set(data)?;
    let n = data.len();
    let kernel = match params.kernel {
        KernelChoice::Linear => Kernel::Linear,
        KernelChoice::Rbf => Kernel::Rbf {
            gamma: params
                .gamma
                .map(F::lit)
                .unwrap_or_else(|| scale_gamma(&data.features)),
        },
    };
    let mut kmat = vec![F::zero(); n * n];
    for i in 0..n {
        for j in i..n {
            let v = kernel.eval(&data.features[i], &data.features[j]);
            kmat[i * n + j] = v;
            kmat[j * n + i] = v;
        }
    }
    let mut trace = Vec::new();
    let mut smo = Smo {
        kmat,
        n,
        y: data
            .labels
            .iter()
            .map(|l| if l.is_positive() { F::one() } else { -F::one() })
            .collect(),
        alpha: vec![F::zero(); n],
        f: vec![F::zero(); n],
        b: F::zero(),
        c: F::lit(params.c),
        tol: F::lit(params.tol),
        eps: F::lit(1e-12),
        rng: ChaCha8Rng::seed_from_u64(0x5eed),
        trace: traced.then_some(&mut trace),
    };

    let mut passes = 0;
    let mut examine_all = true;
    let mut changed = 0usize;
    while (changed > 0 || examine_all) && passes < params.max_passes {
        changed = 0;
        if examine_all {
            for i in 0..n {
                changed += usize::from(smo.examine(i));
            }
        } else {
            for i in 0..n {
                if smo.unbound(i) {
                    changed += usize::from(smo.examine(i));
                }
            }
        }
        if examine_all {
            examine_all = false;
        } else if changed == 0 {
            examine_all = true;
        }
        passes += 1;
    }
    smo.settle_bias();
    let max_kkt_violation = smo.max_violation();
    let converged = max_kkt_violation <= smo.tol;
    if !converged {
        log::warn!(
            "SMO stopped after {passes} passes with KKT violation {max_kkt_violation} > tol {}",
            params.tol
        );
    }
    let mut support_vectors = Vec::new();
    let mut dual_coef = Vec::new();
    for i in 0..n {
        if smo.alpha[i] > F::zero() {
            support_vectors.push(data.features[i].clone());
            dual_coef.push(smo.alpha[i] * smo.y[i]);
        }
    }
    let model = SvmModel {
        kernel,
        c: smo.c,
        support_vectors,
        dual_coef,
        bias: smo.b,
        n_features: data.n_features(),
        converged,
        max_kkt_violation,
    };
    let alphas = smo.alpha;
    Ok(SvmFit {
        model,
        alphas,
        passes,
        objective_trace: trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth_blobs;

    fn xor() -> Dataset<f64> {
        Dataset::new(
            vec![vec![0.0, 0.0], vec![1.0, 1.0], vec![0.0, 1.0], vec![1.0, 0.0]],
            vec![
                BinaryLabel::Normal,
                BinaryLabel::Normal,
                BinaryLabel::Abnormal,
                BinaryLabel::Abnormal,
            ],
        )
        .unwrap()
    }

    #[test]
    fn rbf_values() {
        assert_eq!(rbf(&[1.0f64, 2.0], &[1.0, 2.0], 3.0), 1.0);
        assert_eq!(rbf(&[1.0f64, 2.0], &[-5.0, 9.0], 0.0), 1.0);
        assert!((rbf(&[0.0f64], &[1.0], 1.0) - (-1f64).exp()).abs() < 1e-15);
        assert!((rbf(&[0.0f64], &[1.0], 1.0) - 0.36788).abs() < 1e-5);
    }

    #[test]
    fn two_points_split_at_midpoint() {
        let data = Dataset::new(
            vec![vec![-1.0f64, 2.0], vec![3.0, 2.0]],
            vec![BinaryLabel::Normal, BinaryLabel::Abnormal],
        )
        .unwrap();
        let params = SvmParams {
            kernel: KernelChoice::Linear,
            c: 10.0,
            ..SvmParams::default()
        };
        let fit = fit_svm(&data, &params).unwrap();
        assert_eq!(fit.model.support_vectors.len(), 2);
        assert!(fit.model.decision(&[1.0, 2.0]).abs() < 1e-9);
        assert!(fit.model.decision(&[1.0, -7.0]).abs() < 1e-9);
        assert_eq!(fit.model.predict(&[0.9, 0.0]), BinaryLabel::Normal);
        assert_eq!(fit.model.predict(&[1.1, 0.0]), BinaryLabel::Abnormal);
        // the same symmetry holds for the rbf kernel
        let fit = fit_svm(&data, &SvmParams { gamma: Some(0.2), ..SvmParams::default() }).unwrap();
        assert_eq!(fit.model.support_vectors.len(), 2);
        assert!(fit.model.decision(&[1.0, 2.0]).abs() < 1e-9);
    }

    #[test]
    fn xor_is_separated() {
        let data = xor();
        let params = SvmParams {
            c: 10.0,
            gamma: Some(1.0),
            ..SvmParams::default()
        };
        let fit = fit_svm(&data, &params).unwrap();
        assert!(fit.model.converged);
        for (x, y) in data.features.iter().zip(&data.labels) {
            assert_eq!(fit.model.predict(x), *y);
        }
    }

    #[test]
    fn box_and_equality_constraints_hold() {
        let data = synth_blobs::<f64>(40, 3, 1.5, 9).unwrap().to_dataset();
        let params = SvmParams {
            c: 2.0,
            ..SvmParams::default()
        };
        let fit = fit_svm_traced(&data, &params).unwrap();
        assert!(fit.model.converged);
        assert!(fit.model.max_kkt_violation <= 1e-3);
        let mut sum = 0.0;
        for (a, l) in fit.alphas.iter().zip(&data.labels) {
            assert!((0.0..=2.0).contains(a));
            sum += if l.is_positive() { *a } else { -*a };
        }
        assert!(sum.abs() < 1e-6, "Σαy = {sum}");
        assert!(!fit.objective_trace.is_empty());
        for w in fit.objective_trace.windows(2) {
            assert!(w[1] >= w[0] - 1e-12, "{} then {}", w[0], w[1]);
        }
    }

    #[test]
    fn separable_blobs_have_no_training_errors() {
        let data = synth_blobs::<f64>(50, 5, 10.0, 4).unwrap().to_dataset();
        let fit = fit_svm(&data, &SvmParams::default()).unwrap();
        for (x, y) in data.features.iter().zip(&data.labels) {
            assert_eq!(fit.model.predict(x), *y);
        }
    }

    #[test]
    fn pass_limit_yields_flagged_iterate() {
        let data = synth_blobs::<f64>(60, 4, 0.5, 2).unwrap().to_dataset();
        let params = SvmParams {
            c: 100.0,
            tol: 1e-9,
            max_passes: 1,
            ..SvmParams::default()
        };
        let fit = fit_svm(&data, &params).unwrap();
        assert_eq!(fit.passes, 1);
        assert!(!fit.model.converged);
    }
}
