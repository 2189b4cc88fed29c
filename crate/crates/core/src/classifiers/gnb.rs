use serde::{Deserialize, Serialize};

use super::params::Reader;
use super::{check_training_set, FitError};
use crate::data::{BinaryLabel, Dataset};
use crate::Real;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GnbParams {
    pub var_floor: f64,
}

impl Default for GnbParams {
    fn default() -> Self {
        GnbParams { var_floor: 1e-9 }
    }
}

impl GnbParams {
    pub const NAMES: &'static [&'static str] = &["var_floor"];

    pub(crate) fn read(r: &Reader) -> Result<Self, FitError> {
        Ok(GnbParams {
            var_floor: r.real("var_floor", 1e-9, "positive", |v| v > 0.0)?,
        })
    }
}

/// Per-class priors and per-feature Gaussians, indexed `[normal, abnormal]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "F: Real")]
pub struct GnbModel<F> {
    pub priors: [F; 2],
    pub means: [Vec<F>; 2],
    pub variances: [Vec<F>; 2],
}

pub fn fit_gnb<F: Real>(data: &Dataset<F>, params: &GnbParams) -> Result<GnbModel<F>, FitError> {
    check_training_set(data)?;
    let d = data.n_features();
    let floor = F::lit(params.var_floor);
    let counts = data.label_counts();
    let total = F::from_usize_lossy(data.len());
    let mut means = [vec![F::zero(); d], vec![F::zero(); d]];
    let mut variances = [vec![floor; d], vec![floor; d]];
    for (x, y) in data.features.iter().zip(&data.labels) {
        for (m, &v) in means[y.index()].iter_mut().zip(x) {
            *m += v;
        }
    }
    for c in 0..2 {
        if counts[c] == 0 {
            continue;
        }
        let n = F::from_usize_lossy(counts[c]);
        means[c].iter_mut().for_each(|m| *m /= n);
        let mut acc = vec![F::zero(); d];
        for (x, y) in data.features.iter().zip(&data.labels) {
            if y.index() == c {
                for ((a, &v), &m) in acc.iter_mut().zip(x).zip(&means[c]) {
                    *a += (v - m) * (v - m);
                }
            }
        }
        for (var, a) in variances[c].iter_mut().zip(acc) {
            *var = (a / n).max(floor);
        }
        if counts[c] < 2 {
            log::debug!("class {c} has {} sample(s); variance floor applied", counts[c]);
        }
    }
    let priors = [
        F::from_usize_lossy(counts[0]) / total,
        F::from_usize_lossy(counts[1]) / total,
    ];
    Ok(GnbModel {
        priors,
        means,
        variances,
    })
}

impl<F: Real> GnbModel<F> {
    /// `ln P(c) + Σ_j ln N(x_j; μ_cj, σ²_cj)` for both classes.
    pub fn joint_log_likelihood(&self, x: &[F]) -> [F; 2] {
        let ln_2pi = F::lit(std::f64::consts::TAU.ln());
        let half = F::lit(0.5);
        let mut out = [F::zero(); 2];
        for (c, o) in out.iter_mut().enumerate() {
            let mut ll = self.priors[c].ln();
            for ((&v, &m), &var) in x.iter().zip(&self.means[c]).zip(&self.variances[c]) {
                ll -= half * (ln_2pi + var.ln()) + (v - m) * (v - m) / (F::lit(2.0) * var);
            }
            *o = ll;
        }
        out
    }

    /// Normalized class posteriors `[P(normal|x), P(abnormal|x)]`.
    pub fn posterior(&self, x: &[F]) -> [F; 2] {
        let jll = self.joint_log_likelihood(x);
        let m = jll[0].max(jll[1]);
        if m == F::neg_infinity() {
            return [F::lit(0.5); 2];
        }
        let e = [(jll[0] - m).exp(), (jll[1] - m).exp()];
        let s = e[0] + e[1];
        [e[0] / s, e[1] / s]
    }

    /// Ties go to abnormal.
    pub fn predict(&self, x: &[F]) -> BinaryLabel {
        let jll = self.joint_log_likelihood(x);
        BinaryLabel::from_positive(jll[1] >= jll[0])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_d() -> Dataset<f64> {
        // means -1 and +1, population variance 1 in both classes
        Dataset::new(
            vec![vec![-2.0], vec![0.0], vec![0.0], vec![2.0]],
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
    fn symmetric_classes() {
        let m = fit_gnb(&one_d(), &GnbParams::default()).unwrap();
        assert_eq!(m.means, [vec![-1.0], vec![1.0]]);
        assert_eq!(m.variances, [vec![1.0], vec![1.0]]);
        let p = m.posterior(&[0.0]);
        assert!((p[0] - 0.5).abs() < 1e-15 && (p[1] - 0.5).abs() < 1e-15);
        assert_eq!(m.predict(&[0.9]), BinaryLabel::Abnormal);
        assert_eq!(m.predict(&[-0.9]), BinaryLabel::Normal);
        assert!((m.priors[0] + m.priors[1] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn singleton_class_uses_floor() {
        let data = Dataset::new(
            vec![vec![1.0f64, 5.0], vec![2.0, 5.0], vec![9.0, 5.0]],
            vec![BinaryLabel::Normal, BinaryLabel::Normal, BinaryLabel::Abnormal],
        )
        .unwrap();
        let m = fit_gnb(&data, &GnbParams::default()).unwrap();
        assert_eq!(m.variances[1], vec![1e-9, 1e-9]);
        assert_eq!(m.variances[0][1], 1e-9);
        assert!(m.posterior(&[9.0, 5.0])[1] > 0.99);
        let p = m.posterior(&[1.5, 5.0]);
        assert!((p[0] + p[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn absent_class_is_never_predicted() {
        let data = Dataset::new(vec![vec![1.0f64], vec![2.0]], vec![BinaryLabel::Normal; 2]).unwrap();
        let m = fit_gnb(&data, &GnbParams::default()).unwrap();
        assert_eq!(m.predict(&[100.0]), BinaryLabel::Normal);
        assert_eq!(m.posterior(&[1.5])[1], 0.0);
    }
}
