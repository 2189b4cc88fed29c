use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use super::params::Reader;
use super::{check_training_set, vote, FitError};
use crate::data::{BinaryLabel, Dataset};
use crate::Real;

/// `(Σ|aᵢ−bᵢ|^p)^(1/p)`; a metric for `p ≥ 1`.
pub fn minkowski<F: Real>(a: &[F], b: &[F], p: F) -> Result<F, FitError> {
    if p.is_nan() || p < F::one() {
        return Err(FitError::InvalidParam {
            name: "p".into(),
            reason: format!("Minkowski power must be >= 1, got {p}"),
        });
    }
    if a.len() != b.len() {
        return Err(FitError::DimensionMismatch {
            expected: a.len(),
            found: b.len(),
        });
    }
    Ok(minkowski_unchecked(a, b, p))
}

#[inline]
fn minkowski_unchecked<F: Real>(a: &[F], b: &[F], p: F) -> F {
    if p == F::lit(2.0) {
        crate::scalar::squared_distance(a, b).sqrt()
    } else if p == F::one() {
        a.iter().zip(b).map(|(&x, &y)| (x - y).abs()).sum()
    } else if p == p.round() && p <= F::lit(16.0) {
        let n = p.to_i32().unwrap_or(1);
        a.iter()
            .zip(b)
            .map(|(&x, &y)| (x - y).abs().powi(n))
            .sum::<F>()
            .powf(p.recip())
    } else {
        a.iter()
            .zip(b)
            .map(|(&x, &y)| (x - y).abs().powf(p))
            .sum::<F>()
            .powf(p.recip())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KnnParams {
    pub k: usize,
    pub p: f64,
}

impl Default for KnnParams {
    fn default() -> Self {
        KnnParams { k: 9, p: 2.0 }
    }
}

impl KnnParams {
    pub const NAMES: &'static [&'static str] = &["k", "p"];

    pub(crate) fn read(r: &Reader) -> Result<Self, FitError> {
        let d = Self::default();
        Ok(KnnParams {
            k: r.count("k", d.k, 1)?,
            p: r.real("p", d.p, ">= 1", |v| v >= 1.0)?,
        })
    }
}

/// Stored training set; prediction is an exact scan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "F: Real")]
pub struct KnnModel<F> {
    pub points: Vec<Vec<F>>,
    pub labels: Vec<BinaryLabel>,
    pub k: usize,
    pub p: F,
}

impl<F: Real> KnnModel<F> {
    pub fn fit(data: &Dataset<F>, params: &KnnParams) -> Result<Self, FitError> {
        check_training_set(data)?;
        if params.k > data.len() {
            return Err(FitError::InvalidParam {
                name: "k".into(),
                reason: format!("k = {} exceeds training size {}", params.k, data.len()),
            });
        }
        Ok(KnnModel {
            points: data.features.clone(),
            labels: data.labels.clone(),
            k: params.k,
            p: F::lit(params.p),
        })
    }

    pub fn n_features(&self) -> usize {
        self.points.first().map_or(0, Vec::len)
    }

    /// Indices of the `k` nearest points, ordered by (distance, index).
    pub fn neighbours(&self, x: &[F]) -> Vec<usize> {
        let mut d: Vec<(F, usize)> = self
            .points
            .iter()
            .enumerate()
            .map(|(i, q)| (minkowski_unchecked(q, x, self.p), i))
            .collect();
        let by = |a: &(F, usize), b: &(F, usize)| {
            a.0.partial_cmp(&b.0).unwrap_or(Ordering::Equal).then(a.1.cmp(&b.1))
        };
        let k = self.k.min(d.len());
        if k < d.len() {
            d.select_nth_unstable_by(k - 1, by);
            d.truncate(k);
        }
        d.sort_unstable_by(by);
        d.into_iter().map(|(_, i)| i).collect()
    }

    /// Majority label of the neighbours; ties go to abnormal.
    pub fn predict(&self, x: &[F]) -> BinaryLabel {
        let nb = self.neighbours(x);
        let abnormal = nb.iter().filter(|&&i| self.labels[i].is_positive()).count();
        vote(abnormal, nb.len() - abnormal)
    }
}
