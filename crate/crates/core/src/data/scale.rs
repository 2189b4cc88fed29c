use serde::{Deserialize, Serialize};

use super::DataError;
use crate::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScalerKind {
    #[serde(alias = "z-score", alias = "standard")]
    Zscore,
    Minmax,
    None,
}

/// Per-feature affine transform fitted on training rows.
///
/// For `Zscore` the stats are `(mean, population std)`, for `Minmax`
/// `(min, max - min)`. A constant column gets a unit scale and is listed in
/// `clamped`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaler<F> {
    pub kind: ScalerKind,
    pub stats: Vec<(F, F)>,
    pub clamped: Vec<usize>,
}

impl<F: Real> Scaler<F> {
    pub fn identity(n_features: usize) -> Self {
        Scaler {
            kind: ScalerKind::None,
            stats: vec![(F::zero(), F::one()); n_features],
            clamped: Vec::new(),
        }
    }

    pub fn fit(rows: &[Vec<F>], kind: ScalerKind) -> Result<Self, DataError> {
        let first = rows.first().ok_or(DataError::Empty)?;
        let d = first.len();
        if let Some(i) = rows.iter().position(|r| r.len() != d) {
            return Err(DataError::FeatureCount {
                row: i,
                expected: d,
                found: rows[i].len(),
            });
        }
        let n = F::from_usize_lossy(rows.len());
        let mut stats = Vec::with_capacity(d);
        let mut clamped = Vec::new();
        for j in 0..d {
            let (offset, scale) = match kind {
                ScalerKind::None => (F::zero(), F::one()),
                ScalerKind::Zscore => {
                    let mean = rows.iter().map(|r| r[j]).sum::<F>() / n;
                    let var = rows
                        .iter()
                        .map(|r| {
                            let c = r[j] - mean;
                            c * c
                        })
                        .sum::<F>()
                        / n;
                    (mean, var.sqrt())
                }
                ScalerKind::Minmax => {
                    let lo = rows.iter().map(|r| r[j]).fold(F::infinity(), F::min);
                    let hi = rows.iter().map(|r| r[j]).fold(F::neg_infinity(), F::max);
                    (lo, hi - lo)
                }
            };
            if scale > F::zero() {
                stats.push((offset, scale));
            } else {
                clamped.push(j);
                stats.push((offset, F::one()));
            }
        }
        if !clamped.is_empty() {
            log::warn!("constant feature columns {clamped:?}: scale clamped to 1");
        }
        Ok(Scaler {
            kind,
            stats,
            clamped,
        })
    }

    pub fn n_features(&self) -> usize {
        self.stats.len()
    }

    pub fn apply(&self, x: &[F]) -> Vec<F> {
        if self.kind == ScalerKind::None {
            return x.to_vec();
        }
        x.iter()
            .zip(&self.stats)
            .map(|(&v, &(o, s))| (v - o) / s)
            .collect()
    }

    pub fn apply_all(&self, rows: &[Vec<F>]) -> Vec<Vec<F>> {
        rows.iter().map(|r| self.apply(r)).collect()
    }

    pub fn invert(&self, z: &[F]) -> Vec<F> {
        if self.kind == ScalerKind::None {
            return z.to_vec();
        }
        z.iter()
            .zip(&self.stats)
            .map(|(&v, &(o, s))| v * s + o)
            .collect()
    }
}
