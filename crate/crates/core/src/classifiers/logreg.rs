use serde::{Deserialize, Serialize};

use super::params::Reader;
use super::{check_training_set, FitError};
use crate::data::{BinaryLabel, Dataset};
use crate::scalar::dot;
use crate::Real;

/// Logistic function, evaluated without overflow for any finite input.
#[inline]
pub fn sigmoid<F: Real>(z: F) -> F {
    if z >= F::zero() {
        F::one() / (F::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (F::one() + e)
    }
}

/// `ln(1 + e^z)` without overflow.
#[inline]
pub(crate) fn softplus<F: Real>(z: F) -> F {
    if z > F::zero() {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// Cross-entropy of a logit against a 0/1 target.
#[inline]
pub(crate) fn logit_loss<F: Real>(z: F, positive: bool) -> F {
    if positive {
        softplus(-z)
    } else {
        softplus(z)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogRegParams {
    pub lr: f64,
    pub epochs: usize,
    pub l2: f64,
}

impl Default for LogRegParams {
    fn default() -> Self {
        LogRegParams {
            lr: 0.1,
            epochs: 500,
            l2: 1e-4,
        }
    }
}

impl LogRegParams {
    pub const NAMES: &'static [&'static str] = &["lr", "epochs", "l2"];

    pub(crate) fn read(p: &Reader) -> Result<Self, FitError> {
        let d = Self::default();
        Ok(LogRegParams {
            lr: p.real("lr", d.lr, "positive", |v| v > 0.0)?,
            epochs: p.count("epochs", d.epochs, 0)?,
            l2: p.real("l2", d.l2, "non-negative", |v| v >= 0.0)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "F: Real")]
pub struct LogRegModel<F> {
    pub weights: Vec<F>,
    pub bias: F,
}

impl<F: Real> LogRegModel<F> {
    pub fn decision(&self, x: &[F]) -> F {
        dot(&self.weights, x) + self.bias
    }

    pub fn predict_proba(&self, x: &[F]) -> F {
        sigmoid(self.decision(x))
    }

    pub fn predict(&self, x: &[F]) -> BinaryLabel {
        BinaryLabel::from_positive(self.decision(x) >= F::zero())
    }

    /// Mean cross-entropy plus `l2/2 · ‖w‖²`.
    pub fn loss(&self, data: &Dataset<F>, l2: F) -> F {
        let n = F::from_usize_lossy(data.len());
        let ce = data
            .features
            .iter()
            .zip(&data.labels)
            .map(|(x, y)| logit_loss(self.decision(x), y.is_positive()))
            .sum::<F>()
            / n;
        ce + l2 * F::lit(0.5) * dot(&self.weights, &self.weights)
    }
}

/// Full-batch gradient descent on L2-regularized cross-entropy.
///
/// Returns the model and the objective before each epoch plus the final
/// objective (`epochs + 1` values). The bias is not regularized.
pub fn fit_logreg<F: Real>(
    data: &Dataset<F>,
    params: &LogRegParams,
) -> Result<(LogRegModel<F>, Vec<F>), FitError> {
    check_training_set(data)?;
    let d = data.n_features();
    let n = F::from_usize_lossy(data.len());
    let lr = F::lit(params.lr);
    let l2 = F::lit(params.l2);
    let mut model = LogRegModel {
        weights: vec![F::zero(); d],
        bias: F::zero(),
    };
    let mut history = Vec::with_capacity(params.epochs + 1);
    let mut grad_w = vec![F::zero(); d];
    for epoch in 0..=params.epochs {
        grad_w.iter_mut().for_each(|g| *g = F::zero());
        let mut grad_b = F::zero();
        let mut loss = F::zero();
        for (x, y) in data.features.iter().zip(&data.labels) {
            let z = model.decision(x);
            loss += logit_loss(z, y.is_positive());
            let r = sigmoid(z) - y.target::<F>();
            grad_b += r;
            for (g, &xi) in grad_w.iter_mut().zip(x) {
                *g += r * xi;
            }
        }
        loss = loss / n + l2 * F::lit(0.5) * dot(&model.weights, &model.weights);
        if !loss.is_finite() {
            return Err(FitError::NonFiniteLoss { iteration: epoch });
        }
        history.push(loss);
        if epoch == params.epochs {
            break;
        }
        for (w, g) in model.weights.iter_mut().zip(&grad_w) {
            *w -= lr * (*g / n + l2 * *w);
        }
        model.bias -= lr * grad_b / n;
    }
    Ok((model, history))
}
