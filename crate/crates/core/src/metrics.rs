//! Confusion matrix and the five binary classification metrics.
//!
//! Metrics are kept as exact ratios of counts. Conversions to floating
//! point, four-decimal fractions and whole percents happen at the edges, so
//! rounding never depends on binary floating-point representation
//! (`169/200` renders as 85%, not 84%).

use std::fmt;

use num_rational::Ratio;
use serde::{Deserialize, Serialize};

use crate::data::BinaryLabel;
use crate::Real;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MetricsError {
    #[error("prediction/truth length mismatch: {predictions} vs {truth}")]
    LengthMismatch { predictions: usize, truth: usize },
    #[error("no samples to evaluate")]
    Empty,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    pub fn_: u64,
}

impl ConfusionMatrix {
    pub fn new(tp: u64, tn: u64, fp: u64, fn_: u64) -> Self {
        ConfusionMatrix { tp, tn, fp, fn_ }
    }

    pub fn total(&self) -> u64 {
        self.tp + self.tn + self.fp + self.fn_
    }

    /// Actual positives, `tp + fn`.
    pub fn positives(&self) -> u64 {
        self.tp + self.fn_
    }

    /// Actual negatives, `tn + fp`.
    pub fn negatives(&self) -> u64 {
        self.tn + self.fp
    }

    /// The same outcomes viewed with the other class as positive.
    pub fn swapped(&self) -> Self {
        ConfusionMatrix {
            tp: self.tn,
            tn: self.tp,
            fp: self.fn_,
            fn_: self.fp,
        }
    }

    pub fn record(&mut self, predicted: BinaryLabel, truth: BinaryLabel, positive: BinaryLabel) {
        match (predicted == positive, truth == positive) {
            (true, true) => self.tp += 1,
            (false, false) => self.tn += 1,
            (true, false) => self.fp += 1,
            (false, true) => self.fn_ += 1,
        }
    }
}

impl std::ops::Add for ConfusionMatrix {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        ConfusionMatrix {
            tp: self.tp + o.tp,
            tn: self.tn + o.tn,
            fp: self.fp + o.fp,
            fn_: self.fn_ + o.fn_,
        }
    }
}

/// Counts outcomes with `abnormal` as the positive class.
pub fn confusion(
    predictions: &[BinaryLabel],
    truth: &[BinaryLabel],
) -> Result<ConfusionMatrix, MetricsError> {
    confusion_with_positive(predictions, truth, BinaryLabel::Abnormal)
}

pub fn confusion_with_positive(
    predictions: &[BinaryLabel],
    truth: &[BinaryLabel],
    positive: BinaryLabel,
) -> Result<ConfusionMatrix, MetricsError> {
    if predictions.len() != truth.len() {
        return Err(MetricsError::LengthMismatch {
            predictions: predictions.len(),
            truth: truth.len(),
        });
    }
    if predictions.is_empty() {
        return Err(MetricsError::Empty);
    }
    let mut cm = ConfusionMatrix::default();
    for (&p, &t) in predictions.iter().zip(truth) {
        cm.record(p, t, positive);
    }
    Ok(cm)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Accuracy,
    Recall,
    Precision,
    Specificity,
    F1,
}

impl Metric {
    /// Reporting order.
    pub const ALL: [Metric; 5] = [
        Metric::Accuracy,
        Metric::Recall,
        Metric::Precision,
        Metric::Specificity,
        Metric::F1,
    ];

    pub fn key(self) -> &'static str {
        match self {
            Metric::Accuracy => "accuracy",
            Metric::Recall => "recall",
            Metric::Precision => "precision",
            Metric::Specificity => "specificity",
            Metric::F1 => "f1",
        }
    }

    pub fn title(self) -> &'static str {
        match self {
            Metric::Accuracy => "Accuracy",
            Metric::Recall => "Recall",
            Metric::Precision => "Precision",
            Metric::Specificity => "Specificity",
            Metric::F1 => "F1 Score",
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

/// An exact rate `num / den` with `den > 0`.
pub type Rate = Ratio<u64>;

fn rate(num: u64, den: u64) -> Option<Rate> {
    (den > 0).then(|| Ratio::new(num, den))
}

/// `round(scale * r)` with halves rounded away from zero, in integers.
pub fn round_scaled(r: Rate, scale: u64) -> u64 {
    let (n, d) = (*r.numer() as u128, *r.denom() as u128);
    ((2 * scale as u128 * n + d) / (2 * d)) as u64
}

/// Whole percent, half away from zero.
pub fn percent(r: Rate) -> u64 {
    round_scaled(r, 100)
}

/// The rate rounded to four decimals.
pub fn fraction4(r: Rate) -> f64 {
    round_scaled(r, 10_000) as f64 / 10_000.0
}

pub fn rate_value<F: Real>(r: Rate) -> F {
    F::from_u64(*r.numer()).expect("count fits") / F::from_u64(*r.denom()).expect("count fits")
}

/// The five metrics for one confusion matrix. A metric whose denominator is
/// zero is `None` (undefined), never 0 or NaN.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MetricsReport {
    pub confusion: ConfusionMatrix,
    values: [Option<Rate>; 5],
}

pub fn compute_metrics(cm: &ConfusionMatrix) -> Result<MetricsReport, MetricsError> {
    if cm.total() == 0 {
        return Err(MetricsError::Empty);
    }
    let ConfusionMatrix { tp, tn, fp, fn_ } = *cm;
    let accuracy = rate(tp + tn, cm.total());
    let recall = rate(tp, tp + fn_);
    let precision = rate(tp, tp + fp);
    let specificity = rate(tn, tn + fp);
    // 2PR/(P+R) reduces to 2tp/(2tp+fp+fn); P+R > 0 exactly when tp > 0
    let f1 = if tp > 0 {
        rate(2 * tp, 2 * tp + fp + fn_)
    } else {
        None
    };
    Ok(MetricsReport {
        confusion: *cm,
        values: [accuracy, recall, precision, specificity, f1],
    })
}

/// `confusion` followed by `compute_metrics`.
pub fn evaluate(
    predictions: &[BinaryLabel],
    truth: &[BinaryLabel],
) -> Result<MetricsReport, MetricsError> {
    compute_metrics(&confusion(predictions, truth)?)
}

impl MetricsReport {
    pub fn rate(&self, m: Metric) -> Option<Rate> {
        self.values[m as usize]
    }

    pub fn is_defined(&self, m: Metric) -> bool {
        self.rate(m).is_some()
    }

    pub fn value<F: Real>(&self, m: Metric) -> Option<F> {
        self.rate(m).map(rate_value)
    }

    pub fn get(&self, m: Metric) -> Option<f64> {
        self.value::<f64>(m)
    }

    pub fn percent(&self, m: Metric) -> Option<u64> {
        self.rate(m).map(percent)
    }

    pub fn accuracy(&self) -> Option<f64> {
        self.get(Metric::Accuracy)
    }

    pub fn recall(&self) -> Option<f64> {
        self.get(Metric::Recall)
    }

    pub fn precision(&self) -> Option<f64> {
        self.get(Metric::Precision)
    }

    pub fn specificity(&self) -> Option<f64> {
        self.get(Metric::Specificity)
    }

    pub fn f1(&self) -> Option<f64> {
        self.get(Metric::F1)
    }

    /// Flat key/value form: counts, then for every metric its four-decimal
    /// fraction, whole percent and defined flag.
    pub fn to_record(&self) -> serde_json::Map<String, serde_json::Value> {
        use serde_json::{json, Value};
        let mut m = serde_json::Map::new();
        let cm = self.confusion;
        m.insert("tp".into(), json!(cm.tp));
        m.insert("tn".into(), json!(cm.tn));
        m.insert("fp".into(), json!(cm.fp));
        m.insert("fn".into(), json!(cm.fn_));
        for metric in Metric::ALL {
            let k = metric.key();
            let r = self.rate(metric);
            m.insert(k.to_string(), r.map_or(Value::Null, |r| json!(fraction4(r))));
            m.insert(format!("{k}_percent"), r.map_or(Value::Null, |r| json!(percent(r))));
            m.insert(format!("{k}_defined"), json!(r.is_some()));
        }
        m
    }
}

impl Serialize for MetricsReport {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.to_record().serialize(s)
    }
}
