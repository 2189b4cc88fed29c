//! The seven classical classifiers behind one fit/predict contract.
//!
//! A [`ClassifierSpec`] names a kind and a flat parameter map. Parameters
//! are validated against the per-kind schema before fitting: unknown names
//! and out-of-range values are errors, never silently defaulted. A fitted
//! [`Pipeline`] couples the model with the feature scaler it was trained
//! behind and serializes to versioned JSON.

mod forest;
mod gboost;
mod gnb;
mod knn;
mod logreg;
mod params;
mod svm;
mod tree;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::{BinaryLabel, DataError, Dataset, Scaler, ScalerKind};
use crate::metrics::{self, MetricsReport};
use crate::Real;

pub use forest::{fit_forest, ForestModel, ForestParams};
pub(crate) use forest::mix_seed;
pub use gboost::{fit_gboost, gb_leaf_weight, gb_split_gain, GbModel, GbNode, GbParams, RegressionTree};
pub use gnb::{fit_gnb, GnbModel, GnbParams};
pub use knn::{minkowski, KnnModel, KnnParams};
pub use logreg::{fit_logreg, sigmoid, LogRegModel, LogRegParams};
pub use params::ParamValue;
pub use svm::{fit_svm, fit_svm_traced, rbf, scale_gamma, Kernel, KernelChoice, SvmFit, SvmModel, SvmParams};
pub use tree::{best_split, entropy, fit_tree, Split, TreeModel, TreeNode, TreeParams};

/// Version of the pipeline JSON layout.
pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum FitError {
    #[error("unknown parameter `{name}` for {kind}")]
    UnknownParam { kind: ClassifierKind, name: String },
    #[error("invalid value for `{name}`: {reason}")]
    InvalidParam { name: String, reason: String },
    #[error("expected {expected} features, got {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("non-finite training loss at iteration {iteration}")]
    NonFiniteLoss { iteration: usize },
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("unsupported model format version {0}")]
    FormatVersion(u32),
    #[error("model json: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClassifierKind {
    Logreg,
    Knn,
    Svm,
    Gnb,
    Dtree,
    Rforest,
    Gboost,
}

impl ClassifierKind {
    /// Table order of the comparison report.
    pub const ALL: [ClassifierKind; 7] = [
        ClassifierKind::Logreg,
        ClassifierKind::Knn,
        ClassifierKind::Svm,
        ClassifierKind::Gnb,
        ClassifierKind::Dtree,
        ClassifierKind::Rforest,
        ClassifierKind::Gboost,
    ];

    pub fn key(self) -> &'static str {
        match self {
            ClassifierKind::Logreg => "logreg",
            ClassifierKind::Knn => "knn",
            ClassifierKind::Svm => "svm",
            ClassifierKind::Gnb => "gnb",
            ClassifierKind::Dtree => "dtree",
            ClassifierKind::Rforest => "rforest",
            ClassifierKind::Gboost => "gboost",
        }
    }

    pub fn title(self) -> &'static str {
        match self {
            ClassifierKind::Logreg => "Logistic Regression",
            ClassifierKind::Knn => "k-NN",
            ClassifierKind::Svm => "SVM",
            ClassifierKind::Gnb => "Naive Bayes",
            ClassifierKind::Dtree => "Decision Tree",
            ClassifierKind::Rforest => "Random Forest",
            ClassifierKind::Gboost => "XGBoost-style",
        }
    }

    /// Distance, margin and gradient models see z-scored features; tree
    /// models and naive Bayes see raw features.
    pub fn default_scaler(self) -> ScalerKind {
        match self {
            ClassifierKind::Logreg | ClassifierKind::Knn | ClassifierKind::Svm => ScalerKind::Zscore,
            _ => ScalerKind::None,
        }
    }

    /// Parameter names accepted by this kind (besides `scaler`).
    pub fn param_names(self) -> &'static [&'static str] {
        match self {
            ClassifierKind::Logreg => LogRegParams::NAMES,
            ClassifierKind::Knn => KnnParams::NAMES,
            ClassifierKind::Svm => SvmParams::NAMES,
            ClassifierKind::Gnb => GnbParams::NAMES,
            ClassifierKind::Dtree => TreeParams::NAMES,
            ClassifierKind::Rforest => ForestParams::NAMES,
            ClassifierKind::Gboost => GbParams::NAMES,
        }
    }
}

impl fmt::Display for ClassifierKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

impl FromStr for ClassifierKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ClassifierKind::ALL
            .into_iter()
            .find(|k| k.key() == s.trim().to_ascii_lowercase())
            .ok_or_else(|| format!("unknown classifier kind `{s}`"))
    }
}

/// A classifier kind plus parameter overrides.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierSpec {
    pub kind: ClassifierKind,
    #[serde(default)]
    pub params: BTreeMap<String, ParamValue>,
}

impl ClassifierSpec {
    pub fn new(kind: ClassifierKind) -> Self {
        ClassifierSpec {
            kind,
            params: BTreeMap::new(),
        }
    }

    pub fn with(mut self, name: &str, value: impl Into<ParamValue>) -> Self {
        self.params.insert(name.to_string(), value.into());
        self
    }

    /// Checks names and values without fitting anything.
    pub fn validate(&self) -> Result<(), FitError> {
        self.scaler_kind()?;
        let p = params::Reader::new(self.kind, &self.params);
        match self.kind {
            ClassifierKind::Logreg => LogRegParams::read(&p).map(drop),
            ClassifierKind::Knn => KnnParams::read(&p).map(drop),
            ClassifierKind::Svm => SvmParams::read(&p).map(drop),
            ClassifierKind::Gnb => GnbParams::read(&p).map(drop),
            ClassifierKind::Dtree => TreeParams::read(&p).map(drop),
            ClassifierKind::Rforest => ForestParams::read(&p).map(drop),
            ClassifierKind::Gboost => GbParams::read(&p).map(drop),
        }?;
        p.finish()
    }

    pub fn scaler_kind(&self) -> Result<ScalerKind, FitError> {
        match self.params.get("scaler") {
            None => Ok(self.kind.default_scaler()),
            Some(ParamValue::Text(s)) => {
                serde_json::from_value(serde_json::Value::String(s.clone())).map_err(|_| {
                    FitError::InvalidParam {
                        name: "scaler".into(),
                        reason: format!("expected zscore, minmax or none, got `{s}`"),
                    }
                })
            }
            Some(other) => Err(FitError::InvalidParam {
                name: "scaler".into(),
                reason: format!("expected a name, got {other}"),
            }),
        }
    }

    /// Compact `k=9,p=2` rendering used in reports.
    pub fn params_label(&self) -> String {
        self.params
            .iter()
            .map(|(k, v)| format!("{k}={v}"))
            .collect::<Vec<_>>()
            .join(",")
    }
}

impl fmt::Display for ClassifierSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.kind)?;
        if !self.params.is_empty() {
            write!(f, "({})", self.params_label())?;
        }
        Ok(())
    }
}

/// A fitted model of any kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", bound = "F: Real")]
pub enum Model<F> {
    Logreg(LogRegModel<F>),
    Knn(KnnModel<F>),
    Svm(SvmModel<F>),
    Gnb(GnbModel<F>),
    Dtree(TreeModel<F>),
    Rforest(ForestModel<F>),
    Gboost(GbModel<F>),
}

impl<F: Real> Model<F> {
    /// Fits on already-scaled features. `seed` is used by randomized kinds
    /// when the spec carries no `seed` parameter.
    pub fn fit(spec: &ClassifierSpec, data: &Dataset<F>, seed: u64) -> Result<Self, FitError> {
        let p = params::Reader::new(spec.kind, &spec.params);
        let model = match spec.kind {
            ClassifierKind::Logreg => {
                let params = LogRegParams::read(&p)?;
                p.finish()?;
                Model::Logreg(fit_logreg(data, &params)?.0)
            }
            ClassifierKind::Knn => {
                let params = KnnParams::read(&p)?;
                p.finish()?;
                Model::Knn(KnnModel::fit(data, &params)?)
            }
            ClassifierKind::Svm => {
                let params = SvmParams::read(&p)?;
                p.finish()?;
                Model::Svm(fit_svm(data, &params)?.model)
            }
            ClassifierKind::Gnb => {
                let params = GnbParams::read(&p)?;
                p.finish()?;
                Model::Gnb(fit_gnb(data, &params)?)
            }
            ClassifierKind::Dtree => {
                let params = TreeParams::read(&p)?;
                p.finish()?;
                Model::Dtree(fit_tree(data, &params)?)
            }
            ClassifierKind::Rforest => {
                let mut params = ForestParams::read(&p)?;
                p.finish()?;
                if !spec.params.contains_key("seed") {
                    params.seed = seed;
                }
                Model::Rforest(fit_forest(data, &params)?)
            }
            ClassifierKind::Gboost => {
                let params = GbParams::read(&p)?;
                p.finish()?;
                Model::Gboost(fit_gboost(data, &params)?.0)
            }
        };
        Ok(model)
    }

    pub fn kind(&self) -> ClassifierKind {
        match self {
            Model::Logreg(_) => ClassifierKind::Logreg,
            Model::Knn(_) => ClassifierKind::Knn,
            Model::Svm(_) => ClassifierKind::Svm,
            Model::Gnb(_) => ClassifierKind::Gnb,
            Model::Dtree(_) => ClassifierKind::Dtree,
            Model::Rforest(_) => ClassifierKind::Rforest,
            Model::Gboost(_) => ClassifierKind::Gboost,
        }
    }

    pub fn n_features(&self) -> usize {
        match self {
            Model::Logreg(m) => m.weights.len(),
            Model::Knn(m) => m.n_features(),
            Model::Svm(m) => m.n_features,
            Model::Gnb(m) => m.means[0].len(),
            Model::Dtree(m) => m.n_features,
            Model::Rforest(m) => m.n_features,
            Model::Gboost(m) => m.n_features,
        }
    }

    fn check_dims(&self, x: &[F]) -> Result<(), FitError> {
        let expected = self.n_features();
        if x.len() != expected {
            return Err(FitError::DimensionMismatch {
                expected,
                found: x.len(),
            });
        }
        Ok(())
    }

    pub fn predict(&self, x: &[F]) -> Result<BinaryLabel, FitError> {
        self.check_dims(x)?;
        Ok(match self {
            Model::Logreg(m) => m.predict(x),
            Model::Knn(m) => m.predict(x),
            Model::Svm(m) => m.predict(x),
            Model::Gnb(m) => m.predict(x),
            Model::Dtree(m) => m.predict(x),
            Model::Rforest(m) => m.predict(x),
            Model::Gboost(m) => m.predict(x),
        })
    }

    /// Probability of the abnormal class, for the kinds that define one
    /// (logistic regression, naive Bayes, boosting, forest, single tree).
    pub fn predict_proba(&self, x: &[F]) -> Result<Option<F>, FitError> {
        self.check_dims(x)?;
        Ok(match self {
            Model::Logreg(m) => Some(m.predict_proba(x)),
            Model::Gnb(m) => Some(m.posterior(x)[1]),
            Model::Gboost(m) => Some(m.predict_proba(x)),
            Model::Rforest(m) => Some(m.predict_proba(x)),
            Model::Dtree(m) => Some(m.predict_proba(x)),
            Model::Knn(_) | Model::Svm(_) => None,
        })
    }
}

/// Scaler plus model, fitted together on the same training rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "F: Real")]
pub struct Pipeline<F> {
    pub format_version: u32,
    pub spec: ClassifierSpec,
    pub scaler: Scaler<F>,
    pub model: Model<F>,
}

impl<F: Real> Pipeline<F> {
    pub fn fit(spec: &ClassifierSpec, train: &Dataset<F>, seed: u64) -> Result<Self, FitError> {
        spec.validate()?;
        let scaler = Scaler::fit(&train.features, spec.scaler_kind()?)?;
        let scaled = Dataset {
            features: scaler.apply_all(&train.features),
            labels: train.labels.clone(),
        };
        let model = Model::fit(spec, &scaled, seed)?;
        Ok(Pipeline {
            format_version: MODEL_FORMAT_VERSION,
            spec: spec.clone(),
            scaler,
            model,
        })
    }

    pub fn predict(&self, x: &[F]) -> Result<BinaryLabel, FitError> {
        self.model.check_dims(x)?;
        self.model.predict(&self.scaler.apply(x))
    }

    pub fn predict_proba(&self, x: &[F]) -> Result<Option<F>, FitError> {
        self.model.check_dims(x)?;
        self.model.predict_proba(&self.scaler.apply(x))
    }

    pub fn predict_all(&self, rows: &[Vec<F>]) -> Result<Vec<BinaryLabel>, FitError> {
        rows.iter().map(|x| self.predict(x)).collect()
    }

    pub fn evaluate(&self, data: &Dataset<F>) -> Result<MetricsReport, FitError> {
        let predictions = self.predict_all(&data.features)?;
        metrics::evaluate(&predictions, &data.labels).map_err(|e| {
            FitError::Data(DataError::InvalidArgument(e.to_string()))
        })
    }

    pub fn to_json(&self) -> Result<String, FitError> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self, FitError> {
        let value: serde_json::Value = serde_json::from_str(s)?;
        let version = value
            .get("format_version")
            .and_then(serde_json::Value::as_u64)
            .unwrap_or(0) as u32;
        if version != MODEL_FORMAT_VERSION {
            return Err(FitError::FormatVersion(version));
        }
        Ok(serde_json::from_value(value)?)
    }
}

/// Majority label among votes; ties go to abnormal.
pub(crate) fn vote(abnormal: usize, normal: usize) -> BinaryLabel {
    BinaryLabel::from_positive(abnormal >= normal)
}

pub(crate) fn check_training_set<F: Real>(data: &Dataset<F>) -> Result<(), FitError> {
    if data.is_empty() {
        return Err(DataError::Empty.into());
    }
    if data.features.len() != data.labels.len() {
        return Err(DataError::InvalidArgument("features/labels length mismatch".into()).into());
    }
    let d = data.n_features();
    if let Some(i) = data.features.iter().position(|r| r.len() != d) {
        return Err(FitError::DimensionMismatch {
            expected: d,
            found: data.features[i].len(),
        });
    }
    Ok(())
}
