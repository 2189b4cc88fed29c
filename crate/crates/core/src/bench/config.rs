use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::BenchError;
use crate::classifiers::{ClassifierKind, ClassifierSpec, ParamValue};
use crate::data::{Schema, SplitSpec};
use crate::nn::CnnConfig;
use crate::tuning::{expand, ParamGrid, SearchOptions};

/// A benchmark run description, read from a TOML file with one table per
/// concern. Unknown keys anywhere are errors.
///
/// ```toml
/// [data]
/// features = "herlev_features.csv"
/// images = "herlev_images"
///
/// [split]
/// seed = 7
///
/// [models]
/// classical = ["knn", "gboost"]
/// cnn = false
///
/// [params.knn]
/// k = 9
///
/// [grid.knn]
/// k = [1, 3, 5, 7]
///
/// [output]
/// dir = "out"
/// formats = ["markdown", "json"]
/// reproducible = true
/// ```
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub data: DataConfig,
    pub split: SplitSpec,
    pub models: ModelsConfig,
    /// Parameter overrides per classifier key.
    pub params: BTreeMap<String, BTreeMap<String, ParamValue>>,
    pub cnn: CnnConfig,
    pub tuning: TuningConfig,
    /// Search grids per classifier key, used by grid search.
    pub grid: BTreeMap<String, ParamGrid>,
    pub output: OutputConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub features: Option<PathBuf>,
    pub images: Option<PathBuf>,
    /// Defaults to the 20 Herlev feature names.
    pub feature_columns: Option<Vec<String>>,
    pub class_column: String,
    /// Generated stand-in data for whichever of `features`/`images` is unset.
    pub synthetic: Option<SyntheticConfig>,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            features: None,
            images: None,
            feature_columns: None,
            class_column: "class".into(),
            synthetic: None,
        }
    }
}

impl DataConfig {
    pub fn schema(&self) -> Schema {
        match &self.feature_columns {
            Some(cols) => Schema::new(cols.clone(), self.class_column.clone()),
            None => Schema {
                class_column: self.class_column.clone(),
                ..Schema::herlev()
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticConfig {
    pub rows_per_class: usize,
    pub separation: f64,
    pub images_per_class: usize,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            rows_per_class: 100,
            separation: 0.6,
            images_per_class: 40,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelsConfig {
    pub classical: Vec<ClassifierKind>,
    pub cnn: bool,
}

impl Default for ModelsConfig {
    fn default() -> Self {
        ModelsConfig {
            classical: ClassifierKind::ALL.to_vec(),
            cnn: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TuningConfig {
    pub folds: usize,
    pub max_trials: Option<usize>,
    pub trial_timeout_seconds: Option<f64>,
    pub parallel: bool,
}

impl Default for TuningConfig {
    fn default() -> Self {
        TuningConfig {
            folds: 5,
            max_trials: None,
            trial_timeout_seconds: None,
            parallel: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Markdown,
    Csv,
    Json,
}

impl ReportFormat {
    pub const ALL: [ReportFormat; 3] = [ReportFormat::Markdown, ReportFormat::Csv, ReportFormat::Json];

    pub fn file_name(self) -> &'static str {
        match self {
            ReportFormat::Markdown => "report.md",
            ReportFormat::Csv => "report.csv",
            ReportFormat::Json => "report.json",
        }
    }
}

impl fmt::Display for ReportFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ReportFormat::Markdown => "markdown",
            ReportFormat::Csv => "csv",
            ReportFormat::Json => "json",
        })
    }
}

impl FromStr for ReportFormat {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "markdown" | "md" => Ok(ReportFormat::Markdown),
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            other => Err(format!("unknown format `{other}` (markdown, csv, json)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub dir: PathBuf,
    pub formats: Vec<ReportFormat>,
    /// Leave wall times out of `report.*` so repeated runs are
    /// byte-identical; timings go to `timings.json` instead.
    pub reproducible: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            dir: PathBuf::from("bench-out"),
            formats: ReportFormat::ALL.to_vec(),
            reproducible: false,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(s: &str) -> Result<Self, BenchError> {
        toml::from_str(s).map_err(|e| BenchError::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes to toml")
    }

    /// Reads a config file; relative data and output paths are taken
    /// relative to the file's directory.
    pub fn load(path: &Path) -> Result<Self, BenchError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| BenchError::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::from_toml_str(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        let rebase = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(p) = cfg.data.features.as_mut() {
            rebase(p);
        }
        if let Some(p) = cfg.data.images.as_mut() {
            rebase(p);
        }
        rebase(&mut cfg.output.dir);
        Ok(cfg)
    }

    /// Sets the split seed (also used by randomized classical models) and
    /// the CNN seed.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.split.seed = seed;
        self.cnn.seed = seed;
        self
    }

    /// Hex SHA-256 of the canonical TOML form. `[output]` is left out: where
    /// and how reports are written does not change the results.
    pub fn hash(&self) -> String {
        let mut canonical = self.clone();
        canonical.output = OutputConfig::default();
        hex::encode(Sha256::digest(canonical.to_toml().as_bytes()))
    }

    pub fn spec_for(&self, kind: ClassifierKind) -> ClassifierSpec {
        ClassifierSpec {
            kind,
            params: self.params.get(kind.key()).cloned().unwrap_or_default(),
        }
    }

    pub fn grids(&self) -> Result<Vec<(ClassifierKind, ParamGrid)>, BenchError> {
        self.grid
            .iter()
            .map(|(k, g)| Ok((parse_kind(k)?, g.clone())))
            .collect()
    }

    pub fn search_options(&self) -> SearchOptions {
        SearchOptions {
            folds: self.tuning.folds,
            seed: self.split.seed,
            stratified: self.split.stratified,
            parallel: self.tuning.parallel,
            max_trials: self.tuning.max_trials,
            trial_timeout: self
                .tuning
                .trial_timeout_seconds
                .map(std::time::Duration::from_secs_f64),
        }
    }

    /// Checks everything that can be checked before loading data,
    /// including that referenced paths exist.
    pub fn validate(&self) -> Result<(), BenchError> {
        let invalid = |m: String| Err(BenchError::Config(m));
        self.split.validate().map_err(|e| BenchError::Config(e.to_string()))?;
        for (key, params) in &self.params {
            let kind = parse_kind(key)?;
            ClassifierSpec {
                kind,
                params: params.clone(),
            }
            .validate()
            .map_err(|e| BenchError::Config(format!("[params.{key}] {e}")))?;
        }
        for (kind, grid) in self.grids()? {
            expand(kind, &grid).map_err(|e| BenchError::Config(format!("[grid.{kind}] {e}")))?;
        }
        if self.models.cnn {
            self.cnn
                .validate()
                .map_err(|e| BenchError::Config(format!("[cnn] {e}")))?;
        }
        if self.tuning.folds < 2 {
            return invalid(format!("[tuning] folds must be at least 2, got {}", self.tuning.folds));
        }
        if let Some(t) = self.tuning.trial_timeout_seconds {
            if !(t > 0.0 && t.is_finite()) {
                return invalid(format!("[tuning] trial_timeout_seconds must be positive, got {t}"));
            }
        }
        if self.output.formats.is_empty() {
            return invalid("[output] formats is empty".into());
        }
        let needs_features = !self.models.classical.is_empty() || !self.grid.is_empty();
        self.check_source("features", self.data.features.as_deref(), needs_features)?;
        self.check_source("images", self.data.images.as_deref(), self.models.cnn)?;
        if self.models.cnn && self.data.images.is_none() {
            let [h, w, c] = self.cnn.input_shape;
            if h != w || c != 3 {
                return invalid(format!(
                    "synthetic images are square RGB; cnn input_shape {:?} does not fit",
                    self.cnn.input_shape
                ));
            }
        }
        Ok(())
    }

    fn check_source(&self, name: &str, path: Option<&Path>, needed: bool) -> Result<(), BenchError> {
        match path {
            Some(p) if !p.exists() => Err(BenchError::Config(format!(
                "[data] {name} path {} does not exist",
                p.display()
            ))),
            None if needed && self.data.synthetic.is_none() => Err(BenchError::Config(format!(
                "[data] {name} is required (or configure [data.synthetic])"
            ))),
            _ => Ok(()),
        }
    }
}

fn parse_kind(key: &str) -> Result<ClassifierKind, BenchError> {
    key.parse().map_err(BenchError::Config)
}
