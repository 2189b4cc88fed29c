//! Dataset types, loaders and preprocessing.
//!
//! The Herlev feature table is consumed as a CSV with twenty precomputed
//! morphological features and one class column. Cell images are read from a
//! directory tree keyed by class name. All randomized operations take an
//! explicit seed.

mod csv_io;
mod image_io;
mod scale;
mod split;
mod synth;

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::nn::Tensor;
use crate::Real;

pub use csv_io::{load_feature_table, read_feature_table, write_feature_table, Schema, HERLEV_COLUMNS};
pub use image_io::{load_image, load_image_dir, IMAGE_EXTENSIONS};
pub use scale::{Scaler, ScalerKind};
pub use split::{stratified_split, SplitIndices, SplitSpec};
pub use synth::{synth_blobs, synth_images, write_image_tree};

/// Number of morphological features per Herlev cell.
pub const HERLEV_FEATURES: usize = 20;

/// Row count of the published Herlev table.
pub const HERLEV_ROWS: usize = 917;

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("missing column `{0}` in header")]
    MissingColumn(String),
    #[error("line {line}: expected {expected} fields, found {found}")]
    FieldCount {
        line: u64,
        expected: usize,
        found: usize,
    },
    #[error("line {line}: column `{column}` is not a number: {value:?}")]
    NonNumeric {
        line: u64,
        column: String,
        value: String,
    },
    #[error("line {line}: column `{column}` is not finite")]
    NonFinite { line: u64, column: String },
    #[error("line {line}: unknown cell class {value:?}")]
    UnknownClass { line: u64, value: String },
    #[error("row {row}: expected {expected} features, found {found}")]
    FeatureCount {
        row: usize,
        expected: usize,
        found: usize,
    },
    #[error("row {row}: label {label} does not match cell class {class}")]
    LabelMismatch {
        row: usize,
        label: BinaryLabel,
        class: CellClass,
    },
    #[error("dataset is empty")]
    Empty,
    #[error("no samples labelled {0}")]
    MissingLabel(BinaryLabel),
    #[error("invalid split: {0}")]
    InvalidSplit(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("cannot decode image {path}: {message}")]
    Image { path: PathBuf, message: String },
    #[error("unknown class directory `{0}`")]
    UnknownClassDir(String),
}

/// The seven Herlev cell types.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellClass {
    SuperficialSquamous,
    IntermediateSquamous,
    Columnar,
    MildDysplasia,
    ModerateDysplasia,
    SevereDysplasia,
    CarcinomaInSitu,
}

impl CellClass {
    pub const ALL: [CellClass; 7] = [
        CellClass::SuperficialSquamous,
        CellClass::IntermediateSquamous,
        CellClass::Columnar,
        CellClass::MildDysplasia,
        CellClass::ModerateDysplasia,
        CellClass::SevereDysplasia,
        CellClass::CarcinomaInSitu,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CellClass::SuperficialSquamous => "superficial squamous epithelial",
            CellClass::IntermediateSquamous => "intermediate squamous epithelial",
            CellClass::Columnar => "columnar epithelial",
            CellClass::MildDysplasia => "mild dysplasia",
            CellClass::ModerateDysplasia => "moderate dysplasia",
            CellClass::SevereDysplasia => "severe dysplasia",
            CellClass::CarcinomaInSitu => "carcinoma in situ",
        }
    }

    /// Integer code used by the original Herlev spreadsheet (1..=7).
    pub fn code(self) -> u8 {
        self as u8 + 1
    }

    /// Directory name used by the public Herlev image distribution.
    pub fn dir_name(self) -> &'static str {
        match self {
            CellClass::SuperficialSquamous => "normal_superficiel",
            CellClass::IntermediateSquamous => "normal_intermediate",
            CellClass::Columnar => "normal_columnar",
            CellClass::MildDysplasia => "light_dysplastic",
            CellClass::ModerateDysplasia => "moderate_dysplastic",
            CellClass::SevereDysplasia => "severe_dysplastic",
            CellClass::CarcinomaInSitu => "carcinoma_in_situ",
        }
    }

    pub fn binary(self) -> BinaryLabel {
        to_binary(self)
    }
}

impl fmt::Display for CellClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UnknownCellClass(pub String);

impl fmt::Display for UnknownCellClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "unknown cell class {:?}", self.0)
    }
}

impl std::error::Error for UnknownCellClass {}

impl FromStr for CellClass {
    type Err = UnknownCellClass;

    /// Accepts the canonical names, the Herlev directory names and the
    /// integer codes 1..=7. Case, underscores, hyphens and repeated
    /// whitespace are ignored.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm = s
            .trim()
            .to_ascii_lowercase()
            .replace(['_', '-'], " ")
            .split_whitespace()
            .collect::<Vec<_>>()
            .join(" ");
        if let Ok(code) = norm.parse::<u8>() {
            return match code {
                1..=7 => Ok(CellClass::ALL[usize::from(code - 1)]),
                _ => Err(UnknownCellClass(s.to_string())),
            };
        }
        for class in CellClass::ALL {
            if norm == class.name() || norm == class.dir_name().replace('_', " ") {
                return Ok(class);
            }
        }
        match norm.as_str() {
            "carcinoma in situ" | "carcinoma" => Ok(CellClass::CarcinomaInSitu),
            "light dysplasia" => Ok(CellClass::MildDysplasia),
            "superficial squamous" => Ok(CellClass::SuperficialSquamous),
            "intermediate squamous" => Ok(CellClass::IntermediateSquamous),
            "columnar" => Ok(CellClass::Columnar),
            _ => Err(UnknownCellClass(s.to_string())),
        }
    }
}

/// Binary diagnosis. `Abnormal` is the positive class everywhere.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BinaryLabel {
    Normal,
    Abnormal,
}

impl BinaryLabel {
    pub const BOTH: [BinaryLabel; 2] = [BinaryLabel::Normal, BinaryLabel::Abnormal];

    #[inline]
    pub fn is_positive(self) -> bool {
        self == BinaryLabel::Abnormal
    }

    #[inline]
    pub fn from_positive(positive: bool) -> Self {
        if positive {
            BinaryLabel::Abnormal
        } else {
            BinaryLabel::Normal
        }
    }

    /// 1 for abnormal, 0 for normal.
    #[inline]
    pub fn target<F: Real>(self) -> F {
        if self.is_positive() {
            F::one()
        } else {
            F::zero()
        }
    }

    #[inline]
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn flip(self) -> Self {
        Self::from_positive(!self.is_positive())
    }
}

impl fmt::Display for BinaryLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BinaryLabel::Normal => "normal",
            BinaryLabel::Abnormal => "abnormal",
        })
    }
}

/// Maps a Herlev class onto the binary task: the three epithelial classes
/// are normal, the dysplasias and carcinoma in situ are abnormal.
pub fn to_binary(class: CellClass) -> BinaryLabel {
    match class {
        CellClass::SuperficialSquamous | CellClass::IntermediateSquamous | CellClass::Columnar => {
            BinaryLabel::Normal
        }
        CellClass::MildDysplasia
        | CellClass::ModerateDysplasia
        | CellClass::SevereDysplasia
        | CellClass::CarcinomaInSitu => BinaryLabel::Abnormal,
    }
}

/// One cell. Synthetic rows carry no Herlev class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample<F> {
    pub features: Vec<F>,
    pub cell_class: Option<CellClass>,
    pub label: BinaryLabel,
}

impl<F: Real> Sample<F> {
    pub fn from_class(features: Vec<F>, class: CellClass) -> Self {
        Sample {
            features,
            cell_class: Some(class),
            label: to_binary(class),
        }
    }
}

/// A validated, immutable table of samples.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTable<F> {
    column_names: Vec<String>,
    rows: Vec<Sample<F>>,
    class_counts: BTreeMap<CellClass, usize>,
}

impl<F: Real> FeatureTable<F> {
    pub fn new(column_names: Vec<String>, rows: Vec<Sample<F>>) -> Result<Self, DataError> {
        if rows.is_empty() {
            return Err(DataError::Empty);
        }
        let width = column_names.len();
        let mut class_counts = BTreeMap::new();
        for (i, row) in rows.iter().enumerate() {
            if row.features.len() != width {
                return Err(DataError::FeatureCount {
                    row: i,
                    expected: width,
                    found: row.features.len(),
                });
            }
            if let Some(j) = row.features.iter().position(|v| !v.is_finite()) {
                return Err(DataError::NonFinite {
                    line: i as u64,
                    column: column_names[j].clone(),
                });
            }
            if let Some(class) = row.cell_class {
                if to_binary(class) != row.label {
                    return Err(DataError::LabelMismatch {
                        row: i,
                        label: row.label,
                        class,
                    });
                }
                *class_counts.entry(class).or_insert(0) += 1;
            }
        }
        Ok(FeatureTable {
            column_names,
            rows,
            class_counts,
        })
    }

    pub fn column_names(&self) -> &[String] {
        &self.column_names
    }

    pub fn rows(&self) -> &[Sample<F>] {
        &self.rows
    }

    pub fn class_counts(&self) -> &BTreeMap<CellClass, usize> {
        &self.class_counts
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.column_names.len()
    }

    pub fn labels(&self) -> Vec<BinaryLabel> {
        self.rows.iter().map(|r| r.label).collect()
    }

    /// `[normal, abnormal]` counts.
    pub fn label_counts(&self) -> [usize; 2] {
        label_counts(self.rows.iter().map(|r| r.label))
    }

    /// Rows at `indices`, in the given order. Panics on out-of-range indices.
    pub fn select(&self, indices: &[usize]) -> Result<Self, DataError> {
        FeatureTable::new(
            self.column_names.clone(),
            indices.iter().map(|&i| self.rows[i].clone()).collect(),
        )
    }

    pub fn to_dataset(&self) -> Dataset<F> {
        Dataset {
            features: self.rows.iter().map(|r| r.features.clone()).collect(),
            labels: self.labels(),
        }
    }
}

pub(crate) fn label_counts(labels: impl IntoIterator<Item = BinaryLabel>) -> [usize; 2] {
    let mut counts = [0usize; 2];
    for l in labels {
        counts[l.index()] += 1;
    }
    counts
}

/// Plain feature matrix plus labels, the input of every classifier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset<F> {
    pub features: Vec<Vec<F>>,
    pub labels: Vec<BinaryLabel>,
}

impl<F: Real> Dataset<F> {
    pub fn new(features: Vec<Vec<F>>, labels: Vec<BinaryLabel>) -> Result<Self, DataError> {
        if features.len() != labels.len() {
            return Err(DataError::InvalidArgument(format!(
                "{} feature rows but {} labels",
                features.len(),
                labels.len()
            )));
        }
        if features.is_empty() {
            return Err(DataError::Empty);
        }
        let width = features[0].len();
        if let Some(i) = features.iter().position(|r| r.len() != width) {
            return Err(DataError::FeatureCount {
                row: i,
                expected: width,
                found: features[i].len(),
            });
        }
        Ok(Dataset { features, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.features.first().map_or(0, Vec::len)
    }

    pub fn label_counts(&self) -> [usize; 2] {
        label_counts(self.labels.iter().copied())
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        Dataset {
            features: indices.iter().map(|&i| self.features[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    /// The label held by the majority; ties go to abnormal.
    pub fn majority_label(&self) -> BinaryLabel {
        let [n, a] = self.label_counts();
        BinaryLabel::from_positive(a >= n)
    }
}

/// A decoded cell image, `(height, width, 3)` with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageSample<F> {
    pub pixels: Tensor<F>,
    pub cell_class: Option<CellClass>,
    pub label: BinaryLabel,
}
