//! End-to-end comparison runs.
//!
//! [`run_benchmark`] loads the configured data, makes one stratified split
//! shared by every classical model, fits each enabled classifier on the
//! train and validation parts and scores it on the test part, then trains
//! the CNN on its own image split and scores it on both its training and
//! test parts. A model that fails is reported as failed; the run goes on.

mod config;
mod report;

use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;

pub use config::{
    DataConfig, ExperimentConfig, ModelsConfig, OutputConfig, ReportFormat, SyntheticConfig,
    TuningConfig,
};
pub use report::{Column, ComparisonTable, Provenance};

use crate::classifiers::{ClassifierKind, FitError, Pipeline};
use crate::data::{
    load_feature_table, load_image_dir, stratified_split, synth_blobs, synth_images, DataError,
    FeatureTable, ImageSample, SplitIndices,
};
use crate::nn::{evaluate_images, train_split, NnError, TrainHistory};
use crate::tuning::{search, SearchReport, TuningError};

#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Fit(#[from] FitError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Tuning(#[from] TuningError),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl BenchError {
    /// `1` for problems with the inputs (config, data, parameters), `2` for
    /// failures while running.
    pub fn exit_code(&self) -> i32 {
        match self {
            BenchError::Config(_) | BenchError::Data(_) => 1,
            BenchError::Fit(FitError::UnknownParam { .. } | FitError::InvalidParam { .. }) => 1,
            BenchError::Tuning(TuningError::Data(_)) => 1,
            BenchError::Tuning(TuningError::Fit(FitError::UnknownParam { .. } | FitError::InvalidParam { .. })) => 1,
            _ => 2,
        }
    }
}

/// Everything a benchmark run produced.
#[derive(Debug, Clone)]
pub struct BenchRun {
    pub table: ComparisonTable,
    pub split: Option<SplitIndices>,
    pub pipelines: Vec<Pipeline<f64>>,
    pub history: Option<TrainHistory>,
}

/// The configured feature table, read from disk or generated.
pub fn load_features(cfg: &ExperimentConfig) -> Result<FeatureTable<f64>, BenchError> {
    let schema = cfg.data.schema();
    match (&cfg.data.features, &cfg.data.synthetic) {
        (Some(path), _) => Ok(load_feature_table(path, &schema)?),
        (None, Some(s)) => {
            let blobs = synth_blobs::<f64>(s.rows_per_class, schema.feature_columns.len(), s.separation, s.seed)?;
            Ok(FeatureTable::new(schema.feature_columns, blobs.rows().to_vec())?)
        }
        (None, None) => Err(BenchError::Config("no feature data configured".into())),
    }
}

/// The configured images at the CNN input size, read from disk or generated.
pub fn load_images(cfg: &ExperimentConfig) -> Result<Vec<ImageSample<f64>>, BenchError> {
    let [h, w, _] = cfg.cnn.input_shape;
    match (&cfg.data.images, &cfg.data.synthetic) {
        (Some(root), _) => Ok(load_image_dir(root, (h, w))?),
        (None, Some(s)) => Ok(synth_images(s.images_per_class, h, s.seed)?),
        (None, None) => Err(BenchError::Config("no image data configured".into())),
    }
}

pub fn run_benchmark(cfg: &ExperimentConfig) -> Result<BenchRun, BenchError> {
    cfg.validate()?;
    let seed = cfg.split.seed;
    let mut columns = Vec::new();
    let mut pipelines = Vec::new();
    let mut split = None;
    let mut feature_rows = None;
    let mut test_rows = None;

    let kinds: Vec<ClassifierKind> = ClassifierKind::ALL
        .into_iter()
        .filter(|k| cfg.models.classical.contains(k))
        .collect();
    if !kinds.is_empty() {
        let table = load_features(cfg)?;
        let data = table.to_dataset();
        let s = stratified_split(&data.labels, &cfg.split)?;
        let train = data.subset(&s.train_and_validation());
        let test = data.subset(&s.test);
        feature_rows = Some(data.len());
        test_rows = Some(test.len());
        log::info!(
            "{} rows: {} train+validation, {} test",
            data.len(),
            train.len(),
            test.len()
        );
        let results: Vec<(Column, Option<Pipeline<f64>>)> = kinds
            .par_iter()
            .map(|&kind| {
                let spec = cfg.spec_for(kind);
                let started = Instant::now();
                let fitted = Pipeline::fit(&spec, &train, seed)
                    .and_then(|p| p.evaluate(&test).map(|m| (p, m)));
                let wall = started.elapsed().as_secs_f64();
                let mut col = Column {
                    key: kind.key().into(),
                    title: kind.title().into(),
                    spec: Some(spec.to_string()),
                    confusion: None,
                    error: None,
                    wall_seconds: Some(wall),
                };
                match fitted {
                    Ok((p, m)) => {
                        log::info!("{kind}: accuracy {:?} in {wall:.2}s", m.accuracy());
                        col.confusion = Some(m.confusion);
                        (col, Some(p))
                    }
                    Err(e) => {
                        log::warn!("{kind} failed: {e}");
                        col.error = Some(e.to_string());
                        (col, None)
                    }
                }
            })
            .collect();
        for (c, p) in results {
            columns.push(c);
            pipelines.extend(p);
        }
        split = Some(s);
    }

    let mut history = None;
    let mut images = None;
    if cfg.models.cnn {
        let started = Instant::now();
        let outcome = load_images(cfg).and_then(|data| {
            images = Some(data.len());
            let run = train_split(&cfg.cnn, &data)?;
            let pick = |idx: &[usize]| idx.iter().map(|&i| data[i].clone()).collect::<Vec<_>>();
            let (_, train_m) = evaluate_images(&run.network, &pick(&run.split.train), cfg.cnn.batch_size)?;
            let (_, test_m) = evaluate_images(&run.network, &pick(&run.split.test), cfg.cnn.batch_size)?;
            Ok((run.history, train_m, test_m))
        });
        let wall = started.elapsed().as_secs_f64();
        let spec = format!(
            "cnn(filters={:?},dense={},dropout={},epochs={})",
            cfg.cnn.filters, cfg.cnn.dense_units, cfg.cnn.dropout, cfg.cnn.epochs
        );
        let mut cols = [("cnn-train", "CNN (train)"), ("cnn-test", "CNN (test)")].map(|(k, t)| Column {
            key: k.into(),
            title: t.into(),
            spec: Some(spec.clone()),
            confusion: None,
            error: None,
            wall_seconds: Some(wall),
        });
        match outcome {
            Ok((h, train_m, test_m)) => {
                cols[0].confusion = Some(train_m.confusion);
                cols[1].confusion = Some(test_m.confusion);
                history = Some(h);
            }
            Err(e) => {
                log::warn!("cnn failed: {e}");
                for c in &mut cols {
                    c.error = Some(e.to_string());
                }
            }
        }
        columns.extend(cols);
    }

    let table = ComparisonTable {
        columns,
        provenance: Provenance {
            seed,
            cnn_seed: cfg.models.cnn.then_some(cfg.cnn.seed),
            config_hash: cfg.hash(),
            feature_rows,
            test_rows,
            images,
            reproducible: cfg.output.reproducible,
            version: env!("CARGO_PKG_VERSION").into(),
        },
    };
    Ok(BenchRun {
        table,
        split,
        pipelines,
        history,
    })
}

fn write_file(path: &Path, contents: &[u8]) -> Result<(), BenchError> {
    std::fs::write(path, contents).map_err(|source| BenchError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Writes `report.*` for the configured formats, `history.csv` when the
/// CNN ran, and `timings.json` in reproducible mode. Returns the paths.
pub fn write_outputs(run: &BenchRun, cfg: &ExperimentConfig) -> Result<Vec<PathBuf>, BenchError> {
    let dir = &cfg.output.dir;
    std::fs::create_dir_all(dir).map_err(|source| BenchError::Io {
        path: dir.clone(),
        source,
    })?;
    let mut written = Vec::new();
    for &f in &cfg.output.formats {
        let path = dir.join(f.file_name());
        write_file(&path, run.table.render(f).as_bytes())?;
        written.push(path);
    }
    if let Some(h) = &run.history {
        let path = dir.join("history.csv");
        let mut buf = Vec::new();
        h.write_csv(&mut buf)?;
        write_file(&path, &buf)?;
        written.push(path);
    }
    if cfg.output.reproducible {
        let times: serde_json::Map<String, serde_json::Value> = run
            .table
            .columns
            .iter()
            .map(|c| (c.key.clone(), serde_json::json!(c.wall_seconds)))
            .collect();
        let path = dir.join("timings.json");
        write_file(&path, serde_json::to_string_pretty(&times)?.as_bytes())?;
        written.push(path);
    }
    Ok(written)
}

/// Runs every configured grid on the configured feature table.
pub fn run_grid_search(cfg: &ExperimentConfig) -> Result<Vec<SearchReport>, BenchError> {
    cfg.validate()?;
    let grids = cfg.grids()?;
    if grids.is_empty() {
        return Err(BenchError::Config("no [grid.<model>] tables configured".into()));
    }
    let data = load_features(cfg)?.to_dataset();
    let options = cfg.search_options();
    grids
        .iter()
        .map(|(kind, grid)| Ok(search(grid, *kind, &data, &options)?))
        .collect()
}

/// Writes `search.csv` (all grids, leaderboard order per grid) and
/// `search.json`.
pub fn write_search(reports: &[SearchReport], dir: &Path) -> Result<Vec<PathBuf>, BenchError> {
    std::fs::create_dir_all(dir).map_err(|source| BenchError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let mut csv = Vec::new();
    for (i, r) in reports.iter().enumerate() {
        let mut buf = Vec::new();
        r.write_csv(&mut buf)?;
        let text = String::from_utf8(buf).expect("utf-8");
        // one header for the whole file
        let body = if i == 0 {
            text.as_str()
        } else {
            text.split_once('\n').map_or("", |(_, rest)| rest)
        };
        csv.extend_from_slice(body.as_bytes());
    }
    let csv_path = dir.join("search.csv");
    write_file(&csv_path, &csv)?;
    let json_path = dir.join("search.json");
    write_file(&json_path, serde_json::to_string_pretty(reports)?.as_bytes())?;
    Ok(vec![csv_path, json_path])
}
