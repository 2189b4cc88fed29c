//! Grid expansion, stratified k-fold and parallel hyperparameter search.
//!
//! Trials are independent: each one fits a [`Pipeline`] per fold on the
//! remaining folds and scores it on the held-out fold. Trials run on the
//! rayon pool but results are gathered back into grid order before
//! ranking, so the leaderboard does not depend on the worker count.

use std::collections::BTreeMap;
use std::io::Write;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classifiers::{ClassifierKind, ClassifierSpec, FitError, ParamValue, Pipeline};
use crate::data::{BinaryLabel, DataError, Dataset};
use crate::metrics::MetricsReport;
use crate::Real;

#[derive(Debug, thiserror::Error)]
pub enum TuningError {
    #[error(transparent)]
    Fit(#[from] FitError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Candidate values per parameter name.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParamGrid {
    pub axes: BTreeMap<String, Vec<ParamValue>>,
}

impl ParamGrid {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn axis<V: Into<ParamValue>>(mut self, name: &str, values: impl IntoIterator<Item = V>) -> Self {
        self.axes
            .insert(name.to_string(), values.into_iter().map(Into::into).collect());
        self
    }

    /// Number of specs the grid expands to.
    pub fn cardinality(&self) -> usize {
        self.axes.values().map(Vec::len).product()
    }
}

/// Cartesian product of the axes, axis names in lexicographic order with
/// the last axis varying fastest. An empty grid yields the default spec.
pub fn expand(kind: ClassifierKind, grid: &ParamGrid) -> Result<Vec<ClassifierSpec>, FitError> {
    for (name, values) in &grid.axes {
        if name != "scaler" && !kind.param_names().contains(&name.as_str()) {
            return Err(FitError::UnknownParam {
                kind,
                name: name.clone(),
            });
        }
        if values.is_empty() {
            return Err(FitError::InvalidParam {
                name: name.clone(),
                reason: "grid axis has no values".into(),
            });
        }
    }
    let mut specs = vec![ClassifierSpec::new(kind)];
    for (name, values) in &grid.axes {
        specs = specs
            .into_iter()
            .flat_map(|s| values.iter().map(move |v| s.clone().with(name, v.clone())))
            .collect();
    }
    Ok(specs)
}

/// Partitions `0..labels.len()` into `k` folds.
///
/// Indices are shuffled per label and dealt round-robin, continuing the
/// deal across labels, so fold sizes differ by at most one overall and
/// per label. Each fold is returned sorted.
pub fn kfold(labels: &[BinaryLabel], k: usize, seed: u64, stratified: bool) -> Result<Vec<Vec<usize>>, DataError> {
    if k < 2 {
        return Err(DataError::InvalidArgument(format!("k must be at least 2, got {k}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let groups: Vec<Vec<usize>> = if stratified {
        BinaryLabel::BOTH
            .iter()
            .map(|&l| (0..labels.len()).filter(|&i| labels[i] == l).collect::<Vec<_>>())
            .filter(|g| !g.is_empty())
            .collect()
    } else {
        vec![(0..labels.len()).collect()]
    };
    let smallest = groups.iter().map(Vec::len).min().unwrap_or(0);
    if k > smallest {
        return Err(DataError::InvalidArgument(format!(
            "k = {k} exceeds the smallest {} ({smallest})",
            if stratified { "class count" } else { "sample count" }
        )));
    }
    let mut folds = vec![Vec::new(); k];
    let mut next = 0;
    for mut g in groups {
        g.shuffle(&mut rng);
        for i in g {
            folds[next].push(i);
            next = (next + 1) % k;
        }
    }
    for f in &mut folds {
        f.sort_unstable();
    }
    Ok(folds)
}

/// Training indices for fold `f`: every index not in `folds[f]`, sorted.
pub fn fold_complement(folds: &[Vec<usize>], f: usize) -> Vec<usize> {
    let mut train: Vec<usize> = folds
        .iter()
        .enumerate()
        .filter(|(j, _)| *j != f)
        .flat_map(|(_, idx)| idx.iter().copied())
        .collect();
    train.sort_unstable();
    train
}

/// Fits `spec` on every fold except `f`.
pub fn fit_fold<F: Real>(
    spec: &ClassifierSpec,
    data: &Dataset<F>,
    folds: &[Vec<usize>],
    f: usize,
    seed: u64,
) -> Result<Pipeline<F>, FitError> {
    Pipeline::fit(spec, &data.subset(&fold_complement(folds, f)), seed)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchOptions {
    pub folds: usize,
    pub seed: u64,
    pub stratified: bool,
    pub parallel: bool,
    /// Only the first `max_trials` grid entries are run.
    pub max_trials: Option<usize>,
    /// Checked between folds; a trial over budget is recorded as failed.
    pub trial_timeout: Option<Duration>,
}

impl Default for SearchOptions {
    fn default() -> Self {
        SearchOptions {
            folds: 5,
            seed: 0,
            stratified: true,
            parallel: true,
            max_trials: None,
            trial_timeout: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialResult {
    /// Position in the expanded grid.
    pub grid_index: usize,
    pub spec: ClassifierSpec,
    pub fold_metrics: Vec<MetricsReport>,
    /// Mean of the fold accuracies; NaN for failed trials.
    pub mean_accuracy: f64,
    pub wall_seconds: f64,
    pub error: Option<String>,
}

impl TrialResult {
    pub fn is_failure(&self) -> bool {
        self.error.is_some()
    }

    /// Everything except timing.
    pub fn same_outcome(&self, other: &TrialResult) -> bool {
        self.grid_index == other.grid_index
            && self.spec == other.spec
            && self.fold_metrics == other.fold_metrics
            && self.error == other.error
            && (self.mean_accuracy == other.mean_accuracy
                || (self.mean_accuracy.is_nan() && other.mean_accuracy.is_nan()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SearchReport {
    pub kind: ClassifierKind,
    /// Best first; ties and failures keep grid order, failures last.
    pub leaderboard: Vec<TrialResult>,
    /// `None` only when every trial failed.
    pub best: Option<ClassifierSpec>,
    pub total_seconds: f64,
    /// Grid entries not run because of `max_trials`.
    pub skipped: usize,
}

fn run_trial<F: Real>(
    index: usize,
    spec: ClassifierSpec,
    data: &Dataset<F>,
    folds: &[Vec<usize>],
    options: &SearchOptions,
) -> TrialResult {
    let started = Instant::now();
    let mut fold_metrics = Vec::with_capacity(folds.len());
    let mut error = None;
    for f in 0..folds.len() {
        if let Some(limit) = options.trial_timeout {
            if started.elapsed() > limit {
                error = Some(format!("timed out after {:.3}s", started.elapsed().as_secs_f64()));
                break;
            }
        }
        let outcome = fit_fold(&spec, data, folds, f, options.seed)
            .and_then(|p| p.evaluate(&data.subset(&folds[f])));
        match outcome {
            Ok(m) => fold_metrics.push(m),
            Err(e) => {
                error = Some(e.to_string());
                break;
            }
        }
    }
    let mean_accuracy = if error.is_some() {
        f64::NAN
    } else {
        fold_metrics.iter().map(|m| m.accuracy().unwrap_or(0.0)).sum::<f64>() / fold_metrics.len() as f64
    };
    TrialResult {
        grid_index: index,
        spec,
        fold_metrics,
        mean_accuracy,
        wall_seconds: started.elapsed().as_secs_f64(),
        error,
    }
}

/// Runs prepared specs against shared folds and ranks them.
pub fn search_specs<F: Real>(
    kind: ClassifierKind,
    specs: Vec<ClassifierSpec>,
    data: &Dataset<F>,
    options: &SearchOptions,
) -> Result<SearchReport, TuningError> {
    let started = Instant::now();
    let folds = kfold(&data.labels, options.folds, options.seed, options.stratified)?;
    let total = specs.len();
    let run = options.max_trials.unwrap_or(total).min(total);
    let jobs: Vec<(usize, ClassifierSpec)> = specs.into_iter().take(run).enumerate().collect();
    let mut trials: Vec<TrialResult> = if options.parallel {
        jobs.into_par_iter()
            .map(|(i, s)| run_trial(i, s, data, &folds, options))
            .collect()
    } else {
        jobs.into_iter()
            .map(|(i, s)| run_trial(i, s, data, &folds, options))
            .collect()
    };
    trials.sort_by(|a, b| {
        let key = |t: &TrialResult| if t.is_failure() { f64::NEG_INFINITY } else { t.mean_accuracy };
        key(b).total_cmp(&key(a)).then(a.grid_index.cmp(&b.grid_index))
    });
    let best = trials.iter().find(|t| !t.is_failure()).map(|t| t.spec.clone());
    Ok(SearchReport {
        kind,
        leaderboard: trials,
        best,
        total_seconds: started.elapsed().as_secs_f64(),
        skipped: total - run,
    })
}

/// Expands `grid` for `kind` and cross-validates every spec on `data`.
pub fn search<F: Real>(
    grid: &ParamGrid,
    kind: ClassifierKind,
    data: &Dataset<F>,
    options: &SearchOptions,
) -> Result<SearchReport, TuningError> {
    search_specs(kind, expand(kind, grid)?, data, options)
}

impl SearchReport {
    pub fn best_trial(&self) -> Option<&TrialResult> {
        self.leaderboard.first().filter(|t| !t.is_failure())
    }

    /// One row per trial in leaderboard order.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), TuningError> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record([
            "rank",
            "grid_index",
            "kind",
            "params",
            "mean_accuracy",
            "fold_accuracies",
            "wall_seconds",
            "error",
        ])?;
        for (rank, t) in self.leaderboard.iter().enumerate() {
            let folds: Vec<String> = t
                .fold_metrics
                .iter()
                .map(|m| m.accuracy().map(|a| format!("{a:.6}")).unwrap_or_default())
                .collect();
            w.write_record([
                (rank + 1).to_string(),
                t.grid_index.to_string(),
                t.spec.kind.to_string(),
                t.spec.params_label(),
                if t.is_failure() {
                    String::new()
                } else {
                    format!("{:.6}", t.mean_accuracy)
                },
                folds.join(";"),
                format!("{:.6}", t.wall_seconds),
                t.error.clone().unwrap_or_default(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_json(&self) -> Result<String, TuningError> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Leaderboards agree on everything except timing.
    pub fn same_leaderboard(&self, other: &SearchReport) -> bool {
        self.leaderboard.len() == other.leaderboard.len()
            && self
                .leaderboard
                .iter()
                .zip(&other.leaderboard)
                .all(|(a, b)| a.same_outcome(b))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth_blobs;
    use proptest::prelude::*;

    #[test]
    fn expansion_order() {
        let grid = ParamGrid::new().axis("k", [1.0, 2.0]).axis("p", [1.0, 3.0]);
        let specs = expand(ClassifierKind::Knn, &grid).unwrap();
        let labels: Vec<String> = specs.iter().map(ClassifierSpec::params_label).collect();
        assert_eq!(labels, ["k=1,p=1", "k=1,p=3", "k=2,p=1", "k=2,p=3"]);
        let specs = expand(ClassifierKind::Knn, &ParamGrid::new()).unwrap();
        assert_eq!(specs, vec![ClassifierSpec::new(ClassifierKind::Knn)]);
        let odd = ParamGrid::new().axis("k", (1..=15).step_by(2).map(|k| k as f64));
        assert_eq!(expand(ClassifierKind::Knn, &odd).unwrap().len(), 8);
    }

    #[test]
    fn expansion_rejects_bad_axes() {
        let grid = ParamGrid::new().axis("depth", [1.0]);
        assert!(matches!(
            expand(ClassifierKind::Knn, &grid),
            Err(FitError::UnknownParam { .. })
        ));
        let grid = ParamGrid::new().axis::<f64>("k", []);
        assert!(expand(ClassifierKind::Knn, &grid).is_err());
    }

    #[test]
    fn ten_samples_five_folds() {
        let labels = vec![BinaryLabel::Normal; 10];
        let folds = kfold(&labels, 5, 3, true).unwrap();
        assert!(folds.iter().all(|f| f.len() == 2));
        assert!(kfold(&labels, 11, 3, false).is_err());
        assert!(kfold(&labels, 1, 3, false).is_err());
    }

    #[test]
    fn k_above_smallest_class_is_rejected() {
        let mut labels = vec![BinaryLabel::Normal; 20];
        labels[..3].fill(BinaryLabel::Abnormal);
        assert!(kfold(&labels, 4, 0, true).is_err());
        assert!(kfold(&labels, 3, 0, true).is_ok());
    }

    proptest! {
        #[test]
        fn folds_partition_and_stratify(
            n_pos in 5usize..60,
            n_neg in 5usize..60,
            k in 2usize..6,
            seed in any::<u64>(),
        ) {
            let mut labels = vec![BinaryLabel::Abnormal; n_pos];
            labels.extend(vec![BinaryLabel::Normal; n_neg]);
            let folds = kfold(&labels, k, seed, true).unwrap();
            let mut all: Vec<usize> = folds.concat();
            all.sort_unstable();
            prop_assert_eq!(all, (0..labels.len()).collect::<Vec<_>>());
            for f in &folds {
                let pos = f.iter().filter(|&&i| labels[i].is_positive()).count();
                prop_assert!(pos >= n_pos / k && pos <= n_pos.div_ceil(k));
                prop_assert!(f.len() >= labels.len() / k && f.len() <= labels.len().div_ceil(k));
            }
            prop_assert_eq!(folds, kfold(&labels, k, seed, true).unwrap());
        }
    }

    #[test]
    fn sixty_forty_table_folds() {
        let mut labels = vec![BinaryLabel::Normal; 60];
        labels.extend(vec![BinaryLabel::Abnormal; 40]);
        for f in kfold(&labels, 5, 7, true).unwrap() {
            let pos = f.iter().filter(|&&i| labels[i].is_positive()).count();
            assert_eq!((f.len(), pos), (20, 8));
        }
    }

    #[test]
    fn failing_trial_is_recorded() {
        let data = synth_blobs::<f64>(20, 2, 3.0, 1).unwrap().to_dataset();
        let specs = vec![
            ClassifierSpec::new(ClassifierKind::Knn).with("k", 3.0),
            ClassifierSpec::new(ClassifierKind::Knn).with("k", 0.0),
        ];
        let r = search_specs(ClassifierKind::Knn, specs, &data, &SearchOptions::default()).unwrap();
        assert_eq!(r.leaderboard.len(), 2);
        assert!(r.leaderboard[1].is_failure());
        assert_eq!(r.best.as_ref().unwrap().params_label(), "k=3");
    }

    #[test]
    fn single_spec_grid() {
        let data = synth_blobs::<f64>(20, 2, 3.0, 1).unwrap().to_dataset();
        let grid = ParamGrid::new().axis("k", [5.0]);
        let r = search(&grid, ClassifierKind::Knn, &data, &SearchOptions::default()).unwrap();
        assert_eq!(r.leaderboard.len(), 1);
        assert_eq!(r.best.unwrap(), ClassifierSpec::new(ClassifierKind::Knn).with("k", 5.0));
        assert_eq!(r.leaderboard[0].fold_metrics.len(), 5);
    }

    #[test]
    fn max_trials_and_exports() {
        let data = synth_blobs::<f64>(20, 2, 1.0, 1).unwrap().to_dataset();
        let grid = ParamGrid::new().axis("k", [1.0, 3.0, 5.0, 7.0]);
        let opts = SearchOptions {
            max_trials: Some(3),
            ..SearchOptions::default()
        };
        let r = search(&grid, ClassifierKind::Knn, &data, &opts).unwrap();
        assert_eq!((r.leaderboard.len(), r.skipped), (3, 1));
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 4);
        let json: serde_json::Value = serde_json::from_str(&r.to_json().unwrap()).unwrap();
        assert_eq!(json["leaderboard"][0]["spec"]["kind"], "knn");
    }
}
