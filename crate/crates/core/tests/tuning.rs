use cytobench::classifiers::{ClassifierKind, ClassifierSpec, Model, Pipeline};
use cytobench::data::{synth_blobs, Dataset, Scaler, ScalerKind};
use cytobench::tuning::*;

fn blobs(seed: u64) -> Dataset<f64> {
    synth_blobs::<f64>(60, 4, 0.9, seed).unwrap().to_dataset()
}

#[test]
fn parallel_and_sequential_leaderboards_match() {
    let data = blobs(1);
    let grid = ParamGrid::new().axis("k", [1usize, 3, 5, 7, 9]).axis("p", [1.0, 1.5, 2.0, 3.0]);
    assert_eq!(grid.cardinality(), 20);
    let par = search(&grid, ClassifierKind::Knn, &data, &SearchOptions { seed: 4, ..Default::default() }).unwrap();
    let seq = search(
        &grid,
        ClassifierKind::Knn,
        &data,
        &SearchOptions { seed: 4, parallel: false, ..Default::default() },
    )
    .unwrap();
    assert_eq!(par.leaderboard.len(), 20);
    assert!(par.same_leaderboard(&seq));
    assert_eq!(par.best, seq.best);
}

#[test]
fn held_out_fold_never_reaches_the_fit() {
    let mut data = blobs(2);
    let folds = kfold(&data.labels, 5, 3, true).unwrap();
    // make fold 0 wildly different so any leak would show in the scaler
    for &i in &folds[0] {
        data.features[i].iter_mut().for_each(|v| *v += 1e3);
    }
    let spec = ClassifierSpec::new(ClassifierKind::Knn).with("k", 3usize);
    for f in 0..folds.len() {
        let p: Pipeline<f64> = fit_fold(&spec, &data, &folds, f, 0).unwrap();
        let train = fold_complement(&folds, f);
        let rows: Vec<Vec<f64>> = train.iter().map(|&i| data.features[i].clone()).collect();
        assert_eq!(p.scaler, Scaler::fit(&rows, ScalerKind::Zscore).unwrap());
        let Model::Knn(m) = &p.model else { panic!("knn expected") };
        assert_eq!(m.points.len(), train.len());
        for &i in &folds[f] {
            assert!(!train.contains(&i));
        }
    }
}

#[test]
fn best_k_matches_a_sequential_loop() {
    let data = blobs(3);
    let ks: Vec<usize> = (1..=15).collect();
    let grid = ParamGrid::new().axis("k", ks.clone());
    let options = SearchOptions { seed: 9, ..Default::default() };
    let report = search(&grid, ClassifierKind::Knn, &data, &options).unwrap();

    let folds = kfold(&data.labels, 5, 9, true).unwrap();
    let mut best: Option<(f64, usize)> = None;
    for &k in &ks {
        let spec = ClassifierSpec::new(ClassifierKind::Knn).with("k", k);
        let mut total = 0.0;
        for f in 0..folds.len() {
            let train = data.subset(&fold_complement(&folds, f));
            let p = Pipeline::fit(&spec, &train, 9).unwrap();
            let correct = folds[f]
                .iter()
                .filter(|&&i| p.predict(&data.features[i]).unwrap() == data.labels[i])
                .count();
            total += correct as f64 / folds[f].len() as f64;
        }
        let mean = total / folds.len() as f64;
        if best.is_none_or(|(m, _)| mean > m) {
            best = Some((mean, k));
        }
    }
    let (mean, k) = best.unwrap();
    let top = report.best_trial().unwrap();
    assert_eq!(top.spec, ClassifierSpec::new(ClassifierKind::Knn).with("k", k));
    assert!((top.mean_accuracy - mean).abs() < 1e-12);
}
