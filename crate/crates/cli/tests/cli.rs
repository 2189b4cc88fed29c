use std::path::Path;
use std::process::{Command, Output};

fn cytobench(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cytobench"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("spawn cytobench")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn synth(dir: &Path) {
    let o = cytobench(
        dir,
        &["synth", "--out", "data", "--rows-per-class", "40", "--images-per-class", "12", "--image-size", "16"],
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
}

const CONFIG: &str = r#"
[data]
features = "data/features.csv"
images = "data/images"

[cnn]
input_shape = [16, 16, 3]
filters = [4, 4]
dense_units = 8
epochs = 2
batch_size = 8

[output]
dir = "out"
formats = ["markdown", "csv", "json"]
reproducible = true
"#;

#[test]
fn ingest_reports_short_row_with_its_line() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path());
    let text = std::fs::read_to_string(dir.path().join("data/features.csv")).unwrap();
    let mut lines: Vec<String> = text.lines().map(str::to_string).collect();
    // row on line 4 loses its first value: 19 features plus the class
    lines[3] = lines[3].split_once(',').unwrap().1.to_string();
    std::fs::write(dir.path().join("short.csv"), lines.join("\n")).unwrap();

    let o = cytobench(dir.path(), &["ingest", "--features", "short.csv"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("line 4: expected 21 fields, found 20"), "{}", stderr(&o));

    let o = cytobench(dir.path(), &["ingest", "--features", "data/features.csv", "--images", "data/images"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("features: 80 rows, 20 columns"), "{}", stdout(&o));
}

#[test]
fn bench_with_fixed_seed_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path());
    std::fs::write(dir.path().join("bench.toml"), CONFIG).unwrap();
    let mut runs = Vec::new();
    for _ in 0..2 {
        let o = cytobench(dir.path(), &["--config", "bench.toml", "--seed", "7", "bench"]);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
        let files: Vec<Vec<u8>> = ["report.md", "report.csv", "report.json"]
            .iter()
            .map(|f| std::fs::read(dir.path().join("out").join(f)).unwrap())
            .collect();
        runs.push((stdout(&o), files));
    }
    assert_eq!(runs[0], runs[1]);
    assert!(runs[0].0.contains("- seed: 7"));
    assert!(runs[0].0.contains("CNN (test)"), "{}", runs[0].0);
    assert!(dir.path().join("out/history.csv").exists());
    assert!(dir.path().join("out/timings.json").exists());
}

#[test]
fn train_then_evaluate_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path());
    std::fs::write(dir.path().join("bench.toml"), CONFIG).unwrap();
    let o = cytobench(
        dir.path(),
        &["--config", "bench.toml", "--format", "json", "train", "--model", "knn", "--param", "k=5"],
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let trained: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    let o = cytobench(dir.path(), &["--config", "bench.toml", "--format", "json", "evaluate", "--model", "out/model.json"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let evaluated: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(trained["knn"], evaluated["test"]);
}

#[test]
fn grid_search_writes_leaderboard() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path());
    std::fs::write(dir.path().join("bench.toml"), CONFIG).unwrap();
    let o = cytobench(
        dir.path(),
        &["--config", "bench.toml", "grid-search", "--model", "knn", "--grid", "k=1,3,5", "--folds", "3"],
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).starts_with("knn: 3 trials"), "{}", stdout(&o));
    let csv = std::fs::read_to_string(dir.path().join("out/search.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4);
}

#[test]
fn gradcheck_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    let o = cytobench(dir.path(), &["gradcheck"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("(ok)"));
}

#[test]
fn usage_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(cytobench(dir.path(), &["bench", "--no-such-flag"]).status.code(), Some(1));
    assert_eq!(cytobench(dir.path(), &["frobnicate"]).status.code(), Some(1));
    assert_eq!(cytobench(dir.path(), &["train", "--model", "perceptron"]).status.code(), Some(1));
    let o = cytobench(dir.path(), &["--config", "missing.toml", "bench"]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
    assert_eq!(cytobench(dir.path(), &["--help"]).status.code(), Some(0));
}
