//! Command-line front end for the cytobench toolkit.
//!
//! Exit codes: 0 on success, 1 for usage errors and invalid inputs
//! (config, data, parameters, failed gradient check), 2 for failures while
//! running.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use cytobench::bench::{
    load_features, load_images, run_benchmark, run_grid_search, write_outputs, write_search,
    BenchError, ExperimentConfig, ReportFormat,
};
use cytobench::classifiers::{ClassifierKind, ClassifierSpec, ParamValue, Pipeline};
use cytobench::data::{
    stratified_split, synth_blobs, synth_images, write_feature_table, write_image_tree, BinaryLabel,
    FeatureTable, Schema, HERLEV_COLUMNS,
};
use cytobench::metrics::{fraction4, Metric, MetricsReport};
use cytobench::nn::{
    evaluate_images, load_weights, reduced_grad_check, save_weights, train_split, Network,
};
use cytobench::tuning::search;

/// Largest acceptable relative error of the gradient check.
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Parser)]
#[command(name = "cytobench", version, about = "Pap-smear cell classifier benchmark")]
struct Cli {
    /// Seed for splits, randomized models and CNN training.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Experiment config (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Report format(s): markdown, csv, json (comma separated).
    #[arg(long, global = true, value_delimiter = ',')]
    format: Vec<ReportFormat>,
    /// Log progress to stderr.
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct DataArgs {
    /// Feature CSV (overrides the config).
    #[arg(long)]
    features: Option<PathBuf>,
    /// Image root with one directory per class (overrides the config).
    #[arg(long)]
    images: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Validate a feature table and/or image tree and summarize it.
    Ingest(DataArgs),
    /// Fit one model on the train split and report test metrics.
    Train {
        /// Classifier key (logreg, knn, svm, gnb, dtree, rforest, gboost) or `cnn`.
        #[arg(long)]
        model: String,
        /// Parameter override, `name=value`; repeatable.
        #[arg(long = "param", value_name = "NAME=VALUE")]
        params: Vec<String>,
        #[command(flatten)]
        data: DataArgs,
    },
    /// Score a saved model (`model.json` or `cnn.weights`).
    Evaluate {
        #[arg(long)]
        model: PathBuf,
        /// Score every row instead of the test split.
        #[arg(long)]
        all: bool,
        #[command(flatten)]
        data: DataArgs,
    },
    /// Run the full comparison and write report files.
    Bench(DataArgs),
    /// Cross-validated grid search.
    GridSearch {
        /// Search only this classifier; its axes come from `--grid`.
        #[arg(long)]
        model: Option<ClassifierKind>,
        /// Axis `name=v1,v2,...`; repeatable.
        #[arg(long = "grid", value_name = "NAME=VALUES")]
        axes: Vec<String>,
        #[arg(long)]
        folds: Option<usize>,
        #[command(flatten)]
        data: DataArgs,
    },
    /// Finite-difference check of the CNN gradients on a reduced network.
    Gradcheck,
    /// Write a synthetic feature table and image tree.
    Synth {
        #[arg(long, default_value_t = 100)]
        rows_per_class: usize,
        #[arg(long, default_value_t = 0.6)]
        separation: f64,
        #[arg(long, default_value_t = 20)]
        images_per_class: usize,
        #[arg(long, default_value_t = 64)]
        image_size: usize,
    },
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Bench(BenchError),
    Validation(String),
}

impl<E: Into<BenchError>> From<E> for CliError {
    fn from(e: E) -> Self {
        CliError::Bench(e.into())
    }
}

impl CliError {
    fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Validation(_) => 1,
            CliError::Bench(e) => e.exit_code(),
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Validation(m) => f.write_str(m),
            CliError::Bench(e) => write!(f, "{e}"),
        }
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// exit code. Normal output goes to `out`, diagnostics to stderr.
pub fn run<I, T>(args: I, out: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return code;
        }
    };
    if cli.verbose {
        let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
            .is_test(cfg!(test))
            .try_init();
    }
    match execute(&cli, out) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn base_config(cli: &Cli, data: Option<&DataArgs>) -> Result<ExperimentConfig, CliError> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg = cfg.with_seed(s);
    }
    if let Some(o) = &cli.out {
        cfg.output.dir = o.clone();
    }
    if !cli.format.is_empty() {
        cfg.output.formats = cli.format.clone();
    }
    if let Some(d) = data {
        if let Some(f) = &d.features {
            cfg.data.features = Some(f.clone());
        }
        if let Some(i) = &d.images {
            cfg.data.images = Some(i.clone());
        }
    }
    Ok(cfg)
}

fn out_dir(cli: &Cli, cfg: &ExperimentConfig) -> PathBuf {
    cli.out.clone().unwrap_or_else(|| cfg.output.dir.clone())
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|source| {
        CliError::Bench(BenchError::Io {
            path: dir.to_path_buf(),
            source,
        })
    })
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| {
        CliError::Bench(BenchError::Io {
            path: path.to_path_buf(),
            source,
        })
    }
}

fn parse_value(raw: &str) -> ParamValue {
    raw.parse().unwrap_or_else(|_| ParamValue::Text(raw.to_string()))
}

fn parse_param(raw: &str) -> Result<(String, ParamValue), CliError> {
    let (k, v) = raw
        .split_once('=')
        .ok_or_else(|| CliError::Usage(format!("expected NAME=VALUE, got `{raw}`")))?;
    Ok((k.trim().to_string(), parse_value(v.trim())))
}

fn metrics_block(rows: &[(&str, &MetricsReport)], format: ReportFormat) -> String {
    match format {
        ReportFormat::Json => {
            let map: serde_json::Map<String, serde_json::Value> = rows
                .iter()
                .map(|(k, r)| (k.to_string(), serde_json::Value::Object(r.to_record())))
                .collect();
            serde_json::to_string_pretty(&map).expect("json") + "\n"
        }
        ReportFormat::Csv => {
            let mut s = String::from("model,metric,percent,fraction\n");
            for (k, r) in rows {
                for m in Metric::ALL {
                    let (p, f) = r
                        .rate(m)
                        .map_or(("n/a".into(), "n/a".into()), |x| {
                            (cytobench::metrics::percent(x).to_string(), format!("{:.4}", fraction4(x)))
                        });
                    s.push_str(&format!("{k},{},{p},{f}\n", m.key()));
                }
            }
            s
        }
        ReportFormat::Markdown => {
            let mut s = format!(
                "| Metric | {} |\n|:--|{}\n",
                rows.iter().map(|(k, _)| *k).collect::<Vec<_>>().join(" | "),
                "--:|".repeat(rows.len())
            );
            for m in Metric::ALL {
                let cells: Vec<String> = rows
                    .iter()
                    .map(|(_, r)| {
                        r.rate(m).map_or("n/a".into(), |x| {
                            format!("{} ({:.4})", cytobench::metrics::percent(x), fraction4(x))
                        })
                    })
                    .collect();
                s.push_str(&format!("| {} | {} |\n", m.title(), cells.join(" | ")));
            }
            s
        }
    }
}

fn first_format(cli: &Cli) -> ReportFormat {
    cli.format.first().copied().unwrap_or(ReportFormat::Markdown)
}

fn execute(cli: &Cli, out: &mut dyn Write) -> Result<i32, CliError> {
    let w = |out: &mut dyn Write, s: &str| out.write_all(s.as_bytes()).map_err(io_err(Path::new("<stdout>")));
    match &cli.command {
        Command::Ingest(data) => {
            let cfg = base_config(cli, Some(data))?;
            if cfg.data.features.is_none() && cfg.data.images.is_none() {
                return Err(CliError::Usage("ingest needs --features and/or --images".into()));
            }
            if cfg.data.features.is_some() {
                let table = load_features(&cfg)?;
                let [n, a] = table.label_counts();
                w(out, &format!("features: {} rows, {} columns\n", table.len(), table.n_features()))?;
                for (class, count) in table.class_counts() {
                    w(out, &format!("  {class}: {count}\n"))?;
                }
                w(out, &format!("  normal: {n}, abnormal: {a}\n"))?;
            }
            if cfg.data.images.is_some() {
                let images = load_images(&cfg)?;
                let a = images.iter().filter(|i| i.label.is_positive()).count();
                w(out, &format!(
                    "images: {} at {:?}, normal: {}, abnormal: {a}\n",
                    images.len(),
                    cfg.cnn.input_shape,
                    images.len() - a
                ))?;
            }
            Ok(0)
        }
        Command::Train { model, params, data } => {
            let cfg = base_config(cli, Some(data))?;
            let dir = out_dir(cli, &cfg);
            create_dir(&dir)?;
            if model == "cnn" {
                if !params.is_empty() {
                    return Err(CliError::Usage("set CNN options in the [cnn] config table".into()));
                }
                cfg.cnn.validate().map_err(|e| CliError::Validation(e.to_string()))?;
                let images = load_images(&cfg)?;
                let run = train_split(&cfg.cnn, &images)?;
                let pick = |idx: &[usize]| idx.iter().map(|&i| images[i].clone()).collect::<Vec<_>>();
                let (_, tr) = evaluate_images(&run.network, &pick(&run.split.train), cfg.cnn.batch_size)?;
                let (_, te) = evaluate_images(&run.network, &pick(&run.split.test), cfg.cnn.batch_size)?;
                let weights = dir.join("cnn.weights");
                save_weights(&run.network, &weights)?;
                let hist_path = dir.join("history.csv");
                let file = std::fs::File::create(&hist_path).map_err(io_err(&hist_path))?;
                run.history.write_csv(file)?;
                w(out, &metrics_block(&[("train", &tr), ("test", &te)], first_format(cli)))?;
                eprintln!("wrote {} and {}", weights.display(), hist_path.display());
                return Ok(0);
            }
            let kind: ClassifierKind = model.parse().map_err(CliError::Usage)?;
            let mut spec = cfg.spec_for(kind);
            for p in params {
                let (k, v) = parse_param(p)?;
                spec.params.insert(k, v);
            }
            spec.validate().map_err(|e| CliError::Validation(e.to_string()))?;
            cfg.split.validate()?;
            let data = load_features(&cfg)?.to_dataset();
            let split = stratified_split(&data.labels, &cfg.split)?;
            let pipeline = Pipeline::fit(&spec, &data.subset(&split.train_and_validation()), cfg.split.seed)?;
            let report = pipeline.evaluate(&data.subset(&split.test))?;
            let path = dir.join("model.json");
            std::fs::write(&path, pipeline.to_json()?).map_err(io_err(&path))?;
            w(out, &metrics_block(&[(kind.key(), &report)], first_format(cli)))?;
            eprintln!("wrote {}", path.display());
            Ok(0)
        }
        Command::Evaluate { model, all, data } => {
            let cfg = base_config(cli, Some(data))?;
            let is_json = model.extension().is_some_and(|e| e == "json");
            let report = if is_json {
                let text = std::fs::read_to_string(model).map_err(io_err(model))?;
                let pipeline = Pipeline::<f64>::from_json(&text)?;
                let data = load_features(&cfg)?.to_dataset();
                let rows: Vec<usize> = if *all {
                    (0..data.len()).collect()
                } else {
                    stratified_split(&data.labels, &cfg.split)?.test
                };
                pipeline.evaluate(&data.subset(&rows))?
            } else {
                let net: Network<f64> = load_weights(model)?;
                let mut cfg = cfg;
                let shape = net.input_shape();
                if shape.len() == 3 {
                    cfg.cnn.input_shape = [shape[0], shape[1], shape[2]];
                }
                let images = load_images(&cfg)?;
                let rows: Vec<usize> = if *all {
                    (0..images.len()).collect()
                } else {
                    let labels: Vec<BinaryLabel> = images.iter().map(|i| i.label).collect();
                    stratified_split(&labels, &cfg.cnn.split_spec())?.test
                };
                let picked: Vec<_> = rows.iter().map(|&i| images[i].clone()).collect();
                evaluate_images(&net, &picked, cfg.cnn.batch_size)?.1
            };
            let name = if *all { "all" } else { "test" };
            w(out, &metrics_block(&[(name, &report)], first_format(cli)))?;
            Ok(0)
        }
        Command::Bench(data) => {
            let cfg = base_config(cli, Some(data))?;
            let run = run_benchmark(&cfg)?;
            let paths = write_outputs(&run, &cfg)?;
            w(out, &run.table.render(first_format(cli)))?;
            for p in paths {
                eprintln!("wrote {}", p.display());
            }
            Ok(0)
        }
        Command::GridSearch {
            model,
            axes,
            folds,
            data,
        } => {
            let mut cfg = base_config(cli, Some(data))?;
            if let Some(k) = folds {
                cfg.tuning.folds = *k;
            }
            let reports = match model {
                Some(kind) => {
                    let mut grid = cfg.grid.get(kind.key()).cloned().unwrap_or_default();
                    for a in axes {
                        let (name, values) = a
                            .split_once('=')
                            .ok_or_else(|| CliError::Usage(format!("expected NAME=V1,V2, got `{a}`")))?;
                        grid = grid.axis(name.trim(), values.split(',').map(|v| parse_value(v.trim())));
                    }
                    cfg.models.classical = vec![*kind];
                    cfg.models.cnn = false;
                    cfg.grid = BTreeMap::from([(kind.key().to_string(), grid.clone())]);
                    cfg.validate()?;
                    let data = load_features(&cfg)?.to_dataset();
                    vec![search(&grid, *kind, &data, &cfg.search_options())?]
                }
                None => {
                    if !axes.is_empty() {
                        return Err(CliError::Usage("--grid needs --model".into()));
                    }
                    cfg.models.cnn = false;
                    run_grid_search(&cfg)?
                }
            };
            let paths = write_search(&reports, &out_dir(cli, &cfg))?;
            for r in &reports {
                let best = r.best.as_ref().map_or_else(|| "none".to_string(), ClassifierSpec::to_string);
                let acc = r.best_trial().map_or(f64::NAN, |t| t.mean_accuracy);
                w(out, &format!(
                    "{}: {} trials, best {best} (mean accuracy {acc:.4}), {:.2}s\n",
                    r.kind,
                    r.leaderboard.len(),
                    r.total_seconds
                ))?;
            }
            for p in paths {
                eprintln!("wrote {}", p.display());
            }
            Ok(0)
        }
        Command::Gradcheck => {
            let r = reduced_grad_check(cli.seed.unwrap_or(0))?;
            let pass = r.max_relative_error < GRADCHECK_TOLERANCE;
            w(out, &format!(
                "max relative error: {:.3e} over {} parameters ({})\n",
                r.max_relative_error,
                r.checked,
                if pass { "ok" } else { "FAILED" }
            ))?;
            Ok(if pass { 0 } else { 1 })
        }
        Command::Synth {
            rows_per_class,
            separation,
            images_per_class,
            image_size,
        } => {
            let dir = cli.out.clone().ok_or_else(|| CliError::Usage("synth needs --out".into()))?;
            create_dir(&dir)?;
            let seed = cli.seed.unwrap_or(0);
            let blobs = synth_blobs::<f64>(*rows_per_class, HERLEV_COLUMNS.len(), *separation, seed)?;
            let schema = Schema::herlev();
            let table = FeatureTable::new(schema.feature_columns.clone(), blobs.rows().to_vec())?;
            let path = dir.join("features.csv");
            let file = std::fs::File::create(&path).map_err(io_err(&path))?;
            write_feature_table(&table, &schema.class_column, file)?;
            let images = synth_images::<f64>(*images_per_class, *image_size, seed)?;
            write_image_tree(&images, dir.join("images"))?;
            w(out, &format!(
                "wrote {} feature rows and {} images to {}\n",
                table.len(),
                images.len(),
                dir.display()
            ))?;
            Ok(0)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run_capture(args: &[&str]) -> (i32, String) {
        let mut buf = Vec::new();
        let code = run(std::iter::once("cytobench").chain(args.iter().copied()), &mut buf);
        (code, String::from_utf8(buf).unwrap())
    }

    #[test]
    fn usage_errors_exit_one() {
        assert_eq!(run_capture(&["frobnicate"]).0, 1);
        assert_eq!(run_capture(&["gradcheck", "--bogus"]).0, 1);
        assert_eq!(run_capture(&[]).0, 1);
        assert_eq!(run_capture(&["--help"]).0, 0);
    }

    #[test]
    fn gradcheck_passes() {
        let (code, text) = run_capture(&["gradcheck"]);
        assert_eq!(code, 0, "{text}");
        assert!(text.starts_with("max relative error: "));
    }

    #[test]
    fn params_parse() {
        assert_eq!(parse_param("k=9").unwrap(), ("k".into(), ParamValue::Num(9.0)));
        assert_eq!(parse_param("gamma=scale").unwrap().1, ParamValue::Text("scale".into()));
        assert!(parse_param("k").is_err());
    }
}
