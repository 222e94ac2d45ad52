//! `fasa`: preprocess flow CSVs, train and evaluate the ANFIS detector, and
//! run the SDN detection/mitigation scenario.
//!
//! Exit codes: 0 success, 1 domain error (bad data, degenerate labels,
//! feature mismatch), 2 usage or I/O error.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use fasa_core::anfis::train::{cross_validate, evaluate, init_for, FoldReport};
use fasa_core::anfis::{fit, AnfisModel, TrainConfig};
use fasa_core::detect::{default_model, simulate, DetectorConfig};
use fasa_core::metrics::{self, EvalReport};
use fasa_core::preprocess::{
    encode_labels, fit_scaler, load_csv, load_csv_resampled, run_pipeline, select_features,
    stratified_split, write_csv, Dataset, LoadOptions, PreprocessConfig, PreprocessError,
};
use fasa_core::simnet::write_trace;
use fasa_core::traffic::{write_timeline, ScenarioConfig};

/// Seed of the collection run behind the built-in simulator model.
const BUILTIN_MODEL_SEED: u64 = 1001;

#[derive(Parser, Debug)]
#[command(
    name = "fasa",
    version,
    about = "ANFIS SYN-flood detection with SDN mitigation"
)]
struct Cli {
    /// Raise log verbosity (repeatable); FASA_LOG overrides.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Clean a raw flow CSV into the selected feature set.
    Preprocess(PreprocessArgs),
    /// Train a detector on a cleaned CSV.
    Train(TrainArgs),
    /// Score a trained model on a labelled CSV.
    Eval(EvalArgs),
    /// Run the detection/mitigation scenario.
    Simulate(SimulateArgs),
}

#[derive(Args, Debug)]
struct PreprocessArgs {
    /// Raw CSV; repeat for several files with identical headers.
    #[arg(long, required = true)]
    input: Vec<PathBuf>,
    /// Cleaned CSV; the manifest is written beside it as `<stem>.manifest.json`.
    #[arg(long)]
    output: PathBuf,
    /// TOML preprocessing configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Cleaned CSV with a `Label` column.
    #[arg(long)]
    input: PathBuf,
    /// Model document; the report is written beside it as `<stem>.report.json`.
    #[arg(long)]
    output: PathBuf,
    /// TOML training configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Run stratified k-fold cross-validation instead of the 80/20 hold-out.
    #[arg(long)]
    folds: Option<usize>,
    #[arg(long)]
    threshold: Option<f64>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    /// Labelled CSV containing the model's feature columns.
    #[arg(long)]
    input: PathBuf,
    /// Directory for `eval.json` and `roc.csv`.
    #[arg(long)]
    output: PathBuf,
    #[arg(long)]
    threshold: Option<f64>,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    /// TOML file with optional `[scenario]` and `[detector]` tables.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Model document; defaults to the built-in simulator model.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Directory for the trace, timeline, decision log and report.
    #[arg(long)]
    output: PathBuf,
    /// Scenario seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    threshold: Option<f64>,
    /// Benign traffic only.
    #[arg(long)]
    no_attack: bool,
}

/// Failure classified by exit code.
enum Failure {
    Domain(anyhow::Error),
    Usage(anyhow::Error),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Domain(_) => 1,
            Failure::Usage(_) => 2,
        }
    }

    fn error(&self) -> &anyhow::Error {
        match self {
            Failure::Domain(e) | Failure::Usage(e) => e,
        }
    }
}

fn usage(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Usage(e.into())
}

fn domain(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Domain(e.into())
}

fn preprocess_failure(e: PreprocessError, stage: &str) -> Failure {
    let is_io = matches!(
        e,
        PreprocessError::Io { .. } | PreprocessError::InvalidConfig(_)
    );
    let e = anyhow::Error::new(e).context(format!("{stage} failed"));
    if is_io {
        Failure::Usage(e)
    } else {
        Failure::Domain(e)
    }
}

type CmdResult = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        2 => "debug",
        _ => "trace",
    };
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("FASA_LOG", level)).init();

    let result = match cli.command {
        Command::Preprocess(a) => cmd_preprocess(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Simulate(a) => cmd_simulate(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error());
            ExitCode::from(f.code())
        }
    }
}

fn require_file(path: &Path) -> CmdResult {
    if path.is_file() {
        Ok(())
    } else {
        Err(usage(anyhow::anyhow!(
            "input file {} not found",
            path.display()
        )))
    }
}

fn read_text(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path)
        .with_context(|| format!("cannot read {}", path.display()))
        .map_err(usage)
}

fn write_text(path: &Path, text: &str) -> CmdResult {
    fs::write(path, text)
        .with_context(|| format!("cannot write {}", path.display()))
        .map_err(usage)
}

fn create(path: &Path) -> Result<BufWriter<File>, Failure> {
    File::create(path)
        .map(BufWriter::new)
        .with_context(|| format!("cannot create {}", path.display()))
        .map_err(usage)
}

fn io_failure(e: std::io::Error, path: &Path) -> Failure {
    usage(anyhow::Error::new(e).context(format!("writing {}", path.display())))
}

fn ensure_dir(path: &Path) -> CmdResult {
    fs::create_dir_all(path)
        .with_context(|| format!("cannot create directory {}", path.display()))
        .map_err(usage)
}

fn ensure_parent(path: &Path) -> CmdResult {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => ensure_dir(p),
        _ => Ok(()),
    }
}

/// `dir/stem.suffix` next to `path`.
fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path
        .file_stem()
        .map_or("out".into(), |s| s.to_string_lossy().into_owned());
    path.with_file_name(format!("{stem}.{suffix}"))
}

fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("report serializes");
    s.push('\n');
    s
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or("undefined".into(), |x| format!("{x:.6}"))
}

fn render_report(title: &str, r: &EvalReport) -> String {
    let c = &r.confusion;
    format!(
        "{title}\n  tp {} fp {} tn {} fn {}\n  accuracy  {}\n  precision {}\n  recall    {}\n  fpr       {}\n  f1        {}\n  auc       {}\n  threshold {}\n",
        c.tp,
        c.fp,
        c.tn,
        c.fn_,
        fmt_opt(r.accuracy),
        fmt_opt(r.precision),
        fmt_opt(r.recall),
        fmt_opt(r.fpr),
        fmt_opt(r.f1),
        fmt_opt(r.auc),
        r.threshold
    )
}

fn cmd_preprocess(a: PreprocessArgs) -> CmdResult {
    for p in &a.input {
        require_file(p)?;
    }
    let mut config = match &a.config {
        Some(p) => toml::from_str::<PreprocessConfig>(&read_text(p)?)
            .with_context(|| format!("preprocess config {}", p.display()))
            .map_err(usage)?,
        None => PreprocessConfig::default(),
    };
    if let Some(seed) = a.seed {
        config.seed = seed;
    }
    config
        .validate()
        .map_err(|e| preprocess_failure(e, "config"))?;
    let opts = LoadOptions {
        label_column: config.label_column.clone(),
        ..LoadOptions::default()
    };
    let ds = if a.input.len() > 1 && config.benign_fraction.is_some() {
        // Resample while streaming so unselected SYN rows are never held.
        let paths: Vec<&Path> = a.input.iter().map(PathBuf::as_path).collect();
        let fraction = config.benign_fraction.take().expect("checked");
        load_csv_resampled(&paths, &opts, fraction, config.seed)
            .map_err(|e| preprocess_failure(e, "load"))?
    } else {
        let mut merged: Option<Dataset> = None;
        for p in &a.input {
            let ds = load_csv(p, &opts).map_err(|e| preprocess_failure(e, "load"))?;
            merged = Some(match merged {
                None => ds,
                Some(mut m) => {
                    m.append(ds).map_err(|_| {
                        preprocess_failure(
                            PreprocessError::HeaderMismatch(p.display().to_string()),
                            "load",
                        )
                    })?;
                    m
                }
            });
        }
        merged.expect("at least one input")
    };
    let (clean, manifest) =
        run_pipeline(ds, &config).map_err(|e| preprocess_failure(e, "preprocess"))?;
    ensure_parent(&a.output)?;
    write_csv(&clean, &a.output, &config.label_column)
        .map_err(|e| preprocess_failure(e, "write"))?;
    let manifest_path = sibling(&a.output, "manifest.json");
    write_text(&manifest_path, &to_json(&manifest))?;

    let mut out = String::new();
    for s in &manifest.stages {
        out.push_str(&format!(
            "{:<22} rows {:>9} -> {:<9} (Δ {:+}) columns {:>3} -> {:<3} (Δ {:+})\n",
            s.stage,
            s.rows_before,
            s.rows_after,
            s.rows_after as i64 - s.rows_before as i64,
            s.columns_before,
            s.columns_after,
            s.columns_after as i64 - s.columns_before as i64
        ));
    }
    out.push_str(&format!(
        "features: {}\nrows: {} ({} benign, {} syn)\nwrote {} and {}\n",
        manifest.features.join(", "),
        manifest.rows,
        manifest.benign,
        manifest.syn,
        a.output.display(),
        manifest_path.display()
    ));
    print!("{out}");
    Ok(())
}

/// Loads a labelled numeric CSV, encoding its label column.
fn load_labelled(path: &Path) -> Result<Dataset, Failure> {
    require_file(path)?;
    let ds = load_csv(path, &LoadOptions::default()).map_err(|e| preprocess_failure(e, "load"))?;
    let ds = encode_labels(ds).map_err(|e| preprocess_failure(e, "label encoding"))?;
    if ds.is_empty() {
        return Err(domain(anyhow::anyhow!(
            "{} has no data rows",
            path.display()
        )));
    }
    Ok(ds)
}

#[derive(Debug, Serialize)]
struct TrainSummary {
    input: String,
    features: Vec<String>,
    rows: usize,
    train_rows: usize,
    test_rows: usize,
    config: TrainConfig,
    epoch_losses: Vec<f64>,
    snapshot_id: String,
    /// Hold-out metrics (80/20 mode).
    holdout: Option<EvalReport>,
    /// Per-fold metrics (k-fold mode).
    folds: Vec<FoldReport>,
}

fn cmd_train(a: TrainArgs) -> CmdResult {
    let mut config = match &a.config {
        Some(p) => toml::from_str::<TrainConfig>(&read_text(p)?)
            .with_context(|| format!("train config {}", p.display()))
            .map_err(usage)?,
        None => TrainConfig::default(),
    };
    if let Some(s) = a.seed {
        config.seed = s;
    }
    if let Some(e) = a.epochs {
        config.epochs = e;
    }
    if let Some(k) = a.folds {
        config.k_folds = k;
    }
    config.validate().map_err(usage)?;
    if let Some(t) = a.threshold {
        if !(t > 0.0 && t < 1.0) {
            return Err(usage(anyhow::anyhow!(
                "threshold must lie in (0, 1), got {t}"
            )));
        }
    }

    let ds = load_labelled(&a.input)?;
    let labels = ds.encoded_labels().map_err(domain)?.to_vec();
    let (benign, syn) = ds.class_counts().map_err(domain)?;
    if benign == 0 || syn == 0 {
        return Err(domain(anyhow::anyhow!(
            "degenerate labels: {benign} benign and {syn} attack rows; both classes are required"
        )));
    }

    let (train_idx, test_idx) = if a.folds.is_some() {
        ((0..ds.n_rows()).collect::<Vec<_>>(), Vec::new())
    } else {
        stratified_split(&labels, 0.2, config.seed).map_err(domain)?
    };
    let train = ds.subset(&train_idx);
    let scaler = fit_scaler(&train);
    let scale =
        |d: &Dataset| -> Vec<Vec<f64>> { d.rows.iter().map(|r| scaler.transform_row(r)).collect() };
    let tx = scale(&train);
    let ty = train.encoded_labels().map_err(domain)?.to_vec();

    let folds = if a.folds.is_some() {
        cross_validate(&tx, &ty, &config).map_err(domain)?
    } else {
        Vec::new()
    };
    let mut model = init_for(&tx, &config).map_err(domain)?;
    let report = fit(&mut model, &tx, &ty, &config).map_err(domain)?;
    model
        .set_feature_names(ds.columns.clone())
        .map_err(domain)?;
    if let Some(t) = a.threshold {
        model.set_threshold(t).map_err(domain)?;
    }
    let holdout = if test_idx.is_empty() {
        None
    } else {
        let test = ds.subset(&test_idx);
        let vy = test.encoded_labels().map_err(domain)?.to_vec();
        Some(evaluate(&model, &scale(&test), &vy).map_err(domain)?)
    };
    model.set_scaler(Some(scaler)).map_err(domain)?;

    let summary = TrainSummary {
        input: a.input.display().to_string(),
        features: ds.columns.clone(),
        rows: ds.n_rows(),
        train_rows: train_idx.len(),
        test_rows: test_idx.len(),
        config,
        epoch_losses: report.epoch_losses,
        snapshot_id: report.snapshot_id,
        holdout,
        folds,
    };
    ensure_parent(&a.output)?;
    write_text(&a.output, &model.to_document())?;
    let report_path = sibling(&a.output, "report.json");
    write_text(&report_path, &to_json(&summary))?;

    let mut out = format!(
        "trained on {} rows, {} features, {} rules; final loss {}\n",
        summary.train_rows,
        summary.features.len(),
        model.n_rules(),
        fmt_opt(summary.epoch_losses.last().copied())
    );
    if let Some(h) = &summary.holdout {
        out.push_str(&render_report("hold-out (20%)", h));
    }
    for f in &summary.folds {
        out.push_str(&render_report(&format!("fold {}", f.fold), &f.report));
    }
    out.push_str(&format!(
        "wrote {} and {}\n",
        a.output.display(),
        report_path.display()
    ));
    print!("{out}");
    Ok(())
}

fn load_model(path: &Path, threshold: Option<f64>) -> Result<AnfisModel, Failure> {
    require_file(path)?;
    let mut model = AnfisModel::from_document(&read_text(path)?)
        .with_context(|| format!("model {}", path.display()))
        .map_err(usage)?;
    if let Some(t) = threshold {
        model.set_threshold(t).map_err(usage)?;
    }
    Ok(model)
}

fn cmd_eval(a: EvalArgs) -> CmdResult {
    let model = load_model(&a.model, a.threshold)?;
    if model.feature_names().is_empty() {
        return Err(domain(anyhow::anyhow!(
            "model {} records no feature names",
            a.model.display()
        )));
    }
    let ds = load_labelled(&a.input)?;
    let ds = select_features(ds, model.feature_names())
        .map_err(|e| preprocess_failure(e, "feature matching"))?;
    let labels = ds.encoded_labels().map_err(domain)?.to_vec();
    let x = ds
        .rows
        .iter()
        .map(|r| model.scale_input(r))
        .collect::<Result<Vec<_>, _>>()
        .map_err(domain)?;
    let report = evaluate(&model, &x, &labels).map_err(domain)?;
    ensure_dir(&a.output)?;
    write_text(&a.output.join("eval.json"), &to_json(&report))?;
    let probs = x
        .iter()
        .map(|xi| model.predict_proba(xi))
        .collect::<Result<Vec<_>, _>>()
        .map_err(domain)?;
    if let Ok(roc) = metrics::roc_auc(&probs, &labels) {
        write_text(&a.output.join("roc.csv"), &roc.to_csv())?;
    }
    print!(
        "{}",
        render_report(
            &format!("{} rows from {}", x.len(), a.input.display()),
            &report
        )
    );
    Ok(())
}

/// Scenario file layout for `simulate`.
#[derive(Debug, Default, serde::Deserialize)]
#[serde(deny_unknown_fields)]
struct SimulateFile {
    scenario: Option<toml::Table>,
    detector: Option<toml::Table>,
}

fn load_simulation_config(
    path: Option<&Path>,
) -> Result<(ScenarioConfig, DetectorConfig), Failure> {
    let Some(path) = path else {
        return Ok((ScenarioConfig::default(), DetectorConfig::default()));
    };
    let ctx = || format!("scenario config {}", path.display());
    let file: SimulateFile = toml::from_str(&read_text(path)?)
        .with_context(ctx)
        .map_err(usage)?;
    let scenario: ScenarioConfig = match file.scenario {
        Some(t) => t
            .try_into()
            .with_context(|| format!("{}: [scenario]", ctx()))
            .map_err(usage)?,
        None => ScenarioConfig::default(),
    };
    let mut detector_table = file.detector.unwrap_or_default();
    // The detector's window follows the scenario unless set explicitly.
    detector_table
        .entry("collection_interval_s")
        .or_insert(toml::Value::Float(scenario.collection_interval_s));
    let detector: DetectorConfig = detector_table
        .try_into()
        .with_context(|| format!("{}: [detector]", ctx()))
        .map_err(usage)?;
    Ok((scenario, detector))
}

fn cmd_simulate(a: SimulateArgs) -> CmdResult {
    let (mut scenario, detector) = load_simulation_config(a.config.as_deref())?;
    if let Some(s) = a.seed {
        scenario.seed = s;
    }
    if a.no_attack {
        scenario.attack_enabled = false;
    }
    scenario.validate().map_err(usage)?;
    detector.validate().map_err(usage)?;
    ensure_dir(&a.output)?;

    let model = match &a.model {
        Some(p) => load_model(p, a.threshold)?,
        None => {
            let mut m = default_model(BUILTIN_MODEL_SEED).map_err(domain)?;
            if let Some(t) = a.threshold {
                m.set_threshold(t).map_err(usage)?;
            }
            write_text(&a.output.join("model.json"), &m.to_document())?;
            m
        }
    };
    let report = simulate(&scenario, &detector, model).map_err(domain)?;

    let trace_path = a.output.join("trace.jsonl");
    write_trace(&report.outcome.trace, create(&trace_path)?)
        .map_err(|e| io_failure(e, &trace_path))?;
    let timeline_path = a.output.join("timeline.csv");
    write_timeline(&report.outcome.timeline, create(&timeline_path)?).map_err(usage)?;
    let decisions_path = a.output.join("decisions.jsonl");
    report
        .write_decisions(create(&decisions_path)?)
        .map_err(|e| io_failure(e, &decisions_path))?;
    let actions_path = a.output.join("actions.jsonl");
    let mut w = create(&actions_path)?;
    for act in &report.actions {
        serde_json::to_writer(&mut w, act).map_err(usage)?;
        w.write_all(b"\n")
            .map_err(|e| io_failure(e, &actions_path))?;
    }
    w.flush().map_err(|e| io_failure(e, &actions_path))?;
    write_text(&a.output.join("scenario.toml"), &scenario.to_toml())?;
    if let Some(eval) = &report.eval {
        write_text(&a.output.join("eval.json"), &to_json(eval))?;
    }
    if let Some(roc) = &report.roc {
        write_text(&a.output.join("roc.csv"), &roc.to_csv())?;
    }

    let o = &report.outcome;
    let mut out = format!(
        "simulated {:.0} s: {} packets generated, {} delivered, {} dropped\n",
        scenario.duration_s, o.counts.generated, o.counts.delivered, o.counts.dropped
    );
    out.push_str(&format!(
        "first malicious window closed at {}; first block installed at {}\n",
        report
            .first_malicious_s
            .map_or("never".into(), |t| format!("{t:.1} s")),
        report
            .first_block_s
            .map_or("never".into(), |t| format!("{t:.1} s")),
    ));
    out.push_str(&format!(
        "mitigation rules installed: {}\n",
        report.block_actions().len()
    ));
    if let Some(eval) = &report.eval {
        out.push_str(&render_report(
            &format!("{} flow decisions vs ground truth", report.decisions.len()),
            eval,
        ));
    }
    out.push_str(&format!("wrote outputs to {}\n", a.output.display()));
    print!("{out}");
    Ok(())
}
