//! Batch command-line interface.
//!
//! Exit codes: 0 success, 1 unreadable or malformed input, 2 invalid
//! configuration or inconsistent inputs, 3 numerical failure.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::Serialize;

use crate::dataio::{class_counts, kfold_split, parse_csv, parse_svmlight, Dataset, Label};
use crate::error::Error;
use crate::hyperloss::{labels_from_scores, TiePolicy};
use crate::measures::{auc_from_scores, confusion_counts, prbep_from_scores, MeasureKind};
use crate::synthetic::two_gaussians;
use crate::trainer::{fit, load_model, save_model, TraceEntry, TrainConfig};

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    fn parse(message: impl Into<String>) -> Self {
        Self { code: 1, message: message.into() }
    }

    fn config(message: impl Into<String>) -> Self {
        Self { code: 2, message: message.into() }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Parse { .. } | Error::Label { .. } | Error::Value { .. } | Error::EmptyDataset => 1,
            Error::Numerical { .. } | Error::Singular { .. } => 3,
            _ => 2,
        };
        Self { code, message: e.to_string() }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Parser, Debug)]
#[command(name = "jschp", version, about = "Sparse-code hyper-predictor training for F1, PRBEP and AUC")]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a model and write it with its per-iteration trace.
    Train(TrainArgs),
    /// Score a dataset with a trained model.
    Predict(PredictArgs),
    /// Compute F1, PRBEP and AUC of a predictions file against a dataset.
    Eval(EvalArgs),
    /// k-fold cross-validation report.
    Cv(CvArgs),
    /// Cross-validate every cell of a C1 × C2 × C3 grid.
    Sweep(SweepArgs),
    /// Write a two-Gaussian synthetic dataset in svmlight format.
    Synth(SynthArgs),
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum Format {
    Auto,
    Svmlight,
    Csv,
}

#[derive(Args, Debug, Clone)]
struct DataArgs {
    /// Dataset path (svmlight or CSV).
    #[arg(long)]
    data: PathBuf,
    /// Dataset format; `auto` picks CSV for a `.csv` extension.
    #[arg(long, value_enum, default_value_t = Format::Auto)]
    format: Format,
}

#[derive(Args, Debug, Clone)]
struct ConfigArgs {
    #[arg(long, default_value = "f1")]
    measure: MeasureKind,
    #[arg(long, default_value_t = TrainConfig::default().c1)]
    c1: f64,
    #[arg(long, default_value_t = TrainConfig::default().c2)]
    c2: f64,
    #[arg(long, default_value_t = TrainConfig::default().c3)]
    c3: f64,
    #[arg(long, default_value_t = TrainConfig::default().eta)]
    eta: f64,
    /// Outer iterations.
    #[arg(long, default_value_t = TrainConfig::default().iters)]
    iters: usize,
    /// Dictionary size (default min(2d, n)).
    #[arg(long)]
    atoms: Option<usize>,
    /// Cap on squared dictionary-element norms.
    #[arg(long, default_value_t = TrainConfig::default().norm_cap)]
    norm_cap: f64,
    #[arg(long, default_value_t = TrainConfig::default().eps)]
    eps: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = TrainConfig::default().dual_rate)]
    dual_rate: f64,
    #[arg(long, default_value_t = TrainConfig::default().dual_steps)]
    dual_steps: usize,
    #[arg(long, default_value_t = TrainConfig::default().alpha_init)]
    alpha_init: f64,
    #[arg(long, default_value_t = TrainConfig::default().alpha_floor)]
    alpha_floor: f64,
    #[arg(long, default_value_t = TrainConfig::default().encode_iters)]
    encode_iters: usize,
    #[arg(long, default_value = "single")]
    tie_policy: TiePolicy,
    /// Halve the step size after an iteration that raises the objective.
    #[arg(long)]
    backoff: bool,
}

impl ConfigArgs {
    fn to_config(&self) -> TrainConfig {
        TrainConfig {
            c1: self.c1,
            c2: self.c2,
            c3: self.c3,
            eta: self.eta,
            iters: self.iters,
            atoms: self.atoms,
            norm_cap: self.norm_cap,
            eps: self.eps,
            measure: self.measure,
            seed: self.seed,
            dual_rate: self.dual_rate,
            dual_steps: self.dual_steps,
            alpha_init: self.alpha_init,
            alpha_floor: self.alpha_floor,
            encode_iters: self.encode_iters,
            tie_policy: self.tie_policy,
            backoff: self.backoff,
        }
    }
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    config: ConfigArgs,
    /// Model output path.
    #[arg(long)]
    out: PathBuf,
    /// Trace CSV path (default: `<out>.trace.csv`).
    #[arg(long)]
    trace: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    data: DataArgs,
    /// Predictions path (default: standard output).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// Predictions TSV written by `predict`.
    #[arg(long)]
    predictions: PathBuf,
    /// Dataset holding the true labels, aligned with the predictions.
    #[arg(long)]
    truth: PathBuf,
    #[arg(long, value_enum, default_value_t = Format::Auto)]
    format: Format,
    /// Print only this measure.
    #[arg(long)]
    measure: Option<MeasureKind>,
}

#[derive(Args, Debug, Clone)]
struct CvArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long, default_value_t = 10)]
    folds: usize,
    /// Balance classes across folds.
    #[arg(long)]
    stratified: bool,
    /// Folds trained concurrently.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Report path (default: standard output).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Per-fold wall-clock seconds, as JSON.
    #[arg(long)]
    timing_out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SweepArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long = "c1-grid", value_delimiter = ',', required = true)]
    c1_grid: Vec<f64>,
    #[arg(long = "c2-grid", value_delimiter = ',', required = true)]
    c2_grid: Vec<f64>,
    #[arg(long = "c3-grid", value_delimiter = ',', required = true)]
    c3_grid: Vec<f64>,
    #[arg(long, default_value_t = 10)]
    folds: usize,
    #[arg(long)]
    stratified: bool,
    /// Grid cells evaluated concurrently.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// CSV path (default: standard output).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long, default_value_t = 200)]
    n: usize,
    #[arg(long, default_value_t = 10)]
    d: usize,
    /// Class means are ±mean on every coordinate.
    #[arg(long, default_value_t = 1.5)]
    mean: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

fn read_bytes(path: &Path) -> CliResult<Vec<u8>> {
    fs::read(path).map_err(|e| CliError::parse(format!("{}: {e}", path.display())))
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    fs::write(path, text).map_err(|e| CliError::config(format!("{}: {e}", path.display())))
}

fn emit(out: Option<&Path>, text: &str) -> CliResult<()> {
    match out {
        Some(p) => write_text(p, text),
        None => std::io::stdout()
            .write_all(text.as_bytes())
            .map_err(|e| CliError::config(format!("stdout: {e}"))),
    }
}

pub fn load_dataset(path: &Path, format: Format) -> crate::Result<Dataset> {
    let bytes = fs::read(path).map_err(|e| Error::Parse { line: 0, message: format!("{}: {e}", path.display()) })?;
    let csv = match format {
        Format::Csv => true,
        Format::Svmlight => false,
        Format::Auto => path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")),
    };
    if csv {
        parse_csv(&bytes)
    } else {
        parse_svmlight(&bytes)
    }
}

fn trace_csv(trace: &[TraceEntry]) -> String {
    let mut out = String::from(
        "iteration,reconstruction,sparsity,complexity,surrogate_loss,objective,upper_bound,train_loss\n",
    );
    for e in trace {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            e.iteration,
            e.reconstruction,
            e.sparsity,
            e.complexity,
            e.surrogate_loss,
            e.objective,
            e.upper_bound,
            e.train_loss
        );
    }
    out
}

fn cmd_train(args: &TrainArgs) -> CliResult<()> {
    let data = load_dataset(&args.data.data, args.data.format)?;
    let config = args.config.to_config();
    let model = fit(&data, &config)?;
    write_text(&args.out, &save_model(&model)?)?;
    let trace_path = args.trace.clone().unwrap_or_else(|| {
        let mut p = args.out.clone().into_os_string();
        p.push(".trace.csv");
        PathBuf::from(p)
    });
    write_text(&trace_path, &trace_csv(&model.trace))
}

fn cmd_predict(args: &PredictArgs) -> CliResult<()> {
    let model = load_model(&read_bytes(&args.model)?)?;
    let data = load_dataset(&args.data.data, args.data.format)?;
    let (scores, labels) = model.predict(&data)?;
    let mut out = String::new();
    for i in 0..data.len() {
        let _ = writeln!(out, "{}\t{}\t{}", data.id_of(i), scores[i], labels[i]);
    }
    emit(args.out.as_deref(), &out)
}

/// Parse `<id>\t<score>\t<label>` lines.
pub fn parse_predictions(text: &str) -> crate::Result<(Vec<f64>, Vec<Label>)> {
    let mut scores = Vec::new();
    let mut labels = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(Error::Parse { line: i + 1, message: format!("expected 3 tab-separated fields, found {}", fields.len()) });
        }
        let score: f64 = fields[1]
            .parse()
            .map_err(|_| Error::Parse { line: i + 1, message: format!("bad score `{}`", fields[1]) })?;
        let label = match fields[2] {
            "+1" | "1" => Label::Positive,
            "-1" => Label::Negative,
            other => return Err(Error::Label { line: i + 1, label: other.to_string() }),
        };
        scores.push(score);
        labels.push(label);
    }
    if scores.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Ok((scores, labels))
}

/// F1 from predicted labels; PRBEP and AUC from scores. `None` where the
/// truth lacks a class the measure needs.
pub fn evaluate_predictions(
    truth: &[Label],
    scores: &[f64],
    predicted: &[Label],
) -> crate::Result<(f64, Option<f64>, Option<f64>)> {
    if truth.len() != scores.len() || truth.len() != predicted.len() {
        return Err(Error::Dimension(format!(
            "{} true labels vs {} predictions",
            truth.len(),
            scores.len()
        )));
    }
    let f1 = confusion_counts(truth, predicted)?.f1();
    let (n_pos, n_neg) = class_counts(truth);
    let prbep = if n_pos > 0 { Some(prbep_from_scores(truth, scores)?) } else { None };
    let auc = if n_pos > 0 && n_neg > 0 { Some(auc_from_scores(truth, scores)?) } else { None };
    Ok((f1, prbep, auc))
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |v| v.to_string())
}

fn cmd_eval(args: &EvalArgs) -> CliResult<()> {
    let text = String::from_utf8(read_bytes(&args.predictions)?)
        .map_err(|_| CliError::parse("predictions file is not UTF-8"))?;
    let (scores, predicted) = parse_predictions(&text)?;
    let truth = load_dataset(&args.truth, args.format)?;
    let (f1, prbep, auc) = evaluate_predictions(truth.labels(), &scores, &predicted)?;
    let rows = [(MeasureKind::F1, Some(f1)), (MeasureKind::Prbep, prbep), (MeasureKind::Auc, auc)];
    let mut out = String::new();
    for (kind, v) in rows {
        if args.measure.map_or(true, |m| m == kind) {
            let _ = writeln!(out, "{kind}\t{}", fmt_opt(v));
        }
    }
    emit(None, &out)
}

/// Five-number summary with linearly interpolated quartiles.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FiveNumber {
    pub count: usize,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

pub fn five_number(values: &[f64]) -> Option<FiveNumber> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    Some(FiveNumber {
        count: v.len(),
        min: v[0],
        q1: quantile(&v, 0.25),
        median: quantile(&v, 0.5),
        q3: quantile(&v, 0.75),
        max: v[v.len() - 1],
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum FoldStatus {
    Ok,
    Skipped,
    Failed,
}

#[derive(Debug, Clone, Serialize)]
pub struct FoldResult {
    pub fold: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub atoms: usize,
    pub status: FoldStatus,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
    pub f1: Option<f64>,
    pub prbep: Option<f64>,
    pub auc: Option<f64>,
    /// Wall-clock seconds; excluded from the report so reruns are identical.
    #[serde(skip)]
    pub seconds: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Summary {
    pub f1: Option<FiveNumber>,
    pub prbep: Option<FiveNumber>,
    pub auc: Option<FiveNumber>,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub folds_requested: usize,
    pub seed: u64,
    pub stratified: bool,
    pub n: usize,
    pub d: usize,
    pub config: TrainConfig,
    /// Fold index of every point, as produced by the split.
    pub assignments: Vec<usize>,
    pub folds: Vec<FoldResult>,
    pub summary: Summary,
}

impl RunReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn any_failed(&self) -> bool {
        self.folds.iter().any(|f| f.status == FoldStatus::Failed)
    }

    fn column(&self, pick: impl Fn(&FoldResult) -> Option<f64>) -> Vec<f64> {
        self.folds.iter().filter_map(pick).collect()
    }
}

fn run_fold(data: &Dataset, config: &TrainConfig, train: &[usize], test: &[usize], fold: usize) -> FoldResult {
    let start = Instant::now();
    let mut result = FoldResult {
        fold,
        n_train: train.len(),
        n_test: test.len(),
        atoms: config.resolved_atoms(train.len(), data.dim()),
        status: FoldStatus::Ok,
        message: None,
        f1: None,
        prbep: None,
        auc: None,
        seconds: 0.0,
    };
    let outcome = (|| -> crate::Result<(f64, Option<f64>, Option<f64>)> {
        let train_set = data.subset(train)?;
        let test_set = data.subset(test)?;
        let model = fit(&train_set, config)?;
        let scores = model.scores(test_set.features())?;
        evaluate_predictions(test_set.labels(), &scores, &labels_from_scores(&scores))
    })();
    match outcome {
        Ok((f1, prbep, auc)) => {
            result.f1 = Some(f1);
            result.prbep = prbep;
            result.auc = auc;
        }
        Err(e @ Error::DegenerateClass(_)) => {
            result.status = FoldStatus::Skipped;
            result.message = Some(e.to_string());
        }
        Err(e) => {
            result.status = FoldStatus::Failed;
            result.message = Some(e.to_string());
        }
    }
    result.seconds = start.elapsed().as_secs_f64();
    result
}

fn pool(jobs: usize) -> crate::Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))
}

/// k-fold cross-validation with `config.seed` driving both the split and
/// the model initialization. Folds may run on `jobs` threads; results are
/// merged in fold order.
pub fn cross_validate(
    data: &Dataset,
    k: usize,
    stratified: bool,
    config: &TrainConfig,
    jobs: usize,
) -> crate::Result<RunReport> {
    config.validate()?;
    let plan = kfold_split(data.len(), k, config.seed, stratified, Some(data.labels()))?;
    let run = |f: usize| run_fold(data, config, &plan.train_indices(f), &plan.test_indices(f), f);
    let folds: Vec<FoldResult> = if jobs <= 1 {
        (0..k).map(run).collect()
    } else {
        pool(jobs)?.install(|| (0..k).into_par_iter().map(run).collect())
    };
    let mut report = RunReport {
        folds_requested: k,
        seed: config.seed,
        stratified,
        n: data.len(),
        d: data.dim(),
        config: config.clone(),
        assignments: plan.assignments,
        folds,
        summary: Summary { f1: None, prbep: None, auc: None },
    };
    report.summary = Summary {
        f1: five_number(&report.column(|f| f.f1)),
        prbep: five_number(&report.column(|f| f.prbep)),
        auc: five_number(&report.column(|f| f.auc)),
    };
    Ok(report)
}

fn timing_json(report: &RunReport) -> String {
    let seconds: Vec<f64> = report.folds.iter().map(|f| f.seconds).collect();
    let mut s = serde_json::to_string_pretty(&serde_json::json!({ "fold_seconds": seconds })).expect("json");
    s.push('\n');
    s
}

fn cmd_cv(args: &CvArgs) -> CliResult<()> {
    let data = load_dataset(&args.data.data, args.data.format)?;
    let config = args.config.to_config();
    let report = cross_validate(&data, args.folds, args.stratified, &config, args.jobs)?;
    for f in &report.folds {
        eprintln!("fold {}: {:?} in {:.3}s", f.fold, f.status, f.seconds);
    }
    if let Some(p) = &args.timing_out {
        write_text(p, &timing_json(&report))?;
    }
    emit(args.out.as_deref(), &report.to_json())?;
    if report.any_failed() {
        let msg = report.folds.iter().find_map(|f| f.message.clone()).unwrap_or_default();
        return Err(CliError { code: 3, message: format!("one or more folds failed: {msg}") });
    }
    Ok(())
}

pub const SWEEP_HEADER: &str = "c1,c2,c3,f1_median,prbep_median,auc_median,status";

fn cmd_sweep(args: &SweepArgs) -> CliResult<()> {
    let data = load_dataset(&args.data.data, args.data.format)?;
    let base = args.config.to_config();
    let cells: Vec<(f64, f64, f64)> = args
        .c1_grid
        .iter()
        .flat_map(|&a| args.c2_grid.iter().flat_map(move |&b| args.c3_grid.iter().map(move |&c| (a, b, c))))
        .collect();
    let run = |&(c1, c2, c3): &(f64, f64, f64)| -> String {
        let config = TrainConfig { c1, c2, c3, ..base.clone() };
        let (medians, status) = match cross_validate(&data, args.folds, args.stratified, &config, 1) {
            Ok(r) if !r.any_failed() && r.summary.f1.is_some() => {
                let med = |s: &Option<FiveNumber>| s.as_ref().map_or(String::new(), |v| v.median.to_string());
                ([med(&r.summary.f1), med(&r.summary.prbep), med(&r.summary.auc)], "ok")
            }
            Ok(r) => {
                let msg = r.folds.iter().find_map(|f| f.message.clone()).unwrap_or_default();
                eprintln!("cell c1={c1} c2={c2} c3={c3} failed: {msg}");
                (Default::default(), "failed")
            }
            Err(e) => {
                eprintln!("cell c1={c1} c2={c2} c3={c3} failed: {e}");
                (Default::default(), "failed")
            }
        };
        format!("{c1},{c2},{c3},{},{},{},{status}\n", medians[0], medians[1], medians[2])
    };
    let rows: Vec<String> = if args.jobs <= 1 {
        cells.iter().map(run).collect()
    } else {
        pool(args.jobs)?.install(|| cells.par_iter().map(run).collect())
    };
    let mut out = String::from(SWEEP_HEADER);
    out.push('\n');
    out.extend(rows);
    emit(args.out.as_deref(), &out)
}

fn cmd_synth(args: &SynthArgs) -> CliResult<()> {
    if args.n == 0 || args.d == 0 {
        return Err(CliError::config("n and d must be positive"));
    }
    write_text(&args.out, &two_gaussians(args.n, args.d, args.mean, args.seed).to_svmlight())
}

/// Run the CLI on `args` (including the program name) and return the exit
/// code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let result = match &cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Predict(a) => cmd_predict(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Cv(a) => cmd_cv(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Synth(a) => cmd_synth(a),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}", e.message);
            e.code
        }
    }
}
