//! Command-line front end: `qut`, `fit`, `predict` and `simulate`.
//!
//! Exit codes: 0 success, 2 usage, 3 data, 4 numerical, 5 iteration budget
//! exhausted (the fitted model is still written).

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::data::{
    apply_features, parse_targets, prepare_features, read_table, Standardizer, TargetColumn,
};
use crate::error::{Error, Result};
use crate::losses::{loss, softmax, TaskKind, TaskSpec};
use crate::network::{forward, Activation, Architecture, ModelDocument, NetworkParams};
use crate::qut::{compute_qut, lambda0};
use crate::seeding::{derive_seed, TAG_QUT};
use crate::simlab::{rows_to_csv, sweep_to_dir, ScenarioKind, SweepSpec};
use crate::trainer::{correct_predictions, fit, FitStatus, PhaseLog, TrainConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_NUMERICAL: i32 = 4;
pub const EXIT_BUDGET: i32 = 5;

/// Version of every JSON document the CLI writes.
pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Parser)]
#[command(name = "harderlasso", version, about = "Sparse linear models and MLPs tuned by the quantile universal threshold")]
pub struct Cli {
    /// Base seed for every random quantity.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads; defaults to the available parallelism. Results do not depend on it.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// TOML run configuration; command-line flags take precedence.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Directory for every output file.
    #[arg(long, global = true)]
    pub output_dir: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Estimate the quantile universal threshold of a dataset.
    Qut(QutArgs),
    /// Train a sparse model and write it with a report.
    Fit(FitArgs),
    /// Apply a saved model to a CSV file.
    Predict(PredictArgs),
    /// Run a phase-transition sweep on simulated data.
    Simulate(SimulateArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TaskArg {
    Regression,
    Classification,
}

impl From<TaskArg> for TaskKind {
    fn from(t: TaskArg) -> Self {
        match t {
            TaskArg::Regression => TaskKind::Regression,
            TaskArg::Classification => TaskKind::Classification,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct DataArgs {
    /// CSV file with the features and the response.
    #[arg(long)]
    pub data: PathBuf,
    /// Response column, by name or 0-based index.
    #[arg(long)]
    pub target: String,
    /// The file has no header row; columns are named col0, col1, ...
    #[arg(long)]
    pub no_header: bool,
    #[arg(long, value_enum, default_value_t = TaskArg::Regression)]
    pub task: TaskArg,
}

#[derive(Debug, Clone, Args)]
pub struct ModelArgs {
    /// Hidden layer widths such as `20` or `20,10`; `none` for a linear model.
    #[arg(long)]
    pub hidden: Option<String>,
    /// relu, leaky_relu or softplus.
    #[arg(long)]
    pub activation: Option<Activation>,
    /// Quantile level of the threshold.
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Monte Carlo draws of the threshold statistic.
    #[arg(long)]
    pub n_mc: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct QutArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub model: ModelArgs,
}

#[derive(Debug, Clone, Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Held-out CSV with the same columns, scored after training.
    #[arg(long)]
    pub test_file: Option<PathBuf>,
    /// Fixed regularisation instead of the estimated threshold.
    #[arg(long)]
    pub lambda: Option<f64>,
}

#[derive(Debug, Clone, Args)]
pub struct PredictArgs {
    /// Model file written by `fit`.
    #[arg(long)]
    pub model: PathBuf,
    /// CSV file containing at least the selected feature columns.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub no_header: bool,
    /// Output file name inside the output directory.
    #[arg(long, default_value = "predictions.csv")]
    pub output: String,
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    /// linear, absdiff or nestedabs.
    pub scenario: ScenarioKind,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub p: Option<usize>,
    /// Sparsity grid: `a:b`, `a:step:b` or a comma-separated list.
    #[arg(long)]
    pub s: Option<String>,
    /// Monte Carlo runs per sparsity level.
    #[arg(long, default_value_t = 25)]
    pub runs: usize,
    #[arg(long, default_value_t = 1000)]
    pub n_test: usize,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Reuse finished runs from an earlier, interrupted sweep in the output directory.
    #[arg(long)]
    pub resume: bool,
}

/// Everything that configures a run, as stored in the TOML config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub hidden_widths: Option<Vec<usize>>,
    pub activation: Activation,
    pub output_dir: Option<PathBuf>,
    pub train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            hidden_widths: None,
            activation: Activation::ReLU,
            output_dir: None,
            train: TrainConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Data(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Domain(format!("invalid config: {e}")))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Domain(format!("cannot encode config: {e}")))
    }

    fn apply_model_args(&mut self, m: &ModelArgs) -> Result<()> {
        if let Some(h) = &m.hidden {
            self.hidden_widths = Some(parse_hidden(h)?);
        }
        if let Some(a) = m.activation {
            self.activation = a;
        }
        if let Some(a) = m.alpha {
            self.train.alpha = a;
        }
        if let Some(n) = m.n_mc {
            self.train.n_mc = n;
        }
        Ok(())
    }
}

/// Parses `20,10` into widths; `none` or an empty string means no hidden layer.
pub fn parse_hidden(text: &str) -> Result<Vec<usize>> {
    let t = text.trim();
    if t.is_empty() || t.eq_ignore_ascii_case("none") {
        return Ok(Vec::new());
    }
    t.split(',')
        .map(|w| {
            w.trim()
                .parse::<usize>()
                .ok()
                .filter(|&v| v > 0)
                .ok_or_else(|| Error::Domain(format!("invalid hidden width {w:?}")))
        })
        .collect()
}

/// Parses a sparsity grid: `a:b` (inclusive), `a:step:b` or `a,b,c`.
pub fn parse_grid(text: &str) -> Result<Vec<usize>> {
    let bad = || Error::Domain(format!("invalid sparsity grid {text:?}"));
    let num = |s: &str| s.trim().parse::<usize>().map_err(|_| bad());
    let parts: Vec<&str> = text.split(':').collect();
    let grid: Vec<usize> = match parts.as_slice() {
        [single] => single.split(',').map(num).collect::<Result<_>>()?,
        [a, b] => (num(a)?..=num(b)?).collect(),
        [a, step, b] => {
            let step = num(step)?;
            if step == 0 {
                return Err(bad());
            }
            (num(a)?..=num(b)?).step_by(step).collect()
        }
        _ => return Err(bad()),
    };
    if grid.is_empty() {
        return Err(bad());
    }
    Ok(grid)
}

pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Domain(_) => EXIT_USAGE,
        Error::Data(_) | Error::Shape(_) | Error::Io(_) | Error::Json(_) => EXIT_DATA,
        Error::Numerical { .. } | Error::PerfectFit => EXIT_NUMERICAL,
    }
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .format_timestamp(None)
        .try_init();
    match execute(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn execute(cli: Cli) -> Result<i32> {
    let mut config = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.train.seed = seed;
    }
    if let Some(dir) = &cli.output_dir {
        config.output_dir = Some(dir.clone());
    }
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            return Err(Error::Domain("--jobs must be positive".into()));
        }
        pool = pool.num_threads(jobs);
    }
    let pool = pool
        .build()
        .map_err(|e| Error::Domain(format!("cannot start worker threads: {e}")))?;
    pool.install(|| match &cli.command {
        Command::Qut(a) => cmd_qut(a, config),
        Command::Fit(a) => cmd_fit(a, config),
        Command::Predict(a) => cmd_predict(a, &config),
        Command::Simulate(a) => cmd_simulate(a, config),
    })
}

fn output_dir(config: &RunConfig) -> Result<PathBuf> {
    let dir = config.output_dir.clone().unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&dir)?;
    Ok(dir)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

/// A standardised training set read from disk.
struct LoadedData {
    x: Array2<f64>,
    y: Array2<f64>,
    task: TaskSpec,
    target: String,
    labels: Option<Vec<String>>,
    feature_names: Vec<String>,
    standardizer: Standardizer,
    dropped: Vec<String>,
    imputed: usize,
}

fn load_data(args: &DataArgs) -> Result<LoadedData> {
    let table = read_table(&args.data, !args.no_header)?;
    let target_col: TargetColumn = args.target.parse().expect("infallible");
    let t = table.column_index(&target_col)?;
    let kind: TaskKind = args.task.into();
    let targets = parse_targets(&table, t, kind)?;
    let features = prepare_features(&table, t)?;
    let task = match kind {
        TaskKind::Regression => TaskSpec::regression(),
        TaskKind::Classification => TaskSpec::classification(targets.y.ncols())?,
    };
    Ok(LoadedData {
        x: features.x,
        y: targets.y,
        task,
        target: table.names[t].clone(),
        labels: targets.labels,
        feature_names: features.names,
        standardizer: features.standardizer,
        dropped: features.dropped,
        imputed: features.imputed,
    })
}

fn architecture(config: &RunConfig, input_dim: usize, output_dim: usize) -> Result<Architecture> {
    Architecture::new(
        input_dim,
        config.hidden_widths.clone().unwrap_or_default(),
        output_dim,
        config.activation,
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QutReport {
    pub schema_version: u32,
    pub data: String,
    pub target: String,
    pub task: TaskKind,
    pub n: usize,
    pub p: usize,
    pub architecture: Architecture,
    pub lambda_qut: f64,
    pub alpha: f64,
    pub n_mc: usize,
    /// Seed given on the command line or in the config.
    pub base_seed: u64,
    /// Seed of the Monte Carlo draws, derived from `base_seed`.
    pub seed: u64,
    /// Zero-thresholding value of the observed response.
    pub lambda0_observed: f64,
}

fn cmd_qut(args: &QutArgs, mut config: RunConfig) -> Result<i32> {
    config.apply_model_args(&args.model)?;
    let d = load_data(&args.data)?;
    let arch = architecture(&config, d.x.ncols(), d.task.output_dim)?;
    let seed = derive_seed(config.train.seed, &[TAG_QUT]);
    let est = compute_qut(
        d.x.view(),
        d.y.view(),
        &arch,
        &d.task,
        config.train.alpha,
        config.train.n_mc,
        seed,
    )?;
    let report = QutReport {
        schema_version: REPORT_SCHEMA_VERSION,
        data: args.data.data.display().to_string(),
        target: d.target,
        task: d.task.kind,
        n: d.x.nrows(),
        p: d.x.ncols(),
        architecture: arch.clone(),
        lambda_qut: est.lambda_qut,
        alpha: est.alpha,
        n_mc: est.n_mc,
        base_seed: config.train.seed,
        seed: est.seed,
        lambda0_observed: lambda0(d.x.view(), d.y.view(), &arch, &d.task)?,
    };
    let path = output_dir(&config)?.join("qut.json");
    write_json(&path, &report)?;
    println!("lambda_qut = {}", report.lambda_qut);
    println!("observed lambda0 = {}", report.lambda0_observed);
    println!("wrote {}", path.display());
    Ok(EXIT_OK)
}

/// A trained model together with the preprocessing needed to apply it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub schema_version: u32,
    pub task: TaskKind,
    pub target: String,
    /// Class labels in output order (classification only).
    pub labels: Option<Vec<String>>,
    /// Every feature the model was trained on, in training order.
    pub feature_names: Vec<String>,
    pub standardizer: Standardizer,
    pub selected_names: Vec<String>,
    pub lambda_qut: f64,
    /// Pruned network; its `selected_features` index `feature_names`.
    pub network: ModelDocument,
}

impl ModelFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Data(format!("cannot read model {}: {e}", path.display())))?;
        let model: ModelFile = serde_json::from_str(&text)
            .map_err(|e| Error::Data(format!("{}: not a model file: {e}", path.display())))?;
        if model.schema_version != REPORT_SCHEMA_VERSION {
            return Err(Error::Data(format!(
                "unsupported model file version {}",
                model.schema_version
            )));
        }
        Ok(model)
    }

    /// Standardisation statistics of the selected features only.
    fn selected_standardizer(&self) -> Standardizer {
        let idx = &self.network.selected_features;
        Standardizer {
            means: idx.iter().map(|&j| self.standardizer.means[j]).collect(),
            stds: idx.iter().map(|&j| self.standardizer.stds[j]).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestScore {
    pub n: usize,
    /// Loss of the fitted model on the held-out rows.
    pub loss: f64,
    /// Mean squared error (regression).
    pub mse: Option<f64>,
    /// Fraction of correctly classified rows (classification).
    pub accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub schema_version: u32,
    pub status: FitStatus,
    pub selected_features: Vec<String>,
    pub lambda_qut: f64,
    pub alpha: f64,
    pub n_mc: usize,
    pub seed: u64,
    pub n: usize,
    pub p: usize,
    pub architecture: Architecture,
    pub pruned_architecture: Architecture,
    pub train_loss: f64,
    pub imputed_values: usize,
    pub dropped_constant_columns: Vec<String>,
    pub phase_log: Vec<PhaseLog>,
    pub test: Option<TestScore>,
}

fn cmd_fit(args: &FitArgs, mut config: RunConfig) -> Result<i32> {
    config.apply_model_args(&args.model)?;
    if let Some(l) = args.lambda {
        config.train.lambda_override = Some(l);
    }
    let d = load_data(&args.data)?;
    let arch = architecture(&config, d.x.ncols(), d.task.output_dim)?;
    let result = fit(d.x.view(), d.y.view(), &arch, &d.task, &config.train)?;

    let selected_names: Vec<String> = result
        .selected_features
        .iter()
        .map(|&j| d.feature_names[j].clone())
        .collect();
    let model = ModelFile {
        schema_version: REPORT_SCHEMA_VERSION,
        task: d.task.kind,
        target: d.target.clone(),
        labels: d.labels.clone(),
        feature_names: d.feature_names.clone(),
        standardizer: d.standardizer.clone(),
        selected_names: selected_names.clone(),
        lambda_qut: result.lambda_qut,
        network: ModelDocument::new(&result.params, &result.arch, &result.selected_features),
    };
    let test = match &args.test_file {
        Some(path) => Some(score_test_file(&model, path, !args.data.no_header)?),
        None => None,
    };
    let report = FitReport {
        schema_version: REPORT_SCHEMA_VERSION,
        status: result.status,
        selected_features: selected_names,
        lambda_qut: result.lambda_qut,
        alpha: config.train.alpha,
        n_mc: config.train.n_mc,
        seed: config.train.seed,
        n: d.x.nrows(),
        p: d.x.ncols(),
        architecture: arch,
        pruned_architecture: result.arch.clone(),
        train_loss: result.train_loss,
        imputed_values: d.imputed,
        dropped_constant_columns: d.dropped,
        phase_log: result.phase_log.clone(),
        test,
    };

    let dir = output_dir(&config)?;
    write_json(&dir.join("model.json"), &model)?;
    write_json(&dir.join("report.json"), &report)?;
    std::fs::write(dir.join("run_config.toml"), config.to_toml()?)?;

    println!("status: {:?}", report.status);
    println!("lambda_qut = {}", report.lambda_qut);
    println!("selected ({}): {}", report.selected_features.len(), report.selected_features.join(", "));
    if d.imputed > 0 {
        println!("imputed {} missing values with column means", d.imputed);
    }
    if let Some(t) = &report.test {
        match (t.mse, t.accuracy) {
            (_, Some(acc)) => println!("test accuracy = {acc} on {} rows", t.n),
            (Some(mse), _) => println!("test mse = {mse} on {} rows", t.n),
            _ => {}
        }
    }
    println!("wrote {}", dir.display());
    Ok(if result.status == FitStatus::MaxIters {
        EXIT_BUDGET
    } else {
        EXIT_OK
    })
}

/// Outputs of `model` on a table, standardised with the stored statistics.
fn model_outputs(model: &ModelFile, table: &crate::data::Table) -> Result<Array2<f64>> {
    let (params, arch, _) = model.network.into_parts()?;
    let x = apply_features(table, &model.selected_names, &model.selected_standardizer())?;
    network_outputs(&params, &arch, x)
}

fn network_outputs(params: &NetworkParams, arch: &Architecture, x: Array2<f64>) -> Result<Array2<f64>> {
    forward(params, arch, x.view())
}

fn score_test_file(model: &ModelFile, path: &Path, has_header: bool) -> Result<TestScore> {
    let table = read_table(path, has_header)?;
    let t = table.column_index(&TargetColumn::Name(model.target.clone()))?;
    let out = model_outputs(model, &table)?;
    let n = out.nrows();
    match model.task {
        TaskKind::Regression => {
            let y = parse_targets(&table, t, TaskKind::Regression)?.y;
            let mse = (&out - &y).mapv(|v| v * v).sum() / n as f64;
            Ok(TestScore {
                n,
                loss: loss(&TaskSpec::regression(), out.view(), y.view())?,
                mse: Some(mse),
                accuracy: None,
            })
        }
        TaskKind::Classification => {
            let labels = model.labels.as_ref().ok_or_else(|| {
                Error::Data("classification model without class labels".into())
            })?;
            let cells: Vec<&str> = table
                .rows
                .iter()
                .map(|r| r.get(t).map(String::as_str).unwrap_or(""))
                .collect();
            let y = crate::data::one_hot(&cells, labels)?;
            let task = TaskSpec::classification(labels.len())?;
            Ok(TestScore {
                n,
                loss: loss(&task, out.view(), y.view())?,
                mse: None,
                accuracy: Some(correct_predictions(out.view(), y.view()) as f64 / n as f64),
            })
        }
    }
}

fn cmd_predict(args: &PredictArgs, config: &RunConfig) -> Result<i32> {
    let model = ModelFile::load(&args.model)?;
    let table = read_table(&args.data, !args.no_header)?;
    let out = model_outputs(&model, &table)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| Error::Data(format!("cannot write predictions: {e}"));
    match (&model.task, &model.labels) {
        (TaskKind::Classification, Some(labels)) => {
            let mut header = vec!["label".to_string()];
            header.extend(labels.iter().map(|l| format!("p_{l}")));
            w.write_record(&header).map_err(csv_err)?;
            let probs = softmax(out.view());
            for row in probs.axis_iter(Axis(0)) {
                let best = row
                    .iter()
                    .enumerate()
                    .fold((0, f64::NEG_INFINITY), |b, (i, &v)| if v > b.1 { (i, v) } else { b })
                    .0;
                let mut rec = vec![labels[best].clone()];
                rec.extend(row.iter().map(|p| p.to_string()));
                w.write_record(&rec).map_err(csv_err)?;
            }
        }
        (TaskKind::Classification, None) => {
            return Err(Error::Data("classification model without class labels".into()))
        }
        (TaskKind::Regression, _) => {
            w.write_record(["prediction"]).map_err(csv_err)?;
            for v in out.column(0) {
                w.write_record([v.to_string()]).map_err(csv_err)?;
            }
        }
    }
    let bytes = w
        .into_inner()
        .map_err(|e| Error::Data(format!("cannot write predictions: {e}")))?;
    let path = output_dir(config)?.join(&args.output);
    std::fs::write(&path, bytes)?;
    println!("wrote {} predictions to {}", out.nrows(), path.display());
    Ok(EXIT_OK)
}

/// `(n, p, s grid, hidden widths)` used by `simulate` when not given.
pub fn scenario_defaults(kind: ScenarioKind) -> (usize, usize, &'static str, Vec<usize>) {
    match kind {
        ScenarioKind::Linear => (70, 250, "0:25", Vec::new()),
        ScenarioKind::AbsDiff => (500, 50, "0:2:20", vec![20]),
        ScenarioKind::NestedAbs => (2000, 50, "4", vec![20]),
    }
}

fn cmd_simulate(args: &SimulateArgs, mut config: RunConfig) -> Result<i32> {
    config.apply_model_args(&args.model)?;
    let (n, p, grid, hidden) = scenario_defaults(args.scenario);
    let spec = SweepSpec {
        kind: args.scenario,
        n: args.n.unwrap_or(n),
        p: args.p.unwrap_or(p),
        n_test: args.n_test,
        n_runs: args.runs,
        s_grid: parse_grid(args.s.as_deref().unwrap_or(grid))?,
        hidden_widths: config.hidden_widths.clone().unwrap_or(hidden),
        activation: config.activation,
        seed: config.train.seed,
        train: config.train.clone(),
    };
    let dir = output_dir(&config)?;
    let (result, csv_path) = sweep_to_dir(&spec, &dir, args.resume)?;
    print!("{}", rows_to_csv(&result.rows));
    if result.reused > 0 {
        println!("reused {} finished runs", result.reused);
    }
    println!("wrote {}", csv_path.display());
    Ok(EXIT_OK)
}
