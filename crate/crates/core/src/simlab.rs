//! Simulation laboratory: synthetic sparse problems, support-recovery
//! metrics and resumable sweeps over the sparsity level.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::Instant;

use ndarray::{Array1, Array2, ArrayView2};
use rand::seq::index::sample;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Standardizer;
use crate::error::{Error, Result};
use crate::losses::TaskSpec;
use crate::network::{Activation, Architecture};
use crate::seeding::{derive_seed, stream_rng, TAG_DATA, TAG_FIT};
use crate::trainer::{fit, predict, TrainConfig};

pub const SWEEP_SCHEMA_VERSION: u32 = 1;
pub const CSV_HEADER: &str = "s,n_runs,pesr,fdr,tpr,mean_l2,failures";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    /// `mu = X_S beta` with coefficients drawn from `{+-1, +-2, +-3}`.
    Linear,
    /// `mu = sum_i 10 |x_(2i) - x_(2i-1)|` over consecutive support pairs.
    AbsDiff,
    /// `mu = 10 ||x_2 - x_1| - |x_4 - x_3||` on a support of size four.
    NestedAbs,
}

impl std::str::FromStr for ScenarioKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "linear" => Ok(ScenarioKind::Linear),
            "absdiff" => Ok(ScenarioKind::AbsDiff),
            "nestedabs" => Ok(ScenarioKind::NestedAbs),
            other => Err(Error::Domain(format!("unknown scenario {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub kind: ScenarioKind,
    pub n: usize,
    pub p: usize,
    pub s: usize,
    pub n_test: usize,
    pub n_runs: usize,
    pub seed: u64,
}

impl ScenarioSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Domain(m));
        if self.n < 2 || self.p == 0 || self.n_test == 0 || self.n_runs == 0 {
            return bad(format!(
                "need n >= 2 and positive p, n_test, n_runs; got {self:?}"
            ));
        }
        if self.s > self.p {
            return bad(format!("sparsity {} exceeds dimension {}", self.s, self.p));
        }
        match self.kind {
            ScenarioKind::AbsDiff if self.s % 2 == 1 => {
                bad(format!("the absdiff scenario needs an even sparsity, got {}", self.s))
            }
            ScenarioKind::NestedAbs if self.s != 4 && self.s != 0 => {
                bad(format!("the nestedabs scenario needs s = 4, got {}", self.s))
            }
            _ => Ok(()),
        }
    }
}

/// One synthetic problem.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    /// Training inputs standardised with their own column statistics.
    pub x_train: Array2<f64>,
    pub y_train: Array2<f64>,
    /// Test inputs standardised with the training statistics.
    pub x_test: Array2<f64>,
    /// Noiseless regression function on the test inputs.
    pub mu_test: Array1<f64>,
    /// Sorted indices of the relevant inputs.
    pub true_support: Vec<usize>,
    /// Linear coefficients in support-draw order (linear scenario only).
    pub coefficients: Vec<f64>,
}

/// Regression function evaluated on one row of raw inputs.
///
/// `support` lists the relevant columns in draw order; consecutive pairs
/// play the roles of `(x_1, x_2)`, `(x_3, x_4)`, ...
pub fn mean_function(kind: ScenarioKind, row: &[f64], support: &[usize], coefficients: &[f64]) -> f64 {
    let x = |k: usize| row[support[k]];
    match kind {
        ScenarioKind::Linear => support.iter().zip(coefficients).map(|(&j, &b)| b * row[j]).sum(),
        ScenarioKind::AbsDiff => (0..support.len() / 2)
            .map(|i| 10.0 * (x(2 * i + 1) - x(2 * i)).abs())
            .sum(),
        ScenarioKind::NestedAbs => {
            if support.is_empty() {
                0.0
            } else {
                10.0 * ((x(1) - x(0)).abs() - (x(3) - x(2)).abs()).abs()
            }
        }
    }
}

fn normal_matrix<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || StandardNormal.sample(rng))
}

fn evaluate(kind: ScenarioKind, x: &Array2<f64>, support: &[usize], coefficients: &[f64]) -> Array1<f64> {
    x.rows()
        .into_iter()
        .map(|r| mean_function(kind, r.as_slice().expect("standard layout"), support, coefficients))
        .collect()
}

/// Draws run `run_index` of `scenario`; the result depends only on
/// `(scenario.seed, s, run_index)`.
pub fn generate(scenario: &ScenarioSpec, run_index: usize) -> Result<Dataset> {
    scenario.validate()?;
    let seed = derive_seed(scenario.seed, &[TAG_DATA, scenario.s as u64, run_index as u64]);
    let mut rng = stream_rng(seed, 0);
    let support: Vec<usize> = sample(&mut rng, scenario.p, scenario.s).into_vec();
    let coefficients: Vec<f64> = match scenario.kind {
        ScenarioKind::Linear => (0..scenario.s)
            .map(|_| {
                let magnitude = rng.random_range(1..=3) as f64;
                if rng.random::<bool>() {
                    magnitude
                } else {
                    -magnitude
                }
            })
            .collect(),
        _ => Vec::new(),
    };
    let x_raw = normal_matrix(scenario.n, scenario.p, &mut rng);
    let mu_train = evaluate(scenario.kind, &x_raw, &support, &coefficients);
    let y_train = Array2::from_shape_fn((scenario.n, 1), |(i, _)| {
        let e: f64 = StandardNormal.sample(&mut rng);
        mu_train[i] + e
    });
    let x_test_raw = normal_matrix(scenario.n_test, scenario.p, &mut rng);
    let mu_test = evaluate(scenario.kind, &x_test_raw, &support, &coefficients);

    let standardizer = Standardizer::fit(x_raw.view())?;
    let x_train = standardizer.transform(x_raw.view())?;
    let x_test = standardizer.transform(x_test_raw.view())?;
    let mut true_support = support;
    true_support.sort_unstable();
    Ok(Dataset {
        x_train,
        y_train,
        x_test,
        mu_test,
        true_support,
        coefficients,
    })
}

/// Outcome of one fitted simulation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub s: usize,
    pub run_index: usize,
    pub run_seed: u64,
    pub true_support: Vec<usize>,
    pub estimated_support: Vec<usize>,
    /// Mean squared distance between the fitted and true regression functions on the test set.
    pub l2_hat: f64,
    /// Same distance for the constant predictor at the training mean.
    pub null_l2_hat: f64,
}

fn intersection(a: &[usize], b: &[usize]) -> usize {
    a.iter().filter(|j| b.contains(j)).count()
}

/// False discovery proportion with the `|S_hat| v 1` denominator.
pub fn false_discovery_proportion(estimated: &[usize], truth: &[usize]) -> f64 {
    (estimated.len() - intersection(estimated, truth)) as f64 / estimated.len().max(1) as f64
}

/// True positive proportion; an empty true support counts as fully
/// recovered only when nothing was selected.
pub fn true_positive_proportion(estimated: &[usize], truth: &[usize]) -> f64 {
    if truth.is_empty() {
        return if estimated.is_empty() { 1.0 } else { 0.0 };
    }
    intersection(estimated, truth) as f64 / truth.len() as f64
}

/// Aggregates for one sparsity level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub s: usize,
    pub n_runs: usize,
    pub pesr: f64,
    pub fdr: f64,
    pub tpr: f64,
    pub mean_l2: f64,
    pub failures: usize,
    /// Mean test error of the constant predictor, for reference.
    pub mean_null_l2: f64,
}

/// Exact-recovery rate, mean FDR, mean TPR and mean test error of `records`.
pub fn metrics(s: usize, n_runs: usize, records: &[TrialRecord], failures: usize) -> Result<SweepRow> {
    if records.is_empty() {
        return Err(Error::Domain(format!("no successful runs at s = {s}")));
    }
    let count = records.len() as f64;
    let mean = |f: &dyn Fn(&TrialRecord) -> f64| records.iter().map(f).sum::<f64>() / count;
    Ok(SweepRow {
        s,
        n_runs,
        pesr: mean(&|r| f64::from(u8::from(sorted(&r.estimated_support) == sorted(&r.true_support)))),
        fdr: mean(&|r| false_discovery_proportion(&r.estimated_support, &r.true_support)),
        tpr: mean(&|r| true_positive_proportion(&r.estimated_support, &r.true_support)),
        mean_l2: mean(&|r| r.l2_hat),
        failures,
        mean_null_l2: mean(&|r| r.null_l2_hat),
    })
}

fn sorted(v: &[usize]) -> Vec<usize> {
    let mut v = v.to_vec();
    v.sort_unstable();
    v
}

/// Everything that determines the result of a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub kind: ScenarioKind,
    pub n: usize,
    pub p: usize,
    pub n_test: usize,
    pub n_runs: usize,
    pub s_grid: Vec<usize>,
    pub hidden_widths: Vec<usize>,
    pub activation: Activation,
    pub train: TrainConfig,
    pub seed: u64,
}

impl SweepSpec {
    pub fn scenario(&self, s: usize) -> ScenarioSpec {
        ScenarioSpec {
            kind: self.kind,
            n: self.n,
            p: self.p,
            s,
            n_test: self.n_test,
            n_runs: self.n_runs,
            seed: self.seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.s_grid.is_empty() {
            return Err(Error::Domain("empty sparsity grid".into()));
        }
        for &s in &self.s_grid {
            self.scenario(s).validate()?;
        }
        self.train.validate()?;
        Architecture::new(self.p, self.hidden_widths.clone(), 1, self.activation)?;
        Ok(())
    }
}

/// Mean of `(a_i - b_i)^2`.
pub fn mean_squared_distance(a: &Array1<f64>, b: &Array1<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64
}

/// Generates, fits and scores run `run_index` at sparsity `s`.
pub fn run_trial(spec: &SweepSpec, s: usize, run_index: usize) -> Result<TrialRecord> {
    let data = generate(&spec.scenario(s), run_index)?;
    let arch = Architecture::new(spec.p, spec.hidden_widths.clone(), 1, spec.activation)?;
    let run_seed = derive_seed(spec.seed, &[TAG_FIT, s as u64, run_index as u64]);
    let config = TrainConfig {
        seed: run_seed,
        ..spec.train.clone()
    };
    let result = fit(data.x_train.view(), data.y_train.view(), &arch, &TaskSpec::regression(), &config)?;
    let pred = predict(&result, data.x_test.view())?.column(0).to_owned();
    let y_mean = data.y_train.mean().expect("nonempty");
    let null_pred = Array1::from_elem(data.mu_test.len(), y_mean);
    Ok(TrialRecord {
        s,
        run_index,
        run_seed,
        true_support: data.true_support,
        estimated_support: result.selected_features,
        l2_hat: mean_squared_distance(&pred, &data.mu_test),
        null_l2_hat: mean_squared_distance(&null_pred, &data.mu_test),
    })
}

/// One cell of the sweep as stored in the resume cache.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellRecord {
    pub s: usize,
    pub run_index: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub record: Option<TrialRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct CacheHeader {
    schema_version: u32,
    spec: SweepSpec,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
    pub cells: Vec<CellRecord>,
    /// Cells taken from the cache instead of being recomputed.
    pub reused: usize,
}

fn load_cache(path: &Path, spec: &SweepSpec) -> Result<BTreeMap<(usize, usize), CellRecord>> {
    let mut cells = BTreeMap::new();
    if !path.exists() {
        return Ok(cells);
    }
    let reader = BufReader::new(File::open(path)?);
    let mut lines = reader.lines();
    let Some(first) = lines.next() else {
        return Ok(cells);
    };
    let header: CacheHeader = serde_json::from_str(&first?)
        .map_err(|e| Error::Data(format!("{}: bad cache header: {e}", path.display())))?;
    if header.schema_version != SWEEP_SCHEMA_VERSION || header.spec != *spec {
        return Err(Error::Data(format!(
            "{} was written for a different sweep; remove it or choose another output directory",
            path.display()
        )));
    }
    for line in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        // a torn final line from an interrupted run is simply recomputed
        if let Ok(cell) = serde_json::from_str::<CellRecord>(&line) {
            cells.insert((cell.s, cell.run_index), cell);
        }
    }
    Ok(cells)
}

/// Runs every `(s, run)` cell of the sweep in parallel and aggregates per `s`.
///
/// With a cache path, finished cells are appended to it as JSON lines and
/// cells already present are reused, so an interrupted sweep can be resumed.
/// The result does not depend on the thread count or on where a run was
/// interrupted.
pub fn sweep(spec: &SweepSpec, cache: Option<&Path>) -> Result<SweepResult> {
    spec.validate()?;
    let mut done = match cache {
        Some(path) => load_cache(path, spec)?,
        None => BTreeMap::new(),
    };
    let writer = match cache {
        Some(path) => {
            let fresh = !path.exists() || std::fs::metadata(path)?.len() == 0;
            let mut f = OpenOptions::new().create(true).append(true).open(path)?;
            if fresh {
                let header = CacheHeader {
                    schema_version: SWEEP_SCHEMA_VERSION,
                    spec: spec.clone(),
                };
                writeln!(f, "{}", serde_json::to_string(&header)?)?;
            }
            Some(Mutex::new(f))
        }
        None => None,
    };

    let todo: Vec<(usize, usize)> = spec
        .s_grid
        .iter()
        .flat_map(|&s| (0..spec.n_runs).map(move |r| (s, r)))
        .filter(|key| !done.contains_key(key))
        .collect();
    let reused = spec.s_grid.len() * spec.n_runs - todo.len();

    let fresh: Vec<CellRecord> = todo
        .par_iter()
        .map(|&(s, run_index)| -> Result<CellRecord> {
            let cell = match run_trial(spec, s, run_index) {
                Ok(record) => CellRecord {
                    s,
                    run_index,
                    record: Some(record),
                    error: None,
                },
                Err(e) => {
                    log::warn!("run {run_index} at s = {s} failed: {e}");
                    CellRecord {
                        s,
                        run_index,
                        record: None,
                        error: Some(e.to_string()),
                    }
                }
            };
            if let Some(w) = &writer {
                let line = serde_json::to_string(&cell)?;
                let mut f = w.lock().expect("cache writer poisoned");
                writeln!(f, "{line}")?;
                f.flush()?;
            }
            Ok(cell)
        })
        .collect::<Result<_>>()?;
    for cell in fresh {
        done.insert((cell.s, cell.run_index), cell);
    }

    let mut rows = Vec::new();
    let mut cells = Vec::new();
    for &s in &spec.s_grid {
        let group: Vec<CellRecord> = (0..spec.n_runs).map(|r| done[&(s, r)].clone()).collect();
        let records: Vec<TrialRecord> = group.iter().filter_map(|c| c.record.clone()).collect();
        let failures = group.len() - records.len();
        rows.push(if records.is_empty() {
            SweepRow {
                s,
                n_runs: spec.n_runs,
                pesr: f64::NAN,
                fdr: f64::NAN,
                tpr: f64::NAN,
                mean_l2: f64::NAN,
                failures,
                mean_null_l2: f64::NAN,
            }
        } else {
            metrics(s, spec.n_runs, &records, failures)?
        });
        cells.extend(group);
    }
    Ok(SweepResult { rows, cells, reused })
}

/// The sweep table as CSV text with a fixed column order.
pub fn rows_to_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.s, r.n_runs, r.pesr, r.fdr, r.tpr, r.mean_l2, r.failures
        ));
    }
    out
}

/// Provenance written next to the sweep table.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepManifest {
    pub schema_version: u32,
    pub spec: SweepSpec,
    pub rows: Vec<SweepRow>,
    pub reused_cells: usize,
    pub wall_time_seconds: f64,
}

/// Runs a sweep and writes `sweep.csv`, `sweep.json` and the `cells.jsonl`
/// resume cache into `dir`.
pub fn sweep_to_dir(spec: &SweepSpec, dir: &Path, resume: bool) -> Result<(SweepResult, PathBuf)> {
    std::fs::create_dir_all(dir)?;
    let cache = dir.join("cells.jsonl");
    if !resume && cache.exists() {
        std::fs::remove_file(&cache)?;
    }
    let start = Instant::now();
    let result = sweep(spec, Some(&cache))?;
    let csv_path = dir.join("sweep.csv");
    std::fs::write(&csv_path, rows_to_csv(&result.rows))?;
    let manifest = SweepManifest {
        schema_version: SWEEP_SCHEMA_VERSION,
        spec: spec.clone(),
        rows: result.rows.clone(),
        reused_cells: result.reused,
        wall_time_seconds: start.elapsed().as_secs_f64(),
    };
    std::fs::write(dir.join("sweep.json"), serde_json::to_string_pretty(&manifest)?)?;
    Ok((result, csv_path))
}

/// Column means and variances of a fresh design, used by sanity checks.
pub fn design_moments(x: ArrayView2<f64>) -> (Vec<f64>, Vec<f64>) {
    let means: Vec<f64> = x.columns().into_iter().map(|c| c.mean().expect("nonempty")).collect();
    let vars: Vec<f64> = x.columns().into_iter().map(|c| c.var(1.0)).collect();
    (means, vars)
}
