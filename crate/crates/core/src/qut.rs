//! Zero-thresholding function and the Monte Carlo quantile universal
//! threshold.
//!
//! `lambda0(X, Y)` is the smallest regularisation at which the all-zero
//! first layer is a local minimum of the penalised cost. Under pure-noise
//! responses it is a random variable; its upper `alpha` quantile is the
//! threshold used for training.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::{TaskKind, TaskSpec};
use crate::network::Architecture;
use crate::seeding::stream_rng;

pub const QUT_SCHEMA_VERSION: u32 = 1;
pub const DEFAULT_ALPHA: f64 = 0.05;
pub const DEFAULT_N_MC: usize = 1000;
pub const MIN_N_MC: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QutEstimate {
    pub schema_version: u32,
    pub lambda_qut: f64,
    pub alpha: f64,
    pub n_mc: usize,
    pub seed: u64,
    /// Monte Carlo draws of the zero-thresholding function, in draw order.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub mc_samples: Vec<f64>,
}

impl QutEstimate {
    /// Copy without the sample vector, for compact reports.
    pub fn without_samples(&self) -> Self {
        QutEstimate {
            mc_samples: Vec::new(),
            ..self.clone()
        }
    }
}

/// `kappa^(L-1) * pi_L`: the factor by which depth scales `lambda0`.
pub fn depth_factor(arch: &Architecture) -> f64 {
    let kappa = arch.activation.derivative_bound();
    let pi: f64 = arch
        .hidden_widths
        .iter()
        .skip(1)
        .map(|&w| w as f64)
        .product::<f64>()
        .sqrt();
    kappa.powi(arch.depth() as i32 - 1) * pi
}

/// Zero-thresholding function for standardised `x` and targets `y`.
///
/// `||X^T (Y - mean)||` is the largest row l1 norm, i.e. the largest sum over
/// outputs for a single feature. Regression divides by the l2 norm of the
/// centred response, which makes the statistic location and scale free.
pub fn lambda0(
    x: ArrayView2<f64>,
    y: ArrayView2<f64>,
    arch: &Architecture,
    task: &TaskSpec,
) -> Result<f64> {
    if x.nrows() != y.nrows() {
        return Err(Error::Shape(format!(
            "{} input rows but {} target rows",
            x.nrows(),
            y.nrows()
        )));
    }
    if x.ncols() != arch.input_dim || y.ncols() != task.output_dim {
        return Err(Error::Shape(format!(
            "data is {}x{} -> {}, architecture expects {} -> {}",
            x.nrows(),
            x.ncols(),
            y.ncols(),
            arch.input_dim,
            task.output_dim
        )));
    }
    if y.nrows() == 0 {
        return Err(Error::Domain("no observations".into()));
    }
    let mean = y.mean_axis(Axis(0)).expect("nonempty");
    let centred = &y - &mean;
    let corr = x.t().dot(&centred);
    let numerator = corr
        .rows()
        .into_iter()
        .map(|r| r.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max);
    let factor = depth_factor(arch);
    match task.kind {
        TaskKind::Regression => {
            let norm = centred.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm == 0.0 {
                return Err(Error::Domain(
                    "constant response: the zero-thresholding function is undefined".into(),
                ));
            }
            Ok(factor * numerator / norm)
        }
        TaskKind::Classification => Ok(factor * numerator),
    }
}

/// Proportions used to draw null classification targets (no clamping).
fn observed_proportions(y: ArrayView2<f64>) -> Result<Array1<f64>> {
    if y.nrows() == 0 {
        return Err(Error::Domain("no observations".into()));
    }
    Ok(y.mean_axis(Axis(0)).expect("nonempty"))
}

fn draw_null(
    task: &TaskSpec,
    sampler: Option<&WeightedIndex<f64>>,
    n: usize,
    rng: &mut ChaCha8Rng,
) -> Array2<f64> {
    match (task.kind, sampler) {
        (TaskKind::Classification, Some(sampler)) => {
            let mut out = Array2::zeros((n, task.output_dim));
            for i in 0..n {
                out[[i, sampler.sample(rng)]] = 1.0;
            }
            out
        }
        _ => Array2::from_shape_simple_fn((n, 1), || StandardNormal.sample(rng)),
    }
}

fn class_sampler(task: &TaskSpec, y_observed: ArrayView2<f64>) -> Result<Option<WeightedIndex<f64>>> {
    if task.kind == TaskKind::Regression {
        return Ok(None);
    }
    let p = observed_proportions(y_observed)?;
    WeightedIndex::new(p.iter().copied())
        .map(Some)
        .map_err(|e| Error::Domain(format!("invalid class proportions: {e}")))
}

/// One pure-noise response of `n` rows.
///
/// Regression: i.i.d. standard normal. Classification: one-hot rows with
/// classes drawn i.i.d. from the proportions observed in `y_observed`.
pub fn sample_null(task: &TaskSpec, y_observed: ArrayView2<f64>, n: usize, seed: u64) -> Result<Array2<f64>> {
    let sampler = class_sampler(task, y_observed)?;
    Ok(draw_null(task, sampler.as_ref(), n, &mut stream_rng(seed, 0)))
}

/// Index (0-based, ascending order) of the `1 - alpha` order statistic.
pub fn quantile_index(alpha: f64, n_mc: usize) -> usize {
    // the small slack keeps e.g. 0.95 * 1000 from rounding up to 951
    let k = ((1.0 - alpha) * n_mc as f64 - 1e-9).ceil() as usize;
    k.clamp(1, n_mc) - 1
}

/// Monte Carlo estimate of the quantile universal threshold.
///
/// Draw `i` uses stream `i` of `seed`, so the estimate is identical for any
/// number of worker threads.
pub fn compute_qut(
    x: ArrayView2<f64>,
    y: ArrayView2<f64>,
    arch: &Architecture,
    task: &TaskSpec,
    alpha: f64,
    n_mc: usize,
    seed: u64,
) -> Result<QutEstimate> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Domain(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    if n_mc < MIN_N_MC {
        return Err(Error::Domain(format!(
            "at least {MIN_N_MC} Monte Carlo draws are required, got {n_mc}"
        )));
    }
    let sampler = class_sampler(task, y)?;
    let n = x.nrows();
    let samples = (0..n_mc as u64)
        .into_par_iter()
        .map(|i| {
            let y0 = draw_null(task, sampler.as_ref(), n, &mut stream_rng(seed, i));
            lambda0(x, y0.view(), arch, task)
        })
        .collect::<Result<Vec<f64>>>()?;
    let mut sorted = samples.clone();
    sorted.sort_by(f64::total_cmp);
    Ok(QutEstimate {
        schema_version: QUT_SCHEMA_VERSION,
        lambda_qut: sorted[quantile_index(alpha, n_mc)],
        alpha,
        n_mc,
        seed,
        mc_samples: samples,
    })
}
