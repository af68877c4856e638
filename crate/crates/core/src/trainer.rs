//! Full training pipeline: annealed warm phases with Adam, a final proximal
//! gradient (ISTA) phase at the quantile universal threshold, pruning, and an
//! unpenalised refit of the pruned network.

use ndarray::{ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::{null_constant, TaskSpec};
use crate::network::{
    fill_nonzero_row, gradient, init, loss_value, prune, select_columns, Architecture,
    GradientBundle, NetworkParams,
};
use crate::penalty::{prox_in_place, rho_derivative, scaled_spec, solve_threshold, PenaltySpec};
use crate::qut::{compute_qut, QutEstimate, DEFAULT_ALPHA, DEFAULT_N_MC};
use crate::seeding::{derive_seed, stream_rng, TAG_INIT, TAG_QUT};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;
pub const MAX_HALVINGS: usize = 30;
pub const DEFAULT_INITIAL_STEP: f64 = 0.01;

/// `e^(i-1) / (1 + e^(i-1))` for `i = 0..count`, followed by `1.0`.
pub fn default_lambda_fractions(count: usize) -> Vec<f64> {
    let mut out: Vec<f64> = (0..count)
        .map(|i| {
            let e = (i as f64 - 1.0).exp();
            e / (1.0 + e)
        })
        .collect();
    out.push(1.0);
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub alpha: f64,
    pub n_mc: usize,
    /// `nu` of each warm phase.
    pub nu_schedule: Vec<f64>,
    /// Fraction of the threshold used by each warm phase, then `1.0` for the final phase.
    pub lambda_fractions: Vec<f64>,
    /// `nu` of the final proximal phase.
    pub final_nu: f64,
    pub warm_lr: f64,
    pub warm_tol: f64,
    pub final_tol: f64,
    pub refit_tol: f64,
    pub max_iters_per_phase: usize,
    /// First trial step of the proximal phase line search.
    pub initial_step: f64,
    /// Uses this regularisation instead of estimating the threshold.
    pub lambda_override: Option<f64>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let nu_schedule = vec![0.9, 0.7, 0.4, 0.3, 0.2, 0.1];
        TrainConfig {
            alpha: DEFAULT_ALPHA,
            n_mc: DEFAULT_N_MC,
            lambda_fractions: default_lambda_fractions(nu_schedule.len()),
            nu_schedule,
            final_nu: 0.1,
            warm_lr: 0.01,
            warm_tol: 1e-4,
            final_tol: 1e-7,
            refit_tol: 1e-7,
            max_iters_per_phase: 5000,
            initial_step: DEFAULT_INITIAL_STEP,
            lambda_override: None,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Domain(m));
        if self.lambda_fractions.len() != self.nu_schedule.len() + 1 {
            return bad(format!(
                "{} lambda fractions for {} warm phases; expected one more fraction than phases",
                self.lambda_fractions.len(),
                self.nu_schedule.len()
            ));
        }
        if self.lambda_fractions.windows(2).any(|w| w[0] >= w[1])
            || self.lambda_fractions.first().is_some_and(|&f| f <= 0.0)
        {
            return bad("lambda fractions must be positive and strictly increasing".into());
        }
        if self.lambda_fractions.last() != Some(&1.0) {
            return bad("the last lambda fraction must be 1".into());
        }
        for &nu in self.nu_schedule.iter().chain(std::iter::once(&self.final_nu)) {
            if !(nu > 0.0 && nu <= 1.0) {
                return bad(format!("nu must lie in (0, 1], got {nu}"));
            }
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad(format!("alpha must lie in (0, 1), got {}", self.alpha));
        }
        for (name, v) in [
            ("warm_lr", self.warm_lr),
            ("warm_tol", self.warm_tol),
            ("final_tol", self.final_tol),
            ("refit_tol", self.refit_tol),
            ("initial_step", self.initial_step),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        if self.max_iters_per_phase == 0 {
            return bad("max_iters_per_phase must be positive".into());
        }
        if let Some(l) = self.lambda_override {
            if !(l.is_finite() && l > 0.0) {
                return bad(format!("lambda must be positive, got {l}"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitStatus {
    Converged,
    MaxIters,
    PerfectFit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhaseKind {
    Warm,
    Proximal,
    Refit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseLog {
    pub kind: PhaseKind,
    pub lambda: f64,
    pub nu: f64,
    pub iterations: usize,
    pub initial_cost: f64,
    pub final_cost: f64,
    pub converged: bool,
    /// Penalised cost after every accepted proximal step.
    #[serde(skip)]
    pub cost_trace: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    /// Pruned and refitted parameters.
    pub params: NetworkParams,
    /// Architecture of the pruned network.
    pub arch: Architecture,
    /// Original column indices of the selected features.
    pub selected_features: Vec<usize>,
    pub lambda_qut: f64,
    pub qut: Option<QutEstimate>,
    pub phase_log: Vec<PhaseLog>,
    pub status: FitStatus,
    /// Unpenalised training loss of the final model.
    pub train_loss: f64,
}

/// Adam with per-block moment buffers.
struct Adam {
    lr: f64,
    t: i32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    fn new(lr: f64, params: &mut NetworkParams) -> Self {
        let sizes: Vec<usize> = params.blocks_mut().iter().map(|b| b.len()).collect();
        Adam {
            lr,
            t: 0,
            m: sizes.iter().map(|&s| vec![0.0; s]).collect(),
            v: sizes.iter().map(|&s| vec![0.0; s]).collect(),
        }
    }

    fn step(&mut self, params: &mut NetworkParams, grad: &GradientBundle) {
        self.t += 1;
        let c1 = 1.0 - ADAM_BETA1.powi(self.t);
        let c2 = 1.0 - ADAM_BETA2.powi(self.t);
        for (((p, g), m), v) in params
            .blocks_mut()
            .into_iter()
            .zip(grad.blocks())
            .zip(self.m.iter_mut())
            .zip(self.v.iter_mut())
        {
            for i in 0..p.len() {
                m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * g[i];
                v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * g[i] * g[i];
                p[i] -= self.lr * (m[i] / c1) / ((v[i] / c2).sqrt() + ADAM_EPS);
            }
        }
    }
}

fn relative_change(prev: f64, cur: f64) -> f64 {
    (cur - prev).abs() / prev.abs().max(1.0)
}

/// Replaces any all-zero deep row, where the normalisation is undefined.
fn repair_deep_rows<R: Rng>(params: &mut NetworkParams, rng: &mut R) {
    for w in params.deep_weights.iter_mut() {
        for mut row in w.rows_mut() {
            if row.iter().all(|&v| v == 0.0) {
                let slice = row.as_slice_mut().expect("standard layout");
                fill_nonzero_row(slice, rng);
                for v in slice.iter_mut() {
                    *v *= 0.01;
                }
            }
        }
    }
}

struct Problem<'a> {
    x: ArrayView2<'a, f64>,
    y: ArrayView2<'a, f64>,
    arch: &'a Architecture,
    task: &'a TaskSpec,
}

impl Problem<'_> {
    fn gradient(&self, params: &NetworkParams) -> Result<GradientBundle> {
        gradient(params, self.arch, self.task, self.x, self.y)
    }

    fn loss(&self, params: &NetworkParams) -> Result<f64> {
        loss_value(params, self.arch, self.task, self.x, self.y)
    }
}

enum PhaseEnd {
    Converged,
    Budget,
    PerfectFit,
}

/// Adam on `loss + lambda * sum rho_nu(w1)` (no penalty when `penalty` is `None`),
/// with the subgradient `0` at the origin.
fn adam_phase<R: Rng>(
    problem: &Problem,
    params: &mut NetworkParams,
    penalty: Option<(f64, f64)>,
    kind: PhaseKind,
    lr: f64,
    tol: f64,
    max_iters: usize,
    rng: &mut R,
) -> Result<(PhaseLog, PhaseEnd)> {
    let (lambda, nu) = penalty.unwrap_or((0.0, 1.0));
    let penalty_cost = |p: &NetworkParams| {
        if lambda == 0.0 {
            0.0
        } else {
            lambda * p.w1.iter().map(|&t| crate::penalty::rho_value(t, nu)).sum::<f64>()
        }
    };
    let mut adam = Adam::new(lr, params);
    let mut log = PhaseLog {
        kind,
        lambda,
        nu,
        iterations: 0,
        initial_cost: f64::NAN,
        final_cost: f64::NAN,
        converged: false,
        cost_trace: Vec::new(),
    };
    let mut prev = f64::NAN;
    for iter in 0..=max_iters {
        let mut grad = match problem.gradient(params) {
            Ok(g) => g,
            Err(Error::PerfectFit) => {
                log.final_cost = penalty_cost(params);
                return Ok((log, PhaseEnd::PerfectFit));
            }
            Err(e) => return Err(e),
        };
        let cost = grad.loss_value + penalty_cost(params);
        if !cost.is_finite() {
            return Err(Error::numerical("non-finite cost during gradient phase", cost));
        }
        if iter == 0 {
            log.initial_cost = cost;
        }
        log.final_cost = cost;
        log.iterations = iter;
        if iter > 0 && relative_change(prev, cost) < tol {
            log.converged = true;
            return Ok((log, PhaseEnd::Converged));
        }
        if iter == max_iters {
            break;
        }
        prev = cost;
        if lambda > 0.0 {
            grad.w1.zip_mut_with(&params.w1, |g, &w| *g += lambda * rho_derivative(w, nu));
        }
        adam.step(params, &grad);
        repair_deep_rows(params, rng);
    }
    Ok((log, PhaseEnd::Budget))
}

/// One proximal gradient step: `w1` moves by `-step * grad` and then through
/// the proximal map at `step * lambda`; every other parameter takes a plain
/// gradient step of the same size.
pub fn ista_step(
    params: &NetworkParams,
    grad: &GradientBundle,
    spec: &PenaltySpec,
    step: f64,
) -> Result<NetworkParams> {
    let scaled = scaled_spec(spec, step)?;
    let mut next = params.clone();
    for (p, g) in next.blocks_mut().into_iter().zip(grad.blocks()) {
        for (pv, gv) in p.iter_mut().zip(g.iter()) {
            *pv -= step * gv;
        }
    }
    prox_in_place(next.w1.as_slice_mut().expect("standard layout"), &scaled)?;
    Ok(next)
}

#[derive(Debug, Clone)]
pub struct LineSearchOutcome {
    pub step: f64,
    pub params: NetworkParams,
    pub cost: f64,
    pub halvings: usize,
    /// `false` when no trial step decreased the cost; `params` then holds the last trial.
    pub progress: bool,
}

/// Backtracking search: halves the step until the penalised cost after an
/// [`ista_step`] does not exceed `current_cost`, at most [`MAX_HALVINGS`] times.
pub fn line_search<F>(
    cost_fn: F,
    params: &NetworkParams,
    grad: &GradientBundle,
    spec: &PenaltySpec,
    current_cost: f64,
    initial_step: f64,
) -> Result<LineSearchOutcome>
where
    F: Fn(&NetworkParams) -> Result<f64>,
{
    let mut step = initial_step;
    let mut halvings = 0;
    loop {
        let trial = ista_step(params, grad, spec, step)?;
        let cost = cost_fn(&trial)?;
        if cost.is_finite() && cost <= current_cost {
            return Ok(LineSearchOutcome {
                step,
                params: trial,
                cost,
                halvings,
                progress: true,
            });
        }
        if halvings == MAX_HALVINGS {
            return Ok(LineSearchOutcome {
                step,
                params: trial,
                cost,
                halvings,
                progress: false,
            });
        }
        step *= 0.5;
        halvings += 1;
    }
}

fn proximal_phase(
    problem: &Problem,
    params: &mut NetworkParams,
    spec: &PenaltySpec,
    config: &TrainConfig,
) -> Result<(PhaseLog, PhaseEnd)> {
    let penalised = |p: &NetworkParams| -> Result<f64> {
        Ok(problem.loss(p)? + spec.cost(p.w1.as_slice().expect("standard layout")))
    };
    let mut log = PhaseLog {
        kind: PhaseKind::Proximal,
        lambda: spec.lambda(),
        nu: spec.nu(),
        iterations: 0,
        initial_cost: f64::NAN,
        final_cost: f64::NAN,
        converged: false,
        cost_trace: Vec::new(),
    };
    let mut step = config.initial_step;
    for iter in 0..config.max_iters_per_phase {
        let grad = match problem.gradient(params) {
            Ok(g) => g,
            Err(Error::PerfectFit) => return Ok((log, PhaseEnd::PerfectFit)),
            Err(e) => return Err(e),
        };
        let cost = grad.loss_value + spec.cost(params.w1.as_slice().expect("standard layout"));
        if iter == 0 {
            log.initial_cost = cost;
            log.final_cost = cost;
        }
        let outcome = line_search(penalised, params, &grad, spec, cost, step)?;
        log.iterations = iter + 1;
        if !outcome.progress {
            log.converged = true;
            return Ok((log, PhaseEnd::Converged));
        }
        *params = outcome.params;
        log.final_cost = outcome.cost;
        log.cost_trace.push(outcome.cost);
        step = if outcome.halvings == 0 {
            outcome.step * 2.0
        } else {
            outcome.step
        };
        if relative_change(cost, outcome.cost) < config.final_tol {
            log.converged = true;
            return Ok((log, PhaseEnd::Converged));
        }
    }
    Ok((log, PhaseEnd::Budget))
}

/// Trains a sparse network on standardised `x` and targets `y`.
pub fn fit(
    x: ArrayView2<f64>,
    y: ArrayView2<f64>,
    arch: &Architecture,
    task: &TaskSpec,
    config: &TrainConfig,
) -> Result<FitResult> {
    config.validate()?;
    task.validate()?;
    task.check_targets(y)?;
    if x.nrows() != y.nrows() || x.ncols() != arch.input_dim || arch.output_dim != task.output_dim {
        return Err(Error::Shape(format!(
            "data {}x{} with {} targets does not fit architecture {:?}",
            x.nrows(),
            x.ncols(),
            y.ncols(),
            arch
        )));
    }
    if y.ncols() != task.output_dim {
        return Err(Error::Shape("target width does not match the task".into()));
    }

    let (lambda_qut, qut) = match config.lambda_override {
        Some(l) => (l, None),
        None => {
            let est = compute_qut(
                x,
                y,
                arch,
                task,
                config.alpha,
                config.n_mc,
                derive_seed(config.seed, &[TAG_QUT]),
            )?;
            (est.lambda_qut, Some(est))
        }
    };

    let init_seed = derive_seed(config.seed, &[TAG_INIT]);
    let mut rng = stream_rng(init_seed, 1);
    let mut params = init(arch, init_seed);

    let problem = Problem { x, y, arch, task };
    let mut phase_log = Vec::new();
    let mut hit_budget = false;
    let mut perfect = false;

    for (&frac, &nu) in config.lambda_fractions.iter().zip(config.nu_schedule.iter()) {
        let (log, end) = adam_phase(
            &problem,
            &mut params,
            Some((frac * lambda_qut, nu)),
            PhaseKind::Warm,
            config.warm_lr,
            config.warm_tol,
            config.max_iters_per_phase,
            &mut rng,
        )?;
        phase_log.push(log);
        match end {
            PhaseEnd::Budget => hit_budget = true,
            PhaseEnd::PerfectFit => {
                perfect = true;
                break;
            }
            PhaseEnd::Converged => {}
        }
    }

    if !perfect {
        let spec = solve_threshold(lambda_qut, config.final_nu)?;
        let (log, end) = proximal_phase(&problem, &mut params, &spec, config)?;
        phase_log.push(log);
        match end {
            PhaseEnd::Budget => hit_budget = true,
            PhaseEnd::PerfectFit => perfect = true,
            PhaseEnd::Converged => {}
        }
    }

    let (mut pruned, pruned_arch, selected) = prune(&params, arch);
    let xs = select_columns(x, &selected);
    let refit_problem = Problem {
        x: xs.view(),
        y,
        arch: &pruned_arch,
        task,
    };
    if !perfect && selected.is_empty() {
        // the constant model has a closed-form optimum
        let initial_cost = refit_problem.loss(&pruned)?;
        pruned.intercept = null_constant(task, y)?;
        phase_log.push(PhaseLog {
            kind: PhaseKind::Refit,
            lambda: 0.0,
            nu: 1.0,
            iterations: 0,
            initial_cost,
            final_cost: refit_problem.loss(&pruned)?,
            converged: true,
            cost_trace: Vec::new(),
        });
    } else if !perfect {
        let (log, end) = adam_phase(
            &refit_problem,
            &mut pruned,
            None,
            PhaseKind::Refit,
            config.warm_lr,
            config.refit_tol,
            config.max_iters_per_phase,
            &mut rng,
        )?;
        phase_log.push(log);
        match end {
            PhaseEnd::Budget => hit_budget = true,
            PhaseEnd::PerfectFit => perfect = true,
            PhaseEnd::Converged => {}
        }
    }
    let train_loss = refit_problem.loss(&pruned)?;

    let status = if perfect {
        FitStatus::PerfectFit
    } else if hit_budget {
        FitStatus::MaxIters
    } else {
        FitStatus::Converged
    };
    Ok(FitResult {
        params: pruned,
        arch: pruned_arch,
        selected_features: selected,
        lambda_qut,
        qut,
        phase_log,
        status,
        train_loss,
    })
}

/// Predictions of a fitted model on the full, standardised design `x`.
pub fn predict(result: &FitResult, x: ArrayView2<f64>) -> Result<ndarray::Array2<f64>> {
    let needed = result.selected_features.iter().copied().max().map_or(0, |m| m + 1);
    if x.ncols() < needed {
        return Err(Error::Shape(format!(
            "model reads column {} but the input has {} columns",
            needed - 1,
            x.ncols()
        )));
    }
    let xs = select_columns(x, &result.selected_features);
    crate::network::forward(&result.params, &result.arch, xs.view())
}

/// Number of rows whose largest output matches the one-hot target.
pub fn correct_predictions(logits: ArrayView2<f64>, y: ArrayView2<f64>) -> usize {
    let argmax = |row: ndarray::ArrayView1<f64>| {
        row.iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
            .0
    };
    logits
        .axis_iter(Axis(0))
        .zip(y.axis_iter(Axis(0)))
        .filter(|(l, t)| argmax(*l) == argmax(*t))
        .count()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::Activation;
    use crate::penalty::prox;
    use ndarray::{array, Array1, Array2};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn standardized(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut x = Array2::from_shape_simple_fn((rows, cols), || StandardNormal.sample(&mut rng));
        for mut c in x.columns_mut() {
            let m = c.mean().unwrap();
            c -= m;
            let sd = c.std(1.0);
            c /= sd;
        }
        x
    }

    #[test]
    fn schedule_values() {
        let f = default_lambda_fractions(6);
        assert_eq!(f.len(), 7);
        for (got, want) in f.iter().zip([0.2689414213699951, 0.5, 0.7310585786300049, 0.8807970779778823, 0.9525741268224334, 0.9820137900379085, 1.0]) {
            assert!((got - want).abs() < 1e-15, "{got} vs {want}");
        }
        TrainConfig::default().validate().unwrap();
    }

    #[test]
    fn config_validation() {
        let mut c = TrainConfig::default();
        c.lambda_fractions.pop();
        assert!(c.validate().is_err());
        let mut c = TrainConfig::default();
        c.lambda_fractions.swap(0, 1);
        assert!(c.validate().is_err());
        let mut c = TrainConfig::default();
        c.nu_schedule[0] = 1.5;
        assert!(c.validate().is_err());
        let mut c = TrainConfig::default();
        *c.lambda_fractions.last_mut().unwrap() = 0.99;
        assert!(c.validate().is_err());
    }

    fn scalar_params(theta: f64) -> NetworkParams {
        NetworkParams {
            w1: array![[theta]],
            deep_weights: vec![],
            row_scales: vec![],
            biases: vec![],
            intercept: Array1::zeros(1),
        }
    }

    fn scalar_grad(g: f64) -> GradientBundle {
        GradientBundle {
            w1: array![[g]],
            deep_weights: vec![],
            biases: vec![],
            intercept: Array1::zeros(1),
            loss_value: 0.0,
        }
    }

    #[test]
    fn ista_step_from_zero_on_quadratic_is_the_prox() {
        let spec = solve_threshold(1.0, 0.1).unwrap();
        for y in [0.3, 0.9, 1.5, -4.0] {
            // f = (theta - y)^2 / 2 has gradient -y at theta = 0
            let next = ista_step(&scalar_params(0.0), &scalar_grad(-y), &spec, 1.0).unwrap();
            assert_eq!(next.w1[[0, 0]], prox(y, &spec, crate::penalty::PROX_TOL).unwrap());
        }
    }

    #[test]
    fn ista_step_fixed_points() {
        let spec = solve_threshold(0.5, 0.3).unwrap();
        let zero = ista_step(&scalar_params(0.0), &scalar_grad(0.0), &spec, 0.7).unwrap();
        assert_eq!(zero.w1[[0, 0]], 0.0);
        let big = ista_step(&scalar_params(5.0), &scalar_grad(0.0), &spec, 0.7).unwrap();
        let scaled = scaled_spec(&spec, 0.7).unwrap();
        assert_eq!(big.w1[[0, 0]], prox(5.0, &scaled, crate::penalty::PROX_TOL).unwrap());
        assert!(big.w1[[0, 0]] < 5.0);
    }

    #[test]
    fn line_search_accepts_small_step_immediately() {
        let spec = solve_threshold(0.1, 0.5).unwrap();
        let y = 2.0;
        let cost = |p: &NetworkParams| -> Result<f64> {
            let t = p.w1[[0, 0]];
            Ok(0.5 * (t - y) * (t - y) + spec.cost(&[t]))
        };
        let start = scalar_params(1.0);
        let c0 = cost(&start).unwrap();
        let out = line_search(cost, &start, &scalar_grad(1.0 - y), &spec, c0, 0.01).unwrap();
        assert_eq!(out.halvings, 0);
        assert!(out.progress);
        assert!(out.cost <= c0);
    }

    #[test]
    fn line_search_halves_large_steps() {
        let spec = solve_threshold(0.1, 0.5).unwrap();
        let cost = |p: &NetworkParams| -> Result<f64> {
            let t = p.w1[[0, 0]];
            Ok(50.0 * t * t + spec.cost(&[t]))
        };
        let start = scalar_params(1.0);
        let c0 = cost(&start).unwrap();
        let out = line_search(cost, &start, &scalar_grad(100.0), &spec, c0, 1.0).unwrap();
        assert!(out.halvings > 0);
        assert!(out.cost <= c0);
    }

    fn toy_regression(n: usize, p: usize, seed: u64) -> (Array2<f64>, Array2<f64>) {
        let x = standardized(n, p, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 1);
        let y = Array2::from_shape_fn((n, 1), |(i, _)| {
            let e: f64 = StandardNormal.sample(&mut rng);
            3.0 * x[[i, 0]] + e
        });
        (x, y)
    }

    #[test]
    fn linear_fit_recovers_a_strong_feature() {
        let (x, y) = toy_regression(60, 30, 1);
        let arch = Architecture::linear(30, 1).unwrap();
        let config = TrainConfig {
            seed: 2,
            ..TrainConfig::default()
        };
        let res = fit(x.view(), y.view(), &arch, &TaskSpec::regression(), &config).unwrap();
        assert_eq!(res.selected_features[0], 0);
        assert_eq!(res.arch.input_dim, res.selected_features.len());
        assert_eq!(res.phase_log.len(), 8);
        assert_eq!(res.status, FitStatus::Converged);
        assert!((res.params.w1[[0, 0]] - 3.0).abs() < 0.5);
    }

    #[test]
    fn empty_support_refits_to_the_null_constant() {
        let (x, y) = toy_regression(40, 10, 5);
        let arch = Architecture::new(10, vec![4], 1, Activation::ReLU).unwrap();
        let config = TrainConfig {
            lambda_override: Some(100.0),
            ..TrainConfig::default()
        };
        let res = fit(x.view(), y.view(), &arch, &TaskSpec::regression(), &config).unwrap();
        assert!(res.selected_features.is_empty());
        assert_eq!(res.arch.input_dim, 0);
        assert_eq!(res.params.intercept[0], y.mean_axis(Axis(0)).unwrap()[0]);
        assert_eq!(res.phase_log.last().unwrap().iterations, 0);
    }

    #[test]
    fn phases_chain_and_proximal_phase_is_monotone() {
        let (x, y) = toy_regression(50, 20, 3);
        let arch = Architecture::new(20, vec![6], 1, Activation::ReLU).unwrap();
        let task = TaskSpec::regression();
        let config = TrainConfig {
            seed: 4,
            ..TrainConfig::default()
        };
        let res = fit(x.view(), y.view(), &arch, &task, &config).unwrap();
        let prox_log = res
            .phase_log
            .iter()
            .find(|l| l.kind == PhaseKind::Proximal)
            .unwrap();
        let mut prev = prox_log.initial_cost;
        for &c in &prox_log.cost_trace {
            assert!(c <= prev + 1e-10);
            prev = c;
        }
        // warm phase i starts where phase i-1 stopped, re-evaluated under (lambda_i, nu_i)
        let lambda = res.lambda_qut;
        let mut params = init(&arch, derive_seed(config.seed, &[TAG_INIT]));
        let problem = Problem {
            x: x.view(),
            y: y.view(),
            arch: &arch,
            task: &task,
        };
        let mut rng = stream_rng(derive_seed(config.seed, &[TAG_INIT]), 1);
        for (i, (&f, &nu)) in config.lambda_fractions.iter().zip(&config.nu_schedule).enumerate() {
            let before = params.clone();
            let (log, _) = adam_phase(
                &problem,
                &mut params,
                Some((f * lambda, nu)),
                PhaseKind::Warm,
                config.warm_lr,
                config.warm_tol,
                config.max_iters_per_phase,
                &mut rng,
            )
            .unwrap();
            let expected = problem.loss(&before).unwrap()
                + f * lambda * before.w1.iter().map(|&t| crate::penalty::rho_value(t, nu)).sum::<f64>();
            assert!((log.initial_cost - expected).abs() < 1e-12);
            assert_eq!(log, res.phase_log[i]);
        }
    }

    #[test]
    fn fit_is_deterministic() {
        let (x, y) = toy_regression(40, 15, 5);
        let arch = Architecture::new(15, vec![5], 1, Activation::ReLU).unwrap();
        let config = TrainConfig {
            seed: 9,
            ..TrainConfig::default()
        };
        let a = fit(x.view(), y.view(), &arch, &TaskSpec::regression(), &config).unwrap();
        let b = fit(x.view(), y.view(), &arch, &TaskSpec::regression(), &config).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn refit_keeps_support_and_prediction_uses_it() {
        let (x, y) = toy_regression(60, 10, 7);
        let arch = Architecture::linear(10, 1).unwrap();
        let res = fit(x.view(), y.view(), &arch, &TaskSpec::regression(), &TrainConfig::default()).unwrap();
        assert_eq!(res.params.support(), (0..res.selected_features.len()).collect::<Vec<_>>());
        let mut shuffled = x.clone();
        for j in 0..10 {
            if !res.selected_features.contains(&j) {
                shuffled.column_mut(j).fill(123.0);
            }
        }
        assert_eq!(predict(&res, x.view()).unwrap(), predict(&res, shuffled.view()).unwrap());
    }

    #[test]
    fn classification_fit_runs() {
        let x = standardized(80, 8, 11);
        let mut y = Array2::zeros((80, 2));
        for i in 0..80 {
            y[[i, usize::from(x[[i, 2]] > 0.0)]] = 1.0;
        }
        let arch = Architecture::new(8, vec![5], 2, Activation::ReLU).unwrap();
        let task = TaskSpec::classification(2).unwrap();
        let res = fit(x.view(), y.view(), &arch, &task, &TrainConfig::default()).unwrap();
        assert!(res.selected_features.contains(&2));
        let logits = predict(&res, x.view()).unwrap();
        assert!(correct_predictions(logits.view(), y.view()) >= 70);
    }

    #[test]
    fn shape_errors() {
        let x = standardized(10, 3, 1);
        let y = Array2::zeros((9, 1));
        let arch = Architecture::linear(3, 1).unwrap();
        assert!(fit(x.view(), y.view(), &arch, &TaskSpec::regression(), &TrainConfig::default()).is_err());
    }
}
