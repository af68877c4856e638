//! Feature-selection-compatible MLPs and the linear model as their
//! zero-hidden-layer special case.
//!
//! Only the first weight matrix `w1` is penalised. Every deeper weight
//! matrix enters the forward pass row-normalised, so small first-layer
//! weights cannot be compensated by large weights further down. The
//! normalisation is part of the model and is differentiated through.
//!
//! Each deep layer also carries a fixed, non-trainable per-row scale
//! (all ones after [`init`]). It is only changed by [`prune`], which uses it
//! to remove dead first-layer neurons without changing the network output.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::{loss, loss_and_gradient, TaskSpec};

pub const LEAKY_RELU_SLOPE: f64 = 0.01;

/// Current version of the serialised model document.
pub const MODEL_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[serde(rename = "relu")]
    ReLU,
    #[serde(rename = "leaky_relu")]
    LeakyReLU,
    Softplus,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::ReLU => x.max(0.0),
            Activation::LeakyReLU => {
                if x > 0.0 {
                    x
                } else {
                    LEAKY_RELU_SLOPE * x
                }
            }
            Activation::Softplus => {
                if x > 0.0 {
                    x + (-x).exp().ln_1p()
                } else {
                    x.exp().ln_1p()
                }
            }
        }
    }

    /// Derivative; the kink of (leaky) ReLU at zero takes the left slope.
    #[inline]
    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::ReLU => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::LeakyReLU => {
                if x > 0.0 {
                    1.0
                } else {
                    LEAKY_RELU_SLOPE
                }
            }
            Activation::Softplus => 1.0 / (1.0 + (-x).exp()),
        }
    }

    /// `sup_t |sigma'(t)|`.
    pub fn derivative_bound(self) -> f64 {
        1.0
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::ReLU => "relu",
            Activation::LeakyReLU => "leaky_relu",
            Activation::Softplus => "softplus",
        }
    }
}

impl std::str::FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "relu" => Ok(Activation::ReLU),
            "leaky_relu" | "leakyrelu" => Ok(Activation::LeakyReLU),
            "softplus" => Ok(Activation::Softplus),
            other => Err(Error::Domain(format!("unknown activation {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub input_dim: usize,
    pub hidden_widths: Vec<usize>,
    pub output_dim: usize,
    pub activation: Activation,
}

impl Architecture {
    pub fn new(
        input_dim: usize,
        hidden_widths: Vec<usize>,
        output_dim: usize,
        activation: Activation,
    ) -> Result<Self> {
        if input_dim == 0 || output_dim == 0 || hidden_widths.contains(&0) {
            return Err(Error::Domain(format!(
                "layer widths must be positive: input {input_dim}, hidden {hidden_widths:?}, output {output_dim}"
            )));
        }
        Ok(Architecture {
            input_dim,
            hidden_widths,
            output_dim,
            activation,
        })
    }

    pub fn linear(input_dim: usize, output_dim: usize) -> Result<Self> {
        Self::new(input_dim, Vec::new(), output_dim, Activation::ReLU)
    }

    pub fn is_linear(&self) -> bool {
        self.hidden_widths.is_empty()
    }

    /// Number of weight layers `L`.
    pub fn depth(&self) -> usize {
        self.hidden_widths.len() + 1
    }

    /// `[p_1, p_2, ..., p_L, m]`.
    pub fn layer_dims(&self) -> Vec<usize> {
        let mut dims = Vec::with_capacity(self.hidden_widths.len() + 2);
        dims.push(self.input_dim);
        dims.extend_from_slice(&self.hidden_widths);
        dims.push(self.output_dim);
        dims
    }

    /// `sum_k p_{k+1} (p_k + 1)`.
    pub fn parameter_count(&self) -> usize {
        self.layer_dims().windows(2).map(|w| w[1] * (w[0] + 1)).sum()
    }

    /// Same architecture on a different number of inputs.
    pub fn with_input_dim(&self, input_dim: usize) -> Self {
        Architecture {
            input_dim,
            ..self.clone()
        }
    }
}

/// Parameters split into the penalised block `w1` and everything else.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    /// `p_2 x p_1` (or `m x p` for the linear model).
    pub w1: Array2<f64>,
    /// `W_2 ... W_L`, stored unnormalised.
    pub deep_weights: Vec<Array2<f64>>,
    /// Fixed per-row scale of each deep layer; ones unless the net was pruned.
    pub row_scales: Vec<Array1<f64>>,
    /// `b_1 ... b_{L-1}`.
    pub biases: Vec<Array1<f64>>,
    /// Output intercept `c`.
    pub intercept: Array1<f64>,
}

/// Gradient of the loss with respect to every trainable block.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientBundle {
    pub w1: Array2<f64>,
    pub deep_weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
    pub intercept: Array1<f64>,
    pub loss_value: f64,
}

impl NetworkParams {
    /// Trainable blocks in a fixed order: `w1`, deep weights, biases, intercept.
    pub fn blocks_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::with_capacity(2 + 2 * self.deep_weights.len());
        out.push(self.w1.as_slice_mut().expect("standard layout"));
        out.extend(
            self.deep_weights
                .iter_mut()
                .map(|w| w.as_slice_mut().expect("standard layout")),
        );
        out.extend(
            self.biases
                .iter_mut()
                .map(|b| b.as_slice_mut().expect("standard layout")),
        );
        out.push(self.intercept.as_slice_mut().expect("standard layout"));
        out
    }

    pub fn trainable_count(&self) -> usize {
        self.w1.len()
            + self.deep_weights.iter().map(|w| w.len()).sum::<usize>()
            + self.biases.iter().map(|b| b.len()).sum::<usize>()
            + self.intercept.len()
    }

    /// Indices of nonzero columns of `w1`.
    pub fn support(&self) -> Vec<usize> {
        self.w1
            .columns()
            .into_iter()
            .enumerate()
            .filter(|(_, c)| c.iter().any(|&v| v != 0.0))
            .map(|(j, _)| j)
            .collect()
    }

    /// Checks that the blocks have the shapes `arch` requires.
    pub fn check(&self, arch: &Architecture) -> Result<()> {
        let dims = arch.layer_dims();
        let bad = |what: &str| Err(Error::Shape(format!("{what} does not match {arch:?}")));
        if self.w1.dim() != (dims[1], dims[0]) {
            return bad("w1");
        }
        let deep = dims.len() - 2;
        if self.deep_weights.len() != deep || self.row_scales.len() != deep || self.biases.len() != deep
        {
            return bad("layer count");
        }
        for l in 0..deep {
            if self.deep_weights[l].dim() != (dims[l + 2], dims[l + 1])
                || self.row_scales[l].len() != dims[l + 2]
                || self.biases[l].len() != dims[l + 1]
            {
                return bad("deep layer");
            }
        }
        if self.intercept.len() != arch.output_dim {
            return bad("intercept");
        }
        Ok(())
    }
}

impl GradientBundle {
    pub fn blocks(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::with_capacity(2 + 2 * self.deep_weights.len());
        out.push(self.w1.as_slice().expect("standard layout"));
        out.extend(self.deep_weights.iter().map(|w| w.as_slice().expect("standard layout")));
        out.extend(self.biases.iter().map(|b| b.as_slice().expect("standard layout")));
        out.push(self.intercept.as_slice().expect("standard layout"));
        out
    }

    /// Largest absolute entry of the `w1` block.
    pub fn w1_max_abs(&self) -> f64 {
        self.w1.iter().fold(0.0, |a, &v| a.max(v.abs()))
    }
}

/// Deterministic initialisation: `w1 ~ U(-1/sqrt(p), 1/sqrt(p))`, deep rows
/// `U(-1/sqrt(fan_in), 1/sqrt(fan_in))` redrawn until nonzero, zero biases
/// and intercept.
pub fn init(arch: &Architecture, seed: u64) -> NetworkParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dims = arch.layer_dims();
    let bound = 1.0 / (dims[0].max(1) as f64).sqrt();
    let w1 = Array2::from_shape_fn((dims[1], dims[0]), |_| rng.random_range(-bound..bound));

    let mut deep_weights = Vec::new();
    let mut row_scales = Vec::new();
    let mut biases = Vec::new();
    for l in 1..dims.len() - 1 {
        let (fan_in, fan_out) = (dims[l], dims[l + 1]);
        let mut w = Array2::zeros((fan_out, fan_in));
        for mut row in w.rows_mut() {
            fill_nonzero_row(row.as_slice_mut().expect("row"), &mut rng);
        }
        deep_weights.push(w);
        row_scales.push(Array1::ones(fan_out));
        biases.push(Array1::zeros(fan_in));
    }
    NetworkParams {
        w1,
        deep_weights,
        row_scales,
        biases,
        intercept: Array1::zeros(arch.output_dim),
    }
}

pub(crate) fn fill_nonzero_row<R: Rng>(row: &mut [f64], rng: &mut R) {
    let bound = 1.0 / (row.len() as f64).sqrt();
    loop {
        for v in row.iter_mut() {
            *v = rng.random_range(-bound..bound);
        }
        if row.iter().any(|&v| v != 0.0) {
            return;
        }
    }
}

/// Deep weights as used by the forward pass: each row divided by its norm
/// and multiplied by its fixed scale. A zero row stays zero.
fn effective_weights(w: &Array2<f64>, scales: &Array1<f64>) -> (Array2<f64>, Array1<f64>) {
    let norms = w.map_axis(Axis(1), |r| r.dot(&r).sqrt());
    let mut eff = w.clone();
    for ((mut row, &n), &g) in eff.rows_mut().into_iter().zip(norms.iter()).zip(scales.iter()) {
        if n > 0.0 {
            row *= g / n;
        }
    }
    (eff, norms)
}

struct ForwardCache {
    /// Pre-activations of each hidden layer.
    pre: Vec<Array2<f64>>,
    /// Activations of each hidden layer.
    post: Vec<Array2<f64>>,
    effective: Vec<Array2<f64>>,
    norms: Vec<Array1<f64>>,
    output: Array2<f64>,
}

fn check_input(arch: &Architecture, x: ArrayView2<f64>) -> Result<()> {
    if x.ncols() != arch.input_dim {
        return Err(Error::Shape(format!(
            "input has {} columns, network expects {}",
            x.ncols(),
            arch.input_dim
        )));
    }
    Ok(())
}

fn forward_cached(params: &NetworkParams, arch: &Architecture, x: ArrayView2<f64>) -> ForwardCache {
    let act = arch.activation;
    let mut pre = Vec::with_capacity(arch.hidden_widths.len());
    let mut post = Vec::with_capacity(arch.hidden_widths.len());
    let mut effective = Vec::with_capacity(params.deep_weights.len());
    let mut norms = Vec::with_capacity(params.deep_weights.len());

    let mut z = x.dot(&params.w1.t());
    if arch.is_linear() {
        z += &params.intercept;
        return ForwardCache {
            pre,
            post,
            effective,
            norms,
            output: z,
        };
    }
    z += &params.biases[0];
    let mut h = z.mapv(|v| act.apply(v));
    pre.push(z);

    let deep = params.deep_weights.len();
    for l in 0..deep {
        let (eff, n) = effective_weights(&params.deep_weights[l], &params.row_scales[l]);
        let mut z = h.dot(&eff.t());
        effective.push(eff);
        norms.push(n);
        post.push(h);
        if l + 1 == deep {
            z += &params.intercept;
            return ForwardCache {
                pre,
                post,
                effective,
                norms,
                output: z,
            };
        }
        z += &params.biases[l + 1];
        h = z.mapv(|v| act.apply(v));
        pre.push(z);
    }
    unreachable!("a network with hidden layers has at least one deep weight matrix")
}

/// Network outputs for each row of `x` (`n x m`, no output nonlinearity).
pub fn forward(params: &NetworkParams, arch: &Architecture, x: ArrayView2<f64>) -> Result<Array2<f64>> {
    check_input(arch, x)?;
    params.check(arch)?;
    Ok(forward_cached(params, arch, x).output)
}

/// Loss of the network on `(x, y)` without computing gradients.
pub fn loss_value(
    params: &NetworkParams,
    arch: &Architecture,
    task: &TaskSpec,
    x: ArrayView2<f64>,
    y: ArrayView2<f64>,
) -> Result<f64> {
    check_input(arch, x)?;
    let out = forward_cached(params, arch, x).output;
    loss(task, out.view(), y)
}

/// Exact gradient of the loss with respect to every trainable parameter,
/// including through the row normalisation of the deep weights.
pub fn gradient(
    params: &NetworkParams,
    arch: &Architecture,
    task: &TaskSpec,
    x: ArrayView2<f64>,
    y: ArrayView2<f64>,
) -> Result<GradientBundle> {
    check_input(arch, x)?;
    if y.nrows() != x.nrows() {
        return Err(Error::Shape(format!(
            "{} input rows but {} target rows",
            x.nrows(),
            y.nrows()
        )));
    }
    let cache = forward_cached(params, arch, x);
    let (loss_value, g_out) = loss_and_gradient(task, cache.output.view(), y)?;
    let intercept = g_out.sum_axis(Axis(0));

    if arch.is_linear() {
        return Ok(GradientBundle {
            w1: standard_layout(g_out.t().dot(&x)),
            deep_weights: Vec::new(),
            biases: Vec::new(),
            intercept,
            loss_value,
        });
    }

    let act = arch.activation;
    let deep = params.deep_weights.len();
    let mut deep_grads = vec![Array2::zeros((0, 0)); deep];
    let mut bias_grads = vec![Array1::zeros(0); deep];

    // gradient with respect to the output of deep layer l (pre-activation of the next)
    let mut g = g_out;
    for l in (0..deep).rev() {
        let h_in = &cache.post[l];
        let g_eff = g.t().dot(h_in);
        deep_grads[l] = normalisation_backward(
            &params.deep_weights[l],
            &cache.norms[l],
            &params.row_scales[l],
            &g_eff,
        );
        let mut g_h = g.dot(&cache.effective[l]);
        g_h.zip_mut_with(&cache.pre[l], |gh, &z| *gh *= act.derivative(z));
        bias_grads[l] = g_h.sum_axis(Axis(0));
        g = g_h;
    }
    let w1 = standard_layout(g.t().dot(&x));

    Ok(GradientBundle {
        w1,
        deep_weights: deep_grads,
        biases: bias_grads,
        intercept,
        loss_value,
    })
}

/// Chain rule through `E_j = s_j w_j / ||w_j||` for every row `j`.
fn normalisation_backward(
    w: &Array2<f64>,
    norms: &Array1<f64>,
    scales: &Array1<f64>,
    g_eff: &Array2<f64>,
) -> Array2<f64> {
    let mut out = Array2::zeros(w.dim());
    for (j, mut row) in out.rows_mut().into_iter().enumerate() {
        let n = norms[j];
        if n == 0.0 {
            continue;
        }
        let wj = w.row(j);
        let gj = g_eff.row(j);
        let proj = wj.dot(&gj) / (n * n);
        let factor = scales[j] / n;
        for ((o, &wv), &gv) in row.iter_mut().zip(wj.iter()).zip(gj.iter()) {
            *o = factor * (gv - proj * wv);
        }
    }
    out
}

/// Removes unselected features (zero columns of `w1`) and dead first-layer
/// neurons (zero rows of `w1`).
///
/// A dead neuron still emits the constant `sigma(b_i)`; its contribution is
/// folded into the next layer's bias (or the intercept), and the next
/// layer's effective rows are preserved through the fixed row scales, so the
/// pruned network computes exactly the same function of the kept features.
/// When no feature survives, the result is a linear network with zero inputs
/// that outputs the constant.
pub fn prune(params: &NetworkParams, arch: &Architecture) -> (NetworkParams, Architecture, Vec<usize>) {
    let features = params.support();

    if features.is_empty() {
        let probe = Array2::zeros((1, arch.input_dim));
        let constant = forward_cached(params, arch, probe.view()).output.row(0).to_owned();
        let null_arch = Architecture {
            input_dim: 0,
            hidden_widths: Vec::new(),
            output_dim: arch.output_dim,
            activation: arch.activation,
        };
        let null_params = NetworkParams {
            w1: Array2::zeros((arch.output_dim, 0)),
            deep_weights: Vec::new(),
            row_scales: Vec::new(),
            biases: Vec::new(),
            intercept: constant,
        };
        return (null_params, null_arch, features);
    }

    let mut pruned = params.clone();
    pruned.w1 = standard_layout(params.w1.select(Axis(1), &features));

    if !arch.is_linear() {
        let alive: Vec<usize> = params
            .w1
            .rows()
            .into_iter()
            .enumerate()
            .filter(|(_, r)| r.iter().any(|&v| v != 0.0))
            .map(|(i, _)| i)
            .collect();
        if alive.len() < params.w1.nrows() {
            let act = arch.activation;
            let (eff, _) = effective_weights(&params.deep_weights[0], &params.row_scales[0]);
            let mut shift = Array1::<f64>::zeros(eff.nrows());
            for i in 0..params.w1.nrows() {
                if !alive.contains(&i) {
                    let h = act.apply(params.biases[0][i]);
                    shift.scaled_add(h, &eff.column(i));
                }
            }
            if params.deep_weights.len() == 1 {
                pruned.intercept = &params.intercept + &shift;
            } else {
                pruned.biases[1] = &params.biases[1] + &shift;
            }

            let kept = standard_layout(eff.select(Axis(1), &alive));
            // a row that only read dead neurons keeps a unit direction and a zero scale
            let scales = kept.map_axis(Axis(1), |r| r.dot(&r).sqrt());
            let mut w2 = kept;
            for (mut row, &s) in w2.rows_mut().into_iter().zip(scales.iter()) {
                if s == 0.0 {
                    row.fill(0.0);
                    row[0] = 1.0;
                }
            }
            pruned.deep_weights[0] = w2;
            pruned.row_scales[0] = scales;
            pruned.w1 = standard_layout(pruned.w1.select(Axis(0), &alive));
            pruned.biases[0] = params.biases[0].select(Axis(0), &alive);
        }
    }

    let mut pruned_arch = arch.with_input_dim(features.len());
    if !arch.is_linear() {
        pruned_arch.hidden_widths[0] = pruned.w1.nrows();
    }
    (pruned, pruned_arch, features)
}

fn standard_layout(a: Array2<f64>) -> Array2<f64> {
    if a.is_standard_layout() {
        a
    } else {
        a.as_standard_layout().into_owned()
    }
}

/// Row-major matrix as stored in model documents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixDoc {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl MatrixDoc {
    fn from_array(a: &Array2<f64>) -> Self {
        MatrixDoc {
            rows: a.nrows(),
            cols: a.ncols(),
            data: a.iter().copied().collect(),
        }
    }

    fn to_array(&self) -> Result<Array2<f64>> {
        Array2::from_shape_vec((self.rows, self.cols), self.data.clone())
            .map_err(|e| Error::Data(format!("bad matrix in model document: {e}")))
    }
}

/// Versioned, self-describing serialisation of a network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelDocument {
    pub schema_version: u32,
    pub input_dim: usize,
    pub hidden_widths: Vec<usize>,
    pub output_dim: usize,
    pub activation: Activation,
    pub w1: MatrixDoc,
    pub deep_weights: Vec<MatrixDoc>,
    pub row_scales: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
    pub intercept: Vec<f64>,
    /// Indices of the original inputs feeding `w1`, in column order.
    pub selected_features: Vec<usize>,
}

impl ModelDocument {
    pub fn new(params: &NetworkParams, arch: &Architecture, selected_features: &[usize]) -> Self {
        ModelDocument {
            schema_version: MODEL_SCHEMA_VERSION,
            input_dim: arch.input_dim,
            hidden_widths: arch.hidden_widths.clone(),
            output_dim: arch.output_dim,
            activation: arch.activation,
            w1: MatrixDoc::from_array(&params.w1),
            deep_weights: params.deep_weights.iter().map(MatrixDoc::from_array).collect(),
            row_scales: params.row_scales.iter().map(|s| s.to_vec()).collect(),
            biases: params.biases.iter().map(|b| b.to_vec()).collect(),
            intercept: params.intercept.to_vec(),
            selected_features: selected_features.to_vec(),
        }
    }

    pub fn into_parts(&self) -> Result<(NetworkParams, Architecture, Vec<usize>)> {
        if self.schema_version != MODEL_SCHEMA_VERSION {
            return Err(Error::Data(format!(
                "unsupported model schema version {}",
                self.schema_version
            )));
        }
        let arch = Architecture {
            input_dim: self.input_dim,
            hidden_widths: self.hidden_widths.clone(),
            output_dim: self.output_dim,
            activation: self.activation,
        };
        let params = NetworkParams {
            w1: self.w1.to_array()?,
            deep_weights: self
                .deep_weights
                .iter()
                .map(MatrixDoc::to_array)
                .collect::<Result<_>>()?,
            row_scales: self.row_scales.iter().map(|s| Array1::from(s.clone())).collect(),
            biases: self.biases.iter().map(|b| Array1::from(b.clone())).collect(),
            intercept: Array1::from(self.intercept.clone()),
        };
        params.check(&arch)?;
        if self.selected_features.len() != arch.input_dim {
            return Err(Error::Data(
                "selected feature list does not match the input dimension".into(),
            ));
        }
        Ok((params, arch, self.selected_features.clone()))
    }
}

/// Sets every entry of `w1` to zero, turning the network into a null model.
pub fn zero_w1(params: &mut NetworkParams) {
    params.w1.fill(0.0);
}

/// Sub-matrix of `x` restricted to `columns`.
pub fn select_columns(x: ArrayView2<f64>, columns: &[usize]) -> Array2<f64> {
    if columns.is_empty() {
        return Array2::zeros((x.nrows(), 0));
    }
    x.select(Axis(1), columns)
}
