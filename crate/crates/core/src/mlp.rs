//! Dense multi-layer perceptron: representation, activations and their
//! inverses, and batched forward evaluation with per-layer capture.
//!
//! Weight matrices are stored `(out, in)`: `weights[l]` has shape
//! `layer_sizes[l+1] x layer_sizes[l]`, so row `j` holds the weights *into*
//! neuron `j` of layer `l+1`. Code outside this module goes through
//! [`Mlp::incoming`] / [`Mlp::outgoing`] instead of indexing raw matrices.

use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::atomic::{AtomicU64, Ordering};

use ndarray::{Array1, Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Hidden-layer activation function.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Sigmoid,
    Tanh,
}

/// Output-layer nonlinearity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputActivation {
    Sigmoid,
    Identity,
}

/// Numerically stable logistic function.
pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Activation {
    /// Applies the activation. Total on all of `f64`.
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Sigmoid => sigmoid(x),
            Activation::Tanh => x.tanh(),
        }
    }

    /// Inverse activation.
    ///
    /// ReLU uses the piecewise pseudo-inverse (`y` for `y > 0`, else `0`),
    /// which is total. Sigmoid and tanh require `y` inside their open ranges.
    pub fn inverse(self, y: f64) -> Result<f64> {
        match self {
            Activation::Relu => Ok(if y > 0.0 { y } else { 0.0 }),
            Activation::Sigmoid => {
                if y > 0.0 && y < 1.0 {
                    Ok((y / (1.0 - y)).ln())
                } else {
                    Err(Error::ActivationDomain(format!(
                        "sigmoid inverse needs y in (0, 1), got {y}"
                    )))
                }
            }
            Activation::Tanh => {
                if y > -1.0 && y < 1.0 {
                    Ok(y.atanh())
                } else {
                    Err(Error::ActivationDomain(format!(
                        "tanh inverse needs y in (-1, 1), got {y}"
                    )))
                }
            }
        }
    }

    /// Derivative evaluated at the pre-activation `h`.
    ///
    /// For ReLU the derivative at the kink is taken as 0.
    pub fn derivative(self, h: f64) -> f64 {
        match self {
            Activation::Relu => {
                if h > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => {
                let s = sigmoid(h);
                s * (1.0 - s)
            }
            Activation::Tanh => {
                let t = h.tanh();
                1.0 - t * t
            }
        }
    }
}

impl OutputActivation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            OutputActivation::Sigmoid => sigmoid(x),
            OutputActivation::Identity => x,
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Activation::Relu => "relu",
            Activation::Sigmoid => "sigmoid",
            Activation::Tanh => "tanh",
        };
        f.write_str(s)
    }
}

impl FromStr for Activation {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Activation::Relu),
            "sigmoid" => Ok(Activation::Sigmoid),
            "tanh" => Ok(Activation::Tanh),
            other => Err(Error::Config(format!("unknown activation {other:?}"))),
        }
    }
}

impl fmt::Display for OutputActivation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            OutputActivation::Sigmoid => "sigmoid",
            OutputActivation::Identity => "identity",
        };
        f.write_str(s)
    }
}

impl FromStr for OutputActivation {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sigmoid" => Ok(OutputActivation::Sigmoid),
            "identity" => Ok(OutputActivation::Identity),
            other => Err(Error::Config(format!("unknown output activation {other:?}"))),
        }
    }
}

/// Dense feed-forward network.
#[derive(Debug)]
pub struct Mlp {
    layer_sizes: Vec<usize>,
    weights: Vec<Array2<f64>>,
    biases: Vec<Array1<f64>>,
    activation: Activation,
    output_activation: OutputActivation,
    /// Counts full-layer activation computations over a batch. Relaxed
    /// atomic so `&Mlp` stays shareable across threads.
    layer_ops: AtomicU64,
}

impl Clone for Mlp {
    fn clone(&self) -> Self {
        Mlp {
            layer_sizes: self.layer_sizes.clone(),
            weights: self.weights.clone(),
            biases: self.biases.clone(),
            activation: self.activation,
            output_activation: self.output_activation,
            layer_ops: AtomicU64::new(self.layer_ops.load(Ordering::Relaxed)),
        }
    }
}

impl PartialEq for Mlp {
    /// Parameter equality; the op counter is bookkeeping, not state.
    fn eq(&self, other: &Self) -> bool {
        self.layer_sizes == other.layer_sizes
            && self.weights == other.weights
            && self.biases == other.biases
            && self.activation == other.activation
            && self.output_activation == other.output_activation
    }
}

impl Mlp {
    pub fn new(
        layer_sizes: Vec<usize>,
        weights: Vec<Array2<f64>>,
        biases: Vec<Array1<f64>>,
        activation: Activation,
        output_activation: OutputActivation,
    ) -> Result<Self> {
        if layer_sizes.len() < 3 {
            return Err(Error::Dimension(format!(
                "need at least one hidden layer, got layer_sizes {layer_sizes:?}"
            )));
        }
        if layer_sizes.iter().any(|&s| s == 0) {
            return Err(Error::Dimension("layer sizes must be positive".into()));
        }
        if weights.len() != layer_sizes.len() - 1 || biases.len() != layer_sizes.len() - 1 {
            return Err(Error::Dimension(format!(
                "expected {} weight matrices and bias vectors, got {} and {}",
                layer_sizes.len() - 1,
                weights.len(),
                biases.len()
            )));
        }
        for l in 0..weights.len() {
            let (rows, cols) = weights[l].dim();
            if rows != layer_sizes[l + 1] || cols != layer_sizes[l] {
                return Err(Error::Dimension(format!(
                    "weights[{l}] is {rows}x{cols}, expected {}x{}",
                    layer_sizes[l + 1],
                    layer_sizes[l]
                )));
            }
            if biases[l].len() != layer_sizes[l + 1] {
                return Err(Error::Dimension(format!(
                    "biases[{l}] has length {}, expected {}",
                    biases[l].len(),
                    layer_sizes[l + 1]
                )));
            }
        }
        Ok(Mlp {
            layer_sizes,
            weights,
            biases,
            activation,
            output_activation,
            layer_ops: AtomicU64::new(0),
        })
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    /// Number of hidden layers.
    pub fn depth(&self) -> usize {
        self.layer_sizes.len() - 2
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn output_activation(&self) -> OutputActivation {
        self.output_activation
    }

    pub fn weights(&self) -> &[Array2<f64>] {
        &self.weights
    }

    pub fn biases(&self) -> &[Array1<f64>] {
        &self.biases
    }

    /// Weights into neuron `j` of layer `l+1` (row `j` of `weights[l]`).
    pub fn incoming(&self, l: usize, j: usize) -> ArrayView1<'_, f64> {
        self.weights[l].row(j)
    }

    /// Weights out of neuron `i` of layer `l` (column `i` of `weights[l]`).
    pub fn outgoing(&self, l: usize, i: usize) -> ArrayView1<'_, f64> {
        self.weights[l].column(i)
    }

    #[cfg_attr(not(test), allow(dead_code))]
    pub(crate) fn weights_mut(&mut self) -> &mut [Array2<f64>] {
        &mut self.weights
    }

    #[cfg_attr(not(test), allow(dead_code))]
    pub(crate) fn biases_mut(&mut self) -> &mut [Array1<f64>] {
        &mut self.biases
    }

    /// `param -= lr * gradient` over every weight and bias.
    pub(crate) fn sgd_step(&mut self, grads: &crate::train::Gradients, lr: f64) {
        for (w, dw) in self.weights.iter_mut().zip(&grads.d_weights) {
            w.zip_mut_with(dw, |v, g| *v -= lr * g);
        }
        for (b, db) in self.biases.iter_mut().zip(&grads.d_biases) {
            b.zip_mut_with(db, |v, g| *v -= lr * g);
        }
    }

    /// Full-layer activation computations performed through this model so far.
    pub fn layer_ops(&self) -> u64 {
        self.layer_ops.load(Ordering::Relaxed)
    }

    pub(crate) fn note_layer_ops(&self, n: u64) {
        self.layer_ops.fetch_add(n, Ordering::Relaxed);
    }

    pub(crate) fn check_batch(&self, x: &Array2<f64>) -> Result<()> {
        if x.nrows() == 0 {
            return Err(Error::Invalid("empty input batch".into()));
        }
        if x.ncols() != self.input_dim() {
            return Err(Error::Dimension(format!(
                "input has {} columns, model expects {}",
                x.ncols(),
                self.input_dim()
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Invalid("input contains non-finite values".into()));
        }
        Ok(())
    }

    /// Runs the full forward pass, capturing every pre- and post-activation.
    ///
    /// Adds `d + 1` to the layer-op counter (one per affine layer).
    pub fn forward_collect(&self, x: &Array2<f64>) -> Result<ActivationStack> {
        self.check_batch(x)?;
        let d = self.depth();
        let mut pre = Vec::with_capacity(d + 1);
        let mut post = Vec::with_capacity(d + 2);
        post.push(x.clone());
        for l in 0..=d {
            let h = affine(post.last().unwrap(), &self.weights[l], &self.biases[l]);
            let o = if l < d {
                h.mapv(|v| self.activation.apply(v))
            } else {
                h.mapv(|v| self.output_activation.apply(v))
            };
            pre.push(h);
            post.push(o);
        }
        self.note_layer_ops(d as u64 + 1);
        Ok(ActivationStack { pre, post })
    }

    /// Post-activations of the hidden layers only (`d` layer ops).
    pub fn hidden_post_activations(&self, x: &Array2<f64>) -> Result<Vec<Array2<f64>>> {
        self.check_batch(x)?;
        let d = self.depth();
        let mut acts = Vec::with_capacity(d);
        let mut cur = x.clone();
        for l in 0..d {
            let h = affine(&cur, &self.weights[l], &self.biases[l]);
            cur = h.mapv(|v| self.activation.apply(v));
            acts.push(cur.clone());
        }
        self.note_layer_ops(d as u64);
        Ok(acts)
    }

    /// Output-layer activations only.
    pub fn predict(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        let stack = self.forward_collect(x)?;
        Ok(stack.post.into_iter().last().unwrap())
    }
}

/// Captured activations of one forward pass over a batch of `n` samples.
///
/// `post(0)` is the input itself; `post(l)` for `1 <= l <= d+1` are the
/// layer outputs; `pre(l)` for `0 <= l <= d` is the pre-activation feeding
/// layer `l + 1`.
#[derive(Debug, Clone)]
pub struct ActivationStack {
    pre: Vec<Array2<f64>>,
    post: Vec<Array2<f64>>,
}

impl ActivationStack {
    pub fn pre(&self, l: usize) -> &Array2<f64> {
        &self.pre[l]
    }

    pub fn post(&self, l: usize) -> &Array2<f64> {
        &self.post[l]
    }

    /// Output-layer activations.
    pub fn output(&self) -> &Array2<f64> {
        self.post.last().unwrap()
    }

    pub fn batch_size(&self) -> usize {
        self.post[0].nrows()
    }

    pub fn num_pre(&self) -> usize {
        self.pre.len()
    }
}

/// `x (n x in) * w^T (in x out) + b`, computed row by row with a fixed
/// 4-lane accumulation order. Each output row depends only on its own input
/// row, so batched and single-row evaluation agree bit for bit.
pub(crate) fn affine(x: &Array2<f64>, w: &Array2<f64>, b: &Array1<f64>) -> Array2<f64> {
    let n = x.nrows();
    let out_dim = w.nrows();
    let mut result = Array2::zeros((n, out_dim));
    for (x_row, mut out_row) in x.rows().into_iter().zip(result.rows_mut()) {
        for (j, out) in out_row.iter_mut().enumerate() {
            *out = dot_view(&x_row, &w.row(j)) + b[j];
        }
    }
    result
}

fn dot_view(a: &ArrayView1<f64>, b: &ArrayView1<f64>) -> f64 {
    match (a.as_slice(), b.as_slice()) {
        (Some(x), Some(y)) => dot_slices(x, y),
        _ => a.iter().zip(b.iter()).map(|(p, q)| p * q).sum(),
    }
}

fn dot_slices(x: &[f64], y: &[f64]) -> f64 {
    debug_assert_eq!(x.len(), y.len());
    let n = x.len();
    let mut acc = [0.0f64; 4];
    let chunks = n / 4;
    for c in 0..chunks {
        let i = c * 4;
        acc[0] += x[i] * y[i];
        acc[1] += x[i + 1] * y[i + 1];
        acc[2] += x[i + 2] * y[i + 2];
        acc[3] += x[i + 3] * y[i + 3];
    }
    let mut tail = 0.0;
    for i in chunks * 4..n {
        tail += x[i] * y[i];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// On-disk model schema.
#[derive(Serialize, Deserialize)]
struct ModelFile {
    layer_sizes: Vec<usize>,
    activation: Activation,
    output_activation: OutputActivation,
    weights: Vec<Vec<Vec<f64>>>,
    biases: Vec<Vec<f64>>,
}

impl Mlp {
    pub fn to_json(&self) -> Result<String> {
        let file = ModelFile {
            layer_sizes: self.layer_sizes.clone(),
            activation: self.activation,
            output_activation: self.output_activation,
            weights: self
                .weights
                .iter()
                .map(|w| w.rows().into_iter().map(|r| r.to_vec()).collect())
                .collect(),
            biases: self.biases.iter().map(|b| b.to_vec()).collect(),
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    pub fn from_json(json: &str) -> Result<Self> {
        let file: ModelFile = serde_json::from_str(json)?;
        let mut weights = Vec::with_capacity(file.weights.len());
        for (l, rows) in file.weights.iter().enumerate() {
            let nrows = rows.len();
            let ncols = rows.first().map_or(0, |r| r.len());
            if rows.iter().any(|r| r.len() != ncols) {
                return Err(Error::Dimension(format!("weights[{l}] rows have uneven lengths")));
            }
            let flat: Vec<f64> = rows.iter().flatten().copied().collect();
            let arr = Array2::from_shape_vec((nrows, ncols), flat)
                .map_err(|e| Error::Dimension(format!("weights[{l}]: {e}")))?;
            weights.push(arr);
        }
        let biases = file.biases.into_iter().map(Array1::from_vec).collect();
        Mlp::new(
            file.layer_sizes,
            weights,
            biases,
            file.activation,
            file.output_activation,
        )
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()?)
            .map_err(|e| Error::io(path.display().to_string(), e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        Mlp::from_json(&text)
    }
}
