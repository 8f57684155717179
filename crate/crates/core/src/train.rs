//! Mini-batch SGD training of an [`Mlp`] on a binary-classification dataset.
//!
//! The output layer is sigmoid and the loss is binary cross-entropy, so the
//! output-layer error term is simply `o - y`. Hidden error terms are the
//! weighted backward aggregation of successor terms times the activation
//! derivative at the stored pre-activation.

use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::mlp::{Activation, ActivationStack, Mlp, OutputActivation};
use crate::rng::SplitMix64;

/// Weight initialization scheme.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Init {
    /// Gaussian with variance `2 / fan_in`.
    He,
    /// Gaussian with variance `2 / (fan_in + fan_out)`.
    Xavier,
    /// Standard gaussian.
    Gaussian,
}

/// Loss function. Binary cross-entropy is the only supported choice.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Loss {
    Bce,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub hidden_layers: usize,
    pub hidden_width: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub init: Init,
    pub loss: Loss,
    pub activation: Activation,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            hidden_layers: 5,
            hidden_width: 100,
            epochs: 100,
            batch_size: 32,
            learning_rate: 0.05,
            seed: 0,
            init: Init::He,
            loss: Loss::Bce,
            activation: Activation::Relu,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden_layers < 1 {
            return Err(Error::Config("hidden_layers must be >= 1".into()));
        }
        if self.hidden_width < 1 {
            return Err(Error::Config("hidden_width must be >= 1".into()));
        }
        if self.batch_size < 1 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config(format!(
                "learning_rate must be > 0, got {}",
                self.learning_rate
            )));
        }
        Ok(())
    }
}

/// Builds a fresh network for the given dimensions. Biases start at zero;
/// weights are drawn row by row from a [`SplitMix64`] stream seeded with
/// `config.seed`, scaled per the chosen initialization.
pub fn init_mlp(config: &TrainConfig, input_dim: usize, output_dim: usize) -> Result<Mlp> {
    config.validate()?;
    if input_dim < 1 || output_dim < 1 {
        return Err(Error::Config("input and output dims must be >= 1".into()));
    }
    let mut sizes = Vec::with_capacity(config.hidden_layers + 2);
    sizes.push(input_dim);
    sizes.extend(std::iter::repeat(config.hidden_width).take(config.hidden_layers));
    sizes.push(output_dim);

    let mut rng = SplitMix64::new(config.seed);
    let mut weights = Vec::with_capacity(sizes.len() - 1);
    let mut biases = Vec::with_capacity(sizes.len() - 1);
    for l in 0..sizes.len() - 1 {
        let (fan_in, fan_out) = (sizes[l] as f64, sizes[l + 1] as f64);
        let std = match config.init {
            Init::He => (2.0 / fan_in).sqrt(),
            Init::Xavier => (2.0 / (fan_in + fan_out)).sqrt(),
            Init::Gaussian => 1.0,
        };
        let w = Array2::from_shape_fn((sizes[l + 1], sizes[l]), |_| std * rng.next_gaussian());
        weights.push(w);
        biases.push(Array1::zeros(sizes[l + 1]));
    }
    Mlp::new(
        sizes,
        weights,
        biases,
        config.activation,
        OutputActivation::Sigmoid,
    )
}

/// Parameter gradients, shaped like the model's weights and biases.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub d_weights: Vec<Array2<f64>>,
    pub d_biases: Vec<Array1<f64>>,
}

/// Batch-averaged binary cross-entropy. Outputs are clamped away from 0 and
/// 1 so a saturated sigmoid cannot produce infinities here.
pub fn bce_loss(outputs: &Array2<f64>, labels: &Array1<f64>) -> f64 {
    let n = outputs.nrows();
    let mut total = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        let o = outputs[[i, 0]].clamp(1e-12, 1.0 - 1e-12);
        total -= y * o.ln() + (1.0 - y) * (1.0 - o).ln();
    }
    total / n as f64
}

/// Fraction of rows where `output >= 0.5` matches the label.
pub fn accuracy(outputs: &Array2<f64>, labels: &Array1<f64>) -> f64 {
    let n = outputs.nrows();
    let hits = labels
        .iter()
        .enumerate()
        .filter(|(i, &y)| (outputs[[*i, 0]] >= 0.5) == (y >= 0.5))
        .count();
    hits as f64 / n as f64
}

/// Backpropagation through a captured forward pass.
///
/// Returns gradients of the batch-averaged BCE loss. The output layer must
/// be a single sigmoid unit, for which the error term reduces to `o - y`.
/// Hidden terms are `g * phi'(h)` with `g` the weighted sum of successor
/// terms; a ReLU unit whose pre-activation stayed non-positive contributes
/// exactly zero.
pub fn backward(model: &Mlp, stack: &ActivationStack, labels: &Array1<f64>) -> Result<Gradients> {
    if model.output_dim() != 1 {
        return Err(Error::Config(
            "bce backward requires a single output unit".into(),
        ));
    }
    if model.output_activation() != OutputActivation::Sigmoid {
        return Err(Error::Config(
            "bce backward requires a sigmoid output layer".into(),
        ));
    }
    let n = stack.batch_size();
    if labels.len() != n {
        return Err(Error::Dimension(format!(
            "{} labels for a batch of {n}",
            labels.len()
        )));
    }
    let d = model.depth();
    if stack.num_pre() != d + 1 || stack.post(0).ncols() != model.input_dim() {
        return Err(Error::Dimension(
            "activation stack does not match the model".into(),
        ));
    }

    let inv_n = 1.0 / n as f64;
    let mut d_weights: Vec<Array2<f64>> = Vec::with_capacity(d + 1);
    let mut d_biases: Vec<Array1<f64>> = Vec::with_capacity(d + 1);

    // Output layer: delta = o - y.
    let mut delta = Array2::zeros((n, 1));
    for i in 0..n {
        delta[[i, 0]] = stack.output()[[i, 0]] - labels[i];
    }

    for l in (0..=d).rev() {
        let inputs = stack.post(l);
        let out_dim = delta.ncols();
        let in_dim = inputs.ncols();
        let mut dw = Array2::zeros((out_dim, in_dim));
        let mut db = Array1::zeros(out_dim);
        for i in 0..n {
            for j in 0..out_dim {
                let dz = delta[[i, j]];
                db[j] += dz * inv_n;
                for c in 0..in_dim {
                    dw[[j, c]] += dz * inputs[[i, c]] * inv_n;
                }
            }
        }

        if l > 0 {
            // Backward aggregation into layer l, then the activation derivative.
            let w = &model.weights()[l];
            let mut next = Array2::zeros((n, in_dim));
            for i in 0..n {
                for c in 0..in_dim {
                    let mut g = 0.0;
                    for j in 0..out_dim {
                        g += w[[j, c]] * delta[[i, j]];
                    }
                    next[[i, c]] = g * model.activation().derivative(stack.pre(l - 1)[[i, c]]);
                }
            }
            delta = next;
        }
        d_weights.push(dw);
        d_biases.push(db);
    }
    d_weights.reverse();
    d_biases.reverse();
    Ok(Gradients {
        d_weights,
        d_biases,
    })
}

/// One epoch's summary statistics over the full training set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub loss: f64,
    pub accuracy: f64,
}

/// A trained model plus its epoch log.
#[derive(Debug, Clone)]
pub struct TrainRun {
    pub model: Mlp,
    pub log: Vec<EpochStats>,
}

impl TrainRun {
    pub fn final_loss(&self) -> Option<f64> {
        self.log.last().map(|e| e.loss)
    }

    pub fn final_accuracy(&self) -> Option<f64> {
        self.log.last().map(|e| e.accuracy)
    }
}

fn rows(features: &Array2<f64>, idx: &[usize]) -> Array2<f64> {
    let mut out = Array2::zeros((idx.len(), features.ncols()));
    for (r, &i) in idx.iter().enumerate() {
        out.row_mut(r).assign(&features.row(i));
    }
    out
}

/// Trains a freshly initialized network with plain mini-batch SGD.
///
/// Per-epoch sample order comes from a Fisher-Yates shuffle on a dedicated
/// stream, so the run is a pure function of `(data, config)`. Training fails
/// with [`Error::Diverged`] as soon as the epoch loss or any parameter stops
/// being finite.
pub fn train(data: &Dataset, config: &TrainConfig) -> Result<TrainRun> {
    config.validate()?;
    if data.n_samples() == 0 {
        return Err(Error::Invalid("cannot train on an empty dataset".into()));
    }
    let mut model = init_mlp(config, data.n_features(), 1)?;
    let labels: Array1<f64> = data.labels.iter().map(|&l| l as f64).collect();
    let n = data.n_samples();

    let mut shuffle_rng = SplitMix64::new(config.seed.wrapping_add(0x517C_C1B7_2722_0A95));
    let mut order: Vec<usize> = (0..n).collect();
    let mut log = Vec::with_capacity(config.epochs);

    for epoch in 1..=config.epochs {
        shuffle_rng.shuffle(&mut order);
        for batch in order.chunks(config.batch_size) {
            let x = rows(&data.features, batch);
            let y: Array1<f64> = batch.iter().map(|&i| labels[i]).collect();
            let stack = model.forward_collect(&x)?;
            let grads = backward(&model, &stack, &y)?;
            model.sgd_step(&grads, config.learning_rate);
        }

        let outputs = model.predict(&data.features)?;
        let loss = bce_loss(&outputs, &labels);
        let acc = accuracy(&outputs, &labels);
        log.push(EpochStats {
            epoch,
            loss,
            accuracy: acc,
        });
        let finite = loss.is_finite()
            && model
                .weights()
                .iter()
                .all(|w| w.iter().all(|v| v.is_finite()))
            && model
                .biases()
                .iter()
                .all(|b| b.iter().all(|v| v.is_finite()));
        if !finite {
            return Err(Error::Diverged { epoch });
        }
    }
    Ok(TrainRun { model, log })
}

/// Writes the epoch log as CSV with header `epoch,loss,accuracy`.
pub fn write_training_log(log: &[EpochStats], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(Error::Csv)?;
    w.write_record(["epoch", "loss", "accuracy"])?;
    for e in log {
        w.write_record(&[
            e.epoch.to_string(),
            e.loss.to_string(),
            e.accuracy.to_string(),
        ])?;
    }
    w.flush()
        .map_err(|e| Error::io(path.display().to_string(), e))?;
    Ok(())
}
