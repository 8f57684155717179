//! Faithfulness and complexity measurements of a compressed network against
//! its original: input-output unfaithfulness (global and anchor-local),
//! structural unfaithfulness (total, per layer, cumulative), cognitive
//! complexity, and dead-neuron ratios.

use std::path::Path;

use ndarray::{Array1, Array2};
use num_bigint::BigUint;
use serde::{Deserialize, Serialize};

use crate::compress::{model_hash, ClusteredMlp, Method, Mode};
use crate::error::{Error, Result};
use crate::kernel::anchor_weights;
use crate::mlp::{Activation, Mlp};

/// Squared output discrepancy over a dataset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IoUnfaithfulness {
    /// Per-sample mean, the reported value: invariant to dataset size.
    pub mean: f64,
    /// The raw, unnormalized sum.
    pub sum: f64,
}

fn check_pair(original: &Mlp, compressed: &ClusteredMlp) -> Result<()> {
    compressed.validate()?;
    if original.input_dim() != compressed.model.input_dim()
        || original.output_dim() != compressed.model.output_dim()
    {
        return Err(Error::Dimension(
            "original and compressed models disagree on input/output dims".into(),
        ));
    }
    if original.depth() != compressed.model.depth() {
        return Err(Error::Dimension(
            "original and compressed models disagree on depth".into(),
        ));
    }
    for (l, c) in compressed.clustering.iter().enumerate() {
        if c.labels.len() != original.layer_sizes()[l + 1] {
            return Err(Error::Dimension(format!(
                "clustering for layer {} covers {} neurons, original has {}",
                l + 1,
                c.labels.len(),
                original.layer_sizes()[l + 1]
            )));
        }
    }
    Ok(())
}

/// Mean (and raw sum) over the dataset of the squared per-output gap between
/// the two networks.
pub fn io_unfaithfulness_global(
    original: &Mlp,
    compressed: &ClusteredMlp,
    delta: &Array2<f64>,
) -> Result<IoUnfaithfulness> {
    check_pair(original, compressed)?;
    let o = original.predict(delta)?;
    let c = compressed.model.predict(delta)?;
    let sum: f64 = o
        .iter()
        .zip(c.iter())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok(IoUnfaithfulness {
        mean: sum / delta.nrows() as f64,
        sum,
    })
}

/// Kernel-weighted squared output gap around the anchor `x`.
pub fn io_unfaithfulness_local(
    original: &Mlp,
    compressed: &ClusteredMlp,
    delta: &Array2<f64>,
    x: &Array1<f64>,
    sigma: f64,
) -> Result<f64> {
    check_pair(original, compressed)?;
    let pi = anchor_weights(delta, x, sigma)?;
    let o = original.predict(delta)?;
    let c = compressed.model.predict(delta)?;
    let mut total = 0.0;
    for i in 0..delta.nrows() {
        let mut gap = 0.0;
        for v in 0..o.ncols() {
            let d = o[[i, v]] - c[[i, v]];
            gap += d * d;
        }
        total += pi[i] * gap;
    }
    Ok(total)
}

/// Structural discrepancy: per layer, cluster, member and sample, the squared
/// gap between the member's activation in the original network and its
/// cluster-neuron's activation in the compressed one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructuralUnfaithfulness {
    pub total: f64,
    pub per_layer: Vec<f64>,
    /// Prefix sums of `per_layer`.
    pub cumulative: Vec<f64>,
}

/// Sample weights: the normalized kernel around the anchor when one is
/// given, otherwise uniform `1/n`.
fn sample_weights(
    delta: &Array2<f64>,
    anchor: Option<(&Array1<f64>, f64)>,
) -> Result<Array1<f64>> {
    match anchor {
        Some((x, sigma)) => anchor_weights(delta, x, sigma),
        None => Ok(Array1::from_elem(
            delta.nrows(),
            1.0 / delta.nrows() as f64,
        )),
    }
}

pub fn structural_unfaithfulness(
    original: &Mlp,
    compressed: &ClusteredMlp,
    delta: &Array2<f64>,
    anchor: Option<(&Array1<f64>, f64)>,
) -> Result<StructuralUnfaithfulness> {
    check_pair(original, compressed)?;
    let orig_hidden = original.hidden_post_activations(delta)?;
    let mu_hidden = compressed.model.hidden_post_activations(delta)?;
    let weights = sample_weights(delta, anchor)?;
    structural_from_activations(compressed, &orig_hidden, &mu_hidden, &weights)
}

/// The same measurement over precomputed hidden activations, usable with the
/// byproduct activations of an iterative compression run.
pub fn structural_from_activations(
    compressed: &ClusteredMlp,
    orig_hidden: &[Array2<f64>],
    mu_hidden: &[Array2<f64>],
    sample_weights: &Array1<f64>,
) -> Result<StructuralUnfaithfulness> {
    let d = compressed.clustering.len();
    if orig_hidden.len() != d || mu_hidden.len() != d {
        return Err(Error::Dimension(
            "hidden-activation stacks do not match the clustering depth".into(),
        ));
    }
    let n = sample_weights.len();
    let mut per_layer = Vec::with_capacity(d);
    for (l, clustering) in compressed.clustering.iter().enumerate() {
        let orig = &orig_hidden[l];
        let mu = &mu_hidden[l];
        if orig.nrows() != n || mu.nrows() != n || orig.ncols() != clustering.labels.len() {
            return Err(Error::Dimension(format!(
                "activation tables for layer {} are misaligned",
                l + 1
            )));
        }
        let mut layer_total = 0.0;
        for s in 0..n {
            let mut gap = 0.0;
            for (i, &c) in clustering.labels.iter().enumerate() {
                let dd = orig[[s, i]] - mu[[s, c]];
                gap += dd * dd;
            }
            layer_total += sample_weights[s] * gap;
        }
        per_layer.push(layer_total);
    }
    let mut cumulative = Vec::with_capacity(d);
    let mut running = 0.0;
    for &v in &per_layer {
        running += v;
        cumulative.push(running);
    }
    Ok(StructuralUnfaithfulness {
        total: running,
        per_layer,
        cumulative,
    })
}

/// Product of the per-layer cluster counts and the output-layer size, with
/// its base-10 logarithm for display.
pub fn cognitive_complexity(compressed: &ClusteredMlp) -> (BigUint, f64) {
    let mut product = BigUint::from(1u32);
    let mut log10 = 0.0;
    for c in &compressed.clustering {
        product *= BigUint::from(c.k);
        log10 += (c.k as f64).log10();
    }
    let out = compressed.model.output_dim();
    product *= BigUint::from(out);
    log10 += (out as f64).log10();
    (product, log10)
}

/// Threshold under which a post-activation counts as zero.
const DEAD_EPS: f64 = 1e-9;

/// Per hidden layer, the fraction of neurons whose post-activation stays at
/// most 1e-9 for *every* sample. `Ok(None)` for non-ReLU networks, where the
/// notion does not apply.
pub fn dead_neuron_ratio(model: &Mlp, delta: &Array2<f64>) -> Result<Option<Vec<f64>>> {
    if model.activation() != Activation::Relu {
        return Ok(None);
    }
    let hidden = model.hidden_post_activations(delta)?;
    let mut ratios = Vec::with_capacity(hidden.len());
    for acts in &hidden {
        let neurons = acts.ncols();
        let dead = (0..neurons)
            .filter(|&i| acts.column(i).iter().all(|&v| v <= DEAD_EPS))
            .count();
        ratios.push(dead as f64 / neurons as f64);
    }
    Ok(Some(ratios))
}

/// Descriptors of the anchor used for the local metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnchorInfo {
    pub sigma: f64,
    /// Row index into the evaluation dataset, when the anchor came from it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sample_index: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportMeta {
    pub original_hash: String,
    pub method: Method,
    pub mode: Mode,
    pub gamma: f64,
    pub seed: u64,
    /// Human-readable description of the evaluation dataset.
    pub delta: String,
    pub n_samples: usize,
}

/// The full metric bundle for one (original, compressed) pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub io_global: f64,
    pub io_global_sum: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub io_local: Option<f64>,
    pub structural: f64,
    pub structural_per_layer: Vec<f64>,
    pub structural_cumulative: Vec<f64>,
    /// Decimal digits of the exact product.
    pub cognitive_complexity: String,
    pub cognitive_complexity_log10: f64,
    /// Dead-neuron ratios of the *original* network; absent for non-ReLU.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dead_ratio_per_layer: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub anchor: Option<AnchorInfo>,
    pub metadata: ReportMeta,
}

/// Runs every applicable metric. Refuses a compressed model whose recorded
/// origin hash does not match `original`.
pub fn evaluate(
    original: &Mlp,
    compressed: &ClusteredMlp,
    delta: &Array2<f64>,
    delta_desc: &str,
    anchor: Option<(&Array1<f64>, f64, Option<usize>)>,
) -> Result<EvalReport> {
    let hash = model_hash(original)?;
    if hash != compressed.origin_hash {
        return Err(Error::Invalid(format!(
            "compressed model was derived from a different original \
             (recorded origin {}.., given model {}..)",
            &compressed.origin_hash[..12.min(compressed.origin_hash.len())],
            &hash[..12]
        )));
    }
    let io = io_unfaithfulness_global(original, compressed, delta)?;
    let metric_anchor = anchor.map(|(x, s, _)| (x, s));
    let io_local = match metric_anchor {
        Some((x, sigma)) => Some(io_unfaithfulness_local(
            original, compressed, delta, x, sigma,
        )?),
        None => None,
    };
    let structural = structural_unfaithfulness(original, compressed, delta, metric_anchor)?;
    let (omega, omega_log10) = cognitive_complexity(compressed);
    let dead = dead_neuron_ratio(original, delta)?;
    Ok(EvalReport {
        io_global: io.mean,
        io_global_sum: io.sum,
        io_local,
        structural: structural.total,
        structural_per_layer: structural.per_layer,
        structural_cumulative: structural.cumulative,
        cognitive_complexity: omega.to_string(),
        cognitive_complexity_log10: omega_log10,
        dead_ratio_per_layer: dead,
        anchor: anchor.map(|(_, sigma, sample_index)| AnchorInfo {
            sigma,
            sample_index,
        }),
        metadata: ReportMeta {
            original_hash: hash,
            method: compressed.method,
            mode: compressed.mode,
            gamma: compressed.gamma,
            seed: compressed.seed,
            delta: delta_desc.to_string(),
            n_samples: delta.nrows(),
        },
    })
}

impl EvalReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Per-layer series as CSV: `layer,structural,cumulative,dead_ratio`.
    /// The dead-ratio column is empty when not applicable.
    pub fn write_layer_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path).map_err(Error::Csv)?;
        w.write_record(["layer", "structural", "cumulative", "dead_ratio"])?;
        for l in 0..self.structural_per_layer.len() {
            let dead = self
                .dead_ratio_per_layer
                .as_ref()
                .map(|v| v[l].to_string())
                .unwrap_or_default();
            w.write_record(&[
                (l + 1).to_string(),
                self.structural_per_layer[l].to_string(),
                self.structural_cumulative[l].to_string(),
                dead,
            ])?;
        }
        w.flush()
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        Ok(())
    }
}
