//! Clustered-MLP construction: the iterative layer-by-layer procedure, the
//! one-shot baseline, and the aggregation rules that set merged parameters.
//!
//! Both procedures share the same merge rules — incoming weights and the
//! bias of a cluster are the member means, outgoing weights the member sums
//! — so the only difference between them is *which activations feed the
//! clustering*:
//!
//! - one-shot clusters every hidden layer from the original network's
//!   activations (one pass, `d` layer ops);
//! - iterative layer-by-layer compression re-derives each layer's
//!   activations from the already-compressed prefix (`d` layer ops total,
//!   because the pre-activations of the clustering pass are reused, column
//!   group-means, for the prefix update), and its compressed hidden
//!   activations fall out as a byproduct.

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cluster::{cluster_layer, LayerClustering};
use crate::error::{Error, Result};
use crate::kernel::anchor_weights;
use crate::mlp::{affine, Mlp};

/// Which activations feed the per-layer clustering.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    /// Iterative layer-by-layer: cluster from the compressed prefix.
    Illc,
    /// Baseline: cluster every layer from the original activations.
    Oneshot,
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Method::Illc => "illc",
            Method::Oneshot => "oneshot",
        })
    }
}

impl std::str::FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "illc" => Ok(Method::Illc),
            "oneshot" => Ok(Method::Oneshot),
            other => Err(Error::Config(format!("unknown method {other:?}"))),
        }
    }
}

/// Edge-aggregation flavor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Plain member sums/means.
    Global,
    /// Outgoing sums reweighted by activation share around an anchor input.
    Local,
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Mode::Global => "global",
            Mode::Local => "local",
        })
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "global" => Ok(Mode::Global),
            "local" => Ok(Mode::Local),
            other => Err(Error::Config(format!("unknown mode {other:?}"))),
        }
    }
}

/// Anchor input and kernel width for local aggregation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalAnchor {
    pub x: Vec<f64>,
    pub sigma: f64,
}

/// A compressed network together with the clustering that produced it.
#[derive(Debug, Clone)]
pub struct ClusteredMlp {
    /// The compressed network; hidden neurons are cluster-neurons.
    pub model: Mlp,
    /// Per hidden layer of the *original* model, the cluster assignment.
    pub clustering: Vec<LayerClustering>,
    /// Hash of the original model's canonical JSON form.
    pub origin_hash: String,
    pub method: Method,
    pub mode: Mode,
    pub gamma: f64,
    pub seed: u64,
    /// Present exactly when `mode == Local`.
    pub local_anchor: Option<LocalAnchor>,
}

impl ClusteredMlp {
    /// Validates the internal consistency of a (possibly reassembled) value.
    pub fn validate(&self) -> Result<()> {
        let sizes = self.model.layer_sizes();
        if self.clustering.len() != self.model.depth() {
            return Err(Error::Dimension(format!(
                "{} layer clusterings for a depth-{} model",
                self.clustering.len(),
                self.model.depth()
            )));
        }
        for (idx, c) in self.clustering.iter().enumerate() {
            c.validate()?;
            if c.layer != idx + 1 {
                return Err(Error::Invalid(format!(
                    "clustering {idx} claims layer {}, expected {}",
                    c.layer,
                    idx + 1
                )));
            }
            if c.k != sizes[idx + 1] {
                return Err(Error::Dimension(format!(
                    "layer {} has {} cluster-neurons but clustering has k = {}",
                    idx + 1,
                    sizes[idx + 1],
                    c.k
                )));
            }
        }
        if (self.mode == Mode::Local) != self.local_anchor.is_some() {
            return Err(Error::Invalid(
                "local anchor must be present exactly in local mode".into(),
            ));
        }
        Ok(())
    }

    /// Metadata sidecar for the compressed-model file.
    pub fn sidecar(&self) -> Sidecar {
        Sidecar {
            method: self.method,
            mode: self.mode,
            gamma: self.gamma,
            seed: self.seed,
            clustering: self.clustering.clone(),
            origin_hash: self.origin_hash.clone(),
            local_anchor: self.local_anchor.clone(),
        }
    }

    /// Reassembles a value from a model file plus its sidecar.
    pub fn from_model_and_sidecar(model: Mlp, sidecar: Sidecar) -> Result<Self> {
        let out = ClusteredMlp {
            model,
            clustering: sidecar.clustering,
            origin_hash: sidecar.origin_hash,
            method: sidecar.method,
            mode: sidecar.mode,
            gamma: sidecar.gamma,
            seed: sidecar.seed,
            local_anchor: sidecar.local_anchor,
        };
        out.validate()?;
        Ok(out)
    }

    /// Test/fixture constructor for a model wrapped with a given clustering.
    pub fn from_parts(
        model: Mlp,
        clustering: Vec<LayerClustering>,
        origin_hash: String,
    ) -> Result<Self> {
        let out = ClusteredMlp {
            model,
            clustering,
            origin_hash,
            method: Method::Oneshot,
            mode: Mode::Global,
            gamma: 1.0,
            seed: 0,
            local_anchor: None,
        };
        out.validate()?;
        Ok(out)
    }
}

/// Sidecar JSON written next to a compressed model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub method: Method,
    pub mode: Mode,
    pub gamma: f64,
    pub seed: u64,
    pub clustering: Vec<LayerClustering>,
    pub origin_hash: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub local_anchor: Option<LocalAnchor>,
}

/// SHA-256 of the model's canonical JSON form, hex-encoded.
pub fn model_hash(model: &Mlp) -> Result<String> {
    let json = model.to_json()?;
    let digest = Sha256::digest(json.as_bytes());
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}

/// Output of one compression run.
#[derive(Debug, Clone)]
pub struct CompressionResult {
    pub compressed: ClusteredMlp,
    /// Full-layer activation computations the run performed.
    pub layer_ops: u64,
    /// The compressed model's hidden post-activations on the compression
    /// dataset, when the run produced them anyway (always for the iterative
    /// method, and for local mode). Reusing them makes a faithfulness
    /// evaluation free of further layer ops.
    pub mu_hidden: Option<Vec<Array2<f64>>>,
}

/// Mean of the member biases.
pub fn agg_bias_global(biases: &Array1<f64>, members: &[usize]) -> Result<f64> {
    if members.is_empty() {
        return Err(Error::Invalid("empty cluster".into()));
    }
    let mut sum = 0.0;
    for &i in members {
        if i >= biases.len() {
            return Err(Error::Dimension(format!("bias index {i} out of range")));
        }
        sum += biases[i];
    }
    Ok(sum / members.len() as f64)
}

/// Sum over source members of the mean weight into the target cluster:
/// `sum_{i in source} (1/|target|) sum_{j in target} w[j, i]`.
pub fn agg_edge_global(w: &Array2<f64>, source: &[usize], target: &[usize]) -> Result<f64> {
    if source.is_empty() || target.is_empty() {
        return Err(Error::Invalid("empty cluster".into()));
    }
    let inv_t = 1.0 / target.len() as f64;
    let mut total = 0.0;
    for &i in source {
        if i >= w.ncols() {
            return Err(Error::Dimension(format!("source index {i} out of range")));
        }
        let mut inner = 0.0;
        for &j in target {
            if j >= w.nrows() {
                return Err(Error::Dimension(format!("target index {j} out of range")));
            }
            inner += w[[j, i]];
        }
        total += inner * inv_t;
    }
    Ok(total)
}

const DEAD_CLUSTER_EPS: f64 = 1e-9;

/// Anchor-weighted edge aggregation: each source member's outgoing weights
/// are scaled by its share of the cluster activation,
/// `O_orig(member) / O_mu(cluster)`, averaged over the neighborhood under the
/// normalized kernel. When the cluster activation is at most 1e-9 the ratio
/// for that sample falls back to `1/|source|`.
///
/// `orig_acts` are the source layer's activations in the original network
/// (`n x layer_width`); `cluster_acts` is the source cluster-neuron's
/// activation in the compressed network (`n`); both aligned with `delta`.
#[allow(clippy::too_many_arguments)]
pub fn agg_edge_local(
    w: &Array2<f64>,
    source: &[usize],
    target: &[usize],
    orig_acts: &Array2<f64>,
    cluster_acts: &Array1<f64>,
    delta: &Array2<f64>,
    x: &Array1<f64>,
    sigma: f64,
) -> Result<f64> {
    if source.is_empty() || target.is_empty() {
        return Err(Error::Invalid("empty cluster".into()));
    }
    let n = delta.nrows();
    if orig_acts.nrows() != n || cluster_acts.len() != n {
        return Err(Error::Dimension(
            "activation tables not aligned with the neighborhood".into(),
        ));
    }
    let pi = anchor_weights(delta, x, sigma)?;
    let inv_t = 1.0 / target.len() as f64;
    let uniform = 1.0 / source.len() as f64;
    let mut total = 0.0;
    for s in 0..n {
        let mut sample_term = 0.0;
        for &i in source {
            let ratio = if cluster_acts[s] <= DEAD_CLUSTER_EPS {
                uniform
            } else {
                orig_acts[[s, i]] / cluster_acts[s]
            };
            let mut inner = 0.0;
            for &j in target {
                inner += w[[j, i]];
            }
            sample_term += ratio * inner * inv_t;
        }
        total += pi[s] * sample_term;
    }
    Ok(total)
}

/// Group-mean of the rows of `w` and entries of `b` by cluster label.
fn merge_incoming(
    w: &Array2<f64>,
    b: &Array1<f64>,
    clustering: &LayerClustering,
) -> (Array2<f64>, Array1<f64>) {
    let k = clustering.k;
    let mut w_out = Array2::zeros((k, w.ncols()));
    let mut b_out = Array1::zeros(k);
    let mut counts = vec![0usize; k];
    for (i, &c) in clustering.labels.iter().enumerate() {
        counts[c] += 1;
        b_out[c] += b[i];
        w_out.row_mut(c).zip_mut_with(&w.row(i), |acc, v| *acc += v);
    }
    for c in 0..k {
        let inv = 1.0 / counts[c] as f64;
        w_out.row_mut(c).mapv_inplace(|v| v * inv);
        b_out[c] *= inv;
    }
    (w_out, b_out)
}

/// Group-sum of the columns of `w` by cluster label.
fn merge_outgoing(w: &Array2<f64>, clustering: &LayerClustering) -> Array2<f64> {
    let rows = w.nrows();
    let mut out = Array2::zeros((rows, clustering.k));
    for (i, &c) in clustering.labels.iter().enumerate() {
        for r in 0..rows {
            out[[r, c]] += w[[r, i]];
        }
    }
    out
}

/// Local-mode outgoing merge: column `c` of the result is
/// `sum_{i in c} (sum_s pi[s] * ratio[s, i]) * w[:, i]`, the vectorized form
/// of [`agg_edge_local`] before the later incoming mean.
fn merge_outgoing_local(
    w: &Array2<f64>,
    clustering: &LayerClustering,
    pi: &Array1<f64>,
    orig_acts: &Array2<f64>,
    mu_acts: &Array2<f64>,
) -> Array2<f64> {
    let n = pi.len();
    let sizes: Vec<usize> = {
        let mut s = vec![0usize; clustering.k];
        for &c in &clustering.labels {
            s[c] += 1;
        }
        s
    };
    let rows = w.nrows();
    let mut out = Array2::zeros((rows, clustering.k));
    for (i, &c) in clustering.labels.iter().enumerate() {
        let uniform = 1.0 / sizes[c] as f64;
        let mut coeff = 0.0;
        for s in 0..n {
            let mu = mu_acts[[s, c]];
            let ratio = if mu <= DEAD_CLUSTER_EPS {
                uniform
            } else {
                orig_acts[[s, i]] / mu
            };
            coeff += pi[s] * ratio;
        }
        for r in 0..rows {
            out[[r, c]] += coeff * w[[r, i]];
        }
    }
    out
}

/// Mean over member columns per cluster; the memoized-pre-activation route
/// to the compressed layer's pre-activations.
fn group_mean_cols(h: &Array2<f64>, clustering: &LayerClustering) -> Array2<f64> {
    let n = h.nrows();
    let mut out = Array2::zeros((n, clustering.k));
    let mut counts = vec![0usize; clustering.k];
    for (i, &c) in clustering.labels.iter().enumerate() {
        counts[c] += 1;
        for r in 0..n {
            out[[r, c]] += h[[r, i]];
        }
    }
    for c in 0..clustering.k {
        let inv = 1.0 / counts[c] as f64;
        out.column_mut(c).mapv_inplace(|v| v * inv);
    }
    out
}

/// One-shot baseline: cluster every hidden layer from the original model's
/// activations on `x`, then merge.
pub fn compress_oneshot(
    model: &Mlp,
    x: &Array2<f64>,
    gamma: f64,
    seed: u64,
    mode: Mode,
    anchor: Option<LocalAnchor>,
) -> Result<CompressionResult> {
    compress_with(model, x, gamma, seed, Method::Oneshot, mode, anchor)
}

/// Iterative layer-by-layer compression: each layer is clustered from the
/// activations of the already-compressed prefix, so the merge of layer `l`
/// compensates the error introduced at layer `l - 1`.
pub fn compress_illc(
    model: &Mlp,
    x: &Array2<f64>,
    gamma: f64,
    seed: u64,
    mode: Mode,
    anchor: Option<LocalAnchor>,
) -> Result<CompressionResult> {
    compress_with(model, x, gamma, seed, Method::Illc, mode, anchor)
}

fn compress_with(
    model: &Mlp,
    x: &Array2<f64>,
    gamma: f64,
    seed: u64,
    method: Method,
    mode: Mode,
    anchor: Option<LocalAnchor>,
) -> Result<CompressionResult> {
    if !(gamma > 0.0 && gamma <= 1.0) {
        return Err(Error::Invalid(format!("gamma must be in (0, 1], got {gamma}")));
    }
    match (mode, &anchor) {
        (Mode::Local, None) => {
            return Err(Error::Config("local mode needs an anchor".into()));
        }
        (Mode::Global, Some(_)) => {
            return Err(Error::Config("global mode takes no anchor".into()));
        }
        _ => {}
    }
    let pi = match &anchor {
        Some(a) => {
            if a.x.len() != model.input_dim() {
                return Err(Error::Dimension(format!(
                    "anchor has {} features, model expects {}",
                    a.x.len(),
                    model.input_dim()
                )));
            }
            Some(anchor_weights(x, &Array1::from_vec(a.x.clone()), a.sigma)?)
        }
        None => None,
    };

    let d = model.depth();
    let activation = model.activation();
    let origin_hash = model_hash(model)?;

    // Original hidden activations: the clustering source for one-shot, the
    // ratio numerators for local mode. The iterative method in global mode
    // never touches them.
    let needs_orig = method == Method::Oneshot || mode == Mode::Local;
    let orig_hidden = if needs_orig {
        Some(model.hidden_post_activations(x)?)
    } else {
        model.check_batch(x)?;
        None
    };
    let mut layer_ops = if needs_orig { d as u64 } else { 0 };

    let mut weights: Vec<Array2<f64>> = model.weights().to_vec();
    let mut biases: Vec<Array1<f64>> = model.biases().to_vec();
    let mut clusterings: Vec<LayerClustering> = Vec::with_capacity(d);
    // Activations of the compressed prefix; input for layer 1.
    let mut x_mu = x.clone();
    let mut mu_hidden: Vec<Array2<f64>> = Vec::new();
    let track_mu = method == Method::Illc || mode == Mode::Local;

    for l in 1..=d {
        let (cluster_acts, memo_pre): (Array2<f64>, Option<Array2<f64>>) = match method {
            Method::Oneshot => (orig_hidden.as_ref().unwrap()[l - 1].clone(), None),
            Method::Illc => {
                let h = affine(&x_mu, &weights[l - 1], &biases[l - 1]);
                layer_ops += 1;
                model.note_layer_ops(1);
                let a = h.mapv(|v| activation.apply(v));
                (a, Some(h))
            }
        };

        let clustering = cluster_layer(l, &cluster_acts, gamma, seed.wrapping_add(l as u64))?;

        let (w_in, b_in) = merge_incoming(&weights[l - 1], &biases[l - 1], &clustering);
        weights[l - 1] = w_in;
        biases[l - 1] = b_in;

        if track_mu {
            let mu_l = match memo_pre {
                // The merged incoming weights are member means, so the merged
                // pre-activations are the member means of the memoized ones.
                Some(h) => group_mean_cols(&h, &clustering).mapv(|v| activation.apply(v)),
                None => {
                    let h = affine(&x_mu, &weights[l - 1], &biases[l - 1]);
                    layer_ops += 1;
                    model.note_layer_ops(1);
                    h.mapv(|v| activation.apply(v))
                }
            };
            x_mu = mu_l.clone();
            mu_hidden.push(mu_l);
        }

        weights[l] = match mode {
            Mode::Global => merge_outgoing(&weights[l], &clustering),
            Mode::Local => merge_outgoing_local(
                &weights[l],
                &clustering,
                pi.as_ref().unwrap(),
                &orig_hidden.as_ref().unwrap()[l - 1],
                mu_hidden.last().unwrap(),
            ),
        };
        clusterings.push(clustering);
    }

    let mut sizes = Vec::with_capacity(d + 2);
    sizes.push(model.input_dim());
    sizes.extend(clusterings.iter().map(|c| c.k));
    sizes.push(model.output_dim());
    let mu = Mlp::new(
        sizes,
        weights,
        biases,
        activation,
        model.output_activation(),
    )?;

    let compressed = ClusteredMlp {
        model: mu,
        clustering: clusterings,
        origin_hash,
        method,
        mode,
        gamma,
        seed,
        local_anchor: anchor,
    };
    compressed.validate()?;
    Ok(CompressionResult {
        compressed,
        layer_ops,
        mu_hidden: track_mu.then_some(mu_hidden),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mlp::{Activation, OutputActivation};
    use crate::rng::SplitMix64;
    use ndarray::array;

    fn random_model(sizes: &[usize], seed: u64) -> Mlp {
        let mut rng = SplitMix64::new(seed);
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for l in 0..sizes.len() - 1 {
            let std = (2.0 / sizes[l] as f64).sqrt();
            weights.push(Array2::from_shape_fn((sizes[l + 1], sizes[l]), |_| {
                std * rng.next_gaussian()
            }));
            biases.push(Array1::from_shape_fn(sizes[l + 1], |_| {
                0.1 * rng.next_gaussian()
            }));
        }
        Mlp::new(
            sizes.to_vec(),
            weights,
            biases,
            Activation::Relu,
            OutputActivation::Sigmoid,
        )
        .unwrap()
    }

    fn random_batch(n: usize, dim: usize, seed: u64) -> Array2<f64> {
        let mut rng = SplitMix64::new(seed);
        Array2::from_shape_fn((n, dim), |_| rng.next_gaussian())
    }

    #[test]
    fn bias_aggregation_examples() {
        let biases = array![0.2, 0.4, -1.0];
        assert!((agg_bias_global(&biases, &[0, 1]).unwrap() - 0.3).abs() < 1e-15);
        assert_eq!(agg_bias_global(&biases, &[2]).unwrap(), -1.0);
        assert_eq!(agg_bias_global(&Array1::zeros(100), &(0..100).collect::<Vec<_>>()).unwrap(), 0.0);
        assert!(agg_bias_global(&biases, &[]).is_err());
    }

    #[test]
    fn edge_aggregation_examples() {
        // Singleton to singleton: the raw weight.
        let w = array![[0.7]];
        assert_eq!(agg_edge_global(&w, &[0], &[0]).unwrap(), 0.7);

        // Two sources into one target: pure sum.
        let w = array![[1.0, 3.0]];
        assert_eq!(agg_edge_global(&w, &[0, 1], &[0]).unwrap(), 4.0);

        // Rows = targets: (1+2)/2 + (3+4)/2 where columns are sources.
        let w = array![[1.0, 3.0], [2.0, 4.0]];
        assert_eq!(agg_edge_global(&w, &[0, 1], &[0, 1]).unwrap(), 5.0);
    }

    // Oracle: an independent double loop over the definition.
    #[test]
    fn edge_aggregation_matches_double_loop() {
        let mut rng = SplitMix64::new(21);
        let w = Array2::from_shape_fn((5, 4), |_| rng.next_gaussian());
        let source = vec![0usize, 2, 3];
        let target = vec![1usize, 4];
        let mut expected = 0.0;
        for &i in &source {
            let mut inner = 0.0;
            for &j in &target {
                inner += w[[j, i]];
            }
            expected += inner / target.len() as f64;
        }
        let got = agg_edge_global(&w, &source, &target).unwrap();
        assert!((got - expected).abs() < 1e-14);
    }

    #[test]
    fn local_edge_reduces_to_global_when_ratios_are_one() {
        let w = array![[1.0, -2.0], [0.5, 3.0]];
        let source = vec![0usize, 1];
        let target = vec![0usize, 1];
        // Singleton neighborhood; member activations equal the cluster's.
        let delta = array![[0.3, -0.1]];
        let orig_acts = array![[0.8, 0.8]];
        let cluster_acts = array![0.8];
        let local = agg_edge_local(
            &w,
            &source,
            &target,
            &orig_acts,
            &cluster_acts,
            &delta,
            &array![0.3, -0.1],
            1.0,
        )
        .unwrap();
        let global = agg_edge_global(&w, &source, &target).unwrap();
        assert!((local - global).abs() < 1e-12);
    }

    // Oracle: direct evaluation of the definitional sum on the fixture.
    #[test]
    fn local_edge_matches_direct_formula() {
        // Two-member cluster with activations 0.9 and 0.1; equal outgoing
        // weights; two-sample neighborhood.
        let w = array![[0.5, 0.5]];
        let source = vec![0usize, 1];
        let target = vec![0usize];
        let delta = array![[0.0], [1.0]];
        let orig_acts = array![[0.9, 0.1], [0.45, 0.05]];
        let cluster_acts = array![0.5, 0.25];
        let x = array![0.0];
        let sigma = 1.0;

        let pi_raw = [1.0f64, (-1.0f64).exp()];
        let z: f64 = pi_raw.iter().sum();
        let mut expected = 0.0;
        for s in 0..2 {
            let mut term = 0.0;
            for (col, &i) in source.iter().enumerate() {
                let _ = col;
                let ratio = orig_acts[[s, i]] / cluster_acts[s];
                term += ratio * w[[0, i]];
            }
            expected += (pi_raw[s] / z) * term;
        }
        let got = agg_edge_local(
            &w, &source, &target, &orig_acts, &cluster_acts, &delta, &x, sigma,
        )
        .unwrap();
        assert!((got - expected).abs() < 1e-14, "{got} vs {expected}");
    }

    #[test]
    fn local_edge_rejects_bad_sigma_and_empty_neighborhood() {
        let w = array![[1.0]];
        let acts = array![[1.0]];
        let cacts = array![1.0];
        let delta = array![[0.0]];
        let x = array![0.0];
        assert!(agg_edge_local(&w, &[0], &[0], &acts, &cacts, &delta, &x, 0.0).is_err());
        let empty = Array2::<f64>::zeros((0, 1));
        let eacts = Array2::<f64>::zeros((0, 1));
        let ecacts = Array1::<f64>::zeros(0);
        assert!(agg_edge_local(&w, &[0], &[0], &eacts, &ecacts, &empty, &x, 1.0).is_err());
    }

    #[test]
    fn gamma_one_is_identity_for_both_methods() {
        let model = random_model(&[3, 6, 5, 2], 1);
        let x = random_batch(12, 3, 2);
        for method in [Method::Illc, Method::Oneshot] {
            let r = compress_with(&model, &x, 1.0, 0, method, Mode::Global, None).unwrap();
            assert_eq!(r.compressed.model, model, "{method:?}");
            let orig = model.predict(&x).unwrap();
            let comp = r.compressed.model.predict(&x).unwrap();
            assert_eq!(orig, comp);
        }
    }

    #[test]
    fn duplicate_neurons_merge_exactly() {
        // 2-4-1 with neurons 0 and 1 identical (same incoming row and bias);
        // well-separated other neurons so k = 3 forces exactly that merge.
        let w0 = array![
            [1.0, 2.0],
            [1.0, 2.0],
            [-5.0, 1.0],
            [3.0, -4.0]
        ];
        let b0 = array![0.5, 0.5, 1.0, -0.5];
        let w1 = array![[1.0, 2.0, -1.5, 0.7]];
        let b1 = array![0.2];
        let model = Mlp::new(
            vec![2, 4, 1],
            vec![w0, w1],
            vec![b0, b1],
            Activation::Relu,
            OutputActivation::Sigmoid,
        )
        .unwrap();
        let x = random_batch(20, 2, 3);
        let r = compress_oneshot(&model, &x, 0.75, 0, Mode::Global, None).unwrap();
        let c = &r.compressed.clustering[0];
        assert_eq!(c.k, 3);
        assert_eq!(c.labels[0], c.labels[1], "duplicates must co-cluster");

        // Merged incoming row is the common row; outgoing is the column sum.
        let pair = c.labels[0];
        let mu = &r.compressed.model;
        assert_eq!(mu.incoming(0, pair).to_vec(), vec![1.0, 2.0]);
        assert_eq!(mu.biases()[0][pair], 0.5);
        assert!((mu.weights()[1][[0, pair]] - 3.0).abs() < 1e-15);

        let probe = random_batch(100, 2, 4);
        let orig = model.predict(&probe).unwrap();
        let comp = mu.predict(&probe).unwrap();
        for (a, b) in orig.iter().zip(comp.iter()) {
            assert!((a - b).abs() <= 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn merged_weights_match_agg_definitions_for_oneshot() {
        let model = random_model(&[3, 6, 4, 2], 7);
        let x = random_batch(15, 3, 8);
        let r = compress_oneshot(&model, &x, 0.5, 1, Mode::Global, None).unwrap();
        let c1 = &r.compressed.clustering[0]; // layer 1, k = 3
        let c2 = &r.compressed.clustering[1]; // layer 2, k = 2
        let m1 = c1.members();
        let m2 = c2.members();
        let mu = &r.compressed.model;

        // Hidden-to-hidden edges follow the sum-over-source, mean-over-target rule.
        for (a, src) in m1.iter().enumerate() {
            for (b, tgt) in m2.iter().enumerate() {
                let expected = agg_edge_global(&model.weights()[1], src, tgt).unwrap();
                let got = mu.weights()[1][[b, a]];
                assert!((got - expected).abs() < 1e-12, "edge {a}->{b}");
            }
        }
        // Input-to-hidden: mean over the formed cluster.
        for (a, src) in m1.iter().enumerate() {
            for i in 0..3 {
                let expected = agg_edge_global(&model.weights()[0], &[i], src).unwrap();
                assert!((mu.weights()[0][[a, i]] - expected).abs() < 1e-12);
            }
        }
        // Hidden-to-output: plain sum out of the cluster.
        for (a, src) in m2.iter().enumerate() {
            for j in 0..2 {
                let expected = agg_edge_global(&model.weights()[2], src, &[j]).unwrap();
                assert!((mu.weights()[2][[j, a]] - expected).abs() < 1e-12);
            }
        }
        // Biases are member means.
        for (a, src) in m1.iter().enumerate() {
            let expected = agg_bias_global(&model.biases()[0], src).unwrap();
            assert!((mu.biases()[0][a] - expected).abs() < 1e-15);
        }
    }

    #[test]
    fn single_hidden_layer_methods_coincide_bitwise() {
        let model = random_model(&[4, 8, 1], 11);
        let x = random_batch(25, 4, 12);
        let a = compress_illc(&model, &x, 0.5, 3, Mode::Global, None).unwrap();
        let b = compress_oneshot(&model, &x, 0.5, 3, Mode::Global, None).unwrap();
        assert_eq!(a.compressed.model, b.compressed.model);
        assert_eq!(a.compressed.clustering, b.compressed.clustering);
        for (wa, wb) in a
            .compressed
            .model
            .weights()
            .iter()
            .zip(b.compressed.model.weights())
        {
            for (p, q) in wa.iter().zip(wb.iter()) {
                assert_eq!(p.to_bits(), q.to_bits());
            }
        }
    }

    // Oracle: both activation paths computed step by step on the fixture.
    #[test]
    fn illc_reclusters_from_the_compressed_prefix() {
        // Depth-2 model built so that merging layer 1 visibly shifts the
        // activations feeding layer 2.
        let model = random_model(&[2, 4, 4, 1], 23);
        let x = random_batch(30, 2, 24);
        let gamma = 0.5;
        let seed = 5;

        let one = compress_oneshot(&model, &x, gamma, seed, Mode::Global, None).unwrap();
        let ill = compress_illc(&model, &x, gamma, seed, Mode::Global, None).unwrap();

        // Layer-1 clustering sees identical activations in both methods.
        assert_eq!(one.compressed.clustering[0], ill.compressed.clustering[0]);

        // Oracle for the one-shot layer-2 activations: original forward.
        let orig_acts = model.hidden_post_activations(&x).unwrap();
        let expected_oneshot =
            cluster_layer(2, &orig_acts[1], gamma, seed.wrapping_add(2)).unwrap();
        assert_eq!(one.compressed.clustering[1], expected_oneshot);

        // Oracle for the iterative layer-2 activations: push the input
        // through the fully merged first layer (incoming means, outgoing
        // sums), then the still-uncompressed layer-2 target side.
        let c1 = &ill.compressed.clustering[0];
        let (w0m, b0m) = merge_incoming(&model.weights()[0], &model.biases()[0], c1);
        let a1_mu = affine(&x, &w0m, &b0m).mapv(|v| v.max(0.0));
        let w1_out = merge_outgoing(&model.weights()[1], c1);
        let a2_illc = affine(&a1_mu, &w1_out, &model.biases()[1]).mapv(|v| v.max(0.0));
        let expected_illc = cluster_layer(2, &a2_illc, gamma, seed.wrapping_add(2)).unwrap();
        assert_eq!(ill.compressed.clustering[1], expected_illc);

        // And the two paths genuinely diverge on this fixture.
        assert_ne!(
            one.compressed.clustering[1], ill.compressed.clustering[1],
            "fixture failed to separate the methods"
        );
    }

    #[test]
    fn layer_op_counters() {
        let model = random_model(&[3, 5, 5, 5, 2], 31);
        let x = random_batch(10, 3, 32);
        let d = model.depth() as u64;

        let before = model.layer_ops();
        let ill = compress_illc(&model, &x, 0.4, 0, Mode::Global, None).unwrap();
        assert_eq!(ill.layer_ops, d);
        assert_eq!(model.layer_ops() - before, d);

        let before = model.layer_ops();
        let one = compress_oneshot(&model, &x, 0.4, 0, Mode::Global, None).unwrap();
        assert_eq!(one.layer_ops, d);
        assert_eq!(model.layer_ops() - before, d);

        // The iterative run already produced the compressed hidden
        // activations; the baseline needs another pass to get them.
        assert!(ill.mu_hidden.is_some());
        assert!(one.mu_hidden.is_none());
    }

    #[test]
    fn illc_mu_hidden_matches_forward_on_compressed_model() {
        let model = random_model(&[3, 6, 6, 1], 41);
        let x = random_batch(14, 3, 42);
        let r = compress_illc(&model, &x, 0.5, 2, Mode::Global, None).unwrap();
        let recomputed = r.compressed.model.hidden_post_activations(&x).unwrap();
        for (a, b) in r.mu_hidden.as_ref().unwrap().iter().zip(&recomputed) {
            for (p, q) in a.iter().zip(b.iter()) {
                assert!((p - q).abs() < 1e-9, "{p} vs {q}");
            }
        }
    }

    #[test]
    fn all_dead_layer_still_compresses() {
        let mut model = random_model(&[2, 4, 3, 1], 51);
        // Kill layer 1 for every input.
        model.biases_mut()[0].fill(-100.0);
        model.weights_mut()[0].mapv_inplace(|v| v * 1e-3);
        let x = random_batch(8, 2, 52);
        for method in [Method::Illc, Method::Oneshot] {
            let r = compress_with(&model, &x, 0.5, 0, method, Mode::Global, None).unwrap();
            r.compressed.validate().unwrap();
            assert_eq!(r.compressed.model.layer_sizes(), &[2, 2, 2, 1]);
        }
    }

    #[test]
    fn local_mode_produces_finite_weights_and_anchor_metadata() {
        let model = random_model(&[3, 6, 4, 1], 61);
        let x = random_batch(20, 3, 62);
        let anchor = LocalAnchor {
            x: x.row(0).to_vec(),
            sigma: 2.0,
        };
        for method in [Method::Illc, Method::Oneshot] {
            let r =
                compress_with(&model, &x, 0.5, 0, method, Mode::Local, Some(anchor.clone()))
                    .unwrap();
            assert!(r.compressed.local_anchor.is_some());
            assert_eq!(r.layer_ops, 2 * model.depth() as u64, "{method:?}");
            for w in r.compressed.model.weights() {
                assert!(w.iter().all(|v| v.is_finite()));
            }
        }
        // Global mode rejects an anchor; local requires one.
        assert!(compress_with(&model, &x, 0.5, 0, Method::Illc, Mode::Global, Some(anchor)).is_err());
        assert!(compress_with(&model, &x, 0.5, 0, Method::Illc, Mode::Local, None).is_err());
    }

    #[test]
    fn local_mode_with_gamma_one_keeps_outputs_when_anchored() {
        // Singleton clusters and ratios O_orig/O_mu = 1 wherever the cluster
        // activation is live: identical network output.
        let model = random_model(&[2, 5, 1], 71);
        let x = random_batch(10, 2, 72);
        let anchor = LocalAnchor {
            x: x.row(1).to_vec(),
            sigma: 1.5,
        };
        let r = compress_illc(&model, &x, 1.0, 0, Mode::Local, Some(anchor)).unwrap();
        let orig = model.predict(&x).unwrap();
        let comp = r.compressed.model.predict(&x).unwrap();
        for (a, b) in orig.iter().zip(comp.iter()) {
            assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }
    }

    #[test]
    fn model_hash_is_stable_and_discriminating() {
        let a = random_model(&[2, 3, 1], 81);
        let b = random_model(&[2, 3, 1], 82);
        assert_eq!(model_hash(&a).unwrap(), model_hash(&a.clone()).unwrap());
        assert_ne!(model_hash(&a).unwrap(), model_hash(&b).unwrap());
        assert_eq!(model_hash(&a).unwrap().len(), 64);
    }

    #[test]
    fn sidecar_roundtrip() {
        let model = random_model(&[2, 4, 1], 91);
        let x = random_batch(10, 2, 92);
        let r = compress_illc(&model, &x, 0.5, 9, Mode::Global, None).unwrap();
        let side = r.compressed.sidecar();
        let json = serde_json::to_string(&side).unwrap();
        let back: Sidecar = serde_json::from_str(&json).unwrap();
        assert_eq!(side, back);
        let rebuilt =
            ClusteredMlp::from_model_and_sidecar(r.compressed.model.clone(), back).unwrap();
        assert_eq!(rebuilt.clustering, r.compressed.clustering);
    }
}
