//! Quantitative bipolar argumentation frameworks extracted from networks.
//!
//! Every neuron (or cluster-neuron) becomes an argument; every nonzero
//! weight becomes an edge, an attack when negative and a support when
//! positive. An argument's base score lives in the activation output space:
//! `beta(a) = phi(bias(a))`. The pre-activation form of the base score (the
//! bias itself) is stored alongside, because the ReLU inverse collapses
//! negative biases to zero and a saturated sigmoid loses them to rounding;
//! forward evaluation uses the stored form so the framework's strengths
//! reproduce the network's activations exactly.

use std::fmt::Write as _;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::compress::ClusteredMlp;
use crate::error::{Error, Result};
use crate::mlp::{affine, Activation, Mlp, OutputActivation};

/// Edge polarity, determined by the weight sign.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Polarity {
    Attack,
    Support,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Argument {
    pub id: usize,
    /// Layer index: 0 for inputs, `d + 1` for outputs.
    pub layer: usize,
    pub name: String,
    /// Base score in the output space of the layer's activation.
    pub base_score: f64,
    /// The pre-activation form: the bias, or the input value for layer 0.
    pub base_preact: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub from: usize,
    pub to: usize,
    pub weight: f64,
    pub polarity: Polarity,
}

/// An argumentation graph with the layered structure of its source network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Qbaf {
    pub layer_sizes: Vec<usize>,
    pub hidden_activation: Activation,
    pub output_activation: OutputActivation,
    pub arguments: Vec<Argument>,
    pub edges: Vec<Edge>,
}

impl Qbaf {
    /// Extracts the framework from a network. Input arguments get base
    /// score 0; supply an input via [`Qbaf::from_mlp_with_input`] to anchor
    /// them to concrete values.
    pub fn from_mlp(model: &Mlp) -> Self {
        Self::build(model, None)
    }

    pub fn from_mlp_with_input(model: &Mlp, x: &Array1<f64>) -> Result<Self> {
        if x.len() != model.input_dim() {
            return Err(Error::Dimension(format!(
                "input has {} values, model expects {}",
                x.len(),
                model.input_dim()
            )));
        }
        Ok(Self::build(model, Some(x)))
    }

    /// Convenience for compressed models.
    pub fn from_clustered(compressed: &ClusteredMlp) -> Self {
        Self::build(&compressed.model, None)
    }

    fn build(model: &Mlp, input: Option<&Array1<f64>>) -> Self {
        let sizes = model.layer_sizes().to_vec();
        let d = model.depth();
        let mut arguments = Vec::with_capacity(sizes.iter().sum());
        let mut first_id_of_layer = Vec::with_capacity(sizes.len());
        let mut id = 0usize;
        for (layer, &width) in sizes.iter().enumerate() {
            first_id_of_layer.push(id);
            for j in 0..width {
                let (name, base_preact, base_score) = if layer == 0 {
                    let v = input.map_or(0.0, |x| x[j]);
                    (format!("in{j}"), v, v)
                } else if layer == d + 1 {
                    let b = model.biases()[layer - 1][j];
                    (format!("out{j}"), b, model.output_activation().apply(b))
                } else {
                    let b = model.biases()[layer - 1][j];
                    (format!("h{layer}_{j}"), b, model.activation().apply(b))
                };
                arguments.push(Argument {
                    id,
                    layer,
                    name,
                    base_score,
                    base_preact,
                });
                id += 1;
            }
        }

        let mut edges = Vec::new();
        for l in 0..=d {
            let w = &model.weights()[l];
            for i in 0..sizes[l] {
                for j in 0..sizes[l + 1] {
                    let weight = w[[j, i]];
                    if weight == 0.0 {
                        continue;
                    }
                    edges.push(Edge {
                        from: first_id_of_layer[l] + i,
                        to: first_id_of_layer[l + 1] + j,
                        weight,
                        polarity: if weight < 0.0 {
                            Polarity::Attack
                        } else {
                            Polarity::Support
                        },
                    });
                }
            }
        }

        Qbaf {
            layer_sizes: sizes,
            hidden_activation: model.activation(),
            output_activation: model.output_activation(),
            arguments,
            edges,
        }
    }

    /// Structural checks: arguments laid out layer by layer, every edge
    /// between consecutive layers with a nonzero weight of matching polarity.
    pub fn validate(&self) -> Result<()> {
        let expected: usize = self.layer_sizes.iter().sum();
        if self.arguments.len() != expected {
            return Err(Error::Invalid(format!(
                "{} arguments for layer sizes {:?}",
                self.arguments.len(),
                self.layer_sizes
            )));
        }
        let mut id = 0usize;
        for (layer, &width) in self.layer_sizes.iter().enumerate() {
            for _ in 0..width {
                let a = &self.arguments[id];
                if a.id != id || a.layer != layer {
                    return Err(Error::Invalid(format!(
                        "argument {id} out of order (claims id {} layer {})",
                        a.id, a.layer
                    )));
                }
                id += 1;
            }
        }
        for e in &self.edges {
            let from = self
                .arguments
                .get(e.from)
                .ok_or_else(|| Error::Invalid(format!("dangling edge from {}", e.from)))?;
            let to = self
                .arguments
                .get(e.to)
                .ok_or_else(|| Error::Invalid(format!("dangling edge to {}", e.to)))?;
            if to.layer != from.layer + 1 {
                return Err(Error::Invalid(format!(
                    "edge {} -> {} skips layers ({} -> {})",
                    e.from, e.to, from.layer, to.layer
                )));
            }
            if e.weight == 0.0 || !e.weight.is_finite() {
                return Err(Error::Invalid(format!(
                    "edge {} -> {} has weight {}",
                    e.from, e.to, e.weight
                )));
            }
            let expected = if e.weight < 0.0 {
                Polarity::Attack
            } else {
                Polarity::Support
            };
            if e.polarity != expected {
                return Err(Error::Invalid(format!(
                    "edge {} -> {} has weight {} but polarity {:?}",
                    e.from, e.to, e.weight, e.polarity
                )));
            }
        }
        Ok(())
    }

    /// Forward semantics: strength of every argument, layer by layer.
    ///
    /// Inputs take their given values; each later argument aggregates
    /// `sum(w * strength(parent)) + base_preact` and applies the layer's
    /// activation. Evaluation reconstructs the dense weight matrices, so
    /// strengths match the source network's activations bit for bit.
    pub fn forward(&self, inputs: &[f64]) -> Result<Vec<f64>> {
        self.validate()?;
        if inputs.len() != self.layer_sizes[0] {
            return Err(Error::Dimension(format!(
                "{} input values for {} input arguments",
                inputs.len(),
                self.layer_sizes[0]
            )));
        }
        let d = self.layer_sizes.len() - 2;
        let mut first_id_of_layer = Vec::with_capacity(self.layer_sizes.len());
        let mut acc = 0usize;
        for &w in &self.layer_sizes {
            first_id_of_layer.push(acc);
            acc += w;
        }

        // Dense per-layer weights and biases from the edge list.
        let mut weights: Vec<Array2<f64>> = (0..=d)
            .map(|l| Array2::zeros((self.layer_sizes[l + 1], self.layer_sizes[l])))
            .collect();
        for e in &self.edges {
            let from = &self.arguments[e.from];
            let l = from.layer;
            let i = e.from - first_id_of_layer[l];
            let j = e.to - first_id_of_layer[l + 1];
            weights[l][[j, i]] = e.weight;
        }
        let biases: Vec<Array1<f64>> = (0..=d)
            .map(|l| {
                let start = first_id_of_layer[l + 1];
                Array1::from_iter(
                    self.arguments[start..start + self.layer_sizes[l + 1]]
                        .iter()
                        .map(|a| a.base_preact),
                )
            })
            .collect();

        let mut strengths = Vec::with_capacity(self.arguments.len());
        strengths.extend_from_slice(inputs);
        let mut cur = Array2::from_shape_vec((1, inputs.len()), inputs.to_vec())
            .expect("row vector");
        for l in 0..=d {
            let h = affine(&cur, &weights[l], &biases[l]);
            cur = if l < d {
                h.mapv(|v| self.hidden_activation.apply(v))
            } else {
                h.mapv(|v| self.output_activation.apply(v))
            };
            strengths.extend(cur.iter().copied());
        }
        Ok(strengths)
    }

    /// Strengths of the output-layer arguments only.
    pub fn output_strengths(&self, inputs: &[f64]) -> Result<Vec<f64>> {
        let all = self.forward(inputs)?;
        let out = *self.layer_sizes.last().unwrap();
        Ok(all[all.len() - out..].to_vec())
    }

    /// Graphviz DOT rendering: red attack edges, green support edges, edge
    /// labels with four decimals.
    pub fn to_dot(&self) -> String {
        let mut s = String::new();
        s.push_str("digraph qbaf {\n  rankdir=LR;\n  node [shape=ellipse];\n");
        for a in &self.arguments {
            let _ = writeln!(
                s,
                "  a{} [label=\"{}\\n\u{3b2}={:.4}\"];",
                a.id, a.name, a.base_score
            );
        }
        for e in &self.edges {
            let color = match e.polarity {
                Polarity::Attack => "red",
                Polarity::Support => "green",
            };
            let _ = writeln!(
                s,
                "  a{} -> a{} [color={color}, label=\"{:.4}\"];",
                e.from, e.to, e.weight
            );
        }
        s.push_str("}\n");
        s
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(json: &str) -> Result<Self> {
        let qbaf: Qbaf = serde_json::from_str(json)?;
        qbaf.validate()?;
        Ok(qbaf)
    }
}
