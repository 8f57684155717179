//! Compression of trained multi-layer perceptrons by clustering hidden-neuron
//! activation profiles, with faithfulness metrics and argumentation-graph export.
//!
//! The crate provides two compression strategies over the same merge rules:
//!
//! - [`compress::compress_oneshot`] clusters every hidden layer from the
//!   activations of the *original* network and merges all layers at once.
//! - [`compress::compress_illc`] walks the layers in order, re-deriving each
//!   layer's activations from the already-compressed prefix so that every
//!   layer compensates the error introduced by the previous one.
//!
//! Around that core sit a dense MLP representation ([`mlp::Mlp`]), a WDBC
//! dataset loader ([`data`]), a mini-batch SGD trainer ([`train`]), a seeded
//! k-means implementation ([`cluster`]), unfaithfulness and complexity
//! metrics ([`metrics`]), and extraction of quantitative bipolar argumentation
//! frameworks from (compressed) networks ([`qbaf`]).
//!
//! All arithmetic is `f64`. Every source of randomness is an explicitly
//! seeded [`rng::SplitMix64`] stream, so identical inputs and seeds produce
//! identical outputs, bit for bit.

pub mod cluster;
pub mod compress;
pub mod data;
pub mod error;
pub mod kernel;
pub mod metrics;
pub mod mlp;
pub mod qbaf;
pub mod rng;
pub mod train;

pub use cluster::{cluster_layer, kmeans, KmeansOutput, LayerClustering};
pub use compress::{
    compress_illc, compress_oneshot, model_hash, ClusteredMlp, CompressionResult, LocalAnchor,
    Method, Mode, Sidecar,
};
pub use data::{load_wdbc, split, Dataset, Standardizer};
pub use error::{Error, Result};
pub use metrics::{evaluate, EvalReport};
pub use mlp::{ActivationStack, Mlp};
pub use qbaf::Qbaf;
pub use train::{train, TrainConfig, TrainRun};
