//! The GNN with joint local/global message passing and sparse structure
//! learning.
//!
//! Each layer, in order: score every node's existing neighbours and
//! inter-sentence candidates with a shared attention head, normalise the
//! scores per node, sample a hard selector for each candidate through a
//! binary Gumbel-softmax, promote the selected candidates to global
//! edges, then aggregate local and global messages and update node
//! states. Selected edges persist through later layers. The relaxed
//! selector probabilities of local pairs feed an entropy regulariser
//! that discourages drift away from the syntactic topology.

mod forward;
mod sampler;

pub use forward::{
    candidate_scores, entropy_regularizer, forward, forward_local_only, global_aggregate,
    joint_update, local_aggregate, readout_and_loss, EdgeWeightRef, ForwardResult,
    ForwardSettings, GlobalEdgeRef, LayerNodeIds, LocalStructure, PairKind, PairTable,
    ParamNodes, SelectorPath,
};
pub use sampler::{gumbel_from_uniform, sample_gumbel, selector_sample, SelectorSample};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::textpipe::EmbeddingTable;

/// Per-layer trainable tensors: the three message-mixing matrices, the
/// shared attention projection, and the attention vector.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerParams {
    pub w1: Tensor,
    pub w2: Tensor,
    pub w3: Tensor,
    pub w_att: Tensor,
    /// 2b x 1 attention vector applied to `[h_v W | h_j W]`.
    pub attn: Tensor,
}

/// All trainable tensors of the model.
///
/// The embedding table is part of the parameter set: rows start from the
/// loaded (or random) initialisation and are fine-tuned with everything
/// else, so out-of-vocabulary words get a trainable row of their own.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub embedding: Tensor,
    /// d0 -> b projection applied once before the first layer.
    pub input_proj: Tensor,
    pub layers: Vec<LayerParams>,
    pub readout_w: Tensor,
    pub readout_b: Tensor,
}

impl ModelParams {
    /// Glorot-initialised parameters around a given embedding table.
    pub fn init(
        embeddings: &EmbeddingTable,
        hidden: usize,
        num_layers: usize,
        num_classes: usize,
        seed: u64,
    ) -> Self {
        assert!(hidden >= 1 && num_layers >= 1 && num_classes >= 2);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d0 = embeddings.d0();
        let input_proj = Tensor::glorot(d0, hidden, &mut rng);
        let layers = (0..num_layers)
            .map(|_| LayerParams {
                w1: Tensor::glorot(hidden, hidden, &mut rng),
                w2: Tensor::glorot(hidden, hidden, &mut rng),
                w3: Tensor::glorot(hidden, hidden, &mut rng),
                w_att: Tensor::glorot(hidden, hidden, &mut rng),
                attn: Tensor::glorot(2 * hidden, 1, &mut rng),
            })
            .collect();
        let readout_w = Tensor::glorot(hidden, num_classes, &mut rng);
        let readout_b = Tensor::zeros(1, num_classes);
        ModelParams {
            embedding: embeddings.matrix.clone(),
            input_proj,
            layers,
            readout_w,
            readout_b,
        }
    }

    pub fn hidden(&self) -> usize {
        self.input_proj.cols()
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn num_classes(&self) -> usize {
        self.readout_w.cols()
    }

    /// Stable `(name, tensor)` enumeration; the optimizer, gradient map
    /// and checkpoint all rely on this order.
    pub fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out = vec![
            ("embedding".to_string(), &self.embedding),
            ("input_proj".to_string(), &self.input_proj),
        ];
        for (k, layer) in self.layers.iter().enumerate() {
            out.push((format!("layer{k}.w1"), &layer.w1));
            out.push((format!("layer{k}.w2"), &layer.w2));
            out.push((format!("layer{k}.w3"), &layer.w3));
            out.push((format!("layer{k}.w_att"), &layer.w_att));
            out.push((format!("layer{k}.attn"), &layer.attn));
        }
        out.push(("readout_w".to_string(), &self.readout_w));
        out.push(("readout_b".to_string(), &self.readout_b));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = vec![&mut self.embedding, &mut self.input_proj];
        for layer in &mut self.layers {
            out.push(&mut layer.w1);
            out.push(&mut layer.w2);
            out.push(&mut layer.w3);
            out.push(&mut layer.w_att);
            out.push(&mut layer.attn);
        }
        out.push(&mut self.readout_w);
        out.push(&mut self.readout_b);
        out
    }
}

/// Structural and sampling hyperparameters consumed by the forward pass.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HyperParams {
    /// Gumbel-softmax temperature, > 0.
    pub tau: f64,
    /// Selector threshold in [0, 1]; 0 promotes every candidate, 1 none.
    pub threshold: f64,
    /// Regulariser trade-off, >= 0.
    pub lambda: f64,
    /// Dropout rate in [0, 1], applied after each layer in training.
    pub dropout: f64,
}

impl HyperParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0) {
            return Err(Error::config(format!("tau must be > 0, got {}", self.tau)));
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(Error::config(format!("threshold must be in [0, 1], got {}", self.threshold)));
        }
        if self.lambda < 0.0 {
            return Err(Error::config(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if !(0.0..=1.0).contains(&self.dropout) {
            return Err(Error::config(format!("dropout must be in [0, 1], got {}", self.dropout)));
        }
        Ok(())
    }
}

/// Decomposed objective of one forward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct LossBreakdown {
    pub prediction: f64,
    /// Entropy regulariser per layer, empty when structure learning is
    /// off (WordCooc mode).
    pub regularizers: Vec<f64>,
    pub lambda: f64,
    /// `prediction + lambda * mean(regularizers)`.
    pub total: f64,
}
