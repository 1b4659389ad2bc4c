//! Patient-attention GNN over evidence graphs.
//!
//! Per layer, each node `n` with neighborhood `N(n)` is updated as
//!
//! ```text
//! α_{n,j} = softmax_{j ∈ N(n)} ( (W_a x_j) · p )
//! x_n'    = x_n + W_m Σ_{j ∈ N(n)} α_{n,j} x_j
//! ```
//!
//! synchronously for all nodes; isolated nodes keep their encoding. After the
//! last layer, drug nodes and evidence nodes are scored with separate
//! bilinear heads `x^T W p + b`, each normalized by its own softmax, and
//! trained with a weighted sum of per-type binary cross-entropies.

mod backward;
mod forward;
mod loss;
mod optim;
mod params;
mod train;

pub use backward::{backward, loss, Gradients};
pub use forward::{
    forward, message_pass, patient_attention, score_nodes, ForwardCache, LayerCache, NodeScores,
};
pub use optim::{AdamW, WarmupSchedule};
pub use params::{HeadParams, LayerParams, ModelParams, TensorKind};
pub use loss::{bce_mean, multitask_loss, Targets, TaskWeights, PROB_EPS};
pub use train::{
    build_instance, evidence_labels, train, train_instances, EpochLog, Instance, Preset,
    TrainConfig, TrainLog, TrainOutput,
};
pub(crate) use train::{rank_order, score_instance};

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum AttentionMode {
    /// Softmax over patient-relevance scores.
    #[default]
    Patient,
    /// `1 / |N(n)|` for every neighbor.
    Uniform,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    None,
    /// `tanh` applied after each layer's residual update.
    Tanh,
}

/// Architecture switches shared by training and inference.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub dim: usize,
    pub layers: usize,
    #[serde(default)]
    pub attention: AttentionMode,
    #[serde(default)]
    pub activation: Activation,
}

impl ModelConfig {
    pub fn new(dim: usize, layers: usize) -> Self {
        ModelConfig {
            dim,
            layers,
            attention: AttentionMode::Patient,
            activation: Activation::None,
        }
    }
}
