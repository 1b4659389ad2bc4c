use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

use super::{Activation, AttentionMode, LayerParams, ModelConfig, ModelParams};
use crate::error::{Error, Result};
use crate::graph::EvidenceGraph;

fn softmax_in_place(xs: &mut [f64]) {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in xs.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in xs.iter_mut() {
        *x /= sum;
    }
}

pub(crate) fn softmax(xs: &[f64]) -> Vec<f64> {
    let mut out = xs.to_vec();
    if !out.is_empty() {
        softmax_in_place(&mut out);
    }
    out
}

/// Attention of one node over its neighborhood:
/// `softmax_j((W_a x_j) · p)` for `j` in `neighbors`.
pub fn patient_attention(
    nodes: ArrayView2<f64>,
    patient: ArrayView1<f64>,
    w_att: ArrayView2<f64>,
    neighbors: &[usize],
) -> Result<Vec<f64>> {
    if neighbors.is_empty() {
        return Err(Error::Invalid("attention over an empty neighborhood".into()));
    }
    let mut scores: Vec<f64> = neighbors
        .iter()
        .map(|&j| w_att.dot(&nodes.row(j)).dot(&patient))
        .collect();
    softmax_in_place(&mut scores);
    Ok(scores)
}

/// Intermediate values of one layer, kept for the backward pass.
#[derive(Debug, Clone)]
pub struct LayerCache {
    pub input: Array2<f64>,
    /// `W_a^T p`, so that the attention score of node `j` is `x_j · u`.
    pub u: Array1<f64>,
    /// Attention weights laid out like the graph's CSR neighbor array.
    pub alpha: Vec<f64>,
    pub agg: Array2<f64>,
    pub output: Array2<f64>,
}

fn check_shapes(graph: &EvidenceGraph, x: &ArrayView2<f64>, p: &ArrayView1<f64>, d: usize) -> Result<()> {
    if x.nrows() != graph.len() {
        return Err(Error::Shape(format!(
            "{} node rows for a graph of {} nodes",
            x.nrows(),
            graph.len()
        )));
    }
    if x.ncols() != d || p.len() != d {
        return Err(Error::Shape(format!(
            "node width {} / patient width {} for model dimension {d}",
            x.ncols(),
            p.len()
        )));
    }
    Ok(())
}

pub(crate) fn layer_forward(
    graph: &EvidenceGraph,
    x: ArrayView2<f64>,
    p: ArrayView1<f64>,
    layer: &LayerParams,
    mode: AttentionMode,
    activation: Activation,
) -> Result<LayerCache> {
    let d = layer.w_att.nrows();
    check_shapes(graph, &x, &p, d)?;
    let (offsets, neighbors) = graph.csr();
    let u = layer.w_att.t().dot(&p);
    let scores = x.dot(&u);

    let mut alpha = vec![0.0; neighbors.len()];
    let mut agg = Array2::<f64>::zeros(x.raw_dim());
    for n in 0..graph.len() {
        let (lo, hi) = (offsets[n], offsets[n + 1]);
        if lo == hi {
            continue;
        }
        let weights = &mut alpha[lo..hi];
        match mode {
            AttentionMode::Patient => {
                for (w, &j) in weights.iter_mut().zip(&neighbors[lo..hi]) {
                    *w = scores[j];
                }
                softmax_in_place(weights);
            }
            AttentionMode::Uniform => weights.fill(1.0 / (hi - lo) as f64),
        }
        let mut row = agg.row_mut(n);
        for (&w, &j) in weights.iter().zip(&neighbors[lo..hi]) {
            row.scaled_add(w, &x.row(j));
        }
    }

    let mut output = &x + &agg.dot(&layer.w_msg.t());
    if activation == Activation::Tanh {
        output.mapv_inplace(f64::tanh);
    }
    Ok(LayerCache {
        input: x.to_owned(),
        u,
        alpha,
        agg,
        output,
    })
}

/// One synchronous message-passing layer; returns the updated node matrix.
pub fn message_pass(
    graph: &EvidenceGraph,
    nodes: ArrayView2<f64>,
    patient: ArrayView1<f64>,
    layer: &LayerParams,
    mode: AttentionMode,
    activation: Activation,
) -> Result<Array2<f64>> {
    Ok(layer_forward(graph, nodes, patient, layer, mode, activation)?.output)
}

/// Raw scores and per-type softmax probabilities.
///
/// Entity entries align with `graph.drug_node_indices()`, evidence entries
/// with `graph.evidence_node_indices()`.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeScores {
    pub entity_logits: Vec<f64>,
    pub entity_probs: Vec<f64>,
    pub evidence_logits: Vec<f64>,
    pub evidence_probs: Vec<f64>,
}

pub fn score_nodes(
    graph: &EvidenceGraph,
    nodes: ArrayView2<f64>,
    patient: ArrayView1<f64>,
    params: &ModelParams,
) -> Result<NodeScores> {
    if graph.drug_node_indices().is_empty() {
        return Err(Error::Invalid("no drug nodes to score".into()));
    }
    if graph.evidence_node_indices().is_empty() {
        return Err(Error::Invalid("no evidence nodes to score".into()));
    }
    check_shapes(graph, &nodes, &patient, params.dim())?;
    let a_ent = params.entity_head.w.dot(&patient);
    let a_ev = params.evidence_head.w.dot(&patient);
    let logits = |idx: &[usize], a: &Array1<f64>, bias: f64| -> Vec<f64> {
        idx.iter().map(|&i| nodes.row(i).dot(a) + bias).collect()
    };
    let entity_logits = logits(graph.drug_node_indices(), &a_ent, params.entity_head.bias);
    let evidence_logits = logits(graph.evidence_node_indices(), &a_ev, params.evidence_head.bias);
    Ok(NodeScores {
        entity_probs: softmax(&entity_logits),
        evidence_probs: softmax(&evidence_logits),
        entity_logits,
        evidence_logits,
    })
}

#[derive(Debug, Clone)]
pub struct ForwardCache {
    pub layers: Vec<LayerCache>,
    pub scores: NodeScores,
}

impl ForwardCache {
    pub fn final_nodes(&self) -> &Array2<f64> {
        &self.layers.last().expect("at least one layer").output
    }
}

/// Runs all layers and both heads, keeping what backward needs.
pub fn forward(
    graph: &EvidenceGraph,
    nodes: ArrayView2<f64>,
    patient: ArrayView1<f64>,
    params: &ModelParams,
    config: &ModelConfig,
) -> Result<ForwardCache> {
    params.validate(config)?;
    let mut layers: Vec<LayerCache> = Vec::with_capacity(config.layers);
    for layer in &params.layers {
        let input = match layers.last() {
            Some(prev) => prev.output.view(),
            None => nodes,
        };
        let cache = layer_forward(graph, input, patient, layer, config.attention, config.activation)?;
        layers.push(cache);
    }
    let final_nodes = match layers.last() {
        Some(l) => l.output.view(),
        None => nodes,
    };
    let scores = score_nodes(graph, final_nodes, patient, params)?;
    if layers.is_empty() {
        // zero-layer models still expose their input through the cache
        layers.push(LayerCache {
            input: nodes.to_owned(),
            u: Array1::zeros(patient.len()),
            alpha: Vec::new(),
            agg: Array2::zeros(nodes.raw_dim()),
            output: nodes.to_owned(),
        });
    }
    Ok(ForwardCache { layers, scores })
}
