use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

use super::forward::{forward, ForwardCache};
use super::loss::{multitask_loss_grad, TaskWeights, Targets};
use super::{Activation, AttentionMode, HeadParams, ModelConfig, ModelParams};
use crate::error::Result;
use crate::graph::EvidenceGraph;

#[derive(Debug, Clone)]
pub struct Gradients {
    pub loss: f64,
    /// Same layout as the model parameters.
    pub params: ModelParams,
    pub cache: ForwardCache,
}

/// Loss only, for finite-difference checks and validation.
pub fn loss(
    graph: &EvidenceGraph,
    nodes: ArrayView2<f64>,
    patient: ArrayView1<f64>,
    params: &ModelParams,
    config: &ModelConfig,
    targets: &Targets,
    weights: TaskWeights,
) -> Result<f64> {
    let cache = forward(graph, nodes, patient, params, config)?;
    let (l, _, _) = multitask_loss_grad(
        &cache.scores.entity_probs,
        &cache.scores.evidence_probs,
        targets,
        weights,
    )?;
    Ok(l)
}

// softmax backward: dz_i = q_i (g_i - Σ_j q_j g_j)
fn softmax_backward(q: &[f64], g: &[f64]) -> Vec<f64> {
    let dot: f64 = q.iter().zip(g).map(|(a, b)| a * b).sum();
    q.iter().zip(g).map(|(a, b)| a * (b - dot)).collect()
}

fn head_backward(
    head: &HeadParams,
    grad: &mut HeadParams,
    x: &Array2<f64>,
    dx: &mut Array2<f64>,
    patient: ArrayView1<f64>,
    idx: &[usize],
    dz: &[f64],
) {
    let a = head.w.dot(&patient);
    let mut xs = Array1::<f64>::zeros(patient.len());
    for (&i, &d) in idx.iter().zip(dz) {
        dx.row_mut(i).scaled_add(d, &a);
        xs.scaled_add(d, &x.row(i));
    }
    outer_add(&mut grad.w, xs.view(), patient);
    grad.bias += dz.iter().sum::<f64>();
}

fn outer_add(m: &mut Array2<f64>, a: ArrayView1<f64>, b: ArrayView1<f64>) {
    for (i, &ai) in a.iter().enumerate() {
        if ai != 0.0 {
            m.row_mut(i).scaled_add(ai, &b);
        }
    }
}

/// Exact gradients of the multitask loss with respect to every parameter.
pub fn backward(
    graph: &EvidenceGraph,
    nodes: ArrayView2<f64>,
    patient: ArrayView1<f64>,
    params: &ModelParams,
    config: &ModelConfig,
    targets: &Targets,
    weights: TaskWeights,
) -> Result<Gradients> {
    let cache = forward(graph, nodes, patient, params, config)?;
    let scores = &cache.scores;
    let (loss, g_ent, g_ev) =
        multitask_loss_grad(&scores.entity_probs, &scores.evidence_probs, targets, weights)?;

    let mut grads = params.zeros_like();
    let x_final = cache.final_nodes();
    let mut dx = Array2::<f64>::zeros(x_final.raw_dim());
    let dz_ent = softmax_backward(&scores.entity_probs, &g_ent);
    let dz_ev = softmax_backward(&scores.evidence_probs, &g_ev);
    head_backward(
        &params.entity_head,
        &mut grads.entity_head,
        x_final,
        &mut dx,
        patient,
        graph.drug_node_indices(),
        &dz_ent,
    );
    head_backward(
        &params.evidence_head,
        &mut grads.evidence_head,
        x_final,
        &mut dx,
        patient,
        graph.evidence_node_indices(),
        &dz_ev,
    );

    let (offsets, neighbors) = graph.csr();
    for (l, (layer, lc)) in params.layers.iter().zip(&cache.layers).enumerate().rev() {
        let mut g = dx;
        if config.activation == Activation::Tanh {
            g.zip_mut_with(&lc.output, |gi, &y| *gi *= 1.0 - y * y);
        }
        // residual path
        let mut dx_in = g.clone();
        // out = x + agg W_m^T
        let d_agg = g.dot(&layer.w_msg);
        grads.layers[l].w_msg = g.t().dot(&lc.agg);

        let mut ds = Array1::<f64>::zeros(graph.len());
        for n in 0..graph.len() {
            let (lo, hi) = (offsets[n], offsets[n + 1]);
            if lo == hi {
                continue;
            }
            let da = d_agg.row(n);
            let nb = &neighbors[lo..hi];
            let alpha = &lc.alpha[lo..hi];
            let mut dalpha = Vec::with_capacity(nb.len());
            for (&j, &a) in nb.iter().zip(alpha) {
                dx_in.row_mut(j).scaled_add(a, &da);
                dalpha.push(lc.input.row(j).dot(&da));
            }
            if config.attention == AttentionMode::Patient {
                let c: f64 = alpha.iter().zip(&dalpha).map(|(a, d)| a * d).sum();
                for ((&j, &a), &d) in nb.iter().zip(alpha).zip(&dalpha) {
                    ds[j] += a * (d - c);
                }
            }
        }
        if config.attention == AttentionMode::Patient {
            // s_j = x_j · u with u = W_a^T p
            for (j, &d) in ds.iter().enumerate() {
                if d != 0.0 {
                    dx_in.row_mut(j).scaled_add(d, &lc.u);
                }
            }
            let du = lc.input.t().dot(&ds);
            outer_add(&mut grads.layers[l].w_att, patient, du.view());
        }
        dx = dx_in;
    }

    Ok(Gradients {
        loss,
        params: grads,
        cache,
    })
}
