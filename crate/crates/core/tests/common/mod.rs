#![allow(dead_code)]

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tracedr_core::gnn::{Activation, AttentionMode, ModelConfig, ModelParams, Targets};
use tracedr_core::graph::{EvidenceGraph, GraphNode, NodeKind};

pub struct Toy {
    pub graph: EvidenceGraph,
    pub nodes: Array2<f64>,
    pub patient: Array1<f64>,
    pub params: ModelParams,
    pub config: ModelConfig,
    pub targets: Targets,
}

fn node(index: usize, kind: NodeKind) -> GraphNode {
    GraphNode {
        index,
        kind,
        entity_id: format!("x{index}"),
        surface_text: String::new(),
    }
}

/// Random small evidence graph: `c` drugs, their evidence nodes and a few
/// shared entities, plus random encodings, parameters and labels.
pub fn toy(seed: u64, dim: usize) -> Toy {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let c = rng.gen_range(1..=3);
    let e = rng.gen_range(1..=3);
    let mut nodes = Vec::new();
    for i in 0..c {
        nodes.push(node(i, NodeKind::Drug));
    }
    for i in 0..c {
        nodes.push(node(c + i, NodeKind::Evidence));
    }
    let kinds = [NodeKind::Disease, NodeKind::Ingredient, NodeKind::Contraindication];
    for i in 0..e {
        nodes.push(node(2 * c + i, kinds[rng.gen_range(0..3)]));
    }
    let mut edges: Vec<(usize, usize)> = (0..c).map(|i| (c + i, i)).collect();
    for ent in 0..e {
        for ev in 0..c {
            if rng.gen_bool(0.6) {
                edges.push((c + ev, 2 * c + ent));
            }
        }
    }
    let n = nodes.len();
    let graph = EvidenceGraph::from_parts(
        nodes,
        edges,
        (0..c).collect(),
        (c..2 * c).collect(),
    )
    .unwrap();

    let layers = rng.gen_range(1..=3);
    let config = ModelConfig {
        dim,
        layers,
        attention: if rng.gen_bool(0.75) {
            AttentionMode::Patient
        } else {
            AttentionMode::Uniform
        },
        activation: if rng.gen_bool(0.25) {
            Activation::Tanh
        } else {
            Activation::None
        },
    };
    let mut params = ModelParams::zeros(dim, layers);
    for (_, t) in params.tensors_mut() {
        for x in t.iter_mut() {
            *x = rng.gen_range(-0.6..0.6);
        }
    }
    let nodes = Array2::from_shape_fn((n, dim), |_| rng.gen_range(-1.0..1.0));
    let patient = Array1::from_shape_fn(dim, |_| rng.gen_range(-1.0..1.0));
    let mut entity: Vec<f64> = (0..c).map(|_| f64::from(rng.gen_bool(0.5))).collect();
    let pos = rng.gen_range(0..c);
    entity[pos] = 1.0;
    let evidence = entity.clone();
    Toy {
        graph,
        nodes,
        patient,
        params,
        config,
        targets: Targets { entity, evidence },
    }
}
