mod common;

use proptest::prelude::*;
use tracedr_core::gnn::{backward, loss, ModelParams, TaskWeights};

use common::{toy, Toy};

const H: f64 = 1e-4;
const TOL: f64 = 1e-3;

fn loss_at(t: &Toy, params: &ModelParams, w: TaskWeights) -> f64 {
    loss(
        &t.graph,
        t.nodes.view(),
        t.patient.view(),
        params,
        &t.config,
        &t.targets,
        w,
    )
    .unwrap()
}

/// Largest relative error over every parameter entry, with the error
/// measured as |a - f| / max(|a|, |f|, 1e-6).
fn worst_relative_error(t: &Toy, w: TaskWeights) -> (f64, String) {
    let g = backward(
        &t.graph,
        t.nodes.view(),
        t.patient.view(),
        &t.params,
        &t.config,
        &t.targets,
        w,
    )
    .unwrap();
    let analytic: Vec<(String, Vec<f64>)> = g
        .params
        .tensors()
        .into_iter()
        .map(|(name, _, v)| (name, v.to_vec()))
        .collect();
    let mut worst = (0.0, String::new());
    let mut probe = t.params.clone();
    for (ti, (name, a)) in analytic.iter().enumerate() {
        for (i, &ai) in a.iter().enumerate() {
            let orig = probe.tensors_mut()[ti].1[i];
            probe.tensors_mut()[ti].1[i] = orig + H;
            let up = loss_at(t, &probe, w);
            probe.tensors_mut()[ti].1[i] = orig - H;
            let down = loss_at(t, &probe, w);
            probe.tensors_mut()[ti].1[i] = orig;
            let f = (up - down) / (2.0 * H);
            let err = (ai - f).abs() / ai.abs().max(f.abs()).max(1e-6);
            if err > worst.0 {
                worst = (err, format!("{name}[{i}] analytic {ai:e} numeric {f:e}"));
            }
        }
    }
    worst
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn gradients_match_central_differences(seed in any::<u64>()) {
        let t = toy(seed, 5);
        let (err, at) = worst_relative_error(&t, TaskWeights::default());
        prop_assert!(err <= TOL, "relative error {err} at {at}");
    }
}

#[test]
fn six_node_graph_all_parameters() {
    // seed chosen so the graph has exactly six nodes
    let seed = (0..1000u64).find(|&s| toy(s, 4).graph.len() == 6).unwrap();
    let t = toy(seed, 4);
    assert_eq!(t.graph.len(), 6);
    let (err, at) = worst_relative_error(&t, TaskWeights::default());
    assert!(err <= TOL, "relative error {err} at {at}");
}

#[test]
fn evidence_head_unused_without_evidence_weight() {
    let informative = |t: &Toy| t.targets.entity.iter().any(|&y| y == 0.0);
    let seed = (0..1000u64).find(|&s| informative(&toy(s, 6))).unwrap();
    let t = toy(seed, 6);
    let w = TaskWeights {
        entity: 1.0,
        evidence: 0.0,
    };
    let g = backward(
        &t.graph,
        t.nodes.view(),
        t.patient.view(),
        &t.params,
        &t.config,
        &t.targets,
        w,
    )
    .unwrap();
    assert!(g.params.evidence_head.w.iter().all(|&x| x == 0.0));
    assert_eq!(g.params.evidence_head.bias, 0.0);
    assert!(g.params.entity_head.w.iter().any(|&x| x != 0.0));
}

#[test]
fn gradient_descent_lowers_loss() {
    let seed = (0..1000u64)
        .find(|&s| toy(s, 6).targets.entity.iter().any(|&y| y == 0.0))
        .unwrap();
    let mut t = toy(seed, 6);
    let w = TaskWeights::default();
    let start = loss_at(&t, &t.params, w);
    for _ in 0..50 {
        let g = backward(
            &t.graph,
            t.nodes.view(),
            t.patient.view(),
            &t.params,
            &t.config,
            &t.targets,
            w,
        )
        .unwrap();
        let grads = g.params.tensors().into_iter().map(|(_, _, v)| v.to_vec()).collect::<Vec<_>>();
        for ((_, p), gv) in t.params.tensors_mut().into_iter().zip(grads) {
            for (x, d) in p.iter_mut().zip(gv) {
                *x -= 0.05 * d;
            }
        }
    }
    let end = loss_at(&t, &t.params, w);
    assert!(end < start, "loss {start} -> {end}");
}
