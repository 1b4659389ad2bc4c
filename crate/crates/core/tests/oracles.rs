use std::sync::Arc;

use ndarray::{array, Array2};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tracedr_core::gnn::{
    message_pass, multitask_loss, score_nodes, Activation, AttentionMode, LayerParams, Targets,
    TaskWeights,
};
use tracedr_core::graph::{EvidenceGraph, GraphNode, NodeKind};
use tracedr_core::kg::{DiseaseRecord, DrugRecord, IngredientRecord, KgRecord, KgStore};
use tracedr_core::metrics::{ddi_rate, evaluate, set_metrics};
use tracedr_core::patient::{PatientEHR, Sex};
use tracedr_core::pipeline::OracleRecommender;
use tracedr_core::retrieval::{build_index, drug_documents};
use tracedr_core::tokenize::{DefaultTokenizer, Tokenizer};

fn node(index: usize, kind: NodeKind) -> GraphNode {
    GraphNode {
        index,
        kind,
        entity_id: format!("n{index}"),
        surface_text: String::new(),
    }
}

/// drug 0, evidence 1, ingredient 2, disease 3; evidence links to all.
fn four_node_graph() -> EvidenceGraph {
    EvidenceGraph::from_parts(
        vec![
            node(0, NodeKind::Drug),
            node(1, NodeKind::Evidence),
            node(2, NodeKind::Ingredient),
            node(3, NodeKind::Disease),
        ],
        vec![(1, 0), (1, 2), (1, 3)],
        vec![0],
        vec![1],
    )
    .unwrap()
}

fn rand_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Array2<f64> {
    Array2::from_shape_fn((r, c), |_| rng.gen_range(-1.0..1.0))
}

// Straight-line reimplementation with explicit loops and edge scans.
fn naive_message_pass(
    edges: &[(usize, usize)],
    x: &[Vec<f64>],
    p: &[f64],
    wa: &[Vec<f64>],
    wm: &[Vec<f64>],
) -> Vec<Vec<f64>> {
    let n = x.len();
    let d = p.len();
    let mut out = x.to_vec();
    for c in 0..n {
        let mut nbrs = Vec::new();
        for &(a, b) in edges {
            if a == c {
                nbrs.push(b);
            }
            if b == c {
                nbrs.push(a);
            }
        }
        if nbrs.is_empty() {
            continue;
        }
        let mut scores = Vec::new();
        for &j in &nbrs {
            let mut s = 0.0;
            for r in 0..d {
                let mut proj = 0.0;
                for k in 0..d {
                    proj += wa[r][k] * x[j][k];
                }
                s += proj * p[r];
            }
            scores.push(s);
        }
        let total: f64 = scores.iter().map(|s| s.exp()).sum();
        let mut agg = vec![0.0; d];
        for (idx, &j) in nbrs.iter().enumerate() {
            let a = scores[idx].exp() / total;
            for k in 0..d {
                agg[k] += a * x[j][k];
            }
        }
        for r in 0..d {
            let mut m = 0.0;
            for k in 0..d {
                m += wm[r][k] * agg[k];
            }
            out[c][r] = x[c][r] + m;
        }
    }
    out
}

fn rows(a: &Array2<f64>) -> Vec<Vec<f64>> {
    a.rows().into_iter().map(|r| r.to_vec()).collect()
}

#[test]
fn message_pass_matches_naive_loop() {
    let g = four_node_graph();
    for seed in 0..10 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = 5;
        let x = rand_matrix(&mut rng, 4, d);
        let p = rand_matrix(&mut rng, 1, d).row(0).to_owned();
        let layer = LayerParams {
            w_att: rand_matrix(&mut rng, d, d),
            w_msg: rand_matrix(&mut rng, d, d),
        };
        let fast = message_pass(&g, x.view(), p.view(), &layer, AttentionMode::Patient, Activation::None)
            .unwrap();
        let slow = naive_message_pass(
            g.edges(),
            &rows(&x),
            &p.to_vec(),
            &rows(&layer.w_att),
            &rows(&layer.w_msg),
        );
        for (fr, sr) in fast.rows().into_iter().zip(&slow) {
            for (a, b) in fr.iter().zip(sr) {
                assert!((a - b).abs() < 1e-9, "{a} vs {b}");
            }
        }
    }
}

#[test]
fn score_nodes_matches_direct_bilinear_softmax() {
    let nodes: Vec<GraphNode> = (0..3)
        .map(|i| node(i, NodeKind::Drug))
        .chain((3..6).map(|i| node(i, NodeKind::Evidence)))
        .collect();
    let g = EvidenceGraph::from_parts(nodes, vec![(3, 0), (4, 1), (5, 2)], vec![0, 1, 2], vec![3, 4, 5])
        .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let d = 4;
    let x = rand_matrix(&mut rng, 6, d);
    let p = rand_matrix(&mut rng, 1, d).row(0).to_owned();
    let mut params = tracedr_core::gnn::ModelParams::zeros(d, 0);
    params.entity_head.w = rand_matrix(&mut rng, d, d);
    params.evidence_head.w = rand_matrix(&mut rng, d, d);
    params.entity_head.bias = 0.3;
    params.evidence_head.bias = -0.2;
    let s = score_nodes(&g, x.view(), p.view(), &params).unwrap();

    let bilinear = |i: usize, w: &Array2<f64>, b: f64| {
        let mut acc = b;
        for r in 0..d {
            for c in 0..d {
                acc += x[[i, r]] * w[[r, c]] * p[c];
            }
        }
        acc
    };
    let check = |idx: [usize; 3], w: &Array2<f64>, b: f64, got: &[f64]| {
        let raw: Vec<f64> = idx.iter().map(|&i| bilinear(i, w, b)).collect();
        let z: f64 = raw.iter().map(|r| r.exp()).sum();
        for (r, g) in raw.iter().zip(got) {
            assert!((r.exp() / z - g).abs() < 1e-9);
        }
        assert!((got.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    };
    check([0, 1, 2], &params.entity_head.w, 0.3, &s.entity_probs);
    check([3, 4, 5], &params.evidence_head.w, -0.2, &s.evidence_probs);

    // equal raw scores split the mass evenly
    let flat = EvidenceGraph::from_parts(
        vec![node(0, NodeKind::Drug), node(1, NodeKind::Drug), node(2, NodeKind::Evidence)],
        vec![(2, 0)],
        vec![0, 1],
        vec![2],
    )
    .unwrap();
    let same = array![[0.5, 0.5, 0.0, 0.0], [0.5, 0.5, 0.0, 0.0], [0.1, 0.2, 0.3, 0.4]];
    let s = score_nodes(&flat, same.view(), p.view(), &params).unwrap();
    assert!((s.entity_probs[0] - 0.5).abs() < 1e-12 && (s.entity_probs[1] - 0.5).abs() < 1e-12);
}

#[test]
fn loss_reference_values() {
    let t = Targets {
        entity: vec![1.0, 0.0],
        evidence: vec![1.0, 0.0],
    };
    let l = multitask_loss(&[0.5, 0.5], &[0.5, 0.5], &t, TaskWeights::default()).unwrap();
    assert!((l - std::f64::consts::LN_2).abs() < 1e-12);
    assert!((l - 0.6931).abs() < 1e-4);
    let eps = tracedr_core::gnn::PROB_EPS;
    let single = Targets {
        entity: vec![1.0],
        evidence: vec![1.0],
    };
    let l = multitask_loss(&[1.0 - eps], &[1.0 - eps], &single, TaskWeights::default()).unwrap();
    assert!(l < 1e-6);
    let w = TaskWeights::default();
    assert_eq!((w.entity, w.evidence), (0.7, 0.3));
}

fn random_store(rng: &mut ChaCha8Rng) -> KgStore {
    let words = [
        "cough", "fever", "phlegm", "ginger", "licorice", "pain", "joint", "rheumatism", "gastritis",
        "stomach", "heat", "cold", "blood", "liver", "kidney",
    ];
    let mut recs = Vec::new();
    let nd = rng.gen_range(3..8);
    for i in 0..nd {
        let label = (0..rng.gen_range(1..3))
            .map(|_| words[rng.gen_range(0..words.len())])
            .collect::<Vec<_>>()
            .join(" ");
        recs.push(KgRecord::Disease(DiseaseRecord::new(format!("D{i}"), label)));
    }
    let ni = rng.gen_range(2..6);
    for i in 0..ni {
        recs.push(KgRecord::Ingredient(IngredientRecord {
            id: format!("I{i}"),
            label: words[rng.gen_range(0..words.len())].to_string(),
            is_allergen: false,
        }));
    }
    for i in 0..rng.gen_range(2..12) {
        let mut d = DrugRecord::new(format!("R{i:02}"), format!("drug {i}"));
        for _ in 0..rng.gen_range(0..3) {
            d.treatments.push(format!("D{}", rng.gen_range(0..nd)));
        }
        for _ in 0..rng.gen_range(0..3) {
            d.ingredients.push(format!("I{}", rng.gen_range(0..ni)));
        }
        if rng.gen_bool(0.3) {
            d.contraindications.push(format!("D{}", rng.gen_range(0..nd)));
        }
        d.treatments.dedup();
        d.ingredients.dedup();
        recs.push(KgRecord::Drug(d));
    }
    KgStore::from_records(recs).unwrap()
}

// BM25 from its textbook definition, one document at a time.
fn brute_bm25(docs: &[Vec<String>], query: &[String]) -> Vec<f64> {
    let n = docs.len() as f64;
    let avgdl = docs.iter().map(|d| d.len()).sum::<usize>() as f64 / n;
    let mut uniq: Vec<&String> = Vec::new();
    for q in query {
        if !uniq.contains(&q) {
            uniq.push(q);
        }
    }
    docs.iter()
        .map(|doc| {
            let mut s = 0.0;
            for q in &uniq {
                let df = docs.iter().filter(|d| d.contains(q)).count() as f64;
                let idf = ((n - df + 0.5) / (df + 0.5)).ln().max(0.0);
                let tf = doc.iter().filter(|t| t == q).count() as f64;
                let dl = doc.len() as f64;
                s += idf * tf * 2.5 / (tf + 1.5 * (0.25 + 0.75 * dl / avgdl));
            }
            s
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn bm25_matches_brute_force(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let store = random_store(&mut rng);
        let index = build_index(&store, Arc::new(DefaultTokenizer)).unwrap();
        let docs: Vec<Vec<String>> = drug_documents(&store, &DefaultTokenizer)
            .into_iter()
            .map(|d| d.tokens)
            .collect();
        let query = DefaultTokenizer.tokenize("cough fever ginger pain pain joint heat");
        let fast = index.score_tokens(&query);
        let slow = brute_bm25(&docs, &query);
        for (a, b) in fast.iter().zip(&slow) {
            prop_assert!((a - b).abs() < 1e-9);
        }
        let hits = index.search("cough fever ginger pain pain joint heat", 50);
        for w in hits.windows(2) {
            prop_assert!(w[0].1 > w[1].1 || (w[0].1 == w[1].1 && w[0].0 < w[1].0));
        }
        prop_assert!(hits.iter().all(|(_, s)| *s > 0.0));
    }

    #[test]
    fn set_metric_identities(pred in prop::collection::vec(0u8..12, 0..6), truth in prop::collection::vec(0u8..12, 1..6)) {
        let pred: Vec<String> = pred.iter().map(|x| x.to_string()).collect();
        let truth: Vec<String> = truth.iter().map(|x| x.to_string()).collect();
        let m = set_metrics(&pred, &truth).unwrap();
        for v in [m.jaccard, m.precision, m.recall, m.f1] {
            prop_assert!((0.0..=1.0).contains(&v));
        }
        let inter = pred.iter().filter(|p| truth.contains(p)).count();
        prop_assert_eq!(m.f1 == 0.0, inter == 0);
        prop_assert!(m.jaccard <= m.precision.min(m.recall) + 1e-12);
        prop_assert!(m.precision.min(m.recall) <= m.f1 + 1e-12);
        prop_assert!((m.jaccard - m.f1 / (2.0 - m.f1)).abs() < 1e-12);
    }

    #[test]
    fn ddi_rate_ignores_order(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = 6;
        let mut recs: Vec<DrugRecord> = (0..n).map(|i| DrugRecord::new(format!("R{i}"), format!("d{i}"))).collect();
        for a in 0..n {
            for b in a + 1..n {
                if rng.gen_bool(0.3) {
                    recs[a].interactions.push(format!("R{b}"));
                }
            }
        }
        let store = KgStore::from_records(recs.into_iter().map(KgRecord::Drug)).unwrap();
        let mut ids: Vec<String> = (0..n).map(|i| format!("R{i}")).collect();
        let split = rng.gen_range(0..n);
        let base = ddi_rate(&ids[..split], &ids[split..], &store).unwrap();
        ids.reverse();
        let again = ddi_rate(&ids[..n - split], &ids[n - split..], &store).unwrap();
        prop_assert!((base - again).abs() < 1e-15);
        // exhaustive count
        let mut hits = 0;
        for a in 0..n {
            for b in a + 1..n {
                if store.has_ddi(&format!("R{a}"), &format!("R{b}")).unwrap() {
                    hits += 1;
                }
            }
        }
        prop_assert!((base - hits as f64 / 15.0).abs() < 1e-12);
    }
}

#[test]
fn oracle_evaluation_and_dump_recomputation() {
    let mut recs: Vec<DrugRecord> = (0..6).map(|i| DrugRecord::new(format!("R{i}"), format!("d{i}"))).collect();
    recs[0].interactions.push("R1".into());
    recs[2].interactions.push("R5".into());
    let mut records: Vec<KgRecord> = recs.into_iter().map(KgRecord::Drug).collect();
    records.push(KgRecord::Disease(DiseaseRecord::new("D0", "cold")));
    let store = KgStore::from_records(records).unwrap();
    let patients: Vec<PatientEHR> = (0..5)
        .map(|i| {
            let mut p = PatientEHR::new(30 + i, Sex::Female, "D0");
            p.id = format!("P{i}");
            p.ground_truth_drugs = vec![format!("R{}", i % 3), format!("R{}", 3 + i % 2)];
            p.concomitant_drugs = vec![format!("R{}", (i + 1) % 6)];
            p
        })
        .collect();
    let res = evaluate(&patients, &OracleRecommender, &store, 5).unwrap();
    assert_eq!(res.k, 5);
    assert_eq!(
        (res.means.jaccard, res.means.precision, res.means.recall, res.means.f1),
        (1.0, 1.0, 1.0, 1.0)
    );
    let truth_ddi: f64 = patients
        .iter()
        .map(|p| ddi_rate(&p.ground_truth_drugs, &p.concomitant_drugs, &store).unwrap())
        .sum::<f64>()
        / 5.0;
    assert!((res.means.ddi - truth_ddi).abs() < 1e-12);

    let half = |p: &PatientEHR, _k: usize| -> tracedr_core::Result<Vec<String>> {
        Ok(vec![p.ground_truth_drugs[0].clone(), "R5".to_string()])
    };
    let res = evaluate(&patients, &half, &store, 5).unwrap();
    let mut buf = Vec::new();
    res.write_csv(&mut buf).unwrap();
    let mut rdr = csv::Reader::from_reader(buf.as_slice());
    let mut sums = [0.0; 5];
    let mut n = 0;
    for row in rdr.records() {
        let row = row.unwrap();
        for (k, s) in sums.iter_mut().enumerate() {
            *s += row[k + 1].parse::<f64>().unwrap();
        }
        n += 1;
    }
    let m = res.means;
    for (s, mean) in sums.iter().zip([m.jaccard, m.precision, m.recall, m.f1, m.ddi]) {
        assert!((s / n as f64 - mean).abs() < 1e-12);
    }
}
