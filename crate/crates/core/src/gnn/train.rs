use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::backward::backward;
use super::forward::{forward, NodeScores};
use super::loss::{TaskWeights, Targets};
use super::optim::{AdamW, WarmupSchedule};
use super::{Activation, AttentionMode, ModelConfig, ModelParams};
use crate::encoders::{encode_graph, GraphEncoding, TextEncoder, DESK_DIM, PAPER_DIM};
use crate::error::{Error, Result};
use crate::graph::{build_graph, EvidenceGraph};
use crate::kg::{EvidenceText, KgStore};
use crate::metrics::{ddi_rate, set_metrics, MeanScores};
use crate::patient::PatientEHR;
use crate::retrieval::{gather_evidence, retrieve_candidates, Bm25Index, CandidateSet, DEFAULT_TOP_K};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    /// The published configuration.
    Paper,
    /// Small-dimension settings that train in minutes on one core.
    Desk,
}

impl std::str::FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper" => Ok(Preset::Paper),
            "desk" => Ok(Preset::Desk),
            other => Err(Error::Invalid(format!(
                "unknown preset {other:?}; expected paper or desk"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub dim: usize,
    pub layers: usize,
    pub attention_mode: AttentionMode,
    #[serde(default)]
    pub activation: Activation,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub warmup_steps: usize,
    pub weight_decay: f64,
    pub task_weights: TaskWeights,
    /// Number of BM25 candidates per patient.
    pub retrieval_k: usize,
    /// Cut-off for dev-set metrics.
    pub eval_k: usize,
    pub seed: u64,
}

impl TrainConfig {
    pub fn preset(preset: Preset) -> Self {
        let paper = TrainConfig {
            dim: PAPER_DIM,
            layers: 3,
            attention_mode: AttentionMode::Patient,
            activation: Activation::None,
            epochs: 5,
            batch_size: 1,
            lr: 1e-5,
            warmup_steps: 500,
            weight_decay: 0.01,
            task_weights: TaskWeights::default(),
            retrieval_k: DEFAULT_TOP_K,
            eval_k: 5,
            seed: 0,
        };
        match preset {
            Preset::Paper => paper,
            Preset::Desk => TrainConfig {
                dim: DESK_DIM,
                lr: 3e-3,
                warmup_steps: 100,
                epochs: 10,
                ..paper
            },
        }
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            dim: self.dim,
            layers: self.layers,
            attention: self.attention_mode,
            activation: self.activation,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let w = self.task_weights;
        if w.entity < 0.0 || w.evidence < 0.0 || ((w.entity + w.evidence) - 1.0).abs() > 1e-9 {
            return Err(Error::Invalid(format!(
                "task weights must be non-negative and sum to 1, got {} + {}",
                w.entity, w.evidence
            )));
        }
        if self.batch_size != 1 {
            return Err(Error::Invalid(format!(
                "batch_size {} is not supported; training runs one patient per step",
                self.batch_size
            )));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::Invalid(format!("learning rate must be positive, got {}", self.lr)));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(Error::Invalid("weight decay must be non-negative".into()));
        }
        if self.eval_k == 0 || self.retrieval_k == 0 {
            return Err(Error::Invalid("retrieval_k and eval_k must be positive".into()));
        }
        if self.dim < crate::encoders::MIN_DIM {
            return Err(Error::Invalid(format!("dim {} is too small", self.dim)));
        }
        Ok(())
    }
}

/// A patient with its candidate graph, encodings and targets.
#[derive(Debug, Clone)]
pub struct Instance {
    pub patient: PatientEHR,
    pub candidates: CandidateSet,
    /// Aligned with `candidates.all`.
    pub evidence: Vec<EvidenceText>,
    pub graph: EvidenceGraph,
    pub encoding: GraphEncoding,
    pub targets: Targets,
}

impl Instance {
    /// True when at least one candidate is a ground-truth drug.
    pub fn trainable(&self) -> bool {
        self.targets.entity.iter().any(|&y| y == 1.0)
    }

    /// Candidate drug ids in drug-node order.
    pub fn drug_ids(&self) -> impl Iterator<Item = &str> {
        self.graph
            .drug_node_indices()
            .iter()
            .map(|&i| self.graph.node(i).entity_id.as_str())
    }
}

/// Evidence node `i` is positive iff the drug it verbalizes is in `truth`.
pub fn evidence_labels(graph: &EvidenceGraph, truth: &[String]) -> Vec<f64> {
    graph
        .evidence_node_indices()
        .iter()
        .map(|&i| f64::from(truth.contains(&graph.node(i).entity_id)))
        .collect()
}

fn entity_labels(graph: &EvidenceGraph, truth: &[String]) -> Vec<f64> {
    graph
        .drug_node_indices()
        .iter()
        .map(|&i| f64::from(truth.contains(&graph.node(i).entity_id)))
        .collect()
}

/// Retrieval, graph construction and encoding for one patient.
pub fn build_instance(
    store: &KgStore,
    index: &Bm25Index,
    encoder: &dyn TextEncoder,
    patient: &PatientEHR,
    retrieval_k: usize,
) -> Result<Instance> {
    let candidates = retrieve_candidates(index, store, patient, retrieval_k);
    if candidates.is_empty() {
        return Err(Error::Degenerate(format!(
            "no candidate drugs retrieved for patient {:?} (query matched no drug document)",
            patient.id
        )));
    }
    let evidence = gather_evidence(store, &candidates)?;
    let graph = build_graph(store, &candidates, &evidence)?;
    let encoding = encode_graph(&graph, patient, store, encoder)?;
    let targets = Targets {
        entity: entity_labels(&graph, &patient.ground_truth_drugs),
        evidence: evidence_labels(&graph, &patient.ground_truth_drugs),
    };
    Ok(Instance {
        patient: patient.clone(),
        candidates,
        evidence,
        graph,
        encoding,
        targets,
    })
}

pub(crate) fn score_instance(inst: &Instance, params: &ModelParams, config: &ModelConfig) -> Result<NodeScores> {
    let cache = forward(
        &inst.graph,
        inst.encoding.nodes.view(),
        inst.encoding.patient.view(),
        params,
        config,
    )?;
    Ok(cache.scores)
}

/// Indices into `ids` ordered by descending probability, ties by id.
pub(crate) fn rank_order(ids: &[&str], probs: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..ids.len()).collect();
    order.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]).then_with(|| ids[a].cmp(ids[b])));
    order
}

fn evaluate_instances(
    instances: &[Instance],
    params: &ModelParams,
    config: &ModelConfig,
    store: &KgStore,
    k: usize,
) -> Result<MeanScores> {
    let mut m = MeanScores::default();
    for inst in instances {
        let scores = score_instance(inst, params, config)?;
        let ids: Vec<&str> = inst.drug_ids().collect();
        let top: Vec<String> = rank_order(&ids, &scores.entity_probs)
            .into_iter()
            .take(k)
            .map(|i| ids[i].to_string())
            .collect();
        let s = set_metrics(&top, &inst.patient.ground_truth_drugs)?;
        m.jaccard += s.jaccard;
        m.precision += s.precision;
        m.recall += s.recall;
        m.f1 += s.f1;
        m.ddi += ddi_rate(&top, &inst.patient.concomitant_drugs, store)?;
        m.hit_at_1 += crate::metrics::hit_at_1(&top, &inst.patient.ground_truth_drugs);
        m.average_precision += crate::metrics::average_precision(&top, &inst.patient.ground_truth_drugs);
    }
    let n = instances.len().max(1) as f64;
    for v in [
        &mut m.jaccard,
        &mut m.precision,
        &mut m.recall,
        &mut m.f1,
        &mut m.ddi,
        &mut m.hit_at_1,
        &mut m.average_precision,
    ] {
        *v /= n;
    }
    Ok(m)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub steps: usize,
    pub mean_loss: f64,
    pub lr: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dev: Option<MeanScores>,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub config: TrainConfig,
    pub parameters: usize,
    pub train_instances: usize,
    /// Training patients whose candidates contain no ground-truth drug.
    pub skipped_instances: usize,
    pub dev_instances: usize,
    pub epochs: Vec<EpochLog>,
    /// 1-based; the epoch whose parameters were returned.
    pub best_epoch: usize,
    pub seconds: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub params: ModelParams,
    pub log: TrainLog,
}

/// Builds instances for both splits and trains on them.
pub fn train(
    train_set: &[PatientEHR],
    dev_set: &[PatientEHR],
    store: &KgStore,
    index: &Bm25Index,
    encoder: &dyn TextEncoder,
    config: &TrainConfig,
) -> Result<TrainOutput> {
    config.validate()?;
    if train_set.is_empty() {
        return Err(Error::Invalid("empty training set".into()));
    }
    if encoder.dim() != config.dim {
        return Err(Error::Shape(format!(
            "encoder dimension {} does not match model dimension {}",
            encoder.dim(),
            config.dim
        )));
    }
    let build = |ps: &[PatientEHR]| -> Result<Vec<Instance>> {
        ps.iter()
            .filter_map(|p| match build_instance(store, index, encoder, p, config.retrieval_k) {
                Err(Error::Degenerate(msg)) => {
                    log::warn!("skipping patient: {msg}");
                    None
                }
                other => Some(other),
            })
            .collect()
    };
    let train_inst = build(train_set)?;
    let dev_inst = build(dev_set)?;
    train_instances(&train_inst, &dev_inst, store, config)
}

/// Trains on prebuilt instances. Untrainable instances are skipped and
/// counted. Returns the parameters of the best epoch by dev F1, or of the
/// last epoch when there is no dev set.
pub fn train_instances(
    train_set: &[Instance],
    dev_set: &[Instance],
    store: &KgStore,
    config: &TrainConfig,
) -> Result<TrainOutput> {
    config.validate()?;
    let start = Instant::now();
    let model = config.model_config();
    let usable: Vec<&Instance> = train_set.iter().filter(|i| i.trainable()).collect();
    if usable.is_empty() {
        return Err(Error::Invalid(
            "no training instance has a ground-truth drug among its candidates".into(),
        ));
    }
    for inst in &usable {
        if inst.encoding.patient.len() != config.dim {
            return Err(Error::Shape(format!(
                "instance encoded at dimension {}, model dimension {}",
                inst.encoding.patient.len(),
                config.dim
            )));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut params = ModelParams::init(&model, &mut rng);
    let schedule = WarmupSchedule {
        lr: config.lr,
        warmup_steps: config.warmup_steps,
    };
    let mut opt = AdamW::new(&params, schedule, config.weight_decay);
    let mut order: Vec<usize> = (0..usable.len()).collect();
    let mut epochs = Vec::with_capacity(config.epochs);
    let mut best: Option<(f64, usize, ModelParams)> = None;

    for epoch in 1..=config.epochs {
        let t0 = Instant::now();
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for &i in &order {
            let inst = usable[i];
            let g = backward(
                &inst.graph,
                inst.encoding.nodes.view(),
                inst.encoding.patient.view(),
                &params,
                &model,
                &inst.targets,
                config.task_weights,
            )?;
            total += g.loss;
            opt.step(&mut params, &g.params);
        }
        if !params.is_finite() {
            return Err(Error::Invalid(format!("parameters diverged in epoch {epoch}")));
        }
        let dev = if dev_set.is_empty() {
            None
        } else {
            Some(evaluate_instances(dev_set, &params, &model, store, config.eval_k)?)
        };
        let entry = EpochLog {
            epoch,
            steps: opt.steps_taken(),
            mean_loss: total / usable.len() as f64,
            lr: schedule.rate(opt.steps_taken()),
            dev,
            seconds: t0.elapsed().as_secs_f64(),
        };
        log::info!(
            "epoch {epoch}: loss {:.5}{}",
            entry.mean_loss,
            dev.map(|d| format!(", dev f1 {:.4}", d.f1)).unwrap_or_default()
        );
        let f1 = dev.map(|d| d.f1).unwrap_or(f64::NEG_INFINITY);
        let better = match &best {
            None => true,
            Some((b, _, _)) => dev.is_none() || f1 > *b,
        };
        if better {
            best = Some((f1, epoch, params.clone()));
        }
        epochs.push(entry);
    }

    let (best_epoch, params) = match best {
        Some((_, e, p)) => (e, p),
        None => (0, params),
    };
    Ok(TrainOutput {
        log: TrainLog {
            config: config.clone(),
            parameters: params.num_parameters(),
            train_instances: train_set.len(),
            skipped_instances: train_set.len() - usable.len(),
            dev_instances: dev_set.len(),
            epochs,
            best_epoch,
            seconds: start.elapsed().as_secs_f64(),
        },
        params,
    })
}
