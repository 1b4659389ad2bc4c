//! End-to-end inference: retrieve, build the evidence graph, encode, score.

use std::collections::HashSet;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::encoders::{EncoderConfig, TextEncoder};
use crate::error::{Error, Result};
use crate::gnn::{build_instance, rank_order, score_instance, Instance, ModelConfig, ModelParams, TrainLog};
use crate::graph::GraphExcerpt;
use crate::kg::{EntityKind, KgStore, MentionRole};
use crate::metrics::Recommender;
use crate::patient::PatientEHR;
use crate::retrieval::{retrieve_candidates, Bm25Index, DEFAULT_TOP_K};

pub const CHECKPOINT_FORMAT: &str = "tracedr-model";
pub const CHECKPOINT_VERSION: u32 = 1;
pub const DEFAULT_TOP_EVIDENCE: usize = 3;

/// Trained model together with everything needed to reproduce its inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub model: ModelConfig,
    pub encoder: EncoderConfig,
    pub retrieval_k: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_log: Option<TrainLog>,
    pub params: ModelParams,
}

impl Checkpoint {
    pub fn new(model: ModelConfig, encoder: EncoderConfig, params: ModelParams) -> Self {
        Checkpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            model,
            encoder,
            retrieval_k: DEFAULT_TOP_K,
            train_log: None,
            params,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.format != CHECKPOINT_FORMAT {
            return Err(Error::Format(format!("not a model checkpoint: format {:?}", self.format)));
        }
        if self.version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!(
                "checkpoint version {} unsupported (expected {CHECKPOINT_VERSION})",
                self.version
            )));
        }
        if self.encoder.dim() != self.model.dim {
            return Err(Error::Shape(format!(
                "encoder dimension {} differs from model dimension {}",
                self.encoder.dim(),
                self.model.dim
            )));
        }
        self.params.validate(&self.model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(f);
        serde_json::to_writer(&mut w, self)?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let ckpt: Checkpoint = serde_json::from_reader(BufReader::new(f))?;
        ckpt.validate()?;
        Ok(ckpt)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvidenceScore {
    /// Evidence node index in the request's graph.
    pub node: usize,
    pub drug_id: String,
    pub score: f64,
    pub text: String,
    pub mentioned_entities: Vec<String>,
    pub mention_roles: Vec<MentionRole>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedRecommendation {
    pub rank: usize,
    pub drug_id: String,
    pub label: String,
    /// Entity-head probability.
    pub score: f64,
    /// Drug node index in the request's graph.
    pub node: usize,
    /// Sorted by descending score.
    pub supporting_evidence: Vec<EvidenceScore>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Recommendation {
    pub recommendations: Vec<RankedRecommendation>,
    pub candidate_count: usize,
    /// Nodes and edges around the returned drugs.
    pub graph: GraphExcerpt,
}

/// A field-level problem with a patient record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldIssue {
    pub field: String,
    pub message: String,
}

/// Checks that every id in the patient resolves to an entity of the
/// expected kind.
pub fn check_patient(store: &KgStore, patient: &PatientEHR) -> Vec<FieldIssue> {
    let mut issues = Vec::new();
    if patient.current_disease.trim().is_empty() {
        issues.push(FieldIssue {
            field: "current_disease".into(),
            message: "must not be empty".into(),
        });
    }
    let mut expect = |field: String, id: &str, kinds: &[EntityKind]| match store.entity_kind(id) {
        Some(k) if kinds.contains(&k) => {}
        Some(k) => issues.push(FieldIssue {
            field,
            message: format!("{id:?} is a {k:?}, expected {kinds:?}").to_lowercase(),
        }),
        None => issues.push(FieldIssue {
            field,
            message: format!("unknown id {id:?}"),
        }),
    };
    if !patient.current_disease.trim().is_empty() {
        expect("current_disease".into(), &patient.current_disease, &[EntityKind::Disease]);
    }
    for (i, id) in patient.past_diseases.iter().enumerate() {
        expect(format!("past_diseases[{i}]"), id, &[EntityKind::Disease]);
    }
    for (i, id) in patient.concomitant_drugs.iter().enumerate() {
        expect(format!("concomitant_drugs[{i}]"), id, &[EntityKind::Drug]);
    }
    for (i, id) in patient.allergies.iter().enumerate() {
        expect(format!("allergies[{i}]"), id, &[EntityKind::Drug, EntityKind::Ingredient]);
    }
    issues
}

/// Frozen model plus the artifacts it reads. Safe to share across threads.
pub struct Pipeline {
    pub store: KgStore,
    pub index: Bm25Index,
    pub encoder: Box<dyn TextEncoder>,
    pub model: ModelConfig,
    pub params: ModelParams,
    pub retrieval_k: usize,
}

impl std::fmt::Debug for Pipeline {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Pipeline")
            .field("drugs", &self.store.drugs().len())
            .field("model", &self.model)
            .field("encoder", &self.encoder.config())
            .finish()
    }
}

impl Pipeline {
    pub fn new(
        store: KgStore,
        index: Bm25Index,
        encoder: Box<dyn TextEncoder>,
        model: ModelConfig,
        params: ModelParams,
        retrieval_k: usize,
    ) -> Result<Self> {
        params.validate(&model)?;
        if encoder.dim() != model.dim {
            return Err(Error::Shape(format!(
                "encoder dimension {} differs from model dimension {}",
                encoder.dim(),
                model.dim
            )));
        }
        Ok(Pipeline {
            store,
            index,
            encoder,
            model,
            params,
            retrieval_k,
        })
    }

    pub fn from_checkpoint(store: KgStore, index: Bm25Index, ckpt: Checkpoint) -> Result<Self> {
        ckpt.validate()?;
        let encoder = ckpt.encoder.build()?;
        Pipeline::new(store, index, encoder, ckpt.model, ckpt.params, ckpt.retrieval_k)
    }

    pub fn instance(&self, patient: &PatientEHR) -> Result<Instance> {
        build_instance(&self.store, &self.index, self.encoder.as_ref(), patient, self.retrieval_k)
    }

    /// Top-`top_k` drugs, each with up to `top_evidence` adjacent evidence
    /// nodes ranked by evidence probability.
    pub fn recommend(&self, patient: &PatientEHR, top_k: usize, top_evidence: usize) -> Result<Recommendation> {
        if top_k == 0 {
            return Err(Error::Invalid("top_k must be at least 1".into()));
        }
        let inst = self.instance(patient)?;
        let scores = score_instance(&inst, &self.params, &self.model)?;
        let graph = &inst.graph;
        let drug_nodes = graph.drug_node_indices();
        let ids: Vec<&str> = inst.drug_ids().collect();
        let ev_pos: std::collections::HashMap<usize, usize> = graph
            .evidence_node_indices()
            .iter()
            .enumerate()
            .map(|(k, &n)| (n, k))
            .collect();

        let mut recs = Vec::new();
        for (rank, i) in rank_order(&ids, &scores.entity_probs).into_iter().take(top_k).enumerate() {
            let node = drug_nodes[i];
            let mut support: Vec<EvidenceScore> = graph
                .neighbors(node)
                .iter()
                .filter_map(|n| ev_pos.get(n).map(|&k| (*n, k)))
                .map(|(n, k)| {
                    let ev = &inst.evidence[k];
                    EvidenceScore {
                        node: n,
                        drug_id: ev.drug_id.clone(),
                        score: scores.evidence_probs[k],
                        text: ev.text.clone(),
                        mentioned_entities: ev.mentioned_entities.clone(),
                        mention_roles: ev.mention_roles.clone(),
                    }
                })
                .collect();
            support.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.node.cmp(&b.node)));
            support.truncate(top_evidence);
            recs.push(RankedRecommendation {
                rank: rank + 1,
                drug_id: ids[i].to_string(),
                label: self.store.label_or_id(ids[i]).to_string(),
                score: scores.entity_probs[i],
                node,
                supporting_evidence: support,
            });
        }
        let chosen: Vec<usize> = recs.iter().map(|r| r.node).collect();
        Ok(Recommendation {
            candidate_count: ids.len(),
            graph: graph.excerpt(&chosen),
            recommendations: recs,
        })
    }
}

impl Recommender for Pipeline {
    fn rank(&self, patient: &PatientEHR, k: usize) -> Result<Vec<String>> {
        Ok(self
            .recommend(patient, k, 0)?
            .recommendations
            .into_iter()
            .map(|r| r.drug_id)
            .collect())
    }
}

/// Ranks drugs by BM25 score alone.
#[derive(Debug, Clone, Copy)]
pub struct Bm25Baseline<'a> {
    pub index: &'a Bm25Index,
    pub store: &'a KgStore,
}

impl Recommender for Bm25Baseline<'_> {
    fn rank(&self, patient: &PatientEHR, k: usize) -> Result<Vec<String>> {
        let c = retrieve_candidates(self.index, self.store, patient, k);
        Ok(c.bm25_top.into_iter().map(|(id, _)| id).collect())
    }
}

/// Returns the ground truth; useful as an upper bound and in tests.
#[derive(Debug, Clone, Copy, Default)]
pub struct OracleRecommender;

impl Recommender for OracleRecommender {
    fn rank(&self, patient: &PatientEHR, k: usize) -> Result<Vec<String>> {
        let mut seen = HashSet::new();
        Ok(patient
            .ground_truth_drugs
            .iter()
            .filter(|d| seen.insert(d.as_str()))
            .take(k)
            .cloned()
            .collect())
    }
}
