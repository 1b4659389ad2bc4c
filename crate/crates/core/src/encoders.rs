//! Patient serialization and initial node/patient encodings.
//!
//! The reference encoder is signed feature hashing over the default
//! tokenizer, followed by L2 normalization. An HTTP client for an external
//! encoder service is provided for plugging in a pretrained language model.

use std::sync::Arc;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::EvidenceGraph;
use crate::kg::KgStore;
use crate::patient::PatientEHR;
use crate::tokenize::{DefaultTokenizer, Tokenizer};

/// Field separator used when serializing a patient.
pub const FIELD_SEPARATOR: &str = "‖";

pub const MIN_DIM: usize = 8;
pub const DESK_DIM: usize = 128;
pub const PAPER_DIM: usize = 768;

/// Joins age, sex, population tags, allergies, current disease, symptoms,
/// past diseases and concomitant drugs with `‖`. Entity ids are rendered by
/// label; list fields are joined by `", "`.
pub fn serialize_patient(patient: &PatientEHR, store: &KgStore) -> String {
    let labels = |ids: &[String]| {
        ids.iter()
            .map(|id| store.label_or_id(id))
            .collect::<Vec<_>>()
            .join(", ")
    };
    let tags = patient
        .population_tags
        .iter()
        .map(|t| t.to_string())
        .collect::<Vec<_>>()
        .join(", ");
    [
        patient.age.to_string(),
        patient.sex.to_string(),
        tags,
        labels(&patient.allergies),
        store.label_or_id(&patient.current_disease).to_string(),
        patient.symptoms.join(", "),
        labels(&patient.past_diseases),
        labels(&patient.concomitant_drugs),
    ]
    .join(FIELD_SEPARATOR)
}

fn fnv1a(seed: u64, bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325 ^ seed.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    // splitmix64 finalizer so low and high bits are both usable
    h ^= h >> 30;
    h = h.wrapping_mul(0xbf58_476d_1ce4_e5b9);
    h ^= h >> 27;
    h = h.wrapping_mul(0x94d0_49bb_1331_11eb);
    h ^ (h >> 31)
}

/// Signed feature hashing of `text` into `dim` buckets, L2-normalized.
/// Text without tokens maps to the zero vector.
pub fn encode_text(text: &str, dim: usize, seed: u64) -> Vec<f64> {
    encode_tokens(&DefaultTokenizer.tokenize(text), dim, seed)
}

fn encode_tokens(tokens: &[String], dim: usize, seed: u64) -> Vec<f64> {
    assert!(dim >= MIN_DIM, "encoding dimension must be at least {MIN_DIM}");
    let mut v = vec![0.0; dim];
    for t in tokens {
        let h = fnv1a(seed, t.as_bytes());
        let bucket = (h % dim as u64) as usize;
        let sign = if h >> 63 == 0 { 1.0 } else { -1.0 };
        v[bucket] += sign;
    }
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
    v
}

pub trait TextEncoder: Send + Sync {
    fn dim(&self) -> usize;

    fn encode_batch(&self, texts: &[String]) -> Result<Vec<Vec<f64>>>;

    fn config(&self) -> EncoderConfig;
}

#[derive(Debug, Clone)]
pub struct HashEncoder {
    dim: usize,
    seed: u64,
    tokenizer: Arc<dyn Tokenizer>,
}

impl HashEncoder {
    pub fn new(dim: usize, seed: u64) -> Result<Self> {
        if dim < MIN_DIM {
            return Err(Error::Invalid(format!(
                "encoding dimension {dim} is below the minimum of {MIN_DIM}"
            )));
        }
        Ok(HashEncoder {
            dim,
            seed,
            tokenizer: Arc::new(DefaultTokenizer),
        })
    }

    pub fn encode(&self, text: &str) -> Vec<f64> {
        encode_tokens(&self.tokenizer.tokenize(text), self.dim, self.seed)
    }
}

impl TextEncoder for HashEncoder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn encode_batch(&self, texts: &[String]) -> Result<Vec<Vec<f64>>> {
        Ok(texts.iter().map(|t| self.encode(t)).collect())
    }

    fn config(&self) -> EncoderConfig {
        EncoderConfig::Hash {
            dim: self.dim,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum EncoderConfig {
    Hash { dim: usize, seed: u64 },
    External { url: String, dim: usize },
}

impl EncoderConfig {
    pub fn dim(&self) -> usize {
        match self {
            EncoderConfig::Hash { dim, .. } | EncoderConfig::External { dim, .. } => *dim,
        }
    }

    pub fn build(&self) -> Result<Box<dyn TextEncoder>> {
        match self {
            EncoderConfig::Hash { dim, seed } => Ok(Box::new(HashEncoder::new(*dim, *seed)?)),
            EncoderConfig::External { url, dim } => {
                let enc = ExternalEncoder::connect(url)?;
                if enc.dim() != *dim {
                    return Err(Error::Encoder(format!(
                        "service at {url} reports dimension {}, expected {dim}",
                        enc.dim()
                    )));
                }
                Ok(Box::new(enc))
            }
        }
    }
}

#[derive(Serialize)]
struct EncodeRequest<'a> {
    texts: &'a [String],
}

#[derive(Deserialize)]
struct EncodeResponse {
    vectors: Vec<Vec<f64>>,
}

#[derive(Deserialize)]
struct InfoResponse {
    dimension: usize,
}

/// Client for an encoder service exposing `GET /info` and `POST /encode`.
///
/// `GET /info` returns `{"dimension": n}`; `POST /encode` takes
/// `{"texts": [...]}` and returns `{"vectors": [[...], ...]}` in input order.
#[derive(Debug, Clone)]
pub struct ExternalEncoder {
    base: String,
    dim: usize,
    agent: ureq::Agent,
}

impl ExternalEncoder {
    pub fn connect(base_url: &str) -> Result<Self> {
        let base = base_url.trim_end_matches('/').to_string();
        let agent = ureq::Agent::new_with_defaults();
        let info: InfoResponse = agent
            .get(&format!("{base}/info"))
            .call()
            .and_then(|mut r| r.body_mut().read_json())
            .map_err(|e| Error::Encoder(format!("GET {base}/info: {e}")))?;
        if info.dimension < MIN_DIM {
            return Err(Error::Encoder(format!(
                "service dimension {} below minimum {MIN_DIM}",
                info.dimension
            )));
        }
        Ok(ExternalEncoder {
            base,
            dim: info.dimension,
            agent,
        })
    }
}

impl TextEncoder for ExternalEncoder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn encode_batch(&self, texts: &[String]) -> Result<Vec<Vec<f64>>> {
        let url = format!("{}/encode", self.base);
        let resp: EncodeResponse = self
            .agent
            .post(&url)
            .send_json(EncodeRequest { texts })
            .and_then(|mut r| r.body_mut().read_json())
            .map_err(|e| Error::Encoder(format!("POST {url}: {e}")))?;
        if resp.vectors.len() != texts.len() {
            return Err(Error::Encoder(format!(
                "{} vectors returned for {} texts",
                resp.vectors.len(),
                texts.len()
            )));
        }
        for v in &resp.vectors {
            if v.len() != self.dim {
                return Err(Error::Encoder(format!(
                    "vector of length {} from a {}-d service",
                    v.len(),
                    self.dim
                )));
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::Encoder("non-finite value in vector".into()));
            }
        }
        Ok(resp.vectors)
    }

    fn config(&self) -> EncoderConfig {
        EncoderConfig::External {
            url: self.base.clone(),
            dim: self.dim,
        }
    }
}

/// Initial encodings for one graph and its patient.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphEncoding {
    pub patient: Array1<f64>,
    /// Row `i` encodes node `i`.
    pub nodes: Array2<f64>,
}

pub fn encode_graph(
    graph: &EvidenceGraph,
    patient: &PatientEHR,
    store: &KgStore,
    encoder: &dyn TextEncoder,
) -> Result<GraphEncoding> {
    let mut texts = Vec::with_capacity(graph.len() + 1);
    texts.push(serialize_patient(patient, store));
    texts.extend(graph.nodes().iter().map(|n| n.surface_text.clone()));
    let vectors = encoder.encode_batch(&texts)?;
    let d = encoder.dim();
    let mut nodes = Array2::zeros((graph.len(), d));
    for (i, v) in vectors[1..].iter().enumerate() {
        nodes.row_mut(i).assign(&ndarray::ArrayView1::from(v.as_slice()));
    }
    Ok(GraphEncoding {
        patient: Array1::from(vectors[0].clone()),
        nodes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kg::{DiseaseRecord, KgRecord};
    use crate::patient::{PopulationTag, Sex};
    use rand::{Rng, SeedableRng};

    fn store() -> KgStore {
        KgStore::from_records(vec![KgRecord::Disease(DiseaseRecord::new(
            "D1",
            "soft tissue rheumatism",
        ))])
        .unwrap()
    }

    #[test]
    fn serializes_in_field_order() {
        let mut p = PatientEHR::new(26, Sex::Female, "D1");
        p.population_tags.push(PopulationTag::Pregnant);
        p.symptoms = vec!["joint pain".into(), "muscle aches".into()];
        assert_eq!(
            serialize_patient(&p, &store()),
            "26‖female‖pregnant‖‖soft tissue rheumatism‖joint pain, muscle aches‖‖"
        );
    }

    #[test]
    fn empty_optional_fields_keep_seven_separators() {
        let p = PatientEHR::new(40, Sex::Male, "D1");
        let s = serialize_patient(&p, &store());
        assert_eq!(s.matches(FIELD_SEPARATOR).count(), 7);
    }

    #[test]
    fn hashing_is_deterministic_and_normalized() {
        let a = encode_text("cough phlegm fever", 64, 7);
        assert_eq!(a, encode_text("cough phlegm fever", 64, 7));
        let norm: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-12);
        assert!(encode_text("  ", 64, 7).iter().all(|&x| x == 0.0));
        assert_ne!(a, encode_text("cough phlegm fever", 64, 8));
    }

    #[test]
    fn disjoint_token_sets_are_nearly_orthogonal() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let mut total = 0.0;
        let trials = 300;
        for _ in 0..trials {
            let words: Vec<String> = (0..16).map(|_| format!("w{}", rng.gen::<u64>())).collect();
            let a = encode_text(&words[..8].join(" "), 64, 1);
            let b = encode_text(&words[8..].join(" "), 64, 1);
            let cos: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
            assert!(cos.abs() < 0.6, "cos {cos}");
            total += cos.abs();
        }
        let mean = total / trials as f64;
        assert!(mean < 0.3, "mean |cos| {mean}");
    }

    #[test]
    fn small_dimension_is_rejected() {
        assert!(HashEncoder::new(4, 0).is_err());
    }
}
