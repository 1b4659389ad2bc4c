//! BM25 candidate retrieval over per-drug documents.
//!
//! Each drug document is the token multiset of the labels of its target
//! diseases, ingredients and contraindications. Scoring uses Okapi BM25 with
//! Robertson–Sparck-Jones IDF floored at zero:
//!
//! ```text
//! idf(t)      = max(0, ln((N - df(t) + 0.5) / (df(t) + 0.5)))
//! score(q, D) = Σ_{t ∈ set(q)} idf(t) · tf(t,D)·(k1+1) / (tf(t,D) + k1·(1 - b + b·|D|/avgdl))
//! ```
//!
//! Query terms are deduplicated before scoring.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kg::{EvidenceText, KgStore};
use crate::patient::PatientEHR;
use crate::tokenize::{DefaultTokenizer, Tokenizer, DEFAULT_TOKENIZER_NAME};

pub const BM25_K1: f64 = 1.5;
pub const BM25_B: f64 = 0.75;
pub const DEFAULT_TOP_K: usize = 50;

const INDEX_FORMAT: &str = "tracedr-bm25";
const INDEX_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct DrugDocument {
    pub drug_id: String,
    pub tokens: Vec<String>,
}

/// Builds the retrieval document for every drug in store order.
pub fn drug_documents(store: &KgStore, tokenizer: &dyn Tokenizer) -> Vec<DrugDocument> {
    store
        .drugs()
        .iter()
        .map(|drug| {
            let tokens = drug
                .treatments
                .iter()
                .chain(&drug.ingredients)
                .chain(&drug.contraindications)
                .filter_map(|id| store.label(id))
                .flat_map(|label| tokenizer.tokenize(label))
                .collect();
            DrugDocument {
                drug_id: drug.id.clone(),
                tokens,
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
struct Posting {
    doc: u32,
    tf: u32,
}

#[derive(Debug, Clone)]
pub struct Bm25Index {
    k1: f64,
    b: f64,
    doc_ids: Vec<String>,
    doc_lens: Vec<u32>,
    avgdl: f64,
    postings: HashMap<String, Vec<Posting>>,
    tokenizer: Arc<dyn Tokenizer>,
}

/// Builds the inverted index with the fixed parameters k1 = 1.5, b = 0.75.
pub fn build_index(store: &KgStore, tokenizer: Arc<dyn Tokenizer>) -> Result<Bm25Index> {
    let docs = drug_documents(store, tokenizer.as_ref());
    Bm25Index::from_documents(&docs, tokenizer)
}

impl Bm25Index {
    pub fn from_documents(docs: &[DrugDocument], tokenizer: Arc<dyn Tokenizer>) -> Result<Self> {
        if docs.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        let mut postings: HashMap<String, Vec<Posting>> = HashMap::new();
        let mut doc_lens = Vec::with_capacity(docs.len());
        for (i, doc) in docs.iter().enumerate() {
            let mut tf: BTreeMap<&str, u32> = BTreeMap::new();
            for t in &doc.tokens {
                *tf.entry(t.as_str()).or_default() += 1;
            }
            for (term, count) in tf {
                postings.entry(term.to_string()).or_default().push(Posting {
                    doc: i as u32,
                    tf: count,
                });
            }
            doc_lens.push(doc.tokens.len() as u32);
        }
        let total: u64 = doc_lens.iter().map(|&l| l as u64).sum();
        Ok(Bm25Index {
            k1: BM25_K1,
            b: BM25_B,
            doc_ids: docs.iter().map(|d| d.drug_id.clone()).collect(),
            avgdl: total as f64 / docs.len() as f64,
            doc_lens,
            postings,
            tokenizer,
        })
    }

    pub fn k1(&self) -> f64 {
        self.k1
    }

    pub fn b(&self) -> f64 {
        self.b
    }

    pub fn avgdl(&self) -> f64 {
        self.avgdl
    }

    pub fn num_docs(&self) -> usize {
        self.doc_ids.len()
    }

    pub fn doc_ids(&self) -> &[String] {
        &self.doc_ids
    }

    pub fn doc_len(&self, doc: usize) -> u32 {
        self.doc_lens[doc]
    }

    pub fn tokenizer(&self) -> &dyn Tokenizer {
        self.tokenizer.as_ref()
    }

    pub fn doc_freq(&self, term: &str) -> usize {
        self.postings.get(term).map_or(0, Vec::len)
    }

    pub fn idf(&self, term: &str) -> f64 {
        let n = self.num_docs() as f64;
        let df = self.doc_freq(term) as f64;
        ((n - df + 0.5) / (df + 0.5)).ln().max(0.0)
    }

    /// BM25 score of every document for the given query tokens.
    pub fn score_tokens(&self, query: &[String]) -> Vec<f64> {
        let mut scores = vec![0.0; self.num_docs()];
        let mut seen = HashSet::new();
        for term in query {
            if !seen.insert(term.as_str()) {
                continue;
            }
            let Some(list) = self.postings.get(term) else {
                continue;
            };
            let idf = self.idf(term);
            if idf == 0.0 {
                continue;
            }
            for p in list {
                let tf = p.tf as f64;
                let dl = self.doc_lens[p.doc as usize] as f64;
                let norm = self.k1 * (1.0 - self.b + self.b * dl / self.avgdl);
                scores[p.doc as usize] += idf * tf * (self.k1 + 1.0) / (tf + norm);
            }
        }
        scores
    }

    pub fn score_text(&self, query: &str) -> Vec<f64> {
        self.score_tokens(&self.tokenizer.tokenize(query))
    }

    /// Top-`k` documents with positive score, sorted by score descending and
    /// drug id ascending on ties.
    pub fn search(&self, query: &str, k: usize) -> Vec<(String, f64)> {
        let scores = self.score_text(query);
        let mut hits: Vec<(usize, f64)> = scores
            .into_iter()
            .enumerate()
            .filter(|&(_, s)| s > 0.0)
            .collect();
        hits.sort_by(|a, b| {
            b.1.total_cmp(&a.1)
                .then_with(|| self.doc_ids[a.0].cmp(&self.doc_ids[b.0]))
        });
        hits.truncate(k);
        hits.into_iter()
            .map(|(i, s)| (self.doc_ids[i].clone(), s))
            .collect()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = IndexFile {
            format: INDEX_FORMAT.to_string(),
            version: INDEX_VERSION,
            tokenizer: self.tokenizer.name().to_string(),
            k1: self.k1,
            b: self.b,
            doc_ids: self.doc_ids.clone(),
            doc_lens: self.doc_lens.clone(),
            postings: self
                .postings
                .iter()
                .map(|(t, ps)| (t.clone(), ps.iter().map(|p| [p.doc, p.tf]).collect()))
                .collect(),
        };
        let json = serde_json::to_vec(&file)?;
        fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let file: IndexFile = serde_json::from_slice(&bytes)?;
        if file.format != INDEX_FORMAT || file.version != INDEX_VERSION {
            return Err(Error::Format(format!(
                "expected {INDEX_FORMAT} v{INDEX_VERSION}, found {} v{}",
                file.format, file.version
            )));
        }
        if file.tokenizer != DEFAULT_TOKENIZER_NAME {
            return Err(Error::Format(format!("unknown tokenizer `{}`", file.tokenizer)));
        }
        if file.doc_ids.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        if file.doc_ids.len() != file.doc_lens.len() {
            return Err(Error::Format("doc_ids and doc_lens differ in length".into()));
        }
        let total: u64 = file.doc_lens.iter().map(|&l| l as u64).sum();
        Ok(Bm25Index {
            k1: file.k1,
            b: file.b,
            avgdl: total as f64 / file.doc_ids.len() as f64,
            doc_ids: file.doc_ids,
            doc_lens: file.doc_lens,
            postings: file
                .postings
                .into_iter()
                .map(|(t, ps)| (t, ps.into_iter().map(|[doc, tf]| Posting { doc, tf }).collect()))
                .collect(),
            tokenizer: Arc::new(DefaultTokenizer),
        })
    }
}

/// On-disk layout of a persisted index.
#[derive(Serialize, Deserialize)]
struct IndexFile {
    format: String,
    version: u32,
    tokenizer: String,
    k1: f64,
    b: f64,
    doc_ids: Vec<String>,
    doc_lens: Vec<u32>,
    /// term -> list of `[doc_ordinal, term_frequency]`
    postings: BTreeMap<String, Vec<[u32; 2]>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateSet {
    pub bm25_top: Vec<(String, f64)>,
    pub concomitant: Vec<String>,
    /// BM25 order followed by concomitant order, deduplicated.
    pub all: Vec<String>,
}

impl CandidateSet {
    pub fn new(bm25_top: Vec<(String, f64)>, concomitant: Vec<String>) -> Self {
        let mut seen = HashSet::new();
        let all = bm25_top
            .iter()
            .map(|(id, _)| id.clone())
            .chain(concomitant.iter().cloned())
            .filter(|id| seen.insert(id.clone()))
            .collect();
        CandidateSet {
            bm25_top,
            concomitant,
            all,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.all.is_empty()
    }
}

/// Query text: current-disease label followed by the symptoms.
pub fn patient_query(store: &KgStore, patient: &PatientEHR) -> String {
    let mut q = store.label_or_id(&patient.current_disease).to_string();
    for s in &patient.symptoms {
        q.push(' ');
        q.push_str(s);
    }
    q
}

pub fn retrieve_candidates(
    index: &Bm25Index,
    store: &KgStore,
    patient: &PatientEHR,
    k: usize,
) -> CandidateSet {
    let top = index.search(&patient_query(store, patient), k.max(1));
    CandidateSet::new(top, patient.concomitant_drugs.clone())
}

/// One verbalized evidence text per candidate, aligned with `candidates.all`.
pub fn gather_evidence(store: &KgStore, candidates: &CandidateSet) -> Result<Vec<EvidenceText>> {
    candidates.all.iter().map(|id| store.verbalize(id)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kg::{DiseaseRecord, DrugRecord, IngredientRecord, KgRecord};
    use crate::patient::Sex;

    fn store() -> KgStore {
        let mut recs = vec![
            KgRecord::Disease(DiseaseRecord::new("D1", "rheumatism")),
            KgRecord::Disease(DiseaseRecord::new("D2", "chronic cough")),
            KgRecord::Disease(DiseaseRecord::new("D3", "chronic gastritis")),
            KgRecord::Ingredient(IngredientRecord {
                id: "I1".into(),
                label: "ginger".into(),
                is_allergen: false,
            }),
        ];
        let drugs: [(&str, &[&str], &[&str]); 4] = [
            ("A", &["D1"], &["I1"]),
            ("B", &["D2"], &[]),
            ("C", &["D2", "D3"], &["I1"]),
            ("E", &[], &[]),
        ];
        for (id, t, i) in drugs {
            let mut d = DrugRecord::new(id, id);
            d.treatments = t.iter().map(|s| s.to_string()).collect();
            d.ingredients = i.iter().map(|s| s.to_string()).collect();
            recs.push(KgRecord::Drug(d));
        }
        KgStore::from_records(recs).unwrap()
    }

    #[test]
    fn index_metadata() {
        let idx = build_index(&store(), Arc::new(DefaultTokenizer)).unwrap();
        assert_eq!(idx.num_docs(), 4);
        assert_eq!((idx.k1(), idx.b()), (1.5, 0.75));
        // lengths: A=2, B=2, C=5, E=0
        assert_eq!(idx.avgdl(), 9.0 / 4.0);
    }

    #[test]
    fn empty_corpus_is_an_error() {
        let s = KgStore::from_records(vec![]).unwrap();
        assert!(matches!(
            build_index(&s, Arc::new(DefaultTokenizer)),
            Err(Error::EmptyCorpus)
        ));
    }

    #[test]
    fn exact_disease_match_ranks_first() {
        let s = store();
        let idx = build_index(&s, Arc::new(DefaultTokenizer)).unwrap();
        let p = PatientEHR::new(30, Sex::Male, "D1");
        let c = retrieve_candidates(&idx, &s, &p, 50);
        assert_eq!(c.bm25_top[0].0, "A");
        assert!(c.bm25_top.len() <= 4);
        assert!(c.bm25_top.windows(2).all(|w| w[0].1 >= w[1].1));
    }

    #[test]
    fn concomitant_drugs_are_appended_with_evidence() {
        let s = store();
        let idx = build_index(&s, Arc::new(DefaultTokenizer)).unwrap();
        let mut p = PatientEHR::new(30, Sex::Male, "D1");
        p.concomitant_drugs = vec!["E".into(), "B".into()];
        let c = retrieve_candidates(&idx, &s, &p, 50);
        assert!(!c.bm25_top.iter().any(|(id, _)| id == "E" || id == "B"));
        assert_eq!(c.all.len(), c.bm25_top.len() + 2);
        let ev = gather_evidence(&s, &c).unwrap();
        assert_eq!(ev.len(), c.all.len());
        for (e, id) in ev.iter().zip(&c.all) {
            assert_eq!(&e.drug_id, id);
        }
        assert_eq!(ev.last().unwrap().drug_id, "B");
        let e_ev = &ev[ev.len() - 2];
        assert_eq!(e_ev.text, "Treatments: | Contraindications: | Ingredients:");
    }

    #[test]
    fn unknown_candidate_fails_evidence() {
        let s = store();
        let c = CandidateSet::new(vec![], vec!["nope".into()]);
        assert!(gather_evidence(&s, &c).is_err());
    }

    #[test]
    fn save_and_load_preserve_scores() {
        let s = store();
        let idx = build_index(&s, Arc::new(DefaultTokenizer)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("idx.json");
        idx.save(&path).unwrap();
        let back = Bm25Index::load(&path).unwrap();
        for q in ["chronic cough", "ginger rheumatism", "gastritis"] {
            assert_eq!(idx.score_text(q), back.score_text(q));
        }
        let bad = dir.path().join("bad.json");
        std::fs::write(&bad, br#"{"format":"other","version":1}"#).unwrap();
        assert!(Bm25Index::load(&bad).is_err());
    }
}
