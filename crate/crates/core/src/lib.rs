//! Traceable drug recommendation over a medical knowledge graph.
//!
//! The pipeline retrieves candidate drugs for a patient with BM25, verbalizes
//! each candidate's knowledge-graph facts into an evidence text, links the
//! candidates, their evidence and the entities the evidence mentions into a
//! small graph, and ranks drugs and evidence jointly with a patient-attention
//! GNN. The evidence ranked for each recommended drug is the explanation.

pub mod encoders;
pub mod error;
pub mod gnn;
pub mod graph;
pub mod kg;
pub mod metrics;
pub mod patient;
pub mod pipeline;
pub mod retrieval;
pub mod tokenize;

pub use error::{Error, Result};
pub use kg::{load_kg, KgStore};
pub use patient::{load_patients, read_patients, PatientEHR, PopulationTag, Sex};
pub use pipeline::{Checkpoint, Pipeline, RankedRecommendation, Recommendation};
