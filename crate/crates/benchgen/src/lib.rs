//! Synthetic EHR benchmark generation over a drug knowledge graph, plus a
//! generator of synthetic knowledge graphs with planted structure.

pub mod config;
pub mod disease;
pub mod emit;
pub mod error;
pub mod history;
pub mod llm;
pub mod population;
pub mod symptoms;
pub mod synth;

pub use config::{AgeBand, GenConfig, Quotas};
pub use disease::{assign_disease, ApplicabilityFilter, RuleOnly, UsageCounter};
pub use emit::{audit, emit_benchmark, generate, stats_table, write_jsonl, AuditReport, Benchmark};
pub use error::{GenError, Result};
pub use history::{gen_history_and_truth, History, Infeasible};
pub use llm::{ChatClient, LlmFilter, LlmSymptoms};
pub use population::{allergen_pool, gen_patient_base};
pub use symptoms::{SymptomGenerator, TemplateSymptoms, WithFallback};
pub use synth::{
    planted_gen_config, synth_kg, SynthConfig, FIXTURE_CONTRAINDICATED_LABEL, FIXTURE_DISEASE_LABEL, GESTATION_LABEL,
};
