use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::Rng;
use tracedr_core::kg::{DiseaseRecord, KgStore};
use tracedr_core::PatientEHR;

use crate::error::{GenError, Result};

/// Second-stage judgement of whether a disease is plausible for a patient,
/// applied after the demographic rules.
pub trait ApplicabilityFilter {
    fn judge(&self, patient: &PatientEHR, disease: &DiseaseRecord) -> Result<bool>;
}

/// Accepts everything the demographic rules admit.
#[derive(Debug, Clone, Copy, Default)]
pub struct RuleOnly;

impl ApplicabilityFilter for RuleOnly {
    fn judge(&self, _: &PatientEHR, _: &DiseaseRecord) -> Result<bool> {
        Ok(true)
    }
}

/// Per-disease assignment counts with a hard cap.
#[derive(Debug, Clone)]
pub struct UsageCounter {
    max: usize,
    counts: HashMap<String, usize>,
}

impl UsageCounter {
    pub fn new(max_per_disease: usize) -> Self {
        UsageCounter {
            max: max_per_disease,
            counts: HashMap::new(),
        }
    }

    pub fn count(&self, disease: &str) -> usize {
        self.counts.get(disease).copied().unwrap_or(0)
    }

    pub fn available(&self, disease: &str) -> bool {
        self.count(disease) < self.max
    }

    pub fn max(&self) -> usize {
        self.max
    }

    fn take(&mut self, disease: &str) {
        *self.counts.entry(disease.to_string()).or_default() += 1;
    }

    /// Returns a slot taken by a patient that was later discarded.
    pub fn release(&mut self, disease: &str) {
        if let Some(c) = self.counts.get_mut(disease) {
            *c = c.saturating_sub(1);
        }
    }

    pub fn counts(&self) -> &HashMap<String, usize> {
        &self.counts
    }
}

/// Diseases that could ever be assigned: at least one drug treats them.
pub fn treatable(store: &KgStore) -> Vec<&DiseaseRecord> {
    store
        .diseases()
        .iter()
        .filter(|d| store.drugs_treating(&d.id).next().is_some())
        .collect()
}

/// Uniform draw among treatable diseases that admit the patient's age and
/// sex, are below the usage cap, and pass `filter`. Takes one usage slot.
///
/// A failing filter call is logged and treated as acceptance, since the
/// demographic rules already passed.
pub fn assign_disease(
    patient: &PatientEHR,
    store: &KgStore,
    filter: &dyn ApplicabilityFilter,
    usage: &mut UsageCounter,
    rng: &mut impl Rng,
) -> Result<String> {
    let mut pool: Vec<&DiseaseRecord> = treatable(store)
        .into_iter()
        .filter(|d| usage.available(&d.id) && d.admits(patient.age, patient.sex))
        .collect();
    pool.shuffle(rng);
    for d in pool {
        let ok = filter.judge(patient, d).unwrap_or_else(|e| {
            log::warn!("applicability filter failed for {}: {e}; keeping rule decision", d.id);
            true
        });
        if ok {
            usage.take(&d.id);
            return Ok(d.id.clone());
        }
    }
    Err(GenError::NoApplicableDisease {
        age: patient.age,
        sex: patient.sex.to_string(),
    })
}
