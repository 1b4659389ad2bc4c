use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::Rng;
use tracedr_core::kg::KgStore;
use tracedr_core::PatientEHR;

use crate::error::{GenError, Result};

/// Concomitant drugs, past diseases and ground truth for one patient.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct History {
    pub concomitant_drugs: Vec<String>,
    pub past_diseases: Vec<String>,
    pub ground_truth_drugs: Vec<String>,
}

/// Why a (patient, disease) draw could not be completed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Infeasible {
    NoCandidates,
    NoInteractingDrug,
    AllPruned,
}

impl std::fmt::Display for Infeasible {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Infeasible::NoCandidates => "no drug treats the disease",
            Infeasible::NoInteractingDrug => "no safe drug interacts with a candidate",
            Infeasible::AllPruned => "every candidate was pruned",
        })
    }
}

/// Samples concomitant drugs that interact with at least one drug treating
/// `disease`, then prunes the treating drugs that interact with them or are
/// unsafe for the patient.
///
/// Concomitant drugs are drawn uniformly from drugs that do not themselves
/// treat the disease and are safe for the patient. Past diseases are all
/// other diseases treated by a concomitant drug that admit the patient's age
/// and sex.
pub fn gen_history_and_truth(
    patient: &PatientEHR,
    disease: &str,
    store: &KgStore,
    (min, max): (usize, usize),
    rng: &mut impl Rng,
) -> Result<std::result::Result<History, Infeasible>> {
    let candidates: Vec<&str> = store.drugs_treating(disease).map(|d| d.id.as_str()).collect();
    if candidates.is_empty() {
        return Ok(Err(Infeasible::NoCandidates));
    }
    let in_c: HashSet<&str> = candidates.iter().copied().collect();

    let mut pool: Vec<&str> = Vec::new();
    let mut seen: HashSet<&str> = HashSet::new();
    for c in &candidates {
        for partner in store.ddi_partners(c)? {
            let id = partner.id.as_str();
            if in_c.contains(id) || !seen.insert(id) {
                continue;
            }
            if !store.violates_safe_use(id, patient)? {
                pool.push(id);
            }
        }
    }
    if pool.is_empty() {
        return Ok(Err(Infeasible::NoInteractingDrug));
    }
    if min == 0 || min > max {
        return Err(GenError::Config(format!("concomitant range [{min}, {max}] is invalid")));
    }
    let n = rng.gen_range(min..=max).min(pool.len());
    let concomitant: Vec<String> = pool.choose_multiple(rng, n).map(|s| s.to_string()).collect();

    let mut truth = Vec::new();
    for c in &candidates {
        let mut keep = !store.violates_safe_use(c, patient)?;
        for m in &concomitant {
            if !keep {
                break;
            }
            keep = !store.has_ddi(c, m)?;
        }
        if keep {
            truth.push(c.to_string());
        }
    }
    if truth.is_empty() {
        return Ok(Err(Infeasible::AllPruned));
    }

    seen.clear();
    let mut past = Vec::new();
    for m in &concomitant {
        for d in &store.drug(m)?.treatments {
            if d == disease || !seen.insert(d) {
                continue;
            }
            if let Ok(rec) = store.disease(d) {
                if rec.admits(patient.age, patient.sex) {
                    past.push(d.clone());
                }
            }
        }
    }

    Ok(Ok(History {
        concomitant_drugs: concomitant,
        past_diseases: past,
        ground_truth_drugs: truth,
    }))
}
