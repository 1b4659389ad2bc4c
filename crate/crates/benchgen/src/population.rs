use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::SliceRandom;
use rand::Rng;
use tracedr_core::kg::KgStore;
use tracedr_core::{PatientEHR, PopulationTag, Sex};

use crate::config::GenConfig;
use crate::error::Result;

/// Ingredients flagged as allergens, or every ingredient when none are.
pub fn allergen_pool(store: &KgStore) -> Vec<String> {
    let flagged: Vec<String> = store
        .ingredients()
        .iter()
        .filter(|i| i.is_allergen)
        .map(|i| i.id.clone())
        .collect();
    if flagged.is_empty() {
        store.ingredients().iter().map(|i| i.id.clone()).collect()
    } else {
        flagged
    }
}

/// Draws age, sex, population tags and allergies. Disease, symptoms,
/// history and ground truth are left empty.
pub fn gen_patient_base(config: &GenConfig, allergens: &[String], rng: &mut impl Rng) -> Result<PatientEHR> {
    let (r_preg, r_bf) = config.conditional_rates()?;
    let bands = &config.age_distribution;
    let pick = WeightedIndex::new(bands.iter().map(|b| b.weight))
        .map_err(|e| crate::error::GenError::Config(format!("age distribution: {e}")))?;
    let band = bands[pick.sample(rng)];
    let age = rng.gen_range(band.min..band.max);
    let sex = if rng.gen_bool(config.female_ratio) {
        Sex::Female
    } else {
        Sex::Male
    };
    let mut p = PatientEHR::new(age, sex, "");

    let in_window = |(lo, hi): (u32, u32)| sex == Sex::Female && age >= lo && age <= hi;
    let mut pregnant = false;
    if in_window(config.pregnant_ages) && rng.gen_bool(r_preg) {
        pregnant = true;
        p.population_tags.push(PopulationTag::Pregnant);
    }
    if !pregnant && in_window(config.breastfeeding_ages) && rng.gen_bool(r_bf) {
        p.population_tags.push(PopulationTag::Breastfeeding);
    }
    if rng.gen_bool(config.quotas.reduced_liver) {
        p.population_tags.push(PopulationTag::ReducedLiver);
    }
    if rng.gen_bool(config.quotas.reduced_renal) {
        p.population_tags.push(PopulationTag::ReducedRenal);
    }
    if age < config.child_below_age {
        p.population_tags.push(PopulationTag::ChildBelowAge(config.child_below_age));
    }
    if age >= config.elderly_from_age {
        p.population_tags.push(PopulationTag::ElderlyAboveAge(config.elderly_from_age));
    }
    if rng.gen_bool(config.quotas.allergies) && !allergens.is_empty() {
        let (lo, hi) = config.allergies_per_patient;
        let n = rng.gen_range(lo..=hi).min(allergens.len());
        p.allergies = allergens.choose_multiple(rng, n).cloned().collect();
    }
    Ok(p)
}
