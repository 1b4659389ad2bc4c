//! Synthetic knowledge graphs with a planted, recoverable structure.
//!
//! Disease labels are `<site> <condition>` pairs. Every drug carries one
//! class ingredient; two drugs interact exactly when they share a class, and
//! class ingredients are the allergen pool. A drug's label names its class,
//! so a concomitant drug or allergy in a patient record mentions the same
//! word as the evidence of the drugs it rules out. Forbid rules are mirrored
//! by contraindication conditions such as `gestational period`.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use tracedr_core::kg::{
    DemographicConstraints, DiseaseRecord, DrugRecord, IngredientRecord, KgRecord, KgStore, SafeUseRule,
};
use tracedr_core::{PopulationTag, Sex};

use crate::config::GenConfig;
use crate::error::{GenError, Result};

pub const FIXTURE_DISEASE_LABEL: &str = "soft tissue rheumatism";
pub const FIXTURE_CONTRAINDICATED_LABEL: &str = "Shennanxing oral liquid";
pub const GESTATION_LABEL: &str = "gestational period";

const SITES: &[&str] = &[
    "gastric", "colonic", "cardiac", "pulmonary", "dermal", "ocular", "nasal", "dental", "spinal", "bladder",
    "thyroid", "pharyngeal",
];
const MALE_SITES: &[&str] = &["prostate"];
const FEMALE_SITES: &[&str] = &["ovarian", "uterine"];
const CONDITIONS: &[&str] = &[
    "inflammation", "ulcer", "infection", "spasm", "neuralgia", "edema", "atrophy", "fibrosis", "stenosis",
    "hemorrhage",
];
const FORMS: &[&str] = &["tablets", "capsules", "granules", "injection", "syrup", "ointment", "drops"];

/// Contraindication conditions paired with the tag their forbid rule uses.
const CONDITION_RULES: &[(&str, PopulationTag)] = &[
    (GESTATION_LABEL, PopulationTag::Pregnant),
    ("lactation", PopulationTag::Breastfeeding),
    ("liver dysfunction", PopulationTag::ReducedLiver),
    ("renal insufficiency", PopulationTag::ReducedRenal),
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub n_drugs: usize,
    pub n_diseases: usize,
    /// Number of interaction classes.
    pub n_classes: usize,
    /// Shared non-class ingredients.
    pub n_fillers: usize,
    pub treaters_per_disease: (usize, usize),
    pub max_treatments_per_drug: usize,
    pub fillers_per_drug: (usize, usize),
    /// Probability that a drug carries each forbid rule, in
    /// pregnant / breastfeeding / reduced liver / reduced renal order.
    pub forbid_rates: [f64; 4],
    pub caution_rate: f64,
    /// Fraction of diseases restricted by sex or age.
    pub constrained_rate: f64,
    /// Adds the soft tissue rheumatism fixture.
    pub fixture: bool,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig::planted()
    }
}

impl SynthConfig {
    /// About 300 drugs over 100 diseases.
    pub fn planted() -> Self {
        SynthConfig {
            n_drugs: 300,
            n_diseases: 100,
            n_classes: 12,
            n_fillers: 120,
            treaters_per_disease: (6, 8),
            max_treatments_per_drug: 4,
            fillers_per_drug: (2, 7),
            forbid_rates: [0.2, 0.1, 0.08, 0.1],
            caution_rate: 0.15,
            constrained_rate: 0.05,
            fixture: true,
            seed: 0,
        }
    }

    /// Enough diseases for thousands of patients at two per disease.
    pub fn audit_scale() -> Self {
        SynthConfig {
            n_drugs: 6000,
            n_diseases: 4000,
            n_classes: 40,
            n_fillers: 600,
            treaters_per_disease: (3, 5),
            max_treatments_per_drug: 4,
            fillers_per_drug: (1, 4),
            forbid_rates: [0.1, 0.05, 0.04, 0.05],
            caution_rate: 0.1,
            constrained_rate: 0.08,
            fixture: false,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.treaters_per_disease;
        let (flo, fhi) = self.fillers_per_drug;
        if self.n_drugs == 0 || self.n_diseases == 0 || self.n_classes == 0 {
            return Err(GenError::Config("synthetic KG needs drugs, diseases and classes".into()));
        }
        if lo == 0 || lo > hi || hi > self.n_drugs {
            return Err(GenError::Config(format!("treaters_per_disease ({lo}, {hi}) is invalid")));
        }
        if flo > fhi || fhi > self.n_fillers {
            return Err(GenError::Config(format!("fillers_per_drug ({flo}, {fhi}) is invalid")));
        }
        if self.max_treatments_per_drug == 0
            || self.n_drugs * self.max_treatments_per_drug < self.n_diseases * hi
        {
            return Err(GenError::Config(
                "not enough treatment slots for the requested treaters per disease".into(),
            ));
        }
        if self
            .forbid_rates
            .iter()
            .chain([&self.caution_rate, &self.constrained_rate])
            .any(|r| !(0.0..=1.0).contains(r))
        {
            return Err(GenError::Config("rates must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

/// Generator settings that pair with [`SynthConfig::planted`]: 4,000
/// patients at up to 48 per disease, and a larger pregnant share so every
/// signal has examples.
pub fn planted_gen_config(seed: u64) -> GenConfig {
    let mut c = GenConfig {
        n_patients: 4000,
        max_patients_per_disease: 48,
        seed,
        ..GenConfig::default()
    };
    c.quotas.pregnant = 0.08;
    c.quotas.breastfeeding = 0.05;
    c
}

/// Pronounceable words that are unique and avoid `reserved`.
fn coin_words(n: usize, syllables: usize, reserved: &HashSet<String>, rng: &mut impl Rng) -> Vec<String> {
    const ONSETS: &[&str] = &["b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "ch", "sh"];
    const VOWELS: &[&str] = &["a", "e", "i", "o", "u", "ai", "ou"];
    let mut seen: HashSet<String> = reserved.clone();
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let mut w = String::new();
        for _ in 0..syllables {
            w.push_str(ONSETS.choose(rng).unwrap());
            w.push_str(VOWELS.choose(rng).unwrap());
        }
        w.push_str(["n", "l", "x", "m", "r"].choose(rng).unwrap());
        if seen.insert(w.clone()) {
            out.push(w);
        }
    }
    out
}

fn capitalize(w: &str) -> String {
    let mut c = w.chars();
    match c.next() {
        Some(f) => f.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}

/// Builds a synthetic KG. Deterministic in the config.
pub fn synth_kg(config: &SynthConfig) -> Result<KgStore> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut reserved: HashSet<String> = SITES
        .iter()
        .chain(MALE_SITES)
        .chain(FEMALE_SITES)
        .chain(CONDITIONS)
        .chain(FORMS)
        .map(|s| s.to_string())
        .collect();
    for w in ["soft", "tissue", "rheumatism", "shennanxing", "oral", "liquid", "shogaol", "duhuo", "pills"] {
        reserved.insert(w.to_string());
    }

    // diseases: site x condition pairs first, coined qualifiers beyond that
    let mut diseases: Vec<DiseaseRecord> = Vec::new();
    let mut pairs: Vec<(String, Option<Sex>)> = Vec::new();
    for s in SITES {
        for c in CONDITIONS {
            pairs.push((format!("{s} {c}"), None));
        }
    }
    for (sites, sex) in [(MALE_SITES, Sex::Male), (FEMALE_SITES, Sex::Female)] {
        for s in sites {
            for c in CONDITIONS {
                pairs.push((format!("{s} {c}"), Some(sex)));
            }
        }
    }
    pairs.shuffle(&mut rng);
    let n_regular = config.n_diseases.saturating_sub(usize::from(config.fixture));
    let extra = n_regular.saturating_sub(pairs.len());
    let qualifiers = coin_words(extra, 2, &reserved, &mut rng);
    reserved.extend(qualifiers.iter().cloned());
    for (i, q) in qualifiers.iter().enumerate() {
        let (base, sex) = pairs[i % pairs.len()].clone();
        pairs.push((format!("{q} {base}"), sex));
    }
    pairs.truncate(n_regular);
    for (i, (label, sex)) in pairs.into_iter().enumerate() {
        let mut d = DiseaseRecord::new(format!("DS{:04}", i + 1), label);
        if sex.is_some() {
            d.demographic_constraints = Some(DemographicConstraints {
                sex,
                min_age: Some(12),
                max_age: None,
            });
        } else if rng.gen_bool(config.constrained_rate) {
            d.demographic_constraints = Some(if rng.gen_bool(0.5) {
                DemographicConstraints {
                    sex: None,
                    min_age: None,
                    max_age: Some(11),
                }
            } else {
                DemographicConstraints {
                    sex: None,
                    min_age: Some(60),
                    max_age: None,
                }
            });
        }
        diseases.push(d);
    }
    if config.fixture {
        diseases.push(DiseaseRecord::new(format!("DS{:04}", diseases.len() + 1), FIXTURE_DISEASE_LABEL));
    }
    let treatable = diseases.len();
    let condition_ids: Vec<String> = CONDITION_RULES
        .iter()
        .enumerate()
        .map(|(i, (label, _))| {
            let id = format!("DS{:04}", treatable + i + 1);
            diseases.push(DiseaseRecord::new(id.clone(), *label));
            id
        })
        .collect();

    // ingredients: classes are the allergens, fillers are inert
    let class_words = coin_words(config.n_classes, 2, &reserved, &mut rng);
    reserved.extend(class_words.iter().cloned());
    let filler_words = coin_words(config.n_fillers, 3, &reserved, &mut rng);
    reserved.extend(filler_words.iter().cloned());
    let mut ingredients: Vec<IngredientRecord> = Vec::new();
    for w in &class_words {
        ingredients.push(IngredientRecord {
            id: format!("IN{:04}", ingredients.len() + 1),
            label: w.clone(),
            is_allergen: true,
        });
    }
    for w in &filler_words {
        ingredients.push(IngredientRecord {
            id: format!("IN{:04}", ingredients.len() + 1),
            label: w.clone(),
            is_allergen: false,
        });
    }
    let class_id = |c: usize| ingredients[c].id.clone();
    let filler_id = |f: usize| ingredients[config.n_classes + f].id.clone();

    // drugs: class round-robin, then treatments so every disease gets its treaters
    let n_fixture_drugs = if config.fixture { 6 } else { 0 };
    let n_regular_drugs = config.n_drugs.saturating_sub(n_fixture_drugs);
    let brands = coin_words(config.n_drugs, 2, &reserved, &mut rng);
    let mut drugs: Vec<DrugRecord> = Vec::with_capacity(config.n_drugs);
    let mut classes: Vec<usize> = Vec::with_capacity(config.n_drugs);
    for (i, brand) in brands.iter().take(n_regular_drugs).enumerate() {
        let class = i % config.n_classes;
        let form = FORMS.choose(&mut rng).unwrap();
        let label = format!("{} {} {form}", capitalize(brand), class_words[class]);
        let mut d = DrugRecord::new(format!("DR{:04}", i + 1), label);
        d.ingredients.push(class_id(class));
        let (flo, fhi) = config.fillers_per_drug;
        let k = rng.gen_range(flo..=fhi);
        let picks = rand::seq::index::sample(&mut rng, config.n_fillers, k);
        d.ingredients.extend(picks.into_iter().map(filler_id));
        for (j, (_, tag)) in CONDITION_RULES.iter().enumerate() {
            if rng.gen_bool(config.forbid_rates[j]) {
                d.contraindications.push(condition_ids[j].clone());
                d.population_rules.push(SafeUseRule::forbid(*tag));
            }
        }
        if rng.gen_bool(config.caution_rate) {
            let tag = *[
                PopulationTag::ElderlyAboveAge(65),
                PopulationTag::ChildBelowAge(12),
                PopulationTag::ReducedLiver,
            ]
            .choose(&mut rng)
            .unwrap();
            if !d.population_rules.iter().any(|r| r.population_tag == tag) {
                d.population_rules.push(SafeUseRule::caution(tag));
            }
        }
        drugs.push(d);
        classes.push(class);
    }

    let mut load = vec![0usize; drugs.len()];
    let (tlo, thi) = config.treaters_per_disease;
    for (di, disease) in diseases.iter().take(treatable - usize::from(config.fixture)).enumerate() {
        let want = rng.gen_range(tlo..=thi);
        let mut open: Vec<usize> = (0..drugs.len())
            .filter(|&i| load[i] < config.max_treatments_per_drug)
            .collect();
        if open.len() < want {
            return Err(GenError::Config(format!(
                "ran out of treatment slots at disease {}",
                di + 1
            )));
        }
        // least-loaded drugs first, random among equals
        open.shuffle(&mut rng);
        open.sort_by_key(|&i| load[i]);
        let mut chosen: Vec<usize> = open[..want.min(open.len())].to_vec();
        // mix in a random drug so load levels interleave
        if open.len() > want && rng.gen_bool(0.5) {
            let j = rng.gen_range(want..open.len());
            chosen[rng.gen_range(0..want)] = open[j];
        }
        for i in chosen {
            load[i] += 1;
            drugs[i].treatments.push(disease.id.clone());
        }
    }
    // drugs still without a treatment get one random disease
    for i in 0..drugs.len() {
        if drugs[i].treatments.is_empty() {
            let d = rng.gen_range(0..treatable - usize::from(config.fixture));
            drugs[i].treatments.push(diseases[d].id.clone());
        }
    }

    if config.fixture {
        let disease = diseases[treatable - 1].id.clone();
        let labels = [
            ("Shogaol soft capsules", None),
            (FIXTURE_CONTRAINDICATED_LABEL, Some(PopulationTag::Pregnant)),
            ("Fengshi tablets", None),
            ("Jinggu granules", None),
            ("Tongluo syrup", None),
            ("Duhuo pills", None),
        ];
        for (k, (label, forbid)) in labels.into_iter().enumerate() {
            let class = (k * 5 + 3) % config.n_classes;
            let mut d = DrugRecord::new(format!("DR{:04}", drugs.len() + 1), format!("{label} {}", class_words[class]));
            d.treatments.push(disease.clone());
            d.ingredients.push(class_id(class));
            let picks = rand::seq::index::sample(&mut rng, config.n_fillers, 3.min(config.n_fillers));
            d.ingredients.extend(picks.into_iter().map(filler_id));
            if let Some(tag) = forbid {
                d.contraindications.push(condition_ids[0].clone());
                d.population_rules.push(SafeUseRule::forbid(tag));
            }
            drugs.push(d);
            classes.push(class);
        }
    }

    // interactions: every pair within a class, listed from the lower id
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); config.n_classes];
    for (i, &c) in classes.iter().enumerate() {
        members[c].push(i);
    }
    for group in &members {
        for (a, &i) in group.iter().enumerate() {
            let partners: Vec<String> = group[a + 1..].iter().map(|&j| drugs[j].id.clone()).collect();
            drugs[i].interactions = partners;
        }
    }

    let records = diseases
        .into_iter()
        .map(KgRecord::Disease)
        .chain(ingredients.into_iter().map(KgRecord::Ingredient))
        .chain(drugs.into_iter().map(KgRecord::Drug));
    Ok(KgStore::from_records(records)?)
}
