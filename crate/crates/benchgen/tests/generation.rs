use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tracedr_benchgen::{
    assign_disease, audit, gen_patient_base, generate, synth_kg, GenConfig, RuleOnly, SynthConfig,
    TemplateSymptoms, UsageCounter,
};
use tracedr_core::kg::{DemographicConstraints, DiseaseRecord, DrugRecord, KgRecord, KgStore};
use tracedr_core::{PatientEHR, PopulationTag, Sex};

#[test]
fn population_quotas_and_sex_ratio() {
    let config = GenConfig::default();
    let allergens = vec!["I1".to_string(), "I2".to_string(), "I3".to_string()];
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let n = 10_000;
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for _ in 0..n {
        let p = gen_patient_base(&config, &allergens, &mut rng).unwrap();
        for (name, tag) in [
            ("pregnant", PopulationTag::Pregnant),
            ("breastfeeding", PopulationTag::Breastfeeding),
            ("reduced_liver", PopulationTag::ReducedLiver),
            ("reduced_renal", PopulationTag::ReducedRenal),
        ] {
            if p.population_tags.contains(&tag) {
                *counts.entry(name).or_default() += 1;
            }
        }
        if !p.allergies.is_empty() {
            *counts.entry("allergies").or_default() += 1;
        }
        if p.sex == Sex::Female {
            *counts.entry("female").or_default() += 1;
        }
    }
    let q = config.quotas;
    for (name, target) in [
        ("pregnant", q.pregnant),
        ("breastfeeding", q.breastfeeding),
        ("reduced_liver", q.reduced_liver),
        ("reduced_renal", q.reduced_renal),
        ("allergies", q.allergies),
    ] {
        let got = counts.get(name).copied().unwrap_or(0) as f64 / n as f64;
        assert!((got - target).abs() <= 0.005, "{name}: {got} vs {target}");
    }
    let female = counts["female"] as f64 / n as f64;
    assert!((female - config.female_ratio).abs() <= 0.02, "female ratio {female}");
}

fn three_disease_store(constrained: bool) -> KgStore {
    let mut records = Vec::new();
    for i in 1..=3 {
        let mut d = DiseaseRecord::new(format!("D{i}"), format!("disease {i}"));
        if constrained && i == 3 {
            d.demographic_constraints = Some(DemographicConstraints {
                sex: Some(Sex::Female),
                ..Default::default()
            });
        }
        records.push(KgRecord::Disease(d));
        let mut drug = DrugRecord::new(format!("M{i}"), format!("drug {i}"));
        drug.treatments = vec![format!("D{i}")];
        records.push(KgRecord::Drug(drug));
    }
    KgStore::from_records(records).unwrap()
}

#[test]
fn disease_draws_are_uniform() {
    let store = three_disease_store(false);
    let p = PatientEHR::new(40, Sex::Male, "");
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut usage = UsageCounter::new(usize::MAX);
    let n = 3000;
    let mut counts: HashMap<String, usize> = HashMap::new();
    for _ in 0..n {
        *counts.entry(assign_disease(&p, &store, &RuleOnly, &mut usage, &mut rng).unwrap()).or_default() += 1;
    }
    let expected = n as f64 / 3.0;
    let chi2: f64 = counts.values().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    // 99.9th percentile of chi-squared with 2 degrees of freedom
    assert!(chi2 < 13.82, "chi2 {chi2}, counts {counts:?}");
}

#[test]
fn sex_restricted_diseases_are_respected() {
    let store = three_disease_store(true);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut usage = UsageCounter::new(usize::MAX);
    let male = PatientEHR::new(40, Sex::Male, "");
    for _ in 0..2000 {
        assert_ne!(assign_disease(&male, &store, &RuleOnly, &mut usage, &mut rng).unwrap(), "D3");
    }

    let kg = synth_kg(&SynthConfig::planted()).unwrap();
    let config = GenConfig {
        n_patients: 180,
        ..GenConfig::default()
    };
    let bench = generate(&config, &kg, &RuleOnly, &TemplateSymptoms::new(0)).unwrap();
    for p in bench.all() {
        assert!(kg.disease(&p.current_disease).unwrap().admits(p.age, p.sex), "{}", p.id);
    }
}

#[test]
fn cap_is_enforced_and_usage_released() {
    let store = three_disease_store(false);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut usage = UsageCounter::new(2);
    let p = PatientEHR::new(40, Sex::Male, "");
    let drawn: Vec<String> = (0..6)
        .map(|_| assign_disease(&p, &store, &RuleOnly, &mut usage, &mut rng).unwrap())
        .collect();
    assert!(assign_disease(&p, &store, &RuleOnly, &mut usage, &mut rng).is_err());
    usage.release(&drawn[0]);
    assert_eq!(assign_disease(&p, &store, &RuleOnly, &mut usage, &mut rng).unwrap(), drawn[0]);
}

#[test]
fn generation_is_reproducible() {
    let kg = synth_kg(&SynthConfig::planted()).unwrap();
    let config = GenConfig {
        n_patients: 100,
        seed: 17,
        ..GenConfig::default()
    };
    let a = generate(&config, &kg, &RuleOnly, &TemplateSymptoms::new(17)).unwrap();
    let b = generate(&config, &kg, &RuleOnly, &TemplateSymptoms::new(17)).unwrap();
    assert_eq!(a.train, b.train);
    assert_eq!(a.dev, b.dev);
    assert_eq!(a.test, b.test);
    let other = GenConfig { seed: 18, ..config };
    let c = generate(&other, &kg, &RuleOnly, &TemplateSymptoms::new(18)).unwrap();
    assert_ne!(a.train, c.train);
}

#[test]
fn thousand_patients_pass_audit() {
    let kg = synth_kg(&SynthConfig::audit_scale()).unwrap();
    let config = GenConfig {
        n_patients: 1000,
        seed: 3,
        ..GenConfig::default()
    };
    let bench = generate(&config, &kg, &RuleOnly, &TemplateSymptoms::new(3)).unwrap();
    let report = audit(&bench, &kg, &config).unwrap();
    assert!(report.passed, "{:?}", report.failures());
    assert_eq!(report.split_sizes, [600, 200, 200]);
    assert!(report.max_disease_usage <= 2);
    assert_eq!(report.stats.male + report.stats.female, 1000);
}

#[test]
fn audit_names_tampered_records() {
    let kg = synth_kg(&SynthConfig::planted()).unwrap();
    let config = GenConfig {
        n_patients: 50,
        seed: 8,
        ..GenConfig::default()
    };
    let mut bench = generate(&config, &kg, &RuleOnly, &TemplateSymptoms::new(8)).unwrap();
    let victim = bench.test[0].clone();
    let partner = kg.ddi_partners(&victim.ground_truth_drugs[0]).unwrap().next().unwrap().id.clone();
    bench.test[0].concomitant_drugs.push(partner.clone());
    bench.dev[0].id = bench.train[0].id.clone();
    let report = audit(&bench, &kg, &config).unwrap();
    assert!(!report.passed);
    let failures = report.failures().join("\n");
    assert!(failures.contains(&victim.id), "{failures}");
    assert!(failures.contains(&partner), "{failures}");
    assert!(failures.contains(&format!("duplicate id: {}", bench.train[0].id)), "{failures}");
}
