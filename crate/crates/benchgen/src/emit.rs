use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use tracedr_core::kg::KgStore;
use tracedr_core::{PatientEHR, PopulationTag, Sex};

use crate::config::GenConfig;
use crate::disease::{assign_disease, ApplicabilityFilter, UsageCounter};
use crate::error::{GenError, Result};
use crate::history::gen_history_and_truth;
use crate::population::{allergen_pool, gen_patient_base};
use crate::symptoms::SymptomGenerator;

/// Quota deviations are only enforced from this many patients up.
pub const QUOTA_MIN_PATIENTS: usize = 5000;
/// Allowed quota deviation, in percentage points.
pub const QUOTA_TOLERANCE_PP: f64 = 1.5;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Benchmark {
    pub train: Vec<PatientEHR>,
    pub dev: Vec<PatientEHR>,
    pub test: Vec<PatientEHR>,
    /// Demographic draws abandoned after exhausting their retries.
    pub skipped: usize,
}

impl Benchmark {
    pub fn all(&self) -> impl Iterator<Item = &PatientEHR> {
        self.train.iter().chain(&self.dev).chain(&self.test)
    }

    pub fn len(&self) -> usize {
        self.train.len() + self.dev.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Writes `train.jsonl`, `dev.jsonl` and `test.jsonl` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| GenError::io(dir, e))?;
        for (name, split) in [("train", &self.train), ("dev", &self.dev), ("test", &self.test)] {
            let path = dir.join(format!("{name}.jsonl"));
            write_jsonl(&path, split)?;
        }
        Ok(())
    }
}

pub fn write_jsonl(path: &Path, patients: &[PatientEHR]) -> Result<()> {
    let file = File::create(path).map_err(|e| GenError::io(path, e))?;
    let mut w = BufWriter::new(file);
    for p in patients {
        serde_json::to_writer(&mut w, p)?;
        w.write_all(b"\n").map_err(|e| GenError::io(path, e))?;
    }
    w.flush().map_err(|e| GenError::io(path, e))
}

/// Generates `config.n_patients` records and splits them.
///
/// Each demographic draw gets up to `max_retries` disease assignments; a
/// disease whose history cannot be completed gives its usage slot back. A
/// draw that runs out of retries is skipped and a new one is made, up to
/// `n_patients * max_retries` skips in total.
pub fn generate(
    config: &GenConfig,
    store: &KgStore,
    filter: &dyn ApplicabilityFilter,
    symptoms: &dyn SymptomGenerator,
) -> Result<Benchmark> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let allergens = allergen_pool(store);
    let mut usage = UsageCounter::new(config.max_patients_per_disease);
    let mut patients: Vec<PatientEHR> = Vec::with_capacity(config.n_patients);
    let mut skipped = 0usize;
    let skip_limit = config.n_patients.max(1) * config.max_retries.max(1);

    while patients.len() < config.n_patients {
        let mut patient = gen_patient_base(config, &allergens, &mut rng)?;
        let mut done = false;
        for _ in 0..config.max_retries.max(1) {
            let disease = match assign_disease(&patient, store, filter, &mut usage, &mut rng) {
                Ok(d) => d,
                Err(GenError::NoApplicableDisease { .. }) => break,
                Err(e) => return Err(e),
            };
            let range = (config.concomitant_min, config.concomitant_max);
            match gen_history_and_truth(&patient, &disease, store, range, &mut rng)? {
                Ok(h) => {
                    let record = store.disease(&disease)?;
                    patient.symptoms = symptoms.generate(&patient, record)?;
                    if patient.symptoms.is_empty() {
                        return Err(GenError::Config(format!(
                            "symptom generator returned nothing for {disease}"
                        )));
                    }
                    patient.current_disease = disease;
                    patient.concomitant_drugs = h.concomitant_drugs;
                    patient.past_diseases = h.past_diseases;
                    patient.ground_truth_drugs = h.ground_truth_drugs;
                    done = true;
                    break;
                }
                Err(why) => {
                    log::debug!("disease {disease} infeasible for this patient: {why}");
                    usage.release(&disease);
                }
            }
        }
        if done {
            patients.push(patient);
        } else {
            skipped += 1;
            if skipped > skip_limit {
                return Err(GenError::Exhausted {
                    wanted: config.n_patients,
                    reason: format!(
                        "only {} patients generated after {skipped} skipped draws",
                        patients.len()
                    ),
                });
            }
        }
    }
    if skipped > 0 {
        log::info!("skipped {skipped} demographic draws with no feasible disease");
    }

    // late draws see a depleted disease pool, so order is shuffled before splitting
    patients.shuffle(&mut rng);
    for (i, p) in patients.iter_mut().enumerate() {
        p.id = format!("P{:06}", i + 1);
    }
    let [n_train, n_dev, _] = config.split_sizes(patients.len());
    let test = patients.split_off(n_train + n_dev);
    let dev = patients.split_off(n_train);
    Ok(Benchmark {
        train: patients,
        dev,
        test,
        skipped,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuotaReport {
    pub name: String,
    pub target: f64,
    pub count: usize,
    pub attained: f64,
    /// Whether the deviation is within tolerance; always true below
    /// [`QUOTA_MIN_PATIENTS`].
    pub within_tolerance: bool,
}

/// Population breakdown in the style of a dataset statistics table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopulationStats {
    pub patients: usize,
    pub male: usize,
    pub female: usize,
    pub children: usize,
    pub elderly: usize,
    pub pregnant: usize,
    pub breastfeeding: usize,
    pub reduced_liver: usize,
    pub reduced_renal: usize,
    pub with_allergies: usize,
    pub distinct_diseases: usize,
    pub distinct_truth_drugs: usize,
    pub mean_truth_drugs: f64,
    pub mean_concomitant_drugs: f64,
    pub mean_past_diseases: f64,
    pub mean_symptoms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub patients: usize,
    pub split_sizes: [usize; 3],
    pub expected_split_sizes: [usize; 3],
    pub skipped_draws: usize,
    /// `"<patient>: <truth drug> x <concomitant drug>"` entries.
    pub ddi_violations: Vec<String>,
    /// `"<patient>: <drug>"` entries, for truth and concomitant drugs.
    pub safe_use_violations: Vec<String>,
    /// Patients with no ground truth, unknown ids, or a truth drug that does
    /// not treat the current disease.
    pub malformed_records: Vec<String>,
    pub duplicate_ids: Vec<String>,
    pub usage_cap: usize,
    pub max_disease_usage: usize,
    /// Patients per disease → number of diseases.
    pub disease_usage_histogram: BTreeMap<usize, usize>,
    pub quotas: Vec<QuotaReport>,
    pub stats: PopulationStats,
    pub passed: bool,
}

impl AuditReport {
    /// One line per failed check, naming the offending records.
    pub fn failures(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.split_sizes != self.expected_split_sizes {
            out.push(format!(
                "split sizes {:?} differ from expected {:?}",
                self.split_sizes, self.expected_split_sizes
            ));
        }
        for (what, list) in [
            ("DDI violation", &self.ddi_violations),
            ("safe-use violation", &self.safe_use_violations),
            ("malformed record", &self.malformed_records),
            ("duplicate id", &self.duplicate_ids),
        ] {
            out.extend(list.iter().map(|v| format!("{what}: {v}")));
        }
        if self.max_disease_usage > self.usage_cap {
            out.push(format!(
                "a disease is used by {} patients, cap is {}",
                self.max_disease_usage, self.usage_cap
            ));
        }
        for q in self.quotas.iter().filter(|q| !q.within_tolerance) {
            out.push(format!(
                "quota {} attained {:.2}% against target {:.2}%",
                q.name,
                100.0 * q.attained,
                100.0 * q.target
            ));
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| GenError::io(path, e))?;
        serde_json::to_writer_pretty(BufWriter::new(file), self)?;
        Ok(())
    }
}

fn mean(total: usize, n: usize) -> f64 {
    if n == 0 {
        0.0
    } else {
        total as f64 / n as f64
    }
}

/// Post-hoc checks of a generated benchmark against the KG and config.
pub fn audit(bench: &Benchmark, store: &KgStore, config: &GenConfig) -> Result<AuditReport> {
    let n = bench.len();
    let mut ddi_violations = Vec::new();
    let mut safe_use_violations = Vec::new();
    let mut malformed = Vec::new();
    let mut duplicate_ids = Vec::new();
    let mut ids: HashSet<&str> = HashSet::new();
    let mut usage: HashMap<&str, usize> = HashMap::new();
    let mut truth_drugs: HashSet<&str> = HashSet::new();
    let mut counts = [0usize; 7];
    let (mut male, mut female) = (0, 0);
    let (mut n_truth, mut n_conc, mut n_past, mut n_sym) = (0, 0, 0, 0);

    for p in bench.all() {
        if !ids.insert(&p.id) {
            duplicate_ids.push(p.id.clone());
        }
        *usage.entry(p.current_disease.as_str()).or_default() += 1;
        match p.sex {
            Sex::Male => male += 1,
            Sex::Female => female += 1,
        }
        for (slot, tag) in [
            PopulationTag::Pregnant,
            PopulationTag::Breastfeeding,
            PopulationTag::ReducedLiver,
            PopulationTag::ReducedRenal,
            PopulationTag::ChildBelowAge(config.child_below_age),
            PopulationTag::ElderlyAboveAge(config.elderly_from_age),
        ]
        .into_iter()
        .enumerate()
        {
            if tag.applies_to(p) {
                counts[slot] += 1;
            }
        }
        if !p.allergies.is_empty() {
            counts[6] += 1;
        }
        n_truth += p.ground_truth_drugs.len();
        n_conc += p.concomitant_drugs.len();
        n_past += p.past_diseases.len();
        n_sym += p.symptoms.len();

        let known = store.disease(&p.current_disease).is_ok()
            && p.ground_truth_drugs.iter().chain(&p.concomitant_drugs).all(|d| store.drug(d).is_ok())
            && p.past_diseases.iter().all(|d| store.disease(d).is_ok());
        if !known {
            malformed.push(format!("{}: unknown id", p.id));
            continue;
        }
        if p.ground_truth_drugs.is_empty() {
            malformed.push(format!("{}: empty ground truth", p.id));
        }
        for t in &p.ground_truth_drugs {
            truth_drugs.insert(t);
            if !store.drug(t)?.treatments.contains(&p.current_disease) {
                malformed.push(format!("{}: {t} does not treat {}", p.id, p.current_disease));
            }
            for c in &p.concomitant_drugs {
                if store.has_ddi(t, c)? {
                    ddi_violations.push(format!("{}: {t} x {c}", p.id));
                }
            }
        }
        for d in p.ground_truth_drugs.iter().chain(&p.concomitant_drugs) {
            if store.violates_safe_use(d, p)? {
                safe_use_violations.push(format!("{}: {d}", p.id));
            }
        }
    }

    let mut histogram = BTreeMap::new();
    for &c in usage.values() {
        *histogram.entry(c).or_insert(0) += 1;
    }
    let q = config.quotas;
    let quotas = [
        ("pregnant", q.pregnant, counts[0]),
        ("breastfeeding", q.breastfeeding, counts[1]),
        ("reduced_liver", q.reduced_liver, counts[2]),
        ("reduced_renal", q.reduced_renal, counts[3]),
        ("allergies", q.allergies, counts[6]),
    ]
    .into_iter()
    .map(|(name, target, count)| {
        let attained = mean(count, n);
        QuotaReport {
            name: name.to_string(),
            target,
            count,
            attained,
            within_tolerance: n < QUOTA_MIN_PATIENTS || (attained - target).abs() * 100.0 <= QUOTA_TOLERANCE_PP,
        }
    })
    .collect();

    let mut report = AuditReport {
        patients: n,
        split_sizes: [bench.train.len(), bench.dev.len(), bench.test.len()],
        expected_split_sizes: config.split_sizes(config.n_patients),
        skipped_draws: bench.skipped,
        ddi_violations,
        safe_use_violations,
        malformed_records: malformed,
        duplicate_ids,
        usage_cap: config.max_patients_per_disease,
        max_disease_usage: usage.values().copied().max().unwrap_or(0),
        disease_usage_histogram: histogram,
        quotas,
        stats: PopulationStats {
            patients: n,
            male,
            female,
            children: counts[4],
            elderly: counts[5],
            pregnant: counts[0],
            breastfeeding: counts[1],
            reduced_liver: counts[2],
            reduced_renal: counts[3],
            with_allergies: counts[6],
            distinct_diseases: usage.len(),
            distinct_truth_drugs: truth_drugs.len(),
            mean_truth_drugs: mean(n_truth, n),
            mean_concomitant_drugs: mean(n_conc, n),
            mean_past_diseases: mean(n_past, n),
            mean_symptoms: mean(n_sym, n),
        },
        passed: false,
    };
    report.passed = report.failures().is_empty();
    Ok(report)
}

/// Plain-text statistics table.
pub fn stats_table(report: &AuditReport, config: &GenConfig) -> String {
    let s = &report.stats;
    let pct = |c: usize| 100.0 * mean(c, s.patients);
    let rows: Vec<(String, String)> = vec![
        ("Patients".into(), s.patients.to_string()),
        ("Train / dev / test".into(), format!("{} / {} / {}", report.split_sizes[0], report.split_sizes[1], report.split_sizes[2])),
        ("Male / female".into(), format!("{} / {}", s.male, s.female)),
        (format!("Children (<{})", config.child_below_age), format!("{} ({:.1}%)", s.children, pct(s.children))),
        (format!("Elderly (>={})", config.elderly_from_age), format!("{} ({:.1}%)", s.elderly, pct(s.elderly))),
        ("Pregnant".into(), format!("{} ({:.1}%)", s.pregnant, pct(s.pregnant))),
        ("Breastfeeding".into(), format!("{} ({:.1}%)", s.breastfeeding, pct(s.breastfeeding))),
        ("Reduced liver function".into(), format!("{} ({:.1}%)", s.reduced_liver, pct(s.reduced_liver))),
        ("Reduced renal function".into(), format!("{} ({:.1}%)", s.reduced_renal, pct(s.reduced_renal))),
        ("With allergies".into(), format!("{} ({:.1}%)", s.with_allergies, pct(s.with_allergies))),
        ("Distinct diseases".into(), s.distinct_diseases.to_string()),
        ("Distinct ground-truth drugs".into(), s.distinct_truth_drugs.to_string()),
        ("Ground-truth drugs / patient".into(), format!("{:.2}", s.mean_truth_drugs)),
        ("Concomitant drugs / patient".into(), format!("{:.2}", s.mean_concomitant_drugs)),
        ("Past diseases / patient".into(), format!("{:.2}", s.mean_past_diseases)),
        ("Symptoms / patient".into(), format!("{:.2}", s.mean_symptoms)),
    ];
    let width = rows.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
    let mut out = String::new();
    for (k, v) in rows {
        out.push_str(&format!("{k:<width$}  {v}\n"));
    }
    out
}

/// Generates, audits and writes a benchmark into `dir` along with
/// `audit.json`. The audit is written even when it fails.
pub fn emit_benchmark(
    config: &GenConfig,
    store: &KgStore,
    filter: &dyn ApplicabilityFilter,
    symptoms: &dyn SymptomGenerator,
    dir: &Path,
) -> Result<(Benchmark, AuditReport)> {
    let bench = generate(config, store, filter, symptoms)?;
    let report = audit(&bench, store, config)?;
    bench.write(dir)?;
    report.save(&dir.join("audit.json"))?;
    Ok((bench, report))
}
