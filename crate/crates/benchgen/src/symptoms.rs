use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tracedr_core::kg::DiseaseRecord;
use tracedr_core::PatientEHR;

use crate::error::Result;

pub trait SymptomGenerator {
    /// Returns at least one symptom phrase.
    fn generate(&self, patient: &PatientEHR, disease: &DiseaseRecord) -> Result<Vec<String>>;
}

/// Disease label → characteristic symptoms.
const LEXICON: &[(&str, &[&str])] = &[
    ("respiratory tract infection", &["cough", "phlegm", "fever"]),
    ("soft tissue rheumatism", &["joint pain", "muscle aches"]),
    ("common cold", &["runny nose", "sneezing", "sore throat"]),
    ("chronic gastritis", &["stomach pain", "bloating", "acid reflux"]),
    ("hypertension", &["dizziness", "headache"]),
    ("migraine", &["throbbing headache", "nausea", "light sensitivity"]),
    ("insomnia", &["difficulty falling asleep", "fatigue"]),
    ("infantile diarrhea", &["loose stools", "abdominal pain"]),
    ("prostatitis", &["frequent urination", "pelvic pain"]),
    ("eczema", &["itchy skin", "red rash"]),
    ("acne", &["facial pimples", "oily skin"]),
    ("bronchitis", &["cough", "chest tightness", "wheezing"]),
    ("urinary tract infection", &["painful urination", "frequent urination"]),
    ("constipation", &["infrequent stools", "abdominal discomfort"]),
];

/// Keyword → symptoms, used when the whole label is not in the lexicon.
const KEYWORDS: &[(&str, &[&str])] = &[
    ("infection", &["fever", "fatigue"]),
    ("rheumatism", &["joint pain", "stiffness"]),
    ("arthritis", &["joint pain", "swelling"]),
    ("gastr", &["stomach pain", "nausea"]),
    ("skin", &["rash", "itching"]),
    ("derm", &["rash", "itching"]),
    ("liver", &["fatigue", "jaundice"]),
    ("renal", &["edema", "reduced urine output"]),
    ("kidney", &["back pain", "edema"]),
    ("cough", &["cough", "phlegm"]),
    ("head", &["headache"]),
    ("throat", &["sore throat", "hoarseness"]),
    ("eye", &["eye redness", "blurred vision"]),
    ("heart", &["palpitations", "chest pain"]),
    ("lung", &["shortness of breath", "cough"]),
    ("bone", &["bone pain"]),
    ("sleep", &["insomnia", "fatigue"]),
];

const GENERIC: &[&str] = &[
    "fatigue",
    "fever",
    "pain",
    "loss of appetite",
    "dizziness",
    "nausea",
    "swelling",
    "weakness",
    "discomfort",
    "malaise",
];

/// Deterministic generator: lexicon entries are returned verbatim; other
/// diseases get keyword symptoms plus a few generic ones drawn with an RNG
/// seeded from `(seed, disease id)`.
#[derive(Debug, Clone, Copy, Default)]
pub struct TemplateSymptoms {
    pub seed: u64,
}

impl TemplateSymptoms {
    pub fn new(seed: u64) -> Self {
        TemplateSymptoms { seed }
    }

    fn rng_for(&self, disease_id: &str) -> ChaCha8Rng {
        // FNV-1a, stable across platforms and toolchains
        let h = disease_id
            .bytes()
            .fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3));
        ChaCha8Rng::seed_from_u64(self.seed ^ h)
    }

    pub fn symptoms_for(&self, disease: &DiseaseRecord) -> Vec<String> {
        let label = disease.label.trim().to_lowercase();
        if let Some((_, s)) = LEXICON.iter().find(|(l, _)| *l == label) {
            return s.iter().map(|s| s.to_string()).collect();
        }
        let mut out: Vec<String> = Vec::new();
        for (kw, s) in KEYWORDS {
            if label.contains(kw) {
                for sym in *s {
                    if !out.iter().any(|o| o == sym) {
                        out.push(sym.to_string());
                    }
                }
            }
        }
        let mut rng = self.rng_for(&disease.id);
        let extra = rng.gen_range(1..=3usize);
        let mut pool: Vec<&str> = GENERIC.iter().copied().filter(|g| !out.iter().any(|o| o == g)).collect();
        pool.shuffle(&mut rng);
        out.extend(pool.into_iter().take(extra).map(String::from));
        out.truncate(4);
        out
    }
}

impl SymptomGenerator for TemplateSymptoms {
    fn generate(&self, _: &PatientEHR, disease: &DiseaseRecord) -> Result<Vec<String>> {
        Ok(self.symptoms_for(disease))
    }
}

/// Tries `primary` and falls back to the template generator, with a warning,
/// on error or empty output.
pub struct WithFallback<G> {
    pub primary: G,
    pub fallback: TemplateSymptoms,
}

impl<G: SymptomGenerator> SymptomGenerator for WithFallback<G> {
    fn generate(&self, patient: &PatientEHR, disease: &DiseaseRecord) -> Result<Vec<String>> {
        match self.primary.generate(patient, disease) {
            Ok(s) if !s.is_empty() => Ok(s),
            Ok(_) => {
                log::warn!("symptom generator returned nothing for {}; using templates", disease.id);
                self.fallback.generate(patient, disease)
            }
            Err(e) => {
                log::warn!("symptom generator failed for {}: {e}; using templates", disease.id);
                self.fallback.generate(patient, disease)
            }
        }
    }
}
