//! Client for an OpenAI-compatible chat-completions endpoint, and the
//! few-shot applicability filter and symptom generator built on it.

use serde::{Deserialize, Serialize};
use serde_json::json;
use tracedr_core::kg::DiseaseRecord;
use tracedr_core::PatientEHR;

use crate::disease::ApplicabilityFilter;
use crate::error::{GenError, Result};
use crate::symptoms::SymptomGenerator;

#[derive(Debug, Clone)]
pub struct ChatClient {
    endpoint: String,
    model: String,
    api_key: Option<String>,
    agent: ureq::Agent,
}

#[derive(Debug, Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
}

#[derive(Debug, Deserialize)]
struct Choice {
    message: Message,
}

#[derive(Debug, Serialize, Deserialize)]
struct Message {
    role: String,
    content: String,
}

impl ChatClient {
    /// `endpoint` is the API base, e.g. `http://localhost:8000/v1`.
    pub fn new(endpoint: &str, model: &str) -> Self {
        let config = ureq::Agent::config_builder()
            .timeout_global(Some(std::time::Duration::from_secs(60)))
            .build();
        ChatClient {
            endpoint: endpoint.trim_end_matches('/').to_string(),
            model: model.to_string(),
            api_key: std::env::var("TRACEDR_LLM_API_KEY").ok(),
            agent: config.into(),
        }
    }

    pub fn complete(&self, system: &str, user: &str) -> Result<String> {
        let url = format!("{}/chat/completions", self.endpoint);
        let body = json!({
            "model": self.model,
            "temperature": 0,
            "messages": [
                {"role": "system", "content": system},
                {"role": "user", "content": user},
            ],
        });
        let mut req = self.agent.post(&url);
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let resp: ChatResponse = req
            .send_json(&body)
            .and_then(|mut r| r.body_mut().read_json())
            .map_err(|e| GenError::Llm(format!("POST {url}: {e}")))?;
        resp.choices
            .into_iter()
            .next()
            .map(|c| c.message.content)
            .ok_or_else(|| GenError::Llm("response has no choices".into()))
    }
}

fn describe(patient: &PatientEHR) -> String {
    let mut s = format!("{}-year-old {}", patient.age, patient.sex);
    for tag in &patient.population_tags {
        s.push_str(&format!(", {}", tag.phrase()));
    }
    s
}

const FILTER_SYSTEM: &str = "You check synthetic patient records for plausibility. \
Given a patient and a disease, answer with exactly one word: applicable if the disease \
can occur in this patient, inapplicable otherwise.";

const FILTER_DEMOS: [(&str, &str, &str); 8] = [
    ("35-year-old male", "prostatitis", "applicable"),
    ("35-year-old female", "prostatitis", "inapplicable"),
    ("6-year-old male", "senile dementia", "inapplicable"),
    ("72-year-old female", "senile dementia", "applicable"),
    ("28-year-old female, pregnant women", "threatened abortion", "applicable"),
    ("54-year-old male", "threatened abortion", "inapplicable"),
    ("3-year-old female", "infantile diarrhea", "applicable"),
    ("41-year-old male", "respiratory tract infection", "applicable"),
];

/// Few-shot applicability judgement.
#[derive(Debug, Clone)]
pub struct LlmFilter {
    pub client: ChatClient,
}

impl LlmFilter {
    pub fn prompt(patient: &PatientEHR, disease: &DiseaseRecord) -> String {
        let mut s = String::new();
        for (p, d, a) in FILTER_DEMOS {
            s.push_str(&format!("Patient: {p}\nDisease: {d}\nAnswer: {a}\n\n"));
        }
        s.push_str(&format!(
            "Patient: {}\nDisease: {}\nAnswer:",
            describe(patient),
            disease.label
        ));
        s
    }
}

/// Reads an `applicable` / `inapplicable` verdict.
pub fn parse_verdict(text: &str) -> Result<bool> {
    let t = text.trim().to_lowercase();
    if t.starts_with("inapplicable") || t.contains("inapplicable") {
        Ok(false)
    } else if t.contains("applicable") {
        Ok(true)
    } else {
        Err(GenError::Llm(format!("unrecognized verdict {text:?}")))
    }
}

impl ApplicabilityFilter for LlmFilter {
    fn judge(&self, patient: &PatientEHR, disease: &DiseaseRecord) -> Result<bool> {
        parse_verdict(&self.client.complete(FILTER_SYSTEM, &Self::prompt(patient, disease))?)
    }
}

const SYMPTOM_SYSTEM: &str = "You write the presenting symptoms of synthetic patients. \
Reply with a JSON array of two to four short symptom phrases and nothing else.";

const SYMPTOM_DEMOS: [(&str, &str, &str); 8] = [
    ("35-year-old male", "respiratory tract infection", r#"["cough", "phlegm", "fever"]"#),
    ("62-year-old female", "chronic gastritis", r#"["stomach pain", "bloating", "acid reflux"]"#),
    ("8-year-old male", "infantile diarrhea", r#"["loose stools", "abdominal pain", "poor appetite"]"#),
    ("47-year-old female", "migraine", r#"["throbbing headache", "nausea", "light sensitivity"]"#),
    ("70-year-old male", "hypertension", r#"["dizziness", "headache"]"#),
    ("29-year-old female, pregnant women", "soft tissue rheumatism", r#"["joint pain", "muscle aches", "stiffness"]"#),
    ("55-year-old male", "insomnia", r#"["difficulty falling asleep", "fatigue", "irritability"]"#),
    ("24-year-old female", "acne", r#"["facial pimples", "oily skin"]"#),
];

#[derive(Debug, Clone)]
pub struct LlmSymptoms {
    pub client: ChatClient,
}

impl LlmSymptoms {
    pub fn prompt(patient: &PatientEHR, disease: &DiseaseRecord) -> String {
        let mut s = String::new();
        for (p, d, a) in SYMPTOM_DEMOS {
            s.push_str(&format!("Patient: {p}\nDisease: {d}\nSymptoms: {a}\n\n"));
        }
        s.push_str(&format!(
            "Patient: {}\nDisease: {}\nSymptoms:",
            describe(patient),
            disease.label
        ));
        s
    }
}

/// Extracts a symptom list from a reply: the first JSON array of strings,
/// or failing that a comma-separated line.
pub fn parse_symptoms(text: &str) -> Result<Vec<String>> {
    if let (Some(a), Some(b)) = (text.find('['), text.rfind(']')) {
        if a < b {
            if let Ok(list) = serde_json::from_str::<Vec<String>>(&text[a..=b]) {
                let list: Vec<String> = list
                    .into_iter()
                    .map(|s| s.trim().to_string())
                    .filter(|s| !s.is_empty())
                    .collect();
                if !list.is_empty() {
                    return Ok(list);
                }
            }
        }
    }
    let list: Vec<String> = text
        .lines()
        .next()
        .unwrap_or("")
        .split(',')
        .map(|s| s.trim().trim_matches('"').to_string())
        .filter(|s| !s.is_empty())
        .collect();
    if list.is_empty() {
        Err(GenError::Llm(format!("no symptoms in reply {text:?}")))
    } else {
        Ok(list)
    }
}

impl SymptomGenerator for LlmSymptoms {
    fn generate(&self, patient: &PatientEHR, disease: &DiseaseRecord) -> Result<Vec<String>> {
        parse_symptoms(&self.client.complete(SYMPTOM_SYSTEM, &Self::prompt(patient, disease))?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn verdicts() {
        assert!(parse_verdict(" Applicable.").unwrap());
        assert!(!parse_verdict("inapplicable").unwrap());
        assert!(parse_verdict("maybe").is_err());
    }

    #[test]
    fn symptom_replies() {
        assert_eq!(
            parse_symptoms("Sure: [\"cough\", \"phlegm\", \"fever\"]").unwrap(),
            ["cough", "phlegm", "fever"]
        );
        assert_eq!(parse_symptoms("cough, fever").unwrap(), ["cough", "fever"]);
        assert!(parse_symptoms("  ").is_err());
    }

    #[test]
    fn prompts_carry_eight_demonstrations() {
        let p = PatientEHR::new(35, tracedr_core::Sex::Male, "D1");
        let d = DiseaseRecord::new("D1", "respiratory tract infection");
        assert_eq!(LlmFilter::prompt(&p, &d).matches("Answer:").count(), 9);
        assert_eq!(LlmSymptoms::prompt(&p, &d).matches("Symptoms:").count(), 9);
    }
}
