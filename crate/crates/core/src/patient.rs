//! Patient records and the population tags used by safe-use rules.

use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result as CoreResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sex {
    Male,
    Female,
}

impl Sex {
    pub fn as_str(&self) -> &'static str {
        match self {
            Sex::Male => "male",
            Sex::Female => "female",
        }
    }
}

impl fmt::Display for Sex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Closed set of special-population tags.
///
/// Serialized as plain strings: `pregnant`, `breastfeeding`, `reduced_liver`,
/// `reduced_renal`, `child_below_age(12)`, `elderly_above_age(65)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PopulationTag {
    Pregnant,
    Breastfeeding,
    ReducedLiver,
    ReducedRenal,
    /// Matches patients strictly younger than the given age.
    ChildBelowAge(u32),
    /// Matches patients at or above the given age.
    ElderlyAboveAge(u32),
}

impl PopulationTag {
    /// Whether a rule carrying this tag applies to a patient.
    ///
    /// Age-banded tags are evaluated against the patient's age; the others
    /// require the patient to carry the tag explicitly.
    pub fn applies_to(&self, patient: &PatientEHR) -> bool {
        match *self {
            PopulationTag::ChildBelowAge(n) => patient.age < n,
            PopulationTag::ElderlyAboveAge(n) => patient.age >= n,
            tag => patient.population_tags.contains(&tag),
        }
    }

    /// Human-readable phrase used in verbalized evidence.
    pub fn phrase(&self) -> String {
        match self {
            PopulationTag::Pregnant => "pregnant women".to_string(),
            PopulationTag::Breastfeeding => "breastfeeding women".to_string(),
            PopulationTag::ReducedLiver => "reduced liver function".to_string(),
            PopulationTag::ReducedRenal => "reduced renal function".to_string(),
            PopulationTag::ChildBelowAge(n) => format!("children under {n}"),
            PopulationTag::ElderlyAboveAge(n) => format!("elderly aged {n} and over"),
        }
    }
}

impl fmt::Display for PopulationTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PopulationTag::Pregnant => f.write_str("pregnant"),
            PopulationTag::Breastfeeding => f.write_str("breastfeeding"),
            PopulationTag::ReducedLiver => f.write_str("reduced_liver"),
            PopulationTag::ReducedRenal => f.write_str("reduced_renal"),
            PopulationTag::ChildBelowAge(n) => write!(f, "child_below_age({n})"),
            PopulationTag::ElderlyAboveAge(n) => write!(f, "elderly_above_age({n})"),
        }
    }
}

impl FromStr for PopulationTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        match s {
            "pregnant" => return Ok(PopulationTag::Pregnant),
            "breastfeeding" => return Ok(PopulationTag::Breastfeeding),
            "reduced_liver" => return Ok(PopulationTag::ReducedLiver),
            "reduced_renal" => return Ok(PopulationTag::ReducedRenal),
            _ => {}
        }
        let banded = |prefix: &str| -> Option<u32> {
            s.strip_prefix(prefix)?
                .strip_prefix('(')?
                .strip_suffix(')')?
                .trim()
                .parse()
                .ok()
        };
        if let Some(n) = banded("child_below_age") {
            return Ok(PopulationTag::ChildBelowAge(n));
        }
        if let Some(n) = banded("elderly_above_age") {
            return Ok(PopulationTag::ElderlyAboveAge(n));
        }
        Err(Error::Invalid(format!("unknown population tag `{s}`")))
    }
}

impl Serialize for PopulationTag {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for PopulationTag {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// A single-visit patient record.
///
/// `ground_truth_drugs` is populated in benchmark files and left empty at
/// inference time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientEHR {
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub id: String,
    pub age: u32,
    pub sex: Sex,
    #[serde(default)]
    pub population_tags: Vec<PopulationTag>,
    /// Drug or ingredient ids.
    #[serde(default)]
    pub allergies: Vec<String>,
    pub current_disease: String,
    #[serde(default)]
    pub symptoms: Vec<String>,
    #[serde(default)]
    pub past_diseases: Vec<String>,
    #[serde(default)]
    pub concomitant_drugs: Vec<String>,
    #[serde(default)]
    pub ground_truth_drugs: Vec<String>,
}

impl PatientEHR {
    pub fn new(age: u32, sex: Sex, current_disease: impl Into<String>) -> Self {
        PatientEHR {
            id: String::new(),
            age,
            sex,
            population_tags: Vec::new(),
            allergies: Vec::new(),
            current_disease: current_disease.into(),
            symptoms: Vec::new(),
            past_diseases: Vec::new(),
            concomitant_drugs: Vec::new(),
            ground_truth_drugs: Vec::new(),
        }
    }

    pub fn has_tag(&self, tag: PopulationTag) -> bool {
        tag.applies_to(self)
    }

    /// Copy without the supervision signal, as sent to an inference endpoint.
    pub fn without_ground_truth(&self) -> PatientEHR {
        PatientEHR {
            ground_truth_drugs: Vec::new(),
            ..self.clone()
        }
    }
}

/// Parses one patient per line; blank lines are skipped.
pub fn read_patients(reader: impl BufRead) -> CoreResult<Vec<PatientEHR>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let parse_err = |message: String| Error::Parse { line: i + 1, message };
        let line = line.map_err(|e| parse_err(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?);
    }
    Ok(out)
}

pub fn load_patients(path: impl AsRef<Path>) -> CoreResult<Vec<PatientEHR>> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_patients(BufReader::new(file))
}
