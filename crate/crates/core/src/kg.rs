//! Medical knowledge graph store.
//!
//! The store is loaded from JSONL (one record per line, discriminated by a
//! `kind` field) and is immutable afterwards. DDI pairs are symmetrized at
//! load time so `has_ddi(a, b) == has_ddi(b, a)` holds by construction.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::patient::{PatientEHR, PopulationTag, Sex};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RuleAction {
    Forbid,
    Caution,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SafeUseRule {
    pub population_tag: PopulationTag,
    pub action: RuleAction,
}

impl SafeUseRule {
    pub fn forbid(tag: PopulationTag) -> Self {
        SafeUseRule {
            population_tag: tag,
            action: RuleAction::Forbid,
        }
    }

    pub fn caution(tag: PopulationTag) -> Self {
        SafeUseRule {
            population_tag: tag,
            action: RuleAction::Caution,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DrugRecord {
    pub id: String,
    pub label: String,
    #[serde(default)]
    pub treatments: Vec<String>,
    #[serde(default)]
    pub ingredients: Vec<String>,
    /// Condition ids (diseases or population conditions stored as diseases).
    #[serde(default)]
    pub contraindications: Vec<String>,
    #[serde(default)]
    pub interactions: Vec<String>,
    #[serde(default)]
    pub usage: String,
    #[serde(default)]
    pub adverse_reactions: String,
    #[serde(default)]
    pub population_rules: Vec<SafeUseRule>,
}

impl DrugRecord {
    pub fn new(id: impl Into<String>, label: impl Into<String>) -> Self {
        DrugRecord {
            id: id.into(),
            label: label.into(),
            treatments: Vec::new(),
            ingredients: Vec::new(),
            contraindications: Vec::new(),
            interactions: Vec::new(),
            usage: String::new(),
            adverse_reactions: String::new(),
            population_rules: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DemographicConstraints {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sex: Option<Sex>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min_age: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_age: Option<u32>,
}

impl DemographicConstraints {
    pub fn admits(&self, age: u32, sex: Sex) -> bool {
        self.sex.is_none_or(|s| s == sex)
            && self.min_age.is_none_or(|m| age >= m)
            && self.max_age.is_none_or(|m| age <= m)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiseaseRecord {
    pub id: String,
    pub label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub demographic_constraints: Option<DemographicConstraints>,
}

impl DiseaseRecord {
    pub fn new(id: impl Into<String>, label: impl Into<String>) -> Self {
        DiseaseRecord {
            id: id.into(),
            label: label.into(),
            demographic_constraints: None,
        }
    }

    pub fn admits(&self, age: u32, sex: Sex) -> bool {
        self.demographic_constraints
            .as_ref()
            .is_none_or(|c| c.admits(age, sex))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngredientRecord {
    pub id: String,
    pub label: String,
    #[serde(default)]
    pub is_allergen: bool,
}

/// One line of the KG JSONL file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum KgRecord {
    Drug(DrugRecord),
    Disease(DiseaseRecord),
    Ingredient(IngredientRecord),
}

impl KgRecord {
    pub fn id(&self) -> &str {
        match self {
            KgRecord::Drug(r) => &r.id,
            KgRecord::Disease(r) => &r.id,
            KgRecord::Ingredient(r) => &r.id,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EntityKind {
    Drug,
    Disease,
    Ingredient,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum EntityRef {
    Drug(usize),
    Disease(usize),
    Ingredient(usize),
}

/// A reference from a drug record to an id that does not exist in the store.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DanglingRef {
    pub from_kind: &'static str,
    pub from_id: String,
    pub field: &'static str,
    pub missing_id: String,
}

/// Section a mentioned entity was emitted in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MentionRole {
    Treatment,
    Contraindication,
    Ingredient,
}

/// Verbalized KG facts of one drug.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvidenceText {
    pub drug_id: String,
    pub text: String,
    /// Entity ids whose labels were emitted, in emission order, deduplicated.
    pub mentioned_entities: Vec<String>,
    /// Section of the first emission of each mentioned entity.
    pub mention_roles: Vec<MentionRole>,
}

#[derive(Debug, Clone, Default)]
pub struct KgStore {
    drugs: Vec<DrugRecord>,
    diseases: Vec<DiseaseRecord>,
    ingredients: Vec<IngredientRecord>,
    by_id: HashMap<String, EntityRef>,
    by_label: HashMap<String, Vec<String>>,
    ddi: Vec<HashSet<usize>>,
    treating: HashMap<String, Vec<usize>>,
    dangling: Vec<DanglingRef>,
}

impl KgStore {
    /// Builds a store from in-memory records, symmetrizing DDIs.
    pub fn from_records(records: impl IntoIterator<Item = KgRecord>) -> Result<Self> {
        let mut store = KgStore::default();
        for record in records {
            let id = record.id().to_string();
            if store.by_id.contains_key(&id) {
                return Err(Error::DuplicateId(id));
            }
            let (entity, label) = match record {
                KgRecord::Drug(r) => {
                    let label = r.label.clone();
                    store.drugs.push(r);
                    (EntityRef::Drug(store.drugs.len() - 1), label)
                }
                KgRecord::Disease(r) => {
                    let label = r.label.clone();
                    store.diseases.push(r);
                    (EntityRef::Disease(store.diseases.len() - 1), label)
                }
                KgRecord::Ingredient(r) => {
                    let label = r.label.clone();
                    store.ingredients.push(r);
                    (EntityRef::Ingredient(store.ingredients.len() - 1), label)
                }
            };
            store
                .by_label
                .entry(label.to_lowercase())
                .or_default()
                .push(id.clone());
            store.by_id.insert(id, entity);
        }
        store.link();
        Ok(store)
    }

    fn link(&mut self) {
        let n = self.drugs.len();
        let mut ddi: Vec<HashSet<usize>> = vec![HashSet::new(); n];
        let mut dangling = Vec::new();
        let mut treating: HashMap<String, Vec<usize>> = HashMap::new();

        for (i, drug) in self.drugs.iter().enumerate() {
            let mut check = |field: &'static str, ids: &[String], want: fn(EntityRef) -> bool| {
                for id in ids {
                    if !self.by_id.get(id).is_some_and(|e| want(*e)) {
                        dangling.push(DanglingRef {
                            from_kind: "drug",
                            from_id: drug.id.clone(),
                            field,
                            missing_id: id.clone(),
                        });
                    }
                }
            };
            check("treatments", &drug.treatments, |e| {
                matches!(e, EntityRef::Disease(_))
            });
            check("ingredients", &drug.ingredients, |e| {
                matches!(e, EntityRef::Ingredient(_))
            });
            check("contraindications", &drug.contraindications, |e| {
                matches!(e, EntityRef::Disease(_))
            });
            check("interactions", &drug.interactions, |e| {
                matches!(e, EntityRef::Drug(_))
            });

            for partner in &drug.interactions {
                if let Some(EntityRef::Drug(j)) = self.by_id.get(partner) {
                    if *j != i {
                        ddi[i].insert(*j);
                        ddi[*j].insert(i);
                    }
                }
            }
            for disease in &drug.treatments {
                let list = treating.entry(disease.clone()).or_default();
                if list.last() != Some(&i) {
                    list.push(i);
                }
            }
        }

        // Mirror declared pairs into the records so serialization shows the
        // closed relation. Existing order is kept; mirrored ids are appended.
        for i in 0..n {
            let mut partners: Vec<usize> = ddi[i].iter().copied().collect();
            partners.sort_unstable();
            let present: HashSet<String> = self.drugs[i].interactions.iter().cloned().collect();
            let mut seen = HashSet::new();
            self.drugs[i].interactions.retain(|id| seen.insert(id.clone()));
            for j in partners {
                let pid = self.drugs[j].id.clone();
                if !present.contains(&pid) {
                    self.drugs[i].interactions.push(pid);
                }
            }
        }

        self.ddi = ddi;
        self.treating = treating;
        self.dangling = dangling;
    }

    pub fn drugs(&self) -> &[DrugRecord] {
        &self.drugs
    }

    pub fn diseases(&self) -> &[DiseaseRecord] {
        &self.diseases
    }

    pub fn ingredients(&self) -> &[IngredientRecord] {
        &self.ingredients
    }

    pub fn len(&self) -> usize {
        self.by_id.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_id.is_empty()
    }

    pub fn dangling_references(&self) -> &[DanglingRef] {
        &self.dangling
    }

    pub fn contains(&self, id: &str) -> bool {
        self.by_id.contains_key(id)
    }

    pub fn entity_kind(&self, id: &str) -> Option<EntityKind> {
        self.by_id.get(id).map(|e| match e {
            EntityRef::Drug(_) => EntityKind::Drug,
            EntityRef::Disease(_) => EntityKind::Disease,
            EntityRef::Ingredient(_) => EntityKind::Ingredient,
        })
    }

    pub fn label(&self, id: &str) -> Option<&str> {
        self.by_id.get(id).map(|e| match *e {
            EntityRef::Drug(i) => self.drugs[i].label.as_str(),
            EntityRef::Disease(i) => self.diseases[i].label.as_str(),
            EntityRef::Ingredient(i) => self.ingredients[i].label.as_str(),
        })
    }

    /// Label of `id`, or the id itself when it does not resolve.
    pub fn label_or_id<'a>(&'a self, id: &'a str) -> &'a str {
        self.label(id).unwrap_or(id)
    }

    /// Ids whose label equals `label` case-insensitively.
    pub fn find_by_label(&self, label: &str) -> &[String] {
        self.by_label
            .get(&label.to_lowercase())
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    fn drug_index(&self, id: &str) -> Result<usize> {
        match self.by_id.get(id) {
            Some(EntityRef::Drug(i)) => Ok(*i),
            _ => Err(Error::not_found("drug", id)),
        }
    }

    pub fn drug(&self, id: &str) -> Result<&DrugRecord> {
        self.drug_index(id).map(|i| &self.drugs[i])
    }

    pub fn disease(&self, id: &str) -> Result<&DiseaseRecord> {
        match self.by_id.get(id) {
            Some(EntityRef::Disease(i)) => Ok(&self.diseases[*i]),
            _ => Err(Error::not_found("disease", id)),
        }
    }

    pub fn ingredient(&self, id: &str) -> Result<&IngredientRecord> {
        match self.by_id.get(id) {
            Some(EntityRef::Ingredient(i)) => Ok(&self.ingredients[*i]),
            _ => Err(Error::not_found("ingredient", id)),
        }
    }

    /// Drugs listing `disease_id` among their treatments, in store order.
    pub fn drugs_treating(&self, disease_id: &str) -> impl Iterator<Item = &DrugRecord> {
        self.treating
            .get(disease_id)
            .into_iter()
            .flatten()
            .map(|&i| &self.drugs[i])
    }

    /// DDI partners of a drug after symmetrization.
    pub fn ddi_partners(&self, drug_id: &str) -> Result<impl Iterator<Item = &DrugRecord>> {
        let i = self.drug_index(drug_id)?;
        let mut partners: Vec<usize> = self.ddi[i].iter().copied().collect();
        partners.sort_unstable();
        Ok(partners.into_iter().map(move |j| &self.drugs[j]))
    }

    pub fn has_ddi(&self, a: &str, b: &str) -> Result<bool> {
        let i = self.drug_index(a)?;
        let j = self.drug_index(b)?;
        Ok(i != j && self.ddi[i].contains(&j))
    }

    /// True when a `forbid` rule matches the patient, or the patient is
    /// allergic to the drug or one of its ingredients.
    pub fn violates_safe_use(&self, drug_id: &str, patient: &PatientEHR) -> Result<bool> {
        let drug = self.drug(drug_id)?;
        let forbidden = drug
            .population_rules
            .iter()
            .any(|r| r.action == RuleAction::Forbid && r.population_tag.applies_to(patient));
        if forbidden {
            return Ok(true);
        }
        let allergic = patient
            .allergies
            .iter()
            .any(|a| *a == drug.id || drug.ingredients.contains(a));
        Ok(allergic)
    }

    /// Renders a drug's facts as `Treatments: … | Contraindications: … | Ingredients: …`.
    ///
    /// Population rules are appended to the contraindication section as
    /// `not for <population>` or `use with caution in <population>`; they do
    /// not produce mentions.
    pub fn verbalize(&self, drug_id: &str) -> Result<EvidenceText> {
        let drug = self.drug(drug_id)?;
        let mut mentioned: Vec<String> = Vec::new();
        let mut roles: Vec<MentionRole> = Vec::new();
        let mut seen: HashSet<String> = HashSet::new();

        let mut section = |ids: &'_ [String], role: MentionRole| -> Vec<String> {
            let mut parts = Vec::new();
            for id in ids {
                if let Some(label) = self.label(id) {
                    parts.push(label.to_string());
                    if seen.insert(id.clone()) {
                        mentioned.push(id.clone());
                        roles.push(role);
                    }
                }
            }
            parts
        };

        let treatments = section(&drug.treatments, MentionRole::Treatment);
        let mut contra = section(&drug.contraindications, MentionRole::Contraindication);
        let ingredients = section(&drug.ingredients, MentionRole::Ingredient);
        contra.extend(drug.population_rules.iter().map(|r| match r.action {
            RuleAction::Forbid => format!("not for {}", r.population_tag.phrase()),
            RuleAction::Caution => format!("use with caution in {}", r.population_tag.phrase()),
        }));

        let render = |name: &str, parts: &[String]| {
            if parts.is_empty() {
                format!("{name}:")
            } else {
                format!("{name}: {}", parts.join(", "))
            }
        };
        let text = [
            render("Treatments", &treatments),
            render("Contraindications", &contra),
            render("Ingredients", &ingredients),
        ]
        .join(" | ");

        Ok(EvidenceText {
            drug_id: drug.id.clone(),
            text,
            mentioned_entities: mentioned,
            mention_roles: roles,
        })
    }

    /// All records in a stable order: diseases, ingredients, then drugs.
    pub fn records(&self) -> impl Iterator<Item = KgRecord> + '_ {
        self.diseases
            .iter()
            .cloned()
            .map(KgRecord::Disease)
            .chain(self.ingredients.iter().cloned().map(KgRecord::Ingredient))
            .chain(self.drugs.iter().cloned().map(KgRecord::Drug))
    }

    pub fn write_jsonl(&self, mut out: impl Write) -> std::io::Result<()> {
        for record in self.records() {
            serde_json::to_writer(&mut out, &record)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        self.write_jsonl(&mut w).map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// Records sorted by id, with interaction lists sorted. Two stores that
    /// hold the same facts compare equal under this view.
    pub fn normalized_records(&self) -> Vec<KgRecord> {
        let mut records: Vec<KgRecord> = self
            .records()
            .map(|r| match r {
                KgRecord::Drug(mut d) => {
                    d.interactions.sort();
                    KgRecord::Drug(d)
                }
                other => other,
            })
            .collect();
        records.sort_by(|a, b| a.id().cmp(b.id()));
        records
    }
}

/// Parses KG JSONL from a reader. Blank lines are skipped.
pub fn read_kg(reader: impl BufRead) -> Result<KgStore> {
    let mut records = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let record: KgRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        records.push(record);
    }
    KgStore::from_records(records)
}

pub fn load_kg(path: impl AsRef<Path>) -> Result<KgStore> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_kg(BufReader::new(file))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::patient::Sex;

    fn disease(id: &str, label: &str) -> KgRecord {
        KgRecord::Disease(DiseaseRecord::new(id, label))
    }

    fn ingredient(id: &str, label: &str, allergen: bool) -> KgRecord {
        KgRecord::Ingredient(IngredientRecord {
            id: id.into(),
            label: label.into(),
            is_allergen: allergen,
        })
    }

    fn drug(id: &str, f: impl FnOnce(&mut DrugRecord)) -> KgRecord {
        let mut d = DrugRecord::new(id, format!("{id} tablets"));
        f(&mut d);
        KgRecord::Drug(d)
    }

    fn small_store() -> KgStore {
        KgStore::from_records(vec![
            disease("D1", "soft tissue rheumatism"),
            disease("D2", "gestational period"),
            ingredient("I1", "shogaol", true),
            drug("A", |d| {
                d.treatments = vec!["D1".into()];
                d.ingredients = vec!["I1".into()];
                d.interactions = vec!["B".into()];
            }),
            drug("B", |d| {
                d.contraindications = vec!["D2".into()];
                d.population_rules = vec![SafeUseRule::forbid(PopulationTag::Pregnant)];
            }),
            drug("C", |_| {}),
        ])
        .unwrap()
    }

    #[test]
    fn lookup_by_id_and_label() {
        let s = small_store();
        assert_eq!(s.len(), 6);
        assert_eq!(s.drugs().len(), 3);
        assert_eq!(s.label("D1"), Some("soft tissue rheumatism"));
        assert_eq!(s.find_by_label("Soft Tissue RHEUMATISM"), ["D1".to_string()]);
        assert_eq!(s.entity_kind("I1"), Some(EntityKind::Ingredient));
        assert!(matches!(s.drug("D1"), Err(Error::NotFound { .. })));
    }

    #[test]
    fn ddi_is_symmetrized_at_load() {
        let s = small_store();
        assert!(s.drug("B").unwrap().interactions.contains(&"A".to_string()));
        assert!(s.has_ddi("A", "B").unwrap());
        assert!(s.has_ddi("B", "A").unwrap());
        assert!(!s.has_ddi("A", "A").unwrap());
        assert!(!s.has_ddi("A", "C").unwrap());
        assert!(s.has_ddi("A", "nope").is_err());
    }

    #[test]
    fn dangling_references_are_reported() {
        let s = KgStore::from_records(vec![drug("A", |d| d.treatments = vec!["Dxx".into()])])
            .unwrap();
        let report: Vec<(&str, &str)> = s
            .dangling_references()
            .iter()
            .map(|d| (d.from_kind, d.missing_id.as_str()))
            .collect();
        assert_eq!(report, [("drug", "Dxx")]);
    }

    #[test]
    fn duplicate_ids_fail() {
        let err = KgStore::from_records(vec![disease("X", "a"), drug("X", |_| {})]).unwrap_err();
        assert!(matches!(err, Error::DuplicateId(id) if id == "X"));
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let text = "{\"kind\":\"disease\",\"id\":\"D1\",\"label\":\"x\"}\n{\"kind\":\"drug\",\"id\":\n";
        let err = read_kg(text.as_bytes()).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
    }

    #[test]
    fn verbalize_uses_fixed_three_sections() {
        let s = small_store();
        let ev = s.verbalize("A").unwrap();
        assert_eq!(
            ev.text,
            "Treatments: soft tissue rheumatism | Contraindications: | Ingredients: shogaol"
        );
        assert_eq!(ev.mentioned_entities, ["D1", "I1"]);
        assert_eq!(ev.mention_roles, [MentionRole::Treatment, MentionRole::Ingredient]);

        let empty = s.verbalize("C").unwrap();
        assert_eq!(empty.text, "Treatments: | Contraindications: | Ingredients:");
        assert!(empty.mentioned_entities.is_empty());

        assert_eq!(s.verbalize("A").unwrap(), ev);
        assert!(s.verbalize("zzz").is_err());
    }

    #[test]
    fn population_rules_surface_in_text_only() {
        let s = KgStore::from_records(vec![drug("A", |d| {
            d.population_rules = vec![
                SafeUseRule::caution(PopulationTag::ReducedRenal),
                SafeUseRule::forbid(PopulationTag::Pregnant),
            ];
        })])
        .unwrap();
        let ev = s.verbalize("A").unwrap();
        assert!(ev.text.contains("use with caution in reduced renal function, not for pregnant women"));
        assert!(ev.mentioned_entities.is_empty());
        let mut p = PatientEHR::new(40, Sex::Male, "D");
        p.population_tags.push(PopulationTag::ReducedRenal);
        assert!(!s.violates_safe_use("A", &p).unwrap());
    }

    #[test]
    fn safe_use_checks_rules_and_allergies() {
        let s = small_store();
        let mut p = PatientEHR::new(26, Sex::Female, "D1");
        assert!(!s.violates_safe_use("B", &p).unwrap());
        p.population_tags.push(PopulationTag::Pregnant);
        assert!(s.violates_safe_use("B", &p).unwrap());
        assert!(!s.violates_safe_use("A", &p).unwrap());
        p.allergies.push("I1".into());
        assert!(s.violates_safe_use("A", &p).unwrap());
        let mut q = PatientEHR::new(30, Sex::Male, "D1");
        q.allergies.push("C".into());
        assert!(s.violates_safe_use("C", &q).unwrap());
    }

    #[test]
    fn jsonl_round_trip_is_order_normalized_identity() {
        let s = small_store();
        let mut buf = Vec::new();
        s.write_jsonl(&mut buf).unwrap();
        let back = read_kg(buf.as_slice()).unwrap();
        assert_eq!(back.normalized_records(), s.normalized_records());
    }
}
