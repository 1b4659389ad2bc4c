//! Set-based recommendation metrics, DDI rate and dataset evaluation.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kg::KgStore;
use crate::patient::PatientEHR;

pub const DEFAULT_EVAL_K: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct SetMetrics {
    pub jaccard: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Jaccard, precision, recall and F1 of a predicted set against the truth.
/// Duplicates are ignored; an empty prediction scores zero everywhere.
pub fn set_metrics<S: AsRef<str>>(pred: &[S], truth: &[S]) -> Result<SetMetrics> {
    let pred: BTreeSet<&str> = pred.iter().map(|s| s.as_ref()).collect();
    let truth: BTreeSet<&str> = truth.iter().map(|s| s.as_ref()).collect();
    if truth.is_empty() {
        return Err(Error::Invalid("empty ground truth".into()));
    }
    if pred.is_empty() {
        return Ok(SetMetrics::default());
    }
    let inter = pred.intersection(&truth).count() as f64;
    let union = pred.union(&truth).count() as f64;
    let precision = inter / pred.len() as f64;
    let recall = inter / truth.len() as f64;
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Ok(SetMetrics {
        jaccard: inter / union,
        precision,
        recall,
        f1,
    })
}

/// Fraction of unordered pairs in `pred ∪ concomitant` that interact.
pub fn ddi_rate<S: AsRef<str>>(pred: &[S], concomitant: &[S], store: &KgStore) -> Result<f64> {
    let union: BTreeSet<&str> = pred
        .iter()
        .chain(concomitant)
        .map(|s| s.as_ref())
        .collect();
    for id in &union {
        store.drug(id)?;
    }
    let ids: Vec<&str> = union.into_iter().collect();
    let n = ids.len();
    if n < 2 {
        return Ok(0.0);
    }
    let mut hits = 0usize;
    for i in 0..n {
        for j in i + 1..n {
            if store.has_ddi(ids[i], ids[j])? {
                hits += 1;
            }
        }
    }
    Ok(hits as f64 / (n * (n - 1) / 2) as f64)
}

/// 1 when the first-ranked drug is correct.
pub fn hit_at_1<S: AsRef<str>>(ranked: &[S], truth: &[S]) -> f64 {
    match ranked.first() {
        Some(top) if truth.iter().any(|t| t.as_ref() == top.as_ref()) => 1.0,
        _ => 0.0,
    }
}

/// Average precision of a ranked list, normalized by the truth size.
pub fn average_precision<S: AsRef<str>>(ranked: &[S], truth: &[S]) -> f64 {
    let truth: BTreeSet<&str> = truth.iter().map(|s| s.as_ref()).collect();
    if truth.is_empty() {
        return 0.0;
    }
    let mut seen = BTreeSet::new();
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (i, r) in ranked.iter().enumerate() {
        let r = r.as_ref();
        if truth.contains(r) && seen.insert(r) {
            hits += 1;
            sum += hits as f64 / (i + 1) as f64;
        }
    }
    sum / truth.len() as f64
}

/// Anything that can produce a ranked drug list for a patient.
pub trait Recommender {
    fn rank(&self, patient: &PatientEHR, k: usize) -> Result<Vec<String>>;
}

impl<F> Recommender for F
where
    F: Fn(&PatientEHR, usize) -> Result<Vec<String>>,
{
    fn rank(&self, patient: &PatientEHR, k: usize) -> Result<Vec<String>> {
        self(patient, k)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientScore {
    pub patient_id: String,
    pub jaccard: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub ddi: f64,
    pub hit_at_1: f64,
    pub average_precision: f64,
    pub predicted: Vec<String>,
    /// Set when the recommender failed; the prediction is then empty.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct MeanScores {
    pub jaccard: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub ddi: f64,
    pub hit_at_1: f64,
    pub average_precision: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub k: usize,
    pub patients: usize,
    pub failures: usize,
    pub means: MeanScores,
    pub per_patient: Vec<PatientScore>,
}

fn mean_scores(rows: &[PatientScore]) -> MeanScores {
    let n = rows.len().max(1) as f64;
    let mut m = MeanScores::default();
    for r in rows {
        m.jaccard += r.jaccard;
        m.precision += r.precision;
        m.recall += r.recall;
        m.f1 += r.f1;
        m.ddi += r.ddi;
        m.hit_at_1 += r.hit_at_1;
        m.average_precision += r.average_precision;
    }
    m.jaccard /= n;
    m.precision /= n;
    m.recall /= n;
    m.f1 /= n;
    m.ddi /= n;
    m.hit_at_1 /= n;
    m.average_precision /= n;
    m
}

/// Scores the top-`k` predictions for every patient.
///
/// A recommender error is recorded on that patient and counted as an empty
/// prediction rather than aborting the run.
pub fn evaluate(
    patients: &[PatientEHR],
    recommender: &dyn Recommender,
    store: &KgStore,
    k: usize,
) -> Result<EvalResult> {
    let mut rows = Vec::with_capacity(patients.len());
    let mut failures = 0;
    for p in patients {
        let (mut predicted, error) = match recommender.rank(p, k) {
            Ok(r) => (r, None),
            Err(e) => {
                failures += 1;
                (Vec::new(), Some(e.to_string()))
            }
        };
        predicted.truncate(k);
        let truth = &p.ground_truth_drugs;
        let m = set_metrics(&predicted, truth)
            .map_err(|_| Error::Invalid(format!("patient {} has no ground truth", p.id)))?;
        rows.push(PatientScore {
            patient_id: p.id.clone(),
            jaccard: m.jaccard,
            precision: m.precision,
            recall: m.recall,
            f1: m.f1,
            ddi: ddi_rate(&predicted, &p.concomitant_drugs, store)?,
            hit_at_1: hit_at_1(&predicted, truth),
            average_precision: average_precision(&predicted, truth),
            predicted,
            error,
        });
    }
    Ok(EvalResult {
        k,
        patients: rows.len(),
        failures,
        means: mean_scores(&rows),
        per_patient: rows,
    })
}

impl EvalResult {
    /// Per-patient rows as CSV; predictions are `;`-joined.
    pub fn write_csv(&self, w: impl Write) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let to_err = |e: csv::Error| Error::Format(format!("csv: {e}"));
        out.write_record([
            "patient_id",
            "jaccard",
            "precision",
            "recall",
            "f1",
            "ddi",
            "hit_at_1",
            "average_precision",
            "predicted",
        ])
        .map_err(to_err)?;
        for r in &self.per_patient {
            out.write_record([
                r.patient_id.clone(),
                r.jaccard.to_string(),
                r.precision.to_string(),
                r.recall.to_string(),
                r.f1.to_string(),
                r.ddi.to_string(),
                r.hit_at_1.to_string(),
                r.average_precision.to_string(),
                r.predicted.join(";"),
            ])
            .map_err(to_err)?;
        }
        out.flush().map_err(|e| Error::Format(format!("csv: {e}")))
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(f))
    }

    /// JSON report with means and counts, without the per-patient rows.
    pub fn summary_json(&self) -> serde_json::Value {
        serde_json::json!({
            "k": self.k,
            "patients": self.patients,
            "failures": self.failures,
            "means": self.means,
        })
    }

    pub fn table(&self) -> String {
        let m = &self.means;
        let mut s = String::new();
        let _ = writeln!(s, "patients  {}   k  {}   failures  {}", self.patients, self.k, self.failures);
        let _ = writeln!(s, "{:<10}{:>8}", "metric", "mean");
        for (name, v) in [
            ("jaccard", m.jaccard),
            ("precision", m.precision),
            ("recall", m.recall),
            ("f1", m.f1),
            ("ddi", m.ddi),
            ("hit@1", m.hit_at_1),
            ("ap", m.average_precision),
        ] {
            let _ = writeln!(s, "{name:<10}{v:>8.4}");
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kg::{DrugRecord, KgRecord};

    #[test]
    fn set_metric_examples() {
        let m = set_metrics(&["a", "b", "c", "d", "e"], &["a", "b", "x"]).unwrap();
        assert!((m.jaccard - 2.0 / 6.0).abs() < 1e-12);
        assert!((m.precision - 0.4).abs() < 1e-12);
        assert!((m.recall - 2.0 / 3.0).abs() < 1e-12);
        assert!((m.f1 - 0.5).abs() < 1e-12);
        let same = set_metrics(&["a", "b", "c", "d", "e"], &["a", "b", "c", "d", "e"]).unwrap();
        assert_eq!(
            same,
            SetMetrics {
                jaccard: 1.0,
                precision: 1.0,
                recall: 1.0,
                f1: 1.0
            }
        );
        assert_eq!(set_metrics(&["a"], &["b"]).unwrap(), SetMetrics::default());
        assert!(set_metrics::<&str>(&["a"], &[]).is_err());
    }

    fn drugs(n: usize, ddis: &[(usize, usize)]) -> KgStore {
        let mut recs: Vec<DrugRecord> = (0..n)
            .map(|i| DrugRecord::new(&format!("R{i}"), &format!("drug {i}")))
            .collect();
        for &(a, b) in ddis {
            recs[a].interactions.push(format!("R{b}"));
        }
        KgStore::from_records(recs.into_iter().map(KgRecord::Drug)).unwrap()
    }

    #[test]
    fn ddi_rate_examples() {
        let none = drugs(4, &[]);
        assert_eq!(ddi_rate(&["R0", "R1"], &["R2"], &none).unwrap(), 0.0);
        let one = drugs(2, &[(0, 1)]);
        assert_eq!(ddi_rate(&["R0"], &["R1"], &one).unwrap(), 1.0);
        let two = drugs(4, &[(0, 1), (2, 3)]);
        let r = ddi_rate(&["R0", "R1", "R2"], &["R3"], &two).unwrap();
        assert!((r - 2.0 / 6.0).abs() < 1e-12);
        assert_eq!(ddi_rate(&["R0"], &[], &two).unwrap(), 0.0);
        assert!(ddi_rate(&["R9"], &[], &two).is_err());
    }

    #[test]
    fn ranking_metrics() {
        assert_eq!(hit_at_1(&["a", "b"], &["a"]), 1.0);
        assert_eq!(hit_at_1(&["b", "a"], &["a"]), 0.0);
        let ap = average_precision(&["a", "x", "b"], &["a", "b"]);
        assert!((ap - (1.0 + 2.0 / 3.0) / 2.0).abs() < 1e-12);
    }
}
