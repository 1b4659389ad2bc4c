use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Probabilities are clamped to `[PROB_EPS, 1 - PROB_EPS]` inside the log.
pub const PROB_EPS: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TaskWeights {
    pub entity: f64,
    pub evidence: f64,
}

impl Default for TaskWeights {
    fn default() -> Self {
        TaskWeights {
            entity: 0.7,
            evidence: 0.3,
        }
    }
}

/// Per-type binary targets; entries align with the graph's drug and
/// evidence node index lists.
#[derive(Debug, Clone, PartialEq)]
pub struct Targets {
    pub entity: Vec<f64>,
    pub evidence: Vec<f64>,
}

fn check_labels(probs: &[f64], labels: &[f64], what: &str) -> Result<()> {
    if probs.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} {what} probabilities, {} labels",
            probs.len(),
            labels.len()
        )));
    }
    if probs.is_empty() {
        return Err(Error::Invalid(format!("no {what} nodes")));
    }
    if labels.iter().any(|&y| y != 0.0 && y != 1.0) {
        return Err(Error::Invalid(format!("{what} labels must be 0 or 1")));
    }
    Ok(())
}

/// Mean binary cross-entropy and its gradient with respect to `probs`.
pub fn bce_mean(probs: &[f64], labels: &[f64]) -> (f64, Vec<f64>) {
    let m = probs.len() as f64;
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(probs.len());
    for (&q, &y) in probs.iter().zip(labels) {
        let c = q.clamp(PROB_EPS, 1.0 - PROB_EPS);
        loss -= y * c.ln() + (1.0 - y) * (1.0 - c).ln();
        let inside = q > PROB_EPS && q < 1.0 - PROB_EPS;
        grad.push(if inside {
            -(y / c - (1.0 - y) / (1.0 - c)) / m
        } else {
            0.0
        });
    }
    (loss / m, grad)
}

/// Weighted entity + evidence BCE, with gradients for each probability
/// vector already scaled by the task weights.
pub(crate) fn multitask_loss_grad(
    entity_probs: &[f64],
    evidence_probs: &[f64],
    targets: &Targets,
    weights: TaskWeights,
) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    check_labels(entity_probs, &targets.entity, "entity")?;
    check_labels(evidence_probs, &targets.evidence, "evidence")?;
    if targets.entity.iter().all(|&y| y == 0.0) {
        return Err(Error::Degenerate(
            "no ground-truth drug among the candidates".into(),
        ));
    }
    let (le, mut ge) = bce_mean(entity_probs, &targets.entity);
    let (lv, mut gv) = bce_mean(evidence_probs, &targets.evidence);
    ge.iter_mut().for_each(|g| *g *= weights.entity);
    gv.iter_mut().for_each(|g| *g *= weights.evidence);
    Ok((weights.entity * le + weights.evidence * lv, ge, gv))
}

/// `w_ent · BCE(entity) + w_ev · BCE(evidence)`.
///
/// Fails when no entity label is positive.
pub fn multitask_loss(
    entity_probs: &[f64],
    evidence_probs: &[f64],
    targets: &Targets,
    weights: TaskWeights,
) -> Result<f64> {
    multitask_loss_grad(entity_probs, evidence_probs, targets, weights).map(|(l, _, _)| l)
}
