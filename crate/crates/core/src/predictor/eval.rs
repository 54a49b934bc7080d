use serde::{Deserialize, Serialize};

use super::supervision::POSITIVE_CUTOFF;
use super::{PredictionMatrix, SupervisionMask};
use crate::error::{Error, Result};
use crate::hypergraph::IncidenceMatrix;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HorizonMetrics {
    pub horizon: usize,
    pub auc: f64,
    pub recall: f64,
    pub cells: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub auc: f64,
    pub recall: f64,
    pub threshold: f64,
    pub per_horizon: Vec<HorizonMetrics>,
    pub runtime_ms: f64,
}

/// Probability that a random positive outranks a random negative; ties
/// count one half. Computed from midranks in `O(k log k)`.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::dimension(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::domain(
            "AUC undefined: evaluation set has a single class",
        ));
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut k = 0;
    while k < idx.len() {
        let mut end = k;
        while end + 1 < idx.len() && scores[idx[end + 1]] == scores[idx[k]] {
            end += 1;
        }
        // ranks k+1 ..= end+1 share their mean
        let mid = (k + end + 2) as f64 / 2.0;
        for &i in &idx[k..=end] {
            if labels[i] {
                rank_sum += mid;
            }
        }
        k = end + 1;
    }
    let p = n_pos as f64;
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * n_neg as f64))
}

/// TP / (TP + FN) with predictions >= `threshold` counted positive.
pub fn recall_at(scores: &[f64], labels: &[bool], threshold: f64) -> Result<f64> {
    let pos: Vec<f64> = scores
        .iter()
        .zip(labels)
        .filter(|(_, &l)| l)
        .map(|(&s, _)| s)
        .collect();
    if pos.is_empty() {
        return Err(Error::domain("recall undefined without positives"));
    }
    Ok(pos.iter().filter(|&&s| s >= threshold).count() as f64 / pos.len() as f64)
}

fn masked(
    pred: &PredictionMatrix,
    mask: &SupervisionMask,
    truth: &IncidenceMatrix,
) -> Result<(Vec<f64>, Vec<bool>)> {
    if pred.values.dim() != truth.shape() || mask.shape() != truth.shape() {
        return Err(Error::dimension(format!(
            "prediction {:?}, mask {:?}, truth {:?}",
            pred.values.dim(),
            mask.shape(),
            truth.shape()
        )));
    }
    if mask.is_empty() {
        return Err(Error::domain("empty evaluation mask"));
    }
    Ok(mask
        .cells()
        .iter()
        .map(|&(i, j)| (pred.values[[i, j]], truth.get(i, j) >= POSITIVE_CUTOFF))
        .unzip())
}

pub fn evaluate(
    pred: &PredictionMatrix,
    eval_mask: &SupervisionMask,
    truth: &IncidenceMatrix,
    threshold: f64,
) -> Result<EvalReport> {
    let start = std::time::Instant::now();
    let (scores, labels) = masked(pred, eval_mask, truth)?;
    let auc = roc_auc(&scores, &labels)?;
    let recall = recall_at(&scores, &labels, threshold)?;
    Ok(EvalReport {
        auc,
        recall,
        threshold,
        per_horizon: vec![HorizonMetrics {
            horizon: pred.horizon,
            auc,
            recall,
            cells: scores.len(),
        }],
        runtime_ms: start.elapsed().as_secs_f64() * 1e3,
    })
}

/// Evaluates several horizons; headline numbers are the first horizon's.
pub fn evaluate_horizons(
    items: &[(&PredictionMatrix, &SupervisionMask, &IncidenceMatrix)],
    threshold: f64,
) -> Result<EvalReport> {
    let start = std::time::Instant::now();
    let mut per_horizon = Vec::with_capacity(items.len());
    for (pred, mask, truth) in items {
        let r = evaluate(pred, mask, truth, threshold)?;
        per_horizon.extend(r.per_horizon);
    }
    let first = per_horizon
        .first()
        .ok_or_else(|| Error::domain("nothing to evaluate"))?;
    Ok(EvalReport {
        auc: first.auc,
        recall: first.recall,
        threshold,
        per_horizon,
        runtime_ms: start.elapsed().as_secs_f64() * 1e3,
    })
}
