//! Model snapshots addressed by id, regenerated from the provenance log.

use std::sync::Arc;

use serde::Serialize;

use hyperlens_core::engine::{replay, ModelState};
use hyperlens_core::error::{Error, Result};
use hyperlens_core::predictor::{EvalReport, ModelSnapshotFile, TrainConfig, TrainReport};
use hyperlens_core::provenance::ProvenanceLog;

/// Latest event whose recorded outputs name model `id`.
pub fn locate(log: &ProvenanceLog, id: &str) -> Option<u64> {
    log.events()
        .iter()
        .rev()
        .find(|e| {
            e.payload
                .get("outputs")
                .and_then(|o| o.as_object())
                .is_some_and(|o| {
                    ["model", "after"]
                        .iter()
                        .any(|k| o.get(*k).and_then(|v| v.as_str()) == Some(id))
                })
        })
        .map(|e| e.seq)
}

/// Rebuilds model `id` by replaying the log up to the event that made it.
pub fn regenerate(log: &ProvenanceLog, id: &str) -> Result<Arc<ModelState>> {
    let seq = locate(log, id).ok_or_else(|| Error::Lookup {
        kind: "snapshot",
        name: id.to_owned(),
    })?;
    let state = replay(log, seq)?;
    let candidates = state
        .model
        .iter()
        .cloned()
        .chain(state.pending.iter().map(|tx| tx.after().clone()));
    for m in candidates {
        if m.id == id {
            return Ok(m);
        }
    }
    Err(Error::Divergence {
        seq,
        detail: format!("replay did not reproduce model {id}"),
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct HorizonInfo {
    pub horizon: usize,
    pub timestep: usize,
    pub confidence: f64,
}

/// Serializable description of a model: configuration, training report,
/// factor matrices and, on request, the forecast matrices.
#[derive(Clone, Debug, Serialize)]
pub struct SnapshotView {
    pub id: String,
    pub config: TrainConfig,
    pub input_step: usize,
    pub report: TrainReport,
    pub horizons: Vec<HorizonInfo>,
    pub pinned: Vec<((usize, usize), f64)>,
    pub params: ModelSnapshotFile,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub predictions: Option<Vec<Vec<Vec<f64>>>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub evaluation: Option<EvalReport>,
}

impl SnapshotView {
    pub fn new(m: &ModelState, with_predictions: bool) -> Self {
        SnapshotView {
            id: m.id.clone(),
            config: m.config.clone(),
            input_step: m.input_step,
            report: m.report.clone(),
            horizons: m
                .predictions
                .iter()
                .map(|p| HorizonInfo {
                    horizon: p.horizon,
                    timestep: p.timestep,
                    confidence: p.confidence,
                })
                .collect(),
            pinned: m.pinned.iter().map(|(k, v)| (*k, *v)).collect(),
            params: m.params.to_snapshot(),
            predictions: with_predictions.then(|| {
                m.predictions
                    .iter()
                    .map(|p| p.values.rows().into_iter().map(|r| r.to_vec()).collect())
                    .collect()
            }),
            evaluation: None,
        }
    }
}
