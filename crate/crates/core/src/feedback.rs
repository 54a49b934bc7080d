//! Analyst relevance feedback: assertion sets, warm-started fine-tuning, the
//! before/after change matrix and preview transactions.

use std::collections::BTreeSet;
use std::sync::Arc;

use chrono::{DateTime, Utc};
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hypergraph::{EdgeId, IncidenceMatrix, NodeId, TimeIndex};
use crate::predictor::{descend, ModelParams, Objective, PredictionMatrix, TrainReport};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Assertion {
    pub node: NodeId,
    pub edge: EdgeId,
    pub strength: f64,
    pub timestep: TimeIndex,
}

/// Assertions entered together; at most one per `(node, edge, timestep)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeedbackSet {
    assertions: Vec<Assertion>,
    pub session: String,
    pub created: DateTime<Utc>,
}

impl FeedbackSet {
    pub fn new(
        assertions: Vec<Assertion>,
        session: impl Into<String>,
        created: DateTime<Utc>,
    ) -> Result<Self> {
        let mut seen = BTreeSet::new();
        for (k, a) in assertions.iter().enumerate() {
            if !(0.0..=1.0).contains(&a.strength) {
                return Err(Error::domain(format!(
                    "assertion {k}: strength {} outside [0, 1]",
                    a.strength
                )));
            }
            if !seen.insert((a.node, a.edge, a.timestep)) {
                return Err(Error::domain(format!(
                    "assertion {k}: duplicate cell ({}, {}) at t{}",
                    a.node.0, a.edge.0, a.timestep.0
                )));
            }
        }
        Ok(FeedbackSet {
            assertions,
            session: session.into(),
            created,
        })
    }

    pub fn empty(session: impl Into<String>, created: DateTime<Utc>) -> Self {
        FeedbackSet {
            assertions: Vec::new(),
            session: session.into(),
            created,
        }
    }

    pub fn assertions(&self) -> &[Assertion] {
        &self.assertions
    }

    pub fn is_empty(&self) -> bool {
        self.assertions.is_empty()
    }
}

/// Overwrites asserted cells of `input`; every other cell is untouched.
pub fn apply_feedback(input: &IncidenceMatrix, f: &FeedbackSet) -> Result<IncidenceMatrix> {
    let (n, m) = input.shape();
    let mut cells = Vec::with_capacity(f.assertions.len());
    for (k, a) in f.assertions.iter().enumerate() {
        if a.node.0 >= n || a.edge.0 >= m {
            return Err(Error::index(format!(
                "assertion {k}: cell ({}, {}) outside {n}x{m}",
                a.node.0, a.edge.0
            )));
        }
        cells.push((a.node.0, a.edge.0, a.strength));
    }
    input.with_overwrites(&cells)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FineTuneConfig {
    pub steps: usize,
    pub learning_rate: f64,
    /// Reconstruction weight of asserted cells; ordinary cells weigh 1.
    pub feedback_weight: f64,
}

impl Default for FineTuneConfig {
    fn default() -> Self {
        FineTuneConfig {
            steps: 50,
            learning_rate: 0.02,
            feedback_weight: 10.0,
        }
    }
}

impl FineTuneConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::domain(format!(
                "learning rate {} must be positive",
                self.learning_rate
            )));
        }
        if !(self.feedback_weight >= 0.0 && self.feedback_weight.is_finite()) {
            return Err(Error::domain(format!(
                "feedback weight {} must be >= 0",
                self.feedback_weight
            )));
        }
        Ok(())
    }
}

/// Warm-started descent from `params` on an objective built over the
/// updated input. With zero steps the parameters come back untouched.
pub fn fine_tune(
    params: &ModelParams,
    objective: &Objective<'_>,
    cfg: &FineTuneConfig,
) -> Result<(ModelParams, TrainReport)> {
    cfg.validate()?;
    let (n, m) = objective.shape();
    if params.shape() != (n, m) {
        return Err(Error::dimension(format!(
            "parameters for {:?}, objective over {n}x{m}",
            params.shape()
        )));
    }
    if cfg.steps == 0 {
        let loss = objective.loss(params)?;
        return Ok((
            params.clone(),
            TrainReport {
                epochs_run: 0,
                stop: crate::predictor::StopReason::EpochBudget,
                final_loss: loss,
                trace: vec![loss],
            },
        ));
    }
    let (next, report) = descend(params.clone(), objective, cfg.steps, cfg.learning_rate, 0.0)?;
    if !next.is_finite() {
        return Err(Error::Numeric {
            context: "fine-tuned parameters".into(),
            detail: "non-finite factor entries".into(),
        });
    }
    Ok((next, report))
}

/// Signed per-cell difference between two predictions of the same step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChangeMatrix {
    pub deltas: Array2<f64>,
    pub horizon: usize,
    pub before: String,
    pub after: String,
}

impl ChangeMatrix {
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.deltas[[row, col]]
    }

    pub fn max_abs(&self) -> f64 {
        self.deltas.iter().fold(0.0, |a, d| a.max(d.abs()))
    }
}

/// `after - before`, cell by cell.
pub fn change_matrix(
    before: &PredictionMatrix,
    after: &PredictionMatrix,
    before_id: &str,
    after_id: &str,
) -> Result<ChangeMatrix> {
    if before.values.dim() != after.values.dim() || before.horizon != after.horizon {
        return Err(Error::dimension(format!(
            "before {:?} h{} vs after {:?} h{}",
            before.values.dim(),
            before.horizon,
            after.values.dim(),
            after.horizon
        )));
    }
    Ok(ChangeMatrix {
        deltas: &after.values - &before.values,
        horizon: before.horizon,
        before: before_id.to_owned(),
        after: after_id.to_owned(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransactionState {
    Previewing,
    Accepted,
    Rejected,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    Accept,
    Reject,
}

/// A previewed fine-tune awaiting the analyst's decision. `M` is whatever
/// model state the caller commits (parameters plus predictions).
#[derive(Clone, Debug)]
pub struct FeedbackTransaction<M> {
    state: TransactionState,
    before: Arc<M>,
    after: Arc<M>,
    feedback: FeedbackSet,
    changes: Vec<ChangeMatrix>,
}

impl<M> FeedbackTransaction<M> {
    pub fn new(
        before: Arc<M>,
        after: Arc<M>,
        feedback: FeedbackSet,
        changes: Vec<ChangeMatrix>,
    ) -> Self {
        FeedbackTransaction {
            state: TransactionState::Previewing,
            before,
            after,
            feedback,
            changes,
        }
    }

    pub fn state(&self) -> TransactionState {
        self.state
    }

    pub fn before(&self) -> &Arc<M> {
        &self.before
    }

    pub fn after(&self) -> &Arc<M> {
        &self.after
    }

    pub fn feedback(&self) -> &FeedbackSet {
        &self.feedback
    }

    /// One change matrix per predicted horizon.
    pub fn changes(&self) -> &[ChangeMatrix] {
        &self.changes
    }

    /// Settles the transaction and returns the model state to commit.
    pub fn resolve(&mut self, decision: Decision) -> Result<Arc<M>> {
        if self.state != TransactionState::Previewing {
            return Err(Error::state(format!(
                "transaction already {:?}",
                self.state
            )));
        }
        Ok(match decision {
            Decision::Accept => {
                self.state = TransactionState::Accepted;
                Arc::clone(&self.after)
            }
            Decision::Reject => {
                self.state = TransactionState::Rejected;
                Arc::clone(&self.before)
            }
        })
    }
}
