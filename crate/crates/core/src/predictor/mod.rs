//! Link prediction on the implicit hypergraph.
//!
//! The incidence matrix of the next timestep is modelled as
//! `sigmoid(X Y^T)` with a rank-`r` node factor `X` and edge factor `Y`.
//! Training minimises the [`Objective`] by full-batch gradient descent from
//! a seeded initialisation: every epoch takes one step of at most the
//! configured learning rate, halving it until the loss decreases
//! sufficiently (Armijo backtracking). The training loss is therefore
//! non-increasing and the run is a pure function of its inputs and seed.
//!
//! This is a compact stand-in for a deep hypergraph model: it keeps the same
//! interface (factors, parameter set, Laplacian smoothing, warm starts) but
//! not the layer stack.

mod eval;
mod objective;
mod supervision;

pub use eval::{evaluate, evaluate_horizons, recall_at, roc_auc, EvalReport, HorizonMetrics};
pub use objective::{Evaluation, LossBreakdown, Objective};
pub use supervision::{split_supervision, SupervisionMask, POSITIVE_CUTOFF};

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hypergraph::{IncidenceMatrix, LaplacianMatrix};

/// Logits are clipped here when producing predictions so every output lies
/// strictly inside (0, 1).
const LOGIT_CLIP: f64 = 30.0;
const ARMIJO_C: f64 = 1e-4;
const MAX_HALVINGS: usize = 40;
pub const CONVERGENCE_WINDOW: usize = 10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Hyperparams {
    pub lambda_lap: f64,
    pub lambda_frob: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub tolerance: f64,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Hyperparams {
            lambda_lap: 0.1,
            lambda_frob: 1e-4,
            learning_rate: 0.05,
            epochs: 500,
            tolerance: 1e-6,
        }
    }
}

/// Learned parameter set: factor matrices plus everything needed to
/// regenerate them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub x: Array2<f64>,
    pub y: Array2<f64>,
    pub rank: usize,
    pub hyper: Hyperparams,
    pub seed: u64,
    pub loss_trace: Vec<f64>,
}

impl ModelParams {
    /// Seeded initialisation: standard normal entries scaled by `1/sqrt(r)`,
    /// `X` drawn row-major before `Y`.
    pub fn init(n: usize, m: usize, rank: usize, hyper: Hyperparams, seed: u64) -> Result<Self> {
        if rank == 0 {
            return Err(Error::domain("rank must be at least 1"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scale = 1.0 / (rank as f64).sqrt();
        let mut draw = |rows: usize| {
            Array2::from_shape_fn((rows, rank), |_| {
                let v: f64 = StandardNormal.sample(&mut rng);
                v * scale
            })
        };
        let x = draw(n);
        let y = draw(m);
        Ok(ModelParams {
            x,
            y,
            rank,
            hyper,
            seed,
            loss_trace: Vec::new(),
        })
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.x.nrows(), self.y.nrows())
    }

    pub fn is_finite(&self) -> bool {
        self.x.iter().chain(self.y.iter()).all(|v| v.is_finite())
    }

    /// `sigmoid(X Y^T)` with logits clipped to keep outputs inside (0, 1).
    pub fn predict(&self) -> Array2<f64> {
        self.x
            .dot(&self.y.t())
            .mapv(|z| objective::sigmoid(z.clamp(-LOGIT_CLIP, LOGIT_CLIP)))
    }
}

/// Predicted strengths for one future timestep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionMatrix {
    pub values: Array2<f64>,
    /// 1-based number of steps past the model input.
    pub horizon: usize,
    /// Absolute timestep the prediction stands for.
    pub timestep: usize,
    pub confidence: f64,
}

impl PredictionMatrix {
    pub fn shape(&self) -> (usize, usize) {
        self.values.dim()
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[[row, col]]
    }

    /// Prediction as an incidence matrix (every cell is stored).
    pub fn to_incidence(&self) -> IncidenceMatrix {
        IncidenceMatrix::from_dense(&self.values).expect("predictions lie in (0, 1)")
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    EpochBudget,
    Converged,
    StepRejected,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs_run: usize,
    pub stop: StopReason,
    pub final_loss: f64,
    /// Loss before the first step and after every accepted step of this run.
    pub trace: Vec<f64>,
}

/// Runs up to `steps` gradient-descent epochs starting from `params`,
/// appending to its loss trace. Shared by cold-start training and
/// warm-started fine-tuning.
///
/// The run counts as converged once the mean relative improvement over the
/// last [`CONVERGENCE_WINDOW`] epochs drops below `tolerance`; a single short
/// backtracked step does not stop it.
///
/// Each epoch backtracks from the previous accepted step, doubled (up to
/// `learning_rate`) when that step needed no halving. Trial steps stay on
/// the grid `learning_rate / 2^k`.
pub fn descend(
    mut params: ModelParams,
    objective: &Objective<'_>,
    steps: usize,
    learning_rate: f64,
    tolerance: f64,
) -> Result<(ModelParams, TrainReport)> {
    if !(learning_rate > 0.0 && learning_rate.is_finite()) {
        return Err(Error::domain(format!(
            "learning rate {learning_rate} must be positive"
        )));
    }
    let mut current = objective.evaluate(&params)?;
    let mut loss = current.loss();
    params.loss_trace.push(loss);
    let mut trace = vec![loss];
    let mut stop = StopReason::EpochBudget;
    let mut epochs_run = 0;
    let mut first_trial = learning_rate;
    for epoch in 0..steps {
        let (dx, dy) = objective.gradients_at(&params, &current);
        let g2 = dx.iter().chain(dy.iter()).map(|v| v * v).sum::<f64>();
        if !g2.is_finite() {
            return Err(Error::Numeric {
                context: format!("gradient at epoch {epoch}"),
                detail: g2.to_string(),
            });
        }
        let mut step = first_trial;
        let mut accepted = None;
        let mut cand = params.clone();
        for halvings in 0..MAX_HALVINGS {
            cand.x.assign(&params.x);
            cand.y.assign(&params.y);
            cand.x.scaled_add(-step, &dx);
            cand.y.scaled_add(-step, &dy);
            // Non-finite trial points are rejected like any uphill step.
            if let Ok(e) = objective.evaluate(&cand) {
                if e.loss() <= loss - ARMIJO_C * step * g2 {
                    first_trial = if halvings == 0 { (2.0 * step).min(learning_rate) } else { step };
                    accepted = Some(e);
                    break;
                }
            }
            step *= 0.5;
        }
        let Some(next) = accepted else {
            stop = StopReason::StepRejected;
            break;
        };
        epochs_run += 1;
        params = cand;
        current = next;
        loss = current.loss();
        params.loss_trace.push(loss);
        trace.push(loss);
        if trace.len() > CONVERGENCE_WINDOW {
            let past = trace[trace.len() - 1 - CONVERGENCE_WINDOW];
            let improvement =
                (past - loss) / (CONVERGENCE_WINDOW as f64 * loss.abs().max(f64::MIN_POSITIVE));
            if improvement < tolerance {
                stop = StopReason::Converged;
                break;
            }
        }
    }
    Ok((
        params,
        TrainReport {
            epochs_run,
            stop,
            final_loss: loss,
            trace,
        },
    ))
}

/// Cold-start training from the seeded initialisation.
pub fn train(
    objective: &Objective<'_>,
    rank: usize,
    hyper: &Hyperparams,
    seed: u64,
) -> Result<(ModelParams, TrainReport)> {
    let (n, m) = objective.shape();
    let init = ModelParams::init(n, m, rank, hyper.clone(), seed)?;
    descend(
        init,
        objective,
        hyper.epochs,
        hyper.learning_rate,
        hyper.tolerance,
    )
}

/// Configuration of one training run over a temporal hypergraph.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub rank: usize,
    pub hyper: Hyperparams,
    pub seed: u64,
    pub supervision_fraction: f64,
    pub mask_seed: u64,
    /// Model input timestep; defaults to the second to last.
    pub input_step: Option<usize>,
    pub horizons: usize,
    /// Per-horizon confidence is `confidence_decay^h`.
    pub confidence_decay: f64,
    /// Warm-started steps used to roll predictions past the first horizon.
    pub horizon_steps: usize,
    pub horizon_learning_rate: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            rank: 16,
            hyper: Hyperparams::default(),
            seed: 42,
            supervision_fraction: 0.05,
            mask_seed: 7,
            input_step: None,
            horizons: 2,
            confidence_decay: 0.8,
            horizon_steps: 50,
            horizon_learning_rate: 0.02,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rank == 0 {
            return Err(Error::domain("rank must be at least 1"));
        }
        if self.horizons == 0 {
            return Err(Error::domain("at least one horizon is required"));
        }
        if !(self.confidence_decay > 0.0 && self.confidence_decay <= 1.0) {
            return Err(Error::domain(format!(
                "confidence decay {} outside (0, 1]",
                self.confidence_decay
            )));
        }
        for (name, v) in [
            ("lambda_lap", self.hyper.lambda_lap),
            ("lambda_frob", self.hyper.lambda_frob),
            ("tolerance", self.hyper.tolerance),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::domain(format!(
                    "{name} = {v} must be finite and >= 0"
                )));
            }
        }
        Ok(())
    }

    pub fn confidence(&self, horizon: usize) -> f64 {
        self.confidence_decay.powi(horizon as i32)
    }
}

/// Versioned on-disk form of [`ModelParams`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSnapshotFile {
    pub format: String,
    pub version: u32,
    pub seed: u64,
    pub rank: usize,
    pub hyperparameters: Hyperparams,
    pub x: DenseBlock,
    pub y: DenseBlock,
    pub loss_trace: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DenseBlock {
    pub rows: usize,
    pub cols: usize,
    /// Row-major values.
    pub data: Vec<f64>,
}

pub const SNAPSHOT_FORMAT: &str = "hyperlens-model";
pub const SNAPSHOT_VERSION: u32 = 1;

impl DenseBlock {
    fn from_array(a: &Array2<f64>) -> Self {
        DenseBlock {
            rows: a.nrows(),
            cols: a.ncols(),
            data: a.iter().copied().collect(),
        }
    }

    fn into_array(self) -> Result<Array2<f64>> {
        Array2::from_shape_vec((self.rows, self.cols), self.data)
            .map_err(|e| Error::Parse(format!("factor block: {e}")))
    }
}

impl ModelParams {
    pub fn to_snapshot(&self) -> ModelSnapshotFile {
        ModelSnapshotFile {
            format: SNAPSHOT_FORMAT.into(),
            version: SNAPSHOT_VERSION,
            seed: self.seed,
            rank: self.rank,
            hyperparameters: self.hyper.clone(),
            x: DenseBlock::from_array(&self.x),
            y: DenseBlock::from_array(&self.y),
            loss_trace: self.loss_trace.clone(),
        }
    }

    pub fn from_snapshot(s: ModelSnapshotFile) -> Result<Self> {
        if s.format != SNAPSHOT_FORMAT || s.version != SNAPSHOT_VERSION {
            return Err(Error::Incompatible(format!(
                "model snapshot {} v{}, expected {SNAPSHOT_FORMAT} v{SNAPSHOT_VERSION}",
                s.format, s.version
            )));
        }
        if s.x.cols != s.rank || s.y.cols != s.rank {
            return Err(Error::dimension(format!(
                "factor widths {} / {} for rank {}",
                s.x.cols, s.y.cols, s.rank
            )));
        }
        Ok(ModelParams {
            x: s.x.into_array()?,
            y: s.y.into_array()?,
            rank: s.rank,
            hyper: s.hyperparameters,
            seed: s.seed,
            loss_trace: s.loss_trace,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&self.to_snapshot())?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        ModelParams::from_snapshot(serde_json::from_str(s)?)
    }
}

/// Supervision available for one horizon.
pub struct HorizonTarget<'a> {
    pub mask: &'a SupervisionMask,
    pub labels: &'a IncidenceMatrix,
}

/// Rolls predictions forward: horizon `h + 1` warm-starts from the
/// parameters of horizon `h` and fits its prediction as the new input, plus
/// any supervision known for that step.
pub fn roll_forward(
    first: (&ModelParams, PredictionMatrix),
    laplacian: &LaplacianMatrix,
    cfg: &TrainConfig,
    targets: &[Option<HorizonTarget<'_>>],
) -> Result<Vec<PredictionMatrix>> {
    let (mut params, first_pred) = (first.0.clone(), first.1);
    let mut preds = vec![first_pred];
    for h in 2..=cfg.horizons {
        let prev = preds.last().expect("nonempty");
        let input = prev.to_incidence();
        let objective = match targets.get(h - 1).and_then(Option::as_ref) {
            Some(t) => Objective::new(
                &input,
                t.mask,
                t.labels,
                laplacian,
                cfg.hyper.lambda_lap,
                cfg.hyper.lambda_frob,
            )?,
            None => Objective::unsupervised(
                &input,
                laplacian,
                cfg.hyper.lambda_lap,
                cfg.hyper.lambda_frob,
            )?,
        };
        let timestep = prev.timestep + 1;
        let (next, _) = descend(
            params,
            &objective,
            cfg.horizon_steps,
            cfg.horizon_learning_rate,
            0.0,
        )?;
        preds.push(PredictionMatrix {
            values: next.predict(),
            horizon: h,
            timestep,
            confidence: cfg.confidence(h),
        });
        params = next;
    }
    Ok(preds)
}
