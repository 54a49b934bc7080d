//! Session engine: the state an analyst works on, the commands that change
//! it, and their provenance.
//!
//! Every state change goes through [`Engine::execute`]: the command is
//! applied to a copy of the current state by a pure transition function, the
//! event is recorded (and persisted, when the log has a file), and only then
//! is the new state installed. Replay runs the same transition function over
//! a recorded chain and checks the digests of its outputs against the log.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use chrono::{DateTime, Utc};
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feedback::{
    apply_feedback, change_matrix, fine_tune, Decision, FeedbackSet, FeedbackTransaction,
    FineTuneConfig, TransactionState,
};
use crate::hierarchy::{HierarchyEdit, PartitionTree};
use crate::hypergraph::{
    normalized_laplacian, IncidenceMatrix, LaplacianMatrix, TemporalHypergraph, TimeIndex,
};
use crate::ingest::{build_temporal_hypergraphs, parse_corpus_str, Binning, CorpusIndex, Ontology};
use crate::predictor::{
    evaluate_horizons, split_supervision, train, EvalReport, HorizonTarget, ModelParams, Objective,
    PredictionMatrix, SupervisionMask, TrainConfig, TrainReport,
};
use crate::provenance::{matrix_digest, sha256_hex, EventKind, ProvenanceLog};
use crate::reorder::{compute_ordering, Axis, Ordering, Strategy};
use crate::synthetic::{planted, PlantedConfig};

/// Where a dataset comes from. File sources carry content digests so a
/// replay notices edited inputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum DataSource {
    Files {
        corpus: PathBuf,
        ontology: PathBuf,
        corpus_sha256: String,
        ontology_sha256: String,
        #[serde(default)]
        binning: Binning,
    },
    Inline {
        corpus: String,
        ontology: String,
        #[serde(default)]
        binning: Binning,
    },
    Planted {
        config: PlantedConfig,
    },
}

impl DataSource {
    /// File source with digests of the current file contents.
    pub fn files(
        corpus: impl AsRef<Path>,
        ontology: impl AsRef<Path>,
        binning: Binning,
    ) -> Result<Self> {
        let (corpus, ontology) = (corpus.as_ref().to_owned(), ontology.as_ref().to_owned());
        Ok(DataSource::Files {
            corpus_sha256: sha256_hex(&std::fs::read(&corpus)?),
            ontology_sha256: sha256_hex(&std::fs::read(&ontology)?),
            corpus,
            ontology,
            binning,
        })
    }

    pub fn load(&self) -> Result<Dataset> {
        match self {
            DataSource::Files {
                corpus,
                ontology,
                corpus_sha256,
                ontology_sha256,
                binning,
            } => {
                let c = std::fs::read(corpus)?;
                let o = std::fs::read(ontology)?;
                for (path, bytes, want) in
                    [(corpus, &c, corpus_sha256), (ontology, &o, ontology_sha256)]
                {
                    let got = sha256_hex(bytes);
                    if &got != want {
                        return Err(Error::Incompatible(format!(
                            "{} changed: sha256 {got}, recorded {want}",
                            path.display()
                        )));
                    }
                }
                let c = String::from_utf8(c).map_err(|e| Error::Parse(format!("corpus: {e}")))?;
                let o = String::from_utf8(o).map_err(|e| Error::Parse(format!("ontology: {e}")))?;
                Dataset::from_text(&c, &o, *binning)
            }
            DataSource::Inline {
                corpus,
                ontology,
                binning,
            } => Dataset::from_text(corpus, ontology, *binning),
            DataSource::Planted { config } => {
                let p = planted(config)?;
                Ok(Dataset {
                    explicit: p.explicit,
                    implicit: p.implicit,
                    index: None,
                    truth: Some(p.truth),
                    warnings: Vec::new(),
                })
            }
        }
    }
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub explicit: TemporalHypergraph,
    pub implicit: TemporalHypergraph,
    /// Raw-content index; absent for generated data.
    pub index: Option<CorpusIndex>,
    /// Noise-free slices of generated data.
    pub truth: Option<Vec<IncidenceMatrix>>,
    pub warnings: Vec<String>,
}

impl Dataset {
    pub fn from_text(corpus: &str, ontology: &str, binning: Binning) -> Result<Self> {
        let parsed = parse_corpus_str(corpus)?;
        let ont = Ontology::from_json(ontology)?;
        let out = build_temporal_hypergraphs(&parsed.documents, &ont, binning)?;
        let mut warnings = parsed.warnings;
        warnings.extend(
            parsed
                .errors
                .iter()
                .map(|e| format!("line {}: {}", e.line, e.message)),
        );
        Ok(Dataset {
            explicit: out.explicit,
            implicit: out.implicit,
            index: Some(out.index),
            truth: None,
            warnings,
        })
    }

    pub fn digest(&self) -> String {
        let mut parts = String::new();
        for h in [&self.explicit, &self.implicit] {
            for s in h.slices() {
                parts.push_str(&matrix_digest(&s.to_dense()));
            }
            parts.push_str(&sha256_hex(
                serde_json::to_string(&(h.node_labels(), h.edge_labels(), h.time_labels()))
                    .expect("labels serialize")
                    .as_bytes(),
            ));
        }
        sha256_hex(parts.as_bytes())
    }

    pub fn n_timesteps(&self) -> usize {
        self.implicit.n_timesteps()
    }
}

/// A trained model with its inputs, masks and forecasts.
#[derive(Clone, Debug)]
pub struct ModelState {
    pub config: TrainConfig,
    pub input_step: usize,
    /// Input slice with every accepted assertion applied.
    pub input: IncidenceMatrix,
    /// Reconstruction weights of asserted cells.
    pub pinned: BTreeMap<(usize, usize), f64>,
    pub laplacian: Arc<LaplacianMatrix>,
    pub train_mask: SupervisionMask,
    pub eval_mask: SupervisionMask,
    /// Training masks for horizons past the first, where labels exist.
    pub horizon_masks: Vec<Option<SupervisionMask>>,
    pub params: ModelParams,
    pub report: TrainReport,
    pub predictions: Vec<PredictionMatrix>,
    pub id: String,
}

impl ModelState {
    pub fn prediction(&self, horizon: usize) -> Option<&PredictionMatrix> {
        horizon.checked_sub(1).and_then(|h| self.predictions.get(h))
    }

    fn fingerprint(params: &ModelParams, predictions: &[PredictionMatrix]) -> String {
        let mut s = matrix_digest(&params.x) + &matrix_digest(&params.y);
        for p in predictions {
            s.push_str(&matrix_digest(&p.values));
        }
        sha256_hex(s.as_bytes())[..16].to_owned()
    }
}

fn horizon_count(cfg: &TrainConfig, input_step: usize, timesteps: usize) -> usize {
    // Supervised horizons plus one step past the last known slice.
    cfg.horizons.min(timesteps - 1 - input_step + 1)
}

/// Rolls the first-horizon parameters forward through the remaining horizons.
fn forecast(
    params: &ModelParams,
    ds: &Dataset,
    cfg: &TrainConfig,
    input_step: usize,
    lap: &LaplacianMatrix,
    horizon_masks: &[Option<SupervisionMask>],
) -> Result<Vec<PredictionMatrix>> {
    let horizons = horizon_count(cfg, input_step, ds.n_timesteps());
    let first = PredictionMatrix {
        values: params.predict(),
        horizon: 1,
        timestep: input_step + 1,
        confidence: cfg.confidence(1),
    };
    let targets: Vec<Option<HorizonTarget<'_>>> = (1..=horizons)
        .map(|h| {
            horizon_masks
                .get(h - 1)
                .and_then(Option::as_ref)
                .map(|mask| HorizonTarget {
                    mask,
                    labels: &ds.implicit.slices()[input_step + h],
                })
        })
        .collect();
    let capped = TrainConfig {
        horizons,
        ..cfg.clone()
    };
    crate::predictor::roll_forward((params, first), lap, &capped, &targets)
}

/// Cold-start training on a dataset.
pub fn train_model(ds: &Dataset, cfg: &TrainConfig) -> Result<ModelState> {
    cfg.validate()?;
    let t = ds.n_timesteps();
    if t < 2 {
        return Err(Error::domain("training needs at least two timesteps"));
    }
    let s = cfg.input_step.unwrap_or(t - 2);
    if s + 1 >= t {
        return Err(Error::index(format!(
            "input step {s} leaves no label slice in {t} timesteps"
        )));
    }
    if cfg.horizons > horizon_count(cfg, s, t) {
        log::warn!(
            "{} horizons requested, labels allow {}",
            cfg.horizons,
            horizon_count(cfg, s, t)
        );
    }
    let lap = Arc::new(normalized_laplacian(&ds.explicit, TimeIndex(s), None)?);
    let input = ds.implicit.slices()[s].clone();
    let labels = &ds.implicit.slices()[s + 1];
    let (train_mask, eval_mask) =
        split_supervision(labels, cfg.supervision_fraction, cfg.mask_seed)?;
    let obj = Objective::new(
        &input,
        &train_mask,
        labels,
        &lap,
        cfg.hyper.lambda_lap,
        cfg.hyper.lambda_frob,
    )?;
    let (params, report) = train(&obj, cfg.rank, &cfg.hyper, cfg.seed)?;
    let horizons = horizon_count(cfg, s, t);
    let mut horizon_masks = vec![None];
    for h in 2..=horizons {
        horizon_masks.push(match ds.implicit.slices().get(s + h) {
            Some(next) => {
                Some(split_supervision(next, cfg.supervision_fraction, cfg.mask_seed + h as u64)?.0)
            }
            None => None,
        });
    }
    let predictions = forecast(&params, ds, cfg, s, &lap, &horizon_masks)?;
    Ok(ModelState {
        id: ModelState::fingerprint(&params, &predictions),
        config: cfg.clone(),
        input_step: s,
        input,
        pinned: BTreeMap::new(),
        laplacian: lap,
        train_mask,
        eval_mask,
        horizon_masks,
        params,
        report,
        predictions,
    })
}

/// Held-out AUC and recall of every horizon whose timestep has data.
///
/// Labels come from the noise-free slices when the dataset has them and from
/// the observed slices otherwise; masks are the held-out halves drawn at
/// training time.
pub fn evaluate_model(ds: &Dataset, model: &ModelState, threshold: f64) -> Result<EvalReport> {
    let slices = ds.truth.as_deref().unwrap_or(ds.implicit.slices());
    let mut masks = Vec::new();
    for p in &model.predictions {
        let Some(labels) = slices.get(p.timestep) else {
            break;
        };
        let mask = if p.horizon == 1 {
            model.eval_mask.clone()
        } else {
            let observed = &ds.implicit.slices()[p.timestep];
            let seed = model.config.mask_seed + p.horizon as u64;
            split_supervision(observed, model.config.supervision_fraction, seed)?.1
        };
        masks.push((p, mask, labels));
    }
    let items: Vec<_> = masks.iter().map(|(p, m, l)| (*p, m, *l)).collect();
    evaluate_horizons(&items, threshold)
}

/// Fine-tunes `model` on its input with `feedback` applied and packages the
/// result as a previewing transaction.
pub fn preview_feedback(
    ds: &Dataset,
    model: &Arc<ModelState>,
    feedback: &FeedbackSet,
    cfg: &FineTuneConfig,
) -> Result<FeedbackTransaction<ModelState>> {
    cfg.validate()?;
    let limit = ds.n_timesteps() + model.predictions.len();
    if let Some((k, a)) = feedback
        .assertions()
        .iter()
        .enumerate()
        .find(|(_, a)| a.timestep.0 >= limit)
    {
        return Err(Error::index(format!(
            "assertion {k}: timestep {} outside 0..{limit}",
            a.timestep.0
        )));
    }
    let input = apply_feedback(&model.input, feedback)?;
    let mut pinned = model.pinned.clone();
    for a in feedback.assertions() {
        pinned.insert((a.node.0, a.edge.0), cfg.feedback_weight);
    }
    let weights: Vec<(usize, usize, f64)> = pinned.iter().map(|(&(i, j), &w)| (i, j, w)).collect();
    let s = model.input_step;
    let labels = &ds.implicit.slices()[s + 1];
    let obj = Objective::new(
        &input,
        &model.train_mask,
        labels,
        &model.laplacian,
        model.config.hyper.lambda_lap,
        model.config.hyper.lambda_frob,
    )?
    .with_cell_weights(&weights)?;
    let (params, report) = fine_tune(&model.params, &obj, cfg)?;
    let predictions = forecast(
        &params,
        ds,
        &model.config,
        s,
        &model.laplacian,
        &model.horizon_masks,
    )?;
    let after = ModelState {
        id: ModelState::fingerprint(&params, &predictions),
        input,
        pinned,
        params,
        report,
        predictions,
        ..(**model).clone()
    };
    let changes = model
        .predictions
        .iter()
        .zip(&after.predictions)
        .map(|(b, a)| change_matrix(b, a, &model.id, &after.id))
        .collect::<Result<Vec<_>>>()?;
    Ok(FeedbackTransaction::new(
        Arc::clone(model),
        Arc::new(after),
        feedback.clone(),
        changes,
    ))
}

mod cell_map {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};
    use std::collections::BTreeMap;

    pub fn serialize<S: Serializer, V: Serialize>(
        m: &BTreeMap<(usize, usize), V>,
        s: S,
    ) -> Result<S::Ok, S::Error> {
        s.collect_seq(m.iter())
    }

    pub fn deserialize<'de, D: Deserializer<'de>, V: Deserialize<'de>>(
        d: D,
    ) -> Result<BTreeMap<(usize, usize), V>, D::Error> {
        let v: Vec<((usize, usize), V)> = Vec::deserialize(d)?;
        Ok(v.into_iter().collect())
    }
}

/// Everything about the view that is not the model: filter, orderings,
/// hierarchies and the analyst's marks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ViewState {
    pub threshold: f64,
    /// Tree versions per axis, oldest first; the last one is current.
    pub row_trees: Vec<Arc<PartitionTree>>,
    pub col_trees: Vec<Arc<PartitionTree>>,
    pub row_ordering: Option<Arc<Ordering>>,
    pub col_ordering: Option<Arc<Ordering>>,
    pub markings: BTreeSet<(usize, usize)>,
    #[serde(with = "cell_map")]
    pub annotations: BTreeMap<(usize, usize), String>,
}

impl Default for ViewState {
    fn default() -> Self {
        ViewState::new(0, 0)
    }
}

impl ViewState {
    pub fn new(rows: usize, cols: usize) -> Self {
        ViewState {
            threshold: 0.5,
            row_trees: vec![Arc::new(PartitionTree::flat(rows))],
            col_trees: vec![Arc::new(PartitionTree::flat(cols))],
            row_ordering: None,
            col_ordering: None,
            markings: BTreeSet::new(),
            annotations: BTreeMap::new(),
        }
    }

    pub fn tree(&self, axis: Axis) -> &Arc<PartitionTree> {
        match axis {
            Axis::Rows => self.row_trees.last(),
            Axis::Cols => self.col_trees.last(),
        }
        .expect("tree history is never empty")
    }

    fn push_tree(&mut self, axis: Axis, t: PartitionTree) {
        match axis {
            Axis::Rows => self.row_trees.push(Arc::new(t)),
            Axis::Cols => self.col_trees.push(Arc::new(t)),
        }
    }

    pub fn ordering(&self, axis: Axis) -> Option<&Arc<Ordering>> {
        match axis {
            Axis::Rows => self.row_ordering.as_ref(),
            Axis::Cols => self.col_ordering.as_ref(),
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct EngineState {
    pub dataset: Option<Arc<Dataset>>,
    pub model: Option<Arc<ModelState>>,
    pub pending: Option<Arc<FeedbackTransaction<ModelState>>>,
    pub view: ViewState,
}

impl EngineState {
    pub fn dataset(&self) -> Result<&Arc<Dataset>> {
        self.dataset
            .as_ref()
            .ok_or_else(|| Error::state("no dataset ingested"))
    }

    pub fn model(&self) -> Result<&Arc<ModelState>> {
        self.model
            .as_ref()
            .ok_or_else(|| Error::state("no trained model"))
    }

    /// The pending transaction, if one is still previewing.
    pub fn previewing(&self) -> Option<&Arc<FeedbackTransaction<ModelState>>> {
        self.pending
            .as_ref()
            .filter(|tx| tx.state() == TransactionState::Previewing)
    }

    /// Matrix the view orders and filters: the first forecast when a model
    /// exists, otherwise the last observed slice.
    pub fn display_matrix(&self) -> Result<Array2<f64>> {
        if let Some(m) = &self.model {
            return Ok(m.predictions[0].values.clone());
        }
        let ds = self.dataset()?;
        Ok(ds
            .implicit
            .slices()
            .last()
            .expect("hypergraphs have at least one slice")
            .to_dense())
    }

    /// Digest over every part of the state; equal digests mean bit-identical
    /// states.
    pub fn fingerprint(&self) -> String {
        let mut s = String::new();
        if let Some(d) = &self.dataset {
            s += &d.digest();
        }
        s.push('|');
        if let Some(m) = &self.model {
            s += &m.id;
            s += &matrix_digest(&m.input.to_dense());
            s += &format!("{:?}", m.pinned);
        }
        s.push('|');
        if let Some(tx) = &self.pending {
            s += &format!("{:?}{}", tx.state(), tx.after().id);
        }
        s.push('|');
        s += &serde_json::to_string(&self.view).expect("view serializes");
        sha256_hex(s.as_bytes())
    }
}

/// A state change. Serialized into the provenance payload and read back on
/// replay.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "snake_case")]
pub enum Command {
    Ingest {
        data: DataSource,
        /// Initial cutoff threshold of the view; 0.5 when absent.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        threshold: Option<f64>,
    },
    Train {
        config: TrainConfig,
    },
    Reorder {
        axis: Axis,
        strategy: Strategy,
        #[serde(default)]
        respect_filter: bool,
    },
    Hierarchy {
        axis: Axis,
        edit: HierarchyEdit,
    },
    Filter {
        threshold: f64,
    },
    Search {
        query: String,
    },
    FeedbackPreview {
        feedback: FeedbackSet,
        #[serde(default)]
        config: FineTuneConfig,
    },
    FeedbackAccept,
    FeedbackReject,
    Annotate {
        row: usize,
        col: usize,
        /// `None` removes the note.
        text: Option<String>,
    },
    Mark {
        row: usize,
        col: usize,
        starred: bool,
    },
}

impl Command {
    pub fn ingest(data: DataSource) -> Self {
        Command::Ingest {
            data,
            threshold: None,
        }
    }

    pub fn kind(&self) -> EventKind {
        match self {
            Command::Ingest { .. } => EventKind::Ingest,
            Command::Train { .. } => EventKind::Train,
            Command::Reorder { .. } => EventKind::Reorder,
            Command::Hierarchy { .. } => EventKind::HierarchyEdit,
            Command::Filter { .. } => EventKind::FilterChange,
            Command::Search { .. } => EventKind::Search,
            Command::FeedbackPreview { .. } => EventKind::FeedbackPreview,
            Command::FeedbackAccept => EventKind::FeedbackAccept,
            Command::FeedbackReject => EventKind::FeedbackReject,
            Command::Annotate { .. } => EventKind::Annotation,
            Command::Mark { .. } => EventKind::Marking,
        }
    }
}

/// Digests of what a command produced, keyed by output name.
pub type Outputs = BTreeMap<String, String>;

fn tree_digest(t: &PartitionTree) -> String {
    sha256_hex(
        serde_json::to_string(t)
            .expect("tree serializes")
            .as_bytes(),
    )
}

fn check_cell(state: &EngineState, row: usize, col: usize) -> Result<()> {
    let ds = state.dataset()?;
    let (n, m) = (ds.implicit.n_nodes(), ds.implicit.n_edges());
    if row >= n || col >= m {
        return Err(Error::index(format!("cell ({row}, {col}) outside {n}x{m}")));
    }
    Ok(())
}

fn settle(state: &EngineState, decision: Decision) -> Result<(EngineState, Outputs)> {
    let tx = state
        .previewing()
        .ok_or_else(|| Error::state("no feedback transaction is previewing"))?;
    let mut tx = (**tx).clone();
    let model = tx.resolve(decision)?;
    let mut next = state.clone();
    let id = model.id.clone();
    // A settled transaction lives on in the log only, so a reject leaves
    // exactly the pre-preview state behind.
    next.model = Some(model);
    next.pending = None;
    Ok((next, BTreeMap::from([("model".into(), id)])))
}

/// Pure state transition shared by live execution and replay.
pub fn apply(state: &EngineState, cmd: &Command) -> Result<(EngineState, Outputs)> {
    let mut next = state.clone();
    let mut out = Outputs::new();
    match cmd {
        Command::Ingest { data, threshold } => {
            let mut view = ViewState::new(0, 0);
            if let Some(t) = threshold {
                if !(0.0..=1.0).contains(t) {
                    return Err(Error::domain(format!("threshold {t} outside [0, 1]")));
                }
                view.threshold = *t;
            }
            let ds = data.load()?;
            out.insert("dataset".into(), ds.digest());
            next = EngineState {
                view: ViewState {
                    row_trees: vec![Arc::new(PartitionTree::flat(ds.implicit.n_nodes()))],
                    col_trees: vec![Arc::new(PartitionTree::flat(ds.implicit.n_edges()))],
                    ..view
                },
                dataset: Some(Arc::new(ds)),
                model: None,
                pending: None,
            };
        }
        Command::Train { config } => {
            if state.previewing().is_some() {
                return Err(Error::state(
                    "resolve the pending feedback transaction first",
                ));
            }
            let model = train_model(state.dataset()?, config)?;
            out.insert("model".into(), model.id.clone());
            next.model = Some(Arc::new(model));
            next.pending = None;
        }
        Command::Reorder {
            axis,
            strategy,
            respect_filter,
        } => {
            let m = state.display_matrix()?;
            let filter = respect_filter.then_some(state.view.threshold);
            let ordering = compute_ordering(m.view(), *axis, *strategy, filter)?;
            let tree = next.view.tree(*axis).sorted_by_ranks(&ordering.ranks())?;
            out.insert(
                "ordering".into(),
                sha256_hex(format!("{:?}", ordering.permutation).as_bytes()),
            );
            out.insert("tree".into(), tree_digest(&tree));
            next.view.push_tree(*axis, tree);
            let ordering = Some(Arc::new(ordering));
            match axis {
                Axis::Rows => next.view.row_ordering = ordering,
                Axis::Cols => next.view.col_ordering = ordering,
            }
        }
        Command::Hierarchy { axis, edit } => {
            state.dataset()?;
            let tree = next.view.tree(*axis).mutate(edit)?;
            out.insert("tree".into(), tree_digest(&tree));
            next.view.push_tree(*axis, tree);
        }
        Command::Filter { threshold } => {
            if !(0.0..=1.0).contains(threshold) {
                return Err(Error::domain(format!(
                    "threshold {threshold} outside [0, 1]"
                )));
            }
            next.view.threshold = *threshold;
        }
        Command::Search { query } => {
            let hits = crate::search::search(state, query, crate::search::Page::default())?;
            out.insert("matches".into(), hits.total().to_string());
        }
        Command::FeedbackPreview { feedback, config } => {
            if state.previewing().is_some() {
                return Err(Error::state("a feedback transaction is already previewing"));
            }
            let tx = preview_feedback(state.dataset()?, state.model()?, feedback, config)?;
            out.insert("after".into(), tx.after().id.clone());
            next.pending = Some(Arc::new(tx));
        }
        Command::FeedbackAccept => return settle(state, Decision::Accept),
        Command::FeedbackReject => return settle(state, Decision::Reject),
        Command::Annotate { row, col, text } => {
            check_cell(state, *row, *col)?;
            match text {
                Some(t) => next.view.annotations.insert((*row, *col), t.clone()),
                None => next.view.annotations.remove(&(*row, *col)),
            };
        }
        Command::Mark { row, col, starred } => {
            check_cell(state, *row, *col)?;
            if *starred {
                next.view.markings.insert((*row, *col));
            } else {
                next.view.markings.remove(&(*row, *col));
            }
        }
    }
    Ok((next, out))
}

#[derive(Serialize, Deserialize)]
struct Payload {
    #[serde(flatten)]
    command: Command,
    outputs: Outputs,
}

/// Rebuilds the state at `up_to` by re-running its chain from the root.
/// Output digests must match the recorded ones.
pub fn replay(log: &ProvenanceLog, up_to: u64) -> Result<EngineState> {
    let mut state = EngineState::default();
    for e in log.chain(up_to)? {
        e.verify()?;
        if e.kind == EventKind::Undo {
            continue;
        }
        let p: Payload =
            serde_json::from_value(e.payload.clone()).map_err(|err| Error::Divergence {
                seq: e.seq,
                detail: format!("unreadable payload: {err}"),
            })?;
        if p.command.kind() != e.kind {
            return Err(Error::Divergence {
                seq: e.seq,
                detail: format!(
                    "event kind {:?} holds a {:?} command",
                    e.kind,
                    p.command.kind()
                ),
            });
        }
        let (next, outputs) = apply(&state, &p.command).map_err(|err| Error::Divergence {
            seq: e.seq,
            detail: err.to_string(),
        })?;
        if outputs != p.outputs {
            return Err(Error::Divergence {
                seq: e.seq,
                detail: format!("outputs {outputs:?}, recorded {:?}", p.outputs),
            });
        }
        state = next;
    }
    Ok(state)
}

/// Result of a committed command.
#[derive(Clone, Debug, PartialEq)]
pub struct Receipt {
    pub seq: u64,
    pub outputs: Outputs,
}

/// One analyst session: current state plus its provenance log.
#[derive(Debug)]
pub struct Engine {
    session: String,
    log: ProvenanceLog,
    head: Option<u64>,
    state: EngineState,
}

impl Engine {
    pub fn new(session: impl Into<String>) -> Self {
        Engine::with_log(session, ProvenanceLog::in_memory())
    }

    /// Engine appending to `log`; the log must be empty (see [`Engine::restore`]).
    pub fn with_log(session: impl Into<String>, log: ProvenanceLog) -> Self {
        Engine {
            session: session.into(),
            head: None,
            state: EngineState::default(),
            log,
        }
    }

    /// Reopens a session by replaying its log up to its last event.
    pub fn restore(session: impl Into<String>, log: ProvenanceLog) -> Result<Self> {
        let session = session.into();
        let head = log.head(&session).or(log.events().last().map(|e| e.seq));
        let state = match head {
            Some(h) => replay(&log, h)?,
            None => EngineState::default(),
        };
        Ok(Engine {
            session,
            log,
            head,
            state,
        })
    }

    pub fn session(&self) -> &str {
        &self.session
    }

    pub fn state(&self) -> &EngineState {
        &self.state
    }

    pub fn log(&self) -> &ProvenanceLog {
        &self.log
    }

    pub fn head(&self) -> Option<u64> {
        self.head
    }

    pub fn execute(&mut self, cmd: Command) -> Result<Receipt> {
        let (next, outputs) = apply(&self.state, &cmd)?;
        self.commit(cmd, next, outputs)
    }

    fn commit(&mut self, cmd: Command, next: EngineState, outputs: Outputs) -> Result<Receipt> {
        let payload = serde_json::to_value(Payload {
            command: cmd.clone(),
            outputs: outputs.clone(),
        })?;
        let seq = self
            .log
            .record(self.head, &self.session, cmd.kind(), payload)?
            .seq;
        self.head = Some(seq);
        self.state = next;
        Ok(Receipt { seq, outputs })
    }

    /// Installs a transaction computed off the engine (see
    /// [`preview_feedback`]) as if `FeedbackPreview` had run here. Fails if
    /// the committed model moved on in the meantime.
    pub fn commit_preview(
        &mut self,
        feedback: FeedbackSet,
        config: FineTuneConfig,
        tx: FeedbackTransaction<ModelState>,
    ) -> Result<Receipt> {
        if self.state.previewing().is_some() {
            return Err(Error::state("a feedback transaction is already previewing"));
        }
        let model = self.state.model()?;
        if !Arc::ptr_eq(model, tx.before()) {
            return Err(Error::state(
                "the committed model changed while the preview ran",
            ));
        }
        let mut next = self.state.clone();
        let outputs = BTreeMap::from([("after".to_owned(), tx.after().id.clone())]);
        next.pending = Some(Arc::new(tx));
        self.commit(Command::FeedbackPreview { feedback, config }, next, outputs)
    }

    /// Steps back to the predecessor of the current effective event by
    /// replaying the log to it, and records an undo marker.
    pub fn undo(&mut self) -> Result<Receipt> {
        let head = self.head.ok_or_else(|| Error::state("nothing to undo"))?;
        let current = self.log.effective(head)?;
        let target = self
            .log
            .event(current)?
            .parent
            .ok_or_else(|| Error::state("nothing to undo before the first event"))?;
        let state = replay(&self.log, target)?;
        let payload = serde_json::json!({ "undone": current, "restored": target });
        let seq = self
            .log
            .record(Some(target), &self.session, EventKind::Undo, payload)?
            .seq;
        self.head = Some(seq);
        self.state = state;
        Ok(Receipt {
            seq,
            outputs: Outputs::new(),
        })
    }

    /// Moves the head to an earlier event; the next command starts a branch
    /// there.
    pub fn checkout(&mut self, seq: u64) -> Result<()> {
        self.log.event(seq)?;
        self.state = replay(&self.log, seq)?;
        self.head = Some(seq);
        Ok(())
    }
}

/// Current time, truncated to whole microseconds so records round-trip.
pub fn now() -> DateTime<Utc> {
    DateTime::from_timestamp_micros(Utc::now().timestamp_micros()).expect("valid clock")
}
