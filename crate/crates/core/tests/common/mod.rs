//! Brute-force oracles and end-to-end scenarios shared by the integration
//! tests and the acceptance target.
#![allow(dead_code)]

use std::path::Path;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use hyperlens_core::engine::{
    evaluate_model, now, replay, train_model, Command, DataSource, Engine, EngineState,
};
use hyperlens_core::feedback::{fine_tune, Assertion, FeedbackSet, FineTuneConfig};
use hyperlens_core::hypergraph::{
    normalized_laplacian, EdgeId, IncidenceMatrix, LaplacianMatrix, NodeId, Role,
    TemporalHypergraph, TimeIndex,
};
use hyperlens_core::predictor::{
    train, EvalReport, Hyperparams, ModelParams, Objective, SupervisionMask, TrainConfig,
};
use hyperlens_core::provenance::ProvenanceLog;
use hyperlens_core::reorder::{compute_ordering, Axis, DistanceMetric, Linkage, Strategy};
use hyperlens_core::synthetic::PlantedConfig;

pub fn hypergraph(slices: Vec<IncidenceMatrix>) -> TemporalHypergraph {
    let (n, m) = slices[0].shape();
    TemporalHypergraph::new(
        Role::Explicit,
        (0..n).map(|i| format!("v{i}")).collect(),
        (0..m).map(|j| format!("e{j}")).collect(),
        (0..slices.len()).map(|t| format!("t{t}")).collect(),
        slices,
    )
    .unwrap()
}

/// Entrywise re-evaluation of `I - Dv^-1/2 H W De^-1 H^T Dv^-1/2`, with
/// isolated nodes and empty edges contributing nothing.
pub fn laplacian_oracle(h: &Array2<f64>, w: &[f64]) -> Array2<f64> {
    let (n, m) = h.dim();
    let dv: Vec<f64> = (0..n)
        .map(|i| (0..m).map(|e| w[e] * h[[i, e]]).sum())
        .collect();
    let de: Vec<f64> = (0..m).map(|e| (0..n).map(|i| h[[i, e]]).sum()).collect();
    Array2::from_shape_fn((n, n), |(i, j)| {
        let mut a = 0.0;
        if dv[i] > 0.0 && dv[j] > 0.0 {
            for e in 0..m {
                if de[e] > 0.0 {
                    a += h[[i, e]] * w[e] * h[[j, e]] / de[e];
                }
            }
            a /= (dv[i] * dv[j]).sqrt();
        }
        if i == j {
            1.0 - a
        } else {
            -a
        }
    })
}

pub fn laplacian_error(h: &Array2<f64>, w: Option<&[f64]>) -> f64 {
    let ones = vec![1.0; h.ncols()];
    let weights = w.unwrap_or(&ones);
    let g = hypergraph(vec![IncidenceMatrix::from_dense(h).unwrap()]);
    let l = normalized_laplacian(&g, TimeIndex(0), w).unwrap();
    let oracle = laplacian_oracle(h, weights);
    l.values()
        .iter()
        .zip(oracle.iter())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max)
}

/// Every binary `n x m` matrix with `n <= 6`, `m <= 4` and at most 12 cells.
pub fn exhaustive_binary() -> impl Iterator<Item = Array2<f64>> {
    (1..=6usize)
        .flat_map(|n| (1..=4usize).map(move |m| (n, m)))
        .filter(|&(n, m)| n * m <= 12)
        .flat_map(|(n, m)| {
            (0u32..1 << (n * m)).map(move |bits| {
                Array2::from_shape_fn((n, m), |(i, j)| f64::from((bits >> (i * m + j)) & 1))
            })
        })
}

/// Seeded binary matrices for the shapes too large to enumerate.
pub fn sampled_binary(per_shape: usize, seed: u64) -> Vec<Array2<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for n in 1..=6usize {
        for m in 1..=4usize {
            if n * m <= 12 {
                continue;
            }
            for _ in 0..per_shape {
                out.push(Array2::from_shape_fn((n, m), |_| {
                    f64::from(u8::from(rng.random_bool(0.5)))
                }));
            }
        }
    }
    out
}

pub struct LaplacianSweep {
    pub instances: usize,
    pub max_error: f64,
}

/// Exhaustive small shapes, sampled larger ones, and one weighted variant
/// per sampled matrix.
pub fn laplacian_sweep() -> LaplacianSweep {
    let mut sweep = LaplacianSweep {
        instances: 0,
        max_error: 0.0,
    };
    let mut record = |err: f64| {
        sweep.instances += 1;
        sweep.max_error = sweep.max_error.max(err);
    };
    for h in exhaustive_binary() {
        record(laplacian_error(&h, None));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for h in sampled_binary(200, 3) {
        record(laplacian_error(&h, None));
        let w: Vec<f64> = (0..h.ncols()).map(|_| rng.random_range(0.0..3.0)).collect();
        record(laplacian_error(&h, Some(&w)));
    }
    sweep
}

/// Random objective inputs: soft input slice, binary labels, a supervision
/// mask, a Laplacian over a random explicit hypergraph and a few heavily
/// weighted cells.
pub struct Instance {
    pub input: IncidenceMatrix,
    pub labels: IncidenceMatrix,
    pub mask: SupervisionMask,
    pub laplacian: LaplacianMatrix,
    pub weighted: Vec<(usize, usize, f64)>,
    pub params: ModelParams,
    pub lambda_lap: f64,
    pub lambda_frob: f64,
}

impl Instance {
    pub fn random(seed: u64, max_n: usize, max_m: usize, max_r: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.random_range(1..=max_n);
        let m = rng.random_range(1..=max_m);
        let r = rng.random_range(1..=max_r);
        let soft = Array2::from_shape_fn((n, m), |_| {
            if rng.random_bool(0.5) {
                0.0
            } else {
                rng.random_range(0.05..=1.0)
            }
        });
        let bin = Array2::from_shape_fn((n, m), |_| f64::from(u8::from(rng.random_bool(0.4))));
        let k = rng.random_range(1..=4usize);
        let meta = Array2::from_shape_fn((n, k), |_| f64::from(u8::from(rng.random_bool(0.5))));
        let laplacian = normalized_laplacian(
            &hypergraph(vec![IncidenceMatrix::from_dense(&meta).unwrap()]),
            TimeIndex(0),
            None,
        )
        .unwrap();
        let mut cells: Vec<(usize, usize)> = Vec::new();
        for i in 0..n {
            for j in 0..m {
                if rng.random_bool(0.3) {
                    cells.push((i, j));
                }
            }
        }
        let weighted = (0..rng.random_range(0..=2usize))
            .map(|_| (rng.random_range(0..n), rng.random_range(0..m), 10.0))
            .collect();
        let hyper = Hyperparams::default();
        let params = ModelParams::init(n, m, r, hyper, rng.random()).unwrap();
        Instance {
            input: IncidenceMatrix::from_dense(&soft).unwrap(),
            labels: IncidenceMatrix::from_dense(&bin).unwrap(),
            mask: SupervisionMask::from_cells(n, m, cells).unwrap(),
            laplacian,
            weighted,
            params,
            lambda_lap: rng.random_range(0.0..1.0),
            lambda_frob: rng.random_range(0.0..0.1),
        }
    }

    pub fn objective(&self) -> Objective<'_> {
        Objective::new(
            &self.input,
            &self.mask,
            &self.labels,
            &self.laplacian,
            self.lambda_lap,
            self.lambda_frob,
        )
        .unwrap()
        .with_cell_weights(&self.weighted)
        .unwrap()
    }

    /// Straight-line re-implementation of the loss using the textbook
    /// `-a ln p - (1 - a) ln (1 - p)` form.
    pub fn loss_oracle(&self, p: &ModelParams) -> f64 {
        let (n, m) = self.input.shape();
        let mut weights = Array2::from_elem((n, m), 1.0);
        for &(i, j, w) in &self.weighted {
            weights[[i, j]] = w;
        }
        let bce = |z: f64, a: f64| {
            let s = 1.0 / (1.0 + (-z).exp());
            -(a * s.ln() + (1.0 - a) * (1.0 - s).ln())
        };
        let logit =
            |i: usize, j: usize| (0..p.rank).map(|k| p.x[[i, k]] * p.y[[j, k]]).sum::<f64>();
        let mut total = 0.0;
        for i in 0..n {
            for j in 0..m {
                total += weights[[i, j]] * bce(logit(i, j), self.input.get(i, j));
            }
        }
        for &(i, j) in self.mask.cells() {
            total += bce(logit(i, j), self.labels.get(i, j));
        }
        let l = self.laplacian.values();
        for k in 0..p.rank {
            for a in 0..n {
                for b in 0..n {
                    total += self.lambda_lap * p.x[[a, k]] * l[[a, b]] * p.x[[b, k]];
                }
            }
        }
        let sq: f64 = p.x.iter().chain(p.y.iter()).map(|v| v * v).sum();
        total + self.lambda_frob * sq
    }

    /// Largest relative deviation between analytic and central-difference
    /// gradients. Entries below `floor` in both forms are compared on an
    /// absolute scale.
    pub fn gradient_error(&self, step: f64, floor: f64) -> f64 {
        let obj = self.objective();
        let (dx, dy) = obj.gradients(&self.params).unwrap();
        let mut worst: f64 = 0.0;
        for (which, analytic) in [(0, &dx), (1, &dy)] {
            for ((i, k), &g) in analytic.indexed_iter() {
                let mut plus = self.params.clone();
                let mut minus = self.params.clone();
                let (a, b) = if which == 0 {
                    (&mut plus.x, &mut minus.x)
                } else {
                    (&mut plus.y, &mut minus.y)
                };
                a[[i, k]] += step;
                b[[i, k]] -= step;
                let fd = (obj.loss(&plus).unwrap() - obj.loss(&minus).unwrap()) / (2.0 * step);
                let rel = (g - fd).abs() / g.abs().max(fd.abs()).max(floor);
                worst = worst.max(rel);
            }
        }
        worst
    }
}

pub const GRADIENT_STEP: f64 = 1e-5;
pub const GRADIENT_FLOOR: f64 = 1e-4;

pub fn gradient_sweep(instances: u64) -> f64 {
    (0..instances)
        .map(|s| Instance::random(1000 + s, 8, 8, 4).gradient_error(GRADIENT_STEP, GRADIENT_FLOOR))
        .fold(0.0, f64::max)
}

pub fn planted_source(seed: u64) -> DataSource {
    DataSource::Planted {
        config: PlantedConfig {
            seed,
            ..PlantedConfig::default()
        },
    }
}

/// Held-out quality of a default model on the desk-scale planted fixture.
pub fn quality_run(seed: u64) -> EvalReport {
    let ds = planted_source(seed).load().unwrap();
    let cfg = TrainConfig {
        seed,
        mask_seed: seed + 100,
        ..TrainConfig::default()
    };
    let model = train_model(&ds, &cfg).unwrap();
    evaluate_model(&ds, &model, 0.5).unwrap()
}

pub struct WarmStart {
    pub cold_epochs: usize,
    pub cold_loss: f64,
    pub budget: usize,
    /// First fine-tune step within 1 % of the cold-start loss.
    pub hit: Option<usize>,
}

impl WarmStart {
    pub fn passed(&self) -> bool {
        self.hit.is_some_and(|h| h <= self.budget)
    }
}

/// Trains on the planted fixture, asserts one unlinked cell, then compares
/// a cold start on the updated objective with warm-started fine-tuning
/// given a fifth of the cold start's epochs.
pub fn warm_start_run(seed: u64) -> WarmStart {
    let ds = planted_source(seed).load().unwrap();
    let cfg = TrainConfig {
        seed,
        mask_seed: seed + 100,
        ..TrainConfig::default()
    };
    let model = train_model(&ds, &cfg).unwrap();
    let (v, e) = (0..model.input.n_rows())
        .flat_map(|i| (0..model.input.n_cols()).map(move |j| (i, j)))
        .find(|&(i, j)| model.input.get(i, j) == 0.0)
        .unwrap();
    let ft = FineTuneConfig::default();
    let input = model.input.with_overwrites(&[(v, e, 1.0)]).unwrap();
    let labels = &ds.implicit.slices()[model.input_step + 1];
    let obj = Objective::new(
        &input,
        &model.train_mask,
        labels,
        &model.laplacian,
        cfg.hyper.lambda_lap,
        cfg.hyper.lambda_frob,
    )
    .unwrap()
    .with_cell_weights(&[(v, e, ft.feedback_weight)])
    .unwrap();
    let (_, cold) = train(&obj, cfg.rank, &cfg.hyper, cfg.seed).unwrap();
    let budget = cold.epochs_run / 5;
    let (_, warm) = fine_tune(
        &model.params,
        &obj,
        &FineTuneConfig {
            steps: budget,
            ..ft
        },
    )
    .unwrap();
    WarmStart {
        cold_epochs: cold.epochs_run,
        cold_loss: cold.final_loss,
        budget,
        hit: warm.trace.iter().position(|&l| l <= 1.01 * cold.final_loss),
    }
}

pub fn planted_engine(session: &str, log: ProvenanceLog) -> Engine {
    let mut e = Engine::with_log(session, log);
    e.execute(Command::ingest(DataSource::Planted {
        config: PlantedConfig::default(),
    }))
    .unwrap();
    e.execute(Command::Train {
        config: TrainConfig {
            seed: 42,
            ..TrainConfig::default()
        },
    })
    .unwrap();
    e
}

pub fn assertion(
    session: &str,
    node: usize,
    edge: usize,
    strength: f64,
    timestep: usize,
) -> FeedbackSet {
    FeedbackSet::new(
        vec![Assertion {
            node: NodeId(node),
            edge: EdgeId(edge),
            strength,
            timestep: TimeIndex(timestep),
        }],
        session,
        now(),
    )
    .unwrap()
}

/// Unlinked input cell with the weakest first-horizon prediction.
pub fn weak_cell(state: &EngineState) -> (usize, usize) {
    let m = state.model().unwrap();
    m.predictions[0]
        .values
        .indexed_iter()
        .filter(|((i, j), _)| m.input.get(*i, *j) == 0.0)
        .min_by(|a, b| a.1.total_cmp(b.1))
        .map(|(c, _)| c)
        .unwrap()
}

pub fn bits(m: &Array2<f64>) -> Vec<u64> {
    m.iter().map(|v| v.to_bits()).collect()
}

pub struct FeedbackOutcome {
    pub before: f64,
    pub after: f64,
    pub reject_restores: bool,
    pub empty_is_noop: bool,
}

/// Accept, reject and empty-feedback paths on the planted fixture.
pub fn feedback_semantics() -> FeedbackOutcome {
    let mut e = planted_engine("fb", ProvenanceLog::in_memory());
    let (v, c) = weak_cell(e.state());
    let timestep = e.state().model().unwrap().predictions[0].timestep;
    let before = e.state().model().unwrap().predictions[0].values[[v, c]];
    let pre = e.state().fingerprint();
    let pre_bits = bits(&e.state().model().unwrap().predictions[0].values);

    e.execute(Command::FeedbackPreview {
        feedback: assertion("fb", v, c, 1.0, timestep),
        config: FineTuneConfig::default(),
    })
    .unwrap();
    e.execute(Command::FeedbackReject).unwrap();
    let reject_restores = e.state().fingerprint() == pre
        && bits(&e.state().model().unwrap().predictions[0].values) == pre_bits;

    e.execute(Command::FeedbackPreview {
        feedback: FeedbackSet::empty("fb", now()),
        config: FineTuneConfig {
            steps: 0,
            ..FineTuneConfig::default()
        },
    })
    .unwrap();
    let previewed = e.state().previewing().unwrap().after().clone();
    let model = e.state().model().unwrap().clone();
    let empty_is_noop = previewed
        .predictions
        .iter()
        .zip(&model.predictions)
        .all(|(a, b)| bits(&a.values) == bits(&b.values))
        && bits(&previewed.params.x) == bits(&model.params.x)
        && bits(&previewed.params.y) == bits(&model.params.y);
    e.execute(Command::FeedbackAccept).unwrap();
    let empty_is_noop = empty_is_noop && e.state().model().unwrap().id == model.id;

    e.execute(Command::FeedbackPreview {
        feedback: assertion("fb", v, c, 1.0, timestep),
        config: FineTuneConfig::default(),
    })
    .unwrap();
    e.execute(Command::FeedbackAccept).unwrap();
    let after = e.state().model().unwrap().predictions[0].values[[v, c]];
    FeedbackOutcome {
        before,
        after,
        reject_restores,
        empty_is_noop,
    }
}

/// Planted 3-block 30x30 matrix with 5 % flipped cells and shuffled rows and
/// columns. Returns the matrix and the block of every row and column.
pub fn block_matrix(seed: u64) -> (Array2<f64>, Vec<usize>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows: Vec<usize> = (0..30).map(|i| i % 3).collect();
    let mut cols = rows.clone();
    use rand::seq::SliceRandom;
    rows.shuffle(&mut rng);
    cols.shuffle(&mut rng);
    let m = Array2::from_shape_fn((30, 30), |(i, j)| {
        let linked = rows[i] == cols[j];
        f64::from(u8::from(linked != rng.random_bool(0.05)))
    });
    (m, rows, cols)
}

/// Blocks divided by the number of maximal same-block runs along the
/// ordering; 1.0 exactly when every block is contiguous.
pub fn block_purity(permutation: &[usize], block: &[usize]) -> f64 {
    let runs = 1 + permutation
        .windows(2)
        .filter(|w| block[w[0]] != block[w[1]])
        .count();
    let mut distinct = block.to_vec();
    distinct.sort_unstable();
    distinct.dedup();
    distinct.len() as f64 / runs as f64
}

pub struct Seriation {
    pub row_purity: f64,
    pub col_purity: f64,
    pub size_matches: bool,
    pub first_is_identity: bool,
}

pub fn seriation_run(seed: u64) -> Seriation {
    let (m, rows, cols) = block_matrix(seed);
    let strategy = Strategy::Dendrogram {
        metric: DistanceMetric::Jaccard { threshold: 0.5 },
        linkage: Linkage::Average,
    };
    let r = compute_ordering(m.view(), Axis::Rows, strategy, None).unwrap();
    let c = compute_ordering(m.view(), Axis::Cols, strategy, None).unwrap();

    let sums: Vec<f64> = m.rows().into_iter().map(|r| r.sum()).collect();
    // Insertion sort: stable by construction.
    let mut expected: Vec<usize> = Vec::new();
    for i in 0..sums.len() {
        let at = expected
            .iter()
            .position(|&k| sums[k] < sums[i])
            .unwrap_or(expected.len());
        expected.insert(at, i);
    }
    let size = compute_ordering(m.view(), Axis::Rows, Strategy::Size, None).unwrap();
    let first = compute_ordering(m.view(), Axis::Cols, Strategy::FirstOccurrence, None).unwrap();
    Seriation {
        row_purity: block_purity(&r.permutation, &rows),
        col_purity: block_purity(&c.permutation, &cols),
        size_matches: size.permutation == expected,
        first_is_identity: first.permutation == (0..30).collect::<Vec<_>>(),
    }
}

/// Runs the scripted session (ingest, train seed 42, reorder, feedback
/// preview, accept) against a file log and replays it from disk. True when
/// every replayed prediction matches the live one bit for bit.
pub fn scripted_replay(dir: &Path) -> bool {
    let path = dir.join("scripted.jsonl");
    let mut e = planted_engine("scripted", ProvenanceLog::open(&path).unwrap());
    e.execute(Command::Reorder {
        axis: Axis::Rows,
        strategy: Strategy::Dendrogram {
            metric: DistanceMetric::Jaccard { threshold: 0.5 },
            linkage: Linkage::Average,
        },
        respect_filter: false,
    })
    .unwrap();
    let (v, c) = weak_cell(e.state());
    let t = e.state().model().unwrap().predictions[0].timestep;
    e.execute(Command::FeedbackPreview {
        feedback: assertion("scripted", v, c, 1.0, t),
        config: FineTuneConfig::default(),
    })
    .unwrap();
    let head = e.execute(Command::FeedbackAccept).unwrap().seq;
    let live = e.state().model().unwrap().clone();
    drop(e);
    let replayed = replay(&ProvenanceLog::load(&path).unwrap(), head).unwrap();
    let back = replayed.model().unwrap();
    live.predictions.len() == back.predictions.len()
        && live
            .predictions
            .iter()
            .zip(&back.predictions)
            .all(|(a, b)| bits(&a.values) == bits(&b.values))
}
