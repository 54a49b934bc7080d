//! Batch commands. Every command works on a session log under the data
//! directory, so anything done here can be served or replayed later.

use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand, ValueEnum};

use hyperlens_core::engine::{
    evaluate_model, replay, Command, DataSource, Engine, EngineState, ModelState,
};
use hyperlens_core::ingest::Binning;
use hyperlens_core::predictor::{split_supervision, EvalReport, SupervisionMask};
use hyperlens_core::provenance::ProvenanceLog;
use hyperlens_core::synthetic::PlantedConfig;

use crate::app::{session_log_path, AppState, DEFAULT_SESSION};
use crate::config::EngineConfig;
use crate::snapshot::{locate, SnapshotView};

#[derive(Debug, Parser)]
#[command(
    name = "hyperlens",
    version,
    about = "Temporal hypergraph exploration engine"
)]
pub struct Cli {
    /// Directory holding session logs and exported snapshots.
    #[arg(long, global = true, default_value = "hyperlens-data")]
    pub data_dir: PathBuf,
    #[arg(long, global = true, default_value = DEFAULT_SESSION)]
    pub session: String,
    /// TOML file with engine defaults.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Cmd,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ExportFormat {
    Json,
    Csv,
}

#[derive(Debug, Subcommand)]
pub enum Cmd {
    /// Start a session from a document corpus and an ontology.
    Ingest {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        ontology: PathBuf,
        /// Time bin: year, month or week.
        #[arg(long = "bin", default_value = "year")]
        binning: Binning,
        #[arg(long)]
        threshold: Option<f64>,
    },
    /// Start a session from a seeded synthetic dataset.
    Synthesize {
        #[arg(long, default_value_t = 100)]
        nodes: usize,
        #[arg(long, default_value_t = 30)]
        edges: usize,
        #[arg(long, default_value_t = 6)]
        timesteps: usize,
        #[arg(long, default_value_t = 3)]
        communities: usize,
        #[arg(long, default_value_t = 0.1)]
        noise: f64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Train a model and write its snapshot file.
    Train {
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Held-out AUC and recall of a snapshot.
    Evaluate {
        #[arg(long)]
        snapshot: String,
        /// Draw a fresh held-out mask; cells used for training are excluded.
        #[arg(long)]
        mask_seed: Option<u64>,
        #[arg(long)]
        threshold: Option<f64>,
    },
    /// Write a snapshot's forecasts.
    Export {
        #[arg(long)]
        snapshot: String,
        #[arg(long, value_enum, default_value = "json")]
        format: ExportFormat,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Serve the HTTP API.
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        /// Create a trained synthetic session when none exists.
        #[arg(long)]
        demo: bool,
    },
    /// Re-execute a provenance log and check every recorded output.
    Replay {
        #[arg(long)]
        log: PathBuf,
        #[arg(long)]
        up_to: Option<u64>,
    },
}

pub fn load_config(path: Option<&Path>) -> anyhow::Result<EngineConfig> {
    match path {
        Some(p) => EngineConfig::load(p),
        None => Ok(EngineConfig::default()),
    }
}

fn open_session(data_dir: &Path, id: &str) -> anyhow::Result<Engine> {
    let path = session_log_path(data_dir, id);
    if !path.exists() {
        bail!(
            "no session {id:?} under {}; run ingest first",
            data_dir.display()
        );
    }
    Ok(Engine::restore(id, ProvenanceLog::open(&path)?)?)
}

fn create_session(data_dir: &Path, id: &str, cmd: Command) -> anyhow::Result<Engine> {
    let path = session_log_path(data_dir, id);
    if path.exists() {
        bail!("session {id:?} already exists at {}", path.display());
    }
    std::fs::create_dir_all(path.parent().expect("session path has a parent"))?;
    // Validate before the log file appears.
    hyperlens_core::engine::apply(&EngineState::default(), &cmd)?;
    let mut engine = Engine::with_log(id, ProvenanceLog::open(&path)?);
    engine.execute(cmd)?;
    Ok(engine)
}

/// Committed state of the event that produced model `id`.
fn snapshot_state(engine: &Engine, id: &str) -> anyhow::Result<(EngineState, Arc<ModelState>)> {
    let seq = locate(engine.log(), id)
        .with_context(|| format!("no model {id:?} in session {}", engine.session()))?;
    let state = replay(engine.log(), seq)?;
    let model = state
        .model
        .iter()
        .cloned()
        .chain(state.pending.iter().map(|tx| tx.after().clone()))
        .find(|m| m.id == id)
        .with_context(|| format!("replay did not reproduce model {id}"))?;
    Ok((state, model))
}

/// Snapshot ids may be given bare or as the path of an exported file.
fn snapshot_id(arg: &str) -> anyhow::Result<String> {
    let p = Path::new(arg);
    if p.extension().is_some_and(|x| x == "json") && p.exists() {
        let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(p)?)?;
        return v["id"]
            .as_str()
            .map(str::to_owned)
            .with_context(|| format!("{arg} has no model id"));
    }
    Ok(arg.to_owned())
}

fn write_json(out: &mut dyn Write, v: &impl serde::Serialize) -> anyhow::Result<()> {
    serde_json::to_writer_pretty(&mut *out, v)?;
    writeln!(out)?;
    Ok(())
}

pub fn evaluate(
    state: &EngineState,
    model: &ModelState,
    mask_seed: Option<u64>,
    threshold: f64,
) -> anyhow::Result<EvalReport> {
    let ds = state.dataset()?;
    let Some(seed) = mask_seed.filter(|s| *s != model.config.mask_seed) else {
        return Ok(evaluate_model(ds, model, threshold)?);
    };
    let labels = &ds.implicit.slices()[model.input_step + 1];
    let (n, m) = labels.shape();
    let fresh = split_supervision(labels, model.config.supervision_fraction, seed)?.1;
    let cells = fresh
        .cells()
        .iter()
        .copied()
        .filter(|c| !model.train_mask.contains(*c))
        .collect();
    let mut moved = model.clone();
    moved.config.mask_seed = seed;
    moved.eval_mask = SupervisionMask::from_cells(n, m, cells)?;
    Ok(evaluate_model(ds, &moved, threshold)?)
}

fn export_csv(out: &mut dyn Write, state: &EngineState, model: &ModelState) -> anyhow::Result<()> {
    let h = &state.dataset()?.implicit;
    writeln!(
        out,
        "horizon,timestep,time_label,node,node_label,edge,edge_label,value,confidence"
    )?;
    for p in &model.predictions {
        let time = h
            .time_labels()
            .get(p.timestep)
            .map(String::as_str)
            .unwrap_or("");
        for ((i, j), v) in p.values.indexed_iter() {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{:.17e},{:.17e}",
                p.horizon,
                p.timestep,
                csv_field(time),
                i,
                csv_field(&h.node_labels()[i]),
                j,
                csv_field(&h.edge_labels()[j]),
                v,
                p.confidence
            )?;
        }
    }
    Ok(())
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_owned()
    }
}

fn demo_source() -> DataSource {
    DataSource::Planted {
        config: PlantedConfig::default(),
    }
}

pub fn run(cli: Cli) -> anyhow::Result<()> {
    run_with(cli, &mut std::io::stdout().lock())
}

/// Runs a command, writing reports to `out`.
pub fn run_with(cli: Cli, out: &mut dyn Write) -> anyhow::Result<()> {
    let config = load_config(cli.config.as_deref())?;
    let dir = &cli.data_dir;
    match cli.command {
        Cmd::Ingest {
            corpus,
            ontology,
            binning,
            threshold,
        } => {
            let data = DataSource::files(&corpus, &ontology, binning)?;
            let cmd = Command::Ingest {
                data,
                threshold: Some(threshold.unwrap_or(config.view.threshold)),
            };
            let engine = create_session(dir, &cli.session, cmd)?;
            let ds = engine.state().dataset()?;
            for w in &ds.warnings {
                log::warn!("{w}");
            }
            writeln!(
                out,
                "session {}: {} nodes, {} edges, {} timesteps",
                cli.session,
                ds.implicit.n_nodes(),
                ds.implicit.n_edges(),
                ds.n_timesteps()
            )?;
        }
        Cmd::Synthesize {
            nodes,
            edges,
            timesteps,
            communities,
            noise,
            seed,
        } => {
            let planted = PlantedConfig {
                nodes,
                edges,
                timesteps,
                communities,
                noise,
                seed,
                ..PlantedConfig::default()
            };
            let cmd = Command::Ingest {
                data: DataSource::Planted { config: planted },
                threshold: Some(config.view.threshold),
            };
            create_session(dir, &cli.session, cmd)?;
            writeln!(
                out,
                "session {}: {nodes}x{edges}x{timesteps} synthetic",
                cli.session
            )?;
        }
        Cmd::Train { seed } => {
            let mut engine = open_session(dir, &cli.session)?;
            let mut train = config.train.clone();
            if let Some(seed) = seed {
                train.seed = seed;
            }
            engine.execute(Command::Train { config: train })?;
            let model = engine.state().model()?.clone();
            let snaps = dir.join("snapshots");
            std::fs::create_dir_all(&snaps)?;
            let path = snaps.join(format!("{}.json", model.id));
            let mut f = std::io::BufWriter::new(std::fs::File::create(&path)?);
            write_json(&mut f, &SnapshotView::new(&model, false))?;
            f.flush()?;
            writeln!(
                out,
                "model {} after {} epochs, loss {:.6}, snapshot {}",
                model.id,
                model.report.epochs_run,
                model.report.final_loss,
                path.display()
            )?;
        }
        Cmd::Evaluate {
            snapshot,
            mask_seed,
            threshold,
        } => {
            let engine = open_session(dir, &cli.session)?;
            let (state, model) = snapshot_state(&engine, &snapshot_id(&snapshot)?)?;
            let report = evaluate(&state, &model, mask_seed, threshold.unwrap_or(0.5))?;
            write_json(out, &report)?;
        }
        Cmd::Export {
            snapshot,
            format,
            out: out_path,
        } => {
            let engine = open_session(dir, &cli.session)?;
            let (state, model) = snapshot_state(&engine, &snapshot_id(&snapshot)?)?;
            let mut file = match &out_path {
                Some(p) => Some(std::io::BufWriter::new(
                    std::fs::File::create(p)
                        .with_context(|| format!("creating {}", p.display()))?,
                )),
                None => None,
            };
            let w: &mut dyn Write = match &mut file {
                Some(f) => f,
                None => out,
            };
            match format {
                ExportFormat::Json => write_json(w, &SnapshotView::new(&model, true))?,
                ExportFormat::Csv => export_csv(w, &state, &model)?,
            }
            w.flush()?;
        }
        Cmd::Serve { port, host, demo } => {
            let app = AppState::new(config, Some(dir.clone()))?;
            if demo && app.session(Some(DEFAULT_SESSION)).is_err() {
                let s = app.create_session(DEFAULT_SESSION, demo_source(), None)?;
                s.execute(Command::Train {
                    config: app.config.train.clone(),
                })?;
                log::info!("demo session trained");
            }
            let addr: SocketAddr = format!("{host}:{port}").parse().context("listen address")?;
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(async move {
                let listener = tokio::net::TcpListener::bind(addr).await?;
                log::info!("listening on http://{}", listener.local_addr()?);
                axum::serve(listener, crate::app::router(Arc::new(app))).await?;
                anyhow::Ok(())
            })?;
        }
        Cmd::Replay { log, up_to } => {
            let log =
                ProvenanceLog::load(&log).with_context(|| format!("reading {}", log.display()))?;
            let last = log
                .events()
                .last()
                .map(|e| e.seq)
                .context("log has no events")?;
            let state = replay(&log, up_to.unwrap_or(last))?;
            writeln!(
                out,
                "replayed to event {}: state {}",
                up_to.unwrap_or(last),
                state.fingerprint()
            )?;
            if let Some(m) = &state.model {
                writeln!(out, "model {}", m.id)?;
            }
        }
    }
    Ok(())
}
