//! Level-specific payloads for a window of the projected matrix.
//!
//! Coordinates are positions in the projected axes: the visible entries of
//! each axis tree, in display order. A collapsed group occupies one
//! position and its cells aggregate the members.

use base64::Engine as _;
use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use hyperlens_core::engine::{EngineState, ModelState};
use hyperlens_core::hierarchy::{project_window, Aggregator, VisibleEntry};
use hyperlens_core::ingest::CellKey;
use hyperlens_core::provenance::sha256_hex;
use hyperlens_core::reorder::{Axis, Ordering};

use crate::config::ViewConfig;
use crate::error::{ApiError, ApiResult};

pub const MIN_LEVEL: u8 = 1;
pub const MAX_LEVEL: u8 = 6;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    #[default]
    Prediction,
    /// Signed deltas of the previewed model against the committed one.
    Change,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ViewportQuery {
    pub session: Option<String>,
    pub level: u8,
    /// Half-open windows over projected positions.
    pub row_start: usize,
    pub row_end: usize,
    pub col_start: usize,
    pub col_end: usize,
    /// Observed timestep to show instead of a forecast.
    pub t: Option<usize>,
    /// Forecast horizon, 1-based; defaults to 1.
    pub horizon: Option<usize>,
    /// Overrides the session's cutoff for this response only.
    pub threshold: Option<f64>,
    pub mode: Mode,
    /// Axis versions the client rendered; a mismatch is reported as stale.
    pub row_version: Option<u64>,
    pub col_version: Option<u64>,
    pub row_ordering: Option<String>,
    pub col_ordering: Option<String>,
    /// Level 6 paging.
    pub page: usize,
    pub page_size: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Window {
    pub start: usize,
    pub end: usize,
    /// Visible entries on the axis.
    pub total: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Source {
    History {
        timestep: usize,
    },
    Forecast {
        horizon: usize,
        timestep: usize,
        confidence: f64,
    },
}

/// A starred or annotated leaf cell inside the window.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellNote {
    pub node: usize,
    pub edge: usize,
    pub row: usize,
    pub col: usize,
    pub starred: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub annotation: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Timeline {
    pub row: usize,
    pub col: usize,
    /// Observed values for timesteps `0..history.len()`.
    pub history: Vec<f64>,
    pub forecast: Vec<ForecastPoint>,
    /// Level 4 only: documents behind each observed value.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub evidence: Option<Vec<usize>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForecastPoint {
    pub horizon: usize,
    pub timestep: usize,
    pub value: f64,
    pub confidence: f64,
    /// Change mode: previewed minus committed.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    /// Level 4 only: observed value when the dataset covers the timestep.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub observed: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellKeywords {
    pub row: usize,
    pub col: usize,
    pub keywords: Vec<(String, f64)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DocumentExcerpt {
    pub index: usize,
    pub id: String,
    pub author: String,
    pub timestamp: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub category: Option<String>,
    pub excerpt: String,
    pub truncated: bool,
    /// `(node, edge, timestep)` cells the document is filed under.
    pub cells: Vec<CellKey>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Content {
    /// Level 1: row-major bits, least significant bit first in each byte.
    Cells { bitset: String, present: usize },
    /// Level 2: row-major strengths; cells under the cutoff are null. In
    /// change mode every signed delta is returned.
    Strengths { values: Vec<Option<f64>> },
    /// Levels 3 and 4.
    Timelines { cells: Vec<Timeline> },
    /// Level 5; `available` is false for data without raw content.
    Keywords {
        available: bool,
        cells: Vec<CellKeywords>,
    },
    /// Level 6.
    Documents {
        available: bool,
        documents: Vec<DocumentExcerpt>,
        total: usize,
        page: usize,
        page_size: usize,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Payload {
    pub level: u8,
    pub mode: Mode,
    /// Model the values come from; the previewed one in change mode.
    pub model: Option<String>,
    pub source: Source,
    pub threshold: f64,
    pub rows: Window,
    pub cols: Window,
    pub row_version: u64,
    pub col_version: u64,
    pub notes: Vec<CellNote>,
    pub content: Content,
}

pub fn ordering_id(o: &Ordering) -> String {
    sha256_hex(format!("{:?}", o.permutation).as_bytes())[..16].to_owned()
}

/// Bit `k` of the row-major window lives in byte `k / 8` at bit `k % 8`.
pub fn pack_bits(bits: impl Iterator<Item = bool>, len: usize) -> Vec<u8> {
    let mut out = vec![0u8; len.div_ceil(8)];
    for (k, b) in bits.enumerate() {
        if b {
            out[k / 8] |= 1 << (k % 8);
        }
    }
    out
}

pub fn unpack_bits(bytes: &[u8], len: usize) -> Vec<bool> {
    (0..len).map(|k| bytes[k / 8] >> (k % 8) & 1 == 1).collect()
}

fn window(start: usize, end: usize, total: usize, axis: &str) -> ApiResult<Window> {
    if start > end || end > total {
        return Err(ApiError::bounds(format!(
            "{axis} window {start}..{end} outside 0..{total}"
        )));
    }
    Ok(Window { start, end, total })
}

fn check_version(axis: &str, client: Option<u64>, current: u64) -> ApiResult<()> {
    match client {
        Some(v) if v != current => Err(ApiError::stale(format!(
            "{axis} hierarchy version {v} is stale, current {current}"
        ))),
        _ => Ok(()),
    }
}

fn check_ordering(axis: &str, client: Option<&str>, current: Option<&Ordering>) -> ApiResult<()> {
    let Some(client) = client else { return Ok(()) };
    match current.map(ordering_id) {
        Some(id) if id == client => Ok(()),
        other => Err(ApiError::stale(format!(
            "{axis} ordering {client} is stale, current {}",
            other.as_deref().unwrap_or("none")
        ))),
    }
}

/// Everything a payload builder needs, resolved once per query.
pub struct Resolved<'a> {
    pub state: &'a EngineState,
    pub cfg: &'a ViewConfig,
    pub rows: Vec<VisibleEntry>,
    pub cols: Vec<VisibleEntry>,
    pub row_window: Window,
    pub col_window: Window,
    pub threshold: f64,
    pub mode: Mode,
    pub source: Source,
    /// Model whose forecasts are shown.
    pub model: Option<&'a ModelState>,
}

impl<'a> Resolved<'a> {
    pub fn new(state: &'a EngineState, cfg: &'a ViewConfig, q: &ViewportQuery) -> ApiResult<Self> {
        if !(MIN_LEVEL..=MAX_LEVEL).contains(&q.level) {
            return Err(ApiError::bad_request(format!(
                "level {} outside 1..=6",
                q.level
            )));
        }
        let ds = state.dataset()?;
        let threshold = q.threshold.unwrap_or(state.view.threshold);
        if !(0.0..=1.0).contains(&threshold) {
            return Err(ApiError::bad_request(format!(
                "threshold {threshold} outside [0, 1]"
            )));
        }
        let (rt, ct) = (state.view.tree(Axis::Rows), state.view.tree(Axis::Cols));
        check_version("row", q.row_version, rt.version())?;
        check_version("column", q.col_version, ct.version())?;
        check_ordering(
            "row",
            q.row_ordering.as_deref(),
            state.view.ordering(Axis::Rows).map(|o| &**o),
        )?;
        check_ordering(
            "column",
            q.col_ordering.as_deref(),
            state.view.ordering(Axis::Cols).map(|o| &**o),
        )?;
        let (rows, cols) = (rt.visible(), ct.visible());
        let row_window = window(q.row_start, q.row_end, rows.len(), "row")?;
        let col_window = window(q.col_start, q.col_end, cols.len(), "column")?;

        let model = match q.mode {
            Mode::Prediction => state.model.as_deref(),
            Mode::Change => Some(
                &**state
                    .previewing()
                    .ok_or_else(|| {
                        ApiError::conflict("change mode needs a previewing feedback transaction")
                    })?
                    .after(),
            ),
        };
        let source = match (q.t, q.horizon) {
            (Some(_), Some(_)) => {
                return Err(ApiError::bad_request(
                    "choose either an observed timestep or a horizon",
                ))
            }
            (Some(t), None) => {
                if q.mode == Mode::Change {
                    return Err(ApiError::bad_request("change mode shows forecasts only"));
                }
                if t >= ds.n_timesteps() {
                    return Err(ApiError::bounds(format!(
                        "timestep {t} outside 0..{}",
                        ds.n_timesteps()
                    )));
                }
                Source::History { timestep: t }
            }
            (None, h) => match model {
                Some(m) => {
                    let h = h.unwrap_or(1);
                    let p = m.prediction(h).ok_or_else(|| {
                        ApiError::bounds(format!("horizon {h} outside 1..={}", m.predictions.len()))
                    })?;
                    Source::Forecast {
                        horizon: h,
                        timestep: p.timestep,
                        confidence: p.confidence,
                    }
                }
                None if h.is_some() => {
                    return Err(ApiError::conflict("no trained model to forecast with"))
                }
                None => Source::History {
                    timestep: ds.n_timesteps() - 1,
                },
            },
        };
        Ok(Resolved {
            state,
            cfg,
            rows,
            cols,
            row_window,
            col_window,
            threshold,
            mode: q.mode,
            source,
            model,
        })
    }

    pub fn cell_count(&self) -> usize {
        (self.row_window.end - self.row_window.start)
            * (self.col_window.end - self.col_window.start)
    }

    fn window_entries(&self) -> (&[VisibleEntry], &[VisibleEntry]) {
        (
            &self.rows[self.row_window.start..self.row_window.end],
            &self.cols[self.col_window.start..self.col_window.end],
        )
    }

    fn committed(&self) -> ApiResult<&ModelState> {
        Ok(self.state.model()?)
    }

    /// Values of the selected source over the window.
    fn grid(&self) -> ApiResult<Array2<f64>> {
        let (r, c) = self.window_entries();
        let agg = self.cfg.aggregator;
        Ok(match (&self.source, self.mode) {
            (Source::History { timestep }, _) => {
                let slice = &self.state.dataset()?.implicit.slices()[*timestep];
                Array2::from_shape_fn((r.len(), c.len()), |(a, b)| {
                    aggregate(agg, &r[a].leaves, &c[b].leaves, |i, j| slice.get(i, j))
                })
            }
            (Source::Forecast { horizon, .. }, Mode::Prediction) => {
                let m = self.model.expect("forecast source implies a model");
                project_window(forecast_view(m, *horizon), r, c, agg)
            }
            (Source::Forecast { horizon, .. }, Mode::Change) => {
                let after = self.model.expect("change mode implies a preview");
                let before = self.committed()?;
                let a = project_window(forecast_view(after, *horizon), r, c, agg);
                let b = project_window(forecast_view(before, *horizon), r, c, agg);
                a - b
            }
        })
    }

    fn notes(&self) -> Vec<CellNote> {
        let (r, c) = self.window_entries();
        let pos = |entries: &[VisibleEntry], start: usize, id: usize| {
            entries
                .iter()
                .position(|e| e.leaves.contains(&id))
                .map(|k| k + start)
        };
        let view = &self.state.view;
        let mut cells: Vec<(usize, usize)> = view.markings.iter().copied().collect();
        cells.extend(view.annotations.keys().copied());
        cells.sort_unstable();
        cells.dedup();
        cells
            .into_iter()
            .filter_map(|(node, edge)| {
                let row = pos(r, self.row_window.start, node)?;
                let col = pos(c, self.col_window.start, edge)?;
                Some(CellNote {
                    node,
                    edge,
                    row,
                    col,
                    starred: view.markings.contains(&(node, edge)),
                    annotation: view.annotations.get(&(node, edge)).cloned(),
                })
            })
            .collect()
    }

    fn check_budget(&self, budget: usize, level: u8) -> ApiResult<()> {
        let cells = self.cell_count();
        if cells > budget {
            return Err(ApiError::budget(format!(
                "level {level} window holds {cells} cells, budget {budget}"
            )));
        }
        Ok(())
    }

    pub fn payload(&self, level: u8, page: usize, page_size: Option<usize>) -> ApiResult<Payload> {
        let content = match level {
            1 => {
                self.check_budget(self.cfg.grid_budget, 1)?;
                let g = self.grid()?;
                let t = self.threshold;
                let on = |v: f64| match self.mode {
                    Mode::Prediction => v >= t,
                    Mode::Change => v.abs() >= t,
                };
                let present = g.iter().filter(|&&v| on(v)).count();
                let bytes = pack_bits(g.iter().map(|&v| on(v)), g.len());
                Content::Cells {
                    bitset: base64::engine::general_purpose::STANDARD.encode(bytes),
                    present,
                }
            }
            2 => {
                self.check_budget(self.cfg.grid_budget, 2)?;
                let g = self.grid()?;
                let values = match self.mode {
                    Mode::Prediction => g
                        .iter()
                        .map(|&v| (v >= self.threshold).then_some(v))
                        .collect(),
                    Mode::Change => g.iter().map(|&v| Some(v)).collect(),
                };
                Content::Strengths { values }
            }
            3 | 4 => {
                self.check_budget(self.cfg.timeline_budget, level)?;
                let mut cells = Vec::with_capacity(self.cell_count());
                for row in self.row_window.start..self.row_window.end {
                    for col in self.col_window.start..self.col_window.end {
                        cells.push(self.timeline(row, col, level == 4)?);
                    }
                }
                Content::Timelines { cells }
            }
            5 => {
                self.check_budget(self.cfg.keyword_budget, 5)?;
                let index = self.state.dataset()?.index.as_ref();
                let mut cells = Vec::new();
                if let Some(index) = index {
                    for row in self.row_window.start..self.row_window.end {
                        for col in self.col_window.start..self.col_window.end {
                            let keys = self.cell_keys(row, col)?;
                            cells.push(CellKeywords {
                                row,
                                col,
                                keywords: index.keywords_for(&keys, self.cfg.keywords_per_cell),
                            });
                        }
                    }
                }
                Content::Keywords {
                    available: index.is_some(),
                    cells,
                }
            }
            6 => self.documents(page, page_size)?,
            other => {
                return Err(ApiError::bad_request(format!(
                    "level {other} outside 1..=6"
                )))
            }
        };
        Ok(Payload {
            level,
            mode: self.mode,
            model: self.model.map(|m| m.id.clone()),
            source: self.source.clone(),
            threshold: self.threshold,
            rows: self.row_window.clone(),
            cols: self.col_window.clone(),
            row_version: self.state.view.tree(Axis::Rows).version(),
            col_version: self.state.view.tree(Axis::Cols).version(),
            notes: self.notes(),
            content,
        })
    }

    /// Leaf cells behind one projected cell, over every observed timestep.
    pub fn cell_keys(&self, row: usize, col: usize) -> ApiResult<Vec<CellKey>> {
        let (r, c) = self.entry(row, col)?;
        let t = self.state.dataset()?.n_timesteps();
        let mut keys = Vec::with_capacity(r.leaves.len() * c.leaves.len() * t);
        for &i in &r.leaves {
            for &j in &c.leaves {
                keys.extend((0..t).map(|s| (i, j, s)));
            }
        }
        Ok(keys)
    }

    fn entry(&self, row: usize, col: usize) -> ApiResult<(&VisibleEntry, &VisibleEntry)> {
        match (self.rows.get(row), self.cols.get(col)) {
            (Some(r), Some(c)) => Ok((r, c)),
            _ => Err(ApiError::bounds(format!(
                "cell ({row}, {col}) outside {}x{}",
                self.rows.len(),
                self.cols.len()
            ))),
        }
    }

    /// Observed history up to the model input step (every slice without a
    /// model) followed by each forecast horizon.
    pub fn timeline(&self, row: usize, col: usize, detailed: bool) -> ApiResult<Timeline> {
        let (r, c) = self.entry(row, col)?;
        let ds = self.state.dataset()?;
        let agg = self.cfg.aggregator;
        let slices = ds.implicit.slices();
        let last = self.model.map_or(slices.len() - 1, |m| m.input_step);
        let history: Vec<f64> = slices[..=last]
            .iter()
            .map(|s| aggregate(agg, &r.leaves, &c.leaves, |i, j| s.get(i, j)))
            .collect();
        let mut forecast = Vec::new();
        if let Some(m) = self.model {
            let before = match self.mode {
                Mode::Change => Some(self.committed()?),
                Mode::Prediction => None,
            };
            for p in &m.predictions {
                let value = aggregate(agg, &r.leaves, &c.leaves, |i, j| p.values[[i, j]]);
                let delta = before
                    .and_then(|b| b.prediction(p.horizon))
                    .map(|b| value - aggregate(agg, &r.leaves, &c.leaves, |i, j| b.values[[i, j]]));
                let observed = if detailed {
                    slices
                        .get(p.timestep)
                        .map(|s| aggregate(agg, &r.leaves, &c.leaves, |i, j| s.get(i, j)))
                } else {
                    None
                };
                forecast.push(ForecastPoint {
                    horizon: p.horizon,
                    timestep: p.timestep,
                    value,
                    confidence: p.confidence,
                    delta,
                    observed,
                });
            }
        }
        let evidence = match (&ds.index, detailed) {
            (Some(index), true) => Some(
                (0..=last)
                    .map(|t| {
                        let keys: Vec<CellKey> = r
                            .leaves
                            .iter()
                            .flat_map(|&i| c.leaves.iter().map(move |&j| (i, j, t)))
                            .collect();
                        index.documents_in(&keys).len()
                    })
                    .collect(),
            ),
            _ => None,
        };
        Ok(Timeline {
            row,
            col,
            history,
            forecast,
            evidence,
        })
    }

    /// Documents behind the window's cells, paged.
    pub fn documents(&self, page: usize, page_size: Option<usize>) -> ApiResult<Content> {
        let size = page_size.unwrap_or(self.cfg.document_page);
        if size == 0 || size > self.cfg.document_page_max {
            return Err(ApiError::budget(format!(
                "page size {size} outside 1..={}",
                self.cfg.document_page_max
            )));
        }
        let Some(index) = self.state.dataset()?.index.as_ref() else {
            return Ok(Content::Documents {
                available: false,
                documents: Vec::new(),
                total: 0,
                page,
                page_size: size,
            });
        };
        let mut keys = Vec::new();
        for row in self.row_window.start..self.row_window.end {
            for col in self.col_window.start..self.col_window.end {
                keys.extend(self.cell_keys(row, col)?);
            }
        }
        let docs = index.documents_in(&keys);
        let documents = docs
            .iter()
            .skip(page.saturating_mul(size))
            .take(size)
            .map(|&k| {
                let d = index.document(k).expect("indexed document");
                let excerpt: String = d.text.chars().take(self.cfg.excerpt_chars).collect();
                DocumentExcerpt {
                    index: k,
                    id: d.id.clone(),
                    author: d.author.clone(),
                    timestamp: d.timestamp.to_rfc3339(),
                    category: d.category.clone(),
                    truncated: excerpt.len() < d.text.len(),
                    excerpt,
                    cells: index.document_cells(k).to_vec(),
                }
            })
            .collect();
        Ok(Content::Documents {
            available: true,
            documents,
            total: docs.len(),
            page,
            page_size: size,
        })
    }
}

fn forecast_view(m: &ModelState, horizon: usize) -> ArrayView2<'_, f64> {
    m.prediction(horizon)
        .expect("horizon checked on resolve")
        .values
        .view()
}

fn aggregate(
    agg: Aggregator,
    rows: &[usize],
    cols: &[usize],
    value: impl Fn(usize, usize) -> f64,
) -> f64 {
    if rows.len() == 1 && cols.len() == 1 {
        return value(rows[0], cols[0]);
    }
    agg.reduce(
        rows.iter()
            .flat_map(|&i| cols.iter().map(move |&j| (i, j)))
            .map(|(i, j)| value(i, j)),
    )
}

/// Answers a viewport query against one engine state.
pub fn viewport(state: &EngineState, cfg: &ViewConfig, q: &ViewportQuery) -> ApiResult<Payload> {
    let r = Resolved::new(state, cfg, q)?;
    r.payload(q.level, q.page, q.page_size)
}
