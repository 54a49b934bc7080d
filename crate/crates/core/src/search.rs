//! Global search over node labels, edge labels and document text.

use serde::{Deserialize, Serialize};

use crate::engine::EngineState;
use crate::error::{Error, Result};
use crate::ingest::CellKey;
use crate::reorder::Axis;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Page {
    pub offset: usize,
    pub limit: usize,
}

impl Default for Page {
    fn default() -> Self {
        Page {
            offset: 0,
            limit: 50,
        }
    }
}

/// `[start, end)` in characters of the matched text.
pub type Span = (usize, usize);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelMatch {
    pub id: usize,
    pub label: String,
    pub spans: Vec<Span>,
    /// Index of the visible row/column showing this entry.
    pub position: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DocumentMatch {
    pub index: usize,
    pub id: String,
    pub spans: Vec<Span>,
    pub cells: Vec<CellKey>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SearchResults {
    pub nodes: Vec<LabelMatch>,
    pub edges: Vec<LabelMatch>,
    pub documents: Vec<DocumentMatch>,
    /// Match counts before paging.
    pub node_total: usize,
    pub edge_total: usize,
    pub document_total: usize,
}

impl SearchResults {
    pub fn total(&self) -> usize {
        self.node_total + self.edge_total + self.document_total
    }
}

fn fold(s: &str) -> Vec<char> {
    // One char per input char keeps spans aligned with the original text.
    s.chars()
        .map(|c| c.to_lowercase().next().unwrap_or(c))
        .collect()
}

/// Case-insensitive substring spans of `needle` in `hay`, non-overlapping.
pub fn find_spans(hay: &str, needle: &[char]) -> Vec<Span> {
    let h = fold(hay);
    let mut out = Vec::new();
    if needle.is_empty() || needle.len() > h.len() {
        return out;
    }
    let mut k = 0;
    while k + needle.len() <= h.len() {
        if h[k..k + needle.len()] == *needle {
            out.push((k, k + needle.len()));
            k += needle.len();
        } else {
            k += 1;
        }
    }
    out
}

fn visible_positions(state: &EngineState, axis: Axis, len: usize) -> Vec<usize> {
    let mut pos = vec![0; len];
    for (k, v) in state.view.tree(axis).visible().iter().enumerate() {
        for &leaf in &v.leaves {
            pos[leaf] = k;
        }
    }
    pos
}

pub fn search(state: &EngineState, query: &str, page: Page) -> Result<SearchResults> {
    let ds = state.dataset()?;
    let needle = fold(query.trim());
    if needle.is_empty() {
        return Err(Error::domain("search query is empty"));
    }
    let mut res = SearchResults::default();
    let labels = |axis: Axis, names: &[String]| {
        let pos = visible_positions(state, axis, names.len());
        names
            .iter()
            .enumerate()
            .filter_map(|(id, label)| {
                let spans = find_spans(label, &needle);
                (!spans.is_empty()).then(|| LabelMatch {
                    id,
                    label: label.clone(),
                    spans,
                    position: pos[id],
                })
            })
            .collect::<Vec<_>>()
    };
    let nodes = labels(Axis::Rows, ds.implicit.node_labels());
    let edges = labels(Axis::Cols, ds.implicit.edge_labels());
    res.node_total = nodes.len();
    res.edge_total = edges.len();
    res.nodes = nodes
        .into_iter()
        .skip(page.offset)
        .take(page.limit)
        .collect();
    res.edges = edges
        .into_iter()
        .skip(page.offset)
        .take(page.limit)
        .collect();
    if let Some(index) = &ds.index {
        let mut docs = Vec::new();
        for (k, d) in index.documents().iter().enumerate() {
            let spans = find_spans(&d.text, &needle);
            if !spans.is_empty() {
                docs.push(DocumentMatch {
                    index: k,
                    id: d.id.clone(),
                    spans,
                    cells: index.document_cells(k).to_vec(),
                });
            }
        }
        res.document_total = docs.len();
        res.documents = docs
            .into_iter()
            .skip(page.offset)
            .take(page.limit)
            .collect();
    }
    Ok(res)
}
