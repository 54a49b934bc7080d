//! Corpus ingestion: documents plus a keyword ontology become the explicit
//! (forum category) and implicit (topic) temporal hypergraphs over authors.
//!
//! Corpus records are JSON lines:
//!
//! ```text
//! {"id": "d1", "author": "alice", "timestamp": "2015-03-01T12:00:00Z", "text": "...", "category": "trade"}
//! ```
//!
//! `category` is optional. The ontology is a JSON object mapping each topic
//! name to its keyword list; topic order is the order of the object keys.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::BufRead;

use chrono::{DateTime, Datelike, Duration, NaiveDate, Utc};
use indexmap::IndexMap;
use serde::de::{MapAccess, Visitor};
use serde::{Deserialize, Deserializer, Serialize};

use crate::error::{Error, Result};
use crate::hypergraph::{EdgeId, IncidenceMatrix, NodeId, Role, TemporalHypergraph, TimeIndex};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RawDocument {
    pub id: String,
    pub author: String,
    pub timestamp: DateTime<Utc>,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category: Option<String>,
}

#[derive(Debug, Deserialize)]
struct DocumentRecord {
    id: Option<serde_json::Value>,
    author: Option<String>,
    timestamp: Option<String>,
    text: Option<String>,
    category: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct LineError {
    pub line: usize,
    pub message: String,
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct ParsedCorpus {
    pub documents: Vec<RawDocument>,
    pub errors: Vec<LineError>,
    pub warnings: Vec<String>,
}

fn parse_record(line: &str) -> std::result::Result<RawDocument, String> {
    let rec: DocumentRecord = serde_json::from_str(line).map_err(|e| e.to_string())?;
    let id = match rec.id {
        Some(serde_json::Value::String(s)) if !s.is_empty() => s,
        Some(serde_json::Value::Number(n)) => n.to_string(),
        _ => return Err("missing field `id`".into()),
    };
    let author = match rec.author {
        Some(a) if !a.trim().is_empty() => a,
        _ => return Err("missing field `author`".into()),
    };
    let ts = rec.timestamp.ok_or("missing field `timestamp`")?;
    let timestamp = DateTime::parse_from_rfc3339(&ts)
        .map_err(|e| format!("malformed timestamp {ts:?}: {e}"))?
        .with_timezone(&Utc);
    let text = rec.text.ok_or("missing field `text`")?;
    Ok(RawDocument {
        id,
        author,
        timestamp,
        text,
        category: rec.category.filter(|c| !c.is_empty()),
    })
}

/// Parses line-delimited corpus records. Bad lines are collected with their
/// 1-based line number; the call fails only if every record is bad.
pub fn parse_corpus<R: BufRead>(input: R) -> Result<ParsedCorpus> {
    let mut out = ParsedCorpus::default();
    let mut records = 0;
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        records += 1;
        match parse_record(&line) {
            Ok(doc) => out.documents.push(doc),
            Err(message) => out.errors.push(LineError {
                line: i + 1,
                message,
            }),
        }
    }
    if records == 0 {
        out.warnings.push("empty corpus".into());
    } else if out.documents.is_empty() {
        let first = &out.errors[0];
        return Err(Error::Parse(format!(
            "all {records} corpus records failed; line {}: {}",
            first.line, first.message
        )));
    }
    Ok(out)
}

pub fn parse_corpus_str(s: &str) -> Result<ParsedCorpus> {
    parse_corpus(s.as_bytes())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Topic {
    pub name: String,
    pub keywords: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Ontology {
    topics: Vec<Topic>,
}

impl Ontology {
    /// Validates and normalizes (lowercases) the topic list.
    pub fn new(topics: Vec<Topic>) -> Result<Self> {
        let mut seen = std::collections::HashSet::new();
        let mut out = Vec::with_capacity(topics.len());
        for t in topics {
            if !seen.insert(t.name.clone()) {
                return Err(Error::Name(format!("duplicate topic {:?}", t.name)));
            }
            if t.keywords.is_empty() {
                return Err(Error::domain(format!("topic {:?} has no keywords", t.name)));
            }
            let mut keywords = Vec::with_capacity(t.keywords.len());
            for k in &t.keywords {
                let k = k.trim().to_lowercase();
                if k.is_empty() {
                    return Err(Error::domain(format!(
                        "topic {:?} has an empty keyword",
                        t.name
                    )));
                }
                keywords.push(k);
            }
            out.push(Topic {
                name: t.name,
                keywords,
            });
        }
        Ok(Ontology { topics: out })
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let raw: OrderedTopics = serde_json::from_str(s)?;
        Ontology::new(raw.0)
    }

    pub fn topics(&self) -> &[Topic] {
        &self.topics
    }
}

impl<'de> Deserialize<'de> for Ontology {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let raw = OrderedTopics::deserialize(d)?;
        Ontology::new(raw.0).map_err(serde::de::Error::custom)
    }
}

/// JSON object read in document order, duplicates kept for validation.
struct OrderedTopics(Vec<Topic>);

impl<'de> Deserialize<'de> for OrderedTopics {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        struct V;
        impl<'de> Visitor<'de> for V {
            type Value = OrderedTopics;
            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("an object mapping topic names to keyword arrays")
            }
            fn visit_map<A: MapAccess<'de>>(
                self,
                mut map: A,
            ) -> std::result::Result<Self::Value, A::Error> {
                let mut topics = Vec::new();
                while let Some((name, keywords)) = map.next_entry::<String, Vec<String>>()? {
                    topics.push(Topic { name, keywords });
                }
                Ok(OrderedTopics(topics))
            }
        }
        d.deserialize_map(V)
    }
}

/// Lowercased alphanumeric tokens.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

fn contains_phrase(tokens: &[String], phrase: &[String]) -> bool {
    !phrase.is_empty() && tokens.windows(phrase.len()).any(|w| w == phrase)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Binning {
    #[default]
    Year,
    Month,
    Week,
}

impl Binning {
    fn key(self, ts: &DateTime<Utc>) -> i64 {
        let d = ts.date_naive();
        match self {
            Binning::Year => d.year() as i64,
            Binning::Month => d.year() as i64 * 12 + d.month0() as i64,
            Binning::Week => {
                let monday = d - Duration::days(d.weekday().num_days_from_monday() as i64);
                (monday.num_days_from_ce() as i64 - 1).div_euclid(7)
            }
        }
    }

    fn label(self, key: i64) -> String {
        match self {
            Binning::Year => key.to_string(),
            Binning::Month => format!("{}-{:02}", key.div_euclid(12), key.rem_euclid(12) + 1),
            Binning::Week => {
                // Day 1 of the common era is a Monday.
                let monday = NaiveDate::from_num_days_from_ce_opt((key * 7 + 1) as i32)
                    .expect("week key in calendar range");
                let w = monday.iso_week();
                format!("{}-W{:02}", w.year(), w.week())
            }
        }
    }
}

impl std::str::FromStr for Binning {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "year" => Ok(Binning::Year),
            "month" => Ok(Binning::Month),
            "week" => Ok(Binning::Week),
            other => Err(Error::Parse(format!("unknown binning {other:?}"))),
        }
    }
}

/// A `(node, edge, timestep)` cell address.
pub type CellKey = (usize, usize, usize);

/// Raw-content index backing the keyword and document views.
#[derive(Clone, Debug, Serialize)]
pub struct CorpusIndex {
    documents: Vec<RawDocument>,
    authors: IndexMap<String, NodeId>,
    topics: IndexMap<String, EdgeId>,
    cells: BTreeMap<CellKey, Vec<usize>>,
    doc_cells: Vec<Vec<CellKey>>,
    doc_freq: HashMap<String, usize>,
    #[serde(skip)]
    doc_tokens: Vec<Vec<String>>,
}

impl CorpusIndex {
    pub fn documents(&self) -> &[RawDocument] {
        &self.documents
    }

    pub fn document(&self, i: usize) -> Option<&RawDocument> {
        self.documents.get(i)
    }

    pub fn node_of(&self, author: &str) -> Option<NodeId> {
        self.authors.get(author).copied()
    }

    pub fn edge_of(&self, topic: &str) -> Option<EdgeId> {
        self.topics.get(topic).copied()
    }

    /// Document indices filed under a cell, in corpus order.
    pub fn cell_documents(&self, node: NodeId, edge: EdgeId, t: TimeIndex) -> &[usize] {
        self.cells
            .get(&(node.0, edge.0, t.0))
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    /// Cells a document was filed under.
    pub fn document_cells(&self, doc: usize) -> &[CellKey] {
        self.doc_cells.get(doc).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn cells(&self) -> impl Iterator<Item = (&CellKey, &Vec<usize>)> {
        self.cells.iter()
    }

    /// Sorted, deduplicated documents across several cells.
    pub fn documents_in(&self, cells: &[CellKey]) -> Vec<usize> {
        let mut docs: Vec<usize> = cells
            .iter()
            .filter_map(|c| self.cells.get(c))
            .flatten()
            .copied()
            .collect();
        docs.sort_unstable();
        docs.dedup();
        docs
    }

    fn idf(&self, term: &str) -> f64 {
        let n = self.documents.len() as f64;
        let df = self.doc_freq.get(term).copied().unwrap_or(0) as f64;
        ((1.0 + n) / (1.0 + df)).ln() + 1.0
    }

    /// Top-`k` tf-idf terms over the union of the documents in `cells`.
    pub fn keywords_for(&self, cells: &[CellKey], k: usize) -> Vec<(String, f64)> {
        let mut tf: HashMap<&str, usize> = HashMap::new();
        for d in self.documents_in(cells) {
            for tok in &self.doc_tokens[d] {
                *tf.entry(tok.as_str()).or_default() += 1;
            }
        }
        let mut scored: Vec<(String, f64)> = tf
            .into_iter()
            .map(|(t, c)| (t.to_string(), c as f64 * self.idf(t)))
            .collect();
        scored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        scored.truncate(k);
        scored
    }
}

/// Top-`k` tf-idf keywords of one cell; empty cells yield an empty list.
pub fn extract_keywords(
    index: &CorpusIndex,
    node: NodeId,
    edge: EdgeId,
    t: TimeIndex,
    k: usize,
) -> Vec<(String, f64)> {
    index.keywords_for(&[(node.0, edge.0, t.0)], k)
}

#[derive(Clone, Debug)]
pub struct IngestOutput {
    pub explicit: TemporalHypergraph,
    pub implicit: TemporalHypergraph,
    pub index: CorpusIndex,
}

/// Builds the explicit/implicit hypergraph pair from a parsed corpus.
///
/// Nodes are authors in order of first appearance, implicit edges the
/// ontology topics, explicit edges the forum categories in order of first
/// appearance. Timesteps cover every calendar bin from the earliest to the
/// latest document, including empty ones.
pub fn build_temporal_hypergraphs(
    docs: &[RawDocument],
    ont: &Ontology,
    binning: Binning,
) -> Result<IngestOutput> {
    if docs.is_empty() {
        return Err(Error::UnusableOntology);
    }
    let mut authors: IndexMap<String, NodeId> = IndexMap::new();
    let mut categories: IndexMap<String, EdgeId> = IndexMap::new();
    for d in docs {
        let next = NodeId(authors.len());
        authors.entry(d.author.clone()).or_insert(next);
        if let Some(c) = &d.category {
            let next = EdgeId(categories.len());
            categories.entry(c.clone()).or_insert(next);
        }
    }
    let topics: IndexMap<String, EdgeId> = ont
        .topics()
        .iter()
        .enumerate()
        .map(|(i, t)| (t.name.clone(), EdgeId(i)))
        .collect();
    let phrases: Vec<Vec<Vec<String>>> = ont
        .topics()
        .iter()
        .map(|t| t.keywords.iter().map(|k| tokenize(k)).collect())
        .collect();

    let keys: Vec<i64> = docs.iter().map(|d| binning.key(&d.timestamp)).collect();
    let first = *keys.iter().min().expect("nonempty");
    let last = *keys.iter().max().expect("nonempty");
    let n_bins = (last - first + 1) as usize;
    let time_labels: Vec<String> = (first..=last).map(|k| binning.label(k)).collect();

    let mut cells: BTreeMap<CellKey, Vec<usize>> = BTreeMap::new();
    let mut doc_cells = Vec::with_capacity(docs.len());
    let mut doc_tokens = Vec::with_capacity(docs.len());
    let mut doc_freq: HashMap<String, usize> = HashMap::new();
    let mut explicit_cells: Vec<Vec<(NodeId, EdgeId, f64)>> = vec![Vec::new(); n_bins];
    let mut implicit_cells: Vec<Vec<(NodeId, EdgeId, f64)>> = vec![Vec::new(); n_bins];

    for (i, d) in docs.iter().enumerate() {
        let tokens = tokenize(&d.text);
        let mut uniq: Vec<&String> = tokens.iter().collect();
        uniq.sort_unstable();
        uniq.dedup();
        for t in uniq {
            *doc_freq.entry(t.clone()).or_default() += 1;
        }
        let node = authors[&d.author];
        let t = (keys[i] - first) as usize;
        if let Some(c) = &d.category {
            explicit_cells[t].push((node, categories[c], 1.0));
        }
        let mut filed = Vec::new();
        for (e, ph) in phrases.iter().enumerate() {
            if ph.iter().any(|p| contains_phrase(&tokens, p)) {
                cells.entry((node.0, e, t)).or_default().push(i);
                implicit_cells[t].push((node, EdgeId(e), 1.0));
                filed.push((node.0, e, t));
            }
        }
        doc_cells.push(filed);
        doc_tokens.push(tokens);
    }
    if cells.is_empty() {
        return Err(Error::UnusableOntology);
    }

    let node_labels: Vec<String> = authors.keys().cloned().collect();
    let n = node_labels.len();
    let slices =
        |cells: Vec<Vec<(NodeId, EdgeId, f64)>>, m: usize| -> Result<Vec<IncidenceMatrix>> {
            cells
                .iter()
                .map(|c| IncidenceMatrix::from_memberships(c, n, m))
                .collect()
        };
    let explicit = TemporalHypergraph::new(
        Role::Explicit,
        node_labels.clone(),
        categories.keys().cloned().collect(),
        time_labels.clone(),
        slices(explicit_cells, categories.len())?,
    )?;
    let implicit = TemporalHypergraph::new(
        Role::Implicit,
        node_labels,
        topics.keys().cloned().collect(),
        time_labels,
        slices(implicit_cells, topics.len())?,
    )?;
    Ok(IngestOutput {
        explicit,
        implicit,
        index: CorpusIndex {
            documents: docs.to_vec(),
            authors,
            topics,
            cells,
            doc_cells,
            doc_freq,
            doc_tokens,
        },
    })
}
