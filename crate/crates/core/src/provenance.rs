//! Append-only event log with branches, content digests and a line-delimited
//! file format.
//!
//! Line 1 of a log file is a header `{"format":..,"version":..}`; each
//! further line is one [`ProvenanceEvent`] as JSON. Events are written and
//! flushed before the caller sees the result of the operation they record.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use ndarray::Array2;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const LOG_FORMAT: &str = "hyperlens-provenance";
pub const LOG_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EventKind {
    Ingest,
    Train,
    Reorder,
    HierarchyEdit,
    FilterChange,
    Search,
    FeedbackPreview,
    FeedbackAccept,
    FeedbackReject,
    Annotation,
    Marking,
    /// Marker appended by undo; its parent is the restored event.
    Undo,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProvenanceEvent {
    pub seq: u64,
    pub parent: Option<u64>,
    pub session: String,
    pub time: DateTime<Utc>,
    pub kind: EventKind,
    pub payload: serde_json::Value,
    /// SHA-256 of the compact JSON encoding of `payload`.
    pub digest: String,
}

impl ProvenanceEvent {
    pub fn verify(&self) -> Result<()> {
        let d = payload_digest(&self.payload)?;
        if d != self.digest {
            return Err(Error::Divergence {
                seq: self.seq,
                detail: format!("payload digest {d} does not match stored {}", self.digest),
            });
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn payload_digest(payload: &serde_json::Value) -> Result<String> {
    Ok(sha256_hex(&serde_json::to_vec(payload)?))
}

/// Digest over the shape and exact bit patterns of a matrix.
pub fn matrix_digest(m: &Array2<f64>) -> String {
    let mut h = Sha256::new();
    h.update((m.nrows() as u64).to_le_bytes());
    h.update((m.ncols() as u64).to_le_bytes());
    for v in m.iter() {
        h.update(v.to_bits().to_le_bytes());
    }
    hex::encode(h.finalize())
}

/// Event tree. `seq` numbers start at 1 and follow file order.
#[derive(Debug, Default)]
pub struct ProvenanceLog {
    events: Vec<ProvenanceEvent>,
    sink: Option<(PathBuf, File)>,
}

impl ProvenanceLog {
    /// Log held in memory only.
    pub fn in_memory() -> Self {
        ProvenanceLog::default()
    }

    /// Opens (or creates) a log file and appends every further event to it.
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let events = if path.exists() {
            Self::load(path)?.events
        } else {
            let mut f = File::create(path).map_err(|e| unavailable(path, e))?;
            let header = serde_json::to_string(&Header {
                format: LOG_FORMAT.into(),
                version: LOG_VERSION,
            })?;
            writeln!(f, "{header}")
                .and_then(|_| f.sync_all())
                .map_err(|e| unavailable(path, e))?;
            Vec::new()
        };
        let file = OpenOptions::new()
            .append(true)
            .open(path)
            .map_err(|e| unavailable(path, e))?;
        Ok(ProvenanceLog {
            events,
            sink: Some((path.to_owned(), file)),
        })
    }

    /// Reads a log file without attaching it for writing.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let f = File::open(path.as_ref())?;
        Self::parse(BufReader::new(f))
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        Self::parse(text.as_bytes())
    }

    fn parse(reader: impl BufRead) -> Result<Self> {
        let mut lines = reader.lines();
        let header: Header = match lines.next() {
            Some(l) => {
                serde_json::from_str(&l?).map_err(|e| Error::Parse(format!("log header: {e}")))?
            }
            None => return Err(Error::Parse("empty provenance log".into())),
        };
        if header.format != LOG_FORMAT || header.version != LOG_VERSION {
            return Err(Error::Incompatible(format!(
                "log is {} v{}, engine reads {LOG_FORMAT} v{LOG_VERSION}",
                header.format, header.version
            )));
        }
        let mut log = ProvenanceLog::default();
        for (k, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let e: ProvenanceEvent = serde_json::from_str(&line)
                .map_err(|err| Error::Parse(format!("log line {}: {err}", k + 2)))?;
            if e.seq != log.events.len() as u64 + 1 {
                return Err(Error::Parse(format!(
                    "log line {}: sequence {} out of order",
                    k + 2,
                    e.seq
                )));
            }
            log.check_parent(e.parent)?;
            e.verify()?;
            log.events.push(e);
        }
        Ok(log)
    }

    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = serde_json::to_string(&Header {
            format: LOG_FORMAT.into(),
            version: LOG_VERSION,
        })?;
        out.push('\n');
        for e in &self.events {
            out.push_str(&serde_json::to_string(e)?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn path(&self) -> Option<&Path> {
        self.sink.as_ref().map(|(p, _)| p.as_path())
    }

    pub fn events(&self) -> &[ProvenanceEvent] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn event(&self, seq: u64) -> Result<&ProvenanceEvent> {
        seq.checked_sub(1)
            .and_then(|k| self.events.get(k as usize))
            .ok_or_else(|| Error::Lookup {
                kind: "event",
                name: seq.to_string(),
            })
    }

    fn check_parent(&self, parent: Option<u64>) -> Result<()> {
        match parent {
            None if !self.events.is_empty() => {
                Err(Error::Structure("log already has a root event".into()))
            }
            Some(p) if p == 0 || p > self.events.len() as u64 => {
                Err(Error::Structure(format!("parent event {p} does not exist")))
            }
            _ => Ok(()),
        }
    }

    /// Appends an event. With a file attached the line is flushed and synced
    /// first; on failure nothing is appended.
    pub fn record(
        &mut self,
        parent: Option<u64>,
        session: &str,
        kind: EventKind,
        payload: serde_json::Value,
    ) -> Result<&ProvenanceEvent> {
        self.check_parent(parent)?;
        let event = ProvenanceEvent {
            seq: self.events.len() as u64 + 1,
            parent,
            session: session.to_owned(),
            // Whole microseconds keep the text form an exact round trip.
            time: DateTime::from_timestamp_micros(Utc::now().timestamp_micros())
                .expect("valid clock"),
            kind,
            digest: payload_digest(&payload)?,
            payload,
        };
        if let Some((path, file)) = &mut self.sink {
            let line = serde_json::to_string(&event)?;
            writeln!(file, "{line}")
                .and_then(|_| file.sync_data())
                .map_err(|e| unavailable(path, e))?;
        }
        self.events.push(event);
        Ok(self.events.last().expect("just pushed"))
    }

    /// Events from the root down to `seq`, root first.
    pub fn chain(&self, seq: u64) -> Result<Vec<&ProvenanceEvent>> {
        let mut out = vec![self.event(seq)?];
        while let Some(p) = out.last().expect("nonempty").parent {
            out.push(self.event(p)?);
        }
        out.reverse();
        Ok(out)
    }

    /// Follows undo markers back to the event whose state they restore.
    pub fn effective(&self, seq: u64) -> Result<u64> {
        let mut e = self.event(seq)?;
        while e.kind == EventKind::Undo {
            e = self.event(e.parent.expect("undo markers always have a parent"))?;
        }
        Ok(e.seq)
    }

    /// Last event recorded by `session`.
    pub fn head(&self, session: &str) -> Option<u64> {
        self.events
            .iter()
            .rev()
            .find(|e| e.session == session)
            .map(|e| e.seq)
    }

    pub fn verify_digests(&self) -> Result<()> {
        self.events.iter().try_for_each(ProvenanceEvent::verify)
    }
}

fn unavailable(path: &Path, e: std::io::Error) -> Error {
    Error::Availability(format!("{}: {e}", path.display()))
}
