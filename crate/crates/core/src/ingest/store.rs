//! Append-only reading store. The JSON-lines backend keeps the whole log
//! in memory too, so queries never touch the disk.

use std::fs::{File, OpenOptions};
use std::io::{self, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::firmware::{Reading, RideId, SessionHeader};

/// One stored reading: the device row plus where and when it arrived.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestRecord {
    #[serde(flatten)]
    pub reading: Reading,
    pub device_id: String,
    pub server_received_at: DateTime<Utc>,
}

impl AsRef<Reading> for IngestRecord {
    fn as_ref(&self) -> &Reading {
        &self.reading
    }
}

impl AsRef<Reading> for Reading {
    fn as_ref(&self) -> &Reading {
        self
    }
}

/// A payload the handler could not use.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuarantineEntry {
    pub topic: String,
    pub reason: String,
    pub raw_hex: String,
    pub received_at: DateTime<Utc>,
}

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("store I/O on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path} line {line}: {reason}")]
    Corrupt {
        path: PathBuf,
        line: usize,
        reason: String,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BBox {
    pub min_lat: f64,
    pub min_lon: f64,
    pub max_lat: f64,
    pub max_lon: f64,
}

impl BBox {
    pub fn contains(&self, lat: f64, lon: f64) -> bool {
        (self.min_lat..=self.max_lat).contains(&lat) && (self.min_lon..=self.max_lon).contains(&lon)
    }
}

/// Every set dimension must match. A bbox never matches unfixed rows.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Query {
    pub bbox: Option<BBox>,
    /// Inclusive bounds on the reading's UTC timestamp.
    pub time: Option<(DateTime<Utc>, DateTime<Utc>)>,
    pub ride: Option<RideId>,
    pub device: Option<String>,
}

impl Query {
    pub fn matches(&self, r: &IngestRecord) -> bool {
        if let Some(b) = &self.bbox {
            match r.reading.position() {
                Some((lat, lon)) if b.contains(lat, lon) => {}
                _ => return false,
            }
        }
        if let Some((from, to)) = &self.time {
            if r.reading.utc < *from || r.reading.utc > *to {
                return false;
            }
        }
        if self
            .ride
            .as_ref()
            .is_some_and(|ride| *ride != r.reading.ride)
        {
            return false;
        }
        if self.device.as_ref().is_some_and(|d| *d != r.device_id) {
            return false;
        }
        true
    }
}

/// Matching records ordered by (ride, seq, device).
pub fn run_query(records: &[IngestRecord], q: &Query) -> Vec<IngestRecord> {
    let mut out: Vec<IngestRecord> = records.iter().filter(|r| q.matches(r)).cloned().collect();
    out.sort_by(|a, b| {
        (&a.reading.ride, a.reading.seq, &a.device_id).cmp(&(
            &b.reading.ride,
            b.reading.seq,
            &b.device_id,
        ))
    });
    out
}

pub trait Store {
    fn append(&mut self, r: &IngestRecord) -> Result<(), StoreError>;
    fn append_header(&mut self, h: &SessionHeader) -> Result<(), StoreError>;
    fn append_quarantine(&mut self, q: &QuarantineEntry) -> Result<(), StoreError>;
    fn records(&self) -> &[IngestRecord];
    fn headers(&self) -> &[SessionHeader];
    fn quarantine(&self) -> &[QuarantineEntry];
    fn flush(&mut self) -> Result<(), StoreError> {
        Ok(())
    }

    fn query(&self, q: &Query) -> Vec<IngestRecord> {
        run_query(self.records(), q)
    }
}

#[derive(Debug, Default, Clone)]
pub struct MemoryStore {
    records: Vec<IngestRecord>,
    headers: Vec<SessionHeader>,
    quarantine: Vec<QuarantineEntry>,
}

impl MemoryStore {
    pub fn new() -> Self {
        MemoryStore::default()
    }
}

impl Store for MemoryStore {
    fn append(&mut self, r: &IngestRecord) -> Result<(), StoreError> {
        self.records.push(r.clone());
        Ok(())
    }
    fn append_header(&mut self, h: &SessionHeader) -> Result<(), StoreError> {
        self.headers.push(h.clone());
        Ok(())
    }
    fn append_quarantine(&mut self, q: &QuarantineEntry) -> Result<(), StoreError> {
        self.quarantine.push(q.clone());
        Ok(())
    }
    fn records(&self) -> &[IngestRecord] {
        &self.records
    }
    fn headers(&self) -> &[SessionHeader] {
        &self.headers
    }
    fn quarantine(&self) -> &[QuarantineEntry] {
        &self.quarantine
    }
}

struct Log<T> {
    path: PathBuf,
    writer: Option<BufWriter<File>>,
    items: Vec<T>,
}

impl<T: Serialize + for<'de> Deserialize<'de>> Log<T> {
    /// Loads complete lines. A trailing fragment left by a crash is cut off
    /// so the next append starts on a fresh line.
    fn open(path: PathBuf) -> Result<Self, StoreError> {
        let io_err = |source| StoreError::Io {
            path: path.clone(),
            source,
        };
        let mut text = String::new();
        match File::open(&path) {
            Ok(mut f) => {
                f.read_to_string(&mut text).map_err(io_err)?;
            }
            Err(e) if e.kind() == io::ErrorKind::NotFound => {}
            Err(e) => return Err(io_err(e)),
        }
        let complete = text.rfind('\n').map_or(0, |i| i + 1);
        let mut items = Vec::new();
        for (i, line) in text[..complete].lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            let item = serde_json::from_str(line).map_err(|e| StoreError::Corrupt {
                path: path.clone(),
                line: i + 1,
                reason: e.to_string(),
            })?;
            items.push(item);
        }
        if complete < text.len() {
            let f = OpenOptions::new().write(true).open(&path).map_err(io_err)?;
            f.set_len(complete as u64).map_err(io_err)?;
        }
        Ok(Log {
            path,
            writer: None,
            items,
        })
    }

    fn push(&mut self, item: &T) -> Result<(), StoreError>
    where
        T: Clone,
    {
        let path = &self.path;
        let io_err = |source| StoreError::Io {
            path: path.clone(),
            source,
        };
        if self.writer.is_none() {
            let f = OpenOptions::new()
                .create(true)
                .append(true)
                .open(path)
                .map_err(io_err)?;
            self.writer = Some(BufWriter::new(f));
        }
        let w = self.writer.as_mut().expect("writer opened");
        let mut line = serde_json::to_vec(item).expect("record serializes");
        line.push(b'\n');
        w.write_all(&line).map_err(io_err)?;
        w.flush().map_err(io_err)?;
        self.items.push(item.clone());
        Ok(())
    }

    fn sync(&mut self) -> Result<(), StoreError> {
        if let Some(w) = self.writer.as_mut() {
            w.flush()
                .and_then(|_| w.get_ref().sync_data())
                .map_err(|source| StoreError::Io {
                    path: self.path.clone(),
                    source,
                })?;
        }
        Ok(())
    }
}

/// Readings in `<path>`, session headers in `<path>.sessions.jsonl`,
/// rejected payloads in `<path>.quarantine.jsonl`.
pub struct JsonlStore {
    records: Log<IngestRecord>,
    headers: Log<SessionHeader>,
    quarantine: Log<QuarantineEntry>,
}

fn sidecar(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

impl JsonlStore {
    pub fn open(path: impl AsRef<Path>) -> Result<JsonlStore, StoreError> {
        let path = path.as_ref();
        Ok(JsonlStore {
            records: Log::open(path.to_path_buf())?,
            headers: Log::open(sidecar(path, ".sessions.jsonl"))?,
            quarantine: Log::open(sidecar(path, ".quarantine.jsonl"))?,
        })
    }

    pub fn path(&self) -> &Path {
        &self.records.path
    }
}

impl Store for JsonlStore {
    fn append(&mut self, r: &IngestRecord) -> Result<(), StoreError> {
        self.records.push(r)
    }
    fn append_header(&mut self, h: &SessionHeader) -> Result<(), StoreError> {
        self.headers.push(h)
    }
    fn append_quarantine(&mut self, q: &QuarantineEntry) -> Result<(), StoreError> {
        self.quarantine.push(q)
    }
    fn records(&self) -> &[IngestRecord] {
        &self.records.items
    }
    fn headers(&self) -> &[SessionHeader] {
        &self.headers.items
    }
    fn quarantine(&self) -> &[QuarantineEntry] {
        &self.quarantine.items
    }
    fn flush(&mut self) -> Result<(), StoreError> {
        self.records.sync()?;
        self.headers.sync()?;
        self.quarantine.sync()
    }
}
