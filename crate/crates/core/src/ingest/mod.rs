//! The server-side handler: one call per broker message, deduplicating
//! readings and tracking each ride against its count headers.

mod geojson;
mod grid;
pub mod service;
mod store;

use std::collections::{BTreeMap, HashSet};

use chrono::{DateTime, Utc};
use serde::Serialize;
use thiserror::Error;

use crate::clock::Millis;
use crate::firmware::{Reading, RideId, SessionHeader};

pub use geojson::{export_geojson, ride_colors, ExportOptions, PALETTE};
pub use grid::{aggregate_grid, GridCell, DEFAULT_PRECISION};
pub use store::{
    run_query, BBox, IngestRecord, JsonlStore, MemoryStore, QuarantineEntry, Query, Store,
    StoreError,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum RideStatus {
    Pending,
    Complete,
    Overcomplete,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RideSummary {
    pub ride_id: RideId,
    pub device_id: String,
    pub expected_count: Option<u64>,
    pub received_count: u64,
    pub first_utc: Option<DateTime<Utc>>,
    pub last_utc: Option<DateTime<Utc>>,
    pub status: RideStatus,
}

impl RideSummary {
    fn new(device_id: &str, ride_id: &RideId) -> Self {
        RideSummary {
            ride_id: ride_id.clone(),
            device_id: device_id.to_string(),
            expected_count: None,
            received_count: 0,
            first_utc: None,
            last_utc: None,
            status: RideStatus::Pending,
        }
    }

    fn refresh(&mut self) {
        use std::cmp::Ordering::*;
        self.status = match self.expected_count.map(|e| self.received_count.cmp(&e)) {
            Some(Equal) => RideStatus::Complete,
            Some(Greater) => RideStatus::Overcomplete,
            _ => RideStatus::Pending,
        };
    }

    fn count(&mut self, utc: DateTime<Utc>) {
        self.received_count += 1;
        self.first_utc = Some(self.first_utc.map_or(utc, |f| f.min(utc)));
        self.last_utc = Some(self.last_utc.map_or(utc, |l| l.max(utc)));
        self.refresh();
    }

    fn expect(&mut self, header: &SessionHeader) {
        let total = header.expected_total();
        self.expected_count = Some(self.expected_count.map_or(total, |e| e.max(total)));
        self.refresh();
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Stored,
    Duplicate,
    Header,
    Quarantined,
    Ignored,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct IngestStats {
    pub stored: u64,
    pub duplicates: u64,
    pub headers: u64,
    pub quarantined: u64,
    pub ignored: u64,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum IngestError {
    #[error("no ride {ride_id} for device {device_id}")]
    NotFound { device_id: String, ride_id: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Channel {
    Session,
    Data,
}

/// `ardueco/<device_id>/session|data`.
fn parse_topic(topic: &str) -> Option<(&str, Channel)> {
    let mut parts = topic.split('/');
    let (Some("ardueco"), Some(device), Some(kind), None) =
        (parts.next(), parts.next(), parts.next(), parts.next())
    else {
        return None;
    };
    if device.is_empty() || device.contains(['+', '#']) {
        return None;
    }
    match kind {
        "session" => Some((device, Channel::Session)),
        "data" => Some((device, Channel::Data)),
        _ => None,
    }
}

type Key = (String, RideId, u64);

pub struct Ingest<S: Store> {
    store: S,
    seen: HashSet<Key>,
    seen_headers: HashSet<(String, RideId, u64, u64)>,
    summaries: BTreeMap<(String, RideId), RideSummary>,
    stats: IngestStats,
}

impl<S: Store> Ingest<S> {
    /// Rebuilds the dedup index and ride summaries from what `store` holds.
    pub fn new(store: S) -> Self {
        let mut ingest = Ingest {
            store,
            seen: HashSet::new(),
            seen_headers: HashSet::new(),
            summaries: BTreeMap::new(),
            stats: IngestStats::default(),
        };
        let records: Vec<(Key, DateTime<Utc>)> = ingest
            .store
            .records()
            .iter()
            .map(|r| {
                (
                    (r.device_id.clone(), r.reading.ride.clone(), r.reading.seq),
                    r.reading.utc,
                )
            })
            .collect();
        for (key, utc) in records {
            if ingest.seen.insert(key.clone()) {
                ingest.summary_mut(&key.0, &key.1).count(utc);
            }
        }
        let headers = ingest.store.headers().to_vec();
        for h in headers {
            ingest.seen_headers.insert((
                h.device_id.clone(),
                h.ride_id.clone(),
                h.first_seq,
                h.count,
            ));
            ingest.summary_mut(&h.device_id, &h.ride_id).expect(&h);
        }
        ingest
    }

    fn summary_mut(&mut self, device: &str, ride: &RideId) -> &mut RideSummary {
        self.summaries
            .entry((device.to_string(), ride.clone()))
            .or_insert_with(|| RideSummary::new(device, ride))
    }

    pub fn store(&self) -> &S {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut S {
        &mut self.store
    }

    pub fn into_store(self) -> S {
        self.store
    }

    pub fn stats(&self) -> &IngestStats {
        &self.stats
    }

    pub fn records(&self) -> &[IngestRecord] {
        self.store.records()
    }

    pub fn query(&self, q: &Query) -> Vec<IngestRecord> {
        self.store.query(q)
    }

    /// Summaries ordered by (device, ride).
    pub fn summaries(&self) -> impl Iterator<Item = &RideSummary> {
        self.summaries.values()
    }

    pub fn ride_completeness(
        &self,
        ride_id: &RideId,
        device_id: &str,
    ) -> Result<RideSummary, IngestError> {
        self.summaries
            .get(&(device_id.to_string(), ride_id.clone()))
            .cloned()
            .ok_or_else(|| IngestError::NotFound {
                device_id: device_id.to_string(),
                ride_id: ride_id.to_string(),
            })
    }

    fn reject(
        &mut self,
        topic: &str,
        payload: &[u8],
        reason: String,
        received_at: Millis,
    ) -> Result<Outcome, StoreError> {
        self.stats.quarantined += 1;
        self.store.append_quarantine(&QuarantineEntry {
            topic: topic.to_string(),
            reason,
            raw_hex: hex::encode(payload),
            received_at: received_at.to_utc(),
        })?;
        Ok(Outcome::Quarantined)
    }

    /// Handles one message. Only storage failures are errors; bad payloads
    /// are quarantined and foreign topics counted and dropped.
    pub fn on_message(
        &mut self,
        topic: &str,
        payload: &[u8],
        received_at: Millis,
    ) -> Result<Outcome, StoreError> {
        let Some((device, channel)) = parse_topic(topic) else {
            self.stats.ignored += 1;
            return Ok(Outcome::Ignored);
        };
        let text = match std::str::from_utf8(payload) {
            Ok(t) => t,
            Err(e) => return self.reject(topic, payload, format!("not UTF-8: {e}"), received_at),
        };
        match channel {
            Channel::Session => {
                let header: SessionHeader = match serde_json::from_str(text) {
                    Ok(h) => h,
                    Err(e) => {
                        return self.reject(topic, payload, format!("bad header: {e}"), received_at)
                    }
                };
                if RideId::parse(header.ride_id.as_str()).is_none() {
                    return self.reject(topic, payload, "bad ride id".into(), received_at);
                }
                if header.device_id != device {
                    let reason = format!("header names device {:?}", header.device_id);
                    return self.reject(topic, payload, reason, received_at);
                }
                self.stats.headers += 1;
                let key = (
                    header.device_id.clone(),
                    header.ride_id.clone(),
                    header.first_seq,
                    header.count,
                );
                if self.seen_headers.insert(key) {
                    self.store.append_header(&header)?;
                }
                self.summary_mut(device, &header.ride_id).expect(&header);
                Ok(Outcome::Header)
            }
            Channel::Data => {
                let reading = match Reading::parse_line(text) {
                    Ok(r) => r,
                    Err(e) => return self.reject(topic, payload, e.to_string(), received_at),
                };
                self.insert(device, reading, received_at.to_utc())
            }
        }
    }

    /// Stores a reading through the same dedup path as live traffic.
    pub fn insert(
        &mut self,
        device: &str,
        reading: Reading,
        server_received_at: DateTime<Utc>,
    ) -> Result<Outcome, StoreError> {
        let key = (device.to_string(), reading.ride.clone(), reading.seq);
        if self.seen.contains(&key) {
            self.stats.duplicates += 1;
            return Ok(Outcome::Duplicate);
        }
        let record = IngestRecord {
            reading,
            device_id: device.to_string(),
            server_received_at,
        };
        self.store.append(&record)?;
        self.seen.insert(key);
        self.stats.stored += 1;
        self.summary_mut(device, &record.reading.ride)
            .count(record.reading.utc);
        Ok(Outcome::Stored)
    }

    pub fn flush(&mut self) -> Result<(), StoreError> {
        self.store.flush()
    }
}
