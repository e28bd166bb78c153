use std::collections::BTreeMap;

use serde::Serialize;

use super::energy::EnergyAccount;
use super::World;
use crate::clock::Millis;
use crate::firmware::RideId;
use crate::ingest::{RideStatus, RideSummary};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Totals {
    pub generated: u64,
    pub stored: u64,
    /// `stored / generated`, 1 when nothing was generated.
    pub delivery_fraction: f64,
    /// Data publishes sent by devices, first transmissions only.
    pub data_publishes: u64,
    pub duplicates_received: u64,
    pub quarantined: u64,
    pub rides: u64,
    pub rides_complete: u64,
    pub rides_pending: u64,
    pub rides_overcomplete: u64,
    pub uploads_started: u64,
    pub uploads_completed: u64,
    pub uploads_failed: u64,
    pub frames_sent: u64,
    pub frames_dropped: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct AuditViolation {
    pub device_id: String,
    pub ride_id: RideId,
    pub header_count: u64,
    pub data_published: u64,
    pub completed: bool,
}

/// Count headers checked against what followed them.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct AuditSummary {
    pub batches: u64,
    pub completed_batches: u64,
    /// Completed batches whose publishes differ from the header count, and
    /// cut-short batches that published more than announced.
    pub violations: Vec<AuditViolation>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DeviceReport {
    pub device_id: String,
    pub rides: u64,
    pub generated: u64,
    pub stored: u64,
    pub uploads_started: u64,
    pub uploads_completed: u64,
    pub uploads_failed: u64,
    /// Rows still waiting in the cache log at the end.
    pub cache_left: u64,
    pub energy: EnergyAccount,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimReport {
    pub seed: u64,
    pub n_devices: u32,
    pub duration_s: u64,
    pub end_time_s: f64,
    pub drop_probability: f64,
    pub qos: u8,
    pub totals: Totals,
    pub audit: AuditSummary,
    pub devices: Vec<DeviceReport>,
    pub rides: Vec<RideSummary>,
}

impl SimReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    /// `generated/stored/complete rides` in one line.
    pub fn summary_line(&self) -> String {
        let t = &self.totals;
        format!(
            "generated {} stored {} rides complete {}/{} uploads {}/{}",
            t.generated,
            t.stored,
            t.rides_complete,
            t.rides,
            t.uploads_completed,
            t.uploads_started
        )
    }
}

pub(super) fn build(w: &World<'_>, end: Millis) -> SimReport {
    let mut stored_by_device: BTreeMap<&str, u64> = BTreeMap::new();
    for r in w.ingest.records() {
        *stored_by_device.entry(r.device_id.as_str()).or_default() += 1;
    }
    let mut violations = Vec::new();
    let (mut batches, mut completed_batches, mut data_publishes) = (0, 0, 0);
    let mut devices = Vec::new();
    for b in &w.bikes {
        for a in b.fw.audit() {
            batches += 1;
            data_publishes += a.data_published;
            if a.completed {
                completed_batches += 1;
            }
            let bad = if a.completed {
                a.header_count != a.data_published
            } else {
                a.data_published > a.header_count
            };
            if bad {
                violations.push(AuditViolation {
                    device_id: b.id.clone(),
                    ride_id: a.ride_id.clone(),
                    header_count: a.header_count,
                    data_published: a.data_published,
                    completed: a.completed,
                });
            }
        }
        devices.push(DeviceReport {
            device_id: b.id.clone(),
            rides: b.rides,
            generated: b.generated,
            stored: stored_by_device.get(b.id.as_str()).copied().unwrap_or(0),
            uploads_started: b.uploads_started,
            uploads_completed: b.uploads_completed,
            uploads_failed: b.uploads_failed,
            cache_left: b.fw.sd().cache_lines().len() as u64,
            energy: b.energy(&w.cfg.energy, end),
        });
    }
    let rides: Vec<RideSummary> = w.ingest.summaries().cloned().collect();
    let count = |s: RideStatus| rides.iter().filter(|r| r.status == s).count() as u64;
    let generated: u64 = devices.iter().map(|d| d.generated).sum();
    let stored = w.ingest.records().len() as u64;
    let stats = w.ingest.stats();
    let net = w.network.stats();
    let totals = Totals {
        generated,
        stored,
        delivery_fraction: if generated == 0 {
            1.0
        } else {
            stored as f64 / generated as f64
        },
        data_publishes,
        duplicates_received: stats.duplicates,
        quarantined: stats.quarantined,
        rides: devices.iter().map(|d| d.rides).sum(),
        rides_complete: count(RideStatus::Complete),
        rides_pending: count(RideStatus::Pending),
        rides_overcomplete: count(RideStatus::Overcomplete),
        uploads_started: devices.iter().map(|d| d.uploads_started).sum(),
        uploads_completed: devices.iter().map(|d| d.uploads_completed).sum(),
        uploads_failed: devices.iter().map(|d| d.uploads_failed).sum(),
        frames_sent: net.sent,
        frames_dropped: net.dropped,
    };
    SimReport {
        seed: w.cfg.seed,
        n_devices: w.cfg.n_devices,
        duration_s: w.cfg.duration_s,
        end_time_s: (end - w.t0) as f64 / 1000.0,
        drop_probability: w.cfg.drop_probability,
        qos: w.cfg.qos,
        totals,
        audit: AuditSummary {
            batches,
            completed_batches,
            violations,
        },
        devices,
        rides,
    }
}
