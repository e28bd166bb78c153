//! The button-triggered upload: CONNECT, then per ride in the cache one
//! count header followed by that ride's rows, in file order.

use std::collections::{BTreeMap, VecDeque};

use log::debug;

use super::config::DeviceConfig;
use super::reading::{Reading, RideId, SessionHeader};
use super::UploadResult;
use crate::clock::Millis;
use crate::mqtt::{ClientSession, Packet, QoS, SessionConfig, SessionError, SessionEvent};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct UploadPolicy {
    pub session: SessionConfig,
    pub connect_timeout_ms: i64,
}

impl Default for UploadPolicy {
    fn default() -> Self {
        UploadPolicy {
            session: SessionConfig::default(),
            connect_timeout_ms: 5_000,
        }
    }
}

/// What one batch announced and what was actually published after it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BatchAudit {
    pub ride_id: RideId,
    pub header_count: u64,
    pub first_seq: u64,
    /// Data publishes sent for this batch, first transmissions only.
    pub data_published: u64,
    /// Every message of the upload was acknowledged (or sent, at qos 0).
    pub completed: bool,
}

#[derive(Debug, Clone, Copy)]
enum Kind {
    Header,
    Data(usize),
}

#[derive(Debug, Clone)]
struct Outgoing {
    topic: String,
    payload: Vec<u8>,
    kind: Kind,
}

#[derive(Debug, Clone)]
struct Batch {
    ride_id: RideId,
    first_seq: u64,
    lines: Vec<String>,
}

pub(super) struct Step {
    pub frames: Vec<Vec<u8>>,
    pub finished: Option<UploadResult>,
    pub progress: Option<(usize, usize)>,
}

impl Step {
    fn empty() -> Self {
        Step {
            frames: Vec::new(),
            finished: None,
            progress: None,
        }
    }
}

#[derive(Debug, Clone)]
pub(super) struct Upload {
    session: ClientSession,
    qos: QoS,
    device_id: String,
    topic_session: String,
    topic_data: String,
    batches: Vec<Batch>,
    queue: VecDeque<Outgoing>,
    pending: BTreeMap<u16, Kind>,
    connect_deadline: Option<Millis>,
    snapshot_len: usize,
    total_data: usize,
    acked_data: usize,
    audit_range: Option<(usize, usize)>,
}

/// Splits cache rows into contiguous per-ride groups.
fn group_batches(lines: &[String], current_ride: &RideId, next_seq: u64) -> Vec<Batch> {
    let mut batches: Vec<Batch> = Vec::new();
    for line in lines {
        let parsed = Reading::parse_line(line).ok();
        let same_ride = match (&parsed, batches.last()) {
            (Some(r), Some(b)) => r.ride == b.ride_id,
            (None, Some(_)) => true,
            (_, None) => false,
        };
        if same_ride {
            if let Some(b) = batches.last_mut() {
                b.lines.push(line.clone());
            }
            continue;
        }
        let (ride_id, first_seq) = match parsed {
            Some(r) => (r.ride, r.seq),
            None => (current_ride.clone(), 0),
        };
        batches.push(Batch {
            ride_id,
            first_seq,
            lines: vec![line.clone()],
        });
    }
    if batches.is_empty() {
        batches.push(Batch {
            ride_id: current_ride.clone(),
            first_seq: next_seq,
            lines: Vec::new(),
        });
    }
    batches
}

impl Upload {
    pub fn start(
        cfg: &DeviceConfig,
        cache: &[String],
        current_ride: &RideId,
        next_seq: u64,
        policy: UploadPolicy,
        now: Millis,
    ) -> (Upload, Vec<u8>) {
        let mut session = ClientSession::new(policy.session);
        let frame = session
            .connect(&cfg.device_id, cfg.auth_token.as_deref())
            .expect("fresh session connects");
        let batches = group_batches(cache, current_ride, next_seq);
        let total_data = batches.iter().map(|b| b.lines.len()).sum();
        (
            Upload {
                session,
                qos: cfg.qos(),
                device_id: cfg.device_id.clone(),
                topic_session: cfg.topic_session.clone(),
                topic_data: cfg.topic_data.clone(),
                batches,
                queue: VecDeque::new(),
                pending: BTreeMap::new(),
                connect_deadline: Some(now + policy.connect_timeout_ms),
                snapshot_len: cache.len(),
                total_data,
                acked_data: 0,
                audit_range: None,
            },
            frame,
        )
    }

    pub fn snapshot_len(&self) -> usize {
        self.snapshot_len
    }

    pub fn deadline(&self) -> Option<Millis> {
        self.connect_deadline
            .or_else(|| self.session.next_deadline())
    }

    fn begin_batches(&mut self, audit: &mut Vec<BatchAudit>) {
        let base = audit.len();
        for (i, b) in self.batches.iter().enumerate() {
            let header = SessionHeader {
                ride_id: b.ride_id.clone(),
                device_id: self.device_id.clone(),
                count: b.lines.len() as u64,
                first_seq: b.first_seq,
            };
            audit.push(BatchAudit {
                ride_id: b.ride_id.clone(),
                header_count: header.count,
                first_seq: b.first_seq,
                data_published: 0,
                completed: false,
            });
            self.queue.push_back(Outgoing {
                topic: self.topic_session.clone(),
                payload: serde_json::to_vec(&header).expect("header serializes"),
                kind: Kind::Header,
            });
            for line in &b.lines {
                self.queue.push_back(Outgoing {
                    topic: self.topic_data.clone(),
                    payload: line.clone().into_bytes(),
                    kind: Kind::Data(base + i),
                });
            }
        }
        self.audit_range = Some((base, audit.len()));
    }

    fn fill_window(&mut self, now: Millis, audit: &mut [BatchAudit], step: &mut Step) {
        while let Some(next) = self.queue.front() {
            match self
                .session
                .publish(&next.topic, &next.payload, self.qos, now)
            {
                Ok(published) => {
                    let out = self.queue.pop_front().expect("front exists");
                    if let Kind::Data(batch) = out.kind {
                        audit[batch].data_published += 1;
                        if self.qos == QoS::AtMostOnce {
                            self.acked_data += 1;
                        }
                    }
                    if let Some(id) = published.packet_id {
                        self.pending.insert(id, out.kind);
                    }
                    step.frames.push(published.frame);
                }
                Err(SessionError::InflightFull(_)) => break,
                Err(e) => {
                    debug!("publish failed: {e}");
                    break;
                }
            }
        }
    }

    fn finish_if_done(&mut self, audit: &mut [BatchAudit], step: &mut Step) {
        if self.connect_deadline.is_some() || !self.queue.is_empty() {
            return;
        }
        if self.session.inflight_len() > 0 {
            return;
        }
        let (frame, _) = self.session.disconnect();
        step.frames.push(frame);
        if let Some((a, b)) = self.audit_range {
            for entry in &mut audit[a..b] {
                entry.completed = true;
            }
        }
        step.finished = Some(UploadResult::Completed {
            data_messages: self.total_data,
        });
    }

    pub fn on_packet(&mut self, packet: &Packet, now: Millis, audit: &mut Vec<BatchAudit>) -> Step {
        let mut step = Step::empty();
        match self.session.handle(packet) {
            Ok(SessionEvent::Connected) => {
                self.connect_deadline = None;
                self.begin_batches(audit);
                self.fill_window(now, audit, &mut step);
            }
            Ok(SessionEvent::Refused) => return self.fail("connection refused", audit),
            Ok(SessionEvent::Acked(id)) => {
                if let Some(Kind::Data(_)) = self.pending.remove(&id) {
                    self.acked_data += 1;
                }
                self.fill_window(now, audit, &mut step);
            }
            Ok(_) => {}
            Err(e) => return self.fail(&format!("protocol error: {e}"), audit),
        }
        step.progress = Some((self.acked_data, self.total_data));
        self.finish_if_done(audit, &mut step);
        step
    }

    pub fn poll(&mut self, now: Millis, audit: &mut Vec<BatchAudit>) -> Step {
        if let Some(deadline) = self.connect_deadline {
            if now >= deadline {
                return self.fail("connect timeout", audit);
            }
            return Step::empty();
        }
        let mut step = Step::empty();
        let tick = self.session.tick(now);
        if let Some(f) = tick.failures.first() {
            return self.fail(
                &format!(
                    "packet {} undelivered after {} sends",
                    f.packet_id, f.send_count
                ),
                audit,
            );
        }
        step.frames.extend(tick.retransmissions);
        self.fill_window(now, audit, &mut step);
        step.progress = Some((self.acked_data, self.total_data));
        self.finish_if_done(audit, &mut step);
        step
    }

    pub fn fail(&mut self, reason: &str, _audit: &mut Vec<BatchAudit>) -> Step {
        self.session.abort();
        self.queue.clear();
        self.pending.clear();
        Step {
            frames: Vec::new(),
            finished: Some(UploadResult::Failed {
                reason: reason.to_string(),
            }),
            progress: None,
        }
    }

    pub fn abandon(mut self, audit: &mut Vec<BatchAudit>) {
        let _ = self.fail("device rebooted", audit);
    }
}
