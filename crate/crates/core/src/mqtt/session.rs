//! Client-side session: connection state, packet-id allocation and the
//! QoS 1 retransmission window.

use std::collections::BTreeMap;

use thiserror::Error;

use super::codec::{encode, CodecError, Connect, Packet, Publish, QoS};
use crate::clock::Millis;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SessionConfig {
    pub retry_timeout_ms: i64,
    pub backoff_factor: i64,
    /// Backoff never exceeds `retry_timeout_ms * backoff_cap`.
    pub backoff_cap: i64,
    pub max_retries: u32,
    pub window: usize,
    pub keep_alive_s: u16,
}

impl Default for SessionConfig {
    fn default() -> Self {
        SessionConfig {
            retry_timeout_ms: 1_000,
            backoff_factor: 2,
            backoff_cap: 8,
            max_retries: 8,
            window: 16,
            keep_alive_s: 60,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SessionState {
    Idle,
    Connecting,
    Connected,
    Closed,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SessionError {
    #[error("session is not connected")]
    NotConnected,
    #[error("inflight window full ({0} unacknowledged publishes)")]
    InflightFull(usize),
    #[error("session already started")]
    AlreadyStarted,
    #[error("unexpected {0} from server")]
    Unexpected(&'static str),
    #[error(transparent)]
    Codec(#[from] CodecError),
}

#[derive(Debug, Clone)]
struct Inflight {
    publish: Publish,
    send_count: u32,
    next_retry_at: Millis,
}

/// A QoS 1 publish that exhausted its retries without an acknowledgment.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DeliveryFailure {
    pub packet_id: u16,
    pub topic: String,
    pub send_count: u32,
}

#[derive(Debug, Default)]
pub struct TickOutput {
    pub retransmissions: Vec<Vec<u8>>,
    pub failures: Vec<DeliveryFailure>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SessionEvent {
    Connected,
    Refused,
    Acked(u16),
    /// Puback for an id not in flight, e.g. a second ack after a dup.
    StaleAck(u16),
    Subscribed(u16),
    Message {
        topic: String,
        payload: Vec<u8>,
        /// Puback owed to the server, already encoded.
        reply: Option<Vec<u8>>,
    },
    Pong,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Published {
    pub packet_id: Option<u16>,
    pub frame: Vec<u8>,
}

#[derive(Debug, Clone)]
pub struct ClientSession {
    config: SessionConfig,
    state: SessionState,
    inflight: BTreeMap<u16, Inflight>,
    next_packet_id: u16,
}

impl ClientSession {
    pub fn new(config: SessionConfig) -> Self {
        ClientSession {
            config,
            state: SessionState::Idle,
            inflight: BTreeMap::new(),
            next_packet_id: 1,
        }
    }

    pub fn state(&self) -> SessionState {
        self.state
    }

    pub fn config(&self) -> &SessionConfig {
        &self.config
    }

    pub fn inflight_len(&self) -> usize {
        self.inflight.len()
    }

    pub fn inflight_ids(&self) -> impl Iterator<Item = u16> + '_ {
        self.inflight.keys().copied()
    }

    pub fn has_capacity(&self) -> bool {
        self.inflight.len() < self.config.window
    }

    /// Earliest retransmission deadline, if anything is in flight.
    pub fn next_deadline(&self) -> Option<Millis> {
        self.inflight.values().map(|e| e.next_retry_at).min()
    }

    pub fn connect(
        &mut self,
        client_id: &str,
        auth_token: Option<&str>,
    ) -> Result<Vec<u8>, SessionError> {
        if self.state == SessionState::Connecting || self.state == SessionState::Connected {
            return Err(SessionError::AlreadyStarted);
        }
        let frame = encode(&Packet::Connect(Connect {
            client_id: client_id.to_string(),
            keep_alive_s: self.config.keep_alive_s,
            auth_token: auth_token.map(str::to_string),
        }))?;
        self.state = SessionState::Connecting;
        Ok(frame)
    }

    fn allocate_id(&mut self) -> u16 {
        loop {
            let id = self.next_packet_id;
            self.next_packet_id = if id == u16::MAX { 1 } else { id + 1 };
            if !self.inflight.contains_key(&id) {
                return id;
            }
        }
    }

    fn backoff_ms(&self, send_count: u32) -> i64 {
        let base = self.config.retry_timeout_ms;
        let cap = base.saturating_mul(self.config.backoff_cap);
        let exp = send_count.saturating_sub(1).min(32);
        base.saturating_mul(self.config.backoff_factor.saturating_pow(exp))
            .min(cap)
    }

    pub fn publish(
        &mut self,
        topic: &str,
        payload: &[u8],
        qos: QoS,
        now: Millis,
    ) -> Result<Published, SessionError> {
        if self.state != SessionState::Connected {
            return Err(SessionError::NotConnected);
        }
        match qos {
            QoS::AtMostOnce => {
                let frame = encode(&Packet::Publish(Publish {
                    topic: topic.to_string(),
                    payload: payload.to_vec(),
                    qos,
                    packet_id: None,
                    dup: false,
                }))?;
                Ok(Published {
                    packet_id: None,
                    frame,
                })
            }
            QoS::AtLeastOnce => {
                if !self.has_capacity() {
                    return Err(SessionError::InflightFull(self.inflight.len()));
                }
                let saved = self.next_packet_id;
                let id = self.allocate_id();
                let publish = Publish {
                    topic: topic.to_string(),
                    payload: payload.to_vec(),
                    qos,
                    packet_id: Some(id),
                    dup: false,
                };
                let frame = match encode(&Packet::Publish(publish.clone())) {
                    Ok(f) => f,
                    Err(e) => {
                        self.next_packet_id = saved;
                        return Err(e.into());
                    }
                };
                self.inflight.insert(
                    id,
                    Inflight {
                        publish,
                        send_count: 1,
                        next_retry_at: now + self.config.retry_timeout_ms,
                    },
                );
                Ok(Published {
                    packet_id: Some(id),
                    frame,
                })
            }
        }
    }

    /// Retransmits every overdue entry with the dup flag set, and gives up
    /// on entries that already used all their retries.
    pub fn tick(&mut self, now: Millis) -> TickOutput {
        let mut out = TickOutput::default();
        let due: Vec<u16> = self
            .inflight
            .iter()
            .filter(|(_, e)| e.next_retry_at <= now)
            .map(|(&id, _)| id)
            .collect();
        for id in due {
            let retries_used = self.inflight[&id].send_count - 1;
            if retries_used >= self.config.max_retries {
                if let Some(e) = self.inflight.remove(&id) {
                    out.failures.push(DeliveryFailure {
                        packet_id: id,
                        topic: e.publish.topic,
                        send_count: e.send_count,
                    });
                }
                continue;
            }
            let next_count = self.inflight[&id].send_count + 1;
            let delay = self.backoff_ms(next_count);
            let entry = self.inflight.get_mut(&id).expect("due id present");
            entry.send_count = next_count;
            entry.next_retry_at = now + delay;
            entry.publish.dup = true;
            if let Ok(frame) = encode(&Packet::Publish(entry.publish.clone())) {
                out.retransmissions.push(frame);
            }
        }
        out
    }

    pub fn handle(&mut self, packet: &Packet) -> Result<SessionEvent, SessionError> {
        match packet {
            Packet::Connack { accepted } => {
                if self.state != SessionState::Connecting {
                    return Err(SessionError::Unexpected("CONNACK"));
                }
                if *accepted {
                    self.state = SessionState::Connected;
                    Ok(SessionEvent::Connected)
                } else {
                    self.state = SessionState::Closed;
                    Ok(SessionEvent::Refused)
                }
            }
            Packet::Puback { packet_id } => Ok(match self.inflight.remove(packet_id) {
                Some(_) => SessionEvent::Acked(*packet_id),
                None => SessionEvent::StaleAck(*packet_id),
            }),
            Packet::Suback { packet_id, .. } => Ok(SessionEvent::Subscribed(*packet_id)),
            Packet::Pingresp => Ok(SessionEvent::Pong),
            Packet::Publish(p) => {
                let reply = match p.packet_id {
                    Some(id) => Some(encode(&Packet::Puback { packet_id: id })?),
                    None => None,
                };
                Ok(SessionEvent::Message {
                    topic: p.topic.clone(),
                    payload: p.payload.clone(),
                    reply,
                })
            }
            other => Err(SessionError::Unexpected(other.name())),
        }
    }

    pub fn subscribe(&mut self, filters: &[(&str, QoS)]) -> Result<Vec<u8>, SessionError> {
        if self.state != SessionState::Connected {
            return Err(SessionError::NotConnected);
        }
        let packet_id = self.allocate_id();
        Ok(encode(&Packet::Subscribe {
            packet_id,
            topic_filters: filters.iter().map(|(f, q)| (f.to_string(), *q)).collect(),
        })?)
    }

    pub fn ping(&self) -> Vec<u8> {
        vec![0xC0, 0x00]
    }

    /// Closes the session. Anything still in flight is abandoned and
    /// returned so the caller can account for it.
    pub fn disconnect(&mut self) -> (Vec<u8>, Vec<u16>) {
        self.state = SessionState::Closed;
        let dropped = std::mem::take(&mut self.inflight).into_keys().collect();
        (vec![0xE0, 0x00], dropped)
    }

    /// Marks the transport as gone without sending anything.
    pub fn abort(&mut self) -> Vec<u16> {
        self.disconnect().1
    }
}
