//! Broker-side protocol logic, independent of any transport.
//!
//! The broker acknowledges QoS 1 publishes and routes every publish to
//! matching subscribers and to the ingest hook. It does not deduplicate:
//! a retransmitted publish is delivered again.

use std::collections::BTreeMap;

use log::debug;

use super::codec::{Packet, Publish, QoS, SubackReturn};
use super::topic::TopicFilter;
use crate::clock::Millis;

pub type ConnId = u64;

#[derive(Debug, Clone, Default)]
pub struct BrokerConfig {
    /// When set, CONNECT must carry exactly this token.
    pub auth_token: Option<String>,
    /// Publishes matching any of these are copied to [`BrokerOutput::hook`].
    pub hook_filters: Vec<TopicFilter>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HookMessage {
    pub conn: ConnId,
    pub client_id: String,
    pub topic: String,
    pub payload: Vec<u8>,
    pub dup: bool,
    pub received_at: Millis,
}

#[derive(Debug, Default, PartialEq, Eq)]
pub struct BrokerOutput {
    /// Packets to write back on the originating connection.
    pub responses: Vec<Packet>,
    /// Packets for other (subscriber) connections.
    pub deliveries: Vec<(ConnId, Packet)>,
    pub hook: Vec<HookMessage>,
    /// The connection must be closed after flushing `responses`.
    pub close: bool,
}

#[derive(Debug, Clone)]
struct ConnState {
    client_id: Option<String>,
    connected_at: Option<Millis>,
}

#[derive(Debug, Default, Clone)]
pub struct BrokerStats {
    pub connections: u64,
    pub publishes: u64,
    pub duplicates_seen: u64,
    pub protocol_violations: u64,
}

#[derive(Debug)]
pub struct Broker {
    config: BrokerConfig,
    conns: BTreeMap<ConnId, ConnState>,
    subscriptions: Vec<(ConnId, TopicFilter)>,
    stats: BrokerStats,
}

impl Broker {
    pub fn new(config: BrokerConfig) -> Self {
        Broker {
            config,
            conns: BTreeMap::new(),
            subscriptions: Vec::new(),
            stats: BrokerStats::default(),
        }
    }

    pub fn stats(&self) -> &BrokerStats {
        &self.stats
    }

    pub fn open(&mut self, conn: ConnId) {
        self.conns.insert(
            conn,
            ConnState {
                client_id: None,
                connected_at: None,
            },
        );
    }

    pub fn close(&mut self, conn: ConnId) {
        self.conns.remove(&conn);
        self.subscriptions.retain(|(c, _)| *c != conn);
    }

    pub fn is_open(&self, conn: ConnId) -> bool {
        self.conns.contains_key(&conn)
    }

    fn violation(&mut self, conn: ConnId, why: &str) -> BrokerOutput {
        debug!("closing connection {conn}: {why}");
        self.stats.protocol_violations += 1;
        self.close(conn);
        BrokerOutput {
            close: true,
            ..BrokerOutput::default()
        }
    }

    pub fn handle(&mut self, conn: ConnId, packet: Packet, now: Millis) -> BrokerOutput {
        let Some(state) = self.conns.get(&conn) else {
            return BrokerOutput {
                close: true,
                ..BrokerOutput::default()
            };
        };
        let connected = state.connected_at.is_some();
        let mut out = BrokerOutput::default();
        match packet {
            Packet::Connect(c) => {
                if connected {
                    return self.violation(conn, "second CONNECT");
                }
                let authorized = match &self.config.auth_token {
                    Some(expected) => c.auth_token.as_deref() == Some(expected.as_str()),
                    None => true,
                };
                out.responses.push(Packet::Connack {
                    accepted: authorized,
                });
                if !authorized {
                    self.close(conn);
                    out.close = true;
                    return out;
                }
                self.stats.connections += 1;
                if let Some(s) = self.conns.get_mut(&conn) {
                    s.client_id = Some(c.client_id);
                    s.connected_at = Some(now);
                }
            }
            _ if !connected => return self.violation(conn, "first packet is not CONNECT"),
            Packet::Publish(p) => {
                self.stats.publishes += 1;
                if p.dup {
                    self.stats.duplicates_seen += 1;
                }
                if let Some(id) = p.packet_id {
                    out.responses.push(Packet::Puback { packet_id: id });
                }
                self.route(conn, &p, now, &mut out);
            }
            Packet::Puback { .. } => {
                // Outbound deliveries are qos 0, so nothing awaits an ack.
            }
            Packet::Subscribe {
                packet_id,
                topic_filters,
            } => {
                let mut granted = Vec::with_capacity(topic_filters.len());
                for (filter, _requested) in topic_filters {
                    match TopicFilter::parse(&filter) {
                        Some(f) => {
                            if !self
                                .subscriptions
                                .iter()
                                .any(|(c, g)| *c == conn && *g == f)
                            {
                                self.subscriptions.push((conn, f));
                            }
                            granted.push(SubackReturn::Granted(QoS::AtMostOnce));
                        }
                        None => granted.push(SubackReturn::Failure),
                    }
                }
                out.responses.push(Packet::Suback { packet_id, granted });
            }
            Packet::Pingreq => out.responses.push(Packet::Pingresp),
            Packet::Disconnect => {
                self.close(conn);
                out.close = true;
            }
            Packet::Connack { .. } | Packet::Suback { .. } | Packet::Pingresp => {
                return self.violation(conn, "server-to-client packet from client");
            }
        }
        out
    }

    fn route(&self, from: ConnId, p: &Publish, now: Millis, out: &mut BrokerOutput) {
        let mut delivered_to = Vec::new();
        for (conn, filter) in &self.subscriptions {
            if filter.matches(&p.topic) && !delivered_to.contains(conn) {
                delivered_to.push(*conn);
                out.deliveries.push((
                    *conn,
                    Packet::Publish(Publish {
                        topic: p.topic.clone(),
                        payload: p.payload.clone(),
                        qos: QoS::AtMostOnce,
                        packet_id: None,
                        dup: false,
                    }),
                ));
            }
        }
        if self.config.hook_filters.iter().any(|f| f.matches(&p.topic)) {
            let client_id = self
                .conns
                .get(&from)
                .and_then(|s| s.client_id.clone())
                .unwrap_or_default();
            out.hook.push(HookMessage {
                conn: from,
                client_id,
                topic: p.topic.clone(),
                payload: p.payload.clone(),
                dup: p.dup,
                received_at: now,
            });
        }
    }
}
