//! MQTT 3.1.1 framing for the supported packet subset.
//!
//! Every packet is a fixed header (type nibble + flags, then the
//! remaining length as a base-128 varint) followed by a variable header
//! and payload. Lengths and packet ids are big-endian `u16`.

use thiserror::Error;

/// Largest value the 4-byte remaining-length varint can encode.
pub const MAX_REMAINING_LENGTH: usize = (1 << 28) - 1;

const PROTOCOL_LEVEL: u8 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum QoS {
    AtMostOnce = 0,
    AtLeastOnce = 1,
}

impl QoS {
    pub fn from_u8(v: u8) -> Option<QoS> {
        match v {
            0 => Some(QoS::AtMostOnce),
            1 => Some(QoS::AtLeastOnce),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Connect {
    pub client_id: String,
    pub keep_alive_s: u16,
    /// Opaque credential carried in the username field.
    pub auth_token: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Publish {
    pub topic: String,
    pub payload: Vec<u8>,
    pub qos: QoS,
    pub packet_id: Option<u16>,
    pub dup: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SubackReturn {
    Granted(QoS),
    Failure,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Packet {
    Connect(Connect),
    Connack {
        accepted: bool,
    },
    Publish(Publish),
    Puback {
        packet_id: u16,
    },
    Subscribe {
        packet_id: u16,
        topic_filters: Vec<(String, QoS)>,
    },
    Suback {
        packet_id: u16,
        granted: Vec<SubackReturn>,
    },
    Pingreq,
    Pingresp,
    Disconnect,
}

impl Packet {
    pub fn name(&self) -> &'static str {
        match self {
            Packet::Connect(_) => "CONNECT",
            Packet::Connack { .. } => "CONNACK",
            Packet::Publish(_) => "PUBLISH",
            Packet::Puback { .. } => "PUBACK",
            Packet::Subscribe { .. } => "SUBSCRIBE",
            Packet::Suback { .. } => "SUBACK",
            Packet::Pingreq => "PINGREQ",
            Packet::Pingresp => "PINGRESP",
            Packet::Disconnect => "DISCONNECT",
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CodecError {
    #[error("remaining length {0} exceeds 2^28-1")]
    Oversize(usize),
    #[error("remaining-length varint longer than 4 bytes")]
    MalformedVarint,
    #[error("reserved packet type {0}")]
    ReservedType(u8),
    #[error("packet type {0} is outside the supported subset")]
    Unsupported(u8),
    #[error("invalid fixed-header flags {flags:#06b} for packet type {packet_type}")]
    BadFlags { packet_type: u8, flags: u8 },
    #[error("malformed packet: {0}")]
    Malformed(&'static str),
    #[error("invalid packet: {0}")]
    Invalid(&'static str),
}

pub fn encode_remaining_length(n: usize) -> Result<Vec<u8>, CodecError> {
    if n > MAX_REMAINING_LENGTH {
        return Err(CodecError::Oversize(n));
    }
    let mut out = Vec::with_capacity(4);
    let mut x = n;
    loop {
        let mut byte = (x % 128) as u8;
        x /= 128;
        if x > 0 {
            byte |= 0x80;
        }
        out.push(byte);
        if x == 0 {
            return Ok(out);
        }
    }
}

/// Decodes a remaining-length varint. `Ok(None)` means the input ends
/// before the final byte.
pub fn decode_remaining_length(buf: &[u8]) -> Result<Option<(usize, usize)>, CodecError> {
    let mut value = 0usize;
    let mut multiplier = 1usize;
    for (i, &byte) in buf.iter().enumerate() {
        if i == 4 {
            return Err(CodecError::MalformedVarint);
        }
        value += usize::from(byte & 0x7F) * multiplier;
        if byte & 0x80 == 0 {
            return Ok(Some((value, i + 1)));
        }
        multiplier *= 128;
    }
    if buf.len() >= 4 {
        return Err(CodecError::MalformedVarint);
    }
    Ok(None)
}

fn valid_mqtt_str(s: &str) -> bool {
    s.len() <= usize::from(u16::MAX) && !s.contains('\0')
}

fn put_str(out: &mut Vec<u8>, s: &str) -> Result<(), CodecError> {
    if !valid_mqtt_str(s) {
        return Err(CodecError::Invalid("string too long or contains NUL"));
    }
    out.extend_from_slice(&(s.len() as u16).to_be_bytes());
    out.extend_from_slice(s.as_bytes());
    Ok(())
}

fn check_publish_topic(topic: &str) -> Result<(), CodecError> {
    if topic.is_empty() {
        return Err(CodecError::Invalid("empty publish topic"));
    }
    if topic.contains(['+', '#']) {
        return Err(CodecError::Invalid("wildcard in publish topic"));
    }
    Ok(())
}

fn nonzero_id(id: u16) -> Result<u16, CodecError> {
    if id == 0 {
        Err(CodecError::Invalid("packet id 0"))
    } else {
        Ok(id)
    }
}

pub fn encode(p: &Packet) -> Result<Vec<u8>, CodecError> {
    let mut body = Vec::new();
    let header: u8 = match p {
        Packet::Connect(c) => {
            put_str(&mut body, "MQTT")?;
            body.push(PROTOCOL_LEVEL);
            let mut flags = 0x02; // clean session
            if c.auth_token.is_some() {
                flags |= 0x80;
            }
            body.push(flags);
            body.extend_from_slice(&c.keep_alive_s.to_be_bytes());
            put_str(&mut body, &c.client_id)?;
            if let Some(token) = &c.auth_token {
                put_str(&mut body, token)?;
            }
            0x10
        }
        Packet::Connack { accepted } => {
            body.push(0x00);
            body.push(if *accepted { 0x00 } else { 0x05 });
            0x20
        }
        Packet::Publish(pb) => {
            check_publish_topic(&pb.topic)?;
            put_str(&mut body, &pb.topic)?;
            let mut flags = (pb.qos as u8) << 1;
            match (pb.qos, pb.packet_id) {
                (QoS::AtLeastOnce, Some(id)) => {
                    body.extend_from_slice(&nonzero_id(id)?.to_be_bytes());
                }
                (QoS::AtMostOnce, None) => {}
                _ => return Err(CodecError::Invalid("packet id present iff qos 1")),
            }
            if pb.dup {
                if pb.qos == QoS::AtMostOnce {
                    return Err(CodecError::Invalid("dup flag on qos 0 publish"));
                }
                flags |= 0x08;
            }
            body.extend_from_slice(&pb.payload);
            0x30 | flags
        }
        Packet::Puback { packet_id } => {
            body.extend_from_slice(&nonzero_id(*packet_id)?.to_be_bytes());
            0x40
        }
        Packet::Subscribe {
            packet_id,
            topic_filters,
        } => {
            if topic_filters.is_empty() {
                return Err(CodecError::Invalid("subscribe without filters"));
            }
            body.extend_from_slice(&nonzero_id(*packet_id)?.to_be_bytes());
            for (filter, qos) in topic_filters {
                if filter.is_empty() {
                    return Err(CodecError::Invalid("empty topic filter"));
                }
                put_str(&mut body, filter)?;
                body.push(*qos as u8);
            }
            0x82
        }
        Packet::Suback { packet_id, granted } => {
            if granted.is_empty() {
                return Err(CodecError::Invalid("suback without return codes"));
            }
            body.extend_from_slice(&nonzero_id(*packet_id)?.to_be_bytes());
            body.extend(granted.iter().map(|g| match g {
                SubackReturn::Granted(q) => *q as u8,
                SubackReturn::Failure => 0x80,
            }));
            0x90
        }
        Packet::Pingreq => 0xC0,
        Packet::Pingresp => 0xD0,
        Packet::Disconnect => 0xE0,
    };
    let mut out = Vec::with_capacity(body.len() + 5);
    out.push(header);
    out.extend(encode_remaining_length(body.len())?);
    out.extend(body);
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn u8(&mut self) -> Result<u8, CodecError> {
        let b = *self
            .buf
            .get(self.pos)
            .ok_or(CodecError::Malformed("truncated variable header"))?;
        self.pos += 1;
        Ok(b)
    }

    fn u16(&mut self) -> Result<u16, CodecError> {
        Ok(u16::from_be_bytes([self.u8()?, self.u8()?]))
    }

    fn bytes(&mut self, n: usize) -> Result<&'a [u8], CodecError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or(CodecError::Malformed("length field runs past packet end"))?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn string(&mut self) -> Result<String, CodecError> {
        let n = usize::from(self.u16()?);
        let raw = self.bytes(n)?;
        let s = std::str::from_utf8(raw).map_err(|_| CodecError::Malformed("invalid UTF-8"))?;
        if s.contains('\0') {
            return Err(CodecError::Malformed("NUL in string"));
        }
        Ok(s.to_string())
    }

    fn rest(&mut self) -> &'a [u8] {
        let out = &self.buf[self.pos..];
        self.pos = self.buf.len();
        out
    }

    fn done(&self) -> bool {
        self.pos == self.buf.len()
    }
}

/// Decodes one packet from the front of `buf`.
///
/// Returns `Ok(None)` when `buf` holds only a prefix of a packet; nothing
/// is consumed in that case.
pub fn decode(buf: &[u8]) -> Result<Option<(Packet, usize)>, CodecError> {
    let Some(&first) = buf.first() else {
        return Ok(None);
    };
    let packet_type = first >> 4;
    let flags = first & 0x0F;
    match packet_type {
        0 | 15 => return Err(CodecError::ReservedType(packet_type)),
        5 | 6 | 7 | 10 | 11 => return Err(CodecError::Unsupported(packet_type)),
        _ => {}
    }
    let expected_flags = match packet_type {
        3 => None,
        8 => Some(0x02),
        _ => Some(0x00),
    };
    if let Some(f) = expected_flags {
        if flags != f {
            return Err(CodecError::BadFlags { packet_type, flags });
        }
    }
    let Some((len, len_bytes)) = decode_remaining_length(&buf[1..])? else {
        return Ok(None);
    };
    let total = 1 + len_bytes + len;
    if buf.len() < total {
        return Ok(None);
    }
    let mut r = Reader {
        buf: &buf[1 + len_bytes..total],
        pos: 0,
    };
    let packet = match packet_type {
        1 => {
            if r.bytes(6)? != [0x00, 0x04, b'M', b'Q', b'T', b'T'] {
                return Err(CodecError::Malformed("protocol name is not MQTT"));
            }
            if r.u8()? != PROTOCOL_LEVEL {
                return Err(CodecError::Malformed("unsupported protocol level"));
            }
            let cflags = r.u8()?;
            if cflags & 0x01 != 0 {
                return Err(CodecError::Malformed("reserved connect flag set"));
            }
            if cflags & 0x3C != 0 {
                return Err(CodecError::Malformed("will messages are not supported"));
            }
            let has_user = cflags & 0x80 != 0;
            let has_pass = cflags & 0x40 != 0;
            if has_pass && !has_user {
                return Err(CodecError::Malformed("password flag without username"));
            }
            let keep_alive_s = r.u16()?;
            let client_id = r.string()?;
            let auth_token = if has_user { Some(r.string()?) } else { None };
            if has_pass {
                // Accepted for client compatibility; only the token authenticates.
                let n = usize::from(r.u16()?);
                r.bytes(n)?;
            }
            Packet::Connect(Connect {
                client_id,
                keep_alive_s,
                auth_token,
            })
        }
        2 => {
            let ack_flags = r.u8()?;
            if ack_flags & 0xFE != 0 {
                return Err(CodecError::Malformed("reserved connack flags"));
            }
            let code = r.u8()?;
            if code > 5 {
                return Err(CodecError::Malformed("unknown connack return code"));
            }
            Packet::Connack {
                accepted: code == 0,
            }
        }
        3 => {
            if flags & 0x01 != 0 {
                return Err(CodecError::BadFlags { packet_type, flags });
            }
            let qos = QoS::from_u8((flags >> 1) & 0x03)
                .ok_or(CodecError::BadFlags { packet_type, flags })?;
            let dup = flags & 0x08 != 0;
            if dup && qos == QoS::AtMostOnce {
                return Err(CodecError::BadFlags { packet_type, flags });
            }
            let topic = r.string()?;
            check_publish_topic(&topic).map_err(|_| CodecError::Malformed("bad publish topic"))?;
            let packet_id = match qos {
                QoS::AtLeastOnce => {
                    Some(nonzero_id(r.u16()?).map_err(|_| CodecError::Malformed("packet id 0"))?)
                }
                QoS::AtMostOnce => None,
            };
            Packet::Publish(Publish {
                topic,
                payload: r.rest().to_vec(),
                qos,
                packet_id,
                dup,
            })
        }
        4 => Packet::Puback {
            packet_id: nonzero_id(r.u16()?).map_err(|_| CodecError::Malformed("packet id 0"))?,
        },
        8 => {
            let packet_id =
                nonzero_id(r.u16()?).map_err(|_| CodecError::Malformed("packet id 0"))?;
            let mut topic_filters = Vec::new();
            while !r.done() {
                let filter = r.string()?;
                if filter.is_empty() {
                    return Err(CodecError::Malformed("empty topic filter"));
                }
                let q = r.u8()?;
                let qos = QoS::from_u8(q).ok_or(CodecError::Malformed("requested qos above 1"))?;
                topic_filters.push((filter, qos));
            }
            if topic_filters.is_empty() {
                return Err(CodecError::Malformed("subscribe without filters"));
            }
            Packet::Subscribe {
                packet_id,
                topic_filters,
            }
        }
        9 => {
            let packet_id =
                nonzero_id(r.u16()?).map_err(|_| CodecError::Malformed("packet id 0"))?;
            let granted = r
                .rest()
                .iter()
                .map(|&b| match b {
                    0x80 => Ok(SubackReturn::Failure),
                    q => QoS::from_u8(q)
                        .map(SubackReturn::Granted)
                        .ok_or(CodecError::Malformed("bad suback return code")),
                })
                .collect::<Result<Vec<_>, _>>()?;
            if granted.is_empty() {
                return Err(CodecError::Malformed("suback without return codes"));
            }
            Packet::Suback { packet_id, granted }
        }
        12 => Packet::Pingreq,
        13 => Packet::Pingresp,
        14 => Packet::Disconnect,
        _ => unreachable!("filtered above"),
    };
    if !r.done() {
        return Err(CodecError::Malformed("trailing bytes inside packet"));
    }
    Ok(Some((packet, total)))
}
