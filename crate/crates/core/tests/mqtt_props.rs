use std::collections::{BTreeSet, HashSet};

use ardueco::clock::Millis;
use ardueco::mqtt::codec::{
    decode, decode_remaining_length, encode, encode_remaining_length, Connect, Packet, Publish,
    QoS, SubackReturn, MAX_REMAINING_LENGTH,
};
use ardueco::mqtt::session::{ClientSession, SessionConfig, SessionEvent};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn topic() -> impl Strategy<Value = String> {
    "[a-z0-9]{1,8}(/[a-z0-9]{1,8}){0,3}"
}

fn packet() -> impl Strategy<Value = Packet> {
    let qos = prop_oneof![Just(QoS::AtMostOnce), Just(QoS::AtLeastOnce)];
    prop_oneof![
        (
            "[a-zA-Z0-9-]{0,23}",
            any::<u16>(),
            proptest::option::of("[ -~]{0,16}")
        )
            .prop_map(
                |(client_id, keep_alive_s, auth_token)| Packet::Connect(Connect {
                    client_id,
                    keep_alive_s,
                    auth_token,
                })
            ),
        any::<bool>().prop_map(|accepted| Packet::Connack { accepted }),
        (
            topic(),
            proptest::collection::vec(any::<u8>(), 0..300),
            any::<bool>(),
            1u16..
        )
            .prop_map(|(topic, payload, q1, id)| {
                let qos = if q1 {
                    QoS::AtLeastOnce
                } else {
                    QoS::AtMostOnce
                };
                Packet::Publish(Publish {
                    topic,
                    payload,
                    qos,
                    packet_id: q1.then_some(id),
                    dup: false,
                })
            }),
        (1u16..).prop_map(|packet_id| Packet::Puback { packet_id }),
        (
            1u16..,
            proptest::collection::vec((topic(), qos.clone()), 1..4)
        )
            .prop_map(|(packet_id, topic_filters)| Packet::Subscribe {
                packet_id,
                topic_filters
            }),
        (
            1u16..,
            proptest::collection::vec(
                prop_oneof![
                    qos.prop_map(SubackReturn::Granted),
                    Just(SubackReturn::Failure)
                ],
                1..4
            )
        )
            .prop_map(|(packet_id, granted)| Packet::Suback { packet_id, granted }),
        Just(Packet::Pingreq),
        Just(Packet::Pingresp),
        Just(Packet::Disconnect),
    ]
}

proptest! {
    #[test]
    fn packets_round_trip(p in packet()) {
        let bytes = encode(&p).unwrap();
        let (back, used) = decode(&bytes).unwrap().unwrap();
        prop_assert_eq!(used, bytes.len());
        prop_assert_eq!(back, p);
    }

    #[test]
    fn truncated_frames_ask_for_more(p in packet(), cut in any::<prop::sample::Index>()) {
        let bytes = encode(&p).unwrap();
        let n = cut.index(bytes.len());
        prop_assert_eq!(decode(&bytes[..n]), Ok(None));
    }

    #[test]
    fn random_bytes_never_panic(bytes in proptest::collection::vec(any::<u8>(), 0..64)) {
        if let Ok(Some((_, used))) = decode(&bytes) {
            prop_assert!(used <= bytes.len());
        }
    }

    #[test]
    fn concatenated_frames_decode_in_order(ps in proptest::collection::vec(packet(), 1..6)) {
        let mut stream = Vec::new();
        for p in &ps {
            stream.extend(encode(p).unwrap());
        }
        let mut rest = &stream[..];
        let mut got = Vec::new();
        while let Some((p, used)) = decode(rest).unwrap() {
            got.push(p);
            rest = &rest[used..];
        }
        prop_assert!(rest.is_empty());
        prop_assert_eq!(got, ps);
    }
}

#[test]
fn varint_boundaries() {
    for n in [
        0,
        1,
        127,
        128,
        16_383,
        16_384,
        2_097_151,
        2_097_152,
        MAX_REMAINING_LENGTH,
    ] {
        let enc = encode_remaining_length(n).unwrap();
        assert_eq!(decode_remaining_length(&enc).unwrap(), Some((n, enc.len())));
    }
    assert!(encode_remaining_length(MAX_REMAINING_LENGTH + 1).is_err());
    assert!(decode_remaining_length(&[0x80, 0x80, 0x80, 0x80, 0x01]).is_err());
}

#[test]
fn varint_every_value_below_three_bytes() {
    for n in 0..2_097_152 {
        let enc = encode_remaining_length(n).unwrap();
        let want_len = if n < 128 {
            1
        } else if n < 16_384 {
            2
        } else {
            3
        };
        assert_eq!(enc.len(), want_len, "{n}");
        assert_eq!(decode_remaining_length(&enc).unwrap(), Some((n, want_len)));
    }
}

/// Plays a session against a peer behind a link that drops each publish
/// and each ack with probability `p`. Returns the distinct payloads seen,
/// what is left in flight, and whether an id was ever reused while live.
fn lossy_delivery(seed: u64, p: f64, messages: usize) -> (BTreeSet<u16>, usize, bool) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s = ClientSession::new(SessionConfig {
        max_retries: 200,
        ..SessionConfig::default()
    });
    let mut now = Millis(0);
    s.connect("c", None).unwrap();
    s.handle(&Packet::Connack { accepted: true }).unwrap();
    let mut delivered = BTreeSet::new();
    let mut live_ids = HashSet::new();
    let mut unique_ids = true;
    let (mut sent, mut acked) = (0, 0);
    while acked < messages {
        let mut frames = Vec::new();
        while sent < messages && s.has_capacity() {
            let payload = (sent as u16).to_be_bytes();
            let out = s.publish("t", &payload, QoS::AtLeastOnce, now).unwrap();
            unique_ids &= live_ids.insert(out.packet_id.unwrap());
            frames.push(out.frame);
            sent += 1;
        }
        now = Millis(now.0 + 250);
        frames.extend(s.tick(now).retransmissions);
        for f in frames {
            let Some((Packet::Publish(publish), _)) = decode(&f).unwrap() else {
                panic!("session emitted a non-publish frame")
            };
            if rng.random::<f64>() < p {
                continue;
            }
            delivered.insert(u16::from_be_bytes([publish.payload[0], publish.payload[1]]));
            if rng.random::<f64>() < p {
                continue;
            }
            let id = publish.packet_id.unwrap();
            if let SessionEvent::Acked(id) = s.handle(&Packet::Puback { packet_id: id }).unwrap() {
                live_ids.remove(&id);
                acked += 1;
            }
        }
        assert!(now.0 < 100_000_000, "no progress");
    }
    (delivered, s.inflight_len(), unique_ids)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]
    #[test]
    fn qos1_is_at_least_once_under_loss(seed in any::<u64>(), p in 0.0f64..=0.5) {
        let n = 60;
        let (delivered, inflight, unique) = lossy_delivery(seed, p, n);
        prop_assert_eq!(delivered.len(), n);
        prop_assert_eq!(inflight, 0);
        prop_assert!(unique, "packet id reused while in flight");
    }
}
