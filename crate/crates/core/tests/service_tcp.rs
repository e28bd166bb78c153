use std::io::{Read, Write};
use std::net::{SocketAddr, TcpStream};
use std::path::Path;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use ardueco::clock::Millis;
use ardueco::firmware::{ChannelReading, Reading, RideId, SessionHeader};
use ardueco::ingest::service::Service;
use ardueco::ingest::{Ingest, JsonlStore, RideStatus, StoreError};
use ardueco::mqtt::{
    decode, BrokerConfig, ClientSession, Packet, QoS, SessionConfig, SessionEvent, TopicFilter,
};

struct Running {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    thread: JoinHandle<Result<Ingest<JsonlStore>, StoreError>>,
}

fn start(path: &Path) -> Running {
    let ingest = Ingest::new(JsonlStore::open(path).unwrap());
    let cfg = BrokerConfig {
        auth_token: None,
        hook_filters: vec![TopicFilter::parse("ardueco/#").unwrap()],
    };
    let svc = Service::bind("127.0.0.1:0", ingest, cfg).unwrap();
    let addr = svc.local_addr().unwrap();
    let stop = svc.shutdown_handle();
    Running {
        addr,
        stop,
        thread: thread::spawn(move || svc.run()),
    }
}

impl Running {
    fn stop(self) -> Ingest<JsonlStore> {
        self.stop.store(true, Ordering::SeqCst);
        self.thread.join().unwrap().unwrap()
    }
}

fn read_packet(stream: &mut TcpStream, buf: &mut Vec<u8>) -> Option<Packet> {
    let deadline = Instant::now() + Duration::from_secs(5);
    loop {
        if let Some((p, used)) = decode(buf).unwrap() {
            buf.drain(..used);
            return Some(p);
        }
        if Instant::now() > deadline {
            return None;
        }
        let mut chunk = [0u8; 1024];
        match stream.read(&mut chunk) {
            Ok(0) => return None,
            Ok(n) => buf.extend_from_slice(&chunk[..n]),
            Err(e)
                if matches!(
                    e.kind(),
                    std::io::ErrorKind::WouldBlock | std::io::ErrorKind::TimedOut
                ) => {}
            Err(_) => return None,
        }
    }
}

fn row(seq: u64) -> Reading {
    Reading {
        ride: RideId::from_u32(0xabad_cafe),
        seq,
        t: seq as f64 * 5.0,
        utc: chrono::DateTime::from_timestamp(1_590_998_400 + seq as i64 * 5, 0).unwrap(),
        fix: true,
        lat: Some(45.4064),
        lon: Some(11.8768),
        ch: vec![ChannelReading {
            id: 0,
            adc: 250,
            ppm: Some(1.5),
        }],
    }
}

/// Connects, sends the header and `seqs`, and waits for every puback.
fn upload(addr: SocketAddr, seqs: &[u64], count: u64) {
    let mut stream = TcpStream::connect(addr).unwrap();
    stream
        .set_read_timeout(Some(Duration::from_millis(50)))
        .unwrap();
    let mut s = ClientSession::new(SessionConfig::default());
    let mut buf = Vec::new();
    stream
        .write_all(&s.connect("bike-1", None).unwrap())
        .unwrap();
    let connack = read_packet(&mut stream, &mut buf).unwrap();
    assert_eq!(s.handle(&connack).unwrap(), SessionEvent::Connected);
    let header = SessionHeader {
        ride_id: row(0).ride,
        device_id: "bike-1".into(),
        count,
        first_seq: 0,
    };
    let now = Millis(0);
    let mut frames = vec![s
        .publish(
            "ardueco/bike-1/session",
            &serde_json::to_vec(&header).unwrap(),
            QoS::AtLeastOnce,
            now,
        )
        .unwrap()];
    for &seq in seqs {
        let line = row(seq).to_line();
        frames.push(
            s.publish(
                "ardueco/bike-1/data",
                line.as_bytes(),
                QoS::AtLeastOnce,
                now,
            )
            .unwrap(),
        );
    }
    for f in &frames {
        stream.write_all(&f.frame).unwrap();
    }
    while s.inflight_len() > 0 {
        let p = read_packet(&mut stream, &mut buf).expect("puback");
        assert!(matches!(s.handle(&p).unwrap(), SessionEvent::Acked(_)));
    }
    stream.write_all(&s.disconnect().0).unwrap();
}

#[test]
fn scripted_client_upload_is_stored_and_acked() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("store.jsonl");
    let svc = start(&path);
    upload(svc.addr, &[0, 1, 2], 3);
    let ingest = svc.stop();
    assert_eq!(ingest.records().len(), 3);
    let s = ingest.ride_completeness(&row(0).ride, "bike-1").unwrap();
    assert_eq!(s.status, RideStatus::Complete);
}

#[test]
fn restart_keeps_records_and_dedups_resends() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("store.jsonl");
    let svc = start(&path);
    upload(svc.addr, &[0, 1], 4);
    svc.stop();
    let svc = start(&path);
    // The device resends everything after a failed upload.
    upload(svc.addr, &[0, 1, 2, 3], 4);
    let ingest = svc.stop();
    assert_eq!(ingest.records().len(), 4);
    assert_eq!(ingest.stats().duplicates, 2);
    let s = ingest.ride_completeness(&row(0).ride, "bike-1").unwrap();
    assert_eq!(s.status, RideStatus::Complete);
}

#[test]
fn non_connect_first_packet_closes_the_connection() {
    let dir = tempfile::tempdir().unwrap();
    let svc = start(&dir.path().join("store.jsonl"));
    let mut stream = TcpStream::connect(svc.addr).unwrap();
    stream
        .set_read_timeout(Some(Duration::from_millis(50)))
        .unwrap();
    // PINGREQ before CONNECT.
    stream.write_all(&[0xC0, 0x00]).unwrap();
    let mut buf = Vec::new();
    assert_eq!(read_packet(&mut stream, &mut buf), None);
    // Garbage on a second connection is also dropped without a reply.
    let mut junk = TcpStream::connect(svc.addr).unwrap();
    junk.set_read_timeout(Some(Duration::from_millis(50)))
        .unwrap();
    junk.write_all(&[0x00, 0x00, 0xFF]).unwrap();
    assert_eq!(read_packet(&mut junk, &mut Vec::new()), None);
    let ingest = svc.stop();
    assert!(ingest.records().is_empty());
}
