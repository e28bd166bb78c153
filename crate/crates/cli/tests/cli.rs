use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::net::{SocketAddr, TcpStream};
use std::path::Path;
use std::process::{Command, Output, Stdio};
use std::time::{Duration, Instant};

use ardueco::clock::Millis;
use ardueco::firmware::{ChannelReading, DeviceConfig, Reading, RideId};
use ardueco::mqtt::{decode, ClientSession, Packet, QoS, SessionConfig, SessionEvent};
use serde_json::Value;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_ardueco"));
    c.env_remove("ARDUECO_STORE").env("RUST_LOG", "off");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn small_scenario(dir: &Path, n_devices: u32) -> std::path::PathBuf {
    let path = dir.join("scenario.json");
    let doc = serde_json::json!({ "seed": 5, "n_devices": n_devices, "duration_s": 600 });
    fs::write(&path, doc.to_string()).unwrap();
    path
}

#[test]
fn simulate_writes_report_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = small_scenario(dir.path(), 2);
    let mut outs = Vec::new();
    for i in 0..2 {
        let report = dir.path().join(format!("report{i}.json"));
        let geo = dir.path().join(format!("map{i}.geojson"));
        let o = run(&[
            "simulate",
            "--scenario",
            p(&scenario),
            "--out",
            p(&report),
            "--geojson",
            p(&geo),
        ]);
        assert!(o.status.success(), "{o:?}");
        assert!(stdout(&o).contains("generated"));
        outs.push((fs::read(&report).unwrap(), fs::read(&geo).unwrap()));
    }
    assert_eq!(outs[0], outs[1]);
    let report: Value = serde_json::from_slice(&outs[0].0).unwrap();
    assert_eq!(report["n_devices"], 2);
    assert_eq!(report["totals"]["stored"], report["totals"]["generated"]);
}

#[test]
fn simulate_rejects_zero_devices_without_writing() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = small_scenario(dir.path(), 0);
    let report = dir.path().join("report.json");
    let o = run(&["simulate", "--scenario", p(&scenario), "--out", p(&report)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("n_devices"));
    assert!(!report.exists());
}

#[test]
fn usage_errors_exit_two() {
    assert_eq!(run(&[]).status.code(), Some(2));
    assert_eq!(run(&["simulate"]).status.code(), Some(2));
    assert_eq!(run(&["frobnicate"]).status.code(), Some(2));
}

fn row(ride: u32, seq: u64) -> Reading {
    Reading {
        ride: RideId::from_u32(ride),
        seq,
        t: seq as f64 * 5.0,
        utc: Millis::from_secs(1_590_998_400 + seq as i64 * 5).to_utc(),
        fix: true,
        lat: Some(45.40 + seq as f64 * 1e-4),
        lon: Some(11.87 + f64::from(ride % 7) * 1e-3),
        ch: vec![ChannelReading {
            id: 0,
            adc: 300 + seq as u32,
            ppm: Some(1.0 + seq as f64),
        }],
    }
}

fn perm_log(dir: &Path, corrupt: bool) -> std::path::PathBuf {
    let mut text = String::new();
    for ride in [0x1111_1111, 0x2222_2222] {
        for seq in 0..5 {
            if corrupt && ride == 0x2222_2222 && seq == 4 {
                text.push_str("{\"ride\":\"22222222\",\"seq\":4,\"t\":20.0,\"utc\n");
                continue;
            }
            text.push_str(&row(ride, seq).to_line());
            text.push('\n');
        }
    }
    let path = dir.join("perm_log.txt");
    fs::write(&path, text).unwrap();
    path
}

#[test]
fn replay_counts_rides_and_is_idempotent() {
    let dir = tempfile::tempdir().unwrap();
    let log = perm_log(dir.path(), false);
    let store = dir.path().join("store.jsonl");
    let args = [
        "replay",
        "--perm-log",
        p(&log),
        "--store",
        p(&store),
        "--device-id",
        "bike-3",
    ];
    let first = run(&args);
    assert!(first.status.success(), "{first:?}");
    let out = stdout(&first);
    assert!(
        out.contains("stored 10 duplicates 0 quarantined 0"),
        "{out}"
    );
    assert_eq!(out.lines().filter(|l| l.starts_with("ride ")).count(), 2);
    let once = fs::read(&store).unwrap();
    let second = run(&args);
    assert!(stdout(&second).contains("stored 0 duplicates 10"));
    assert_eq!(fs::read(&store).unwrap(), once);
}

#[test]
fn replay_quarantines_a_corrupt_line_and_continues() {
    let dir = tempfile::tempdir().unwrap();
    let log = perm_log(dir.path(), true);
    let store = dir.path().join("store.jsonl");
    let o = run(&["replay", "--perm-log", p(&log), "--store", p(&store)]);
    assert!(o.status.success());
    assert!(
        stdout(&o).contains("stored 9 duplicates 0 quarantined 1"),
        "{}",
        stdout(&o)
    );
    let q = fs::read_to_string(dir.path().join("store.jsonl.quarantine.jsonl")).unwrap();
    assert_eq!(q.lines().count(), 1);
}

#[test]
fn export_and_stats_over_a_store() {
    let dir = tempfile::tempdir().unwrap();
    let log = perm_log(dir.path(), false);
    let store = dir.path().join("store.jsonl");
    assert!(
        run(&["replay", "--perm-log", p(&log), "--store", p(&store)])
            .status
            .success()
    );
    let cells = |precision: &str| -> usize {
        let o = run(&[
            "export",
            "--store",
            p(&store),
            "--geojson",
            "-",
            "--precision",
            precision,
        ]);
        assert!(o.status.success());
        let doc: Value = serde_json::from_slice(&o.stdout).unwrap();
        let f = doc["features"].as_array().unwrap();
        let points = f
            .iter()
            .filter(|x| x["geometry"]["type"] == "Point")
            .count();
        assert_eq!(points, 10);
        f.iter()
            .filter(|x| x["geometry"]["type"] == "Polygon")
            .count()
    };
    let counts: Vec<usize> = ["4", "6", "8", "10"].iter().map(|k| cells(k)).collect();
    assert!(counts.windows(2).all(|w| w[0] <= w[1]), "{counts:?}");

    let out_path = dir.path().join("map.geojson");
    let o = run(&[
        "export",
        "--store",
        p(&store),
        "--geojson",
        p(&out_path),
        "--tracks",
    ]);
    assert!(o.status.success());
    let doc: Value = serde_json::from_slice(&fs::read(&out_path).unwrap()).unwrap();
    let lines = doc["features"]
        .as_array()
        .unwrap()
        .iter()
        .filter(|x| x["geometry"]["type"] == "LineString")
        .count();
    assert_eq!(lines, 2);

    let o = bin()
        .args(["stats"])
        .env("ARDUECO_STORE", &store)
        .output()
        .unwrap();
    assert!(o.status.success());
    let text = stdout(&o);
    assert!(text.contains("11111111") && text.contains("22222222"));
    assert!(text.contains("mean_ppm"));
}

#[test]
fn empty_store_exports_an_empty_collection() {
    let dir = tempfile::tempdir().unwrap();
    let store = dir.path().join("empty.jsonl");
    let o = run(&["export", "--store", p(&store), "--geojson", "-"]);
    assert!(o.status.success());
    let doc: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(doc["type"], "FeatureCollection");
    assert_eq!(doc["features"].as_array().unwrap().len(), 0);
    assert!(run(&["stats", "--store", p(&store)]).status.success());
}

#[test]
fn validate_config_reports_fields() {
    let dir = tempfile::tempdir().unwrap();
    let good = DeviceConfig::for_device("bike-1", "dock");
    let path = dir.path().join("params.json");

    fs::write(&path, good.to_json()).unwrap();
    assert!(run(&["validate-config", "--params", p(&path)])
        .status
        .success());

    let mut v: Value = serde_json::to_value(&good).unwrap();
    v.as_object_mut().unwrap().remove("ssid");
    fs::write(&path, v.to_string()).unwrap();
    let o = run(&["validate-config", "--params", p(&path)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).contains("ssid"));

    let mut v: Value = serde_json::to_value(&good).unwrap();
    v["sample_period_s"] = Value::from("five");
    fs::write(&path, v.to_string()).unwrap();
    let o = run(&["validate-config", "--params", p(&path)]);
    assert_eq!(o.status.code(), Some(1));
    let text = stdout(&o);
    assert!(
        text.contains("sample_period_s") && text.contains("integer"),
        "{text}"
    );

    let o = run(&[
        "validate-config",
        "--params",
        p(&dir.path().join("absent.json")),
    ]);
    assert_eq!(o.status.code(), Some(1));
}

fn read_packet(stream: &mut TcpStream, buf: &mut Vec<u8>) -> Packet {
    let deadline = Instant::now() + Duration::from_secs(5);
    loop {
        if let Some((p, used)) = decode(buf).unwrap() {
            buf.drain(..used);
            return p;
        }
        assert!(Instant::now() < deadline, "no reply from service");
        let mut chunk = [0u8; 1024];
        match stream.read(&mut chunk) {
            Ok(0) => panic!("service closed the connection"),
            Ok(n) => buf.extend_from_slice(&chunk[..n]),
            Err(_) => {}
        }
    }
}

#[test]
fn serve_ingests_from_a_client_and_flushes_on_interrupt() {
    let dir = tempfile::tempdir().unwrap();
    let store = dir.path().join("store.jsonl");
    let mut child = bin()
        .args(["serve", "--port", "0", "--store", p(&store)])
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    let mut lines = BufReader::new(child.stdout.take().unwrap()).lines();
    let banner = lines.next().unwrap().unwrap();
    let addr: SocketAddr = banner
        .strip_prefix("listening on ")
        .and_then(|r| r.split_whitespace().next())
        .unwrap()
        .parse()
        .unwrap();

    let mut stream = TcpStream::connect(addr).unwrap();
    stream
        .set_read_timeout(Some(Duration::from_millis(50)))
        .unwrap();
    let mut s = ClientSession::new(SessionConfig::default());
    let mut buf = Vec::new();
    stream
        .write_all(&s.connect("bike-9", None).unwrap())
        .unwrap();
    assert_eq!(
        s.handle(&read_packet(&mut stream, &mut buf)).unwrap(),
        SessionEvent::Connected
    );
    for seq in 0..3 {
        let line = row(0x0909_0909, seq).to_line();
        let out = s
            .publish(
                "ardueco/bike-9/data",
                line.as_bytes(),
                QoS::AtLeastOnce,
                Millis(0),
            )
            .unwrap();
        stream.write_all(&out.frame).unwrap();
    }
    while s.inflight_len() > 0 {
        let p = read_packet(&mut stream, &mut buf);
        s.handle(&p).unwrap();
    }
    stream.write_all(&s.disconnect().0).unwrap();
    drop(stream);

    let status = Command::new("kill")
        .args(["-INT", &child.id().to_string()])
        .status()
        .unwrap();
    assert!(status.success());
    let rest: Vec<String> = lines.map_while(Result::ok).collect();
    assert!(child.wait().unwrap().success());
    assert_eq!(
        rest.last().map(String::as_str),
        Some("stopped with 3 records")
    );
    assert_eq!(fs::read_to_string(&store).unwrap().lines().count(), 3);

    // Restarting loads the same records.
    let mut again = bin()
        .args(["serve", "--port", "0", "--store", p(&store)])
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    let banner = BufReader::new(again.stdout.take().unwrap())
        .lines()
        .next()
        .unwrap()
        .unwrap();
    assert!(banner.ends_with("(3 records loaded)"), "{banner}");
    again.kill().unwrap();
    again.wait().unwrap();
}

#[test]
fn serve_on_a_busy_port_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let taken = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let port = taken.local_addr().unwrap().port().to_string();
    let o = run(&[
        "serve",
        "--port",
        &port,
        "--store",
        p(&dir.path().join("s.jsonl")),
    ]);
    assert_eq!(o.status.code(), Some(1));
}
