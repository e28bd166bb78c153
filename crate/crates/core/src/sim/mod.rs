//! Deterministic discrete-event fleet simulation.
//!
//! Each bike boots at the start of a ride, ticks its firmware once a
//! second with a rendered GGA sentence and a noisy ADC count taken from the
//! synthetic field, and presses the upload button on entering its
//! destination dock. Frames cross a lossy network to an embedded broker
//! whose hook feeds an in-memory ingest instance.
//!
//! Events are ordered by (time, insertion sequence), and every random
//! stream is derived from the scenario seed, so a run is a pure function of
//! its [`SimConfig`].

mod config;
mod energy;
mod field;
mod mobility;
mod network;
mod report;

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use config::{LatencyBounds, MobilityTrace, SimConfig, TripGenerator, WifiZone, FLEET_SSID};
pub use energy::{energy_account, EnergyAccount, EnergyProfile};
pub use field::{field_sample, PollutionField, Source};
pub use mobility::{random_trip, Path};
pub use network::{Direction, Network, NetworkStats};
pub use report::{AuditSummary, AuditViolation, DeviceReport, SimReport, Totals};

use crate::clock::Millis;
use crate::firmware::{
    ConfigErrors, Device, DeviceConfig, RideId, UploadResult, UploadStep, VirtualSd,
};
use crate::geo::{distance_m, LatLon};
use crate::ingest::{Ingest, MemoryStore};
use crate::mqtt::{decode, encode, Broker, BrokerConfig, ConnId, TopicFilter};
use crate::nmea::{render_gga, GpsFix};
use crate::sensor::{sample_with_noise, ChannelSpec};

const POLL_MS: i64 = 100;
const TICK_MS: i64 = 1000;

/// What the field really was where and when a reading was taken.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub device_id: String,
    pub ride: RideId,
    pub seq: u64,
    pub position: LatLon,
    pub ppm: f64,
    pub adc: u32,
}

pub struct SimOutcome {
    pub report: SimReport,
    pub ingest: Ingest<MemoryStore>,
    pub devices: Vec<Device>,
    pub truth: Vec<GroundTruth>,
}

#[derive(Debug)]
enum Ev {
    TripStart(usize),
    Tick(usize),
    Press(usize),
    Poll(usize),
    ToBroker {
        conn: ConnId,
        frame: Vec<u8>,
    },
    ToDevice {
        dev: usize,
        conn: ConnId,
        frame: Vec<u8>,
    },
}

struct Scheduled {
    at: Millis,
    seq: u64,
    ev: Ev,
}

impl PartialEq for Scheduled {
    fn eq(&self, other: &Self) -> bool {
        (self.at, self.seq) == (other.at, other.seq)
    }
}
impl Eq for Scheduled {}
impl PartialOrd for Scheduled {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Scheduled {
    // Reversed: BinaryHeap is a max-heap.
    fn cmp(&self, other: &Self) -> Ordering {
        (other.at, other.seq).cmp(&(self.at, self.seq))
    }
}

struct Queue {
    heap: BinaryHeap<Scheduled>,
    seq: u64,
}

impl Queue {
    fn push(&mut self, at: Millis, ev: Ev) {
        self.seq += 1;
        self.heap.push(Scheduled {
            at,
            seq: self.seq,
            ev,
        });
    }
}

struct Trip {
    path: Path,
    dest: usize,
    started: Millis,
    left_dest: bool,
}

struct Bike {
    id: String,
    fw: Device,
    trip_rng: ChaCha8Rng,
    noise_rng: ChaCha8Rng,
    zone: usize,
    pos: LatLon,
    trip: Option<Trip>,
    conn: Option<ConnId>,
    active: bool,
    since: Millis,
    active_ms: i64,
    idle_ms: i64,
    depleted: bool,
    trace_done: bool,
    rides: u64,
    generated: u64,
    uploads_started: u64,
    uploads_completed: u64,
    uploads_failed: u64,
}

impl Bike {
    fn set_active(&mut self, now: Millis, active: bool) {
        let spent = now - self.since;
        if self.active {
            self.active_ms += spent;
        } else {
            self.idle_ms += spent;
        }
        self.active = active;
        self.since = now;
    }

    fn energy(&self, profile: &EnergyProfile, now: Millis) -> EnergyAccount {
        let spent = now - self.since;
        let (a, i) = if self.active {
            (self.active_ms + spent, self.idle_ms)
        } else {
            (self.active_ms, self.idle_ms + spent)
        };
        energy_account(profile, a as f64 / 1000.0, i as f64 / 1000.0)
    }
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

struct World<'a> {
    cfg: &'a SimConfig,
    bikes: Vec<Bike>,
    queue: Queue,
    network: Network,
    broker: Broker,
    ingest: Ingest<MemoryStore>,
    truth: Vec<GroundTruth>,
    next_conn: ConnId,
    horizon: Millis,
    trips_until: Millis,
    t0: Millis,
}

impl World<'_> {
    fn sim_seconds(&self, now: Millis) -> f64 {
        (now - self.t0) as f64 / 1000.0
    }

    fn send(&mut self, conn: ConnId, frames: Vec<Vec<u8>>, now: Millis) {
        for frame in frames {
            if let Some(at) = self.network.deliver(conn, Direction::ToBroker, now) {
                self.queue.push(at, Ev::ToBroker { conn, frame });
            }
        }
    }

    fn trip_start(&mut self, d: usize, now: Millis) {
        if now >= self.trips_until || self.bikes[d].depleted || self.bikes[d].trace_done {
            return;
        }
        let cfg = self.cfg;
        let b = &mut self.bikes[d];
        let (path, dest) = if cfg.traces.is_empty() {
            random_trip(&cfg.zones, b.zone, &cfg.trips, &mut b.trip_rng)
        } else {
            let t = &cfg.traces[d % cfg.traces.len()];
            b.trace_done = true;
            let dest = cfg
                .zones
                .iter()
                .position(|z| z.zone_id == t.end_zone)
                .expect("validated");
            (Path::new(t.waypoints.clone(), t.speed_mps), dest)
        };
        b.pos = path.position_at(0.0);
        b.trip = Some(Trip {
            path,
            dest,
            started: now,
            left_dest: false,
        });
        b.fw.boot(now);
        b.rides += 1;
        b.set_active(now, true);
        self.queue.push(now, Ev::Tick(d));
    }

    fn tick(&mut self, d: usize, now: Millis) {
        let t_s = self.sim_seconds(now);
        let cfg = self.cfg;
        let b = &mut self.bikes[d];
        if b.depleted {
            return;
        }
        if b.energy(&cfg.energy, now).depleted {
            b.depleted = true;
            b.trip = None;
            b.set_active(now, false);
            return;
        }
        let Some(trip) = b.trip.as_mut() else { return };
        let elapsed = (now - trip.started) as f64 / 1000.0;
        let pos = trip.path.position_at(elapsed);
        b.pos = pos;
        let dest = &cfg.zones[trip.dest];
        let inside = distance_m(pos, dest.center) <= dest.radius_m;
        if !inside {
            trip.left_dest = true;
        }
        if inside && (trip.left_dest || elapsed >= trip.path.duration_s()) {
            b.zone = trip.dest;
            b.trip = None;
            self.queue.push(now, Ev::Press(d));
            return;
        }
        let tod = now.to_utc().timestamp_millis().rem_euclid(86_400_000) as f64 / 1000.0;
        let fix = if elapsed < f64::from(cfg.gps_warmup_s) {
            GpsFix::no_fix(tod)
        } else {
            GpsFix::valid(tod, pos.lat, pos.lon)
        };
        let line = render_gga(&fix).expect("positions stay in range");
        let ppm = field_sample(&cfg.field, pos.lat, pos.lon, t_s);
        let adc = sample_with_noise(ppm, &cfg.sensor, cfg.noise_sd, &mut b.noise_rng);
        let out =
            b.fw.tick(now, Some(&line), &[adc])
                .expect("one channel configured");
        if let Some(r) = out.reading {
            b.generated += 1;
            self.truth.push(GroundTruth {
                device_id: b.id.clone(),
                ride: r.ride,
                seq: r.seq,
                position: pos,
                ppm,
                adc,
            });
        }
        self.queue.push(now + TICK_MS, Ev::Tick(d));
    }

    fn press(&mut self, d: usize, now: Millis) {
        let cfg = self.cfg;
        let b = &mut self.bikes[d];
        if b.depleted || b.conn.is_some() || b.trip.is_some() {
            return;
        }
        let visible: Vec<&str> = cfg
            .zones
            .iter()
            .filter(|z| distance_m(b.pos, z.center) <= z.radius_m)
            .map(|z| z.ssid.as_str())
            .collect();
        if !b.fw.press_button(&visible) {
            self.queue
                .push(now + i64::from(cfg.upload_retry_s) * 1000, Ev::Press(d));
            return;
        }
        let conn = self.next_conn;
        self.next_conn += 1;
        self.broker.open(conn);
        b.conn = Some(conn);
        b.uploads_started += 1;
        let step = b.fw.start_upload(now).expect("connecting after a press");
        self.send(conn, step.frames, now);
        self.queue.push(now + POLL_MS, Ev::Poll(d));
    }

    fn poll(&mut self, d: usize, now: Millis) {
        let Some(conn) = self.bikes[d].conn else {
            return;
        };
        let step = self.bikes[d].fw.poll_upload(now);
        if !self.after_step(d, conn, step, now) {
            self.queue.push(now + POLL_MS, Ev::Poll(d));
        }
    }

    /// Returns true when the upload finished.
    fn after_step(&mut self, d: usize, conn: ConnId, step: UploadStep, now: Millis) -> bool {
        self.send(conn, step.frames, now);
        let Some(result) = step.finished else {
            return false;
        };
        let cfg = self.cfg;
        let b = &mut self.bikes[d];
        b.conn = None;
        match result {
            UploadResult::Completed { .. } => {
                b.uploads_completed += 1;
                b.set_active(now, false);
                let dwell = b
                    .trip_rng
                    .random_range(cfg.trips.dwell_min_s..=cfg.trips.dwell_max_s);
                self.queue
                    .push(now + i64::from(dwell) * 1000, Ev::TripStart(d));
            }
            UploadResult::Failed { .. } => {
                b.uploads_failed += 1;
                // The device gave up on the connection; so does the server.
                self.broker.close(conn);
                self.queue
                    .push(now + i64::from(cfg.upload_retry_s) * 1000, Ev::Press(d));
            }
        }
        true
    }

    fn arrive_at_broker(&mut self, conn: ConnId, frame: &[u8], now: Millis) {
        let (packet, _) = decode(frame)
            .expect("device frames decode")
            .expect("frames are whole");
        let out = self.broker.handle(conn, packet, now);
        for m in out.hook {
            self.ingest
                .on_message(&m.topic, &m.payload, m.received_at)
                .expect("memory store cannot fail");
        }
        let dev = self.bikes.iter().position(|b| b.conn == Some(conn));
        for p in out.responses {
            let Some(dev) = dev else { continue };
            if let Some(at) = self.network.deliver(conn, Direction::ToDevice, now) {
                let frame = encode(&p).expect("broker packets encode");
                self.queue.push(at, Ev::ToDevice { dev, conn, frame });
            }
        }
    }

    fn arrive_at_device(&mut self, d: usize, conn: ConnId, frame: &[u8], now: Millis) {
        if self.bikes[d].conn != Some(conn) {
            return;
        }
        let (packet, _) = decode(frame)
            .expect("broker frames decode")
            .expect("frames are whole");
        let step = self.bikes[d].fw.on_packet(&packet, now);
        self.after_step(d, conn, step, now);
    }
}

/// Runs a scenario to completion. Rides still docking or uploading at
/// `duration_s` get up to `drain_s` more seconds.
pub fn run_sim(cfg: &SimConfig) -> Result<SimOutcome, ConfigErrors> {
    cfg.validate()?;
    let t0 = Millis::from_utc(cfg.start_utc);
    let mut layout = stream(cfg.seed, 0);
    let mut bikes = Vec::with_capacity(cfg.n_devices as usize);
    let mut queue = Queue {
        heap: BinaryHeap::new(),
        seq: 0,
    };
    for i in 0..cfg.n_devices as usize {
        let id = format!("bike-{i:02}");
        let mut dc = DeviceConfig::for_device(&id, FLEET_SSID);
        dc.sample_period_s = cfg.sample_period_s;
        dc.qos = cfg.qos;
        dc.channels = vec![ChannelSpec {
            curve: cfg.sensor,
            ..ChannelSpec::co(0)
        }];
        let fw = Device::new(
            VirtualSd::with_params(dc.to_json()),
            stream(cfg.seed, 3_000_000 + i as u64),
        );
        let zone = if cfg.traces.is_empty() {
            i % cfg.zones.len()
        } else {
            let t = &cfg.traces[i % cfg.traces.len()];
            cfg.zones
                .iter()
                .position(|z| z.zone_id == t.start_zone)
                .expect("validated")
        };
        let start = layout.random_range(0..=i64::from(cfg.trips.start_spread_s) * 1000);
        queue.push(t0 + start, Ev::TripStart(i));
        bikes.push(Bike {
            id,
            fw,
            trip_rng: stream(cfg.seed, 1_000_000 + i as u64),
            noise_rng: stream(cfg.seed, 2_000_000 + i as u64),
            zone,
            pos: cfg.zones[zone].center,
            trip: None,
            conn: None,
            active: false,
            since: t0,
            active_ms: 0,
            idle_ms: 0,
            depleted: false,
            trace_done: false,
            rides: 0,
            generated: 0,
            uploads_started: 0,
            uploads_completed: 0,
            uploads_failed: 0,
        });
    }
    let duration_ms = cfg.duration_s as i64 * 1000;
    let mut world = World {
        cfg,
        bikes,
        queue,
        network: Network::new(cfg.drop_probability, cfg.latency_ms, stream(cfg.seed, 4)),
        broker: Broker::new(BrokerConfig {
            auth_token: None,
            hook_filters: vec![TopicFilter::parse("ardueco/#").expect("valid filter")],
        }),
        ingest: Ingest::new(MemoryStore::new()),
        truth: Vec::new(),
        next_conn: 1,
        horizon: t0 + duration_ms + cfg.drain_s as i64 * 1000,
        trips_until: t0 + duration_ms,
        t0,
    };
    let mut now = t0;
    while let Some(s) = world.queue.heap.pop() {
        if s.at > world.horizon {
            break;
        }
        now = s.at;
        match s.ev {
            Ev::TripStart(d) => world.trip_start(d, now),
            Ev::Tick(d) => world.tick(d, now),
            Ev::Press(d) => world.press(d, now),
            Ev::Poll(d) => world.poll(d, now),
            Ev::ToBroker { conn, frame } => world.arrive_at_broker(conn, &frame, now),
            Ev::ToDevice { dev, conn, frame } => world.arrive_at_device(dev, conn, &frame, now),
        }
    }
    let end = now.max(world.trips_until);
    let report = report::build(&world, end);
    Ok(SimOutcome {
        report,
        ingest: world.ingest,
        devices: world.bikes.into_iter().map(|b| b.fw).collect(),
        truth: world.truth,
    })
}
