use std::collections::HashSet;

use ardueco::clock::Millis;
use ardueco::firmware::{Device, DeviceConfig, Phase, Reading, UploadResult, VirtualSd};
use ardueco::mqtt::{decode, Broker, BrokerConfig, TopicFilter};
use ardueco::nmea::{render_gga, GpsFix};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SSID: &str = "dock";
const T0: i64 = 1_590_998_400_000;

fn device(seed: u64) -> Device {
    let params = DeviceConfig::for_device("bike-7", SSID).to_json();
    let mut d = Device::new(
        VirtualSd::with_params(params),
        ChaCha8Rng::seed_from_u64(seed),
    );
    d.boot(Millis(T0));
    d
}

#[derive(Debug, Clone)]
enum Event {
    /// Advance the clock this many seconds, ticking every second.
    Ride(u8),
    /// Press the button and run an upload over a link with this drop rate.
    /// `cut_after` frames into the upload the power fails, if set.
    Upload {
        drop_pct: u8,
        cut_after: Option<u8>,
    },
    PressOutOfRange,
    Reboot,
}

fn event() -> impl Strategy<Value = Event> {
    prop_oneof![
        4 => (1u8..40).prop_map(Event::Ride),
        3 => (0u8..40, proptest::option::of(0u8..30))
            .prop_map(|(drop_pct, cut_after)| Event::Upload { drop_pct, cut_after }),
        1 => Just(Event::PressOutOfRange),
        1 => Just(Event::Reboot),
    ]
}

struct World {
    device: Device,
    broker: Broker,
    rng: ChaCha8Rng,
    now: Millis,
    conn: u64,
    delivered: Vec<String>,
}

impl World {
    fn ride(&mut self, seconds: u8) {
        for _ in 0..seconds {
            self.now = self.now + 1000;
            let gga = render_gga(&GpsFix::valid(0.0, 45.41, 11.88)).unwrap();
            self.device.tick(self.now, Some(&gga), &[400]).unwrap();
        }
    }

    fn upload(&mut self, drop_p: f64, cut_after: Option<u8>) {
        if !self.device.press_button(&[SSID]) {
            return;
        }
        self.conn += 1;
        let conn = self.conn;
        self.broker.open(conn);
        let mut frames = self.device.start_upload(self.now).unwrap().frames;
        let mut budget = cut_after.map(usize::from);
        loop {
            let mut finished = None;
            for f in std::mem::take(&mut frames) {
                if let Some(b) = budget.as_mut() {
                    if *b == 0 {
                        self.device.boot(self.now);
                        self.broker.close(conn);
                        return;
                    }
                    *b -= 1;
                }
                let (pkt, _) = decode(&f).unwrap().unwrap();
                if self.rng.random::<f64>() < drop_p {
                    continue;
                }
                let out = self.broker.handle(conn, pkt, self.now);
                for m in out.hook {
                    if m.topic.ends_with("/data") {
                        self.delivered.push(String::from_utf8(m.payload).unwrap());
                    }
                }
                for resp in out.responses {
                    if self.rng.random::<f64>() < drop_p {
                        continue;
                    }
                    let step = self.device.on_packet(&resp, self.now);
                    frames.extend(step.frames);
                    finished = finished.or(step.finished);
                }
            }
            if finished.is_none() && frames.is_empty() {
                self.now = self.now + 100;
                let step = self.device.poll_upload(self.now);
                frames.extend(step.frames);
                finished = step.finished;
            }
            if let Some(r) = finished {
                self.broker.close(conn);
                if matches!(r, UploadResult::Failed { .. }) {
                    assert_eq!(self.device.phase(), Phase::UploadError);
                }
                return;
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    /// Nothing sampled is ever lost: every permanent row is either still
    /// cached or reached the broker.
    #[test]
    fn every_reading_is_uploaded_or_cached(seed in any::<u64>(), events in proptest::collection::vec(event(), 1..25)) {
        let mut w = World {
            device: device(seed),
            broker: Broker::new(BrokerConfig {
                auth_token: None,
                hook_filters: vec![TopicFilter::parse("ardueco/#").unwrap()],
            }),
            rng: ChaCha8Rng::seed_from_u64(seed ^ 0x5eed),
            now: Millis(T0),
            conn: 0,
            delivered: Vec::new(),
        };
        let mut perm_before = 0;
        for e in events {
            match e {
                Event::Ride(s) => w.ride(s),
                Event::Upload { drop_pct, cut_after } => w.upload(f64::from(drop_pct) / 100.0, cut_after),
                Event::PressOutOfRange => {
                    prop_assert!(!w.device.press_button(&["elsewhere"]));
                }
                Event::Reboot => {
                    w.device.boot(w.now);
                }
            }
            let perm = w.device.sd().perm_lines();
            prop_assert!(perm.len() >= perm_before, "perm_log shrank");
            perm_before = perm.len();
            let cache: HashSet<&String> = w.device.sd().cache_lines().iter().collect();
            let delivered: HashSet<&String> = w.delivered.iter().collect();
            for line in perm {
                prop_assert!(cache.contains(line) || delivered.contains(line), "lost {line}");
            }
            for line in &cache {
                prop_assert!(perm.contains(line));
            }
        }
    }

    #[test]
    fn readings_round_trip(seq in any::<u32>(), t in 0.0f64..1e6, lat in -90.0f64..=90.0, lon in -180.0f64..=180.0, adc in 1u32..1023, fix in any::<bool>()) {
        let mut d = device(u64::from(seq));
        let gga = if fix {
            render_gga(&GpsFix::valid(0.0, lat, lon)).unwrap()
        } else {
            render_gga(&GpsFix::no_fix(0.0)).unwrap()
        };
        let r = d.tick(Millis(T0 + (t * 1000.0) as i64), Some(&gga), &[adc]).unwrap().reading.unwrap();
        let line = r.to_line();
        prop_assert!(!line.contains('\n'));
        prop_assert_eq!(Reading::parse_line(&line).unwrap(), r.clone());
        prop_assert_eq!(r.fix, fix);
    }

    #[test]
    fn off_grid_ticks_do_nothing(offset_ms in 1i64..5000) {
        let mut d = device(1);
        d.tick(Millis(T0), None, &[300]).unwrap();
        let before = d.state().clone();
        let out = d.tick(Millis(T0 + offset_ms), None, &[300]).unwrap();
        prop_assert!(out.reading.is_none());
        prop_assert_eq!(d.state(), &before);
        prop_assert_eq!(d.sd().perm_lines().len(), 1);
    }
}

#[test]
fn distinct_seeds_give_distinct_ride_ids() {
    let ids: HashSet<String> = (0..500)
        .map(|s| device(s).state().ride_id.clone().unwrap().to_string())
        .collect();
    assert_eq!(ids.len(), 500);
}

#[test]
fn each_boot_starts_a_new_ride() {
    let mut d = device(3);
    let mut ids = HashSet::new();
    for i in 0..50 {
        d.boot(Millis(T0 + i * 60_000));
        assert_eq!(d.state().next_seq, 0);
        ids.insert(d.state().ride_id.clone().unwrap());
    }
    assert_eq!(ids.len(), 50);
}
