//! The device sketch as a deterministic state machine.
//!
//! `boot` reads `params.json`, assigns a ride id and opens the logs. Each
//! `tick` takes at most one sample: GPS sentence plus one ADC count per
//! channel, appended as a JSON row to both the cache and permanent logs.
//! A button press scans for the configured SSID; a successful upload
//! empties the cache, a failed one leaves it untouched.

mod config;
mod reading;
mod sd;
mod upload;

use rand::RngCore;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

pub use config::{ConfigErrors, ConfigIssue, DeviceConfig};
pub use reading::{ChannelReading, Reading, ReadingError, RideId, SessionHeader};
pub use sd::{VirtualSd, CACHE_LOG, PARAMS_FILE, PERM_LOG};
pub use upload::{BatchAudit, UploadPolicy};

use crate::clock::Millis;
use crate::mqtt::Packet;
use crate::nmea;
use crate::sensor::adc_to_ppm;
use upload::Upload;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    BootInit,
    ConfigError { reboot_at: Millis },
    Sampling,
    Scanning,
    Connecting,
    Uploading { acked: usize, total: usize },
    UploadError,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SetupLed {
    Off,
    Ok,
    Error,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NetLed {
    Off,
    InRange,
    Transmitting,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DeviceState {
    pub phase: Phase,
    pub ride_id: Option<RideId>,
    pub boot_at: Millis,
    pub next_sample_at: Millis,
    pub next_seq: u64,
    pub led_setup: SetupLed,
    pub led_net: NetLed,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FirmwareError {
    #[error("expected {expected} ADC channels, got {got}")]
    ChannelCount { expected: usize, got: usize },
    #[error("operation not valid in phase {0:?}")]
    WrongPhase(Phase),
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TickOutcome {
    pub reading: Option<Reading>,
    pub rebooted: bool,
}

/// Outcome of feeding the upload state machine.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct UploadStep {
    /// Encoded frames to put on the wire, in order.
    pub frames: Vec<Vec<u8>>,
    pub finished: Option<UploadResult>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum UploadResult {
    Completed { data_messages: usize },
    Failed { reason: String },
}

#[derive(Debug, Clone)]
pub struct Device {
    sd: VirtualSd,
    rng: ChaCha8Rng,
    config: Option<DeviceConfig>,
    state: DeviceState,
    policy: UploadPolicy,
    upload: Option<Upload>,
    audit: Vec<BatchAudit>,
    boots: u32,
}

impl Device {
    pub fn new(sd: VirtualSd, rng: ChaCha8Rng) -> Self {
        Device {
            sd,
            rng,
            config: None,
            state: DeviceState {
                phase: Phase::BootInit,
                ride_id: None,
                boot_at: Millis::ZERO,
                next_sample_at: Millis::ZERO,
                next_seq: 0,
                led_setup: SetupLed::Off,
                led_net: NetLed::Off,
            },
            policy: UploadPolicy::default(),
            upload: None,
            audit: Vec::new(),
            boots: 0,
        }
    }

    pub fn with_policy(mut self, policy: UploadPolicy) -> Self {
        self.policy = policy;
        self
    }

    pub fn state(&self) -> &DeviceState {
        &self.state
    }

    pub fn phase(&self) -> Phase {
        self.state.phase
    }

    pub fn sd(&self) -> &VirtualSd {
        &self.sd
    }

    pub fn sd_mut(&mut self) -> &mut VirtualSd {
        &mut self.sd
    }

    pub fn config(&self) -> Option<&DeviceConfig> {
        self.config.as_ref()
    }

    pub fn boots(&self) -> u32 {
        self.boots
    }

    /// Every batch this device has started uploading, oldest first.
    pub fn audit(&self) -> &[BatchAudit] {
        &self.audit
    }

    /// Runs the setup sequence. A missing or invalid `params.json` leaves
    /// the device in `ConfigError`, rebooting after the configured delay.
    pub fn boot(&mut self, now: Millis) -> &DeviceState {
        self.boots += 1;
        if let Some(up) = self.upload.take() {
            up.abandon(&mut self.audit);
        }
        self.state.phase = Phase::BootInit;
        self.state.led_net = NetLed::Off;
        self.state.led_setup = SetupLed::Off;
        // Fresh id on every boot, config or not: each boot is one ride.
        self.state.ride_id = Some(RideId::from_u32(self.rng.next_u32()));
        self.state.boot_at = now;
        self.state.next_sample_at = now;
        self.state.next_seq = 0;
        let parsed = self
            .sd
            .params
            .as_deref()
            .ok_or(())
            .and_then(|p| DeviceConfig::from_json(p).map_err(|_| ()));
        match parsed {
            Ok(cfg) => {
                self.sd.ensure_logs();
                self.config = Some(cfg);
                self.state.phase = Phase::Sampling;
                self.state.led_setup = SetupLed::Ok;
            }
            Err(()) => {
                self.config = None;
                let delay = i64::from(config::DEFAULT_REBOOT_DELAY_S) * 1000;
                self.state.phase = Phase::ConfigError {
                    reboot_at: now + delay,
                };
                self.state.led_setup = SetupLed::Error;
            }
        }
        &self.state
    }

    /// One pass of the main loop. Samples when the next slot is due; in
    /// `ConfigError` it only waits for the reboot time.
    pub fn tick(
        &mut self,
        now: Millis,
        gps_line: Option<&str>,
        adc_by_channel: &[u32],
    ) -> Result<TickOutcome, FirmwareError> {
        match self.state.phase {
            Phase::ConfigError { reboot_at } => {
                if now >= reboot_at {
                    self.boot(now);
                    return Ok(TickOutcome {
                        reading: None,
                        rebooted: true,
                    });
                }
                return Ok(TickOutcome::default());
            }
            Phase::UploadError => self.resume_sampling(now),
            Phase::Sampling => {}
            // The loop blocks while scanning or uploading.
            _ => return Ok(TickOutcome::default()),
        }
        let cfg = self.config.as_ref().expect("sampling implies config");
        if adc_by_channel.len() != cfg.channels.len() {
            return Err(FirmwareError::ChannelCount {
                expected: cfg.channels.len(),
                got: adc_by_channel.len(),
            });
        }
        if now < self.state.next_sample_at {
            return Ok(TickOutcome::default());
        }
        let fix = gps_line
            .and_then(|l| nmea::parse_fix(l).ok().flatten())
            .filter(|f| f.valid);
        let ch = cfg
            .channels
            .iter()
            .zip(adc_by_channel)
            .map(|(spec, &adc)| ChannelReading {
                id: spec.channel_id,
                adc,
                ppm: adc_to_ppm(adc, &spec.curve).ok(),
            })
            .collect();
        let reading = Reading {
            ride: self.state.ride_id.clone().expect("booted"),
            seq: self.state.next_seq,
            t: (now - self.state.boot_at) as f64 / 1000.0,
            utc: now.to_utc(),
            fix: fix.is_some(),
            lat: fix.map(|f| f.latitude),
            lon: fix.map(|f| f.longitude),
            ch,
        };
        self.sd.append_reading(&reading.to_line());
        self.state.next_seq += 1;
        self.state.next_sample_at =
            self.state.next_sample_at + i64::from(cfg.sample_period_s) * 1000;
        Ok(TickOutcome {
            reading: Some(reading),
            rebooted: false,
        })
    }

    /// Realigns the sample grid after the loop was blocked, skipping the
    /// slots that passed.
    fn resume_sampling(&mut self, now: Millis) {
        self.state.phase = Phase::Sampling;
        self.state.led_net = NetLed::Off;
        if let Some(cfg) = &self.config {
            let period = i64::from(cfg.sample_period_s) * 1000;
            let behind = now - self.state.next_sample_at;
            if behind > 0 {
                let skipped = (behind + period - 1) / period;
                self.state.next_sample_at = self.state.next_sample_at + skipped * period;
            }
        }
    }

    /// Scans for the configured network. Returns true when it is visible
    /// and the device moved to `Connecting`.
    pub fn press_button(&mut self, visible_ssids: &[&str]) -> bool {
        if !matches!(self.state.phase, Phase::Sampling | Phase::UploadError) {
            return false;
        }
        self.state.phase = Phase::Scanning;
        let ssid = self.config.as_ref().map(|c| c.ssid.as_str()).unwrap_or("");
        if visible_ssids.contains(&ssid) {
            self.state.phase = Phase::Connecting;
            self.state.led_net = NetLed::InRange;
            true
        } else {
            self.state.phase = Phase::Sampling;
            self.state.led_net = NetLed::Off;
            false
        }
    }

    /// Opens the MQTT session: returns the CONNECT frame.
    pub fn start_upload(&mut self, now: Millis) -> Result<UploadStep, FirmwareError> {
        if self.state.phase != Phase::Connecting || self.upload.is_some() {
            return Err(FirmwareError::WrongPhase(self.state.phase));
        }
        let cfg = self.config.as_ref().expect("connecting implies config");
        let ride = self.state.ride_id.as_ref().expect("booted");
        let (upload, frame) = Upload::start(
            cfg,
            self.sd.cache_lines(),
            ride,
            self.state.next_seq,
            self.policy,
            now,
        );
        self.upload = Some(upload);
        Ok(UploadStep {
            frames: vec![frame],
            finished: None,
        })
    }

    /// Feeds one packet received from the broker.
    pub fn on_packet(&mut self, packet: &Packet, now: Millis) -> UploadStep {
        let Some(up) = self.upload.as_mut() else {
            return UploadStep::default();
        };
        let step = up.on_packet(packet, now, &mut self.audit);
        self.after_step(step)
    }

    /// Drives timers: connect timeout, retransmissions, window refill.
    pub fn poll_upload(&mut self, now: Millis) -> UploadStep {
        let Some(up) = self.upload.as_mut() else {
            return UploadStep::default();
        };
        let step = up.poll(now, &mut self.audit);
        self.after_step(step)
    }

    /// The transport went away mid-upload.
    pub fn connection_lost(&mut self) -> UploadStep {
        let Some(up) = self.upload.as_mut() else {
            return UploadStep::default();
        };
        let step = up.fail("connection lost", &mut self.audit);
        self.after_step(step)
    }

    pub fn upload_in_progress(&self) -> bool {
        self.upload.is_some()
    }

    /// Earliest time the upload needs a `poll_upload` call.
    pub fn upload_deadline(&self) -> Option<Millis> {
        self.upload.as_ref().and_then(Upload::deadline)
    }

    fn after_step(&mut self, step: upload::Step) -> UploadStep {
        let upload::Step {
            frames,
            finished,
            progress,
        } = step;
        if let Some((acked, total)) = progress {
            self.state.phase = Phase::Uploading { acked, total };
            self.state.led_net = NetLed::Transmitting;
        }
        if let Some(result) = &finished {
            let up = self.upload.take().expect("finished upload exists");
            match result {
                UploadResult::Completed { .. } => {
                    debug_assert_eq!(self.sd.cache_lines().len(), up.snapshot_len());
                    self.sd.recreate_cache();
                    self.state.phase = Phase::Sampling;
                }
                UploadResult::Failed { .. } => {
                    self.state.phase = Phase::UploadError;
                }
            }
            self.state.led_net = NetLed::Off;
        }
        UploadStep { frames, finished }
    }

    pub fn led_state(&self) -> (SetupLed, NetLed) {
        led_state(&self.state)
    }
}

/// Projection of a state onto the two LEDs.
pub fn led_state(state: &DeviceState) -> (SetupLed, NetLed) {
    match state.phase {
        Phase::BootInit => (SetupLed::Off, NetLed::Off),
        Phase::ConfigError { .. } => (SetupLed::Error, NetLed::Off),
        Phase::Sampling | Phase::Scanning | Phase::UploadError => (SetupLed::Ok, NetLed::Off),
        Phase::Connecting => (SetupLed::Ok, NetLed::InRange),
        Phase::Uploading { .. } => (SetupLed::Ok, NetLed::Transmitting),
    }
}
