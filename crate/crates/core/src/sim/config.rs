//! Scenario description. Every key is optional in a scenario file; missing
//! ones take the defaults of [`SimConfig::default`].

use chrono::{DateTime, TimeZone, Utc};
use serde::{Deserialize, Serialize};

use super::energy::EnergyProfile;
use super::field::{PollutionField, Source};
use crate::firmware::{ConfigErrors, ConfigIssue};
use crate::geo::LatLon;
use crate::sensor::SensorCurve;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WifiZone {
    pub zone_id: String,
    pub ssid: String,
    pub center: LatLon,
    pub radius_m: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MobilityTrace {
    pub waypoints: Vec<LatLon>,
    pub speed_mps: f64,
    pub start_zone: String,
    pub end_zone: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatencyBounds {
    pub min: u32,
    pub max: u32,
}

/// Random-waypoint trips between dock zones, used when no explicit traces
/// are given.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TripGenerator {
    pub speed_min_mps: f64,
    pub speed_max_mps: f64,
    /// Intermediate waypoints per trip, inclusive range.
    pub waypoints_min: u32,
    pub waypoints_max: u32,
    /// Waypoints are drawn inside the zones' bounding box grown by this.
    pub area_margin_m: f64,
    /// Parked time between trips, inclusive range.
    pub dwell_min_s: u32,
    pub dwell_max_s: u32,
    /// Latest first departure, from simulation start.
    pub start_spread_s: u32,
}

impl Default for TripGenerator {
    fn default() -> Self {
        TripGenerator {
            speed_min_mps: 3.0,
            speed_max_mps: 6.0,
            waypoints_min: 1,
            waypoints_max: 3,
            area_margin_m: 400.0,
            dwell_min_s: 60,
            dwell_max_s: 300,
            start_spread_s: 120,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub seed: u64,
    pub n_devices: u32,
    /// No trip starts after this.
    pub duration_s: u64,
    /// Safety cap on the time after `duration_s` given to rides still out
    /// and uploads still running. The run normally ends well before it.
    pub drain_s: u64,
    pub drop_probability: f64,
    pub latency_ms: LatencyBounds,
    /// Gaussian sensor noise, in ADC counts.
    pub noise_sd: f64,
    pub sample_period_s: u32,
    pub qos: u8,
    /// Seconds after each boot before the receiver reports a fix.
    pub gps_warmup_s: u32,
    /// Wait before pressing the button again after a failed upload.
    pub upload_retry_s: u32,
    pub start_utc: DateTime<Utc>,
    pub style_seed: u64,
    pub sensor: SensorCurve,
    pub field: PollutionField,
    pub zones: Vec<WifiZone>,
    /// When non-empty, device `i` rides `traces[i % len]` once.
    pub traces: Vec<MobilityTrace>,
    pub trips: TripGenerator,
    pub energy: EnergyProfile,
}

pub const FLEET_SSID: &str = "ardueco-fleet";

impl Default for SimConfig {
    fn default() -> Self {
        let zone = |id: &str, lat, lon| WifiZone {
            zone_id: id.to_string(),
            ssid: FLEET_SSID.to_string(),
            center: LatLon::new(lat, lon),
            radius_m: 60.0,
        };
        SimConfig {
            seed: 1,
            n_devices: 10,
            duration_s: 3600,
            drain_s: 7200,
            drop_probability: 0.0,
            latency_ms: LatencyBounds { min: 20, max: 150 },
            noise_sd: 2.0,
            sample_period_s: 5,
            qos: 1,
            gps_warmup_s: 10,
            upload_retry_s: 10,
            start_utc: Utc.with_ymd_and_hms(2020, 6, 1, 8, 0, 0).unwrap(),
            style_seed: 0,
            sensor: SensorCurve::default(),
            field: PollutionField {
                background_ppm: 1.2,
                sources: vec![
                    Source {
                        lat: 45.4078,
                        lon: 11.8734,
                        amplitude_ppm: 12.0,
                        sigma_m: 250.0,
                        profile: Vec::new(),
                    },
                    Source {
                        lat: 45.4012,
                        lon: 11.8810,
                        amplitude_ppm: 6.0,
                        sigma_m: 400.0,
                        profile: Vec::new(),
                    },
                ],
            },
            zones: vec![
                zone("stazione", 45.4176, 11.8806),
                zone("prato", 45.3983, 11.8768),
                zone("portello", 45.4093, 11.8896),
            ],
            traces: Vec::new(),
            trips: TripGenerator::default(),
            energy: EnergyProfile::default(),
        }
    }
}

impl SimConfig {
    pub fn from_json(text: &str) -> Result<SimConfig, ConfigErrors> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: SimConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let field = if path == "." {
                "<scenario>".to_string()
            } else {
                path
            };
            ConfigErrors(vec![ConfigIssue::new(field, e.into_inner().to_string())])
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigErrors> {
        let mut issues = Vec::new();
        let mut bad = |field: &str, msg: String| issues.push(ConfigIssue::new(field, msg));
        if self.n_devices < 1 {
            bad("n_devices", "must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.drop_probability) {
            bad(
                "drop_probability",
                format!("must be in [0, 1), got {}", self.drop_probability),
            );
        }
        if self.latency_ms.min > self.latency_ms.max {
            bad("latency_ms", "min exceeds max".into());
        }
        if !(self.noise_sd.is_finite() && self.noise_sd >= 0.0) {
            bad("noise_sd", "must be a non-negative number".into());
        }
        if self.sample_period_s == 0 {
            bad("sample_period_s", "must be positive".into());
        }
        if self.qos > 1 {
            bad("qos", format!("must be 0 or 1, got {}", self.qos));
        }
        if let Err(e) = self.sensor.validate() {
            bad("sensor", e.to_string());
        }
        if let Err(msg) = self.field.validate() {
            bad("field", msg);
        }
        if self.zones.is_empty() {
            bad("zones", "at least one zone is required".into());
        }
        for (i, z) in self.zones.iter().enumerate() {
            if !(z.radius_m.is_finite() && z.radius_m > 0.0) {
                bad(&format!("zones[{i}].radius_m"), "must be positive".into());
            }
            if !z.center.in_bounds() {
                bad(
                    &format!("zones[{i}].center"),
                    "coordinates out of range".into(),
                );
            }
            if self.zones[..i].iter().any(|o| o.zone_id == z.zone_id) {
                bad(
                    &format!("zones[{i}].zone_id"),
                    format!("duplicate id {:?}", z.zone_id),
                );
            }
        }
        let known = |id: &str| self.zones.iter().any(|z| z.zone_id == id);
        for (i, t) in self.traces.iter().enumerate() {
            if t.waypoints.len() < 2 {
                bad(
                    &format!("traces[{i}].waypoints"),
                    "needs at least 2 waypoints".into(),
                );
            }
            if t.waypoints.iter().any(|w| !w.in_bounds()) {
                bad(
                    &format!("traces[{i}].waypoints"),
                    "coordinates out of range".into(),
                );
            }
            if !(t.speed_mps.is_finite() && t.speed_mps > 0.0) {
                bad(&format!("traces[{i}].speed_mps"), "must be positive".into());
            }
            for (key, zone) in [("start_zone", &t.start_zone), ("end_zone", &t.end_zone)] {
                if !known(zone) {
                    bad(
                        &format!("traces[{i}].{key}"),
                        format!("unknown zone {zone:?}"),
                    );
                }
            }
        }
        let g = &self.trips;
        if !(g.speed_min_mps > 0.0
            && g.speed_min_mps <= g.speed_max_mps
            && g.speed_max_mps.is_finite())
        {
            bad(
                "trips.speed_min_mps",
                "need 0 < speed_min_mps <= speed_max_mps".into(),
            );
        }
        if g.waypoints_min > g.waypoints_max {
            bad("trips.waypoints_min", "exceeds waypoints_max".into());
        }
        if g.dwell_min_s > g.dwell_max_s {
            bad("trips.dwell_min_s", "exceeds dwell_max_s".into());
        }
        if !(g.area_margin_m.is_finite() && g.area_margin_m >= 0.0) {
            bad("trips.area_margin_m", "must be non-negative".into());
        }
        if let Err((field, msg)) = self.energy.validate() {
            bad(&format!("energy.{field}"), msg);
        }
        if issues.is_empty() {
            Ok(())
        } else {
            Err(ConfigErrors(issues))
        }
    }
}
