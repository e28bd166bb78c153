use std::fmt;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Eight lowercase hex characters identifying one boot session.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RideId(String);

impl RideId {
    pub fn from_u32(v: u32) -> Self {
        RideId(format!("{v:08x}"))
    }

    pub fn parse(s: &str) -> Option<RideId> {
        let ok = s.len() == 8 && s.bytes().all(|b| matches!(b, b'0'..=b'9' | b'a'..=b'f'));
        ok.then(|| RideId(s.to_string()))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for RideId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelReading {
    pub id: u8,
    pub adc: u32,
    /// Absent when the ADC sat at either rail.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ppm: Option<f64>,
}

/// One log row: `{ride, seq, t, utc, fix, lat, lon, ch}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reading {
    pub ride: RideId,
    pub seq: u64,
    /// Seconds since boot.
    pub t: f64,
    pub utc: DateTime<Utc>,
    pub fix: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lat: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lon: Option<f64>,
    pub ch: Vec<ChannelReading>,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ReadingError {
    #[error("not a reading: {0}")]
    Syntax(String),
    #[error("ride id {0:?} is not 8 lowercase hex characters")]
    RideId(String),
    #[error("fix flag disagrees with coordinates")]
    FixCoordinates,
    #[error("coordinates out of range")]
    OutOfRange,
    #[error("non-finite or negative value in {0}")]
    BadNumber(&'static str),
}

impl Reading {
    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("reading serializes")
    }

    /// Parses and checks one JSON line (with or without the trailing LF).
    pub fn parse_line(line: &str) -> Result<Reading, ReadingError> {
        let line = line.strip_suffix('\n').unwrap_or(line);
        let value: serde_json::Value =
            serde_json::from_str(line).map_err(|e| ReadingError::Syntax(e.to_string()))?;
        if let Some(ride) = value.get("ride").and_then(|r| r.as_str()) {
            if RideId::parse(ride).is_none() {
                return Err(ReadingError::RideId(ride.to_string()));
            }
        }
        let r: Reading =
            serde_json::from_value(value).map_err(|e| ReadingError::Syntax(e.to_string()))?;
        r.check()?;
        Ok(r)
    }

    pub fn check(&self) -> Result<(), ReadingError> {
        if RideId::parse(self.ride.as_str()).is_none() {
            return Err(ReadingError::RideId(self.ride.0.clone()));
        }
        if !(self.t.is_finite() && self.t >= 0.0) {
            return Err(ReadingError::BadNumber("t"));
        }
        match (self.fix, self.lat, self.lon) {
            (true, Some(lat), Some(lon)) => {
                if !((-90.0..=90.0).contains(&lat) && (-180.0..=180.0).contains(&lon)) {
                    return Err(ReadingError::OutOfRange);
                }
            }
            (false, None, None) => {}
            _ => return Err(ReadingError::FixCoordinates),
        }
        for c in &self.ch {
            if let Some(p) = c.ppm {
                if !(p.is_finite() && p > 0.0) {
                    return Err(ReadingError::BadNumber("ppm"));
                }
            }
        }
        Ok(())
    }

    pub fn position(&self) -> Option<(f64, f64)> {
        match (self.fix, self.lat, self.lon) {
            (true, Some(lat), Some(lon)) => Some((lat, lon)),
            _ => None,
        }
    }

    /// ppm of the first channel, the one maps and grid cells use.
    pub fn primary_ppm(&self) -> Option<f64> {
        self.ch.first().and_then(|c| c.ppm)
    }
}

/// The count message that opens each upload batch.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionHeader {
    pub ride_id: RideId,
    pub device_id: String,
    /// Number of data messages that follow in this batch.
    pub count: u64,
    /// Seq of the first reading in the batch; `first_seq + count` is the
    /// number of readings the ride has produced so far.
    #[serde(default)]
    pub first_seq: u64,
}

impl SessionHeader {
    pub fn expected_total(&self) -> u64 {
        self.first_seq + self.count
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::TimeZone;

    fn sample() -> Reading {
        Reading {
            ride: RideId::from_u32(0xdead_beef),
            seq: 3,
            t: 15.0,
            utc: Utc.with_ymd_and_hms(2020, 6, 1, 8, 0, 15).unwrap(),
            fix: true,
            lat: Some(45.406_4),
            lon: Some(11.876_8),
            ch: vec![ChannelReading {
                id: 0,
                adc: 77,
                ppm: Some(2.345_678_901_234_5),
            }],
        }
    }

    #[test]
    fn line_schema() {
        let line = sample().to_line();
        assert_eq!(
            line,
            r#"{"ride":"deadbeef","seq":3,"t":15.0,"utc":"2020-06-01T08:00:15Z","fix":true,"lat":45.4064,"lon":11.8768,"ch":[{"id":0,"adc":77,"ppm":2.3456789012345}]}"#
        );
        assert_eq!(Reading::parse_line(&line).unwrap(), sample());
    }

    #[test]
    fn no_fix_omits_coordinates() {
        let mut r = sample();
        r.fix = false;
        r.lat = None;
        r.lon = None;
        let line = r.to_line();
        assert!(!line.contains("lat"));
        assert_eq!(Reading::parse_line(&line).unwrap(), r);
    }

    #[test]
    fn rejects_inconsistent_rows() {
        let mut r = sample();
        r.lat = None;
        assert_eq!(
            Reading::parse_line(&r.to_line()),
            Err(ReadingError::FixCoordinates)
        );
        let bad_ride = sample().to_line().replace("deadbeef", "DEADBEEF");
        assert!(matches!(
            Reading::parse_line(&bad_ride),
            Err(ReadingError::RideId(_))
        ));
        assert!(Reading::parse_line("{}").is_err());
        assert!(Reading::parse_line("").is_err());
    }

    #[test]
    fn ride_ids() {
        assert_eq!(RideId::from_u32(0x1a).as_str(), "0000001a");
        assert!(RideId::parse("0000001a").is_some());
        assert!(RideId::parse("0000001").is_none());
        assert!(RideId::parse("0000001g").is_none());
    }
}
