//! NMEA-0183 sentence framing, checksum validation and GGA/RMC fix
//! extraction, plus GGA rendering for the simulator's GPS feed.

use std::fmt::Write as _;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NmeaError {
    #[error("malformed frame: {0}")]
    MalformedFrame(&'static str),
    #[error("checksum mismatch: sentence says {declared:02X}, payload is {computed:02X}")]
    ChecksumMismatch { declared: u8, computed: u8 },
    #[error("field {index} ({value:?}) is not a valid {what}")]
    BadField {
        index: usize,
        value: String,
        what: &'static str,
    },
    #[error("sentence kind {0} carries no fix")]
    NotAFix(String),
    #[error("coordinate out of range: lat {lat}, lon {lon}")]
    OutOfRange { lat: f64, lon: f64 },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SentenceKind {
    Gga,
    Rmc,
    /// Any other sentence type, kept by its 3-letter (or vendor) tag.
    Other(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawSentence {
    pub talker: String,
    pub kind: SentenceKind,
    /// Data fields after the address field. Empty fields are preserved.
    pub fields: Vec<String>,
    pub checksum: u8,
}

/// A decoded position. When `valid` is false the coordinates carry no
/// meaning and must not be used.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GpsFix {
    pub utc_time: f64,
    pub latitude: f64,
    pub longitude: f64,
    pub quality: u8,
    pub satellites: u8,
    pub valid: bool,
}

impl GpsFix {
    pub fn valid(utc_time: f64, latitude: f64, longitude: f64) -> Self {
        GpsFix {
            utc_time,
            latitude,
            longitude,
            quality: 1,
            satellites: 8,
            valid: true,
        }
    }

    pub fn no_fix(utc_time: f64) -> Self {
        GpsFix {
            utc_time,
            latitude: 0.0,
            longitude: 0.0,
            quality: 0,
            satellites: 0,
            valid: false,
        }
    }
}

fn xor_bytes(payload: &[u8]) -> u8 {
    payload.iter().fold(0u8, |acc, b| acc ^ b)
}

/// Splits a line into `(payload, declared checksum)`.
fn split_frame(line: &str) -> Result<(&str, u8), NmeaError> {
    let line = line.trim_end_matches(['\r', '\n']);
    let body = line
        .strip_prefix('$')
        .ok_or(NmeaError::MalformedFrame("missing leading '$'"))?;
    let star = body
        .rfind('*')
        .ok_or(NmeaError::MalformedFrame("missing '*HH' checksum suffix"))?;
    let (payload, suffix) = (&body[..star], &body[star + 1..]);
    if suffix.len() != 2 || !suffix.bytes().all(|b| b.is_ascii_hexdigit()) {
        return Err(NmeaError::MalformedFrame("checksum is not two hex digits"));
    }
    if !payload.is_ascii() {
        return Err(NmeaError::MalformedFrame("non-ASCII payload"));
    }
    let declared = u8::from_str_radix(suffix, 16)
        .map_err(|_| NmeaError::MalformedFrame("checksum is not two hex digits"))?;
    Ok((payload, declared))
}

/// True iff the XOR of the bytes between `$` and `*` equals the trailing
/// hex pair. A line without that framing is an error, not `false`.
pub fn verify_checksum(line: &str) -> Result<bool, NmeaError> {
    let (payload, declared) = split_frame(line)?;
    Ok(xor_bytes(payload.as_bytes()) == declared)
}

pub fn parse_sentence(line: &str) -> Result<RawSentence, NmeaError> {
    let (payload, declared) = split_frame(line)?;
    let computed = xor_bytes(payload.as_bytes());
    if computed != declared {
        return Err(NmeaError::ChecksumMismatch { declared, computed });
    }
    let mut parts = payload.split(',');
    let address = parts.next().unwrap_or_default();
    if address.len() < 3 || !address.bytes().all(|b| b.is_ascii_alphanumeric()) {
        return Err(NmeaError::MalformedFrame("bad address field"));
    }
    let (talker, tag) = if let Some(rest) = address.strip_prefix('P') {
        // Proprietary: 'P' plus a vendor mnemonic, no standard talker.
        (&address[..2], rest)
    } else {
        address.split_at(2)
    };
    let kind = match tag {
        "GGA" => SentenceKind::Gga,
        "RMC" => SentenceKind::Rmc,
        other => SentenceKind::Other(other.to_string()),
    };
    Ok(RawSentence {
        talker: talker.to_string(),
        kind,
        fields: parts.map(str::to_string).collect(),
        checksum: declared,
    })
}

fn field(s: &RawSentence, index: usize) -> &str {
    s.fields.get(index).map(String::as_str).unwrap_or("")
}

fn parse_utc(value: &str, index: usize) -> Result<f64, NmeaError> {
    if value.is_empty() {
        return Ok(0.0);
    }
    let bad = || NmeaError::BadField {
        index,
        value: value.to_string(),
        what: "hhmmss time",
    };
    if value.len() < 6 || !value.as_bytes()[..6].iter().all(u8::is_ascii_digit) {
        return Err(bad());
    }
    let h: f64 = value[0..2].parse().map_err(|_| bad())?;
    let m: f64 = value[2..4].parse().map_err(|_| bad())?;
    let s: f64 = value[4..].parse().map_err(|_| bad())?;
    if h >= 24.0 || m >= 60.0 || s >= 61.0 {
        return Err(bad());
    }
    Ok(h * 3600.0 + m * 60.0 + s)
}

/// `ddmm.mmmm` / `dddmm.mmmm` plus hemisphere letter into signed degrees.
fn parse_coord(value: &str, hemi: &str, deg_digits: usize, index: usize) -> Result<f64, NmeaError> {
    let bad = |what| NmeaError::BadField {
        index,
        value: value.to_string(),
        what,
    };
    if value.len() < deg_digits + 2
        || !value.as_bytes()[..deg_digits]
            .iter()
            .all(u8::is_ascii_digit)
    {
        return Err(bad("coordinate"));
    }
    let degrees: f64 = value[..deg_digits].parse().map_err(|_| bad("coordinate"))?;
    let minutes: f64 = value[deg_digits..].parse().map_err(|_| bad("coordinate"))?;
    if !(0.0..60.0).contains(&minutes) {
        return Err(bad("coordinate"));
    }
    let magnitude = degrees + minutes / 60.0;
    let (positive, negative) = if deg_digits == 2 {
        ("N", "S")
    } else {
        ("E", "W")
    };
    match hemi {
        h if h == positive => Ok(magnitude),
        h if h == negative => Ok(-magnitude),
        _ => Err(NmeaError::BadField {
            index: index + 1,
            value: hemi.to_string(),
            what: "hemisphere letter",
        }),
    }
}

fn parse_position(
    s: &RawSentence,
    lat_index: usize,
    required: bool,
) -> Result<Option<(f64, f64)>, NmeaError> {
    let (lat, lat_h) = (field(s, lat_index), field(s, lat_index + 1));
    let (lon, lon_h) = (field(s, lat_index + 2), field(s, lat_index + 3));
    if !required && lat.is_empty() && lon.is_empty() {
        return Ok(None);
    }
    let latitude = parse_coord(lat, lat_h, 2, lat_index)?;
    let longitude = parse_coord(lon, lon_h, 3, lat_index + 2)?;
    if !(-90.0..=90.0).contains(&latitude) || !(-180.0..=180.0).contains(&longitude) {
        return Err(NmeaError::OutOfRange {
            lat: latitude,
            lon: longitude,
        });
    }
    Ok(Some((latitude, longitude)))
}

/// Extracts a position from GGA or RMC. Other kinds yield `Ok(None)`.
///
/// A sentence that reports no fix (GGA quality 0, RMC status `V`) decodes
/// to `valid = false`; its coordinate fields may be empty.
pub fn extract_fix(s: &RawSentence) -> Result<Option<GpsFix>, NmeaError> {
    match s.kind {
        SentenceKind::Gga => {
            let utc_time = parse_utc(field(s, 0), 0)?;
            let quality_str = field(s, 5);
            let quality: u8 = if quality_str.is_empty() {
                0
            } else {
                quality_str.parse().map_err(|_| NmeaError::BadField {
                    index: 5,
                    value: quality_str.to_string(),
                    what: "fix quality",
                })?
            };
            let sats_str = field(s, 6);
            let satellites: u8 = if sats_str.is_empty() {
                0
            } else {
                sats_str.parse().map_err(|_| NmeaError::BadField {
                    index: 6,
                    value: sats_str.to_string(),
                    what: "satellite count",
                })?
            };
            let valid = quality >= 1;
            let (latitude, longitude) = parse_position(s, 1, valid)?.unwrap_or((0.0, 0.0));
            Ok(Some(GpsFix {
                utc_time,
                latitude,
                longitude,
                quality,
                satellites,
                valid,
            }))
        }
        SentenceKind::Rmc => {
            let utc_time = parse_utc(field(s, 0), 0)?;
            let valid = match field(s, 1) {
                "A" => true,
                "V" | "" => false,
                other => {
                    return Err(NmeaError::BadField {
                        index: 1,
                        value: other.to_string(),
                        what: "status letter",
                    })
                }
            };
            let (latitude, longitude) = parse_position(s, 2, valid)?.unwrap_or((0.0, 0.0));
            Ok(Some(GpsFix {
                utc_time,
                latitude,
                longitude,
                quality: u8::from(valid),
                satellites: 0,
                valid,
            }))
        }
        SentenceKind::Other(_) => Ok(None),
    }
}

/// Convenience: frame check, parse and fix extraction in one step.
pub fn parse_fix(line: &str) -> Result<Option<GpsFix>, NmeaError> {
    extract_fix(&parse_sentence(line)?)
}

/// Degrees and minutes rounded to four minute decimals, carrying a
/// rounded-up 60.0000 into the degree part.
fn split_degrees(value: f64) -> (u32, f64) {
    let abs = value.abs();
    let mut deg = abs.trunc() as u32;
    let mut minutes = ((abs - f64::from(deg)) * 60.0 * 10_000.0).round() / 10_000.0;
    if minutes >= 60.0 {
        deg += 1;
        minutes -= 60.0;
    }
    (deg, minutes)
}

fn push_checksum(payload: &str) -> String {
    format!("${payload}*{:02X}\r\n", xor_bytes(payload.as_bytes()))
}

/// Renders a GGA sentence (CRLF-terminated). Invalid fixes are rendered
/// the way receivers emit them before first fix: quality 0 and empty
/// coordinate fields.
pub fn render_gga(fix: &GpsFix) -> Result<String, NmeaError> {
    if !(-90.0..=90.0).contains(&fix.latitude)
        || !(-180.0..=180.0).contains(&fix.longitude)
        || !fix.latitude.is_finite()
        || !fix.longitude.is_finite()
    {
        return Err(NmeaError::OutOfRange {
            lat: fix.latitude,
            lon: fix.longitude,
        });
    }
    let secs = fix.utc_time.rem_euclid(86_400.0);
    let centis = (secs * 100.0).round() as u64 % 8_640_000;
    let (h, m, s, cs) = (
        centis / 360_000,
        (centis / 6_000) % 60,
        (centis / 100) % 60,
        centis % 100,
    );
    let mut payload = format!("GPGGA,{h:02}{m:02}{s:02}.{cs:02},");
    if fix.valid {
        let (lat_d, lat_m) = split_degrees(fix.latitude);
        let (lon_d, lon_m) = split_degrees(fix.longitude);
        let ns = if fix.latitude < 0.0 { 'S' } else { 'N' };
        let ew = if fix.longitude < 0.0 { 'W' } else { 'E' };
        let quality = fix.quality.max(1);
        let _ = write!(
            payload,
            "{lat_d:02}{lat_m:07.4},{ns},{lon_d:03}{lon_m:07.4},{ew},{quality},{:02},1.0,0.0,M,0.0,M,,",
            fix.satellites
        );
    } else {
        let _ = write!(payload, ",,,,0,{:02},,,M,,M,,", fix.satellites);
    }
    Ok(push_checksum(&payload))
}

#[cfg(test)]
mod tests {
    use super::*;

    const GGA: &str = "$GPGGA,123519,4807.038,N,01131.000,E,1,08,0.9,545.4,M,46.9,M,,*47";

    // Independent oracle: plain byte loop over the text between '$' and '*'.
    fn oracle_checksum(line: &str) -> u8 {
        let start = line.find('$').unwrap() + 1;
        let end = line.find('*').unwrap();
        let mut x = 0u8;
        for b in line[start..end].bytes() {
            x ^= b;
        }
        x
    }

    #[test]
    fn checksum_examples() {
        assert_eq!(oracle_checksum(GGA), 0x47);
        assert_eq!(verify_checksum(GGA), Ok(true));
        assert_eq!(oracle_checksum("$GPGGA,*56"), 0x7A);
        assert_eq!(verify_checksum("$GPGGA,*56"), Ok(false));
        assert!(matches!(
            verify_checksum("no dollar sign"),
            Err(NmeaError::MalformedFrame(_))
        ));
        assert!(matches!(
            verify_checksum("$GPGGA,1,2"),
            Err(NmeaError::MalformedFrame(_))
        ));
    }

    #[test]
    fn mismatch_is_distinct_from_malformed() {
        assert_eq!(
            parse_sentence("$GPGGA,*56"),
            Err(NmeaError::ChecksumMismatch {
                declared: 0x56,
                computed: 0x7A
            })
        );
    }

    #[test]
    fn gga_field_split() {
        let s = parse_sentence(&format!("{GGA}\r\n")).unwrap();
        assert_eq!(s.talker, "GP");
        assert_eq!(s.kind, SentenceKind::Gga);
        assert_eq!(s.fields.len(), 14);
        // Fifth data field, counting from one as NMEA does.
        assert_eq!(s.fields[4], "E");
        assert_eq!(s.fields[12], "");
        assert_eq!(s.fields[13], "");
    }

    #[test]
    fn kind_dispatch() {
        let rmc = push_checksum("GPRMC,123519,A,4807.038,N,01131.000,E,022.4,084.4,230394,003.1,W");
        assert_eq!(parse_sentence(&rmc).unwrap().kind, SentenceKind::Rmc);
        let vendor = push_checksum("PXXXX,1");
        let s = parse_sentence(&vendor).unwrap();
        assert_eq!(s.kind, SentenceKind::Other("XXXX".into()));
        assert_eq!(extract_fix(&s).unwrap(), None);
        let gsv = push_checksum("GPGSV,1,1,00");
        assert_eq!(
            parse_sentence(&gsv).unwrap().kind,
            SentenceKind::Other("GSV".into())
        );
    }

    #[test]
    fn gga_fix_values() {
        let fix = parse_fix(GGA).unwrap().unwrap();
        assert!(fix.valid);
        assert!((fix.latitude - (48.0 + 7.038 / 60.0)).abs() < 1e-12);
        assert!((fix.latitude - 48.1173).abs() < 1e-9);
        assert!((fix.longitude - (11.0 + 31.0 / 60.0)).abs() < 1e-12);
        assert_eq!(fix.quality, 1);
        assert_eq!(fix.satellites, 8);
        assert_eq!(fix.utc_time, 12.0 * 3600.0 + 35.0 * 60.0 + 19.0);
    }

    #[test]
    fn southern_hemisphere_sign() {
        let line = push_checksum("GPGGA,123519,4807.038,S,01131.000,W,1,08,0.9,545.4,M,46.9,M,,");
        let fix = parse_fix(&line).unwrap().unwrap();
        assert!((fix.latitude + 48.1173).abs() < 1e-9);
        assert!(fix.longitude < 0.0);
    }

    #[test]
    fn zero_quality_is_invalid() {
        let with_coords = push_checksum("GPGGA,123519,4807.038,N,01131.000,E,0,00,,,M,,M,,");
        assert!(!parse_fix(&with_coords).unwrap().unwrap().valid);
        let empty = push_checksum("GPGGA,123519,,,,,0,00,,,M,,M,,");
        let fix = parse_fix(&empty).unwrap().unwrap();
        assert!(!fix.valid);
        assert_eq!(fix.quality, 0);
    }

    #[test]
    fn rmc_void_status() {
        let line = push_checksum("GPRMC,081836,V,,,,,,,130998,,");
        assert!(!parse_fix(&line).unwrap().unwrap().valid);
        let ok = push_checksum("GPRMC,081836,A,3751.65,S,14507.36,E,000.0,360.0,130998,011.3,E");
        let fix = parse_fix(&ok).unwrap().unwrap();
        assert!(fix.valid);
        assert!((fix.latitude + (37.0 + 51.65 / 60.0)).abs() < 1e-9);
    }

    #[test]
    fn non_numeric_coordinate_is_error() {
        let line = push_checksum("GPGGA,123519,48x7.038,N,01131.000,E,1,08,0.9,545.4,M,46.9,M,,");
        assert!(matches!(
            parse_fix(&line),
            Err(NmeaError::BadField { index: 1, .. })
        ));
        let missing = push_checksum("GPGGA,123519,,,,,1,08,0.9,545.4,M,46.9,M,,");
        assert!(parse_fix(&missing).is_err());
    }

    #[test]
    fn render_origin_and_invalid() {
        let origin = render_gga(&GpsFix::valid(0.0, 0.0, 0.0)).unwrap();
        assert!(origin.contains(",0000.0000,N,00000.0000,E,1,"), "{origin}");
        assert!(origin.ends_with("\r\n"));
        assert_eq!(verify_checksum(&origin), Ok(true));

        let invalid = render_gga(&GpsFix::no_fix(10.0)).unwrap();
        let s = parse_sentence(&invalid).unwrap();
        assert_eq!(s.fields[5], "0");
        assert!(!extract_fix(&s).unwrap().unwrap().valid);
    }

    #[test]
    fn render_round_trip_example() {
        let fix = GpsFix::valid(45_000.5, 48.1173, 11.5166);
        let back = parse_fix(&render_gga(&fix).unwrap()).unwrap().unwrap();
        assert!(back.valid);
        assert!((back.latitude - fix.latitude).abs() <= 1e-6);
        assert!((back.longitude - fix.longitude).abs() <= 1e-6);
        assert!((back.utc_time - fix.utc_time).abs() < 1e-6);
    }

    #[test]
    fn minute_rounding_carries() {
        // 59.99999 minutes rounds to 60.0000 and must carry into degrees.
        let lat = 10.0 + 59.99999 / 60.0;
        let line = render_gga(&GpsFix::valid(0.0, lat, -(20.0 + 59.99999 / 60.0))).unwrap();
        assert!(line.contains(",1100.0000,N,02100.0000,W,"), "{line}");
    }

    #[test]
    fn render_rejects_out_of_range() {
        assert!(render_gga(&GpsFix::valid(0.0, 91.0, 0.0)).is_err());
        assert!(render_gga(&GpsFix::valid(0.0, 0.0, -180.5)).is_err());
    }
}
