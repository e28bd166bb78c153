//! City-scale geometry and geohash cell keys.

use thiserror::Error;

/// Mean Earth radius in meters.
pub const EARTH_RADIUS_M: f64 = 6_371_008.8;

const GEOHASH_ALPHABET: &[u8; 32] = b"0123456789bcdefghjkmnpqrstuvwxyz";

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LatLon {
    pub lat: f64,
    pub lon: f64,
}

impl LatLon {
    pub fn new(lat: f64, lon: f64) -> Self {
        LatLon { lat, lon }
    }

    pub fn in_bounds(&self) -> bool {
        (-90.0..=90.0).contains(&self.lat) && (-180.0..=180.0).contains(&self.lon)
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum GeoError {
    #[error("geohash precision {0} outside 1..=12")]
    Precision(usize),
    #[error("coordinate ({lat}, {lon}) out of range")]
    OutOfRange { lat: f64, lon: f64 },
    #[error("invalid geohash character {0:?}")]
    BadChar(char),
}

/// Equirectangular distance in meters. Accurate to well under a meter at
/// the < 50 km scale the simulator works at.
pub fn distance_m(a: LatLon, b: LatLon) -> f64 {
    let mean_lat = ((a.lat + b.lat) / 2.0).to_radians();
    let x = (b.lon - a.lon).to_radians() * mean_lat.cos();
    let y = (b.lat - a.lat).to_radians();
    (x * x + y * y).sqrt() * EARTH_RADIUS_M
}

/// Linear interpolation between two positions, `frac` in [0, 1].
pub fn lerp(a: LatLon, b: LatLon, frac: f64) -> LatLon {
    LatLon {
        lat: a.lat + (b.lat - a.lat) * frac,
        lon: a.lon + (b.lon - a.lon) * frac,
    }
}

/// Moves `meters_north` / `meters_east` away from `origin`.
pub fn offset_m(origin: LatLon, meters_north: f64, meters_east: f64) -> LatLon {
    let dlat = (meters_north / EARTH_RADIUS_M).to_degrees();
    let dlon = (meters_east / (EARTH_RADIUS_M * origin.lat.to_radians().cos())).to_degrees();
    LatLon {
        lat: origin.lat + dlat,
        lon: origin.lon + dlon,
    }
}

/// Standard base-32 geohash of `(lat, lon)` with `precision` characters.
pub fn geohash(lat: f64, lon: f64, precision: usize) -> Result<String, GeoError> {
    if !(1..=12).contains(&precision) {
        return Err(GeoError::Precision(precision));
    }
    if !LatLon::new(lat, lon).in_bounds() {
        return Err(GeoError::OutOfRange { lat, lon });
    }
    let (mut lat_lo, mut lat_hi) = (-90.0f64, 90.0f64);
    let (mut lon_lo, mut lon_hi) = (-180.0f64, 180.0f64);
    let mut out = String::with_capacity(precision);
    let mut even = true;
    let mut bits = 0u8;
    let mut idx = 0usize;
    while out.len() < precision {
        if even {
            let mid = (lon_lo + lon_hi) / 2.0;
            if lon >= mid {
                idx = idx * 2 + 1;
                lon_lo = mid;
            } else {
                idx *= 2;
                lon_hi = mid;
            }
        } else {
            let mid = (lat_lo + lat_hi) / 2.0;
            if lat >= mid {
                idx = idx * 2 + 1;
                lat_lo = mid;
            } else {
                idx *= 2;
                lat_hi = mid;
            }
        }
        even = !even;
        bits += 1;
        if bits == 5 {
            out.push(GEOHASH_ALPHABET[idx] as char);
            bits = 0;
            idx = 0;
        }
    }
    Ok(out)
}

/// Bounding box `(min, max)` of a geohash cell.
pub fn geohash_bounds(hash: &str) -> Result<(LatLon, LatLon), GeoError> {
    let (mut lat_lo, mut lat_hi) = (-90.0f64, 90.0f64);
    let (mut lon_lo, mut lon_hi) = (-180.0f64, 180.0f64);
    let mut even = true;
    for c in hash.chars() {
        let v = GEOHASH_ALPHABET
            .iter()
            .position(|&a| a as char == c)
            .ok_or(GeoError::BadChar(c))?;
        for shift in (0..5).rev() {
            let bit = (v >> shift) & 1 == 1;
            if even {
                let mid = (lon_lo + lon_hi) / 2.0;
                if bit {
                    lon_lo = mid
                } else {
                    lon_hi = mid
                }
            } else {
                let mid = (lat_lo + lat_hi) / 2.0;
                if bit {
                    lat_lo = mid
                } else {
                    lat_hi = mid
                }
            }
            even = !even;
        }
    }
    Ok((LatLon::new(lat_lo, lon_lo), LatLon::new(lat_hi, lon_hi)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_geohashes() {
        // Reference vectors from the original geohash.org service.
        assert_eq!(geohash(57.64911, 10.40744, 11).unwrap(), "u4pruydqqvj");
        assert_eq!(geohash(42.6, -5.6, 5).unwrap(), "ezs42");
        assert_eq!(geohash(0.0, 0.0, 1).unwrap(), "s");
    }

    #[test]
    fn precision_bounds() {
        assert_eq!(geohash(1.0, 1.0, 0), Err(GeoError::Precision(0)));
        assert_eq!(geohash(1.0, 1.0, 13), Err(GeoError::Precision(13)));
        assert!(geohash(91.0, 0.0, 5).is_err());
    }

    #[test]
    fn bounds_contain_point() {
        let h = geohash(45.4064, 11.8768, 7).unwrap();
        let (lo, hi) = geohash_bounds(&h).unwrap();
        assert!(lo.lat <= 45.4064 && 45.4064 < hi.lat);
        assert!(lo.lon <= 11.8768 && 11.8768 < hi.lon);
    }

    #[test]
    fn distance_of_one_degree_latitude() {
        let d = distance_m(LatLon::new(45.0, 11.0), LatLon::new(46.0, 11.0));
        assert!((d - 111_195.0).abs() < 5.0, "{d}");
        let o = offset_m(LatLon::new(45.0, 11.0), 300.0, -400.0);
        assert!((distance_m(LatLon::new(45.0, 11.0), o) - 500.0).abs() < 0.01);
    }
}
