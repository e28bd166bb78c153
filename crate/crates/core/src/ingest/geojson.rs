//! RFC 7946 export: one Point per fixed reading, optional ride tracks and
//! an optional grid layer.

use std::collections::{BTreeMap, BTreeSet};

use serde_json::{json, Value};

use super::grid::aggregate_grid;
use super::store::{run_query, IngestRecord, Query};
use crate::firmware::RideId;
use crate::geo::{geohash_bounds, GeoError};

pub const PALETTE: [&str; 12] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
    "#bcbd22", "#17becf", "#393b79", "#637939",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ExportOptions {
    pub style_seed: u64,
    /// Adds one LineString per ride through its fixed readings in seq order.
    pub tracks: bool,
    /// Adds one Polygon per grid cell at this geohash precision.
    pub grid_precision: Option<usize>,
}

fn fnv1a(seed: u64, bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in seed.to_le_bytes().iter().chain(bytes) {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Distinct colors for the given rides. Each ride hashes to a palette slot
/// and probes forward past slots already taken, visiting rides in id order.
/// Past twelve rides the palette is abandoned for hashed 24-bit colors.
pub fn ride_colors<'a>(
    rides: impl IntoIterator<Item = &'a RideId>,
    style_seed: u64,
) -> BTreeMap<RideId, String> {
    let rides: BTreeSet<&RideId> = rides.into_iter().collect();
    let mut out = BTreeMap::new();
    if rides.len() <= PALETTE.len() {
        let mut taken = [false; PALETTE.len()];
        for ride in rides {
            let mut slot = (fnv1a(style_seed, ride.as_str().as_bytes()) % 12) as usize;
            while taken[slot] {
                slot = (slot + 1) % PALETTE.len();
            }
            taken[slot] = true;
            out.insert(ride.clone(), PALETTE[slot].to_string());
        }
        return out;
    }
    let mut taken = BTreeSet::new();
    for ride in rides {
        let mut h = fnv1a(style_seed, ride.as_str().as_bytes());
        loop {
            let color = format!("#{:06x}", h & 0xff_ffff);
            if taken.insert(color.clone()) {
                out.insert(ride.clone(), color);
                break;
            }
            h = fnv1a(h, ride.as_str().as_bytes());
        }
    }
    out
}

pub fn export_geojson(records: &[IngestRecord], opts: &ExportOptions) -> Result<String, GeoError> {
    let rows = run_query(records, &Query::default());
    let colors = ride_colors(rows.iter().map(|r| &r.reading.ride), opts.style_seed);
    let mut features = Vec::new();
    let mut tracks: BTreeMap<(&RideId, &str), Vec<[f64; 2]>> = BTreeMap::new();
    for r in &rows {
        let Some((lat, lon)) = r.reading.position() else {
            continue;
        };
        let first = r.reading.ch.first();
        features.push(json!({
            "type": "Feature",
            "geometry": {"type": "Point", "coordinates": [lon, lat]},
            "properties": {
                "kind": "reading",
                "ride": r.reading.ride,
                "device": r.device_id,
                "seq": r.reading.seq,
                "ppm": first.and_then(|c| c.ppm),
                "adc": first.map(|c| c.adc),
                "utc": r.reading.utc,
                "color": colors[&r.reading.ride],
            },
        }));
        if opts.tracks {
            tracks
                .entry((&r.reading.ride, r.device_id.as_str()))
                .or_default()
                .push([lon, lat]);
        }
    }
    for ((ride, device), coords) in tracks {
        if coords.len() < 2 {
            continue;
        }
        features.push(json!({
            "type": "Feature",
            "geometry": {"type": "LineString", "coordinates": coords},
            "properties": {"kind": "track", "ride": ride, "device": device, "color": colors[ride]},
        }));
    }
    if let Some(precision) = opts.grid_precision {
        for cell in aggregate_grid(&rows, precision)? {
            let (lo, hi) = geohash_bounds(&cell.cell_id)?;
            features.push(json!({
                "type": "Feature",
                "geometry": {
                    "type": "Polygon",
                    "coordinates": [[
                        [lo.lon, lo.lat], [hi.lon, lo.lat], [hi.lon, hi.lat],
                        [lo.lon, hi.lat], [lo.lon, lo.lat]
                    ]],
                },
                "properties": {
                    "kind": "cell",
                    "cell_id": cell.cell_id,
                    "count": cell.count,
                    "mean_ppm": cell.mean_ppm,
                    "min_ppm": cell.min_ppm,
                    "max_ppm": cell.max_ppm,
                },
            }));
        }
    }
    let doc = json!({"type": "FeatureCollection", "features": Value::Array(features)});
    Ok(serde_json::to_string_pretty(&doc).expect("document serializes"))
}
