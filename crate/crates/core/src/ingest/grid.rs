use std::collections::BTreeMap;

use serde::Serialize;

use crate::firmware::Reading;
use crate::geo::{geohash, GeoError};

/// About 150 m cells.
pub const DEFAULT_PRECISION: usize = 7;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridCell {
    pub cell_id: String,
    pub count: u64,
    pub mean_ppm: f64,
    pub min_ppm: f64,
    pub max_ppm: f64,
}

/// Per-geohash-cell statistics of the first channel's ppm, sorted by cell.
/// Rows without a fix or without a ppm value (saturated ADC) are skipped.
pub fn aggregate_grid<R: AsRef<Reading>>(
    records: &[R],
    precision: usize,
) -> Result<Vec<GridCell>, GeoError> {
    if !(1..=12).contains(&precision) {
        return Err(GeoError::Precision(precision));
    }
    struct Acc {
        n: u64,
        sum: f64,
        min: f64,
        max: f64,
    }
    let mut cells: BTreeMap<String, Acc> = BTreeMap::new();
    for r in records {
        let r = r.as_ref();
        let (Some((lat, lon)), Some(ppm)) = (r.position(), r.primary_ppm()) else {
            continue;
        };
        let acc = cells.entry(geohash(lat, lon, precision)?).or_insert(Acc {
            n: 0,
            sum: 0.0,
            min: f64::INFINITY,
            max: f64::NEG_INFINITY,
        });
        acc.n += 1;
        acc.sum += ppm;
        acc.min = acc.min.min(ppm);
        acc.max = acc.max.max(ppm);
    }
    Ok(cells
        .into_iter()
        .map(|(cell_id, a)| GridCell {
            cell_id,
            count: a.n,
            // Rounding in the sum can push an all-equal cell a ulp past its bounds.
            mean_ppm: (a.sum / a.n as f64).clamp(a.min, a.max),
            min_ppm: a.min,
            max_ppm: a.max,
        })
        .collect())
}
