//! Constant-speed travel along a polyline, and random trips between docks.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::config::{TripGenerator, WifiZone};
use crate::geo::{distance_m, lerp, offset_m, LatLon};

#[derive(Debug, Clone, PartialEq)]
pub struct Path {
    points: Vec<LatLon>,
    /// Distance from the first point to each point.
    cumulative: Vec<f64>,
    speed_mps: f64,
}

impl Path {
    pub fn new(points: Vec<LatLon>, speed_mps: f64) -> Self {
        assert!(points.len() >= 2 && speed_mps > 0.0);
        let mut cumulative = Vec::with_capacity(points.len());
        let mut total = 0.0;
        cumulative.push(0.0);
        for w in points.windows(2) {
            total += distance_m(w[0], w[1]);
            cumulative.push(total);
        }
        Path {
            points,
            cumulative,
            speed_mps,
        }
    }

    pub fn length_m(&self) -> f64 {
        *self.cumulative.last().expect("at least two points")
    }

    pub fn duration_s(&self) -> f64 {
        self.length_m() / self.speed_mps
    }

    /// Position `elapsed_s` into the trip, held at the end once reached.
    pub fn position_at(&self, elapsed_s: f64) -> LatLon {
        let d = (elapsed_s.max(0.0) * self.speed_mps).min(self.length_m());
        let i = self.cumulative.partition_point(|&c| c <= d);
        if i >= self.points.len() {
            return *self.points.last().expect("at least two points");
        }
        let (c0, c1) = (self.cumulative[i - 1], self.cumulative[i]);
        let frac = if c1 > c0 { (d - c0) / (c1 - c0) } else { 0.0 };
        lerp(self.points[i - 1], self.points[i], frac)
    }

    pub fn end(&self) -> LatLon {
        *self.points.last().expect("at least two points")
    }
}

/// Bounding box of the zone centers, grown by `margin_m` on every side.
fn area(zones: &[WifiZone], margin_m: f64) -> (LatLon, LatLon) {
    let mut lo = zones[0].center;
    let mut hi = zones[0].center;
    for z in zones {
        lo.lat = lo.lat.min(z.center.lat);
        lo.lon = lo.lon.min(z.center.lon);
        hi.lat = hi.lat.max(z.center.lat);
        hi.lon = hi.lon.max(z.center.lon);
    }
    (
        offset_m(lo, -margin_m, -margin_m),
        offset_m(hi, margin_m, margin_m),
    )
}

/// One random-waypoint trip from `from` to a different zone (the same
/// zone when it is the only one). Returns the path and destination index.
pub fn random_trip(
    zones: &[WifiZone],
    from: usize,
    gen: &TripGenerator,
    rng: &mut ChaCha8Rng,
) -> (Path, usize) {
    let to = if zones.len() == 1 {
        0
    } else {
        let k = rng.random_range(0..zones.len() - 1);
        if k >= from {
            k + 1
        } else {
            k
        }
    };
    let (lo, hi) = area(zones, gen.area_margin_m);
    let n = rng.random_range(gen.waypoints_min..=gen.waypoints_max);
    let mut points = vec![zones[from].center];
    for _ in 0..n {
        points.push(LatLon::new(
            rng.random_range(lo.lat..=hi.lat),
            rng.random_range(lo.lon..=hi.lon),
        ));
    }
    points.push(zones[to].center);
    let speed = rng.random_range(gen.speed_min_mps..=gen.speed_max_mps);
    (Path::new(points, speed), to)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn walks_the_polyline() {
        let a = LatLon::new(45.4, 11.87);
        let b = offset_m(a, 0.0, 100.0);
        let c = offset_m(b, 100.0, 0.0);
        let p = Path::new(vec![a, b, c], 10.0);
        assert!((p.length_m() - 200.0).abs() < 0.01);
        assert_eq!(p.position_at(0.0), a);
        assert!(distance_m(p.position_at(10.0), b) < 0.01);
        assert!(distance_m(p.position_at(15.0), offset_m(b, 50.0, 0.0)) < 0.01);
        assert_eq!(p.position_at(1e6), c);
    }

    #[test]
    fn trips_end_at_another_zone() {
        let cfg = super::super::SimConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for from in 0..cfg.zones.len() {
            for _ in 0..20 {
                let (path, to) = random_trip(&cfg.zones, from, &cfg.trips, &mut rng);
                assert_ne!(from, to);
                assert_eq!(path.end(), cfg.zones[to].center);
                assert_eq!(path.position_at(0.0), cfg.zones[from].center);
            }
        }
    }
}
