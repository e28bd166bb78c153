//! Lossy, latency-adding links between devices and the broker.

use std::collections::HashMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::config::LatencyBounds;
use crate::clock::Millis;
use crate::mqtt::ConnId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Direction {
    ToBroker,
    ToDevice,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct NetworkStats {
    pub sent: u64,
    pub dropped: u64,
}

/// Bernoulli drops and uniform latency. A frame never overtakes an earlier
/// one on the same connection and direction.
#[derive(Debug, Clone)]
pub struct Network {
    drop_probability: f64,
    latency: LatencyBounds,
    rng: ChaCha8Rng,
    last: HashMap<(ConnId, Direction), Millis>,
    stats: NetworkStats,
}

impl Network {
    pub fn new(drop_probability: f64, latency: LatencyBounds, rng: ChaCha8Rng) -> Self {
        assert!((0.0..1.0).contains(&drop_probability));
        Network {
            drop_probability,
            latency,
            rng,
            last: HashMap::new(),
            stats: NetworkStats::default(),
        }
    }

    pub fn stats(&self) -> NetworkStats {
        self.stats
    }

    /// Arrival time of a frame sent now, or `None` when it is lost.
    pub fn deliver(&mut self, conn: ConnId, dir: Direction, now: Millis) -> Option<Millis> {
        self.stats.sent += 1;
        if self.drop_probability > 0.0 && self.rng.random::<f64>() < self.drop_probability {
            self.stats.dropped += 1;
            return None;
        }
        let lat = self.rng.random_range(self.latency.min..=self.latency.max);
        let mut at = now + i64::from(lat);
        let last = self.last.entry((conn, dir)).or_insert(Millis(i64::MIN));
        if at < *last {
            at = *last;
        }
        *last = at;
        Some(at)
    }

    /// Forgets ordering state for a finished connection.
    pub fn forget(&mut self, conn: ConnId) {
        self.last.remove(&(conn, Direction::ToBroker));
        self.last.remove(&(conn, Direction::ToDevice));
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn net(p: f64) -> Network {
        Network::new(
            p,
            LatencyBounds { min: 20, max: 150 },
            ChaCha8Rng::seed_from_u64(5),
        )
    }

    #[test]
    fn lossless_always_arrives_in_bounds() {
        let mut n = net(0.0);
        for i in 0..1000 {
            let now = Millis(i * 7);
            let at = n.deliver(i as u64, Direction::ToBroker, now).unwrap();
            assert!((20..=150).contains(&(at - now)));
        }
        assert_eq!(n.stats().dropped, 0);
    }

    #[test]
    fn binomial_drop_rate() {
        let mut n = net(0.5);
        let trials = 10_000u64;
        for i in 0..trials {
            n.deliver(1, Direction::ToBroker, Millis(i as i64));
        }
        let sd = (trials as f64 * 0.25).sqrt();
        let dropped = n.stats().dropped as f64;
        assert!(
            (dropped - trials as f64 * 0.5).abs() <= 3.0 * sd,
            "{dropped}"
        );
    }

    #[test]
    fn per_connection_fifo() {
        let mut n = net(0.0);
        let mut prev = Millis(i64::MIN);
        for i in 0..500 {
            let at = n.deliver(3, Direction::ToDevice, Millis(i)).unwrap();
            assert!(at >= prev);
            prev = at;
        }
    }
}
