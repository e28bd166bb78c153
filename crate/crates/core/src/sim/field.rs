//! Synthetic ground-truth CO field: background plus static Gaussian plumes.

use serde::{Deserialize, Serialize};

use crate::geo::{distance_m, LatLon};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Source {
    pub lat: f64,
    pub lon: f64,
    pub amplitude_ppm: f64,
    pub sigma_m: f64,
    /// `[t_s, factor]` knots, linearly interpolated and held flat past the
    /// ends. Empty means a constant factor of 1.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub profile: Vec<[f64; 2]>,
}

impl Source {
    fn factor(&self, t_s: f64) -> f64 {
        let p = &self.profile;
        match p.len() {
            0 => 1.0,
            _ if t_s <= p[0][0] => p[0][1],
            _ if t_s >= p[p.len() - 1][0] => p[p.len() - 1][1],
            _ => {
                let i = p.partition_point(|k| k[0] <= t_s);
                let ([t0, f0], [t1, f1]) = (p[i - 1], p[i]);
                f0 + (f1 - f0) * (t_s - t0) / (t1 - t0)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PollutionField {
    pub background_ppm: f64,
    pub sources: Vec<Source>,
}

impl PollutionField {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.background_ppm.is_finite() && self.background_ppm >= 0.0) {
            return Err("background_ppm must be >= 0".into());
        }
        for (i, s) in self.sources.iter().enumerate() {
            if !(s.amplitude_ppm.is_finite() && s.amplitude_ppm >= 0.0) {
                return Err(format!("sources[{i}].amplitude_ppm must be >= 0"));
            }
            if !(s.sigma_m.is_finite() && s.sigma_m > 0.0) {
                return Err(format!("sources[{i}].sigma_m must be > 0"));
            }
            if !LatLon::new(s.lat, s.lon).in_bounds() {
                return Err(format!("sources[{i}] coordinates out of range"));
            }
            let knots_ok = s.profile.windows(2).all(|w| w[0][0] < w[1][0])
                && s.profile
                    .iter()
                    .all(|k| k[0].is_finite() && k[1].is_finite() && k[1] >= 0.0);
            if !knots_ok {
                return Err(format!(
                    "sources[{i}].profile needs increasing times and non-negative factors"
                ));
            }
        }
        Ok(())
    }
}

/// Ground-truth concentration at a point, `t_s` seconds into the run.
pub fn field_sample(field: &PollutionField, lat: f64, lon: f64, t_s: f64) -> f64 {
    let here = LatLon::new(lat, lon);
    field.background_ppm
        + field
            .sources
            .iter()
            .map(|s| {
                let d = distance_m(here, LatLon::new(s.lat, s.lon));
                s.amplitude_ppm * s.factor(t_s) * (-d * d / (2.0 * s.sigma_m * s.sigma_m)).exp()
            })
            .sum::<f64>()
}
