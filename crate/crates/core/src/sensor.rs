//! MQ-7 carbon monoxide sensor transfer function.
//!
//! The sensor sits in a divider with a load resistor `rl`; the ADC sees the
//! voltage across `rl`. Concentration follows the log-log datasheet line
//! `ppm = a * (rs / r0)^b`.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SensorError {
    #[error("ADC reads 0: zero voltage, sensor resistance unbounded")]
    SaturatedLow,
    #[error("ADC reads full scale: sensor resistance is zero")]
    SaturatedHigh,
    #[error("ADC count {counts} above full scale {adc_max}")]
    CountsOutOfRange { counts: u32, adc_max: u32 },
    #[error("invalid sensor curve: {0}")]
    InvalidCurve(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SensorCurve {
    pub a: f64,
    pub b: f64,
    pub r0: f64,
    pub rl: f64,
    pub vcc: f64,
    pub adc_max: u32,
}

impl Default for SensorCurve {
    fn default() -> Self {
        SensorCurve {
            a: 99.0,
            b: -1.5,
            r0: 10_000.0,
            rl: 10_000.0,
            vcc: 5.0,
            adc_max: 1023,
        }
    }
}

impl SensorCurve {
    pub fn validate(&self) -> Result<(), SensorError> {
        let positive = [
            ("a", self.a),
            ("r0", self.r0),
            ("rl", self.rl),
            ("vcc", self.vcc),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(SensorError::InvalidCurve(format!(
                    "{name} must be > 0, got {v}"
                )));
            }
        }
        if !(self.b.is_finite() && self.b < 0.0) {
            return Err(SensorError::InvalidCurve(format!(
                "b must be < 0, got {}",
                self.b
            )));
        }
        if self.adc_max < 2 {
            // Full scale of 1 leaves no interior count to read.
            return Err(SensorError::InvalidCurve(format!(
                "adc_max must be >= 2, got {}",
                self.adc_max
            )));
        }
        Ok(())
    }

    fn ppm_at(&self, counts: f64) -> f64 {
        let v = counts / f64::from(self.adc_max) * self.vcc;
        let rs = self.rl * (self.vcc - v) / v;
        self.a * (rs / self.r0).powf(self.b)
    }

    /// Worst-case relative error of a ppm -> counts -> ppm round trip that
    /// lands on `counts`: the true value sits anywhere within half a count.
    pub fn quantization_bound(&self, counts: u32) -> f64 {
        let c = f64::from(counts.clamp(1, self.adc_max - 1));
        let at = self.ppm_at(c);
        let lo = self.ppm_at((c - 0.5).max(f64::MIN_POSITIVE));
        let hi = self.ppm_at((c + 0.5).min(f64::from(self.adc_max)));
        (at / lo - 1.0).abs().max((at / hi - 1.0).abs())
    }
}

/// Identifies one analog input of a multi-channel device.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelSpec {
    pub channel_id: u8,
    pub label: String,
    #[serde(default, rename = "sensor")]
    pub curve: SensorCurve,
}

impl ChannelSpec {
    pub fn co(channel_id: u8) -> Self {
        ChannelSpec {
            channel_id,
            label: "CO".to_string(),
            curve: SensorCurve::default(),
        }
    }
}

pub fn adc_to_ppm(counts: u32, curve: &SensorCurve) -> Result<f64, SensorError> {
    if counts == 0 {
        return Err(SensorError::SaturatedLow);
    }
    if counts == curve.adc_max {
        return Err(SensorError::SaturatedHigh);
    }
    if counts > curve.adc_max {
        return Err(SensorError::CountsOutOfRange {
            counts,
            adc_max: curve.adc_max,
        });
    }
    let v = f64::from(counts) / f64::from(curve.adc_max) * curve.vcc;
    let rs = curve.rl * (curve.vcc - v) / v;
    Ok(curve.a * (rs / curve.r0).powf(curve.b))
}

/// Exact inverse of [`adc_to_ppm`], rounded and clamped to the interior
/// counts `[1, adc_max - 1]`.
pub fn ppm_to_adc(ppm: f64, curve: &SensorCurve) -> u32 {
    let top = curve.adc_max - 1;
    if ppm.is_nan() || ppm <= 0.0 {
        return 1;
    }
    let ratio = (ppm / curve.a).powf(1.0 / curve.b);
    let rs = ratio * curve.r0;
    let counts = f64::from(curve.adc_max) * curve.rl / (rs + curve.rl);
    if !counts.is_finite() {
        return if rs.is_finite() { top } else { 1 };
    }
    (counts.round().max(1.0) as u32).min(top)
}

/// Noiseless counts plus rounded Gaussian noise, clamped like
/// [`ppm_to_adc`].
pub fn sample_with_noise<R: Rng + ?Sized>(
    ppm_true: f64,
    curve: &SensorCurve,
    noise_sd: f64,
    rng: &mut R,
) -> u32 {
    let base = ppm_to_adc(ppm_true, curve);
    if noise_sd <= 0.0 || !noise_sd.is_finite() {
        return base;
    }
    let noise = Normal::new(0.0, noise_sd)
        .map(|n| n.sample(rng))
        .unwrap_or(0.0)
        .round();
    let noisy = f64::from(base) + noise;
    noisy.clamp(1.0, f64::from(curve.adc_max - 1)) as u32
}
