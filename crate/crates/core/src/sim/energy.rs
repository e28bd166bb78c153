use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnergyProfile {
    pub active_ma: f64,
    pub sleep_ma: f64,
    pub battery_mah: f64,
    /// Without deep sleep, idle time draws the active current.
    pub deep_sleep_enabled: bool,
}

impl Default for EnergyProfile {
    fn default() -> Self {
        EnergyProfile {
            active_ma: 250.0,
            sleep_ma: 1.0,
            battery_mah: 10_000.0,
            deep_sleep_enabled: true,
        }
    }
}

impl EnergyProfile {
    pub fn validate(&self) -> Result<(), (&'static str, String)> {
        for (name, v) in [
            ("active_ma", self.active_ma),
            ("sleep_ma", self.sleep_ma),
            ("battery_mah", self.battery_mah),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err((name, format!("must be positive, got {v}")));
            }
        }
        if self.sleep_ma > self.active_ma {
            return Err(("sleep_ma", "must not exceed active_ma".into()));
        }
        Ok(())
    }

    pub fn idle_ma(&self) -> f64 {
        if self.deep_sleep_enabled {
            self.sleep_ma
        } else {
            self.active_ma
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EnergyAccount {
    pub active_s: f64,
    pub idle_s: f64,
    pub consumed_mah: f64,
    pub remaining_mah: f64,
    /// Battery life at this run's average current.
    pub lifetime_h: f64,
    pub depleted: bool,
}

pub fn energy_account(profile: &EnergyProfile, active_s: f64, idle_s: f64) -> EnergyAccount {
    let active_s = active_s.max(0.0);
    let idle_s = idle_s.max(0.0);
    let consumed = (profile.active_ma * active_s + profile.idle_ma() * idle_s) / 3600.0;
    let total = active_s + idle_s;
    let avg_ma = if total > 0.0 {
        consumed * 3600.0 / total
    } else {
        profile.active_ma
    };
    EnergyAccount {
        active_s,
        idle_s,
        consumed_mah: consumed,
        remaining_mah: (profile.battery_mah - consumed).max(0.0),
        lifetime_h: profile.battery_mah / avg_ma,
        depleted: consumed > profile.battery_mah,
    }
}
