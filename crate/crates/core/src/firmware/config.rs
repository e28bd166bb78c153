//! `params.json`: the device configuration read from the SD card at boot.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::mqtt::QoS;
use crate::sensor::{ChannelSpec, SensorCurve};

pub const DEFAULT_SAMPLE_PERIOD_S: u32 = 5;
pub const DEFAULT_REBOOT_DELAY_S: u32 = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceConfig {
    pub ssid: String,
    pub password: String,
    pub endpoint_host: String,
    pub endpoint_port: u16,
    pub topic_session: String,
    pub topic_data: String,
    pub device_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub auth_token: Option<String>,
    pub sample_period_s: u32,
    pub reboot_delay_s: u32,
    /// 0 or 1.
    pub qos: u8,
    pub channels: Vec<ChannelSpec>,
}

impl DeviceConfig {
    /// A complete configuration for `device_id` using the topic scheme the
    /// ingest service expects.
    pub fn for_device(device_id: &str, ssid: &str) -> Self {
        DeviceConfig {
            ssid: ssid.to_string(),
            password: String::new(),
            endpoint_host: "localhost".to_string(),
            endpoint_port: 1883,
            topic_session: format!("ardueco/{device_id}/session"),
            topic_data: format!("ardueco/{device_id}/data"),
            device_id: device_id.to_string(),
            auth_token: None,
            sample_period_s: DEFAULT_SAMPLE_PERIOD_S,
            reboot_delay_s: DEFAULT_REBOOT_DELAY_S,
            qos: 1,
            channels: vec![ChannelSpec::co(0)],
        }
    }

    pub fn qos(&self) -> QoS {
        if self.qos == 0 {
            QoS::AtMostOnce
        } else {
            QoS::AtLeastOnce
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Parses and validates a params document, reporting every problem.
    pub fn from_json(text: &str) -> Result<DeviceConfig, ConfigErrors> {
        let value: Value = serde_json::from_str(text).map_err(|e| {
            ConfigErrors(vec![ConfigIssue::new(
                "<document>",
                format!("not valid JSON: {e}"),
            )])
        })?;
        let Value::Object(obj) = value else {
            return Err(ConfigErrors(vec![ConfigIssue::new(
                "<document>",
                format!("expected a JSON object, found {}", type_name(&value)),
            )]));
        };
        let mut v = Validator {
            obj: &obj,
            issues: Vec::new(),
        };
        let ssid = v.string("ssid", true, true);
        let password = v.string("password", true, false);
        let endpoint_host = v.string("endpoint_host", true, true);
        let endpoint_port = v.integer("endpoint_port", None, 1, u64::from(u16::MAX));
        let topic_session = v.topic("topic_session");
        let topic_data = v.topic("topic_data");
        let device_id = v.string("device_id", true, true);
        if let Some(id) = &device_id {
            if id.contains(['/', '+', '#']) {
                v.issue("device_id", "must not contain '/', '+' or '#'");
            }
        }
        let auth_token = v.optional_string("auth_token");
        let sample_period_s = v.integer(
            "sample_period_s",
            Some(DEFAULT_SAMPLE_PERIOD_S.into()),
            1,
            86_400,
        );
        let reboot_delay_s = v.integer(
            "reboot_delay_s",
            Some(DEFAULT_REBOOT_DELAY_S.into()),
            1,
            86_400,
        );
        let qos = v.integer("qos", Some(1), 0, 1);
        let channels = v.channels();
        if !v.issues.is_empty() {
            return Err(ConfigErrors(v.issues));
        }
        Ok(DeviceConfig {
            ssid: ssid.unwrap_or_default(),
            password: password.unwrap_or_default(),
            endpoint_host: endpoint_host.unwrap_or_default(),
            endpoint_port: endpoint_port.unwrap_or_default() as u16,
            topic_session: topic_session.unwrap_or_default(),
            topic_data: topic_data.unwrap_or_default(),
            device_id: device_id.unwrap_or_default(),
            auth_token,
            sample_period_s: sample_period_s.unwrap_or_default() as u32,
            reboot_delay_s: reboot_delay_s.unwrap_or_default() as u32,
            qos: qos.unwrap_or(1) as u8,
            channels,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigIssue {
    pub field: String,
    pub message: String,
}

impl ConfigIssue {
    pub fn new(field: impl Into<String>, message: impl Into<String>) -> Self {
        ConfigIssue {
            field: field.into(),
            message: message.into(),
        }
    }
}

impl fmt::Display for ConfigIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigErrors(pub Vec<ConfigIssue>);

impl ConfigErrors {
    pub fn fields(&self) -> Vec<&str> {
        self.0.iter().map(|i| i.field.as_str()).collect()
    }
}

impl fmt::Display for ConfigErrors {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, issue) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str("; ")?;
            }
            write!(f, "{issue}")?;
        }
        Ok(())
    }
}

impl std::error::Error for ConfigErrors {}

fn type_name(v: &Value) -> &'static str {
    match v {
        Value::Null => "null",
        Value::Bool(_) => "boolean",
        Value::Number(_) => "number",
        Value::String(_) => "string",
        Value::Array(_) => "array",
        Value::Object(_) => "object",
    }
}

struct Validator<'a> {
    obj: &'a Map<String, Value>,
    issues: Vec<ConfigIssue>,
}

impl Validator<'_> {
    fn issue(&mut self, field: &str, message: impl Into<String>) {
        self.issues.push(ConfigIssue::new(field, message));
    }

    fn string(&mut self, key: &str, required: bool, non_empty: bool) -> Option<String> {
        match self.obj.get(key) {
            None if required => {
                self.issue(key, "missing required field");
                None
            }
            None => None,
            Some(Value::String(s)) if non_empty && s.trim().is_empty() => {
                self.issue(key, "must not be empty");
                None
            }
            Some(Value::String(s)) => Some(s.clone()),
            Some(other) => {
                self.issue(key, format!("expected string, found {}", type_name(other)));
                None
            }
        }
    }

    fn optional_string(&mut self, key: &str) -> Option<String> {
        match self.obj.get(key) {
            Some(Value::Null) | None => None,
            Some(_) => self.string(key, false, false),
        }
    }

    fn topic(&mut self, key: &str) -> Option<String> {
        let t = self.string(key, true, true)?;
        if t.contains(['+', '#']) {
            self.issue(key, "publish topics must not contain wildcards");
            return None;
        }
        Some(t)
    }

    fn integer(&mut self, key: &str, default: Option<u64>, min: u64, max: u64) -> Option<u64> {
        let expected = if min == 0 {
            format!("integer in {min}..={max}")
        } else {
            format!("positive integer (max {max})")
        };
        match self.obj.get(key) {
            None => {
                if default.is_none() {
                    self.issue(key, "missing required field");
                }
                default
            }
            Some(Value::Number(n)) => match n.as_u64() {
                Some(x) if (min..=max).contains(&x) => Some(x),
                _ => {
                    self.issue(key, format!("expected {expected}, found {n}"));
                    None
                }
            },
            Some(other) => {
                self.issue(
                    key,
                    format!("expected {expected}, found {}", type_name(other)),
                );
                None
            }
        }
    }

    fn curve(&mut self, field: &str, value: Option<&Value>) -> SensorCurve {
        let mut curve = SensorCurve::default();
        let Some(value) = value else {
            return curve;
        };
        let Value::Object(obj) = value else {
            self.issue(
                field,
                format!("expected object, found {}", type_name(value)),
            );
            return curve;
        };
        for key in ["a", "b", "r0", "rl", "vcc"] {
            match obj.get(key) {
                None => {}
                Some(Value::Number(n)) => {
                    let x = n.as_f64().unwrap_or(f64::NAN);
                    match key {
                        "a" => curve.a = x,
                        "b" => curve.b = x,
                        "r0" => curve.r0 = x,
                        "rl" => curve.rl = x,
                        _ => curve.vcc = x,
                    }
                }
                Some(other) => self.issue(
                    &format!("{field}.{key}"),
                    format!("expected number, found {}", type_name(other)),
                ),
            }
        }
        match obj.get("adc_max") {
            None => {}
            Some(Value::Number(n)) if n.as_u64().is_some_and(|x| x <= u64::from(u32::MAX)) => {
                curve.adc_max = n.as_u64().unwrap_or_default() as u32;
            }
            Some(other) => self.issue(
                &format!("{field}.adc_max"),
                format!("expected positive integer, found {other}"),
            ),
        }
        if let Err(e) = curve.validate() {
            self.issue(field, e.to_string());
        }
        curve
    }

    fn channels(&mut self) -> Vec<ChannelSpec> {
        let top_curve = self.curve("sensor", self.obj.get("sensor"));
        let list = match self.obj.get("channels") {
            None => {
                return vec![ChannelSpec {
                    channel_id: 0,
                    label: "CO".into(),
                    curve: top_curve,
                }]
            }
            Some(Value::Array(items)) if items.is_empty() => {
                self.issue("channels", "must list at least one channel");
                return Vec::new();
            }
            Some(Value::Array(items)) => items,
            Some(other) => {
                self.issue(
                    "channels",
                    format!("expected array, found {}", type_name(other)),
                );
                return Vec::new();
            }
        };
        let mut out = Vec::new();
        let mut seen = BTreeSet::new();
        for (i, item) in list.iter().enumerate() {
            let field = format!("channels[{i}]");
            let Value::Object(obj) = item else {
                self.issue(
                    &field,
                    format!("expected object, found {}", type_name(item)),
                );
                continue;
            };
            let id = match obj.get("channel_id") {
                Some(Value::Number(n)) if n.as_u64().is_some_and(|x| x <= 255) => {
                    n.as_u64().unwrap_or_default() as u8
                }
                None => {
                    self.issue(&format!("{field}.channel_id"), "missing required field");
                    continue;
                }
                Some(other) => {
                    self.issue(
                        &format!("{field}.channel_id"),
                        format!("expected integer in 0..=255, found {other}"),
                    );
                    continue;
                }
            };
            if !seen.insert(id) {
                self.issue(
                    &format!("{field}.channel_id"),
                    format!("duplicate channel id {id}"),
                );
            }
            let label = match obj.get("label") {
                None => "CO".to_string(),
                Some(Value::String(s)) => s.clone(),
                Some(other) => {
                    self.issue(
                        &format!("{field}.label"),
                        format!("expected string, found {}", type_name(other)),
                    );
                    String::new()
                }
            };
            let curve = if obj.contains_key("sensor") {
                self.curve(&format!("{field}.sensor"), obj.get("sensor"))
            } else {
                top_curve
            };
            out.push(ChannelSpec {
                channel_id: id,
                label,
                curve,
            });
        }
        out
    }
}
