//! JSON simulator configuration files.
//!
//! ```json
//! {
//!   "clock_skew": 0.99812,
//!   "unaccounted_bulk_w": 0,
//!   "sensors": [
//!     { "name": "PWRPROC", "signal": { "kind": "square", "freq_hz": 1996, "low_w": 225, "high_w": 285 } }
//!   ]
//! }
//! ```
//!
//! Top-level fields other than `sensors` default to the simulator defaults.
//! Sensors with a standard name take gsid, location and rate from the
//! standard table of their block unless given explicitly.

use occ_core::image::{standard_power_sensors, SensorKind, SensorLocation, SensorName, SensorNameEntry, SensorUnits};
use occ_core::sim::{self, SimConfig, SimSensor, WorkloadSignal};
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("config is not valid JSON for the schema: {0}")]
    Json(#[from] serde_json::Error),
    #[error("sensor {index}: {message}")]
    Sensor { index: usize, message: String },
    #[error(transparent)]
    Sim(#[from] sim::SimError),
}

fn default_nominal() -> f64 {
    sim::DEFAULT_NOMINAL_RATE
}
fn default_skew() -> f64 {
    sim::DEFAULT_CLOCK_SKEW
}
fn default_flush() -> f64 {
    sim::DEFAULT_FLUSH_PERIOD
}
fn default_publish() -> u32 {
    sim::DEFAULT_PUBLISH_EVERY
}
fn default_timebase() -> u64 {
    occ_core::image::TIMEBASE_HZ
}
fn default_quantum() -> f64 {
    1.0
}
fn default_duty() -> f64 {
    0.5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfigFile {
    #[serde(default = "default_nominal")]
    pub nominal_internal_rate_sa_s: f64,
    #[serde(default = "default_skew")]
    pub clock_skew: f64,
    #[serde(default = "default_flush")]
    pub flush_period_s: f64,
    #[serde(default = "default_publish")]
    pub publish_every_n_flushes: u32,
    #[serde(default = "default_timebase")]
    pub timebase_hz: u64,
    #[serde(default = "default_quantum")]
    pub quantization_w: f64,
    #[serde(default)]
    pub unaccounted_bulk_w: f64,
    pub sensors: Vec<SensorSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensorSpec {
    pub name: String,
    #[serde(default)]
    pub block: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gsid: Option<u16>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub location: Option<u16>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sample_rate_sa_s: Option<f64>,
    pub signal: SignalSpec,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SignalSpec {
    Constant {
        power_w: f64,
    },
    Square {
        freq_hz: f64,
        #[serde(default = "default_duty")]
        duty: f64,
        low_w: f64,
        high_w: f64,
        #[serde(default)]
        phase: f64,
    },
}

impl From<SignalSpec> for WorkloadSignal {
    fn from(s: SignalSpec) -> Self {
        match s {
            SignalSpec::Constant { power_w } => WorkloadSignal::Constant { power_w },
            SignalSpec::Square { freq_hz, duty, low_w, high_w, phase } => {
                WorkloadSignal::Square { freq_hz, duty, low_w, high_w, phase }
            }
        }
    }
}

impl From<WorkloadSignal> for SignalSpec {
    fn from(s: WorkloadSignal) -> Self {
        match s {
            WorkloadSignal::Constant { power_w } => SignalSpec::Constant { power_w },
            WorkloadSignal::Square { freq_hz, duty, low_w, high_w, phase } => {
                SignalSpec::Square { freq_hz, duty, low_w, high_w, phase }
            }
        }
    }
}

impl SimConfigFile {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_sim_config(&self) -> Result<SimConfig, ConfigError> {
        let mut sensors = Vec::with_capacity(self.sensors.len());
        for (index, spec) in self.sensors.iter().enumerate() {
            let err = |message: &str| ConfigError::Sensor { index, message: message.to_string() };
            let standard = standard_power_sensors(spec.block).into_iter().find(|e| e.name.matches(&spec.name));
            let name = SensorName::new(&spec.name).map_err(|e| err(&e.to_string()))?;
            let gsid = spec.gsid.or(standard.map(|e| e.gsid)).ok_or_else(|| err("gsid is required for non-standard sensor names"))?;
            let location = spec
                .location
                .map(SensorLocation)
                .or(standard.map(|e| e.location))
                .unwrap_or(SensorLocation::SYSTEM);
            let rate_milli_sa_s = match spec.sample_rate_sa_s {
                Some(r) if r >= 0.0 && r * 1000.0 <= u32::MAX as f64 => (r * 1000.0).round() as u32,
                Some(_) => return Err(err("sample_rate_sa_s out of range")),
                None => standard.map_or((self.nominal_internal_rate_sa_s * 1000.0).round() as u32, |e| e.rate_milli_sa_s),
            };
            let entry = SensorNameEntry {
                gsid,
                name,
                units: SensorUnits::new("W").expect("static units"),
                kind: SensorKind::POWER,
                location,
                rate_milli_sa_s,
            };
            sensors.push(SimSensor { entry, signal: spec.signal.into(), block: spec.block });
        }
        let config = SimConfig {
            nominal_internal_rate: self.nominal_internal_rate_sa_s,
            clock_skew: self.clock_skew,
            flush_period_device: self.flush_period_s,
            publish_every_n_flushes: self.publish_every_n_flushes,
            timebase_hz: self.timebase_hz,
            quantization_w: self.quantization_w,
            sensors,
            unaccounted_bulk_w: self.unaccounted_bulk_w,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn from_sim_config(config: &SimConfig) -> Self {
        SimConfigFile {
            nominal_internal_rate_sa_s: config.nominal_internal_rate,
            clock_skew: config.clock_skew,
            flush_period_s: config.flush_period_device,
            publish_every_n_flushes: config.publish_every_n_flushes,
            timebase_hz: config.timebase_hz,
            quantization_w: config.quantization_w,
            unaccounted_bulk_w: config.unaccounted_bulk_w,
            sensors: config
                .sensors
                .iter()
                .map(|s| SensorSpec {
                    name: s.entry.name.as_str().to_string(),
                    block: s.block,
                    gsid: Some(s.entry.gsid),
                    location: Some(s.entry.location.0),
                    sample_rate_sa_s: Some(s.entry.sampling_rate_sa_s()),
                    signal: s.signal.into(),
                })
                .collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_file_takes_defaults() {
        let f = SimConfigFile::from_json(
            r#"{"sensors":[{"name":"PWRPROC","signal":{"kind":"square","freq_hz":1996,"low_w":225,"high_w":285}}]}"#,
        )
        .unwrap();
        let c = f.to_sim_config().unwrap();
        assert_eq!(c.clock_skew, sim::DEFAULT_CLOCK_SKEW);
        assert_eq!(c.sensors[0].entry.gsid, 4);
        assert_eq!(c.sensors[0].signal, WorkloadSignal::square(1996.0, 225.0, 285.0));
    }

    #[test]
    fn custom_sensor_needs_gsid() {
        let text = r#"{"sensors":[{"name":"PWRFAN","signal":{"kind":"constant","power_w":12}}]}"#;
        assert!(matches!(
            SimConfigFile::from_json(text).unwrap().to_sim_config(),
            Err(ConfigError::Sensor { index: 0, .. })
        ));
        let text = r#"{"sensors":[{"name":"PWRFAN","gsid":77,"signal":{"kind":"constant","power_w":12}}]}"#;
        let c = SimConfigFile::from_json(text).unwrap().to_sim_config().unwrap();
        assert_eq!(c.sensors[0].entry.gsid, 77);
    }

    #[test]
    fn rejects_unknown_fields_and_bad_values() {
        assert!(SimConfigFile::from_json(r#"{"sensors":[],"skew":1}"#).is_err());
        let f = SimConfigFile::from_json(r#"{"clock_skew":-1,"sensors":[{"name":"PWRSYS","signal":{"kind":"constant","power_w":1}}]}"#).unwrap();
        assert!(matches!(f.to_sim_config(), Err(ConfigError::Sim(_))));
    }

    #[test]
    fn round_trips_through_sim_config() {
        let c = SimConfig::single("PWRMEM", WorkloadSignal::square(3.0, 10.0, 20.0)).unwrap();
        let f = SimConfigFile::from_sim_config(&c);
        let text = serde_json::to_string(&f).unwrap();
        assert_eq!(SimConfigFile::from_json(&text).unwrap().to_sim_config().unwrap(), c);
    }
}
