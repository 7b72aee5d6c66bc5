use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::{AgentConfig, GpsRoute, PowerModel, SensorModel};
use crate::clock::Interval;
use crate::pid::{ControlConfig, PidGains, SetpointSchedule, TimeOfDay};
use crate::protocol::DEFAULT_BUFFER_CAPACITY;
use crate::thermal::PlantParams;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("parse error: {0}")]
    Parse(String),
    #[error("invalid scenario: {field}: {msg}")]
    Invalid { field: String, msg: String },
}

fn invalid(field: &str, msg: impl Into<String>) -> ScenarioError {
    ScenarioError::Invalid {
        field: field.to_string(),
        msg: msg.into(),
    }
}

/// Piecewise-linear `(time_s, value)` curve, held constant past both ends.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Profile(pub Vec<(f64, f64)>);

impl Profile {
    pub fn constant(value: f64) -> Self {
        Profile(vec![(0.0, value)])
    }

    pub fn at(&self, time_s: f64) -> f64 {
        let pts = &self.0;
        match (pts.first(), pts.last()) {
            (Some(&(t0, v0)), _) if time_s <= t0 => v0,
            (_, Some(&(t1, v1))) if time_s >= t1 => v1,
            (Some(_), Some(_)) => {
                let i = pts.partition_point(|p| p.0 <= time_s);
                let ((ta, va), (tb, vb)) = (pts[i - 1], pts[i]);
                va + (vb - va) * (time_s - ta) / (tb - ta)
            }
            _ => f64::NAN,
        }
    }

    fn validate(&self, field: &str) -> Result<(), ScenarioError> {
        if self.0.is_empty() {
            return Err(invalid(field, "needs at least one point"));
        }
        for (i, p) in self.0.iter().enumerate() {
            if !(p.0.is_finite() && p.1.is_finite()) {
                return Err(invalid(field, format!("point {i} is not finite")));
            }
            if i > 0 && p.0 <= self.0[i - 1].0 {
                return Err(invalid(field, format!("point {i}: times must strictly increase")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControlSection {
    /// Fixed gains; when absent the harness relay-autotunes the plant first.
    pub gains: Option<PidGains>,
    /// Allow reversing the Peltier to heat.
    pub heating: bool,
    pub polarity_switch_band_c: f64,
    pub sample_period_s: f64,
    pub window_s: f64,
    pub integral_min: f64,
    pub integral_max: f64,
    pub derivative_filter_alpha: f64,
    /// Relay hysteresis used when autotuning, °C.
    pub relay_hysteresis_c: f64,
    /// Relay amplitude used when autotuning, %duty.
    pub relay_amplitude_pct: f64,
}

impl Default for ControlSection {
    fn default() -> Self {
        let c = ControlConfig::default();
        Self {
            gains: None,
            heating: true,
            polarity_switch_band_c: 1.0,
            sample_period_s: c.sample_period_s,
            window_s: c.window_s,
            integral_min: c.integral_min,
            integral_max: c.integral_max,
            derivative_filter_alpha: c.derivative_filter_alpha,
            relay_hysteresis_c: 0.35,
            relay_amplitude_pct: 50.0,
        }
    }
}

impl ControlSection {
    pub fn control_config(&self) -> ControlConfig {
        ControlConfig {
            sample_period_s: self.sample_period_s,
            window_s: self.window_s,
            integral_min: self.integral_min,
            integral_max: self.integral_max,
            derivative_filter_alpha: self.derivative_filter_alpha,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TelemetrySection {
    /// Seconds between uplinked samples; a multiple of the control period.
    pub every_s: f64,
    pub buffer_capacity: usize,
}

impl Default for TelemetrySection {
    fn default() -> Self {
        Self {
            every_s: 10.0,
            buffer_capacity: DEFAULT_BUFFER_CAPACITY,
        }
    }
}

/// Transients left out of the steady-window statistics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StatsSection {
    pub setpoint_exclusion_s: f64,
    pub door_exclusion_s: f64,
}

impl Default for StatsSection {
    fn default() -> Self {
        Self {
            setpoint_exclusion_s: 900.0,
            door_exclusion_s: 300.0,
        }
    }
}

/// A declarative experiment. Only `duration_s` is required.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    pub duration_s: f64,
    #[serde(default = "default_dt")]
    pub dt_s: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_start_tod")]
    pub start_time_of_day: TimeOfDay,
    #[serde(default = "default_epoch")]
    pub start_epoch_ms: u64,
    /// Initial uniform chamber temperature; defaults to the ambient at t=0.
    #[serde(default)]
    pub initial_temp_c: Option<f64>,
    #[serde(default = "default_soc")]
    pub initial_soc_pct: f64,
    /// Simulated seconds per wall-clock second; 0 runs flat out.
    #[serde(default)]
    pub acceleration: f64,
    #[serde(default = "default_device_id")]
    pub device_id: String,
    #[serde(default = "default_device_token")]
    pub device_token: String,
    /// Operator token accepted by the embedded control plane.
    #[serde(default = "default_operator_token")]
    pub operator_token: String,
    #[serde(default)]
    pub plant: PlantParams,
    #[serde(default)]
    pub schedule: SetpointSchedule,
    #[serde(default)]
    pub control: ControlSection,
    #[serde(default = "default_ambient")]
    pub ambient_profile: Profile,
    #[serde(default = "default_humidity")]
    pub humidity_profile: Profile,
    #[serde(default)]
    pub door_events: Vec<Interval>,
    #[serde(default)]
    pub outage_windows: Vec<Interval>,
    #[serde(default)]
    pub sensor_fault_windows: Vec<Interval>,
    #[serde(default)]
    pub sensor: SensorModel,
    #[serde(default)]
    pub gps_route: GpsRoute,
    #[serde(default)]
    pub power: PowerModel,
    #[serde(default)]
    pub telemetry: TelemetrySection,
    #[serde(default)]
    pub stats: StatsSection,
}

fn default_dt() -> f64 {
    1.0
}
fn default_start_tod() -> TimeOfDay {
    TimeOfDay::hm(8, 0)
}
fn default_epoch() -> u64 {
    1_700_000_000_000
}
fn default_soc() -> f64 {
    100.0
}
fn default_device_id() -> String {
    "alive-01".into()
}
fn default_device_token() -> String {
    "alive-01-token".into()
}
fn default_operator_token() -> String {
    "alive-operator-token".into()
}
fn default_ambient() -> Profile {
    Profile::constant(24.0)
}
fn default_humidity() -> Profile {
    Profile::constant(55.0)
}

fn is_multiple(x: f64, step: f64) -> bool {
    let n = (x / step).round();
    n >= 1.0 && (n * step - x).abs() <= 1e-9 * x.abs().max(1.0)
}

impl ScenarioSpec {
    /// Defaults everywhere except the duration.
    pub fn with_duration(duration_s: f64) -> Self {
        toml::from_str(&format!("duration_s = {duration_s:?}")).expect("minimal scenario parses")
    }

    pub fn from_toml(text: &str) -> Result<Self, ScenarioError> {
        let spec: ScenarioSpec =
            toml::from_str(text).map_err(|e| ScenarioError::Parse(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let d = self.duration_s;
        if !(d.is_finite() && d > 0.0) {
            return Err(invalid("duration_s", "must be > 0"));
        }
        if !(self.dt_s > 0.0 && self.dt_s <= crate::thermal::MAX_STEP_S) {
            return Err(invalid("dt_s", "must be in (0, 5]"));
        }
        if !is_multiple(d, self.dt_s) {
            return Err(invalid("dt_s", "must divide duration_s"));
        }
        let cc = self.control.control_config();
        cc.validate().map_err(|e| invalid("control", e.to_string()))?;
        if !is_multiple(cc.sample_period_s, self.dt_s) {
            return Err(invalid("control.sample_period_s", "must be a multiple of dt_s"));
        }
        if !is_multiple(d, cc.sample_period_s) {
            return Err(invalid("control.sample_period_s", "must divide duration_s"));
        }
        if !is_multiple(self.telemetry.every_s, cc.sample_period_s) {
            return Err(invalid(
                "telemetry.every_s",
                "must be a multiple of control.sample_period_s",
            ));
        }
        if self.telemetry.buffer_capacity == 0 {
            return Err(invalid("telemetry.buffer_capacity", "must be > 0"));
        }
        if !(self.control.polarity_switch_band_c >= 0.0) {
            return Err(invalid("control.polarity_switch_band_c", "must be >= 0"));
        }
        if let Some(g) = &self.control.gains {
            g.validate().map_err(|e| invalid("control.gains", e.to_string()))?;
        }
        self.plant
            .validate()
            .map_err(|e| invalid("plant", e.to_string()))?;
        self.schedule
            .validate(self.plant.t_min_c, self.plant.t_max_c)
            .map_err(|e| invalid("schedule", e))?;
        self.ambient_profile.validate("ambient_profile")?;
        self.humidity_profile.validate("humidity_profile")?;
        if let Some(t) = self.initial_temp_c {
            if !(t >= self.plant.t_min_c && t <= self.plant.t_max_c) {
                return Err(invalid("initial_temp_c", "outside the plant envelope"));
            }
        }
        if !(0.0..=100.0).contains(&self.initial_soc_pct) {
            return Err(invalid("initial_soc_pct", "must be within [0, 100]"));
        }
        if !(self.acceleration >= 0.0 && self.acceleration.is_finite()) {
            return Err(invalid("acceleration", "must be >= 0"));
        }
        if !crate::plane::valid_device_id(&self.device_id) {
            return Err(invalid("device_id", "letters, digits, '-', '_' or '.' only"));
        }
        if self.device_token.is_empty() {
            return Err(invalid("device_token", "must not be empty"));
        }
        if self.operator_token.is_empty() || self.operator_token == self.device_token {
            return Err(invalid("operator_token", "must be non-empty and differ from device_token"));
        }
        for (field, list) in [
            ("door_events", &self.door_events),
            ("outage_windows", &self.outage_windows),
            ("sensor_fault_windows", &self.sensor_fault_windows),
            ("sensor.fault_windows", &self.sensor.fault_windows),
        ] {
            for iv in list.iter() {
                if !iv.is_well_formed() || iv.start_s < 0.0 || iv.end_s > d {
                    return Err(invalid(
                        field,
                        format!("{iv} must satisfy 0 <= start < end <= duration_s"),
                    ));
                }
            }
        }
        let mut doors = self.door_events.clone();
        doors.sort_by(|a, b| a.start_s.total_cmp(&b.start_s));
        for pair in doors.windows(2) {
            if pair[0].overlaps(&pair[1]) {
                return Err(invalid(
                    "door_events",
                    format!("{} and {} overlap", pair[0], pair[1]),
                ));
            }
        }
        self.sensor.validate().map_err(|e| invalid("sensor", e))?;
        self.gps_route
            .validate()
            .map_err(|e| invalid("gps_route", e.to_string()))?;
        self.power.validate().map_err(|e| invalid("power", e))?;
        Ok(())
    }

    /// Control cycles in the run.
    pub fn cycles(&self) -> u64 {
        (self.duration_s / self.control.sample_period_s).round() as u64
    }

    /// Sensor model with the scenario's fault windows merged in.
    pub fn sensor_model(&self) -> SensorModel {
        let mut s = self.sensor.clone();
        s.fault_windows.extend(self.sensor_fault_windows.iter().copied());
        s
    }

    pub fn agent_config(&self) -> AgentConfig {
        let cc = self.control.control_config();
        AgentConfig {
            control: cc,
            telemetry_every: (self.telemetry.every_s / cc.sample_period_s).round() as u32,
            polarity_switch_band_c: self
                .control
                .heating
                .then_some(self.control.polarity_switch_band_c),
            power: self.power,
            t_min_c: self.plant.t_min_c,
            t_max_c: self.plant.t_max_c,
        }
    }
}

pub fn load_scenario(path: impl AsRef<Path>) -> Result<ScenarioSpec, ScenarioError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
        path: path.display().to_string(),
        source,
    })?;
    ScenarioSpec::from_toml(&text)
}
