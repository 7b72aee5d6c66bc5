//! Discrete PID regulator driving a time-proportioned Peltier.
//!
//! The controller works in "cooling" orientation: error is `measurement -
//! setpoint`, so a chamber that is too warm produces a positive output. The
//! heating orientation negates the error. Output is a duty percentage in
//! `[0, 100]` that [`duty_to_activation`] turns into an ON interval at the
//! start of each actuation window.

mod autotune;
mod schedule;

pub use autotune::{
    relay_autotune, relay_autotune_with, ultimate_gain, ziegler_nichols, AutotuneResult,
    RelayDiagnostics, RelayPlant, RelaySettings, TuneError,
};
pub use schedule::{schedule_setpoint, Mode, SetpointSchedule, TimeOfDay, TimeOfDayError};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum PidError {
    #[error("non-finite {0}")]
    NonFinite(&'static str),
    #[error("sample interval must be positive, got {0}")]
    BadInterval(f64),
    #[error("invalid gains: {0}")]
    BadGains(&'static str),
    #[error("invalid control config: {0}")]
    BadConfig(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PidGains {
    /// %duty per °C.
    pub kp: f64,
    /// %duty per °C·s.
    pub ki: f64,
    /// %duty per °C/s.
    pub kd: f64,
}

impl PidGains {
    pub fn new(kp: f64, ki: f64, kd: f64) -> Self {
        Self { kp, ki, kd }
    }

    pub fn validate(&self) -> Result<(), PidError> {
        let g = [self.kp, self.ki, self.kd];
        if g.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(PidError::BadGains("gains must be finite and non-negative"));
        }
        if g.iter().all(|v| *v == 0.0) {
            return Err(PidError::BadGains("at least one gain must be positive"));
        }
        Ok(())
    }
}

/// Which way the Peltier pumps heat.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    #[default]
    Cooling,
    Heating,
}

impl Direction {
    fn sign(self) -> f64 {
        match self {
            Direction::Cooling => 1.0,
            Direction::Heating => -1.0,
        }
    }
}

/// Controller memory between updates.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PidState {
    /// Accumulated error, °C·s.
    pub integral: f64,
    pub last_measurement_c: f64,
    /// Filtered derivative of the (oriented) measurement, °C/s.
    pub derivative: f64,
    /// The PID_value of the last update, %.
    pub last_output_pct: f64,
    pub initialized: bool,
}

impl PidState {
    /// Clears the accumulated terms but keeps the output for display.
    pub fn reset(&mut self) {
        *self = PidState {
            last_output_pct: self.last_output_pct,
            ..PidState::default()
        };
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControlConfig {
    pub sample_period_s: f64,
    /// Time-proportioning window, an integer multiple of the sample period.
    pub window_s: f64,
    pub integral_min: f64,
    pub integral_max: f64,
    /// Weight of the newest raw derivative in the first-order filter.
    pub derivative_filter_alpha: f64,
}

impl Default for ControlConfig {
    fn default() -> Self {
        Self {
            sample_period_s: 1.0,
            window_s: 10.0,
            integral_min: -300.0,
            integral_max: 300.0,
            derivative_filter_alpha: 0.2,
        }
    }
}

impl ControlConfig {
    pub fn validate(&self) -> Result<(), PidError> {
        if !(self.sample_period_s.is_finite() && self.sample_period_s > 0.0) {
            return Err(PidError::BadConfig("sample_period_s must be > 0"));
        }
        let ratio = self.window_s / self.sample_period_s;
        if !(ratio >= 1.0 && (ratio - ratio.round()).abs() < 1e-9) {
            return Err(PidError::BadConfig(
                "window_s must be an integer multiple of sample_period_s",
            ));
        }
        if !(self.integral_min <= 0.0 && self.integral_max >= 0.0) {
            return Err(PidError::BadConfig("integral clamp must contain zero"));
        }
        if !(self.derivative_filter_alpha > 0.0 && self.derivative_filter_alpha <= 1.0) {
            return Err(PidError::BadConfig("derivative_filter_alpha must be in (0, 1]"));
        }
        Ok(())
    }

    /// Control cycles per actuation window.
    pub fn window_cycles(&self) -> u32 {
        (self.window_s / self.sample_period_s).round() as u32
    }
}

/// One controller update in cooling orientation.
pub fn pid_update(
    gains: &PidGains,
    state: &PidState,
    setpoint_c: f64,
    measurement_c: f64,
    dt_s: f64,
    config: &ControlConfig,
) -> Result<(f64, PidState), PidError> {
    pid_update_directed(
        gains,
        state,
        setpoint_c,
        measurement_c,
        dt_s,
        config,
        Direction::Cooling,
    )
}

/// One controller update; `Heating` negates the error and the derivative.
pub fn pid_update_directed(
    gains: &PidGains,
    state: &PidState,
    setpoint_c: f64,
    measurement_c: f64,
    dt_s: f64,
    config: &ControlConfig,
    direction: Direction,
) -> Result<(f64, PidState), PidError> {
    if !measurement_c.is_finite() {
        return Err(PidError::NonFinite("measurement"));
    }
    if !setpoint_c.is_finite() {
        return Err(PidError::NonFinite("setpoint"));
    }
    if !(dt_s.is_finite() && dt_s > 0.0) {
        return Err(PidError::BadInterval(dt_s));
    }
    let s = direction.sign();
    let error = s * (measurement_c - setpoint_c);
    let integral = (state.integral + error * dt_s).clamp(config.integral_min, config.integral_max);

    // Derivative on measurement only, so setpoint steps cause no kick.
    let derivative = if state.initialized {
        let raw = s * (measurement_c - state.last_measurement_c) / dt_s;
        let alpha = config.derivative_filter_alpha;
        alpha * raw + (1.0 - alpha) * state.derivative
    } else {
        0.0
    };

    let output = (gains.kp * error + gains.ki * integral + gains.kd * derivative).clamp(0.0, 100.0);
    Ok((
        output,
        PidState {
            integral,
            last_measurement_c: measurement_c,
            derivative,
            last_output_pct: output,
            initialized: true,
        },
    ))
}

/// Number of sample periods the Peltier is ON at the start of a window.
pub fn activation_cycles(pid_value_pct: f64, config: &ControlConfig) -> u32 {
    let pct = pid_value_pct.clamp(0.0, 100.0);
    let cycles = pct / 100.0 * config.window_s / config.sample_period_s;
    // round half up
    ((cycles + 0.5).floor() as u32).min(config.window_cycles())
}

/// ON time within each window, in seconds.
pub fn duty_to_activation(pid_value_pct: f64, config: &ControlConfig) -> f64 {
    f64::from(activation_cycles(pid_value_pct, config)) * config.sample_period_s
}
