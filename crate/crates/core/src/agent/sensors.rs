use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::clock::{any_contains, Interval};
use crate::protocol::FAULT_SENTINEL;
use crate::thermal::ThermalState;

/// Simulated temperature/humidity probe.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SensorModel {
    pub noise_sigma_c: f64,
    pub noise_sigma_rh: f64,
    /// Reading resolution, °C (also applied to %RH).
    pub quantum: f64,
    /// Reads inside these spans fail.
    pub fault_windows: Vec<Interval>,
}

impl Default for SensorModel {
    fn default() -> Self {
        Self {
            noise_sigma_c: 0.1,
            noise_sigma_rh: 0.5,
            quantum: 0.01,
            fault_windows: Vec::new(),
        }
    }
}

impl SensorModel {
    pub fn noiseless() -> Self {
        Self {
            noise_sigma_c: 0.0,
            noise_sigma_rh: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.noise_sigma_c >= 0.0 && self.noise_sigma_rh >= 0.0) {
            return Err("noise sigmas must be >= 0".into());
        }
        if !(self.quantum > 0.0 && self.quantum.is_finite()) {
            return Err("quantum must be > 0".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SensorReading {
    pub t_chamber_c: f64,
    pub t_pouch_c: f64,
    pub rh_pct: f64,
    /// Authoritative failure signal; the value fields then hold -1.
    pub fault: bool,
}

impl SensorReading {
    pub fn is_valid(&self) -> bool {
        !self.fault
    }
}

fn quantize(x: f64, q: f64) -> f64 {
    (x / q).round() * q
}

/// Samples the probes. Noise is drawn on every call, faulted or not, so a
/// fault window does not shift the random stream of later reads.
pub fn read_sensors<R: Rng + ?Sized>(
    truth: &ThermalState,
    humidity_pct: f64,
    model: &SensorModel,
    rng: &mut R,
    time_s: f64,
) -> SensorReading {
    let temp_noise = Normal::new(0.0, model.noise_sigma_c).expect("sigma validated");
    let rh_noise = Normal::new(0.0, model.noise_sigma_rh).expect("sigma validated");
    let n_air = temp_noise.sample(rng);
    let n_pouch = temp_noise.sample(rng);
    let n_rh = rh_noise.sample(rng);

    if any_contains(&model.fault_windows, time_s) {
        return SensorReading {
            t_chamber_c: FAULT_SENTINEL,
            t_pouch_c: FAULT_SENTINEL,
            rh_pct: FAULT_SENTINEL,
            fault: true,
        };
    }
    SensorReading {
        t_chamber_c: quantize(truth.t_air_c + n_air, model.quantum),
        t_pouch_c: quantize(truth.t_pouch_c + n_pouch, model.quantum),
        rh_pct: quantize(humidity_pct + n_rh, model.quantum).clamp(0.0, 100.0),
        fault: false,
    }
}
