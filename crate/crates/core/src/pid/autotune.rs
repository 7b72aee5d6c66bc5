//! Relay-feedback auto-tuning.
//!
//! A relay with a small hysteresis band switches the Peltier between
//! `bias + d` and `bias - d` on the sign of the error. Once the loop settles
//! into a limit cycle, its half peak-to-peak amplitude `a` and period `Pu`
//! give the ultimate gain `Ku = 4 d / (pi a)`, and the classic
//! Ziegler-Nichols ultimate-cycle rules map `(Ku, Pu)` to PID gains.

use std::f64::consts::PI;

use thiserror::Error;

use super::PidGains;

/// What the tuner needs from the process.
pub trait RelayPlant {
    /// Current value of the controlled temperature, °C.
    fn measurement(&self) -> f64;
    /// Holds `duty_pct` for `dt_s` seconds.
    fn advance(&mut self, duty_pct: f64, dt_s: f64);
}

#[derive(Debug, Error, PartialEq)]
pub enum TuneError {
    #[error("no sustained oscillation: {0}")]
    NoOscillation(String),
    #[error("invalid relay settings: {0}")]
    BadSettings(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RelaySettings {
    /// Relay amplitude `d`, %duty.
    pub amplitude_pct: f64,
    /// Centre of the relay; `None` uses `amplitude_pct` (an on/off relay).
    pub bias_pct: Option<f64>,
    /// Half-width of the switching band around the setpoint, °C.
    pub hysteresis_c: f64,
    pub setpoint_c: f64,
    pub sample_period_s: f64,
    /// The relay may only switch on multiples of this period (the actuation window).
    pub decision_period_s: f64,
    pub horizon_s: f64,
    /// Full cycles thrown away before measuring.
    pub discard_cycles: usize,
    pub min_cycles: usize,
    /// Maximum `(max - min) / mean` spread of the measured periods.
    pub max_period_variation: f64,
}

impl Default for RelaySettings {
    fn default() -> Self {
        Self {
            amplitude_pct: 50.0,
            bias_pct: None,
            hysteresis_c: 0.35,
            setpoint_c: 15.0,
            sample_period_s: 1.0,
            decision_period_s: 1.0,
            horizon_s: 4.0 * 3600.0,
            discard_cycles: 1,
            min_cycles: 3,
            max_period_variation: 0.1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RelayDiagnostics {
    /// Half peak-to-peak oscillation amplitude `a`, °C.
    pub amplitude_c: f64,
    /// Oscillation period `Pu`, s.
    pub period_s: f64,
    /// `Ku`, %duty per °C.
    pub ultimate_gain: f64,
    pub cycles: usize,
    pub period_variation: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AutotuneResult {
    pub gains: PidGains,
    pub diagnostics: RelayDiagnostics,
}

pub fn ultimate_gain(relay_amplitude_pct: f64, oscillation_amplitude_c: f64) -> f64 {
    4.0 * relay_amplitude_pct / (PI * oscillation_amplitude_c)
}

/// Classic ultimate-cycle PID rule.
pub fn ziegler_nichols(ultimate_gain: f64, period_s: f64) -> PidGains {
    let kp = 0.6 * ultimate_gain;
    PidGains {
        kp,
        ki: 2.0 * kp / period_s,
        kd: kp * period_s / 8.0,
    }
}

pub fn relay_autotune<P: RelayPlant + ?Sized>(
    plant: &mut P,
    relay_amplitude_pct: f64,
    observation_horizon_s: f64,
) -> Result<AutotuneResult, TuneError> {
    relay_autotune_with(
        plant,
        &RelaySettings {
            amplitude_pct: relay_amplitude_pct,
            horizon_s: observation_horizon_s,
            ..RelaySettings::default()
        },
    )
}

pub fn relay_autotune_with<P: RelayPlant + ?Sized>(
    plant: &mut P,
    settings: &RelaySettings,
) -> Result<AutotuneResult, TuneError> {
    let d = settings.amplitude_pct;
    let bias = settings.bias_pct.unwrap_or(d);
    if !(d > 0.0 && d <= 100.0) {
        return Err(TuneError::BadSettings("amplitude_pct must be in (0, 100]"));
    }
    if !(settings.sample_period_s > 0.0 && settings.horizon_s > 0.0) {
        return Err(TuneError::BadSettings("sample period and horizon must be > 0"));
    }
    if settings.hysteresis_c < 0.0 {
        return Err(TuneError::BadSettings("hysteresis_c must be >= 0"));
    }
    let dt = settings.sample_period_s;
    let decide_every = ((settings.decision_period_s / dt).round() as u64).max(1);
    let steps = (settings.horizon_s / dt).floor() as u64;
    let sp = settings.setpoint_c;

    let mut trace = Vec::with_capacity(steps as usize + 1);
    let mut cooling = plant.measurement() > sp;
    trace.push(plant.measurement());
    for k in 0..steps {
        if k % decide_every == 0 {
            let e = plant.measurement() - sp;
            if e > settings.hysteresis_c {
                cooling = true;
            } else if e < -settings.hysteresis_c {
                cooling = false;
            }
        }
        let out = if cooling { bias + d } else { bias - d };
        plant.advance(out.clamp(0.0, 100.0), dt);
        trace.push(plant.measurement());
    }

    let diagnostics = analyze_cycle(&trace, dt, sp, settings)?;
    let ku = ultimate_gain(d, diagnostics.amplitude_c);
    Ok(AutotuneResult {
        gains: ziegler_nichols(ku, diagnostics.period_s),
        diagnostics: RelayDiagnostics {
            ultimate_gain: ku,
            ..diagnostics
        },
    })
}

/// Period and amplitude of the limit cycle recorded in `trace`.
fn analyze_cycle(
    trace: &[f64],
    dt: f64,
    setpoint: f64,
    settings: &RelaySettings,
) -> Result<RelayDiagnostics, TuneError> {
    // upward crossings as (sample index, interpolated time)
    let crossings: Vec<(usize, f64)> = trace
        .windows(2)
        .enumerate()
        .filter(|(_, w)| w[0] < setpoint && w[1] >= setpoint)
        .map(|(i, w)| {
            let frac = (setpoint - w[0]) / (w[1] - w[0]);
            (i + 1, (i as f64 + frac) * dt)
        })
        .collect();

    let usable = crossings.get(settings.discard_cycles..).unwrap_or(&[]);
    let cycles = usable.len().saturating_sub(1);
    if cycles < settings.min_cycles {
        return Err(TuneError::NoOscillation(format!(
            "{cycles} full cycles after discarding {}, need {}",
            settings.discard_cycles, settings.min_cycles
        )));
    }

    let periods: Vec<f64> = usable.windows(2).map(|w| w[1].1 - w[0].1).collect();
    let mean = periods.iter().sum::<f64>() / periods.len() as f64;
    let (lo, hi) = periods
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| (lo.min(*p), hi.max(*p)));
    let variation = (hi - lo) / mean;
    if variation >= settings.max_period_variation {
        return Err(TuneError::NoOscillation(format!(
            "period spread {:.1}% exceeds {:.1}%",
            variation * 100.0,
            settings.max_period_variation * 100.0
        )));
    }

    let p2p: Vec<f64> = usable
        .windows(2)
        .map(|w| {
            let seg = &trace[w[0].0..w[1].0];
            let max = seg.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let min = seg.iter().copied().fold(f64::INFINITY, f64::min);
            max - min
        })
        .collect();
    let amplitude = p2p.iter().sum::<f64>() / p2p.len() as f64 / 2.0;
    if !(amplitude > 0.0) {
        return Err(TuneError::NoOscillation("zero amplitude".into()));
    }

    Ok(RelayDiagnostics {
        amplitude_c: amplitude,
        period_s: mean,
        ultimate_gain: f64::NAN,
        cycles,
        period_variation: variation,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ultimate_gain_formula() {
        let ku = ultimate_gain(50.0, 2.0);
        assert!((ku - 31.830_988_618_379_07).abs() < 1e-9);
    }

    #[test]
    fn ziegler_nichols_mapping() {
        let g = ziegler_nichols(31.831, 600.0);
        assert!((g.kp - 19.0986).abs() < 1e-9);
        assert!((g.ki - 0.063_662).abs() < 1e-9);
        assert!((g.kd - 1432.395).abs() < 1e-9);
    }

    /// Ideal sine source that ignores the relay.
    struct Sine {
        t: f64,
        period: f64,
        amp: f64,
    }

    impl RelayPlant for Sine {
        fn measurement(&self) -> f64 {
            15.0 + self.amp * (2.0 * PI * self.t / self.period).sin()
        }
        fn advance(&mut self, _duty: f64, dt: f64) {
            self.t += dt;
        }
    }

    #[test]
    fn recovers_known_cycle() {
        let mut p = Sine {
            t: 0.3,
            period: 300.0,
            amp: 0.4,
        };
        let r = relay_autotune(&mut p, 50.0, 3000.0).unwrap();
        assert!((r.diagnostics.period_s - 300.0).abs() < 0.5);
        assert!((r.diagnostics.amplitude_c - 0.4).abs() < 1e-3);
        assert_eq!(r.diagnostics.cycles, 8);
    }

    struct Flat;

    impl RelayPlant for Flat {
        fn measurement(&self) -> f64 {
            24.0
        }
        fn advance(&mut self, _duty: f64, _dt: f64) {}
    }

    #[test]
    fn flat_response_fails() {
        assert!(matches!(
            relay_autotune(&mut Flat, 50.0, 3600.0),
            Err(TuneError::NoOscillation(_))
        ));
    }

    #[test]
    fn bad_settings() {
        assert!(matches!(
            relay_autotune(&mut Flat, 0.0, 3600.0),
            Err(TuneError::BadSettings(_))
        ));
    }
}
