//! Lumped two-mass model of the insulated chamber.
//!
//! The chamber air exchanges heat with the room through the wall (with a much
//! larger conductance while the door is open), with the vaccine pouch through
//! a fixed conductance, and with the Peltier element, which removes (or, in
//! heating mode, injects) `duty * q_pelt_max` watts.
//!
//! ```text
//! c_air   dT_air/dt   = ua_wall (T_amb - T_air) + ua_pouch (T_pouch - T_air) - s duty q_pelt_max
//! c_pouch dT_pouch/dt = ua_pouch (T_air - T_pouch)
//! ```
//!
//! `s` is `+1` when cooling and `-1` when heating. Inputs are held constant
//! across a step and the system is advanced with classic fixed-step RK4.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Largest step accepted by [`plant_step`], in seconds.
pub const MAX_STEP_S: f64 = 5.0;

#[derive(Debug, Error, PartialEq)]
pub enum PlantError {
    #[error("non-finite temperature in plant {0}")]
    NonFinite(&'static str),
    #[error("step {0} s outside (0, {MAX_STEP_S}]")]
    StepOutOfRange(f64),
    #[error("invalid plant parameters: {0}")]
    InvalidParams(&'static str),
    #[error("duty {0} outside [0, 1]")]
    DutyOutOfRange(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlantParams {
    /// Heat capacity of the chamber air and internals, J/K.
    pub c_air: f64,
    /// Heat capacity of the representative vaccine pouch, J/K.
    pub c_pouch: f64,
    /// Wall conductance with the door closed, W/K.
    pub ua_wall_closed: f64,
    /// Wall conductance with the door open, W/K.
    pub ua_wall_open: f64,
    /// Air to pouch conductance, W/K.
    pub ua_pouch: f64,
    /// Net heat pumped by the Peltier at full duty, W.
    pub q_pelt_max: f64,
    pub t_min_c: f64,
    pub t_max_c: f64,
}

impl Default for PlantParams {
    fn default() -> Self {
        Self {
            c_air: 5000.0,
            c_pouch: 2000.0,
            ua_wall_closed: 1.0,
            ua_wall_open: 15.0,
            ua_pouch: 2.0,
            q_pelt_max: 60.0,
            t_min_c: 2.0,
            t_max_c: 98.0,
        }
    }
}

impl PlantParams {
    pub fn validate(&self) -> Result<(), PlantError> {
        let positive = [
            self.c_air,
            self.c_pouch,
            self.ua_wall_closed,
            self.ua_wall_open,
            self.ua_pouch,
            self.q_pelt_max,
        ];
        if positive.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(PlantError::InvalidParams(
                "capacities, conductances and q_pelt_max must be finite and > 0",
            ));
        }
        if self.ua_wall_open <= self.ua_wall_closed {
            return Err(PlantError::InvalidParams(
                "ua_wall_open must exceed ua_wall_closed",
            ));
        }
        if !(self.t_min_c.is_finite() && self.t_max_c.is_finite() && self.t_min_c < self.t_max_c) {
            return Err(PlantError::InvalidParams("t_min_c must be below t_max_c"));
        }
        Ok(())
    }

    pub fn ua_wall(&self, door_open: bool) -> f64 {
        if door_open {
            self.ua_wall_open
        } else {
            self.ua_wall_closed
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThermalState {
    pub t_air_c: f64,
    pub t_pouch_c: f64,
    pub door_open: bool,
    pub t_ambient_c: f64,
}

impl ThermalState {
    /// Everything at the same temperature, door closed.
    pub fn uniform(t_c: f64, t_ambient_c: f64) -> Self {
        Self {
            t_air_c: t_c,
            t_pouch_c: t_c,
            door_open: false,
            t_ambient_c,
        }
    }

    fn check_finite(&self) -> Result<(), PlantError> {
        if !self.t_air_c.is_finite() {
            return Err(PlantError::NonFinite("t_air_c"));
        }
        if !self.t_pouch_c.is_finite() {
            return Err(PlantError::NonFinite("t_pouch_c"));
        }
        if !self.t_ambient_c.is_finite() {
            return Err(PlantError::NonFinite("t_ambient_c"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlantInput {
    /// Peltier duty fraction; clamped to `[0, 1]` by the plant.
    pub duty: f64,
    /// Peltier polarity reversed: heat is pumped into the chamber.
    pub heating: bool,
    pub door_open: bool,
    pub t_ambient_c: f64,
}

impl PlantInput {
    pub fn cooling(duty: f64, door_open: bool, t_ambient_c: f64) -> Self {
        Self {
            duty,
            heating: false,
            door_open,
            t_ambient_c,
        }
    }

    /// Signed heat removed from the air, W.
    fn pumped_w(&self, params: &PlantParams) -> f64 {
        let q = self.duty.clamp(0.0, 1.0) * params.q_pelt_max;
        if self.heating {
            -q
        } else {
            q
        }
    }
}

/// Result of one plant step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub state: ThermalState,
    /// The envelope clamp at `t_min_c`/`t_max_c` was applied.
    pub clamped: bool,
}

/// Time derivatives `(dT_air/dt, dT_pouch/dt)` in K/s.
pub fn rates(
    t_air_c: f64,
    t_pouch_c: f64,
    input: &PlantInput,
    params: &PlantParams,
) -> (f64, f64) {
    let ua_wall = params.ua_wall(input.door_open);
    let to_pouch = params.ua_pouch * (t_pouch_c - t_air_c);
    let d_air = (ua_wall * (input.t_ambient_c - t_air_c) + to_pouch - input.pumped_w(params))
        / params.c_air;
    let d_pouch = -to_pouch / params.c_pouch;
    (d_air, d_pouch)
}

/// Advances the plant by `dt_s` seconds with the input held constant.
pub fn plant_step(
    state: &ThermalState,
    input: &PlantInput,
    params: &PlantParams,
    dt_s: f64,
) -> Result<StepOutcome, PlantError> {
    if !(dt_s > 0.0 && dt_s <= MAX_STEP_S) {
        return Err(PlantError::StepOutOfRange(dt_s));
    }
    state.check_finite()?;
    if !input.t_ambient_c.is_finite() {
        return Err(PlantError::NonFinite("t_ambient_c"));
    }
    if !input.duty.is_finite() {
        return Err(PlantError::DutyOutOfRange(input.duty));
    }

    let f = |a: f64, p: f64| rates(a, p, input, params);
    let (a0, p0) = (state.t_air_c, state.t_pouch_c);
    let k1 = f(a0, p0);
    let k2 = f(a0 + 0.5 * dt_s * k1.0, p0 + 0.5 * dt_s * k1.1);
    let k3 = f(a0 + 0.5 * dt_s * k2.0, p0 + 0.5 * dt_s * k2.1);
    let k4 = f(a0 + dt_s * k3.0, p0 + dt_s * k3.1);
    let mut air = a0 + dt_s / 6.0 * (k1.0 + 2.0 * k2.0 + 2.0 * k3.0 + k4.0);
    let mut pouch = p0 + dt_s / 6.0 * (k1.1 + 2.0 * k2.1 + 2.0 * k3.1 + k4.1);

    let mut clamped = false;
    for t in [&mut air, &mut pouch] {
        let c = t.clamp(params.t_min_c, params.t_max_c);
        if c != *t {
            clamped = true;
            *t = c;
        }
    }

    Ok(StepOutcome {
        state: ThermalState {
            t_air_c: air,
            t_pouch_c: pouch,
            door_open: input.door_open,
            t_ambient_c: input.t_ambient_c,
        },
        clamped,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Equilibrium {
    pub t_air_c: f64,
    pub t_pouch_c: f64,
    /// The unconstrained fixed point lay outside the envelope.
    pub clamped: bool,
}

/// Fixed point of the model under constant cooling at `duty`.
pub fn equilibrium(
    params: &PlantParams,
    duty: f64,
    t_ambient_c: f64,
    door_open: bool,
) -> Result<Equilibrium, PlantError> {
    equilibrium_for(
        params,
        &PlantInput {
            duty,
            heating: false,
            door_open,
            t_ambient_c,
        },
    )
}

/// Fixed point for an arbitrary constant input (either polarity).
pub fn equilibrium_for(params: &PlantParams, input: &PlantInput) -> Result<Equilibrium, PlantError> {
    if !(0.0..=1.0).contains(&input.duty) {
        return Err(PlantError::DutyOutOfRange(input.duty));
    }
    if !input.t_ambient_c.is_finite() {
        return Err(PlantError::NonFinite("t_ambient_c"));
    }
    // At rest the pouch carries no heat flow, so both masses sit where the
    // wall leak balances the pumped heat.
    let raw = input.t_ambient_c - input.pumped_w(params) / params.ua_wall(input.door_open);
    let t = raw.clamp(params.t_min_c, params.t_max_c);
    Ok(Equilibrium {
        t_air_c: t,
        t_pouch_c: t,
        clamped: t != raw,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn closed(duty: f64) -> PlantInput {
        PlantInput::cooling(duty, false, 24.0)
    }

    #[test]
    fn ambient_equilibrium_is_fixed_point() {
        let p = PlantParams::default();
        let s = ThermalState::uniform(24.0, 24.0);
        for dt in [0.1, 1.0, 5.0] {
            let out = plant_step(&s, &closed(0.0), &p, dt).unwrap();
            assert_eq!(out.state, s);
            assert!(!out.clamped);
        }
    }

    #[test]
    fn steady_state_matches_closed_form() {
        let p = PlantParams::default();
        let eq = equilibrium(&p, 0.15, 24.0, false).unwrap();
        assert!((eq.t_air_c - 15.0).abs() < 1e-12);
        assert_eq!(eq.t_air_c, eq.t_pouch_c);

        let mut s = ThermalState::uniform(24.0, 24.0);
        for _ in 0..100_000 {
            s = plant_step(&s, &closed(0.15), &p, 1.0).unwrap().state;
        }
        assert!((s.t_air_c - 15.0).abs() < 1e-4, "{s:?}");
        assert!((s.t_pouch_c - 15.0).abs() < 1e-4, "{s:?}");
    }

    #[test]
    fn equilibrium_edge_cases() {
        let p = PlantParams::default();
        let eq = equilibrium(&p, 0.0, 24.0, false).unwrap();
        assert_eq!((eq.t_air_c, eq.t_pouch_c, eq.clamped), (24.0, 24.0, false));

        let eq = equilibrium(&p, 1.0, 24.0, false).unwrap();
        assert_eq!((eq.t_air_c, eq.t_pouch_c, eq.clamped), (2.0, 2.0, true));

        assert!(equilibrium(&p, 1.5, 24.0, false).is_err());
    }

    #[test]
    fn full_duty_clamps_at_floor() {
        let p = PlantParams::default();
        let mut s = ThermalState::uniform(2.05, 24.0);
        let mut hit = false;
        for _ in 0..100 {
            let out = plant_step(&s, &closed(1.0), &p, 1.0).unwrap();
            hit |= out.clamped;
            s = out.state;
            assert!(s.t_air_c >= p.t_min_c);
        }
        assert!(hit);
    }

    #[test]
    fn rejects_bad_arguments() {
        let p = PlantParams::default();
        let s = ThermalState::uniform(20.0, 24.0);
        assert_eq!(
            plant_step(&s, &closed(0.0), &p, 0.0),
            Err(PlantError::StepOutOfRange(0.0))
        );
        assert_eq!(
            plant_step(&s, &closed(0.0), &p, 5.5),
            Err(PlantError::StepOutOfRange(5.5))
        );
        let bad = ThermalState {
            t_air_c: f64::NAN,
            ..s
        };
        assert!(matches!(
            plant_step(&bad, &closed(0.0), &p, 1.0),
            Err(PlantError::NonFinite(_))
        ));
        assert!(plant_step(&s, &PlantInput::cooling(0.0, false, f64::INFINITY), &p, 1.0).is_err());
    }

    #[test]
    fn door_speeds_relaxation() {
        let p = PlantParams::default();
        let (shut, _) = rates(15.0, 15.0, &closed(0.0), &p);
        let (open, _) = rates(15.0, 15.0, &PlantInput::cooling(0.0, true, 24.0), &p);
        assert!(open > shut && shut > 0.0);
    }

    #[test]
    fn heating_warms_toward_mirror_equilibrium() {
        let p = PlantParams::default();
        let input = PlantInput {
            duty: 0.1,
            heating: true,
            door_open: false,
            t_ambient_c: 24.0,
        };
        let eq = equilibrium_for(&p, &input).unwrap();
        assert!((eq.t_air_c - 30.0).abs() < 1e-12);
    }

    #[test]
    fn params_validation() {
        assert!(PlantParams::default().validate().is_ok());
        let p = PlantParams {
            ua_wall_open: 0.5,
            ..PlantParams::default()
        };
        assert!(p.validate().is_err());
        let p = PlantParams {
            c_air: 0.0,
            ..PlantParams::default()
        };
        assert!(p.validate().is_err());
    }
}
