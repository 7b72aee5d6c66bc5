use serde::{Deserialize, Serialize};

/// Electrical model of the Peltier supply and battery pack.
///
/// The element is rated 12 V / 6 A, so an ON Peltier draws 72 W.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PowerModel {
    pub bus_voltage_v: f64,
    pub peltier_current_a: f64,
    /// Controller, sensors, radio.
    pub idle_power_w: f64,
    pub battery_capacity_wh: f64,
    pub on_grid: bool,
}

impl Default for PowerModel {
    fn default() -> Self {
        Self {
            bus_voltage_v: 12.0,
            peltier_current_a: 6.0,
            idle_power_w: 2.0,
            battery_capacity_wh: 500.0,
            on_grid: true,
        }
    }
}

impl PowerModel {
    pub fn validate(&self) -> Result<(), String> {
        let v = [
            self.bus_voltage_v,
            self.peltier_current_a,
            self.idle_power_w,
            self.battery_capacity_wh,
        ];
        if v.iter().any(|x| !(x.is_finite() && *x > 0.0)) {
            return Err("power model values must be finite and > 0".into());
        }
        Ok(())
    }

    pub fn peltier_power_w(&self) -> f64 {
        self.bus_voltage_v * self.peltier_current_a
    }

    /// Instantaneous draw, W.
    pub fn power_w(&self, peltier_on: bool) -> f64 {
        self.idle_power_w + if peltier_on { self.peltier_power_w() } else { 0.0 }
    }

    /// Bus current as the current sensor would report it, A.
    pub fn bus_current_a(&self, peltier_on: bool) -> f64 {
        self.power_w(peltier_on) / self.bus_voltage_v
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatteryStep {
    pub soc_pct: f64,
    /// Battery exhausted; the Peltier must stay off.
    pub dead: bool,
}

/// Drains the battery for `dt_s` seconds. On grid power the charge is untouched.
pub fn battery_step(power: &PowerModel, soc_pct: f64, peltier_on: bool, dt_s: f64) -> BatteryStep {
    if power.on_grid {
        return BatteryStep {
            soc_pct,
            dead: false,
        };
    }
    let used_pct = 100.0 * power.power_w(peltier_on) * dt_s / (3600.0 * power.battery_capacity_wh);
    let soc = (soc_pct - used_pct).max(0.0);
    BatteryStep {
        soc_pct: soc,
        dead: soc <= 0.0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_power_keeps_charge() {
        let p = PowerModel::default();
        assert_eq!(battery_step(&p, 80.0, true, 3600.0).soc_pct, 80.0);
    }

    #[test]
    fn half_duty_hour_uses_ten_percent() {
        let p = PowerModel {
            on_grid: false,
            battery_capacity_wh: 380.0,
            ..PowerModel::default()
        };
        // ON for the first 5 s of every 10 s window, one hour
        let mut soc = 100.0;
        for k in 0..3600 {
            soc = battery_step(&p, soc, k % 10 < 5, 1.0).soc_pct;
        }
        assert!((soc - 90.0).abs() < 1e-9, "{soc}");
    }

    #[test]
    fn floors_at_zero() {
        let p = PowerModel {
            on_grid: false,
            battery_capacity_wh: 1.0,
            ..PowerModel::default()
        };
        let s = battery_step(&p, 0.5, true, 3600.0);
        assert_eq!(s.soc_pct, 0.0);
        assert!(s.dead);
    }

    #[test]
    fn current_and_power_agree() {
        let p = PowerModel::default();
        assert_eq!(p.peltier_power_w(), 72.0);
        assert!((p.bus_current_a(true) * p.bus_voltage_v - 74.0).abs() < 1e-12);
    }
}
