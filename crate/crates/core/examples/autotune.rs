//! Relay-autotunes the default plant, then closes the loop with the tuned
//! gains and reports how long the chamber takes to pull down from room
//! temperature to 15 °C.

use alive::pid::{SetpointSchedule, TimeOfDay};
use alive::scenario::{autotune, ScenarioSpec, SimOptions, Simulation};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut spec = ScenarioSpec::with_duration(5400.0);
    spec.initial_temp_c = Some(24.0);
    spec.schedule = SetpointSchedule {
        day_start: TimeOfDay::hm(0, 0),
        night_start: TimeOfDay::hm(23, 59),
        day_setpoint_c: 15.0,
        night_setpoint_c: 15.0,
    };

    let tuned = autotune(&spec)?;
    let d = tuned.diagnostics;
    println!(
        "relay cycle: a = {:.3} °C, Pu = {:.1} s, Ku = {:.2} over {} cycles (spread {:.1} %)",
        d.amplitude_c,
        d.period_s,
        d.ultimate_gain,
        d.cycles,
        100.0 * d.period_variation
    );
    println!("gains: {:?}", tuned.gains);

    let mut sim = Simulation::new(spec, tuned.gains, SimOptions::default())?;
    let mut air = Vec::new();
    while !sim.is_done() {
        sim.step()?;
        air.push(sim.truth().t_air_c);
    }
    let settled = air
        .iter()
        .rposition(|t| (t - 15.0).abs() > 0.5)
        .map_or(0, |i| i + 1);
    let tail = &air[settled..];
    let lo = tail.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = tail.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    println!("settled within ±0.5 °C after {settled} s ({:.1} min)", settled as f64 / 60.0);
    println!("post-settling peak-to-peak: {:.3} °C", hi - lo);
    Ok(())
}
