//! Open-loop behaviour of the chamber model: pull-down at full cooling, a
//! door opening, and the analytic fixed point.

use alive::thermal::{equilibrium, plant_step, PlantInput, PlantParams, ThermalState};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let params = PlantParams::default();
    let ambient = 24.0;
    let mut state = ThermalState::uniform(ambient, ambient);

    println!("time_s  air_c    pouch_c  door");
    for t in 0..=14_400u32 {
        let door = (7200..7500).contains(&t);
        if t % 900 == 0 || t == 7200 || t == 7500 {
            println!(
                "{t:>6}  {:>7.3}  {:>7.3}  {}",
                state.t_air_c,
                state.t_pouch_c,
                if door { "open" } else { "" }
            );
        }
        let input = PlantInput::cooling(1.0, door, ambient);
        state = plant_step(&state, &input, &params, 1.0)?.state;
    }

    for duty in [0.25, 0.5, 1.0] {
        let eq = equilibrium(&params, duty, ambient, false)?;
        println!(
            "equilibrium at duty {duty:.2}: {:.2} °C{}",
            eq.t_air_c,
            if eq.clamped { " (clamped)" } else { "" }
        );
    }
    Ok(())
}
