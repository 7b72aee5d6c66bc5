//! A probe failure during steady regulation. Faulted samples carry -1 and
//! the fault flag; the Peltier keeps its last plan until readings return.

use std::path::PathBuf;

use alive::scenario::{load_scenario, resolve_gains, SimOptions, Simulation};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let root = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    let spec = load_scenario(root.join("scenarios/sensor_fault.scenario"))?;
    let fault = spec.sensor_fault_windows[0];
    let gains = resolve_gains(&spec)?;
    let mut sim = Simulation::new(spec, gains, SimOptions::default())?;

    println!("time_s  reported_air  true_air  flags");
    while !sim.is_done() {
        let t = sim.time_s();
        let Some(_) = sim.step()? else { continue };
        if t >= fault.start_s - 60.0 && t < fault.end_s + 120.0 && (t as u64).is_multiple_of(60) {
            let sample = sim
                .plane()
                .and_then(|p| p.lock().unwrap().store().latest(&sim.device().state.device_id).cloned())
                .expect("sample stored");
            println!(
                "{t:>6}  {:>12.2}  {:>8.3}  {:#04b}",
                sample.t_chamber_c,
                sim.truth().t_air_c,
                sample.flags.bits()
            );
        }
    }
    let out = sim.finish()?;
    println!("{}", out.stats);
    Ok(())
}
