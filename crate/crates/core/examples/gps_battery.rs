//! A battery-powered delivery leg: position follows the waypoint route and
//! the state of charge falls with Peltier use.

use std::path::PathBuf;

use alive::scenario::{load_scenario, resolve_gains, SimOptions, Simulation};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let root = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    let spec = load_scenario(root.join("scenarios/route.scenario"))?;
    let gains = resolve_gains(&spec)?;
    let out = Simulation::new(spec, gains, SimOptions::default())?.run()?;

    println!("time_s  lat        lon        soc_pct  pouch_c");
    for row in out.rows.iter().filter(|r| (r.time_s as u64).is_multiple_of(600)) {
        println!(
            "{:>6}  {:.6}  {:.6}  {:>7.2}  {:.3}",
            row.time_s, row.lat, row.lon, row.soc_pct, row.t_pouch_c
        );
    }
    println!("energy used: {:.1} Wh", out.stats.energy_wh);
    Ok(())
}
