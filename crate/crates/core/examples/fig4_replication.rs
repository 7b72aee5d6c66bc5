use std::path::PathBuf;

use alive::scenario::{load_scenario, run_to_dir};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let root = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    let spec = load_scenario(root.join("scenarios/fig4.scenario"))?;
    let out_dir = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("alive-fig4"));
    let (out, paths) = run_to_dir(spec, &out_dir, None)?;
    println!("gains: {:?}", out.gains);
    println!("{}", out.stats);
    println!("wall time: {:.2?}", out.wall_time);
    println!("trace: {}", paths.trace.display());
    Ok(())
}
