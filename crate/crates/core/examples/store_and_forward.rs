//! A 30 minute uplink outage: the device keeps sampling into its send
//! buffer and replays the backlog when the link returns. A second run with
//! a deliberately small buffer shows what gets dropped.

use std::collections::BTreeSet;
use std::path::PathBuf;

use alive::agent::MemoryLog;
use alive::protocol::{decode_frame, Frame};
use alive::scenario::{load_scenario, resolve_gains, SimOptions, Simulation};

fn logged_seqs(log: &MemoryLog) -> BTreeSet<u64> {
    log.lines()
        .iter()
        .filter_map(|l| match decode_frame(l) {
            Ok(Frame::Sample(s)) => Some(s.seq),
            _ => None,
        })
        .collect()
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let root = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    let spec = load_scenario(root.join("scenarios/outage.scenario"))?;
    let gains = resolve_gains(&spec)?;

    for capacity in [spec.telemetry.buffer_capacity, 50] {
        let mut spec = spec.clone();
        spec.telemetry.buffer_capacity = capacity;
        let log = MemoryLog::new();
        let options = SimOptions {
            log: Some(Box::new(log.clone())),
            ..SimOptions::default()
        };
        let mut sim = Simulation::new(spec.clone(), gains, options)?;
        let outage = spec.outage_windows[0];
        sim.run_until(outage.end_s)?;
        let backlog = sim.device().buffer.len();
        while !sim.is_done() {
            sim.step()?;
        }
        let plane = sim.plane().cloned().expect("embedded plane");
        let out = sim.finish()?;

        let device = logged_seqs(&log);
        let server: BTreeSet<u64> = plane
            .lock()
            .unwrap()
            .store()
            .seqs(&spec.device_id)
            .into_iter()
            .collect();
        let missing = device.difference(&server).count();
        println!("buffer capacity {capacity}:");
        println!("  backlog when the link returned: {backlog} frames");
        println!(
            "  device logged {} samples, server holds {}, missing {missing}",
            device.len(),
            server.len()
        );
        println!(
            "  sent {} acked {} in buffer {} dropped {}",
            out.stats.frames_sent,
            out.stats.frames_acked,
            out.stats.frames_in_buffer,
            out.stats.frames_dropped
        );
    }
    Ok(())
}
