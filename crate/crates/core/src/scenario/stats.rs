use std::fmt::{self, Write as _};
use std::io;

use serde::{Deserialize, Serialize};

use crate::clock::any_contains;
use crate::pid::Mode;

use super::ScenarioSpec;

pub const CSV_HEADER: [&str; 13] = [
    "time_s",
    "mode",
    "setpoint_c",
    "t_ambient_c",
    "t_air_c",
    "t_pouch_c",
    "rh_pct",
    "duty_pct",
    "pelt_on",
    "soc_pct",
    "lat",
    "lon",
    "flags",
];

/// One trace line, written for every uplinked sample. Temperatures are the
/// simulated truth, not the noisy probe values.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub time_s: f64,
    pub mode: Mode,
    pub setpoint_c: f64,
    pub t_ambient_c: f64,
    pub t_air_c: f64,
    pub t_pouch_c: f64,
    pub rh_pct: f64,
    pub duty_pct: f64,
    pub pelt_on: bool,
    pub soc_pct: f64,
    pub lat: f64,
    pub lon: f64,
    pub flags: u8,
}

fn mode_name(m: Mode) -> &'static str {
    match m {
        Mode::Day => "day",
        Mode::Night => "night",
    }
}

impl TraceRow {
    pub fn record(&self) -> [String; 13] {
        [
            format!("{}", self.time_s),
            mode_name(self.mode).to_string(),
            format!("{:.2}", self.setpoint_c),
            format!("{:.4}", self.t_ambient_c),
            format!("{:.4}", self.t_air_c),
            format!("{:.4}", self.t_pouch_c),
            format!("{:.2}", self.rh_pct),
            format!("{:.4}", self.duty_pct),
            u8::from(self.pelt_on).to_string(),
            format!("{:.4}", self.soc_pct),
            format!("{:.6}", self.lat),
            format!("{:.6}", self.lon),
            self.flags.to_string(),
        ]
    }

    pub fn from_record(rec: &csv::StringRecord) -> Result<Self, String> {
        let f = |i: usize| -> Result<f64, String> {
            rec.get(i)
                .ok_or_else(|| format!("missing column {}", CSV_HEADER[i]))?
                .parse::<f64>()
                .map_err(|e| format!("{}: {e}", CSV_HEADER[i]))
        };
        let mode = match rec.get(1) {
            Some("day") => Mode::Day,
            Some("night") => Mode::Night,
            other => return Err(format!("bad mode {other:?}")),
        };
        Ok(TraceRow {
            time_s: f(0)?,
            mode,
            setpoint_c: f(2)?,
            t_ambient_c: f(3)?,
            t_air_c: f(4)?,
            t_pouch_c: f(5)?,
            rh_pct: f(6)?,
            duty_pct: f(7)?,
            pelt_on: f(8)? != 0.0,
            soc_pct: f(9)?,
            lat: f(10)?,
            lon: f(11)?,
            flags: f(12)? as u8,
        })
    }
}

/// Reads a trace written by the harness.
pub fn read_trace<R: io::Read>(reader: R) -> Result<Vec<TraceRow>, String> {
    let mut rdr = csv::Reader::from_reader(reader);
    rdr.records()
        .map(|r| r.map_err(|e| e.to_string()).and_then(|r| TraceRow::from_record(&r)))
        .collect()
}

/// Pouch-temperature statistics over one mode's steady window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModeStats {
    pub mean_c: f64,
    /// Sample standard deviation (n - 1).
    pub sd_c: f64,
    pub min_c: f64,
    pub max_c: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryStats {
    /// `None` when nothing is left after transient exclusion.
    pub day: Option<ModeStats>,
    pub night: Option<ModeStats>,
    pub energy_wh: f64,
    pub peltier_duty_pct: f64,
    pub frames_sent: u64,
    pub frames_acked: u64,
    pub frames_in_buffer: u64,
    pub frames_dropped: u64,
    pub setpoint_exclusion_s: f64,
    pub door_exclusion_s: f64,
}

pub fn mean(xs: &[f64]) -> Option<f64> {
    (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
}

/// Sample standard deviation; needs at least two points.
pub fn sample_sd(xs: &[f64]) -> Option<f64> {
    if xs.len() < 2 {
        return None;
    }
    let m = mean(xs)?;
    let ss: f64 = xs.iter().map(|x| (x - m) * (x - m)).sum();
    Some((ss / (xs.len() - 1) as f64).sqrt())
}

pub fn mode_stats(xs: &[f64]) -> Option<ModeStats> {
    Some(ModeStats {
        mean_c: mean(xs)?,
        sd_c: sample_sd(xs)?,
        min_c: xs.iter().copied().fold(f64::INFINITY, f64::min),
        max_c: xs.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        n: xs.len(),
    })
}

/// Rows inside the steady windows: not within `setpoint_exclusion_s` of the
/// start or of a setpoint change, not while a door is open and not within
/// `door_exclusion_s` after it closes.
pub fn steady_mask(trace: &[TraceRow], spec: &ScenarioSpec) -> Vec<bool> {
    let mut changes = Vec::new();
    if let Some(first) = trace.first() {
        changes.push(first.time_s);
    }
    for pair in trace.windows(2) {
        if pair[1].setpoint_c != pair[0].setpoint_c {
            changes.push(pair[1].time_s);
        }
    }
    let sx = spec.stats.setpoint_exclusion_s;
    let dx = spec.stats.door_exclusion_s;
    trace
        .iter()
        .map(|r| {
            let t = r.time_s;
            let after_change = changes.iter().any(|&c| t >= c && t < c + sx);
            let near_door = any_contains(&spec.door_events, t)
                || spec
                    .door_events
                    .iter()
                    .any(|d| t >= d.end_s && t < d.end_s + dx);
            !(after_change || near_door)
        })
        .collect()
}

/// Per-mode pouch statistics and duty average from a trace. Energy and frame
/// counters need the full run and are filled in by the simulator.
pub fn summarize(trace: &[TraceRow], spec: &ScenarioSpec) -> SummaryStats {
    let mask = steady_mask(trace, spec);
    let pick = |mode: Mode| -> Vec<f64> {
        trace
            .iter()
            .zip(&mask)
            .filter(|(r, keep)| **keep && r.mode == mode)
            .map(|(r, _)| r.t_pouch_c)
            .collect()
    };
    let duty: Vec<f64> = trace.iter().map(|r| r.duty_pct).collect();
    let every = spec.telemetry.every_s;
    let energy_wh = trace
        .iter()
        .map(|r| spec.power.power_w(r.pelt_on) * every / 3600.0)
        .sum();
    SummaryStats {
        day: mode_stats(&pick(Mode::Day)),
        night: mode_stats(&pick(Mode::Night)),
        energy_wh,
        peltier_duty_pct: mean(&duty).unwrap_or(0.0),
        frames_sent: 0,
        frames_acked: 0,
        frames_in_buffer: 0,
        frames_dropped: 0,
        setpoint_exclusion_s: spec.stats.setpoint_exclusion_s,
        door_exclusion_s: spec.stats.door_exclusion_s,
    }
}

impl fmt::Display for SummaryStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut out = String::new();
        for (name, m) in [("day", &self.day), ("night", &self.night)] {
            match m {
                Some(m) => {
                    let _ = writeln!(out, "{name}.mean_c = {:.4}", m.mean_c);
                    let _ = writeln!(out, "{name}.sd_c = {:.4}", m.sd_c);
                    let _ = writeln!(out, "{name}.min_c = {:.4}", m.min_c);
                    let _ = writeln!(out, "{name}.max_c = {:.4}", m.max_c);
                    let _ = writeln!(out, "{name}.n = {}", m.n);
                }
                None => {
                    let _ = writeln!(out, "{name} = not computable");
                }
            }
        }
        let _ = writeln!(out, "energy_wh = {:.4}", self.energy_wh);
        let _ = writeln!(out, "peltier_duty_pct = {:.4}", self.peltier_duty_pct);
        let _ = writeln!(out, "frames_sent = {}", self.frames_sent);
        let _ = writeln!(out, "frames_acked = {}", self.frames_acked);
        let _ = writeln!(out, "frames_in_buffer = {}", self.frames_in_buffer);
        let _ = writeln!(out, "frames_dropped = {}", self.frames_dropped);
        let _ = writeln!(out, "setpoint_exclusion_s = {}", self.setpoint_exclusion_s);
        let _ = write!(out, "door_exclusion_s = {}", self.door_exclusion_s);
        f.write_str(&out)
    }
}
