#![allow(dead_code)]

use std::path::PathBuf;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use alive::agent::MemoryLog;
use alive::clock::ManualClock;
use alive::pid::{ControlConfig, Direction, PidGains, SetpointSchedule, TimeOfDay};
use alive::plane::{ControlPlane, PlaneConfig, SharedPlane};
use alive::protocol::{decode_frame, Frame, SampleFlags, TelemetrySample};
use alive::scenario::{
    autotune, load_scenario, resolve_gains, scenario_registry, Backend, RunOutput, ScenarioSpec,
    SimOptions, Simulation,
};
use alive::thermal::{PlantInput, PlantParams};

pub fn scenario_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("scenarios")
        .join(name)
}

pub fn load(name: &str) -> ScenarioSpec {
    load_scenario(scenario_path(name)).expect("shipped scenario loads")
}

pub fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
}

// ---------------------------------------------------------------- oracles

/// Exact solution of the linear two-mass model under a constant input:
/// x(t) = x* + exp(A t) (x0 - x*), with exp(A t) for a 2x2 matrix in closed
/// form. Ignores the envelope clamp.
pub fn exact_plant(params: &PlantParams, input: &PlantInput, x0: (f64, f64), t: f64) -> (f64, f64) {
    let ua_w = if input.door_open {
        params.ua_wall_open
    } else {
        params.ua_wall_closed
    };
    let q = input.duty * params.q_pelt_max * if input.heating { -1.0 } else { 1.0 };
    let (ca, cp, up) = (params.c_air, params.c_pouch, params.ua_pouch);
    let a = [[-(ua_w + up) / ca, up / ca], [up / cp, -up / cp]];
    let b = [(ua_w * input.t_ambient_c - q) / ca, 0.0];

    // x* = -A^-1 b
    let det = a[0][0] * a[1][1] - a[0][1] * a[1][0];
    let xs = (
        -(a[1][1] * b[0] - a[0][1] * b[1]) / det,
        -(-a[1][0] * b[0] + a[0][0] * b[1]) / det,
    );

    let mu = 0.5 * (a[0][0] + a[1][1]);
    let delta = (mu * mu - det).sqrt();
    let e = (mu * t).exp();
    let ch = (delta * t).cosh();
    let sh = (delta * t).sinh() / delta;
    let m = [
        [e * (ch + sh * (a[0][0] - mu)), e * sh * a[0][1]],
        [e * sh * a[1][0], e * (ch + sh * (a[1][1] - mu))],
    ];
    let d0 = (x0.0 - xs.0, x0.1 - xs.1);
    (
        xs.0 + m[0][0] * d0.0 + m[0][1] * d0.1,
        xs.1 + m[1][0] * d0.0 + m[1][1] * d0.1,
    )
}

/// Reference PID: the controller written out as a plain recurrence over a
/// whole measurement series. Returns the output sequence.
pub fn scripted_pid(
    g: PidGains,
    cfg: &ControlConfig,
    direction: Direction,
    setpoints: &[f64],
    measurements: &[f64],
    dt: f64,
) -> Vec<f64> {
    let s = match direction {
        Direction::Cooling => 1.0,
        Direction::Heating => -1.0,
    };
    let mut integral = 0.0f64;
    let mut d = 0.0f64;
    let mut out = Vec::with_capacity(measurements.len());
    for k in 0..measurements.len() {
        let e = s * (measurements[k] - setpoints[k]);
        integral += e * dt;
        if integral > cfg.integral_max {
            integral = cfg.integral_max;
        }
        if integral < cfg.integral_min {
            integral = cfg.integral_min;
        }
        if k > 0 {
            let raw = s * (measurements[k] - measurements[k - 1]) / dt;
            d = cfg.derivative_filter_alpha * raw + (1.0 - cfg.derivative_filter_alpha) * d;
        }
        let u = g.kp * e + g.ki * integral + g.kd * d;
        out.push(u.clamp(0.0, 100.0));
    }
    out
}

// ------------------------------------------------------------- scenarios

pub fn flat_schedule(setpoint_c: f64) -> SetpointSchedule {
    SetpointSchedule {
        day_start: TimeOfDay::hm(0, 0),
        night_start: TimeOfDay::hm(23, 59),
        day_setpoint_c: setpoint_c,
        night_setpoint_c: setpoint_c,
    }
}

pub fn sample_seqs(lines: &[String]) -> Vec<u64> {
    lines
        .iter()
        .filter_map(|l| match decode_frame(l) {
            Ok(Frame::Sample(s)) => Some(s.seq),
            _ => None,
        })
        .collect()
}

pub fn log_samples(lines: &[String]) -> Vec<TelemetrySample> {
    lines
        .iter()
        .filter_map(|l| match decode_frame(l) {
            Ok(Frame::Sample(s)) => Some(s),
            _ => None,
        })
        .collect()
}

pub fn shared_backend(spec: &ScenarioSpec) -> (SharedPlane, Arc<ManualClock>) {
    let plane = Arc::new(Mutex::new(ControlPlane::in_memory(
        scenario_registry(spec),
        PlaneConfig::default(),
    )));
    (plane, Arc::new(ManualClock::new(spec.start_epoch_ms)))
}

// ------------------------------------------------------------ measurements

pub struct Fig4 {
    pub out: RunOutput,
    pub wall: Duration,
    pub day_setpoint_c: f64,
    pub night_setpoint_c: f64,
}

/// Autotunes and runs the shipped fig4 scenario, timing both.
pub fn run_fig4() -> Fig4 {
    let spec = load("fig4.scenario");
    let start = Instant::now();
    let gains = resolve_gains(&spec).expect("autotune converges");
    let (day, night) = (spec.schedule.day_setpoint_c, spec.schedule.night_setpoint_c);
    let out = Simulation::new(spec, gains, SimOptions::default())
        .and_then(Simulation::run)
        .expect("fig4 runs");
    Fig4 {
        out,
        wall: start.elapsed(),
        day_setpoint_c: day,
        night_setpoint_c: night,
    }
}

pub struct Pulldown {
    pub gains: PidGains,
    /// First time after which the chamber stays within ±0.5 °C.
    pub settle_s: Option<f64>,
    pub post_settle_p2p_c: f64,
}

/// Default plant from 24 °C to a 15 °C setpoint with autotuned gains;
/// judged on the controlled chamber-air temperature.
pub fn autotuned_pulldown() -> Pulldown {
    let mut spec = ScenarioSpec::with_duration(5400.0);
    spec.initial_temp_c = Some(24.0);
    spec.schedule = flat_schedule(15.0);
    let gains = autotune(&spec).expect("relay cycle").gains;
    let mut sim = Simulation::new(spec, gains, SimOptions::default()).expect("valid");
    let mut air = Vec::new();
    while !sim.is_done() {
        sim.step().expect("step");
        air.push((sim.time_s(), sim.truth().t_air_c));
    }
    let last_out = air.iter().rposition(|(_, t)| (t - 15.0).abs() > 0.5);
    let settle_idx = last_out.map_or(0, |i| i + 1);
    let settle_s = (settle_idx < air.len()).then(|| air[settle_idx].0);
    let tail: Vec<f64> = air[settle_idx..].iter().map(|p| p.1).collect();
    let hi = tail.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lo = tail.iter().copied().fold(f64::INFINITY, f64::min);
    Pulldown {
        gains,
        settle_s,
        post_settle_p2p_c: if tail.is_empty() { f64::INFINITY } else { hi - lo },
    }
}

pub struct StoreForward {
    pub device_seqs: Vec<u64>,
    pub server_seqs: Vec<u64>,
    pub server_rows: usize,
    pub out: RunOutput,
    /// Frames produced while the buffer could not be emptied (oracle input).
    pub backlog_frames: u64,
    pub buffer_empty_before_outage: bool,
}

/// Runs outage.scenario with the given buffer capacity.
pub fn run_outage(capacity: usize) -> StoreForward {
    let mut spec = load("outage.scenario");
    spec.telemetry.buffer_capacity = capacity;
    let outage = spec.outage_windows[0];
    let gains = resolve_gains(&spec).expect("gains");
    let log = MemoryLog::new();
    let options = SimOptions {
        log: Some(Box::new(log.clone())),
        ..SimOptions::default()
    };
    let dev = spec.device_id.clone();
    let epoch = spec.start_epoch_ms;
    let mut sim = Simulation::new(spec, gains, options).expect("valid");
    sim.run_until(outage.start_s).expect("run");
    let buffer_empty_before_outage = sim.device().buffer.is_empty();
    while !sim.is_done() {
        sim.step().expect("step");
    }
    let plane = sim.plane().cloned().expect("embedded");
    let out = sim.finish().expect("finish");

    let lines = log.lines();
    let samples = log_samples(&lines);
    // the reconnect cycle samples before it flushes
    let backlog_frames = samples
        .iter()
        .filter(|s| {
            let t = (s.t_ms - epoch) as f64 / 1000.0;
            t >= outage.start_s && t <= outage.end_s
        })
        .count() as u64;
    let p = plane.lock().unwrap();
    StoreForward {
        device_seqs: samples.iter().map(|s| s.seq).collect(),
        server_seqs: p.store().seqs(&dev),
        server_rows: p.query_range(&dev, 0, u64::MAX).unwrap().len(),
        out,
        backlog_frames,
        buffer_empty_before_outage,
    }
}

#[derive(Debug)]
pub struct CommandLatency {
    pub issued_at_s: f64,
    pub in_control_at_s: Option<f64>,
    pub first_sample_at_s: Option<f64>,
    pub final_status: String,
    pub offline_status: String,
    pub offline_command_leaked: bool,
}

pub fn set_setpoint_json(setpoint_c: f64) -> serde_json::Value {
    serde_json::json!({"kind": "set_setpoint", "payload": {"setpoint_c": setpoint_c}})
}

async fn api(app: &axum::Router, method: &str, uri: &str, token: &str, body: Option<serde_json::Value>) -> serde_json::Value {
    use http_body_util::BodyExt;
    use tower::ServiceExt;
    let req = axum::http::Request::builder()
        .method(method)
        .uri(uri)
        .header("authorization", format!("Bearer {token}"))
        .header("content-type", "application/json")
        .body(body.map_or_else(axum::body::Body::empty, |b| axum::body::Body::from(b.to_string())))
        .expect("request");
    let resp = app.clone().oneshot(req).await.expect("infallible");
    let bytes = resp.into_body().collect().await.expect("body").to_bytes();
    serde_json::from_slice(&bytes).unwrap_or(serde_json::Value::Null)
}

/// Issues set_setpoint through the HTTP API against a running simulation
/// (shared plane, simulated clock), then a short-TTL command while the
/// device is offline.
pub fn command_latency() -> CommandLatency {
    let mut spec = ScenarioSpec::with_duration(3600.0);
    spec.initial_temp_c = Some(15.0);
    spec.schedule = flat_schedule(15.0);
    spec.outage_windows = vec![alive::clock::Interval::new(2400.0, 3000.0)];
    let (token, dev) = (spec.operator_token.clone(), spec.device_id.clone());
    let (plane, clock) = shared_backend(&spec);
    let app = alive::plane::http::router(plane.clone(), clock.clone());
    let gains = resolve_gains(&spec).expect("gains");
    let log = MemoryLog::new();
    let mut sim = Simulation::new(spec, gains, shared_options(plane, clock, &log)).expect("valid");
    let rt = tokio::runtime::Builder::new_current_thread().build().expect("runtime");
    let cmds = format!("/api/devices/{dev}/commands");
    let period = sim.spec().control.sample_period_s;

    sim.run_until(1200.0).expect("run");
    let issued_at_s = sim.time_s();
    let record = rt.block_on(api(&app, "POST", &cmds, &token, Some(set_setpoint_json(12.0))));
    let cmd_id = record["command"]["cmd_id"].as_str().unwrap_or_default().to_string();
    let mut in_control_at_s = None;
    let mut first_sample_at_s = None;
    let mut rows_seen = sim.rows().len();
    while sim.time_s() < issued_at_s + 60.0 {
        sim.step().expect("step");
        if in_control_at_s.is_none() && sim.device().state.manual_setpoint_c == Some(12.0) {
            // commands land before the cycle's control decision
            in_control_at_s = Some(sim.time_s() - period);
        }
        if first_sample_at_s.is_none() {
            first_sample_at_s = sim.rows()[rows_seen..]
                .iter()
                .find(|r| r.setpoint_c == 12.0)
                .map(|r| r.time_s);
            rows_seen = sim.rows().len();
        }
    }
    let final_status = rt.block_on(api(&app, "GET", &format!("{cmds}/{cmd_id}"), &token, None))["status"]
        .as_str()
        .unwrap_or_default()
        .to_string();

    // offline from 2400 s to 3000 s
    sim.run_until(2500.0).expect("run");
    let mut body = set_setpoint_json(30.0);
    body["ttl_ms"] = serde_json::json!(5000);
    let record = rt.block_on(api(&app, "POST", &cmds, &token, Some(body)));
    let cmd_id = record["command"]["cmd_id"].as_str().unwrap_or_default().to_string();
    let mut offline_command_leaked = false;
    while !sim.is_done() {
        sim.step().expect("step");
        offline_command_leaked |= sim.device().state.manual_setpoint_c == Some(30.0);
    }
    let offline_status = rt.block_on(api(&app, "GET", &format!("{cmds}/{cmd_id}"), &token, None))["status"]
        .as_str()
        .unwrap_or_default()
        .to_string();
    CommandLatency {
        issued_at_s,
        in_control_at_s,
        first_sample_at_s,
        final_status,
        offline_status,
        offline_command_leaked,
    }
}

pub struct Fault {
    pub samples_in_window: usize,
    pub all_sentinel_and_flagged: bool,
    pub none_flagged_outside: bool,
    pub actuation_held: bool,
    pub pre_fault_mean_c: f64,
    pub max_post_fault_dev_c: f64,
}

/// Runs sensor_fault.scenario and checks what the device did around the
/// fault window.
pub fn run_fault() -> Fault {
    let spec = load("sensor_fault.scenario");
    let fault = spec.sensor_fault_windows[0];
    let gains = resolve_gains(&spec).expect("gains");
    let log = MemoryLog::new();
    let options = SimOptions {
        log: Some(Box::new(log.clone())),
        ..SimOptions::default()
    };
    let epoch = spec.start_epoch_ms;
    let mut sim = Simulation::new(spec, gains, options).expect("valid");

    let mut pre = Vec::new();
    let mut post_dev: f64 = 0.0;
    let mut held: Option<(u32, Direction, f64)> = None;
    let mut actuation_held = true;
    let mut pre_mean = f64::NAN;
    while !sim.is_done() {
        let t = sim.time_s();
        sim.step().expect("step");
        let st = &sim.device().state;
        let plan = (st.on_cycles, st.direction, st.pid_state.integral);
        if t < fault.start_s && t >= fault.start_s - 600.0 {
            pre.push(sim.truth().t_air_c);
        }
        if fault.contains(t) {
            match held {
                None => held = Some(plan),
                Some(h) => actuation_held &= h == plan,
            }
        }
        if t >= fault.end_s && t < fault.end_s + 1800.0 {
            if pre_mean.is_nan() {
                pre_mean = pre.iter().sum::<f64>() / pre.len() as f64;
            }
            post_dev = post_dev.max((sim.truth().t_air_c - pre_mean).abs());
        }
    }
    let samples = log_samples(&log.lines());
    let t_of = |s: &TelemetrySample| (s.t_ms - epoch) as f64 / 1000.0;
    let inside: Vec<_> = samples.iter().filter(|s| fault.contains(t_of(s))).collect();
    Fault {
        samples_in_window: inside.len(),
        all_sentinel_and_flagged: inside.iter().all(|s| {
            s.t_chamber_c == -1.0
                && s.t_pouch_c == -1.0
                && s.flags.contains(SampleFlags::SENSOR_FAULT)
        }),
        none_flagged_outside: samples
            .iter()
            .filter(|s| !fault.contains(t_of(s)))
            .all(|s| !s.flags.contains(SampleFlags::SENSOR_FAULT) && s.t_chamber_c != -1.0),
        actuation_held,
        pre_fault_mean_c: pre_mean,
        max_post_fault_dev_c: post_dev,
    }
}

pub fn shared_options(plane: SharedPlane, clock: Arc<ManualClock>, log: &MemoryLog) -> SimOptions {
    SimOptions {
        log: Some(Box::new(log.clone())),
        trace: None,
        backend: Backend::Shared { plane, clock },
    }
}

#[derive(Debug)]
pub struct Restart {
    pub at_s: f64,
    pub acked_seq: u64,
    pub acked_rows: usize,
    pub identical: bool,
}

#[derive(Debug)]
pub struct Durability {
    pub restarts: Vec<Restart>,
    /// Acked rows from every restart are still identical at the end.
    pub history_kept: bool,
    pub device_seqs: Vec<u64>,
    pub server_seqs: Vec<u64>,
}

fn acked_rows(plane: &SharedPlane, dev: &str, acked_seq: u64) -> Vec<TelemetrySample> {
    let p = plane.lock().unwrap();
    p.query_range(dev, 0, u64::MAX)
        .unwrap()
        .into_iter()
        .filter(|s| s.seq <= acked_seq)
        .collect()
}

/// Runs outage.scenario against a persistent plane and replaces it with a
/// freshly opened one (same data directory) at each of `kill_at_s`.
pub fn run_with_restarts(kill_at_s: &[f64]) -> Durability {
    let spec = load("outage.scenario");
    let dir = tempfile::tempdir().expect("tempdir");
    let open = || ControlPlane::open(scenario_registry(&spec), dir.path(), PlaneConfig::default()).expect("open");
    let plane: SharedPlane = Arc::new(Mutex::new(open()));
    let clock = Arc::new(ManualClock::new(spec.start_epoch_ms));
    let gains = resolve_gains(&spec).expect("gains");
    let log = MemoryLog::new();
    let dev = spec.device_id.clone();
    let mut sim = Simulation::new(spec.clone(), gains, shared_options(plane.clone(), clock, &log)).expect("valid");

    let mut restarts = Vec::new();
    let mut snapshots = Vec::new();
    for &at_s in kill_at_s {
        sim.run_until(at_s).expect("run");
        let acked_seq = plane.lock().unwrap().device(&dev, sim.now_ms()).unwrap().acked_seq;
        let before = acked_rows(&plane, &dev, acked_seq);
        *plane.lock().unwrap() = open();
        let after = acked_rows(&plane, &dev, acked_seq);
        restarts.push(Restart {
            at_s,
            acked_seq,
            acked_rows: before.len(),
            identical: before == after && before.len() as u64 == acked_seq,
        });
        snapshots.push((acked_seq, before));
    }
    while !sim.is_done() {
        sim.step().expect("step");
    }
    sim.finish().expect("finish");
    let history_kept = snapshots
        .iter()
        .all(|(acked, rows)| acked_rows(&plane, &dev, *acked) == *rows);
    let server_seqs = plane.lock().unwrap().store().seqs(&dev);
    Durability {
        restarts,
        history_kept,
        device_seqs: sample_seqs(&log.lines()),
        server_seqs,
    }
}
