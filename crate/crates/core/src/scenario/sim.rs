use std::fs::{self, File};
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::net::{SocketAddr, TcpStream};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use thiserror::Error;

use crate::agent::{
    position_at, CycleContext, Device, DeviceState, FileLog, LogSink, MemoryLog, RouteError,
};
use crate::clock::{any_contains, ManualClock};
use crate::pid::{
    relay_autotune_with, AutotuneResult, PidGains, RelayPlant, RelaySettings, TuneError,
};
use crate::plane::{ControlPlane, PlaneConfig, PlaneError, Registry, SharedPlane};
use crate::protocol::{
    decode_frame, encode_frame, EncodeError, Frame, Hello, SendBuffer, PROTOCOL_VERSION,
};
use crate::thermal::{plant_step, PlantError, PlantInput, PlantParams, ThermalState};

use super::stats::{summarize, SummaryStats, TraceRow, CSV_HEADER};
use super::uplink::{EmbeddedUplink, LinkAdapter, TcpUplink, Uplink};
use super::{ScenarioError, ScenarioSpec};

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error("plant: {0}")]
    Plant(#[from] PlantError),
    #[error("encode: {0}")]
    Encode(#[from] EncodeError),
    #[error("gps route: {0}")]
    Route(#[from] RouteError),
    #[error("autotune: {0}")]
    Tune(#[from] TuneError),
    #[error("control plane: {0}")]
    Plane(#[from] PlaneError),
    #[error("trace: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] io::Error),
    #[error("replay: {0}")]
    Replay(String),
}

/// Where the simulated device sends its telemetry.
#[derive(Default)]
pub enum Backend {
    /// A fresh in-memory control plane owned by the run.
    #[default]
    Embedded,
    /// A caller-owned plane; the run sets `clock` to simulated time every
    /// cycle so HTTP handlers sharing it see the same clock.
    Shared {
        plane: SharedPlane,
        clock: Arc<ManualClock>,
    },
    /// A control plane listening on a TCP device port.
    Remote(SocketAddr),
    Custom(Box<dyn Uplink>),
}

#[derive(Default)]
pub struct SimOptions {
    /// Device-side frame log; an in-memory log when absent.
    pub log: Option<Box<dyn LogSink>>,
    /// Trace CSV destination, written row by row.
    pub trace: Option<Box<dyn Write + Send>>,
    pub backend: Backend,
}

/// Registry holding the scenario's device and operator credentials.
pub fn scenario_registry(spec: &ScenarioSpec) -> Registry {
    Registry::new()
        .with_device(&spec.device_id, &spec.device_token)
        .with_operator("operator", &spec.operator_token)
}

/// Fixed gains from the scenario, or relay-autotuned ones.
pub fn resolve_gains(spec: &ScenarioSpec) -> Result<PidGains, SimError> {
    match spec.control.gains {
        Some(g) => Ok(g),
        None => Ok(autotune(spec)?.gains),
    }
}

/// The scenario's plant, door shut, held at the day setpoint as a relay target.
pub struct PlantUnderTest {
    pub params: PlantParams,
    pub state: ThermalState,
    pub t_ambient_c: f64,
    pub dt_s: f64,
}

impl RelayPlant for PlantUnderTest {
    fn measurement(&self) -> f64 {
        self.state.t_air_c
    }

    fn advance(&mut self, duty_pct: f64, dt_s: f64) {
        let input = PlantInput::cooling(duty_pct / 100.0, false, self.t_ambient_c);
        let steps = (dt_s / self.dt_s).round().max(1.0) as u32;
        for _ in 0..steps {
            if let Ok(out) = plant_step(&self.state, &input, &self.params, dt_s / f64::from(steps)) {
                self.state = out.state;
            }
        }
    }
}

/// Relay-autotunes the scenario's plant at its day setpoint.
pub fn autotune(spec: &ScenarioSpec) -> Result<AutotuneResult, SimError> {
    let amb = spec.ambient_profile.at(0.0);
    let sp = spec.schedule.day_setpoint_c;
    let mut plant = PlantUnderTest {
        params: spec.plant,
        state: ThermalState::uniform(sp, amb),
        t_ambient_c: amb,
        dt_s: spec.dt_s,
    };
    let settings = RelaySettings {
        amplitude_pct: spec.control.relay_amplitude_pct,
        hysteresis_c: spec.control.relay_hysteresis_c,
        setpoint_c: sp,
        sample_period_s: spec.control.sample_period_s,
        decision_period_s: spec.control.sample_period_s,
        ..RelaySettings::default()
    };
    Ok(relay_autotune_with(&mut plant, &settings)?)
}

/// Everything a finished run produced.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub gains: PidGains,
    pub rows: Vec<TraceRow>,
    pub stats: SummaryStats,
    pub cycles: u64,
    pub wall_time: Duration,
}

/// A scenario stepped one control cycle at a time on a logical clock.
pub struct Simulation {
    spec: ScenarioSpec,
    gains: PidGains,
    truth: ThermalState,
    clamped: bool,
    device: Device,
    uplink: Box<dyn Uplink>,
    plane: Option<SharedPlane>,
    clock: Option<Arc<ManualClock>>,
    trace: Option<csv::Writer<Box<dyn Write + Send>>>,
    rows: Vec<TraceRow>,
    cycle: u64,
    total_cycles: u64,
    substeps: u32,
    energy_j: f64,
    on_cycles: u64,
    wall_start: Instant,
}

impl Simulation {
    pub fn new(spec: ScenarioSpec, gains: PidGains, options: SimOptions) -> Result<Self, SimError> {
        spec.validate()?;
        gains
            .validate()
            .map_err(|e| ScenarioError::Invalid {
                field: "control.gains".into(),
                msg: e.to_string(),
            })?;
        let (uplink, plane, clock): (Box<dyn Uplink>, _, _) = match options.backend {
            Backend::Embedded => {
                let plane: SharedPlane = Arc::new(Mutex::new(ControlPlane::in_memory(
                    scenario_registry(&spec),
                    PlaneConfig::default(),
                )));
                let clock = Arc::new(ManualClock::new(spec.start_epoch_ms));
                (
                    Box::new(EmbeddedUplink::new(plane.clone())),
                    Some(plane),
                    Some(clock),
                )
            }
            Backend::Shared { plane, clock } => (
                Box::new(EmbeddedUplink::new(plane.clone())),
                Some(plane),
                Some(clock),
            ),
            Backend::Remote(addr) => (Box::new(TcpUplink::new(addr)), None, None),
            Backend::Custom(uplink) => (uplink, None, None),
        };

        let mut state = DeviceState::new(spec.device_id.clone(), gains, spec.schedule);
        state.soc_pct = spec.initial_soc_pct;
        let log = options
            .log
            .unwrap_or_else(|| Box::new(MemoryLog::new()) as Box<dyn LogSink>);
        let device = Device::new(
            state,
            spec.agent_config(),
            spec.sensor_model(),
            spec.gps_route.clone(),
            SendBuffer::new(spec.telemetry.buffer_capacity),
            spec.seed,
            log,
        );
        let amb = spec.ambient_profile.at(0.0);
        let truth = ThermalState::uniform(spec.initial_temp_c.unwrap_or(amb), amb);
        let trace = match options.trace {
            Some(w) => {
                let mut wtr = csv::Writer::from_writer(w);
                wtr.write_record(CSV_HEADER)?;
                Some(wtr)
            }
            None => None,
        };
        let substeps = (spec.control.sample_period_s / spec.dt_s).round() as u32;
        Ok(Self {
            total_cycles: spec.cycles(),
            substeps,
            spec,
            gains,
            truth,
            clamped: false,
            device,
            uplink,
            plane,
            clock,
            trace,
            rows: Vec::new(),
            cycle: 0,
            energy_j: 0.0,
            on_cycles: 0,
            wall_start: Instant::now(),
        })
    }

    pub fn spec(&self) -> &ScenarioSpec {
        &self.spec
    }

    pub fn gains(&self) -> PidGains {
        self.gains
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    pub fn truth(&self) -> &ThermalState {
        &self.truth
    }

    /// The plane behind an embedded or shared backend.
    pub fn plane(&self) -> Option<&SharedPlane> {
        self.plane.as_ref()
    }

    pub fn rows(&self) -> &[TraceRow] {
        &self.rows
    }

    pub fn cycle(&self) -> u64 {
        self.cycle
    }

    /// Simulated seconds at the start of the next cycle.
    pub fn time_s(&self) -> f64 {
        self.cycle as f64 * self.spec.control.sample_period_s
    }

    pub fn now_ms(&self) -> u64 {
        self.spec.start_epoch_ms + (self.time_s() * 1000.0).round() as u64
    }

    pub fn is_done(&self) -> bool {
        self.cycle >= self.total_cycles
    }

    fn link_up(&self, t: f64) -> bool {
        !any_contains(&self.spec.outage_windows, t)
    }

    fn exchange(&mut self, now_ms: u64) -> Result<(), SimError> {
        for frame in self.uplink.poll(now_ms) {
            if let Some(reply) = self.device.receive(&frame) {
                let line = encode_frame(&reply)?;
                let _ = self.uplink.send(&line, now_ms);
            }
        }
        Ok(())
    }

    fn service_link(&mut self, online: bool, now_ms: u64) -> Result<(), SimError> {
        match (online, self.uplink.is_connected()) {
            (true, false) => {
                let hello = self.device.hello(&self.spec.device_token);
                if self.uplink.connect(&hello, now_ms).is_err() {
                    self.device.buffer.link_lost();
                }
            }
            (false, true) => {
                self.uplink.disconnect(now_ms);
                self.device.buffer.link_lost();
            }
            _ => {}
        }
        if self.uplink.is_connected() {
            self.exchange(now_ms)?;
        }
        Ok(())
    }

    /// Runs one control cycle; returns the trace row if a sample went out.
    pub fn step(&mut self) -> Result<Option<TraceRow>, SimError> {
        if self.is_done() {
            return Ok(None);
        }
        let period = self.spec.control.sample_period_s;
        let t = self.time_s();
        let now_ms = self.now_ms();
        if let Some(clock) = &self.clock {
            clock.set(now_ms);
        }
        let amb = self.spec.ambient_profile.at(t);
        let humidity = self.spec.humidity_profile.at(t);
        let door = any_contains(&self.spec.door_events, t);
        self.truth.t_ambient_c = amb;
        self.truth.door_open = door;

        let online = self.link_up(t);
        self.service_link(online, now_ms)?;

        let position = position_at(&self.spec.gps_route, t)?;
        let ctx = CycleContext {
            time_s: t,
            t_ms: now_ms,
            time_of_day: self.spec.start_time_of_day.plus(t.floor() as u64),
            position,
            plant_clamped: self.clamped,
        };
        let tick = self.device.tick(&self.truth, humidity, &ctx)?;
        if self.uplink.is_connected() {
            let mut link = LinkAdapter {
                uplink: self.uplink.as_mut(),
                now_ms,
            };
            self.device.flush(&mut link);
            self.exchange(now_ms)?;
        }

        let out = &tick.output;
        let row = out.sample.as_ref().map(|s| TraceRow {
            time_s: t,
            mode: out.mode,
            setpoint_c: out.setpoint_c,
            t_ambient_c: amb,
            t_air_c: self.truth.t_air_c,
            t_pouch_c: self.truth.t_pouch_c,
            rh_pct: humidity,
            duty_pct: out.pid_value_pct,
            pelt_on: out.actuation.peltier_on,
            soc_pct: s.soc_pct,
            lat: s.lat,
            lon: s.lon,
            flags: s.flags.bits(),
        });

        let on = out.actuation.peltier_on;
        self.energy_j += self.spec.power.power_w(on) * period;
        self.on_cycles += u64::from(on);

        let input = out.actuation.plant_input(door, amb);
        let mut clamped = false;
        for _ in 0..self.substeps {
            let step = plant_step(&self.truth, &input, &self.spec.plant, self.spec.dt_s)?;
            self.truth = step.state;
            clamped |= step.clamped;
        }
        self.clamped = clamped;
        self.cycle += 1;

        if let Some(row) = &row {
            if let Some(w) = self.trace.as_mut() {
                w.write_record(row.record())?;
            }
            self.rows.push(row.clone());
        }
        self.pace();
        Ok(row)
    }

    fn pace(&self) {
        let accel = self.spec.acceleration;
        if accel <= 0.0 {
            return;
        }
        let target = Duration::from_secs_f64(self.time_s() / accel);
        let elapsed = self.wall_start.elapsed();
        if target > elapsed {
            std::thread::sleep(target - elapsed);
        }
    }

    /// Steps until simulated time reaches `time_s`.
    pub fn run_until(&mut self, time_s: f64) -> Result<(), SimError> {
        while !self.is_done() && self.time_s() < time_s {
            self.step()?;
        }
        Ok(())
    }

    /// Runs to the end and summarizes.
    pub fn run(mut self) -> Result<RunOutput, SimError> {
        while !self.is_done() {
            self.step()?;
        }
        self.finish()
    }

    pub fn finish(mut self) -> Result<RunOutput, SimError> {
        let now_ms = self.now_ms();
        if self.uplink.is_connected() {
            // a remote server answers asynchronously; give it a moment
            let deadline = Instant::now() + Duration::from_secs(2);
            loop {
                self.exchange(now_ms)?;
                if self.device.buffer.is_empty() || self.plane.is_some() || Instant::now() > deadline {
                    break;
                }
                std::thread::sleep(Duration::from_millis(5));
            }
        }
        if let Some(w) = self.trace.as_mut() {
            w.flush()?;
        }
        let mut stats = summarize(&self.rows, &self.spec);
        let cycles = self.cycle.max(1);
        stats.energy_wh = self.energy_j / 3600.0;
        stats.peltier_duty_pct = 100.0 * self.on_cycles as f64 / cycles as f64;
        let buf = &self.device.buffer;
        stats.frames_sent = buf.pushed_count();
        stats.frames_acked = buf.acked_count();
        stats.frames_in_buffer = buf.len() as u64;
        stats.frames_dropped = buf.dropped_count();
        Ok(RunOutput {
            gains: self.gains,
            rows: std::mem::take(&mut self.rows),
            stats,
            cycles: self.cycle,
            wall_time: self.wall_start.elapsed(),
        })
    }
}

/// Output file locations of [`run_to_dir`].
#[derive(Debug, Clone)]
pub struct OutputPaths {
    pub trace: PathBuf,
    pub stats: PathBuf,
    pub device_log: PathBuf,
}

impl OutputPaths {
    pub fn in_dir(dir: &Path) -> Self {
        Self {
            trace: dir.join("trace.csv"),
            stats: dir.join("stats.txt"),
            device_log: dir.join("device.log"),
        }
    }
}

/// Runs a scenario and writes `trace.csv`, `stats.txt` and `device.log`
/// into `out_dir`.
pub fn run_to_dir(
    spec: ScenarioSpec,
    out_dir: &Path,
    remote: Option<SocketAddr>,
) -> Result<(RunOutput, OutputPaths), SimError> {
    fs::create_dir_all(out_dir)?;
    let paths = OutputPaths::in_dir(out_dir);
    let gains = resolve_gains(&spec)?;
    let options = SimOptions {
        log: Some(Box::new(FileLog::create(&paths.device_log)?)),
        trace: Some(Box::new(BufWriter::new(File::create(&paths.trace)?))),
        backend: remote.map(Backend::Remote).unwrap_or_default(),
    };
    let out = Simulation::new(spec, gains, options)?.run()?;
    let mut text = format!(
        "gains.kp = {}\ngains.ki = {}\ngains.kd = {}\ncycles = {}\n",
        out.gains.kp, out.gains.ki, out.gains.kd, out.cycles
    );
    text.push_str(&out.stats.to_string());
    text.push('\n');
    fs::write(&paths.stats, text)?;
    Ok((out, paths))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplayReport {
    pub frames: usize,
    pub first_seq: u64,
    pub last_seq: u64,
    pub acked_seq: u64,
}

/// Sends every sample in a device log to a control plane and waits for the
/// final acknowledgement.
pub fn replay_log(
    log_path: &Path,
    server: SocketAddr,
    token: &str,
    timeout: Duration,
) -> Result<ReplayReport, SimError> {
    let file = File::open(log_path)?;
    let mut lines = Vec::new();
    let mut dev = None;
    for line in BufReader::new(file).lines() {
        let mut line = line?;
        if let Ok(Frame::Sample(s)) = decode_frame(&line) {
            dev.get_or_insert(s.dev.clone());
            line.push('\n');
            lines.push((s.seq, line));
        }
    }
    let dev = dev.ok_or_else(|| SimError::Replay("log holds no samples".into()))?;
    let first_seq = lines.iter().map(|l| l.0).min().unwrap_or(0);
    let last_seq = lines.iter().map(|l| l.0).max().unwrap_or(0);

    let mut stream = TcpStream::connect_timeout(&server, Duration::from_secs(5))?;
    let hello = Hello {
        v: PROTOCOL_VERSION,
        dev: dev.clone(),
        token: token.to_string(),
        resume_seq: first_seq,
    };
    stream.write_all(encode_frame(&Frame::Hello(hello))?.as_bytes())?;
    let mut out = BufWriter::new(stream.try_clone()?);
    for (_, line) in &lines {
        out.write_all(line.as_bytes())?;
    }
    out.flush()?;

    stream.set_read_timeout(Some(timeout))?;
    let mut reader = BufReader::new(stream);
    let mut acked_seq = 0;
    let deadline = Instant::now() + timeout;
    let mut buf = String::new();
    while acked_seq < last_seq && Instant::now() < deadline {
        buf.clear();
        match reader.read_line(&mut buf) {
            Ok(0) => {
                return Err(SimError::Replay(
                    "server closed the connection (bad token?)".into(),
                ))
            }
            Ok(_) => {
                if let Ok(Frame::Ack(a)) = decode_frame(&buf) {
                    acked_seq = acked_seq.max(a.ack_seq);
                }
            }
            Err(e) if matches!(e.kind(), io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut) => {
                break
            }
            Err(e) => return Err(e.into()),
        }
    }
    Ok(ReplayReport {
        frames: lines.len(),
        first_seq,
        last_seq,
        acked_seq,
    })
}
