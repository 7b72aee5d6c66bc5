//! Firmware analogue: one control loop per device.
//!
//! Each control period the agent reads its probes, picks the setpoint from
//! the manual override or the day/night schedule, runs the PID loop on the
//! chamber-air probe and turns the result into an ON interval at the start
//! of each actuation window. Every `telemetry_every` cycles it emits a
//! sequenced [`TelemetrySample`], appends the exact frame to its local log
//! and queues it for the uplink.

mod gps;
mod log;
mod power;
mod sensors;

pub use gps::{position_at, GpsRoute, RouteError, Waypoint};
pub use log::{BrokenLog, FileLog, LogSink, MemoryLog};
pub use power::{battery_step, BatteryStep, PowerModel};
pub use sensors::{read_sensors, SensorModel, SensorReading};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::pid::{
    activation_cycles, pid_update_directed, ControlConfig, Direction, Mode, PidGains, PidState,
    SetpointSchedule, TimeOfDay,
};
use crate::protocol::{
    encode_frame, encode_sample, Actuators, Command, CommandAck, CommandKind, CommandOutcome,
    EncodeError, Frame, Hello, Link, SampleFlags, SendBuffer, TelemetrySample, PROTOCOL_VERSION,
};
use crate::thermal::{PlantInput, ThermalState};

/// Static configuration of a device.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgentConfig {
    pub control: ControlConfig,
    /// Control cycles per uplinked sample.
    pub telemetry_every: u32,
    /// Distance past the setpoint (°C) that flips the Peltier polarity;
    /// `None` keeps the device cooling-only.
    pub polarity_switch_band_c: Option<f64>,
    pub power: PowerModel,
    /// Setpoint envelope accepted from operators.
    pub t_min_c: f64,
    pub t_max_c: f64,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            control: ControlConfig::default(),
            telemetry_every: 10,
            polarity_switch_band_c: Some(1.0),
            power: PowerModel::default(),
            t_min_c: 2.0,
            t_max_c: 98.0,
        }
    }
}

/// Mutable state of one device.
#[derive(Debug, Clone, PartialEq)]
pub struct DeviceState {
    pub device_id: String,
    pub pid_state: PidState,
    pub gains: PidGains,
    pub schedule: SetpointSchedule,
    /// Operator setpoint that overrides the schedule until cleared.
    pub manual_setpoint_c: Option<f64>,
    pub soc_pct: f64,
    pub actuators: Actuators,
    /// Cycle position inside the current actuation window.
    pub window_phase: u32,
    /// ON cycles planned for the current window.
    pub on_cycles: u32,
    /// Polarity used for the current window.
    pub direction: Direction,
    pub seq_next: u64,
    pub cycles: u64,
    pub connection_established_at: Option<u64>,
    pub battery_dead: bool,
    pub log_degraded: bool,
}

impl DeviceState {
    pub fn new(device_id: impl Into<String>, gains: PidGains, schedule: SetpointSchedule) -> Self {
        Self {
            device_id: device_id.into(),
            pid_state: PidState::default(),
            gains,
            schedule,
            manual_setpoint_c: None,
            soc_pct: 100.0,
            actuators: Actuators::empty(),
            window_phase: 0,
            on_cycles: 0,
            direction: Direction::Cooling,
            seq_next: 1,
            cycles: 0,
            connection_established_at: None,
            battery_dead: false,
            log_degraded: false,
        }
    }

    pub fn setpoint_at(&self, tod: TimeOfDay) -> f64 {
        self.manual_setpoint_c
            .unwrap_or_else(|| self.schedule.setpoint(self.schedule.mode_at(tod)))
    }
}

/// Per-cycle context the agent cannot derive itself.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CycleContext {
    /// Simulated seconds since the start of the run.
    pub time_s: f64,
    /// Wall-clock stamp for telemetry.
    pub t_ms: u64,
    pub time_of_day: TimeOfDay,
    pub position: (f64, f64),
    /// The plant hit its envelope during the previous step.
    pub plant_clamped: bool,
}

/// Peltier command for one control period.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Actuation {
    pub peltier_on: bool,
    pub direction: Direction,
}

impl Actuation {
    pub fn plant_input(&self, door_open: bool, t_ambient_c: f64) -> PlantInput {
        PlantInput {
            duty: if self.peltier_on { 1.0 } else { 0.0 },
            heating: self.direction == Direction::Heating,
            door_open,
            t_ambient_c,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CycleOutput {
    pub actuation: Actuation,
    pub setpoint_c: f64,
    pub mode: Mode,
    /// The PID_value driving this cycle, %.
    pub pid_value_pct: f64,
    pub sample: Option<TelemetrySample>,
}

/// One control period.
///
/// A faulted reading leaves the PID state untouched and keeps the previous
/// window's activation plan; valid readings replan at each window boundary.
pub fn control_cycle(
    device: &mut DeviceState,
    reading: &SensorReading,
    ctx: &CycleContext,
    config: &AgentConfig,
) -> CycleOutput {
    let cc = &config.control;
    let setpoint = device.setpoint_at(ctx.time_of_day);
    let mode = device.schedule.mode_at(ctx.time_of_day);
    let at_boundary = device.window_phase == 0;

    let pid_value = if reading.is_valid() {
        let measured = reading.t_chamber_c;
        let mut direction = device.direction;
        if let Some(band) = config.polarity_switch_band_c {
            let flip = match direction {
                Direction::Cooling => measured < setpoint - band,
                Direction::Heating => measured > setpoint + band,
            };
            if flip && at_boundary {
                direction = match direction {
                    Direction::Cooling => Direction::Heating,
                    Direction::Heating => Direction::Cooling,
                };
                device.pid_state.reset();
            }
        }
        device.direction = direction;
        match pid_update_directed(
            &device.gains,
            &device.pid_state,
            setpoint,
            measured,
            cc.sample_period_s,
            cc,
            direction,
        ) {
            Ok((out, next)) => {
                device.pid_state = next;
                Some(out)
            }
            Err(_) => None,
        }
    } else {
        None
    };

    if at_boundary {
        if let Some(v) = pid_value {
            device.on_cycles = activation_cycles(v, cc);
        }
    }
    let pid_value_pct = pid_value.unwrap_or(device.pid_state.last_output_pct);

    let peltier_on = !device.battery_dead && device.window_phase < device.on_cycles;
    let actuation = Actuation {
        peltier_on,
        direction: device.direction,
    };

    let sample = device.cycles.is_multiple_of(u64::from(config.telemetry_every.max(1))).then(|| {
        let power = &config.power;
        let v_bus = power.bus_voltage_v;
        let i_bus = round6(power.bus_current_a(peltier_on));
        let mut flags = SampleFlags::empty();
        flags.set(SampleFlags::SENSOR_FAULT, reading.fault);
        flags.set(SampleFlags::CLAMPED, ctx.plant_clamped);
        flags.set(SampleFlags::BATTERY_DEAD, device.battery_dead);
        flags.set(SampleFlags::LOG_DEGRADED, device.log_degraded);
        flags.set(SampleFlags::HEATING, device.direction == Direction::Heating);
        let s = TelemetrySample {
            v: PROTOCOL_VERSION,
            dev: device.device_id.clone(),
            seq: device.seq_next,
            t_ms: ctx.t_ms,
            t_chamber_c: reading.t_chamber_c,
            t_pouch_c: reading.t_pouch_c,
            rh_pct: reading.rh_pct,
            v_bus_v: v_bus,
            i_bus_a: i_bus,
            p_w: v_bus * i_bus,
            lat: ctx.position.0,
            lon: ctx.position.1,
            setpoint_c: setpoint,
            duty_pct: pid_value_pct,
            soc_pct: device.soc_pct,
            act: device.actuators,
            flags,
        };
        device.seq_next += 1;
        s
    });

    let battery = battery_step(&config.power, device.soc_pct, peltier_on, cc.sample_period_s);
    device.soc_pct = battery.soc_pct;
    device.battery_dead = battery.dead;

    device.window_phase = (device.window_phase + 1) % cc.window_cycles();
    device.cycles += 1;

    CycleOutput {
        actuation,
        setpoint_c: setpoint,
        mode,
        pid_value_pct,
        sample,
    }
}

fn round6(x: f64) -> f64 {
    (x * 1e6).round() / 1e6
}

/// Applies an operator command and builds its acknowledgement.
pub fn handle_command(device: &mut DeviceState, cmd: &Command, config: &AgentConfig) -> CommandAck {
    let result = apply_command(device, &cmd.kind, config);
    CommandAck {
        v: PROTOCOL_VERSION,
        cmd_id: cmd.cmd_id.clone(),
        status: if result.is_ok() {
            CommandOutcome::Applied
        } else {
            CommandOutcome::Rejected
        },
        seq: device.seq_next,
        reason: result.err(),
    }
}

fn apply_command(
    device: &mut DeviceState,
    kind: &CommandKind,
    config: &AgentConfig,
) -> Result<(), String> {
    let in_envelope = |v: f64| v >= config.t_min_c && v <= config.t_max_c;
    match kind {
        CommandKind::SetSetpoint { setpoint_c } => {
            if !in_envelope(*setpoint_c) {
                return Err(format!(
                    "setpoint {setpoint_c} outside [{}, {}]",
                    config.t_min_c, config.t_max_c
                ));
            }
            device.manual_setpoint_c = Some(*setpoint_c);
        }
        CommandKind::ClearOverride => device.manual_setpoint_c = None,
        CommandKind::SetSchedule(schedule) => {
            schedule.validate(config.t_min_c, config.t_max_c)?;
            device.schedule = *schedule;
        }
        CommandKind::SetGains(gains) => {
            gains.validate().map_err(|e| e.to_string())?;
            device.gains = *gains;
            device.pid_state.reset();
        }
        CommandKind::Actuate { actuator, on } => {
            let bit =
                Actuators::by_name(actuator).ok_or_else(|| format!("unknown actuator {actuator:?}"))?;
            device.actuators.set(bit, *on);
        }
    }
    Ok(())
}

/// Everything that runs on the device board: probes, controller, local log
/// and the uplink buffer.
pub struct Device {
    pub state: DeviceState,
    pub config: AgentConfig,
    pub sensors: SensorModel,
    pub route: GpsRoute,
    pub buffer: SendBuffer,
    rng: ChaCha8Rng,
    log: Box<dyn LogSink>,
}

/// What one tick produced.
#[derive(Debug, Clone, PartialEq)]
pub struct Tick {
    pub reading: SensorReading,
    pub output: CycleOutput,
    /// The encoded frame when a sample was emitted.
    pub frame: Option<String>,
}

impl Device {
    pub fn new(
        state: DeviceState,
        config: AgentConfig,
        sensors: SensorModel,
        route: GpsRoute,
        buffer: SendBuffer,
        seed: u64,
        log: Box<dyn LogSink>,
    ) -> Self {
        Self {
            state,
            config,
            sensors,
            route,
            buffer,
            rng: ChaCha8Rng::seed_from_u64(seed),
            log,
        }
    }

    pub fn id(&self) -> &str {
        &self.state.device_id
    }

    /// Reads the probes, runs one control cycle and records any sample.
    pub fn tick(
        &mut self,
        truth: &ThermalState,
        humidity_pct: f64,
        ctx: &CycleContext,
    ) -> Result<Tick, EncodeError> {
        let reading = read_sensors(truth, humidity_pct, &self.sensors, &mut self.rng, ctx.time_s);
        let mut output = control_cycle(&mut self.state, &reading, ctx, &self.config);
        let mut frame = None;
        if let Some(sample) = output.sample.as_mut() {
            let mut line = encode_sample(sample)?;
            if self.log.append(&line).is_err() {
                self.state.log_degraded = true;
                sample.flags |= SampleFlags::LOG_DEGRADED;
                line = encode_sample(sample)?;
            }
            self.buffer.push(sample.seq, line.clone());
            frame = Some(line);
        }
        Ok(Tick {
            reading,
            output,
            frame,
        })
    }

    pub fn hello(&self, token: &str) -> Hello {
        Hello {
            v: PROTOCOL_VERSION,
            dev: self.state.device_id.clone(),
            token: token.to_string(),
            resume_seq: self.buffer.oldest_seq().unwrap_or(self.state.seq_next),
        }
    }

    /// Handles a frame from the server; returns the reply to send, if any.
    pub fn receive(&mut self, frame: &Frame) -> Option<Frame> {
        match frame {
            Frame::Ack(ack) if ack.dev == self.state.device_id => {
                self.buffer.ack(ack.ack_seq);
                None
            }
            Frame::Command(cmd) if cmd.dev == self.state.device_id => Some(Frame::CommandAck(
                handle_command(&mut self.state, cmd, &self.config),
            )),
            _ => None,
        }
    }

    /// Pushes buffered samples out over `link`.
    pub fn flush<L: Link + ?Sized>(&mut self, link: &mut L) -> usize {
        self.buffer.flush(link)
    }

    pub fn encode_reply(frame: &Frame) -> Result<String, EncodeError> {
        encode_frame(frame)
    }
}
