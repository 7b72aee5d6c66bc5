use std::fmt;

use bitflags::bitflags;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::{Map, Number, Value};
use thiserror::Error;

use crate::pid::{PidGains, SetpointSchedule};

pub const PROTOCOL_VERSION: u32 = 1;

/// Sentinel written into temperature and humidity fields when a read fails.
pub const FAULT_SENTINEL: f64 = -1.0;

/// Decimal places kept for every float on the wire.
const FLOAT_DECIMALS: i32 = 6;

#[derive(Debug, Error, PartialEq)]
pub enum EncodeError {
    #[error("non-finite value in field {0:?}")]
    NonFinite(String),
    #[error("serialization failed: {0}")]
    Serialize(String),
}

#[derive(Debug, Error, PartialEq)]
pub enum DecodeError {
    #[error("frame is not a JSON object: {0}")]
    Syntax(String),
    #[error("unsupported protocol version {0}")]
    Version(u64),
    #[error("unrecognized frame shape")]
    UnknownShape,
    #[error("bad {kind} frame: {msg}")]
    Field { kind: &'static str, msg: String },
}

macro_rules! bits_as_u8 {
    ($t:ty, $what:literal) => {
        impl Serialize for $t {
            fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
                s.serialize_u8(self.bits())
            }
        }

        impl<'de> Deserialize<'de> for $t {
            fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
                let raw = u8::deserialize(d)?;
                <$t>::from_bits(raw).ok_or_else(|| {
                    serde::de::Error::custom(format!(concat!("unknown ", $what, " bits {:#x}"), raw))
                })
            }
        }
    };
}

bitflags! {
    /// Actuator outputs as a 5-bit map.
    #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
    pub struct Actuators: u8 {
        const LED1 = 1 << 0;
        const LED2 = 1 << 1;
        const LED3 = 1 << 2;
        const LOCK = 1 << 3;
        const LID = 1 << 4;
    }
}
bits_as_u8!(Actuators, "actuator");

impl Actuators {
    pub fn by_name(name: &str) -> Option<Actuators> {
        match name {
            "led1" => Some(Actuators::LED1),
            "led2" => Some(Actuators::LED2),
            "led3" => Some(Actuators::LED3),
            "lock" => Some(Actuators::LOCK),
            "lid" => Some(Actuators::LID),
            _ => None,
        }
    }
}

bitflags! {
    #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
    pub struct SampleFlags: u8 {
        const SENSOR_FAULT = 1 << 0;
        const CLAMPED = 1 << 1;
        const BATTERY_DEAD = 1 << 2;
        const LOG_DEGRADED = 1 << 3;
        /// Peltier polarity reversed (heating).
        const HEATING = 1 << 4;
    }
}
bits_as_u8!(SampleFlags, "flag");

/// One uplinked sensor snapshot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TelemetrySample {
    pub v: u32,
    pub dev: String,
    pub seq: u64,
    pub t_ms: u64,
    pub t_chamber_c: f64,
    pub t_pouch_c: f64,
    pub rh_pct: f64,
    pub v_bus_v: f64,
    pub i_bus_a: f64,
    pub p_w: f64,
    pub lat: f64,
    pub lon: f64,
    pub setpoint_c: f64,
    pub duty_pct: f64,
    pub soc_pct: f64,
    pub act: Actuators,
    pub flags: SampleFlags,
}

impl TelemetrySample {
    pub fn is_faulted(&self) -> bool {
        self.flags.contains(SampleFlags::SENSOR_FAULT)
    }
}

/// Operator instruction routed to a device.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload", rename_all = "snake_case")]
pub enum CommandKind {
    SetSetpoint { setpoint_c: f64 },
    ClearOverride,
    SetSchedule(SetpointSchedule),
    SetGains(PidGains),
    Actuate { actuator: String, on: bool },
}

impl CommandKind {
    pub fn name(&self) -> &'static str {
        match self {
            CommandKind::SetSetpoint { .. } => "set_setpoint",
            CommandKind::ClearOverride => "clear_override",
            CommandKind::SetSchedule(_) => "set_schedule",
            CommandKind::SetGains(_) => "set_gains",
            CommandKind::Actuate { .. } => "actuate",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Command {
    pub v: u32,
    pub cmd_id: String,
    pub dev: String,
    #[serde(flatten)]
    pub kind: CommandKind,
    pub issued_at: u64,
    pub issuer: String,
}

/// First frame of a device session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Hello {
    pub v: u32,
    pub dev: String,
    pub token: String,
    /// Oldest sequence number the device still holds; everything below it
    /// was either acknowledged or dropped from the send buffer.
    pub resume_seq: u64,
}

/// Cumulative acknowledgement: every sample with `seq <= ack_seq` is stored.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Ack {
    pub v: u32,
    pub dev: String,
    pub ack_seq: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CommandOutcome {
    Applied,
    Rejected,
}

impl fmt::Display for CommandOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CommandOutcome::Applied => "applied",
            CommandOutcome::Rejected => "rejected",
        })
    }
}

/// Device's answer to a command.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CommandAck {
    pub v: u32,
    pub cmd_id: String,
    pub status: CommandOutcome,
    /// Next telemetry sequence number at the time the command was handled.
    pub seq: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Frame {
    Hello(Hello),
    Sample(TelemetrySample),
    Ack(Ack),
    Command(Command),
    CommandAck(CommandAck),
}

impl From<TelemetrySample> for Frame {
    fn from(s: TelemetrySample) -> Self {
        Frame::Sample(s)
    }
}

impl From<Command> for Frame {
    fn from(c: Command) -> Self {
        Frame::Command(c)
    }
}

/// Canonical single-line encoding, newline terminated.
///
/// Keys keep declaration order, floats are rounded to six decimals and
/// negative zero is normalized, so equal frames always encode to equal bytes.
pub fn encode_frame(frame: &Frame) -> Result<String, EncodeError> {
    let value = match frame {
        Frame::Hello(f) => serde_json::to_value(f),
        Frame::Sample(f) => serde_json::to_value(f),
        Frame::Ack(f) => serde_json::to_value(f),
        Frame::Command(f) => serde_json::to_value(f),
        Frame::CommandAck(f) => serde_json::to_value(f),
    }
    .map_err(|e| EncodeError::Serialize(e.to_string()))?;
    let value = canonicalize(value, "")?;
    let mut line =
        serde_json::to_string(&value).map_err(|e| EncodeError::Serialize(e.to_string()))?;
    line.push('\n');
    Ok(line)
}

pub fn encode_sample(sample: &TelemetrySample) -> Result<String, EncodeError> {
    encode_frame(&Frame::Sample(sample.clone()))
}

fn round_wire(x: f64) -> f64 {
    let scale = 10f64.powi(FLOAT_DECIMALS);
    let r = (x * scale).round() / scale;
    if r == 0.0 {
        0.0
    } else {
        r
    }
}

// serde_json maps NaN and infinities to null; frames never carry a
// legitimate null, so any null here is a non-finite float.
fn canonicalize(value: Value, path: &str) -> Result<Value, EncodeError> {
    match value {
        Value::Null => Err(EncodeError::NonFinite(path.to_string())),
        Value::Number(n) if n.is_f64() => {
            let x = n.as_f64().unwrap_or(f64::NAN);
            Number::from_f64(round_wire(x))
                .map(Value::Number)
                .ok_or_else(|| EncodeError::NonFinite(path.to_string()))
        }
        Value::Object(map) => {
            let mut out = Map::with_capacity(map.len());
            for (k, v) in map {
                let v = canonicalize(v, &k)?;
                out.insert(k, v);
            }
            Ok(Value::Object(out))
        }
        Value::Array(items) => items
            .into_iter()
            .map(|v| canonicalize(v, path))
            .collect::<Result<Vec<_>, _>>()
            .map(Value::Array),
        other => Ok(other),
    }
}

pub fn decode_frame(line: &str) -> Result<Frame, DecodeError> {
    let value: Value = serde_json::from_str(line.trim_end_matches(['\n', '\r']))
        .map_err(|e| DecodeError::Syntax(e.to_string()))?;
    let Value::Object(map) = &value else {
        return Err(DecodeError::Syntax("expected an object".into()));
    };
    match map.get("v").and_then(Value::as_u64) {
        Some(v) if v == u64::from(PROTOCOL_VERSION) => {}
        Some(v) => return Err(DecodeError::Version(v)),
        None => return Err(DecodeError::UnknownShape),
    }

    fn parse<T: serde::de::DeserializeOwned>(
        kind: &'static str,
        value: Value,
    ) -> Result<T, DecodeError> {
        serde_json::from_value(value).map_err(|e| DecodeError::Field {
            kind,
            msg: e.to_string(),
        })
    }

    if map.contains_key("token") {
        parse("hello", value).map(Frame::Hello)
    } else if map.contains_key("ack_seq") {
        parse("ack", value).map(Frame::Ack)
    } else if map.contains_key("status") {
        parse("command ack", value).map(Frame::CommandAck)
    } else if map.contains_key("kind") {
        parse("command", value).map(Frame::Command)
    } else if map.contains_key("seq") {
        parse("sample", value).map(Frame::Sample)
    } else {
        Err(DecodeError::UnknownShape)
    }
}
