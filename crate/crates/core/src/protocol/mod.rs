//! Device <-> control-plane wire protocol.
//!
//! Every message is one line of canonical JSON. A device session opens with a
//! [`Hello`], then streams [`TelemetrySample`]s; the server answers with
//! cumulative [`Ack`]s and pushes [`Command`]s, which the device answers with
//! [`CommandAck`]s. Samples wait in a [`SendBuffer`] until acknowledged.

mod buffer;
mod frame;

pub use buffer::{BufferedFrame, Link, LinkDown, SendBuffer, DEFAULT_BUFFER_CAPACITY};
pub use frame::{
    decode_frame, encode_frame, encode_sample, Ack, Actuators, Command, CommandAck, CommandKind,
    CommandOutcome, DecodeError, EncodeError, Frame, Hello, SampleFlags, TelemetrySample,
    FAULT_SENTINEL, PROTOCOL_VERSION,
};
