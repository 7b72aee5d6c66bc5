//! Control plane: device registry, telemetry store, command dispatch and
//! live fan-out.
//!
//! [`ControlPlane`] is sans-io; every method takes the current time in epoch
//! milliseconds. [`http`] and [`device_port`] put it on the network.

pub mod device_port;
pub mod http;
mod live;
mod registry;
mod store;

use std::collections::{BTreeMap, VecDeque};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::protocol::{
    decode_frame, Ack, Command, CommandAck, CommandKind, CommandOutcome, Frame, Hello,
    TelemetrySample, PROTOCOL_VERSION,
};

pub use http::SharedPlane;
pub use live::{LiveEvent, LiveHub, Subscription, BACKLOG_CLOSE_REASON, DEFAULT_LIVE_BACKLOG};
pub use registry::{valid_device_id, Registry};
pub use store::SampleStore;

pub const DEFAULT_COMMAND_TTL_MS: u64 = 60_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlaneError {
    #[error("unauthorized")]
    Unauthorized,
    #[error("not found: {0}")]
    NotFound(String),
    #[error("bad request: {0}")]
    BadRequest(String),
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("storage error: {0}")]
    Storage(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("session closed")]
    SessionClosed,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlaneConfig {
    pub command_ttl_ms: u64,
    pub live_backlog: usize,
}

impl Default for PlaneConfig {
    fn default() -> Self {
        Self {
            command_ttl_ms: DEFAULT_COMMAND_TTL_MS,
            live_backlog: DEFAULT_LIVE_BACKLOG,
        }
    }
}

/// An authenticated device connection.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Session {
    pub device_id: String,
    pub id: u64,
}

#[derive(Debug, Clone, Default)]
struct DeviceRecord {
    last_seen: Option<u64>,
    highest_seq: u64,
    /// Highest seq below which nothing is missing (or was given up by the device).
    acked_seq: u64,
    connection_established_at: Option<u64>,
    session: Option<u64>,
    protocol_errors: u64,
}

/// Public view of a registered device.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceInfo {
    pub device_id: String,
    pub connected: bool,
    pub last_seen: Option<u64>,
    pub highest_seq: u64,
    pub acked_seq: u64,
    pub connection_established_at: Option<u64>,
    pub connection_duration_ms: Option<u64>,
    pub sample_count: usize,
    pub protocol_errors: u64,
    pub latest: Option<TelemetrySample>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CommandStatus {
    Queued,
    Delivered,
    Applied,
    Rejected,
    Expired,
}

impl CommandStatus {
    pub fn is_final(self) -> bool {
        matches!(
            self,
            CommandStatus::Applied | CommandStatus::Rejected | CommandStatus::Expired
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommandRecord {
    pub command: Command,
    pub status: CommandStatus,
    pub ttl_ms: u64,
    pub updated_at: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
    /// Device telemetry seq at which the command took effect.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub applied_at_seq: Option<u64>,
}

pub struct ControlPlane {
    registry: Registry,
    store: SampleStore,
    config: PlaneConfig,
    records: BTreeMap<String, DeviceRecord>,
    commands: BTreeMap<String, CommandRecord>,
    queues: BTreeMap<String, VecDeque<String>>,
    live: LiveHub,
    next_cmd: u64,
    next_session: u64,
    protocol_errors: u64,
}

impl ControlPlane {
    /// Volatile plane, for tests and throwaway runs.
    pub fn in_memory(registry: Registry, config: PlaneConfig) -> Self {
        Self::with_store(registry, SampleStore::in_memory(), config)
    }

    /// Opens (or creates) a data directory and replays its logs.
    pub fn open(
        registry: Registry,
        data_dir: impl AsRef<Path>,
        config: PlaneConfig,
    ) -> Result<Self, PlaneError> {
        Ok(Self::with_store(
            registry,
            SampleStore::open(data_dir)?,
            config,
        ))
    }

    fn with_store(registry: Registry, store: SampleStore, config: PlaneConfig) -> Self {
        let mut records = BTreeMap::new();
        for id in registry.device_ids() {
            let seqs = store.seqs(id);
            let mut rec = DeviceRecord {
                highest_seq: seqs.last().copied().unwrap_or(0),
                last_seen: store.latest(id).map(|s| s.t_ms),
                ..DeviceRecord::default()
            };
            for s in seqs {
                if s == rec.acked_seq + 1 {
                    rec.acked_seq = s;
                }
            }
            records.insert(id.to_string(), rec);
        }
        Self {
            registry,
            store,
            live: LiveHub::new(config.live_backlog),
            config,
            records,
            commands: BTreeMap::new(),
            queues: BTreeMap::new(),
            next_cmd: 1,
            next_session: 1,
            protocol_errors: 0,
        }
    }

    pub fn config(&self) -> &PlaneConfig {
        &self.config
    }

    pub fn registry(&self) -> &Registry {
        &self.registry
    }

    pub fn store(&self) -> &SampleStore {
        &self.store
    }

    pub fn protocol_errors(&self) -> u64 {
        self.protocol_errors
    }

    fn record(&self, device_id: &str) -> Result<&DeviceRecord, PlaneError> {
        self.records
            .get(device_id)
            .ok_or_else(|| PlaneError::NotFound(format!("device {device_id}")))
    }

    fn record_mut(&mut self, device_id: &str) -> Result<&mut DeviceRecord, PlaneError> {
        self.records
            .get_mut(device_id)
            .ok_or_else(|| PlaneError::NotFound(format!("device {device_id}")))
    }

    pub fn authorize_operator(&self, token: &str) -> Result<String, PlaneError> {
        self.registry
            .operator(token)
            .map(str::to_string)
            .ok_or(PlaneError::Unauthorized)
    }

    /// Checks device credentials and starts a new session, superseding any
    /// previous one.
    pub fn authenticate(
        &mut self,
        device_id: &str,
        token: &str,
        now_ms: u64,
    ) -> Result<Session, PlaneError> {
        if !self.registry.check_device(device_id, token) {
            return Err(PlaneError::Unauthorized);
        }
        let id = self.next_session;
        self.next_session += 1;
        let rec = self.record_mut(device_id)?;
        rec.session = Some(id);
        rec.connection_established_at = Some(now_ms);
        rec.last_seen = Some(now_ms);
        Ok(Session {
            device_id: device_id.to_string(),
            id,
        })
    }

    /// Handles a session-opening [`Hello`]; the reply tells the device how
    /// far its buffer is already stored.
    pub fn open_session(&mut self, hello: &Hello, now_ms: u64) -> Result<(Session, Ack), PlaneError> {
        if hello.v != PROTOCOL_VERSION {
            return Err(PlaneError::Protocol(format!("version {}", hello.v)));
        }
        let session = self.authenticate(&hello.dev, &hello.token, now_ms)?;
        // frames below resume_seq are gone for good; do not wait for them
        let rec = self.records.get_mut(&hello.dev).expect("authenticated");
        if hello.resume_seq > rec.acked_seq + 1 {
            rec.acked_seq = hello.resume_seq - 1;
        }
        Self::advance_watermark(&self.store, rec, &hello.dev);
        let ack = self.ack_for(&hello.dev)?;
        Ok((session, ack))
    }

    fn advance_watermark(store: &SampleStore, rec: &mut DeviceRecord, device_id: &str) {
        while store.contains(device_id, rec.acked_seq + 1) {
            rec.acked_seq += 1;
        }
    }

    fn ack_for(&self, device_id: &str) -> Result<Ack, PlaneError> {
        Ok(Ack {
            v: PROTOCOL_VERSION,
            dev: device_id.to_string(),
            ack_seq: self.record(device_id)?.acked_seq,
        })
    }

    pub fn is_connected(&self, device_id: &str) -> bool {
        self.records
            .get(device_id)
            .is_some_and(|r| r.session.is_some())
    }

    pub fn disconnect(&mut self, session: &Session) {
        if let Some(rec) = self.records.get_mut(&session.device_id) {
            if rec.session == Some(session.id) {
                rec.session = None;
                rec.connection_established_at = None;
            }
        }
    }

    /// Fails unless `session` is the device's current one (a newer hello or
    /// a restart supersedes it).
    fn check_session(&self, session: &Session) -> Result<(), PlaneError> {
        match self.records.get(&session.device_id) {
            Some(rec) if rec.session == Some(session.id) => Ok(()),
            _ => Err(PlaneError::SessionClosed),
        }
    }

    /// Stores `sample` once per (dev, seq) and returns the cumulative ack.
    pub fn ingest(
        &mut self,
        session: &Session,
        sample: &TelemetrySample,
        now_ms: u64,
    ) -> Result<Ack, PlaneError> {
        self.check_session(session)?;
        if sample.dev != session.device_id {
            return Err(PlaneError::Protocol(format!(
                "sample for {} on session of {}",
                sample.dev, session.device_id
            )));
        }
        if sample.v != PROTOCOL_VERSION {
            return Err(PlaneError::Protocol(format!("version {}", sample.v)));
        }
        let fresh = self.store.insert(sample)?;
        let rec = self.records.get_mut(&session.device_id).ok_or_else(|| {
            PlaneError::NotFound(format!("device {}", session.device_id))
        })?;
        rec.last_seen = Some(now_ms);
        // a session carries the buffer oldest first, so anything below this
        // seq was stored earlier or dropped by the device
        if sample.seq > rec.acked_seq + 1 {
            rec.acked_seq = sample.seq - 1;
        }
        Self::advance_watermark(&self.store, rec, &session.device_id);
        if fresh {
            rec.highest_seq = rec.highest_seq.max(sample.seq);
            // publish what the store holds, so live and history agree
            if let Some(stored) = self
                .store
                .query(&sample.dev, sample.t_ms, sample.t_ms)
                .into_iter()
                .find(|s| s.seq == sample.seq)
            {
                self.live.publish(&stored);
            }
        }
        self.ack_for(&session.device_id)
    }

    /// Processes one line from a device session. Malformed or unexpected
    /// lines bump the protocol-error counters and are skipped; blank lines
    /// are ignored. A superseded session gets [`PlaneError::SessionClosed`].
    pub fn ingest_line(
        &mut self,
        session: &Session,
        line: &str,
        now_ms: u64,
    ) -> Result<Option<Frame>, PlaneError> {
        self.check_session(session)?;
        if line.trim().is_empty() {
            return Ok(None);
        }
        let outcome = match decode_frame(line) {
            Ok(Frame::Sample(sample)) => match self.ingest(session, &sample, now_ms) {
                Ok(ack) => return Ok(Some(Frame::Ack(ack))),
                Err(PlaneError::Storage(e)) => return Err(PlaneError::Storage(e)),
                Err(e) => Err(e),
            },
            Ok(Frame::CommandAck(ack)) => self.command_acked(session, &ack, now_ms),
            Ok(other) => Err(PlaneError::Protocol(format!(
                "unexpected frame from device: {other:?}"
            ))),
            Err(e) => Err(PlaneError::Protocol(e.to_string())),
        };
        if outcome.is_err() {
            self.protocol_errors += 1;
            if let Some(rec) = self.records.get_mut(&session.device_id) {
                rec.protocol_errors += 1;
            }
        }
        Ok(None)
    }

    fn command_acked(
        &mut self,
        session: &Session,
        ack: &CommandAck,
        now_ms: u64,
    ) -> Result<(), PlaneError> {
        let rec = self
            .commands
            .get_mut(&ack.cmd_id)
            .filter(|r| r.command.dev == session.device_id)
            .ok_or_else(|| PlaneError::Protocol(format!("unknown command {}", ack.cmd_id)))?;
        if rec.status.is_final() {
            return Ok(());
        }
        rec.status = match ack.status {
            CommandOutcome::Applied => CommandStatus::Applied,
            CommandOutcome::Rejected => CommandStatus::Rejected,
        };
        rec.reason = ack.reason.clone();
        rec.applied_at_seq = Some(ack.seq);
        rec.updated_at = now_ms;
        Ok(())
    }

    pub fn query_range(
        &self,
        device_id: &str,
        from_ms: u64,
        to_ms: u64,
    ) -> Result<Vec<TelemetrySample>, PlaneError> {
        self.record(device_id)?;
        if from_ms > to_ms {
            return Err(PlaneError::BadRequest("from > to".into()));
        }
        Ok(self.store.query(device_id, from_ms, to_ms))
    }

    pub fn device(&self, device_id: &str, now_ms: u64) -> Result<DeviceInfo, PlaneError> {
        let rec = self.record(device_id)?;
        Ok(DeviceInfo {
            device_id: device_id.to_string(),
            connected: rec.session.is_some(),
            last_seen: rec.last_seen,
            highest_seq: rec.highest_seq,
            acked_seq: rec.acked_seq,
            connection_established_at: rec.connection_established_at,
            connection_duration_ms: rec
                .connection_established_at
                .map(|t| now_ms.saturating_sub(t)),
            sample_count: self.store.len(device_id),
            protocol_errors: rec.protocol_errors,
            latest: self.store.latest(device_id).cloned(),
        })
    }

    pub fn devices(&self, now_ms: u64) -> Vec<DeviceInfo> {
        self.records
            .keys()
            .filter_map(|id| self.device(id, now_ms).ok())
            .collect()
    }

    /// Queues a command for a device on behalf of the operator owning `token`.
    pub fn dispatch_command(
        &mut self,
        token: &str,
        device_id: &str,
        kind: CommandKind,
        ttl_ms: Option<u64>,
        now_ms: u64,
    ) -> Result<CommandRecord, PlaneError> {
        let issuer = self.authorize_operator(token)?;
        self.record(device_id)?;
        self.expire_commands(now_ms);
        let cmd_id = format!("c{}", self.next_cmd);
        self.next_cmd += 1;
        let record = CommandRecord {
            command: Command {
                v: PROTOCOL_VERSION,
                cmd_id: cmd_id.clone(),
                dev: device_id.to_string(),
                kind,
                issued_at: now_ms,
                issuer,
            },
            status: CommandStatus::Queued,
            ttl_ms: ttl_ms.unwrap_or(self.config.command_ttl_ms),
            updated_at: now_ms,
            reason: None,
            applied_at_seq: None,
        };
        self.commands.insert(cmd_id.clone(), record.clone());
        self.queues
            .entry(device_id.to_string())
            .or_default()
            .push_back(cmd_id);
        Ok(record)
    }

    /// Marks queued commands whose TTL ran out before delivery as expired.
    pub fn expire_commands(&mut self, now_ms: u64) {
        for queue in self.queues.values_mut() {
            queue.retain(|id| {
                let Some(rec) = self.commands.get_mut(id) else {
                    return false;
                };
                if now_ms >= rec.command.issued_at.saturating_add(rec.ttl_ms) {
                    rec.status = CommandStatus::Expired;
                    rec.reason = Some("ttl elapsed before delivery".into());
                    rec.updated_at = now_ms;
                    false
                } else {
                    true
                }
            });
        }
    }

    /// Takes the commands due for the device on `session`, marking them delivered.
    pub fn take_pending(&mut self, session: &Session, now_ms: u64) -> Vec<Command> {
        self.expire_commands(now_ms);
        let current = self
            .records
            .get(&session.device_id)
            .is_some_and(|r| r.session == Some(session.id));
        if !current {
            return Vec::new();
        }
        let Some(queue) = self.queues.get_mut(&session.device_id) else {
            return Vec::new();
        };
        let mut out = Vec::with_capacity(queue.len());
        for id in queue.drain(..) {
            if let Some(rec) = self.commands.get_mut(&id) {
                rec.status = CommandStatus::Delivered;
                rec.updated_at = now_ms;
                out.push(rec.command.clone());
            }
        }
        out
    }

    pub fn command_status(
        &mut self,
        device_id: &str,
        cmd_id: &str,
        now_ms: u64,
    ) -> Result<CommandRecord, PlaneError> {
        self.expire_commands(now_ms);
        self.commands
            .get(cmd_id)
            .filter(|r| r.command.dev == device_id)
            .cloned()
            .ok_or_else(|| PlaneError::NotFound(format!("command {cmd_id}")))
    }

    pub fn subscribe_live(&mut self, token: &str, device_id: &str) -> Result<Subscription, PlaneError> {
        self.authorize_operator(token)?;
        self.record(device_id)?;
        Ok(self.live.subscribe(device_id))
    }

    pub fn live_subscribers(&self, device_id: &str) -> usize {
        self.live.subscriber_count(device_id)
    }
}
