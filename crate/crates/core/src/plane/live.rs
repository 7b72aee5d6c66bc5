use std::collections::BTreeMap;

use tokio::sync::mpsc::{self, error::TrySendError};

use crate::protocol::TelemetrySample;

pub const DEFAULT_LIVE_BACKLOG: usize = 256;

#[derive(Debug, Clone, PartialEq)]
pub enum LiveEvent {
    Sample(TelemetrySample),
    /// Final event before the stream ends.
    Closed(String),
}

pub const BACKLOG_CLOSE_REASON: &str = "subscriber backlog exceeded";

/// Receiving end of a live feed for one device.
#[derive(Debug)]
pub struct Subscription {
    pub device_id: String,
    rx: mpsc::Receiver<LiveEvent>,
}

impl Subscription {
    /// Next event without waiting.
    pub fn try_next(&mut self) -> Option<LiveEvent> {
        self.rx.try_recv().ok()
    }

    pub async fn next(&mut self) -> Option<LiveEvent> {
        self.rx.recv().await
    }

    /// Drains everything currently queued.
    pub fn drain(&mut self) -> Vec<LiveEvent> {
        std::iter::from_fn(|| self.try_next()).collect()
    }
}

/// Bounded per-subscriber fan-out. Publishing never waits: a subscriber
/// whose queue fills up gets a close event in its last slot and is dropped.
#[derive(Debug, Default)]
pub struct LiveHub {
    backlog: usize,
    subscribers: BTreeMap<String, Vec<mpsc::Sender<LiveEvent>>>,
}

impl LiveHub {
    pub fn new(backlog: usize) -> Self {
        Self {
            backlog: backlog.max(2),
            subscribers: BTreeMap::new(),
        }
    }

    pub fn subscribe(&mut self, device_id: &str) -> Subscription {
        let (tx, rx) = mpsc::channel(self.backlog);
        self.subscribers
            .entry(device_id.to_string())
            .or_default()
            .push(tx);
        Subscription {
            device_id: device_id.to_string(),
            rx,
        }
    }

    pub fn subscriber_count(&self, device_id: &str) -> usize {
        self.subscribers.get(device_id).map_or(0, Vec::len)
    }

    pub fn publish(&mut self, sample: &TelemetrySample) {
        let Some(subs) = self.subscribers.get_mut(&sample.dev) else {
            return;
        };
        subs.retain(|tx| {
            if tx.capacity() <= 1 {
                let _ = tx.try_send(LiveEvent::Closed(BACKLOG_CLOSE_REASON.into()));
                return false;
            }
            match tx.try_send(LiveEvent::Sample(sample.clone())) {
                Ok(()) => true,
                Err(TrySendError::Full(_)) | Err(TrySendError::Closed(_)) => false,
            }
        });
    }
}
