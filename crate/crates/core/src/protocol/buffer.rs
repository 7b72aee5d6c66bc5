use std::collections::VecDeque;

use thiserror::Error;

/// Default ring capacity: about 28 h of one frame per 10 s.
pub const DEFAULT_BUFFER_CAPACITY: usize = 10_000;

#[derive(Debug, Error, PartialEq, Eq)]
#[error("link down")]
pub struct LinkDown;

/// Outbound half of a device connection.
pub trait Link {
    fn is_up(&self) -> bool;
    fn transmit(&mut self, frame: &str) -> Result<(), LinkDown>;
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BufferedFrame {
    pub seq: u64,
    pub line: String,
}

/// Ring of unacknowledged frames, oldest first.
///
/// Frames stay buffered until a cumulative ack covers them. Within one
/// connection each frame is transmitted once; when the link comes back
/// after being down, transmission restarts from the oldest buffered frame.
#[derive(Debug, Clone)]
pub struct SendBuffer {
    frames: VecDeque<BufferedFrame>,
    capacity: usize,
    dropped_count: u64,
    pushed_count: u64,
    acked_count: u64,
    transmitted_count: u64,
    /// Frames with `seq >= next_tx` have not been sent on the current link.
    next_tx: u64,
    link_was_up: bool,
}

impl SendBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "send buffer capacity must be positive");
        Self {
            frames: VecDeque::with_capacity(capacity.min(4096)),
            capacity,
            dropped_count: 0,
            pushed_count: 0,
            acked_count: 0,
            transmitted_count: 0,
            next_tx: 0,
            link_was_up: false,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn dropped_count(&self) -> u64 {
        self.dropped_count
    }

    pub fn pushed_count(&self) -> u64 {
        self.pushed_count
    }

    pub fn acked_count(&self) -> u64 {
        self.acked_count
    }

    /// Frame transmissions, retransmissions included.
    pub fn transmitted_count(&self) -> u64 {
        self.transmitted_count
    }

    pub fn oldest_seq(&self) -> Option<u64> {
        self.frames.front().map(|f| f.seq)
    }

    pub fn frames(&self) -> impl Iterator<Item = &BufferedFrame> {
        self.frames.iter()
    }

    /// Appends a frame, evicting the oldest one when full.
    ///
    /// Sequence numbers must be pushed in increasing order.
    pub fn push(&mut self, seq: u64, line: String) {
        debug_assert!(self.frames.back().is_none_or(|b| b.seq < seq));
        if self.frames.len() == self.capacity {
            self.frames.pop_front();
            self.dropped_count += 1;
        }
        self.frames.push_back(BufferedFrame { seq, line });
        self.pushed_count += 1;
    }

    /// Applies a cumulative ack; returns how many frames it released.
    pub fn ack(&mut self, ack_seq: u64) -> usize {
        let mut released = 0;
        while self.frames.front().is_some_and(|f| f.seq <= ack_seq) {
            self.frames.pop_front();
            released += 1;
        }
        self.acked_count += released as u64;
        released
    }

    /// Restart transmission from the oldest buffered frame.
    pub fn rewind(&mut self) {
        self.next_tx = 0;
    }

    /// Sends every frame not yet transmitted on the current link, oldest
    /// first. A down link is a no-op. Returns the number of frames sent.
    pub fn flush<L: Link + ?Sized>(&mut self, link: &mut L) -> usize {
        if !link.is_up() {
            self.link_was_up = false;
            return 0;
        }
        if !self.link_was_up {
            self.rewind();
            self.link_was_up = true;
        }
        let mut sent = 0;
        let start = self.next_tx;
        for frame in self.frames.iter().filter(|f| f.seq >= start) {
            if link.transmit(&frame.line).is_err() {
                self.link_was_up = false;
                break;
            }
            self.next_tx = frame.seq + 1;
            sent += 1;
        }
        self.transmitted_count += sent as u64;
        sent
    }

    /// Must be called when the link drops outside of [`flush`](Self::flush).
    pub fn link_lost(&mut self) {
        self.link_was_up = false;
    }
}

impl Default for SendBuffer {
    fn default() -> Self {
        Self::new(DEFAULT_BUFFER_CAPACITY)
    }
}
