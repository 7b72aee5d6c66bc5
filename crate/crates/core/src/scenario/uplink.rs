use std::collections::VecDeque;
use std::io::{self, Read, Write};
use std::net::{SocketAddr, TcpStream};
use std::time::{Duration, Instant};

use crate::plane::{Session, SharedPlane};
use crate::protocol::{decode_frame, encode_frame, Frame, Hello, Link, LinkDown};

/// The device's connection to a control plane.
pub trait Uplink: Send {
    fn is_connected(&self) -> bool;
    /// Opens a session with `hello`.
    fn connect(&mut self, hello: &Hello, now_ms: u64) -> Result<(), LinkDown>;
    fn send(&mut self, line: &str, now_ms: u64) -> Result<(), LinkDown>;
    /// Frames received from the server since the last poll.
    fn poll(&mut self, now_ms: u64) -> Vec<Frame>;
    fn disconnect(&mut self, now_ms: u64);
}

/// Adapts an [`Uplink`] to the send buffer's [`Link`].
pub(crate) struct LinkAdapter<'a> {
    pub uplink: &'a mut dyn Uplink,
    pub now_ms: u64,
}

impl Link for LinkAdapter<'_> {
    fn is_up(&self) -> bool {
        self.uplink.is_connected()
    }

    fn transmit(&mut self, frame: &str) -> Result<(), LinkDown> {
        self.uplink.send(frame, self.now_ms)
    }
}

/// Talks to an in-process [`ControlPlane`](crate::plane::ControlPlane)
/// directly, with no transport in between.
pub struct EmbeddedUplink {
    plane: SharedPlane,
    session: Option<Session>,
    inbox: VecDeque<Frame>,
}

impl EmbeddedUplink {
    pub fn new(plane: SharedPlane) -> Self {
        Self {
            plane,
            session: None,
            inbox: VecDeque::new(),
        }
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, crate::plane::ControlPlane> {
        self.plane.lock().unwrap_or_else(|e| e.into_inner())
    }
}

impl Uplink for EmbeddedUplink {
    fn is_connected(&self) -> bool {
        self.session.is_some()
    }

    fn connect(&mut self, hello: &Hello, now_ms: u64) -> Result<(), LinkDown> {
        let (session, ack) = self.lock().open_session(hello, now_ms).map_err(|_| LinkDown)?;
        self.session = Some(session);
        self.inbox.push_back(Frame::Ack(ack));
        Ok(())
    }

    fn send(&mut self, line: &str, now_ms: u64) -> Result<(), LinkDown> {
        let session = self.session.clone().ok_or(LinkDown)?;
        let reply = self.lock().ingest_line(&session, line, now_ms);
        match reply {
            Ok(Some(frame)) => self.inbox.push_back(frame),
            Ok(None) => {}
            Err(_) => {
                self.disconnect(now_ms);
                return Err(LinkDown);
            }
        }
        Ok(())
    }

    fn poll(&mut self, now_ms: u64) -> Vec<Frame> {
        let mut out: Vec<Frame> = self.inbox.drain(..).collect();
        if let Some(session) = self.session.clone() {
            let cmds = self.lock().take_pending(&session, now_ms);
            out.extend(cmds.into_iter().map(Frame::Command));
        }
        out
    }

    fn disconnect(&mut self, _now_ms: u64) {
        if let Some(session) = self.session.take() {
            self.lock().disconnect(&session);
        }
        self.inbox.clear();
    }
}

/// Newline-delimited frames over TCP to a remote control plane.
///
/// The socket is non-blocking; a write that would block keeps draining
/// replies so neither side can stall on a full buffer.
pub struct TcpUplink {
    addr: SocketAddr,
    conn: Option<TcpStream>,
    partial: Vec<u8>,
    inbox: Vec<Frame>,
    pub connect_timeout: Duration,
    pub write_timeout: Duration,
}

impl TcpUplink {
    pub fn new(addr: SocketAddr) -> Self {
        Self {
            addr,
            conn: None,
            partial: Vec::new(),
            inbox: Vec::new(),
            connect_timeout: Duration::from_secs(2),
            write_timeout: Duration::from_secs(10),
        }
    }

    fn open(&mut self, hello: &Hello) -> io::Result<()> {
        let mut stream = TcpStream::connect_timeout(&self.addr, self.connect_timeout)?;
        stream.set_nodelay(true)?;
        let line = encode_frame(&Frame::Hello(hello.clone())).map_err(io::Error::other)?;
        stream.write_all(line.as_bytes())?;
        stream.set_nonblocking(true)?;
        self.conn = Some(stream);
        self.partial.clear();
        self.inbox.clear();
        Ok(())
    }

    /// Reads whatever has arrived; `Err` means the connection is gone.
    fn drain(&mut self) -> io::Result<()> {
        let Some(stream) = self.conn.as_mut() else {
            return Err(io::ErrorKind::NotConnected.into());
        };
        let mut buf = [0u8; 8192];
        loop {
            match stream.read(&mut buf) {
                Ok(0) => return Err(io::ErrorKind::UnexpectedEof.into()),
                Ok(n) => self.partial.extend_from_slice(&buf[..n]),
                Err(e) if e.kind() == io::ErrorKind::WouldBlock => break,
                Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
                Err(e) => return Err(e),
            }
        }
        while let Some(i) = self.partial.iter().position(|&b| b == b'\n') {
            let line: Vec<u8> = self.partial.drain(..=i).collect();
            if let Ok(frame) = decode_frame(&String::from_utf8_lossy(&line)) {
                self.inbox.push(frame);
            }
        }
        Ok(())
    }

    fn write(&mut self, mut bytes: &[u8]) -> io::Result<()> {
        let deadline = Instant::now() + self.write_timeout;
        while !bytes.is_empty() {
            let stream = self.conn.as_mut().ok_or(io::ErrorKind::NotConnected)?;
            match stream.write(bytes) {
                Ok(0) => return Err(io::ErrorKind::WriteZero.into()),
                Ok(n) => bytes = &bytes[n..],
                Err(e) if e.kind() == io::ErrorKind::WouldBlock => {
                    if Instant::now() > deadline {
                        return Err(io::ErrorKind::TimedOut.into());
                    }
                    self.drain()?;
                    std::thread::sleep(Duration::from_micros(200));
                }
                Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
                Err(e) => return Err(e),
            }
        }
        Ok(())
    }
}

impl Uplink for TcpUplink {
    fn is_connected(&self) -> bool {
        self.conn.is_some()
    }

    fn connect(&mut self, hello: &Hello, _now_ms: u64) -> Result<(), LinkDown> {
        self.open(hello).map_err(|_| LinkDown)
    }

    fn send(&mut self, line: &str, now_ms: u64) -> Result<(), LinkDown> {
        if self.write(line.as_bytes()).is_err() {
            self.disconnect(now_ms);
            return Err(LinkDown);
        }
        Ok(())
    }

    fn poll(&mut self, now_ms: u64) -> Vec<Frame> {
        let closed = self.conn.is_some() && self.drain().is_err();
        let out = std::mem::take(&mut self.inbox);
        if closed {
            self.disconnect(now_ms);
        }
        out
    }

    fn disconnect(&mut self, _now_ms: u64) {
        if let Some(stream) = self.conn.take() {
            let _ = stream.shutdown(std::net::Shutdown::Both);
        }
        self.partial.clear();
    }
}
