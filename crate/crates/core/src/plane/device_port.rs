//! TCP device port and the combined server runner.

use std::io;
use std::net::SocketAddr;
use std::sync::Arc;
use std::time::Duration;

use tokio::io::{AsyncBufReadExt, AsyncWriteExt, BufReader};
use tokio::net::{TcpListener, TcpStream};
use tokio::task::JoinHandle;

use crate::clock::Clock;
use crate::protocol::{decode_frame, encode_frame, Frame};

use super::http::{router, SharedPlane};
use super::PlaneError;

/// How often a session looks for queued commands.
pub const COMMAND_POLL: Duration = Duration::from_millis(50);
const HELLO_TIMEOUT: Duration = Duration::from_secs(10);

/// Accepts device connections forever.
pub async fn serve_devices(
    listener: TcpListener,
    plane: SharedPlane,
    clock: Arc<dyn Clock>,
) -> io::Result<()> {
    loop {
        let (stream, _) = listener.accept().await?;
        let plane = plane.clone();
        let clock = clock.clone();
        tokio::spawn(async move {
            let _ = handle_device(stream, plane, clock).await;
        });
    }
}

fn lock(plane: &SharedPlane) -> std::sync::MutexGuard<'_, super::ControlPlane> {
    plane.lock().unwrap_or_else(|e| e.into_inner())
}

fn encode(frame: &Frame) -> Result<String, PlaneError> {
    encode_frame(frame).map_err(|e| PlaneError::Protocol(e.to_string()))
}

/// Runs one device session to completion.
pub async fn handle_device(
    stream: TcpStream,
    plane: SharedPlane,
    clock: Arc<dyn Clock>,
) -> Result<(), PlaneError> {
    let io_err = |e: io::Error| PlaneError::Protocol(e.to_string());
    stream.set_nodelay(true).map_err(io_err)?;
    let (read, mut write) = stream.into_split();
    let mut lines = BufReader::new(read).lines();

    let first = tokio::time::timeout(HELLO_TIMEOUT, lines.next_line())
        .await
        .map_err(|_| PlaneError::Protocol("no hello".into()))?
        .map_err(io_err)?
        .ok_or_else(|| PlaneError::Protocol("closed before hello".into()))?;
    let Ok(Frame::Hello(hello)) = decode_frame(&first) else {
        return Err(PlaneError::Protocol("first frame must be hello".into()));
    };
    let (session, ack) = lock(&plane).open_session(&hello, clock.now_ms())?;
    write
        .write_all(encode(&Frame::Ack(ack))?.as_bytes())
        .await
        .map_err(io_err)?;

    let mut poll = tokio::time::interval(COMMAND_POLL);
    let result = loop {
        tokio::select! {
            line = lines.next_line() => {
                let line = match line {
                    Ok(Some(l)) => l,
                    Ok(None) => break Ok(()),
                    Err(e) => break Err(io_err(e)),
                };
                let reply = lock(&plane).ingest_line(&session, &line, clock.now_ms());
                match reply {
                    Ok(Some(frame)) => {
                        if let Err(e) = write.write_all(encode(&frame)?.as_bytes()).await {
                            break Err(io_err(e));
                        }
                    }
                    Ok(None) => {}
                    Err(e) => break Err(e),
                }
            }
            _ = poll.tick() => {
                let cmds = lock(&plane).take_pending(&session, clock.now_ms());
                let mut out = String::new();
                for c in cmds {
                    out.push_str(&encode(&Frame::Command(c))?);
                }
                if !out.is_empty() {
                    if let Err(e) = write.write_all(out.as_bytes()).await {
                        break Err(io_err(e));
                    }
                }
            }
        }
    };
    lock(&plane).disconnect(&session);
    result
}

/// Device port and HTTP API running on the current tokio runtime.
pub struct Server {
    pub device_addr: SocketAddr,
    pub http_addr: SocketAddr,
    tasks: Vec<JoinHandle<io::Result<()>>>,
}

impl Server {
    pub async fn start(
        plane: SharedPlane,
        clock: Arc<dyn Clock>,
        device_addr: SocketAddr,
        http_addr: SocketAddr,
    ) -> io::Result<Server> {
        let devices = TcpListener::bind(device_addr).await?;
        let http = TcpListener::bind(http_addr).await?;
        let device_addr = devices.local_addr()?;
        let http_addr = http.local_addr()?;
        let app = router(plane.clone(), clock.clone());
        let tasks = vec![
            tokio::spawn(serve_devices(devices, plane, clock)),
            tokio::spawn(async move { axum::serve(http, app).await }),
        ];
        Ok(Server {
            device_addr,
            http_addr,
            tasks,
        })
    }

    /// Waits until either listener fails.
    pub async fn wait(mut self) -> io::Result<()> {
        let (first, _, rest) = futures::future::select_all(self.tasks.drain(..)).await;
        for t in rest {
            t.abort();
        }
        first.map_err(io::Error::other)?
    }

    pub fn shutdown(self) {
        for t in &self.tasks {
            t.abort();
        }
    }
}
