//! Runs the control plane on loopback, drives a simulated device into it
//! over TCP, reads the result back over HTTP, then restarts the plane from
//! its data directory.

use std::sync::{Arc, Mutex};

use tokio::io::{AsyncReadExt, AsyncWriteExt};
use tokio::net::TcpStream;

use alive::clock::SystemClock;
use alive::plane::device_port::Server;
use alive::plane::ControlPlane;
use alive::scenario::{resolve_gains, scenario_registry, Backend, ScenarioSpec, SimOptions, Simulation};

async fn http_get(addr: std::net::SocketAddr, path: &str, token: &str) -> std::io::Result<String> {
    let mut s = TcpStream::connect(addr).await?;
    let req = format!(
        "GET {path} HTTP/1.1\r\nHost: {addr}\r\nAuthorization: Bearer {token}\r\nConnection: close\r\n\r\n"
    );
    s.write_all(req.as_bytes()).await?;
    let mut resp = String::new();
    s.read_to_string(&mut resp).await?;
    Ok(resp.split("\r\n\r\n").nth(1).unwrap_or_default().to_string())
}

#[tokio::main]
async fn main() -> Result<(), Box<dyn std::error::Error>> {
    let data = tempfile::tempdir()?;
    let spec = ScenarioSpec::from_toml("duration_s = 600\ninitial_temp_c = 15.0")?;
    let registry = scenario_registry(&spec);
    let token = spec.operator_token.clone();
    let dev = spec.device_id.clone();

    let plane = ControlPlane::open(registry.clone(), data.path(), Default::default())?;
    let server = Server::start(
        Arc::new(Mutex::new(plane)),
        Arc::new(SystemClock),
        "127.0.0.1:0".parse()?,
        "127.0.0.1:0".parse()?,
    )
    .await?;
    println!("device port {}, http {}", server.device_addr, server.http_addr);

    let device_addr = server.device_addr;
    let out = tokio::task::spawn_blocking(move || {
        let gains = resolve_gains(&spec)?;
        let options = SimOptions {
            backend: Backend::Remote(device_addr),
            ..SimOptions::default()
        };
        Simulation::new(spec, gains, options)?.run()
    })
    .await??;
    println!(
        "device sent {} samples, {} acked",
        out.stats.frames_sent, out.stats.frames_acked
    );

    let body = http_get(server.http_addr, &format!("/api/devices/{dev}"), &token).await?;
    let info: serde_json::Value = serde_json::from_str(&body)?;
    println!(
        "server: {} samples, acked through seq {}",
        info["sample_count"], info["acked_seq"]
    );
    let body = http_get(server.http_addr, &format!("/api/devices/{dev}/samples"), &token).await?;
    let before: Vec<serde_json::Value> = serde_json::from_str(&body)?;
    server.shutdown();

    let reopened = ControlPlane::open(registry, data.path(), Default::default())?;
    let after = reopened.query_range(&dev, 0, u64::MAX)?;
    println!(
        "after restart: {} samples, identical to before: {}",
        after.len(),
        serde_json::to_value(&after)? == serde_json::Value::Array(before)
    );
    Ok(())
}
