//! Operator commands through the HTTP API against a running simulation.
//!
//! The simulation and the API share one control plane and one logical
//! clock, so latencies below are in simulated time.

use std::sync::{Arc, Mutex};

use axum::body::Body;
use axum::http::{header, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

use alive::clock::ManualClock;
use alive::plane::{http::router, ControlPlane, PlaneConfig};
use alive::scenario::{
    resolve_gains, scenario_registry, Backend, ScenarioSpec, SimOptions, Simulation,
};

const SCENARIO: &str = r#"
duration_s = 3600
initial_temp_c = 15.0
outage_windows = [[2400, 3000]]

[schedule]
day_start = "06:00"
night_start = "22:00"
"#;

async fn call(app: &Router, method: &str, uri: &str, token: &str, body: Option<Value>) -> (StatusCode, Value) {
    let req = Request::builder()
        .method(method)
        .uri(uri)
        .header(header::AUTHORIZATION, format!("Bearer {token}"))
        .header(header::CONTENT_TYPE, "application/json")
        .body(body.map_or_else(Body::empty, |b| Body::from(b.to_string())))
        .expect("request");
    let resp = app.clone().oneshot(req).await.expect("infallible");
    let status = resp.status();
    let bytes = resp.into_body().collect().await.expect("body").to_bytes();
    (status, serde_json::from_slice(&bytes).unwrap_or(Value::Null))
}

#[tokio::main(flavor = "current_thread")]
async fn main() -> Result<(), Box<dyn std::error::Error>> {
    let spec = ScenarioSpec::from_toml(SCENARIO)?;
    let token = spec.operator_token.clone();
    let dev = spec.device_id.clone();
    let plane = Arc::new(Mutex::new(ControlPlane::in_memory(
        scenario_registry(&spec),
        PlaneConfig::default(),
    )));
    let clock = Arc::new(ManualClock::new(spec.start_epoch_ms));
    let app = router(plane.clone(), clock.clone());
    let gains = resolve_gains(&spec)?;
    let options = SimOptions {
        backend: Backend::Shared {
            plane,
            clock: clock.clone(),
        },
        ..SimOptions::default()
    };
    let mut sim = Simulation::new(spec, gains, options)?;
    sim.run_until(1200.0)?;

    let cmds = format!("/api/devices/{dev}/commands");
    let issued_at = sim.time_s();
    let (status, record) = call(
        &app,
        "POST",
        &cmds,
        &token,
        Some(json!({"kind": "set_setpoint", "payload": {"setpoint_c": 12.0}})),
    )
    .await;
    println!("POST set_setpoint -> {status}, {}", record["status"]);
    let cmd_id = record["command"]["cmd_id"].as_str().unwrap_or_default().to_string();

    while sim.device().state.manual_setpoint_c != Some(12.0) {
        sim.step()?;
    }
    // the command lands before the cycle's control decision
    let applied_at = sim.time_s() - sim.spec().control.sample_period_s;
    println!("issued at t = {issued_at} s, in control from t = {applied_at} s");
    let (_, record) = call(&app, "GET", &format!("{cmds}/{cmd_id}"), &token, None).await;
    println!("status now {}", record["status"]);

    call(
        &app,
        "POST",
        &cmds,
        &token,
        Some(json!({"kind": "actuate", "payload": {"actuator": "led3", "on": true}})),
    )
    .await;
    sim.run_until(2400.0)?;
    let (_, info) = call(&app, "GET", &format!("/api/devices/{dev}"), &token, None).await;
    println!(
        "latest sample: setpoint {} °C, act {:#07b}",
        info["latest"]["setpoint_c"],
        info["latest"]["act"].as_u64().unwrap_or_default()
    );

    // the device is offline until t = 3000 s
    sim.run_until(2460.0)?;
    let (_, record) = call(
        &app,
        "POST",
        &cmds,
        &token,
        Some(json!({"kind": "clear_override", "ttl_ms": 30000})),
    )
    .await;
    let cmd_id = record["command"]["cmd_id"].as_str().unwrap_or_default().to_string();
    sim.run_until(2500.0)?;
    let (_, record) = call(&app, "GET", &format!("{cmds}/{cmd_id}"), &token, None).await;
    println!("command sent while offline: {} ({})", record["status"], record["reason"]);

    let (status, _) = call(&app, "GET", "/api/devices", "wrong-token", None).await;
    println!("bad token -> {status}");
    Ok(())
}
