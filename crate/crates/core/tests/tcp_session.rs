mod common;

use std::sync::{Arc, Mutex};
use std::time::Duration;

use tokio::io::{AsyncBufReadExt, AsyncWriteExt, BufReader};
use tokio::net::TcpStream;

use alive::agent::{FileLog, MemoryLog};
use alive::clock::{Clock, SystemClock};
use alive::plane::device_port::Server;
use alive::plane::{CommandStatus, ControlPlane, PlaneConfig, SharedPlane};
use alive::protocol::{
    decode_frame, encode_frame, CommandAck, CommandKind, CommandOutcome, Frame, Hello,
    PROTOCOL_VERSION,
};
use alive::scenario::{
    replay_log, resolve_gains, scenario_registry, Backend, ScenarioSpec, SimOptions, Simulation,
};
use common::{load, sample_seqs};

async fn start(spec: &ScenarioSpec) -> (Server, SharedPlane) {
    let plane = Arc::new(Mutex::new(ControlPlane::in_memory(
        scenario_registry(spec),
        PlaneConfig::default(),
    )));
    let server = Server::start(
        plane.clone(),
        Arc::new(SystemClock),
        "127.0.0.1:0".parse().unwrap(),
        "127.0.0.1:0".parse().unwrap(),
    )
    .await
    .unwrap();
    (server, plane)
}

fn run_remote(spec: ScenarioSpec, addr: std::net::SocketAddr, log: MemoryLog) -> alive::scenario::RunOutput {
    let gains = resolve_gains(&spec).unwrap();
    let options = SimOptions {
        log: Some(Box::new(log)),
        trace: None,
        backend: Backend::Remote(addr),
    };
    Simulation::new(spec, gains, options).unwrap().run().unwrap()
}

#[tokio::test(flavor = "multi_thread")]
async fn outage_over_tcp_loses_nothing() {
    let spec = load("outage.scenario");
    let (server, plane) = start(&spec).await;
    let addr = server.device_addr;
    let log = MemoryLog::new();
    let dev = spec.device_id.clone();
    let out = {
        let (spec, log) = (spec.clone(), log.clone());
        tokio::task::spawn_blocking(move || run_remote(spec, addr, log)).await.unwrap()
    };
    assert_eq!(out.stats.frames_dropped, 0);
    assert_eq!(out.stats.frames_acked, out.stats.frames_sent);
    let device = sample_seqs(&log.lines());
    let p = plane.lock().unwrap();
    assert_eq!(p.store().seqs(&dev), device);
    assert_eq!(p.device(&dev, 0).unwrap().acked_seq, *device.last().unwrap());
    server.shutdown();
}

async fn hello(addr: std::net::SocketAddr, token: &str) -> (BufReader<tokio::net::tcp::OwnedReadHalf>, tokio::net::tcp::OwnedWriteHalf) {
    let stream = TcpStream::connect(addr).await.unwrap();
    let (r, mut w) = stream.into_split();
    let h = Hello {
        v: PROTOCOL_VERSION,
        dev: "alive-01".into(),
        token: token.into(),
        resume_seq: 1,
    };
    w.write_all(encode_frame(&Frame::Hello(h)).unwrap().as_bytes()).await.unwrap();
    (BufReader::new(r), w)
}

async fn next_frame(r: &mut BufReader<tokio::net::tcp::OwnedReadHalf>) -> Option<Frame> {
    let mut line = String::new();
    let n = tokio::time::timeout(Duration::from_secs(5), r.read_line(&mut line))
        .await
        .expect("reply in time")
        .unwrap();
    (n > 0).then(|| decode_frame(&line).unwrap())
}

#[tokio::test(flavor = "multi_thread")]
async fn commands_reach_a_connected_device() {
    let spec = ScenarioSpec::with_duration(60.0);
    let (server, plane) = start(&spec).await;
    let (mut r, mut w) = hello(server.device_addr, &spec.device_token).await;
    assert!(matches!(next_frame(&mut r).await, Some(Frame::Ack(a)) if a.ack_seq == 0));

    let now = SystemClock.now_ms();
    let rec = plane
        .lock()
        .unwrap()
        .dispatch_command(
            &spec.operator_token,
            "alive-01",
            CommandKind::SetSetpoint { setpoint_c: 12.0 },
            None,
            now,
        )
        .unwrap();
    let Some(Frame::Command(cmd)) = next_frame(&mut r).await else {
        panic!("expected a command");
    };
    assert_eq!(cmd.cmd_id, rec.command.cmd_id);
    assert_eq!(cmd.kind, CommandKind::SetSetpoint { setpoint_c: 12.0 });

    let ack = CommandAck {
        v: PROTOCOL_VERSION,
        cmd_id: cmd.cmd_id.clone(),
        status: CommandOutcome::Applied,
        seq: 1,
        reason: None,
    };
    w.write_all(encode_frame(&Frame::CommandAck(ack)).unwrap().as_bytes()).await.unwrap();
    let mut status = CommandStatus::Delivered;
    for _ in 0..100 {
        status = plane.lock().unwrap().command_status("alive-01", &cmd.cmd_id, now).unwrap().status;
        if status == CommandStatus::Applied {
            break;
        }
        tokio::time::sleep(Duration::from_millis(10)).await;
    }
    assert_eq!(status, CommandStatus::Applied);
    server.shutdown();
}

#[tokio::test(flavor = "multi_thread")]
async fn bad_sessions_are_refused_and_garbage_counted() {
    let spec = ScenarioSpec::with_duration(60.0);
    let (server, plane) = start(&spec).await;

    let (mut r, _w) = hello(server.device_addr, "wrong").await;
    assert!(next_frame(&mut r).await.is_none(), "bad token must close the session");

    let stream = TcpStream::connect(server.device_addr).await.unwrap();
    let (r2, mut w2) = stream.into_split();
    let mut r2 = BufReader::new(r2);
    w2.write_all(b"{\"v\":1,\"ack_seq\":3,\"dev\":\"alive-01\"}\n").await.unwrap();
    assert!(next_frame(&mut r2).await.is_none(), "first frame must be a hello");

    let (mut r, mut w) = hello(server.device_addr, &spec.device_token).await;
    next_frame(&mut r).await.unwrap();
    w.write_all(b"this is not a frame\n").await.unwrap();
    w.write_all(b"{\"v\":9}\n").await.unwrap();
    // the session survives and still answers real frames
    let mut sample_line = None;
    let log = MemoryLog::new();
    {
        let mut spec = spec.clone();
        spec.duration_s = 10.0;
        let gains = resolve_gains(&spec).unwrap();
        let opts = SimOptions {
            log: Some(Box::new(log.clone())),
            ..SimOptions::default()
        };
        Simulation::new(spec, gains, opts).unwrap().run().unwrap();
        for l in log.lines() {
            if matches!(decode_frame(&l), Ok(Frame::Sample(_))) {
                sample_line = Some(l);
            }
        }
    }
    let mut line = sample_line.unwrap();
    line.push('\n');
    w.write_all(line.as_bytes()).await.unwrap();
    assert!(matches!(next_frame(&mut r).await, Some(Frame::Ack(a)) if a.ack_seq == 1));
    let p = plane.lock().unwrap();
    assert_eq!(p.protocol_errors(), 2);
    assert_eq!(p.device("alive-01", 0).unwrap().protocol_errors, 2);
    drop(p);
    server.shutdown();
}

#[tokio::test(flavor = "multi_thread")]
async fn replayed_log_matches_and_is_idempotent() {
    let dir = tempfile::tempdir().unwrap();
    let log_path = dir.path().join("device.log");
    let mut spec = load("steady.scenario");
    spec.duration_s = 1800.0;
    {
        let gains = resolve_gains(&spec).unwrap();
        let opts = SimOptions {
            log: Some(Box::new(FileLog::create(&log_path).unwrap())),
            ..SimOptions::default()
        };
        Simulation::new(spec.clone(), gains, opts).unwrap().run().unwrap();
    }
    let (server, plane) = start(&spec).await;
    let addr = server.device_addr;
    let token = spec.device_token.clone();
    for _ in 0..2 {
        let (path, token) = (log_path.clone(), token.clone());
        let report = tokio::task::spawn_blocking(move || replay_log(&path, addr, &token, Duration::from_secs(5)))
            .await
            .unwrap()
            .unwrap();
        assert_eq!(report.frames, 180);
        assert_eq!((report.first_seq, report.last_seq, report.acked_seq), (1, 180, 180));
    }
    let lines: Vec<String> = std::fs::read_to_string(&log_path).unwrap().lines().map(String::from).collect();
    assert_eq!(plane.lock().unwrap().store().seqs(&spec.device_id), sample_seqs(&lines));

    let (path, addr) = (log_path.clone(), server.device_addr);
    let err = tokio::task::spawn_blocking(move || replay_log(&path, addr, "bad", Duration::from_secs(5)))
        .await
        .unwrap();
    assert!(err.is_err());
    server.shutdown();
}
