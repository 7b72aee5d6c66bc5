use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use clap::{Parser, Subcommand};

use alive::clock::SystemClock;
use alive::plane::device_port::Server;
use alive::plane::{ControlPlane, PlaneConfig, Registry, DEFAULT_COMMAND_TTL_MS, DEFAULT_LIVE_BACKLOG};
use alive::scenario::{autotune, load_scenario, replay_log, run_to_dir};

#[derive(Parser)]
#[command(name = "alive", version, about = "Cold-chain chamber simulator and control plane")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a scenario and write trace.csv, stats.txt and device.log.
    Run {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the scenario seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Simulated seconds per wall second (0 = as fast as possible).
        #[arg(long)]
        accel: Option<f64>,
        /// Send telemetry to this device port instead of an embedded plane.
        #[arg(long)]
        server: Option<SocketAddr>,
    },
    /// Relay-autotune the scenario's plant and print the gains.
    Autotune {
        #[arg(long)]
        scenario: PathBuf,
    },
    /// Re-send a device log to a control plane.
    Replay {
        #[arg(long)]
        log: PathBuf,
        #[arg(long)]
        server: SocketAddr,
        #[arg(long, env = "ALIVE_DEVICE_TOKEN")]
        token: String,
        #[arg(long, default_value_t = 10)]
        timeout_s: u64,
    },
    /// Run the control plane: TCP device port plus HTTP API.
    Serve {
        #[arg(long, env = "ALIVE_DEVICE_ADDR", default_value = "127.0.0.1:7070")]
        device_addr: SocketAddr,
        #[arg(long, env = "ALIVE_HTTP_ADDR", default_value = "127.0.0.1:8080")]
        http_addr: SocketAddr,
        #[arg(long, env = "ALIVE_DATA_DIR", default_value = "alive-data")]
        data_dir: PathBuf,
        /// TOML file with [devices] and [operators] tables.
        #[arg(long, env = "ALIVE_TOKENS")]
        tokens: PathBuf,
        #[arg(long, env = "ALIVE_COMMAND_TTL_MS", default_value_t = DEFAULT_COMMAND_TTL_MS)]
        command_ttl_ms: u64,
        #[arg(long, env = "ALIVE_LIVE_BACKLOG", default_value_t = DEFAULT_LIVE_BACKLOG)]
        live_backlog: usize,
    },
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<(), Box<dyn std::error::Error>> {
    match cli.command {
        Cmd::Run {
            scenario,
            out,
            seed,
            accel,
            server,
        } => {
            let mut spec = load_scenario(&scenario)?;
            if let Some(seed) = seed {
                spec.seed = seed;
            }
            if let Some(accel) = accel {
                spec.acceleration = accel;
            }
            spec.validate()?;
            let (result, paths) = run_to_dir(spec, &out, server)?;
            println!("{}", result.stats);
            println!("trace: {}", paths.trace.display());
            println!("stats: {}", paths.stats.display());
            println!("device log: {}", paths.device_log.display());
        }
        Cmd::Autotune { scenario } => {
            let spec = load_scenario(&scenario)?;
            let r = autotune(&spec)?;
            let d = r.diagnostics;
            println!("kp = {}", r.gains.kp);
            println!("ki = {}", r.gains.ki);
            println!("kd = {}", r.gains.kd);
            println!("amplitude_c = {}", d.amplitude_c);
            println!("period_s = {}", d.period_s);
            println!("ultimate_gain = {}", d.ultimate_gain);
            println!("cycles = {}", d.cycles);
        }
        Cmd::Replay {
            log,
            server,
            token,
            timeout_s,
        } => {
            let r = replay_log(&log, server, &token, Duration::from_secs(timeout_s))?;
            println!(
                "sent {} frames (seq {}..={}), acked through {}",
                r.frames, r.first_seq, r.last_seq, r.acked_seq
            );
            if r.acked_seq < r.last_seq {
                return Err("not every frame was acknowledged".into());
            }
        }
        Cmd::Serve {
            device_addr,
            http_addr,
            data_dir,
            tokens,
            command_ttl_ms,
            live_backlog,
        } => {
            let registry = Registry::load(&tokens)?;
            let config = PlaneConfig {
                command_ttl_ms,
                live_backlog,
            };
            let plane = ControlPlane::open(registry, &data_dir, config)?;
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(async move {
                let server = Server::start(
                    Arc::new(Mutex::new(plane)),
                    Arc::new(SystemClock),
                    device_addr,
                    http_addr,
                )
                .await?;
                eprintln!(
                    "device port {} | http {} | data {}",
                    server.device_addr,
                    server.http_addr,
                    data_dir.display()
                );
                tokio::select! {
                    r = server.wait() => r,
                    _ = tokio::signal::ctrl_c() => Ok(()),
                }
            })?;
        }
    }
    Ok(())
}
