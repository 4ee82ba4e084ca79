use std::net::{IpAddr, SocketAddr};
use std::path::PathBuf;

use anyhow::Result;
use clap::Parser;
use sari_teleop::{serve, ServeConfig, SessionConfig};

#[derive(Parser)]
#[command(name = "teleop", version, about = "Serve the assisted simulator over a WebSocket")]
struct Args {
    #[arg(long, default_value_t = 8765)]
    port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    host: IpAddr,
    #[arg(long, default_value = "drawer")]
    world: String,
    /// SARI checkpoint to start from.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Start without a model and with an empty dataset.
    #[arg(long)]
    fresh: bool,
    /// Simulated seconds per tick.
    #[arg(long, default_value_t = 0.1)]
    dt: f64,
    /// Ticks per wall-clock second.
    #[arg(long, default_value_t = 10.0)]
    hz: f64,
    #[arg(long, default_value_t = 1.0)]
    beta_max: f64,
    /// Repeat the last command for up to this many silent ticks (at most 3).
    #[arg(long, default_value_t = 0)]
    hold_ticks: usize,
    /// Where the dataset and retrained checkpoints are kept.
    #[arg(long)]
    data_dir: Option<PathBuf>,
}

#[tokio::main]
async fn main() -> Result<()> {
    tracing_subscriber::fmt().with_writer(std::io::stderr).init();
    let a = Args::parse();
    let cfg = ServeConfig {
        addr: SocketAddr::new(a.host, a.port),
        world: a.world,
        model: a.model,
        fresh: a.fresh,
        hz: a.hz,
        data_dir: a.data_dir,
        session: SessionConfig { dt: a.dt, beta_max: a.beta_max, hold_ticks: a.hold_ticks, ..SessionConfig::default() },
    };
    let service = serve(cfg).await?;
    tokio::select! {
        _ = tokio::signal::ctrl_c() => service.shutdown().await,
        _ = wait_forever() => {}
    }
    Ok(())
}

async fn wait_forever() {
    std::future::pending::<()>().await
}
