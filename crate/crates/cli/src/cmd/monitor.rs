use std::net::SocketAddr;
use std::path::PathBuf;
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use clap::{Args, Subcommand};
use serde::Serialize;
use wallhack_core::csi::ActivityLabel;
use wallhack_core::linksim::{ActivityModel, FrameSynthesizer, ScenarioConfig};
use wallhack_monitor::{serve, MonitorConfig, MonitorSource, WS_PATH};

use crate::error::{CliError, CliResult};
use crate::provenance::header;
use crate::session::{parse_label, MetaArgs};

#[derive(Debug, Subcommand)]
pub enum MonitorCommand {
    /// Serve live telemetry and recording control until interrupted.
    Serve(ServeArgs),
}

#[derive(Debug, Args, Serialize)]
#[group(id = "feed", required = true, multiple = false)]
pub struct FeedArgs {
    /// Receive frames as UDP datagrams on this address.
    #[arg(long, group = "feed")]
    pub udp: Option<SocketAddr>,
    /// Synthesize frames in real time from a preset or scenario file.
    #[arg(long, group = "feed")]
    pub simulate: Option<String>,
}

#[derive(Debug, Args, Serialize)]
pub struct ServeArgs {
    /// HTTP and websocket listen address.
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub bind: SocketAddr,
    #[command(flatten)]
    pub feed: FeedArgs,
    /// Simulator: activity label.
    #[arg(long, default_value = "1", value_parser = parse_label)]
    pub sim_label: ActivityLabel,
    /// Simulator: report this constant RSSI instead of the link model's.
    #[arg(long, allow_negative_numbers = true)]
    pub sim_rssi: Option<i8>,
    /// Simulator: frames per second.
    #[arg(long, default_value_t = 100.0)]
    pub sim_rate: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Dashboard asset directory served at `/`.
    #[arg(long)]
    pub assets: Option<PathBuf>,
    /// Where recordings are written.
    #[arg(long, default_value = "recordings")]
    pub recordings: PathBuf,
    /// Amplitude rows per snapshot.
    #[arg(long, default_value_t = 200)]
    pub columns: usize,
    #[arg(long, default_value_t = 10.0)]
    pub snapshot_hz: f64,
    /// Seconds without frames before snapshots are flagged stale.
    #[arg(long, default_value_t = 2.0)]
    pub stale_after: f64,
    /// Recording context written into each session header.
    #[command(flatten)]
    pub meta: MetaArgs,
}

fn unix_now_us() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_micros() as u64)
}

pub fn monitor(cmd: &MonitorCommand) -> CliResult<()> {
    match cmd {
        MonitorCommand::Serve(args) => serve_cmd(args),
    }
}

fn serve_cmd(args: &ServeArgs) -> CliResult<()> {
    if !(args.stale_after.is_finite() && args.stale_after > 0.0) {
        return Err(CliError::usage("stale timeout must be positive"));
    }
    let now_us = unix_now_us();
    let (source, meta) = match (&args.feed.udp, &args.feed.simulate) {
        (Some(addr), _) => (MonitorSource::Udp(*addr), args.meta.standalone(now_us)?),
        (None, Some(spec)) => {
            let cfg = ScenarioConfig::resolve(spec)?;
            let zone = args.meta.zone;
            let meta = MetaArgs {
                scenario: args.meta.scenario.or(Some(cfg.scenario)),
                antenna: args.meta.antenna.or(Some(cfg.antenna)),
                zone,
                distance: args.meta.distance.or(zone.is_none().then_some(cfg.link_distance_m)),
            }
            .standalone(now_us)?;
            let activity = ActivityModel::for_label(args.sim_label);
            let frames = FrameSynthesizer::new(&cfg, &activity, zone, args.seed)?.with_start_time(now_us);
            let rssi = args.sim_rssi;
            let source = MonitorSource::Simulator {
                frames: Box::new(frames.map(move |mut f| {
                    if let Some(r) = rssi {
                        f.rssi_dbm = r;
                    }
                    f
                })),
                rate_hz: args.sim_rate,
            };
            (source, meta)
        }
        (None, None) => unreachable!("clap requires a feed"),
    };
    let cfg = MonitorConfig {
        bind: args.bind,
        assets_dir: args.assets.clone(),
        recordings_dir: args.recordings.clone(),
        columns: args.columns,
        snapshot_hz: args.snapshot_hz,
        stale_after: Duration::from_secs_f64(args.stale_after),
        header: header("monitor serve", args, None),
        session_meta: meta,
    };

    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| CliError::internal(format!("runtime: {e}")))?;
    runtime.block_on(async {
        let handle = serve(cfg, source).await?;
        println!("serving http://{} (websocket {WS_PATH})", handle.local_addr());
        if let Some(udp) = handle.udp_addr() {
            println!("receiving frames on udp://{udp}");
        }
        println!("recordings go to {}", args.recordings.display());
        tokio::signal::ctrl_c()
            .await
            .map_err(|e| CliError::internal(format!("signal handler: {e}")))?;
        eprintln!("shutting down");
        handle.shutdown().await?;
        Ok(())
    })
}
