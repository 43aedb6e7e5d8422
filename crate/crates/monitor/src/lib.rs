//! Live telemetry service: one ingest task keeps rolling RSSI, packet-loss and
//! amplitude statistics for a frame source, publishes snapshots to websocket
//! subscribers and records labeled sessions on request.
//!
//! The message schema is documented in [`protocol`].

pub mod protocol;
pub mod recorder;
pub mod server;
pub mod source;
pub mod state;

use std::net::SocketAddr;

pub use protocol::{ClientMessage, Command, RecordingState, ServerBody, ServerMessage, TelemetrySnapshot, WS_PATH};
pub use server::{serve, MonitorConfig, MonitorHandle};
pub use source::MonitorSource;

#[derive(Debug, thiserror::Error)]
pub enum MonitorError {
    #[error("cannot bind {addr}: {source}")]
    Bind {
        addr: SocketAddr,
        #[source]
        source: std::io::Error,
    },
    #[error("source unavailable: {target}: {source}")]
    Source {
        target: String,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid monitor config: {0}")]
    InvalidConfig(String),
    #[error("server failed: {0}")]
    Serve(#[source] std::io::Error),
    #[error("internal error: {0}")]
    Internal(String),
}
