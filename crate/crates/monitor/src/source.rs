use std::net::SocketAddr;
use std::thread;
use std::time::{Duration, Instant};

use tokio::net::UdpSocket;
use tokio::sync::mpsc;
use wallhack_core::csi::CsiFrame;
use wallhack_core::ingest::parse_csi_line;

use crate::MonitorError;

/// Frames buffered between a source and the ingest task.
pub const SOURCE_BUFFER: usize = 4096;

/// Where the monitor gets frames from.
pub enum MonitorSource {
    /// One wire line per datagram.
    Udp(SocketAddr),
    /// Frames from an iterator, released at `rate_hz` in real time.
    Simulator {
        frames: Box<dyn Iterator<Item = CsiFrame> + Send>,
        rate_hz: f64,
    },
    /// Frames pushed by the caller; dropping the sender ends the source.
    Channel(mpsc::Receiver<CsiFrame>),
}

impl std::fmt::Debug for MonitorSource {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Udp(addr) => write!(f, "Udp({addr})"),
            Self::Simulator { rate_hz, .. } => write!(f, "Simulator({rate_hz} Hz)"),
            Self::Channel(_) => f.write_str("Channel"),
        }
    }
}

pub(crate) struct StartedSource {
    pub frames: mpsc::Receiver<CsiFrame>,
    pub udp_addr: Option<SocketAddr>,
}

impl MonitorSource {
    pub(crate) async fn start(self) -> Result<StartedSource, MonitorError> {
        match self {
            Self::Channel(frames) => Ok(StartedSource { frames, udp_addr: None }),
            Self::Udp(bind) => {
                let socket = UdpSocket::bind(bind).await.map_err(|source| MonitorError::Source {
                    target: format!("udp://{bind}"),
                    source,
                })?;
                let udp_addr = socket.local_addr().ok();
                let (tx, frames) = mpsc::channel(SOURCE_BUFFER);
                tokio::spawn(receive_datagrams(socket, tx));
                Ok(StartedSource { frames, udp_addr })
            }
            Self::Simulator { frames, rate_hz } => {
                if !(rate_hz.is_finite() && rate_hz > 0.0) {
                    return Err(MonitorError::InvalidConfig(format!("simulator rate {rate_hz} Hz")));
                }
                let (tx, rx) = mpsc::channel(SOURCE_BUFFER);
                let period = Duration::from_secs_f64(1.0 / rate_hz);
                thread::spawn(move || pace(frames, period, tx));
                Ok(StartedSource {
                    frames: rx,
                    udp_addr: None,
                })
            }
        }
    }
}

async fn receive_datagrams(socket: UdpSocket, tx: mpsc::Sender<CsiFrame>) {
    let mut buf = vec![0u8; 65_536];
    loop {
        let n = tokio::select! {
            received = socket.recv(&mut buf) => match received {
                Ok(n) => n,
                Err(e) => {
                    tracing::warn!("udp receive failed: {e}");
                    continue;
                }
            },
            () = tx.closed() => return,
        };
        let Ok(text) = std::str::from_utf8(&buf[..n]) else {
            continue;
        };
        let line = text.trim_end_matches(['\n', '\r']);
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        match parse_csi_line(line) {
            Ok(frame) => {
                if tx.send(frame).await.is_err() {
                    return;
                }
            }
            Err(e) => tracing::debug!("skipping datagram: {e}"),
        }
    }
}

fn pace(frames: Box<dyn Iterator<Item = CsiFrame> + Send>, period: Duration, tx: mpsc::Sender<CsiFrame>) {
    let start = Instant::now();
    for (k, frame) in frames.enumerate() {
        if let Some(wait) = (start + period * k as u32).checked_duration_since(Instant::now()) {
            thread::sleep(wait);
        }
        if tx.blocking_send(frame).is_err() {
            return;
        }
    }
}
