//! Websocket message schema, version 1.
//!
//! Every message is one JSON text frame carrying `"v": 1` and a `"type"`
//! discriminator.
//!
//! Server → client:
//!
//! * `snapshot`: telemetry pushed at a fixed rate.
//!   - `seq`: snapshot counter, starts at 0
//!   - `stale`: no frame for longer than the stale timeout
//!   - `frames_received`: frames seen since the service started
//!   - `rssi_dbm`: RSSI of the newest frame, `null` before the first one
//!   - `rssi_mean_dbm`: mean over the last `rssi_window` frames (at most 1000)
//!   - `rssi_window`: number of frames in that mean
//!   - `loss_percent`: sequence-gap loss over the last 10 s of frames, 0–100
//!   - `columns`: newest amplitude rows, oldest first, 52 values each
//!   - `recording`: `{"state": "idle"}` or `{"state": "recording", "label",
//!     "started_at_us", "session", "frames"}`
//! * `ack`: a control message succeeded.
//!   - `command`, `id` (echoed when the request carried one)
//!   - `warning`: set when the command was a no-op, e.g. a second stop
//!   - `recording`: state after the command
//!   - `intervals`: intervals closed by the command
//!   - `files`: `{"session", "intervals"}` paths once a recording is finished
//! * `error`: a control message was rejected: `command` (if parsed), `id`,
//!   `message`.
//!
//! Client → server:
//!
//! * `{"v": 1, "type": "start_recording", "label": 0|1|2}`
//! * `{"v": 1, "type": "stop_recording"}`
//! * `{"v": 1, "type": "mark_interval", "label": 0|1|2}`: closes the current
//!   interval and opens a new one with `label` in the same session file
//!
//! Each may carry an integer `id`, echoed in the reply.

use serde::{Deserialize, Serialize};
use wallhack_core::csi::ActivityLabel;

pub const PROTOCOL_VERSION: u32 = 1;

/// Path of the websocket endpoint.
pub const WS_PATH: &str = "/ws";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum RecordingState {
    Idle,
    Recording {
        label: ActivityLabel,
        started_at_us: u64,
        session: String,
        frames: u64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TelemetrySnapshot {
    pub seq: u64,
    pub stale: bool,
    pub frames_received: u64,
    pub rssi_dbm: Option<i8>,
    pub rssi_mean_dbm: Option<f64>,
    pub rssi_window: usize,
    pub loss_percent: f64,
    pub columns: Vec<Vec<f32>>,
    pub recording: RecordingState,
}

/// A closed, labeled span of a recording. Bounds are frame timestamps,
/// half-open.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordedInterval {
    pub start_ts_us: u64,
    pub end_ts_us: u64,
    pub label: ActivityLabel,
    pub frames: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordingFiles {
    pub session: String,
    pub intervals: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServerBody {
    Snapshot(TelemetrySnapshot),
    Ack {
        command: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        id: Option<u64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        warning: Option<String>,
        recording: RecordingState,
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        intervals: Vec<RecordedInterval>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        files: Option<RecordingFiles>,
    },
    Error {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        command: Option<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        id: Option<u64>,
        message: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServerMessage {
    pub v: u32,
    #[serde(flatten)]
    pub body: ServerBody,
}

impl ServerMessage {
    pub fn new(body: ServerBody) -> Self {
        Self {
            v: PROTOCOL_VERSION,
            body,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("server messages serialize")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Command {
    StartRecording { label: ActivityLabel },
    StopRecording,
    MarkInterval { label: ActivityLabel },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::StartRecording { .. } => "start_recording",
            Command::StopRecording => "stop_recording",
            Command::MarkInterval { .. } => "mark_interval",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientMessage {
    pub v: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<u64>,
    #[serde(flatten)]
    pub command: Command,
}

impl ClientMessage {
    pub fn new(command: Command) -> Self {
        Self {
            v: PROTOCOL_VERSION,
            id: None,
            command,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("client messages serialize")
    }
}

/// Parses a client text frame, rejecting other protocol versions. On failure
/// returns the ready-to-send error reply.
pub fn parse_client_message(text: &str) -> Result<ClientMessage, ServerMessage> {
    let reject = |id: Option<u64>, message: String| {
        ServerMessage::new(ServerBody::Error {
            command: None,
            id,
            message,
        })
    };
    let raw: serde_json::Value = serde_json::from_str(text).map_err(|e| reject(None, format!("invalid JSON: {e}")))?;
    let id = raw.get("id").and_then(serde_json::Value::as_u64);
    match raw.get("v").and_then(serde_json::Value::as_u64) {
        Some(v) if v == u64::from(PROTOCOL_VERSION) => {}
        Some(v) => return Err(reject(id, format!("unsupported protocol version {v}"))),
        None => return Err(reject(id, "missing protocol version \"v\"".into())),
    }
    serde_json::from_value(raw).map_err(|e| reject(id, format!("invalid message: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn client_messages_parse() {
        let m = parse_client_message(r#"{"v":1,"type":"start_recording","label":1,"id":7}"#).unwrap();
        assert_eq!(
            m.command,
            Command::StartRecording {
                label: ActivityLabel::Walking
            }
        );
        assert_eq!(m.id, Some(7));
        let stop = parse_client_message(r#"{"v":1,"type":"stop_recording"}"#).unwrap();
        assert_eq!(stop.command, Command::StopRecording);
        let round = ClientMessage::new(Command::MarkInterval {
            label: ActivityLabel::NoPresence,
        });
        assert_eq!(parse_client_message(&round.to_json()).unwrap(), round);
    }

    #[test]
    fn bad_client_messages_yield_error_replies() {
        for (text, needle) in [
            ("not json", "invalid JSON"),
            (r#"{"type":"stop_recording"}"#, "missing protocol version"),
            (
                r#"{"v":2,"type":"stop_recording","id":3}"#,
                "unsupported protocol version 2",
            ),
            (r#"{"v":1,"type":"start_recording","label":5}"#, "invalid message"),
            (r#"{"v":1,"type":"dance"}"#, "invalid message"),
        ] {
            let reply = parse_client_message(text).unwrap_err();
            match reply.body {
                ServerBody::Error { message, .. } => assert!(message.contains(needle), "{message}"),
                other => panic!("{other:?}"),
            }
        }
        let reply = parse_client_message(r#"{"v":2,"type":"stop_recording","id":3}"#).unwrap_err();
        assert!(matches!(reply.body, ServerBody::Error { id: Some(3), .. }));
    }

    #[test]
    fn server_messages_have_documented_shape() {
        let snap = ServerMessage::new(ServerBody::Snapshot(TelemetrySnapshot {
            seq: 4,
            stale: false,
            frames_received: 10,
            rssi_dbm: Some(-42),
            rssi_mean_dbm: Some(-42.0),
            rssi_window: 10,
            loss_percent: 0.0,
            columns: vec![vec![1.0; 52]],
            recording: RecordingState::Idle,
        }));
        let value: serde_json::Value = serde_json::from_str(&snap.to_json()).unwrap();
        assert_eq!(value["v"], 1);
        assert_eq!(value["type"], "snapshot");
        assert_eq!(value["rssi_dbm"], -42);
        assert_eq!(value["recording"], json!({"state": "idle"}));
        assert_eq!(value["columns"][0].as_array().unwrap().len(), 52);

        let ack = ServerMessage::new(ServerBody::Ack {
            command: "stop_recording".into(),
            id: None,
            warning: Some("not recording".into()),
            recording: RecordingState::Idle,
            intervals: vec![],
            files: None,
        });
        let value: serde_json::Value = serde_json::from_str(&ack.to_json()).unwrap();
        assert_eq!(
            value,
            json!({"v": 1, "type": "ack", "command": "stop_recording", "warning": "not recording", "recording": {"state": "idle"}})
        );
        let back: ServerMessage = serde_json::from_value(value).unwrap();
        assert_eq!(back, ack);
    }
}
