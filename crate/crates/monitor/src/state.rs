use std::collections::VecDeque;
use std::time::{Duration, Instant};

use wallhack_core::csi::{amplitude_vector, CsiFrame};
use wallhack_core::ingest::RSSI_SURVEY_FRAMES;

use crate::protocol::{RecordingState, TelemetrySnapshot};

/// Window of the packet-loss estimate, in frame time.
pub const LOSS_WINDOW_US: u64 = 10_000_000;

/// Rolling statistics behind each snapshot.
#[derive(Debug, Clone)]
pub struct TelemetryState {
    rssi: VecDeque<i8>,
    rssi_sum: i64,
    /// `(timestamp_us, seq)` of frames within the loss window.
    recent: VecDeque<(u64, u32)>,
    columns: VecDeque<Vec<f32>>,
    max_columns: usize,
    frames_received: u64,
    last_frame_at: Option<Instant>,
}

impl TelemetryState {
    pub fn new(max_columns: usize) -> Self {
        Self {
            rssi: VecDeque::with_capacity(RSSI_SURVEY_FRAMES),
            rssi_sum: 0,
            recent: VecDeque::new(),
            columns: VecDeque::with_capacity(max_columns),
            max_columns,
            frames_received: 0,
            last_frame_at: None,
        }
    }

    pub fn push(&mut self, frame: &CsiFrame, now: Instant) {
        self.frames_received += 1;
        self.last_frame_at = Some(now);

        if self.rssi.len() == RSSI_SURVEY_FRAMES {
            self.rssi_sum -= i64::from(self.rssi.pop_front().expect("full window"));
        }
        self.rssi.push_back(frame.rssi_dbm);
        self.rssi_sum += i64::from(frame.rssi_dbm);

        // A sequence or clock that moves backwards means the source restarted.
        if let Some(&(ts, seq)) = self.recent.back() {
            let step = frame.seq.wrapping_sub(seq);
            if frame.timestamp_us <= ts || step == 0 || step >= 1 << 31 {
                self.recent.clear();
            }
        }
        self.recent.push_back((frame.timestamp_us, frame.seq));
        let horizon = frame.timestamp_us.saturating_sub(LOSS_WINDOW_US);
        while self.recent.front().is_some_and(|&(ts, _)| ts < horizon) {
            self.recent.pop_front();
        }

        if self.max_columns > 0 {
            if self.columns.len() == self.max_columns {
                self.columns.pop_front();
            }
            self.columns
                .push_back(amplitude_vector(frame).into_iter().map(|a| a as f32).collect());
        }
    }

    pub fn frames_received(&self) -> u64 {
        self.frames_received
    }

    pub fn rssi_window(&self) -> usize {
        self.rssi.len()
    }

    pub fn rssi_mean_dbm(&self) -> Option<f64> {
        (!self.rssi.is_empty()).then(|| self.rssi_sum as f64 / self.rssi.len() as f64)
    }

    /// Percentage of sequence numbers missing between the oldest and newest
    /// frame of the loss window.
    pub fn loss_percent(&self) -> f64 {
        let (Some(&(_, first)), Some(&(_, last))) = (self.recent.front(), self.recent.back()) else {
            return 0.0;
        };
        let expected = u64::from(last.wrapping_sub(first)) + 1;
        let received = self.recent.len() as u64;
        100.0 * expected.saturating_sub(received) as f64 / expected as f64
    }

    /// True before the first frame and once `stale_after` passes without one.
    pub fn is_stale(&self, now: Instant, stale_after: Duration) -> bool {
        self.last_frame_at
            .is_none_or(|t| now.saturating_duration_since(t) > stale_after)
    }

    pub fn snapshot(
        &self,
        seq: u64,
        now: Instant,
        stale_after: Duration,
        recording: RecordingState,
    ) -> TelemetrySnapshot {
        TelemetrySnapshot {
            seq,
            stale: self.is_stale(now, stale_after),
            frames_received: self.frames_received,
            rssi_dbm: self.rssi.back().copied(),
            rssi_mean_dbm: self.rssi_mean_dbm(),
            rssi_window: self.rssi.len(),
            loss_percent: self.loss_percent(),
            columns: self.columns.iter().cloned().collect(),
            recording,
        }
    }
}
