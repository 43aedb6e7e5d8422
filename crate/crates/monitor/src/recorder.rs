use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use wallhack_core::csi::{ActivityLabel, CsiFrame, SessionMeta};
use wallhack_core::dataset::{intervals_to_json, AnnotationInterval};
use wallhack_core::ingest::{meta_comment, serialize_csi_line};

use crate::protocol::{RecordedInterval, RecordingFiles, RecordingState};

#[derive(Debug, thiserror::Error)]
pub enum RecorderError {
    #[error("already recording to {0}")]
    AlreadyRecording(String),
    #[error("not recording")]
    NotRecording,
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> RecorderError + '_ {
    move |source| RecorderError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug)]
struct OpenInterval {
    label: ActivityLabel,
    bounds: Option<(u64, u64)>,
    frames: u64,
}

impl OpenInterval {
    fn new(label: ActivityLabel) -> Self {
        Self {
            label,
            bounds: None,
            frames: 0,
        }
    }

    fn close(self) -> Option<RecordedInterval> {
        let (start, last) = self.bounds?;
        Some(RecordedInterval {
            start_ts_us: start,
            end_ts_us: last + 1,
            label: self.label,
            frames: self.frames,
        })
    }
}

#[derive(Debug)]
struct Active {
    writer: BufWriter<File>,
    session_path: PathBuf,
    intervals_path: PathBuf,
    started_at_us: u64,
    frames: u64,
    closed: Vec<RecordedInterval>,
    current: OpenInterval,
}

/// Result of closing an interval or a whole recording.
#[derive(Debug, Clone, PartialEq)]
pub struct Closed {
    pub intervals: Vec<RecordedInterval>,
    pub files: Option<RecordingFiles>,
}

/// Writes frames of the active recording to `recording-NNN.csi` and its
/// labeled spans to `recording-NNN.intervals.json` in the output directory.
///
/// Every frame received while recording goes to the session file in arrival
/// order and belongs to exactly one interval, so each interval is a contiguous
/// run of the file.
#[derive(Debug)]
pub struct Recorder {
    dir: PathBuf,
    header: Vec<String>,
    meta: Option<SessionMeta>,
    active: Option<Active>,
}

impl Recorder {
    /// `header` lines are written as `#` comments at the top of each session
    /// file; `meta` (with its start time replaced) is appended when given.
    pub fn new(dir: impl Into<PathBuf>, header: Vec<String>, meta: Option<SessionMeta>) -> Self {
        Self {
            dir: dir.into(),
            header,
            meta,
            active: None,
        }
    }

    pub fn is_recording(&self) -> bool {
        self.active.is_some()
    }

    pub fn state(&self) -> RecordingState {
        match &self.active {
            None => RecordingState::Idle,
            Some(a) => RecordingState::Recording {
                label: a.current.label,
                started_at_us: a.started_at_us,
                session: a.session_path.display().to_string(),
                frames: a.frames,
            },
        }
    }

    fn next_paths(&self) -> (PathBuf, PathBuf) {
        (1u32..)
            .map(|n| {
                (
                    self.dir.join(format!("recording-{n:03}.csi")),
                    self.dir.join(format!("recording-{n:03}.intervals.json")),
                )
            })
            .find(|(s, i)| !s.exists() && !i.exists())
            .expect("some index is free")
    }

    pub fn start(&mut self, label: ActivityLabel, now_us: u64) -> Result<(), RecorderError> {
        if let Some(a) = &self.active {
            return Err(RecorderError::AlreadyRecording(a.session_path.display().to_string()));
        }
        fs::create_dir_all(&self.dir).map_err(io_err(&self.dir))?;
        let (session_path, intervals_path) = self.next_paths();
        let file = File::options()
            .write(true)
            .create_new(true)
            .open(&session_path)
            .map_err(io_err(&session_path))?;
        let mut writer = BufWriter::new(file);
        let mut header = self.header.clone();
        if let Some(meta) = &self.meta {
            header.push(meta_comment(&SessionMeta {
                start_time_us: now_us,
                ..meta.clone()
            }));
        }
        for line in &header {
            writeln!(writer, "# {line}").map_err(io_err(&session_path))?;
        }
        self.active = Some(Active {
            writer,
            session_path,
            intervals_path,
            started_at_us: now_us,
            frames: 0,
            closed: Vec::new(),
            current: OpenInterval::new(label),
        });
        Ok(())
    }

    /// Appends a frame to the active recording; a no-op when idle.
    pub fn record(&mut self, frame: &CsiFrame) -> Result<(), RecorderError> {
        let Some(a) = &mut self.active else {
            return Ok(());
        };
        let line = serialize_csi_line(frame);
        a.writer
            .write_all(line.as_bytes())
            .and_then(|()| a.writer.write_all(b"\n"))
            .map_err(io_err(&a.session_path))?;
        a.frames += 1;
        let ts = frame.timestamp_us;
        a.current.bounds = Some(match a.current.bounds {
            None => (ts, ts),
            Some((start, last)) => (start, last.max(ts)),
        });
        a.current.frames += 1;
        Ok(())
    }

    /// Closes the current interval and opens one labeled `label` at the next
    /// frame. An interval that received no frames is dropped.
    pub fn mark_interval(&mut self, label: ActivityLabel) -> Result<Closed, RecorderError> {
        let a = self.active.as_mut().ok_or(RecorderError::NotRecording)?;
        let previous = std::mem::replace(&mut a.current, OpenInterval::new(label));
        let intervals: Vec<_> = previous.close().into_iter().collect();
        a.closed.extend(intervals.iter().cloned());
        Ok(Closed { intervals, files: None })
    }

    /// Finishes the recording and writes its interval file.
    pub fn stop(&mut self) -> Result<Closed, RecorderError> {
        let mut a = self.active.take().ok_or(RecorderError::NotRecording)?;
        let last: Vec<_> = a.current.close().into_iter().collect();
        a.closed.extend(last.iter().cloned());
        a.writer.flush().map_err(io_err(&a.session_path))?;
        let annotations: Vec<_> = a
            .closed
            .iter()
            .map(|iv| AnnotationInterval::new(iv.start_ts_us, iv.end_ts_us, iv.label))
            .collect();
        fs::write(&a.intervals_path, intervals_to_json(&annotations)).map_err(io_err(&a.intervals_path))?;
        Ok(Closed {
            intervals: last,
            files: Some(RecordingFiles {
                session: a.session_path.display().to_string(),
                intervals: a.intervals_path.display().to_string(),
            }),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use wallhack_core::csi::FRAME_INTERVAL_US;
    use wallhack_core::dataset::load_intervals;
    use wallhack_core::ingest::{read_frames, FrameSource};

    fn frame(seq: u32) -> CsiFrame {
        CsiFrame::zeroed(seq, 1_000_000 + u64::from(seq) * FRAME_INTERVAL_US, -50)
    }

    #[test]
    fn twelve_seconds_of_walking_is_one_interval() {
        let dir = tempfile::tempdir().unwrap();
        let mut rec = Recorder::new(dir.path(), vec!["generator test".into()], None);
        for seq in 0..50 {
            rec.record(&frame(seq)).unwrap();
        }
        rec.start(ActivityLabel::Walking, 42).unwrap();
        for seq in 50..1250 {
            rec.record(&frame(seq)).unwrap();
        }
        let closed = rec.stop().unwrap();
        assert_eq!(closed.intervals.len(), 1);
        assert_eq!(closed.intervals[0].frames, 1200);
        assert_eq!(closed.intervals[0].label, ActivityLabel::Walking);
        let files = closed.files.unwrap();
        assert!(files.session.ends_with("recording-001.csi"));

        let mut stream = read_frames(FrameSource::file(&files.session)).unwrap();
        let frames: Vec<_> = stream.by_ref().collect();
        assert_eq!(frames.len(), 1200);
        assert_eq!(frames[0], frame(50));
        assert_eq!(stream.stats().comments, vec!["generator test".to_string()]);
        let intervals = load_intervals(Path::new(&files.intervals)).unwrap();
        assert_eq!(intervals.len(), 1);
        assert_eq!(
            frames.iter().filter(|f| intervals[0].contains(f.timestamp_us)).count(),
            1200
        );
    }

    #[test]
    fn marks_split_the_session_into_contiguous_runs() {
        let dir = tempfile::tempdir().unwrap();
        let mut rec = Recorder::new(dir.path(), vec![], None);
        rec.start(ActivityLabel::NoPresence, 0).unwrap();
        // An immediate mark leaves an empty interval, which is dropped.
        assert!(rec.mark_interval(ActivityLabel::Walking).unwrap().intervals.is_empty());
        for seq in 0..100 {
            rec.record(&frame(seq)).unwrap();
        }
        let first = rec.mark_interval(ActivityLabel::WalkingArmWaving).unwrap();
        assert_eq!(first.intervals[0].frames, 100);
        for seq in 100..130 {
            rec.record(&frame(seq)).unwrap();
        }
        let files = rec.stop().unwrap().files.unwrap();
        let intervals = load_intervals(Path::new(&files.intervals)).unwrap();
        let frames: Vec<_> = read_frames(FrameSource::file(&files.session)).unwrap().collect();
        let labels: Vec<_> = intervals.iter().map(|iv| iv.label).collect();
        assert_eq!(labels, vec![ActivityLabel::Walking, ActivityLabel::WalkingArmWaving]);
        for iv in &intervals {
            let idx: Vec<usize> = (0..frames.len())
                .filter(|&k| iv.contains(frames[k].timestamp_us))
                .collect();
            assert_eq!(idx.last().unwrap() - idx[0] + 1, idx.len());
        }
    }

    #[test]
    fn control_errors_and_numbering() {
        let dir = tempfile::tempdir().unwrap();
        let mut rec = Recorder::new(dir.path(), vec![], None);
        assert!(matches!(rec.stop(), Err(RecorderError::NotRecording)));
        assert!(matches!(
            rec.mark_interval(ActivityLabel::Walking),
            Err(RecorderError::NotRecording)
        ));
        rec.start(ActivityLabel::Walking, 0).unwrap();
        assert!(matches!(
            rec.start(ActivityLabel::Walking, 0),
            Err(RecorderError::AlreadyRecording(_))
        ));
        rec.record(&frame(0)).unwrap();
        assert!(rec
            .stop()
            .unwrap()
            .files
            .unwrap()
            .session
            .ends_with("recording-001.csi"));
        assert!(matches!(rec.stop(), Err(RecorderError::NotRecording)));
        rec.start(ActivityLabel::Walking, 0).unwrap();
        assert!(rec
            .stop()
            .unwrap()
            .files
            .unwrap()
            .session
            .ends_with("recording-002.csi"));
    }
}
