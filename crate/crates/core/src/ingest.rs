//! CSI line protocol, frame sources, packet-loss accounting and RSSI summaries.
//!
//! # Wire format
//!
//! One frame per ASCII line, terminated by `\n`:
//!
//! ```text
//! CSI,<seq>,<ts_us>,<rssi>,<len>,[i0,q0,i1,q1,...,i51,q51]
//! ```
//!
//! * integers are canonical decimal (`-?(0|[1-9][0-9]*)`, no `+`, no leading
//!   zeros, no `-0`) and nothing else appears on the line, not even spaces;
//! * `seq` is a u32, `ts_us` a u64, `rssi` an i8 and every `i`/`q` an i8;
//! * `len` counts the integers inside the brackets and must be 104.
//!
//! Lines starting with `#` are comments (provenance headers) and blank lines
//! are ignored. Any other line that does not match is counted as skipped by
//! [`FrameStream`]. Over UDP every datagram carries exactly one line; the
//! trailing `\n` is optional there.

use std::fmt::Write as _;
use std::fs::File;
use std::io::{self, BufRead, BufReader, Write};
use std::net::{SocketAddr, UdpSocket};
use std::path::{Path, PathBuf};
use std::sync::mpsc::{self, Receiver};
use std::thread::{self, JoinHandle};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::csi::{ComplexSample, CsiFrame, SessionMeta, SUBCARRIERS};

/// Value of the `len` field of every valid line.
pub const WIRE_VALUES: usize = 2 * SUBCARRIERS;

const LINE_TAG: &str = "CSI";

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum LineError {
    #[error("malformed line: {0}")]
    MalformedLine(&'static str),
    #[error("length mismatch: declared {declared}, found {found}")]
    LengthMismatch { declared: String, found: usize },
    #[error("field {field} out of range: {value}")]
    FieldRange { field: &'static str, value: String },
}

fn is_canonical_int(tok: &str) -> bool {
    let digits = tok.strip_prefix('-').unwrap_or(tok);
    let bytes = digits.as_bytes();
    if bytes.is_empty() || !bytes.iter().all(u8::is_ascii_digit) {
        return false;
    }
    if bytes[0] == b'0' && (bytes.len() > 1 || tok.starts_with('-')) {
        return false;
    }
    true
}

fn parse_field<T: TryFrom<i128>>(tok: &str, field: &'static str) -> Result<T, LineError> {
    if !is_canonical_int(tok) {
        return Err(LineError::MalformedLine("expected a canonical decimal integer"));
    }
    let range_err = || LineError::FieldRange {
        field,
        value: tok.to_owned(),
    };
    // Overflowing i128 is still a well-formed integer, just out of range.
    let wide: i128 = tok.parse().map_err(|_| range_err())?;
    T::try_from(wide).map_err(|_| range_err())
}

/// Parses one line (without its terminator) into a frame.
pub fn parse_csi_line(line: &str) -> Result<CsiFrame, LineError> {
    let rest = line
        .strip_prefix(LINE_TAG)
        .and_then(|r| r.strip_prefix(','))
        .ok_or(LineError::MalformedLine("missing CSI tag"))?;
    let mut fields = rest.splitn(5, ',');
    let mut next = |what| fields.next().ok_or(LineError::MalformedLine(what));
    let seq_tok = next("missing seq")?;
    let ts_tok = next("missing timestamp")?;
    let rssi_tok = next("missing rssi")?;
    let len_tok = next("missing len")?;
    let body = next("missing value list")?;

    let seq: u32 = parse_field(seq_tok, "seq")?;
    let timestamp_us: u64 = parse_field(ts_tok, "ts_us")?;
    let rssi_dbm: i8 = parse_field(rssi_tok, "rssi")?;
    let declared: u64 = parse_field(len_tok, "len")?;
    if declared != WIRE_VALUES as u64 {
        return Err(LineError::LengthMismatch {
            declared: len_tok.to_owned(),
            found: body.split(',').count(),
        });
    }

    let inner = body
        .strip_prefix('[')
        .and_then(|b| b.strip_suffix(']'))
        .ok_or(LineError::MalformedLine("value list must be bracketed"))?;
    let tokens: Vec<&str> = if inner.is_empty() {
        Vec::new()
    } else {
        inner.split(',').collect()
    };
    if tokens.iter().any(|t| !is_canonical_int(t)) {
        return Err(LineError::MalformedLine("value list holds a non-integer"));
    }
    if tokens.len() != WIRE_VALUES {
        return Err(LineError::LengthMismatch {
            declared: len_tok.to_owned(),
            found: tokens.len(),
        });
    }

    let mut subcarriers = Vec::with_capacity(SUBCARRIERS);
    for pair in tokens.chunks_exact(2) {
        let i: i8 = parse_field(pair[0], "i")?;
        let q: i8 = parse_field(pair[1], "q")?;
        subcarriers.push(ComplexSample::new(i, q));
    }
    Ok(CsiFrame::new(seq, timestamp_us, rssi_dbm, subcarriers))
}

/// Renders a frame as one wire line, without the trailing `\n`.
pub fn serialize_csi_line(frame: &CsiFrame) -> String {
    let mut out = String::with_capacity(24 + frame.subcarriers.len() * 8);
    write!(
        out,
        "{LINE_TAG},{},{},{},{},[",
        frame.seq,
        frame.timestamp_us,
        frame.rssi_dbm,
        2 * frame.subcarriers.len()
    )
    .expect("writing to a String cannot fail");
    for (k, s) in frame.subcarriers.iter().enumerate() {
        if k > 0 {
            out.push(',');
        }
        write!(out, "{},{}", s.i, s.q).expect("writing to a String cannot fail");
    }
    out.push(']');
    out
}

/// Writes `# `-prefixed header lines followed by one wire line per frame.
pub fn write_session<'a, W: Write>(
    mut out: W,
    header: &[String],
    frames: impl IntoIterator<Item = &'a CsiFrame>,
) -> io::Result<()> {
    for line in header {
        writeln!(out, "# {line}")?;
    }
    for frame in frames {
        out.write_all(serialize_csi_line(frame).as_bytes())?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

/// Key of the header comment carrying a session's [`SessionMeta`] as JSON.
pub const META_KEY: &str = "session";

/// Header comment line `session: {...}` describing a recording.
pub fn meta_comment(meta: &SessionMeta) -> String {
    format!(
        "{META_KEY}: {}",
        serde_json::to_string(meta).expect("session meta serializes")
    )
}

/// Finds the last `session:` header comment among `comments`; `None` when
/// absent, an error when present but malformed.
pub fn meta_from_comments(comments: &[String]) -> Option<Result<SessionMeta, serde_json::Error>> {
    comments
        .iter()
        .rev()
        .find_map(|c| c.strip_prefix(META_KEY).and_then(|rest| rest.strip_prefix(':')))
        .map(|json| serde_json::from_str(json.trim()))
}

#[derive(Debug, thiserror::Error)]
pub enum IngestError {
    #[error("source unavailable: {target}: {source}")]
    SourceUnavailable {
        target: String,
        #[source]
        source: io::Error,
    },
}

/// Where frames come from.
pub enum FrameSource {
    File(PathBuf),
    /// Bind a UDP socket; the stream ends after `idle_timeout` without a
    /// datagram, or never when `None`.
    Udp {
        bind: SocketAddr,
        idle_timeout: Option<Duration>,
    },
    /// Any byte stream, e.g. stdin or a serial device already opened.
    Reader(Box<dyn BufRead + Send>),
}

impl FrameSource {
    pub fn file(path: impl AsRef<Path>) -> Self {
        Self::File(path.as_ref().to_path_buf())
    }
}

/// Counters kept while reading a stream.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReadStats {
    pub frames: u64,
    pub skipped: u64,
    /// Comment lines, without the leading `#` and one following space.
    pub comments: Vec<String>,
}

type LineIter = Box<dyn Iterator<Item = io::Result<Vec<u8>>> + Send>;

/// Ordered stream of frames decoded from a [`FrameSource`].
pub struct FrameStream {
    lines: LineIter,
    stats: ReadStats,
    local_addr: Option<SocketAddr>,
    error: Option<io::Error>,
}

/// Opens `source` and returns a frame stream over it.
pub fn read_frames(source: FrameSource) -> Result<FrameStream, IngestError> {
    match source {
        FrameSource::File(path) => {
            let file = File::open(&path).map_err(|source| IngestError::SourceUnavailable {
                target: path.display().to_string(),
                source,
            })?;
            Ok(FrameStream::from_reader(BufReader::new(file)))
        }
        FrameSource::Udp { bind, idle_timeout } => {
            let unavailable = |source| IngestError::SourceUnavailable {
                target: format!("udp://{bind}"),
                source,
            };
            let socket = UdpSocket::bind(bind).map_err(unavailable)?;
            socket.set_read_timeout(idle_timeout).map_err(unavailable)?;
            let local_addr = socket.local_addr().ok();
            let mut stream = FrameStream::new(Box::new(Datagrams {
                socket,
                buf: vec![0; 65_536],
            }));
            stream.local_addr = local_addr;
            Ok(stream)
        }
        FrameSource::Reader(reader) => Ok(FrameStream::from_reader(reader)),
    }
}

impl FrameStream {
    fn new(lines: LineIter) -> Self {
        Self {
            lines,
            stats: ReadStats::default(),
            local_addr: None,
            error: None,
        }
    }

    pub fn from_reader<R: BufRead + Send + 'static>(reader: R) -> Self {
        Self::new(Box::new(Lines { reader }))
    }

    pub fn stats(&self) -> &ReadStats {
        &self.stats
    }

    pub fn into_stats(self) -> ReadStats {
        self.stats
    }

    /// Bound address of a UDP source.
    pub fn local_addr(&self) -> Option<SocketAddr> {
        self.local_addr
    }

    /// I/O error that ended the stream early, if any.
    pub fn take_error(&mut self) -> Option<io::Error> {
        self.error.take()
    }

    fn accept(&mut self, raw: &[u8]) -> Option<CsiFrame> {
        let mut raw = raw.strip_suffix(b"\n").unwrap_or(raw);
        raw = raw.strip_suffix(b"\r").unwrap_or(raw);
        if raw.is_empty() {
            return None;
        }
        if let Some(comment) = raw.strip_prefix(b"#") {
            let comment = comment.strip_prefix(b" ").unwrap_or(comment);
            self.stats.comments.push(String::from_utf8_lossy(comment).into_owned());
            return None;
        }
        match std::str::from_utf8(raw).ok().map(parse_csi_line) {
            Some(Ok(frame)) => {
                self.stats.frames += 1;
                Some(frame)
            }
            _ => {
                self.stats.skipped += 1;
                None
            }
        }
    }
}

impl Iterator for FrameStream {
    type Item = CsiFrame;

    fn next(&mut self) -> Option<CsiFrame> {
        loop {
            match self.lines.next()? {
                Ok(raw) => {
                    if let Some(frame) = self.accept(&raw) {
                        return Some(frame);
                    }
                }
                Err(e) => {
                    self.error = Some(e);
                    return None;
                }
            }
        }
    }
}

struct Lines<R> {
    reader: R,
}

impl<R: BufRead> Iterator for Lines<R> {
    type Item = io::Result<Vec<u8>>;

    fn next(&mut self) -> Option<Self::Item> {
        let mut buf = Vec::new();
        match self.reader.read_until(b'\n', &mut buf) {
            Ok(0) => None,
            Ok(_) => Some(Ok(buf)),
            Err(e) => Some(Err(e)),
        }
    }
}

struct Datagrams {
    socket: UdpSocket,
    buf: Vec<u8>,
}

impl Iterator for Datagrams {
    type Item = io::Result<Vec<u8>>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            match self.socket.recv_from(&mut self.buf) {
                Ok((n, _)) => return Some(Ok(self.buf[..n].to_vec())),
                Err(e) if matches!(e.kind(), io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut) => return None,
                Err(e) if e.kind() == io::ErrorKind::Interrupted => continue,
                Err(e) => return Some(Err(e)),
            }
        }
    }
}

/// Runs `stream` on its own thread and hands frames over a bounded channel.
///
/// The producer blocks when `capacity` frames are in flight; it stops early
/// if the receiver is dropped. The join handle yields the final counters.
pub fn spawn_reader(stream: FrameStream, capacity: usize) -> (Receiver<CsiFrame>, JoinHandle<ReadStats>) {
    let (tx, rx) = mpsc::sync_channel(capacity.max(1));
    let handle = thread::spawn(move || {
        let mut stream = stream;
        for frame in stream.by_ref() {
            if tx.send(frame).is_err() {
                break;
            }
        }
        stream.into_stats()
    });
    (rx, handle)
}

/// A run of consecutive missing sequence numbers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SequenceGap {
    pub first_missing: u32,
    pub run_length: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LossReport {
    pub expected: u64,
    pub received: u64,
    pub lost: u64,
    /// Missing runs in stream order.
    pub gaps: Vec<SequenceGap>,
}

impl LossReport {
    pub fn loss_percent(&self) -> f64 {
        if self.expected == 0 {
            0.0
        } else {
            100.0 * self.lost as f64 / self.expected as f64
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum LossError {
    #[error("sequence {seq} does not advance past {previous}")]
    NonMonotoneSequence { previous: u32, seq: u32 },
    #[error("no sequence numbers")]
    EmptySequence,
}

/// Incremental loss accounting over a stream of sequence numbers.
///
/// Sequence numbers compare in serial-number arithmetic: a step whose forward
/// distance modulo 2³² is below 2³¹ is an advance (possibly across the 2³²
/// wrap); anything else, including a repeat, is a regression.
#[derive(Debug, Clone, Default)]
pub struct LossTracker {
    last: Option<u32>,
    received: u64,
    expected: u64,
    gaps: Vec<SequenceGap>,
}

impl LossTracker {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, seq: u32) -> Result<(), LossError> {
        match self.last {
            None => {
                self.expected = 1;
            }
            Some(previous) => {
                let step = seq.wrapping_sub(previous);
                if step == 0 || step >= 1 << 31 {
                    return Err(LossError::NonMonotoneSequence { previous, seq });
                }
                if step > 1 {
                    self.gaps.push(SequenceGap {
                        first_missing: previous.wrapping_add(1),
                        run_length: u64::from(step - 1),
                    });
                }
                self.expected += u64::from(step);
            }
        }
        self.last = Some(seq);
        self.received += 1;
        Ok(())
    }

    pub fn extend<I: IntoIterator<Item = u32>>(&mut self, seqs: I) -> Result<(), LossError> {
        seqs.into_iter().try_for_each(|s| self.push(s))
    }

    pub fn report(&self) -> LossReport {
        LossReport {
            expected: self.expected,
            received: self.received,
            lost: self.expected - self.received,
            gaps: self.gaps.clone(),
        }
    }
}

pub fn loss_report(seqs: &[u32]) -> Result<LossReport, LossError> {
    if seqs.is_empty() {
        return Err(LossError::EmptySequence);
    }
    let mut tracker = LossTracker::new();
    tracker.extend(seqs.iter().copied())?;
    Ok(tracker.report())
}

/// Default number of frames averaged per RSSI measurement.
pub const RSSI_SURVEY_FRAMES: usize = 1000;

/// Summary of RSSI readings; `std_dbm` is the population deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RssiSummary {
    pub n: usize,
    pub mean_dbm: f64,
    pub std_dbm: f64,
    pub min_dbm: i8,
    pub max_dbm: i8,
}

impl RssiSummary {
    /// `None` for an empty slice.
    pub fn from_values(values: &[i8]) -> Option<Self> {
        let n = values.len();
        if n == 0 {
            return None;
        }
        // Integer sum is exact; one rounding in the division.
        let sum: i64 = values.iter().map(|&v| i64::from(v)).sum();
        let mean = sum as f64 / n as f64;
        let var = values
            .iter()
            .map(|&v| {
                let d = f64::from(v) - mean;
                d * d
            })
            .sum::<f64>()
            / n as f64;
        Some(Self {
            n,
            mean_dbm: mean,
            std_dbm: var.sqrt(),
            min_dbm: *values.iter().min().expect("non-empty"),
            max_dbm: *values.iter().max().expect("non-empty"),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
#[error("need {needed} frames, only {available} available")]
pub struct InsufficientFrames {
    pub needed: usize,
    pub available: usize,
}

/// Summarizes the RSSI of exactly the first `n` frames.
pub fn mean_rssi<'a, I>(frames: I, n: usize) -> Result<RssiSummary, InsufficientFrames>
where
    I: IntoIterator<Item = &'a CsiFrame>,
{
    let values: Vec<i8> = frames.into_iter().take(n).map(|f| f.rssi_dbm).collect();
    if n == 0 || values.len() < n {
        return Err(InsufficientFrames {
            needed: n,
            available: values.len(),
        });
    }
    Ok(RssiSummary::from_values(&values).expect("n > 0"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::seq::SliceRandom;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::collections::BTreeSet;
    use std::io::Cursor;

    fn random_frame(rng: &mut impl Rng) -> CsiFrame {
        let subcarriers = (0..SUBCARRIERS)
            .map(|_| ComplexSample::new(rng.gen(), rng.gen()))
            .collect();
        CsiFrame::new(rng.gen(), rng.gen(), rng.gen(), subcarriers)
    }

    fn line_with_first(seq: u32, ts: u64, rssi: i8, i0: i8, q0: i8) -> String {
        let mut values = vec!["0".to_string(); WIRE_VALUES];
        values[0] = i0.to_string();
        values[1] = q0.to_string();
        format!("CSI,{seq},{ts},{rssi},104,[{}]", values.join(","))
    }

    #[test]
    fn session_meta_header_round_trips() {
        use crate::csi::{AntennaKind, Scenario};
        let meta = SessionMeta::in_zone(Scenario::Nlos, AntennaKind::Biquad, 3, 1_700_000_000_000_000).unwrap();
        let comments = vec!["generator x".to_string(), meta_comment(&meta)];
        assert_eq!(meta_from_comments(&comments).unwrap().unwrap(), meta);
        assert!(meta_from_comments(&comments[..1]).is_none());
        assert!(meta_from_comments(&["session: {".to_string()]).unwrap().is_err());
    }

    #[test]
    fn parses_documented_example() {
        let line = line_with_first(7, 123_450, -42, 3, 4);
        let frame = parse_csi_line(&line).unwrap();
        assert_eq!(frame.seq, 7);
        assert_eq!(frame.timestamp_us, 123_450);
        assert_eq!(frame.rssi_dbm, -42);
        assert_eq!(frame.subcarriers.len(), SUBCARRIERS);
        assert_eq!(frame.subcarriers[0], ComplexSample::new(3, 4));
        assert!(frame.subcarriers[1..].iter().all(|s| *s == ComplexSample::default()));
        assert_eq!(serialize_csi_line(&frame), line);
    }

    #[test]
    fn zero_frame_serialization() {
        let expected = format!("CSI,0,0,0,104,[{}]", vec!["0"; WIRE_VALUES].join(","));
        assert_eq!(serialize_csi_line(&CsiFrame::zeroed(0, 0, 0)), expected);
    }

    #[test]
    fn declared_length_mismatch() {
        let err = parse_csi_line("CSI,7,123450,-42,100,[...]").unwrap_err();
        assert!(matches!(err, LineError::LengthMismatch { .. }), "{err:?}");

        let short = format!("CSI,7,1,-42,104,[{}]", vec!["0"; 102].join(","));
        assert_eq!(
            parse_csi_line(&short).unwrap_err(),
            LineError::LengthMismatch {
                declared: "104".into(),
                found: 102
            }
        );
    }

    #[test]
    fn field_range_and_grammar_errors() {
        let base = line_with_first(1, 1, -1, 0, 0);
        let cases = [
            (base.replacen("CSI,1,1,-1", "CSI,1,1,-129", 1), "range"),
            (base.replacen("CSI,1,", "CSI,4294967296,", 1), "range"),
            (base.replacen("[0,0", "[128,0", 1), "range"),
            (base.replacen("CSI,1,1,-1", "CSI,+1,1,-1", 1), "grammar"),
            (base.replacen("CSI,1,1,-1", "CSI,01,1,-1", 1), "grammar"),
            (base.replacen("CSI,1,1,-1", "CSI,1,1,-0", 1), "grammar"),
            (base.replacen("[0,0", "[0, 0", 1), "grammar"),
            (base.replacen("CSI", "CSX", 1), "grammar"),
            (base.replacen(']', "", 1), "grammar"),
            (format!("{base} "), "grammar"),
        ];
        for (line, kind) in cases {
            let err = parse_csi_line(&line).unwrap_err();
            match kind {
                "range" => assert!(matches!(err, LineError::FieldRange { .. }), "{line}: {err:?}"),
                _ => assert!(matches!(err, LineError::MalformedLine(_)), "{line}: {err:?}"),
            }
        }
    }

    #[test]
    fn rssi_boundary_round_trips() {
        let frame = CsiFrame::zeroed(u32::MAX, u64::MAX, -128);
        assert_eq!(parse_csi_line(&serialize_csi_line(&frame)).unwrap(), frame);
    }

    #[test]
    fn randomized_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..10_000 {
            let frame = random_frame(&mut rng);
            let line = serialize_csi_line(&frame);
            assert_eq!(parse_csi_line(&line).unwrap(), frame);
        }
    }

    fn session_text(frames: &[CsiFrame]) -> Vec<u8> {
        let mut buf = Vec::new();
        write_session(&mut buf, &["generator test".to_string()], frames).unwrap();
        buf
    }

    #[test]
    fn reader_counts_and_skips() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let frames: Vec<_> = (0..1000).map(|_| random_frame(&mut rng)).collect();
        let text = session_text(&frames);
        let mut stream = FrameStream::from_reader(Cursor::new(text.clone()));
        let read: Vec<_> = stream.by_ref().collect();
        assert_eq!(read, frames);
        assert_eq!(stream.stats().frames, 1000);
        assert_eq!(stream.stats().skipped, 0);
        assert_eq!(stream.stats().comments, vec!["generator test".to_string()]);

        // Corrupt one line in the middle.
        let mut lines: Vec<&[u8]> = text.split(|&b| b == b'\n').collect();
        let corrupted = b"CSI,garbage".to_vec();
        lines[500] = &corrupted;
        let text = lines.join(&b'\n');
        let mut stream = FrameStream::from_reader(Cursor::new(text));
        let read: Vec<_> = stream.by_ref().collect();
        assert_eq!(read.len(), 999);
        assert_eq!(stream.stats().skipped, 1);
        let mut expected = frames.clone();
        expected.remove(499);
        assert_eq!(read, expected);
    }

    #[test]
    fn crlf_and_missing_final_newline_are_tolerated() {
        let a = serialize_csi_line(&CsiFrame::zeroed(1, 10, -40));
        let b = serialize_csi_line(&CsiFrame::zeroed(2, 20, -41));
        let text = format!("{a}\r\n\n{b}");
        let read: Vec<_> = FrameStream::from_reader(Cursor::new(text.into_bytes())).collect();
        assert_eq!(read.len(), 2);
    }

    #[test]
    fn missing_file_is_unavailable() {
        let err = read_frames(FrameSource::file("/nonexistent/session.csi"))
            .err()
            .unwrap();
        assert!(matches!(err, IngestError::SourceUnavailable { .. }));
    }

    #[test]
    fn bounded_handoff_preserves_order() {
        let frames: Vec<_> = (0..500)
            .map(|k| CsiFrame::zeroed(k, u64::from(k) * 10_000, -40))
            .collect();
        let stream = FrameStream::from_reader(Cursor::new(session_text(&frames)));
        let (rx, handle) = spawn_reader(stream, 4);
        let got: Vec<_> = rx.iter().collect();
        assert_eq!(got, frames);
        assert_eq!(handle.join().unwrap().frames, 500);
    }

    #[test]
    fn loss_examples() {
        let r = loss_report(&[0, 1, 2, 3]).unwrap();
        assert_eq!((r.expected, r.received, r.lost), (4, 4, 0));
        assert!(r.gaps.is_empty());

        let r = loss_report(&[0, 1, 2, 4, 5]).unwrap();
        assert_eq!(r.lost, 1);
        assert_eq!(
            r.gaps,
            vec![SequenceGap {
                first_missing: 3,
                run_length: 1
            }]
        );

        assert_eq!(
            loss_report(&[5, 4]),
            Err(LossError::NonMonotoneSequence { previous: 5, seq: 4 })
        );
        assert!(loss_report(&[5, 5]).is_err());
        assert_eq!(loss_report(&[]), Err(LossError::EmptySequence));
    }

    #[test]
    fn loss_across_wraparound() {
        let r = loss_report(&[u32::MAX - 1, u32::MAX, 1, 2]).unwrap();
        assert_eq!(r.expected, 5);
        assert_eq!(r.lost, 1);
        assert_eq!(
            r.gaps,
            vec![SequenceGap {
                first_missing: 0,
                run_length: 1
            }]
        );
        // A backwards jump shorter than 2^31 is a regression, not a wrap.
        assert!(loss_report(&[1000, 10]).is_err());
    }

    #[test]
    fn loss_matches_set_difference() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..20 {
            let mut all: Vec<u32> = (0..10_000).collect();
            all.shuffle(&mut rng);
            let keep = rng.gen_range(2..10_000);
            let mut seqs: Vec<u32> = all[..keep].to_vec();
            seqs.sort_unstable();
            let report = loss_report(&seqs).unwrap();

            let present: BTreeSet<u32> = seqs.iter().copied().collect();
            let (first, last) = (seqs[0], *seqs.last().unwrap());
            let missing: Vec<u32> = (first..=last).filter(|s| !present.contains(s)).collect();
            assert_eq!(report.lost, missing.len() as u64);
            assert_eq!(report.received + report.lost, report.expected);
            let from_gaps: Vec<u32> = report
                .gaps
                .iter()
                .flat_map(|g| (0..g.run_length as u32).map(move |k| g.first_missing + k))
                .collect();
            assert_eq!(from_gaps, missing);
        }
    }

    #[test]
    fn rssi_examples() {
        let frames: Vec<_> = (0..1000).map(|k| CsiFrame::zeroed(k, 0, -42)).collect();
        let s = mean_rssi(&frames, 1000).unwrap();
        assert_eq!((s.mean_dbm, s.std_dbm, s.min_dbm, s.max_dbm), (-42.0, 0.0, -42, -42));

        let frames: Vec<_> = (0..1000)
            .map(|k| CsiFrame::zeroed(k, 0, if k % 2 == 0 { -40 } else { -44 }))
            .collect();
        let s = mean_rssi(&frames, RSSI_SURVEY_FRAMES).unwrap();
        assert_eq!(s.mean_dbm, -42.0);
        assert_eq!(s.std_dbm, 2.0);

        assert_eq!(
            mean_rssi(&frames[..10], 1000),
            Err(InsufficientFrames {
                needed: 1000,
                available: 10
            })
        );
    }

    #[test]
    fn rssi_uses_exactly_first_n() {
        let mut frames: Vec<_> = (0..1000).map(|k| CsiFrame::zeroed(k, 0, -50)).collect();
        frames.push(CsiFrame::zeroed(1000, 0, 0));
        assert_eq!(mean_rssi(&frames, 1000).unwrap().mean_dbm, -50.0);
    }

    #[test]
    fn rssi_matches_compensated_summation() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let frames: Vec<_> = (0..1000).map(|k| CsiFrame::zeroed(k, 0, rng.gen())).collect();
            let (mut sum, mut c) = (0.0f64, 0.0f64);
            for f in &frames {
                let y = f64::from(f.rssi_dbm) - c;
                let t = sum + y;
                c = (t - sum) - y;
                sum = t;
            }
            let oracle = sum / 1000.0;
            let s = mean_rssi(&frames, 1000).unwrap();
            assert!((s.mean_dbm - oracle).abs() <= 1e-9);
            assert!(s.min_dbm as f64 <= s.mean_dbm && s.mean_dbm <= s.max_dbm as f64);
        }
    }

    proptest! {
        #[test]
        fn parse_inverts_serialize(
            seq in any::<u32>(), ts in any::<u64>(), rssi in any::<i8>(),
            pairs in proptest::collection::vec((any::<i8>(), any::<i8>()), SUBCARRIERS),
        ) {
            let frame = CsiFrame::new(seq, ts, rssi, pairs.into_iter().map(|(i, q)| ComplexSample::new(i, q)).collect());
            let line = serialize_csi_line(&frame);
            prop_assert_eq!(parse_csi_line(&line).unwrap(), frame);
        }

        #[test]
        fn parser_never_panics(line in "\\PC{0,300}") {
            let _ = parse_csi_line(&line);
        }

        #[test]
        fn loss_is_invariant_under_rechunking(
            mut seqs in proptest::collection::btree_set(0u32..5000, 1..300),
            cuts in proptest::collection::vec(0usize..300, 0..10),
        ) {
            let seqs: Vec<u32> = std::mem::take(&mut seqs).into_iter().collect();
            let whole = loss_report(&seqs).unwrap();
            let mut bounds: Vec<usize> = cuts.into_iter().map(|c| c.min(seqs.len())).collect();
            bounds.push(0);
            bounds.push(seqs.len());
            bounds.sort_unstable();
            let mut tracker = LossTracker::new();
            for w in bounds.windows(2) {
                tracker.extend(seqs[w[0]..w[1]].iter().copied()).unwrap();
            }
            prop_assert_eq!(tracker.report(), whole);
        }
    }
}
