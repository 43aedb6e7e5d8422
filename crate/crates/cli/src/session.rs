use std::io::{self, BufReader};
use std::path::{Path, PathBuf};

use clap::Args;
use serde::Serialize;
use wallhack_core::csi::{ActivityLabel, AntennaKind, CsiFrame, Scenario, SessionMeta};
use wallhack_core::dataset::{load_intervals, AnnotationInterval, PipelineParams, SessionInput};
use wallhack_core::dsp::{HampelParams, WINDOW_LEN};
use wallhack_core::ingest::{meta_from_comments, read_frames, FrameSource};
use wallhack_core::linksim::HALLWAY_LENGTH_M;

use crate::error::{io_error, CliError, CliResult};

/// Header comment key naming the label of a single-activity session.
pub const LABEL_KEY: &str = "label";

pub fn label_comment(label: ActivityLabel) -> String {
    format!("{LABEL_KEY}: {}", label.code())
}

/// The last `label:` header comment, if any.
pub fn label_from_comments(comments: &[String]) -> Option<Result<ActivityLabel, String>> {
    comments
        .iter()
        .rev()
        .find_map(|c| c.strip_prefix(LABEL_KEY).and_then(|r| r.strip_prefix(':')))
        .map(parse_label)
}

pub fn parse_label(s: &str) -> Result<ActivityLabel, String> {
    let code: i64 = s
        .trim()
        .parse()
        .map_err(|_| format!("label must be 0, 1 or 2, got {s:?}"))?;
    ActivityLabel::from_code(code).map_err(|e| e.to_string())
}

pub fn parse_scenario(s: &str) -> Result<Scenario, String> {
    match s.to_ascii_lowercase().as_str() {
        "los" => Ok(Scenario::Los),
        "nlos" => Ok(Scenario::Nlos),
        _ => Err(format!("scenario must be los or nlos, got {s:?}")),
    }
}

pub fn parse_antenna(s: &str) -> Result<AntennaKind, String> {
    match s.to_ascii_lowercase().replace('-', "_").as_str() {
        "biquad" => Ok(AntennaKind::Biquad),
        "pifa_plane" => Ok(AntennaKind::PifaPlane),
        "pifa" => Ok(AntennaKind::Pifa),
        _ => Err(format!("antenna must be biquad, pifa-plane or pifa, got {s:?}")),
    }
}

/// Recording context given on the command line; overrides the session header.
#[derive(Debug, Clone, Default, Args, Serialize)]
pub struct MetaArgs {
    /// Propagation scenario: los or nlos.
    #[arg(long, value_parser = parse_scenario)]
    pub scenario: Option<Scenario>,
    /// Antenna system: biquad, pifa-plane or pifa.
    #[arg(long, value_parser = parse_antenna)]
    pub antenna: Option<AntennaKind>,
    /// Activity zone 1..=5.
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=5))]
    pub zone: Option<u8>,
    /// Transmitter-receiver distance in meters, for sessions without a zone.
    #[arg(long, conflicts_with = "zone")]
    pub distance: Option<f64>,
}

impl MetaArgs {
    pub fn is_empty(&self) -> bool {
        self.scenario.is_none() && self.antenna.is_none() && self.zone.is_none() && self.distance.is_none()
    }

    /// Applies the flags on top of `base`; without a base, scenario and
    /// antenna are required.
    pub fn resolve(&self, base: Option<SessionMeta>, what: &str) -> CliResult<SessionMeta> {
        let mut meta = match base {
            Some(m) => m,
            None => {
                let (Some(scenario), Some(antenna)) = (self.scenario, self.antenna) else {
                    return Err(CliError::usage(format!(
                        "{what} has no session header; pass --scenario and --antenna"
                    )));
                };
                SessionMeta::without_zone(scenario, antenna, HALLWAY_LENGTH_M, 0)
            }
        };
        if let Some(s) = self.scenario {
            meta.scenario = s;
        }
        if let Some(a) = self.antenna {
            meta.antenna = a;
        }
        if let Some(zone) = self.zone {
            meta = SessionMeta::in_zone(meta.scenario, meta.antenna, zone, meta.start_time_us)
                .map_err(|e| CliError::usage(e.to_string()))?;
        }
        if let Some(d) = self.distance {
            if !(d.is_finite() && d > 0.0) {
                return Err(CliError::usage(format!("distance must be positive, got {d}")));
            }
            meta.zone_index = None;
            meta.distance_m = d;
        }
        Ok(meta)
    }

    /// Metadata fully determined by the flags alone, if any.
    pub fn standalone(&self, start_time_us: u64) -> CliResult<Option<SessionMeta>> {
        if self.scenario.is_none() || self.antenna.is_none() {
            return Ok(None);
        }
        let mut meta = self.resolve(None, "")?;
        meta.start_time_us = start_time_us;
        Ok(Some(meta))
    }
}

/// Preprocessing knobs shared by `preprocess` and `dataset build`.
#[derive(Debug, Clone, Args, Serialize)]
pub struct PipelineArgs {
    /// Frames per window.
    #[arg(long, default_value_t = WINDOW_LEN)]
    pub window: usize,
    /// Frames between window starts.
    #[arg(long, default_value_t = WINDOW_LEN)]
    pub stride: usize,
    /// Hampel half window (samples on each side).
    #[arg(long, default_value_t = HampelParams::default().half_window)]
    pub hampel_half_window: usize,
    /// Hampel outlier threshold in scaled MADs.
    #[arg(long, default_value_t = HampelParams::default().n_sigma)]
    pub hampel_sigma: f64,
    /// Keep raw amplitudes instead of z-scoring each window.
    #[arg(long)]
    pub no_zscore: bool,
}

impl PipelineArgs {
    pub fn params(&self) -> CliResult<PipelineParams> {
        if self.window == 0 || self.stride == 0 {
            return Err(CliError::usage("window and stride must be positive"));
        }
        if !(self.hampel_sigma.is_finite() && self.hampel_sigma >= 0.0) {
            return Err(CliError::usage("hampel sigma must be finite and non-negative"));
        }
        Ok(PipelineParams {
            hampel: HampelParams {
                half_window: self.hampel_half_window,
                n_sigma: self.hampel_sigma,
            },
            window_len: self.window,
            stride: self.stride,
            zscore: !self.no_zscore,
        })
    }
}

/// A session file as read from disk or stdin.
#[derive(Debug)]
pub struct SessionFile {
    pub frames: Vec<CsiFrame>,
    pub comments: Vec<String>,
    pub meta: Option<SessionMeta>,
    pub label: Option<ActivityLabel>,
}

/// Reads a session; `-` is standard input. Malformed frame lines are data
/// errors here, unlike in live ingest.
pub fn read_session(path: &str) -> CliResult<SessionFile> {
    let source = if path == "-" {
        FrameSource::Reader(Box::new(BufReader::new(io::stdin())))
    } else {
        FrameSource::file(path)
    };
    let mut stream = read_frames(source)?;
    let frames: Vec<CsiFrame> = stream.by_ref().collect();
    if let Some(e) = stream.take_error() {
        return Err(io_error(Path::new(path), e));
    }
    let stats = stream.into_stats();
    if stats.skipped > 0 {
        return Err(CliError::data(format!(
            "{path}: {} malformed frame lines",
            stats.skipped
        )));
    }
    if frames.is_empty() {
        return Err(CliError::data(format!("{path}: no frames")));
    }
    let meta = meta_from_comments(&stats.comments)
        .transpose()
        .map_err(|e| CliError::data(format!("{path}: bad session header: {e}")))?;
    let label = label_from_comments(&stats.comments)
        .transpose()
        .map_err(|e| CliError::data(format!("{path}: bad label header: {e}")))?;
    Ok(SessionFile {
        frames,
        comments: stats.comments,
        meta,
        label,
    })
}

/// `x.csi` → `x.intervals.json`.
pub fn intervals_path(session: &Path) -> PathBuf {
    session.with_extension("intervals.json")
}

/// Session plus annotations, resolved in order: explicit intervals file,
/// the file next to the session, the label flag, the session's label header.
pub fn load_session_input(
    path: &str,
    intervals: Option<&Path>,
    label: Option<ActivityLabel>,
    meta_args: &MetaArgs,
) -> CliResult<SessionInput> {
    let file = read_session(path)?;
    let sibling = (path != "-")
        .then(|| intervals_path(Path::new(path)))
        .filter(|p| p.exists());
    let intervals = match (intervals, sibling, label.or(file.label)) {
        (Some(p), _, _) => load_intervals(p)?,
        (None, Some(p), _) => load_intervals(&p)?,
        (None, None, Some(label)) => {
            vec![AnnotationInterval::covering(&file.frames, label).expect("non-empty session")]
        }
        (None, None, None) => {
            return Err(CliError::usage(format!(
                "{path}: no annotations; pass --intervals or --label"
            )))
        }
    };
    let meta = meta_args.resolve(file.meta, path)?;
    Ok(SessionInput {
        frames: file.frames,
        intervals,
        meta,
        source: (path != "-").then(|| path.to_string()),
    })
}

/// Expands directories into their `*.csi` files, sorted by name.
pub fn expand_sessions(inputs: &[PathBuf]) -> CliResult<Vec<PathBuf>> {
    let mut out = Vec::new();
    for input in inputs {
        if input.is_dir() {
            let mut found: Vec<PathBuf> = std::fs::read_dir(input)
                .map_err(|e| io_error(input, e))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|x| x == "csi"))
                .collect();
            found.sort();
            if found.is_empty() {
                return Err(CliError::usage(format!("{}: no .csi session files", input.display())));
            }
            out.extend(found);
        } else {
            out.push(input.clone());
        }
    }
    Ok(out)
}
