//! Labeled spectrogram datasets on disk.
//!
//! A dataset directory holds
//!
//! ```text
//! <dir>/manifest.json        human-readable index (see DatasetManifest)
//! <dir>/windows/<id>.whk     one spectrogram per file
//! ```
//!
//! # Window file
//!
//! ```text
//! offset  size          content
//! 0       4             magic "WH1K"
//! 4       4             rows, u32 little-endian
//! 8       4             cols, u32 little-endian
//! 12      4·rows·cols   f32 little-endian, row-major (time-major)
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::csi::{ActivityLabel, AntennaKind, CsiFrame, Scenario, SessionMeta, SUBCARRIERS};
use crate::dsp::{
    hampel_matrix, segment_windows, zscore, AmplitudeMatrix, HampelParams, MatrixError, SpectrogramWindow, WINDOW_LEN,
};

pub const WINDOW_MAGIC: &[u8; 4] = b"WH1K";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const WINDOWS_DIR: &str = "windows";
pub const MANIFEST_FORMAT: &str = "wallhack-dataset/1";

/// Subset names of the published dataset and their sizes.
pub const WALLHACK_SUBSETS: [(&str, Scenario, AntennaKind, usize); 4] = [
    ("W1.8k_LB", Scenario::Los, AntennaKind::Biquad, 458),
    ("W1.8k_LP", Scenario::Los, AntennaKind::PifaPlane, 461),
    ("W1.8k_NB", Scenario::Nlos, AntennaKind::Biquad, 450),
    ("W1.8k_NP", Scenario::Nlos, AntennaKind::PifaPlane, 437),
];

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("no frame falls inside any annotation interval")]
    EmptyResult,
    #[error("invalid annotation intervals: {0}")]
    InvalidInterval(String),
    #[error("no sessions given")]
    NoSessions,
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{0}: not a window file (bad magic)")]
    BadMagic(PathBuf),
    #[error("{path}: shape mismatch: {detail}")]
    ShapeMismatch { path: PathBuf, detail: String },
    #[error("{0}: truncated window file")]
    TruncatedFile(PathBuf),
    #[error("{path}: invalid manifest: {detail}")]
    Manifest { path: PathBuf, detail: String },
    #[error("split needs at least 10 samples, have {0}")]
    TooFewSamples(usize),
    #[error("class {0} has no samples")]
    MissingClass(ActivityLabel),
    #[error("output {0} already exists")]
    OutputExists(PathBuf),
    #[error("{path}: {detail}")]
    Import { path: PathBuf, detail: String },
    #[error(transparent)]
    Matrix(#[from] MatrixError),
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Labeled span of a session, half-open: `[start_ts_us, end_ts_us)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationInterval {
    pub start_ts_us: u64,
    pub end_ts_us: u64,
    pub label: ActivityLabel,
}

impl AnnotationInterval {
    pub fn new(start_ts_us: u64, end_ts_us: u64, label: ActivityLabel) -> Self {
        Self {
            start_ts_us,
            end_ts_us,
            label,
        }
    }

    /// Interval covering every frame of `frames`.
    pub fn covering(frames: &[CsiFrame], label: ActivityLabel) -> Option<Self> {
        let start = frames.iter().map(|f| f.timestamp_us).min()?;
        let end = frames.iter().map(|f| f.timestamp_us).max()?;
        Some(Self::new(start, end + 1, label))
    }

    pub fn contains(&self, ts_us: u64) -> bool {
        self.start_ts_us <= ts_us && ts_us < self.end_ts_us
    }
}

pub fn validate_intervals(intervals: &[AnnotationInterval]) -> Result<(), DatasetError> {
    if let Some(bad) = intervals.iter().find(|iv| iv.start_ts_us >= iv.end_ts_us) {
        return Err(DatasetError::InvalidInterval(format!(
            "start {} not before end {}",
            bad.start_ts_us, bad.end_ts_us
        )));
    }
    let mut sorted: Vec<_> = intervals.to_vec();
    sorted.sort_by_key(|iv| iv.start_ts_us);
    if sorted.windows(2).any(|w| w[1].start_ts_us < w[0].end_ts_us) {
        return Err(DatasetError::InvalidInterval("intervals overlap".into()));
    }
    Ok(())
}

/// Annotation file: a JSON array of intervals, e.g.
/// `[{"start_ts_us": 0, "end_ts_us": 120000000, "label": 1}]`.
pub fn intervals_to_json(intervals: &[AnnotationInterval]) -> String {
    let mut text = serde_json::to_string_pretty(intervals).expect("intervals serialize");
    text.push('\n');
    text
}

pub fn intervals_from_json(text: &str) -> Result<Vec<AnnotationInterval>, DatasetError> {
    let intervals: Vec<AnnotationInterval> =
        serde_json::from_str(text).map_err(|e| DatasetError::InvalidInterval(e.to_string()))?;
    validate_intervals(&intervals)?;
    Ok(intervals)
}

pub fn load_intervals(path: &Path) -> Result<Vec<AnnotationInterval>, DatasetError> {
    intervals_from_json(&fs::read_to_string(path).map_err(io_err(path))?)
}

/// Contiguous run of frames inside one annotation interval.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSegment {
    pub label: ActivityLabel,
    pub interval_index: usize,
    pub frames: Vec<CsiFrame>,
}

/// Keeps only frames inside an interval, grouped into maximal runs of
/// consecutive frames that share an interval.
pub fn trim(frames: &[CsiFrame], intervals: &[AnnotationInterval]) -> Result<Vec<LabeledSegment>, DatasetError> {
    validate_intervals(intervals)?;
    let mut segments: Vec<LabeledSegment> = Vec::new();
    let mut open: Option<usize> = None;
    for frame in frames {
        let hit = intervals.iter().position(|iv| iv.contains(frame.timestamp_us));
        match (hit, open) {
            (Some(k), Some(current)) if segments[current].interval_index == k => {
                segments[current].frames.push(frame.clone());
            }
            (Some(k), _) => {
                segments.push(LabeledSegment {
                    label: intervals[k].label,
                    interval_index: k,
                    frames: vec![frame.clone()],
                });
                open = Some(segments.len() - 1);
            }
            (None, _) => open = None,
        }
    }
    if segments.is_empty() {
        return Err(DatasetError::EmptyResult);
    }
    Ok(segments)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PipelineParams {
    pub hampel: HampelParams,
    pub window_len: usize,
    pub stride: usize,
    pub zscore: bool,
}

impl Default for PipelineParams {
    fn default() -> Self {
        Self {
            hampel: HampelParams::default(),
            window_len: WINDOW_LEN,
            stride: WINDOW_LEN,
            zscore: true,
        }
    }
}

/// Raw frames of one capture session plus its annotations.
#[derive(Debug, Clone)]
pub struct SessionInput {
    pub frames: Vec<CsiFrame>,
    pub intervals: Vec<AnnotationInterval>,
    pub meta: SessionMeta,
    /// Where the frames came from, recorded in the manifest.
    pub source: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub tool: String,
    pub version: String,
}

impl Default for Provenance {
    fn default() -> Self {
        Self {
            tool: "wallhack".into(),
            version: env!("CARGO_PKG_VERSION").into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Preprocessing {
    pub hampel_half_window: usize,
    pub hampel_n_sigma: f64,
    pub hampel_mad_scale: f64,
    pub window_len: usize,
    pub stride: usize,
    /// `"zscore"` (whole-window mean/std) or `"none"`.
    pub normalization: String,
    pub storage: String,
}

impl Preprocessing {
    fn from_params(p: &PipelineParams) -> Self {
        Self {
            hampel_half_window: p.hampel.half_window,
            hampel_n_sigma: p.hampel.n_sigma,
            hampel_mad_scale: crate::dsp::MAD_SCALE,
            window_len: p.window_len,
            stride: p.stride,
            normalization: if p.zscore { "zscore" } else { "none" }.into(),
            storage: "f32-le".into(),
        }
    }

    pub fn params(&self) -> PipelineParams {
        PipelineParams {
            hampel: HampelParams {
                half_window: self.hampel_half_window,
                n_sigma: self.hampel_n_sigma,
            },
            window_len: self.window_len,
            stride: self.stride,
            zscore: self.normalization == "zscore",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionRecord {
    pub meta: SessionMeta,
    pub intervals: Vec<AnnotationInterval>,
    pub frames: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitRecord {
    pub ratio: [u32; 3],
    pub seed: u64,
    pub stratified: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    /// Path relative to the dataset directory.
    pub file: String,
    pub label: ActivityLabel,
    pub meta: SessionMeta,
    /// Index into `sessions`, absent for imported windows.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub session: Option<usize>,
    /// Annotation interval within the session.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub interval: Option<usize>,
    /// First frame of the window within its labeled segment.
    pub source_offset: usize,
    pub split: Option<Split>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format: String,
    pub generator: Provenance,
    pub subset_name: String,
    pub preprocessing: Preprocessing,
    pub split: Option<SplitRecord>,
    pub sessions: Vec<SessionRecord>,
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn load(dir: &Path) -> Result<Self, DatasetError> {
        let path = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(io_err(&path))?;
        let manifest: Self = serde_json::from_str(&text).map_err(|e| DatasetError::Manifest {
            path: path.clone(),
            detail: e.to_string(),
        })?;
        if manifest.format != MANIFEST_FORMAT {
            return Err(DatasetError::Manifest {
                path,
                detail: format!("unsupported format {:?}", manifest.format),
            });
        }
        Ok(manifest)
    }

    pub fn to_json(&self) -> String {
        let mut text = serde_json::to_string_pretty(self).expect("manifest serializes");
        text.push('\n');
        text
    }

    pub fn save(&self, dir: &Path) -> Result<(), DatasetError> {
        let path = dir.join(MANIFEST_FILE);
        let tmp = dir.join(format!("{MANIFEST_FILE}.tmp"));
        fs::write(&tmp, self.to_json()).map_err(io_err(&tmp))?;
        fs::rename(&tmp, &path).map_err(io_err(&path))
    }

    pub fn labels(&self) -> Vec<ActivityLabel> {
        self.entries.iter().map(|e| e.label).collect()
    }

    pub fn stats(&self) -> DatasetStats {
        let mut stats = DatasetStats {
            subset_name: self.subset_name.clone(),
            total: self.entries.len(),
            ..DatasetStats::default()
        };
        for e in &self.entries {
            stats.per_class[e.label.index()] += 1;
            match e.split {
                Some(s) => *stats.per_split.entry(s).or_default() += 1,
                None => stats.unassigned += 1,
            }
            if let Some(s) = e.split {
                stats.per_split_class.entry(s).or_insert([0; 3])[e.label.index()] += 1;
            }
        }
        stats
    }

    /// Loads every window assigned to `split`, in manifest order.
    pub fn load_split(&self, dir: &Path, split: Split) -> Result<Vec<SpectrogramWindow>, DatasetError> {
        self.entries
            .iter()
            .filter(|e| e.split == Some(split))
            .map(|e| self.load_entry(dir, e))
            .collect()
    }

    pub fn load_entry(&self, dir: &Path, entry: &ManifestEntry) -> Result<SpectrogramWindow, DatasetError> {
        Ok(SpectrogramWindow {
            data: read_window(&dir.join(&entry.file))?,
            label: entry.label,
            meta: entry.meta.clone(),
            source_offset: entry.source_offset,
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct DatasetStats {
    pub subset_name: String,
    pub total: usize,
    pub per_class: [usize; 3],
    pub per_split: BTreeMap<Split, usize>,
    pub per_split_class: BTreeMap<Split, [usize; 3]>,
    pub unassigned: usize,
}

pub fn write_window(path: &Path, data: &Array2<f32>) -> Result<(), DatasetError> {
    let (rows, cols) = data.dim();
    let mut bytes = Vec::with_capacity(12 + 4 * rows * cols);
    bytes.extend_from_slice(WINDOW_MAGIC);
    bytes.extend_from_slice(&(rows as u32).to_le_bytes());
    bytes.extend_from_slice(&(cols as u32).to_le_bytes());
    for v in data.iter() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, bytes).map_err(io_err(path))
}

pub fn read_window(path: &Path) -> Result<Array2<f32>, DatasetError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    decode_window(&bytes, path)
}

fn decode_window(bytes: &[u8], path: &Path) -> Result<Array2<f32>, DatasetError> {
    if bytes.len() < 4 || &bytes[..4] != WINDOW_MAGIC {
        return Err(DatasetError::BadMagic(path.to_path_buf()));
    }
    if bytes.len() < 12 {
        return Err(DatasetError::TruncatedFile(path.to_path_buf()));
    }
    let word = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4 bytes")) as usize;
    let (rows, cols) = (word(4), word(8));
    let expected =
        rows.checked_mul(cols)
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| DatasetError::ShapeMismatch {
                path: path.to_path_buf(),
                detail: format!("{rows}x{cols} overflows"),
            })?;
    let payload = &bytes[12..];
    if payload.len() < expected {
        return Err(DatasetError::TruncatedFile(path.to_path_buf()));
    }
    if payload.len() > expected {
        return Err(DatasetError::ShapeMismatch {
            path: path.to_path_buf(),
            detail: format!("{} trailing bytes after {rows}x{cols} values", payload.len() - expected),
        });
    }
    let values = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    Ok(Array2::from_shape_vec((rows, cols), values).expect("length checked"))
}

fn window_id(index: usize) -> String {
    format!("{index:06}")
}

/// Runs trim → amplitudes → Hampel → segmentation → (z-score) over every
/// session and persists the windows plus a manifest under `out_dir`.
///
/// The dataset is assembled in a sibling staging directory and renamed into
/// place at the end, so a failed build leaves nothing behind.
pub fn build_dataset(
    sessions: &[SessionInput],
    params: &PipelineParams,
    subset_name: &str,
    out_dir: &Path,
) -> Result<DatasetManifest, DatasetError> {
    if sessions.is_empty() {
        return Err(DatasetError::NoSessions);
    }
    if out_dir.exists() {
        return Err(DatasetError::OutputExists(out_dir.to_path_buf()));
    }
    let staging = staging_dir(out_dir);
    if staging.exists() {
        fs::remove_dir_all(&staging).map_err(io_err(&staging))?;
    }
    let result = build_into(sessions, params, subset_name, &staging)
        .and_then(|m| fs::rename(&staging, out_dir).map_err(io_err(out_dir)).map(|_| m));
    if result.is_err() {
        let _ = fs::remove_dir_all(&staging);
    }
    result
}

fn staging_dir(out_dir: &Path) -> PathBuf {
    let name = out_dir
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".into());
    out_dir.with_file_name(format!(".{name}.partial"))
}

fn build_into(
    sessions: &[SessionInput],
    params: &PipelineParams,
    subset_name: &str,
    dir: &Path,
) -> Result<DatasetManifest, DatasetError> {
    let windows_dir = dir.join(WINDOWS_DIR);
    fs::create_dir_all(&windows_dir).map_err(io_err(&windows_dir))?;
    let mut manifest = DatasetManifest {
        format: MANIFEST_FORMAT.into(),
        generator: Provenance::default(),
        subset_name: subset_name.into(),
        preprocessing: Preprocessing::from_params(params),
        split: None,
        sessions: Vec::new(),
        entries: Vec::new(),
    };
    for (session_index, session) in sessions.iter().enumerate() {
        session
            .meta
            .validate()
            .map_err(|e| DatasetError::InvalidInterval(e.to_string()))?;
        for segment in trim(&session.frames, &session.intervals)? {
            let amplitudes = AmplitudeMatrix::from_frames(&segment.frames)?;
            let filtered = hampel_matrix(&amplitudes, params.hampel);
            for window in segment_windows(&filtered, params.window_len, params.stride) {
                let values = if params.zscore {
                    zscore(window.data)
                } else {
                    window.data.to_owned()
                };
                let id = window_id(manifest.entries.len());
                let file = format!("{WINDOWS_DIR}/{id}.whk");
                write_window(&dir.join(&file), &values.mapv(|v| v as f32))?;
                manifest.entries.push(ManifestEntry {
                    id,
                    file,
                    label: segment.label,
                    meta: session.meta.clone(),
                    session: Some(session_index),
                    interval: Some(segment.interval_index),
                    source_offset: window.source_offset,
                    split: None,
                });
            }
        }
        manifest.sessions.push(SessionRecord {
            meta: session.meta.clone(),
            intervals: session.intervals.clone(),
            frames: session.frames.len(),
            source: session.source.clone(),
        });
    }
    manifest.save(dir)?;
    Ok(manifest)
}

/// Train/val/test proportions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitRatio(pub [u32; 3]);

impl Default for SplitRatio {
    fn default() -> Self {
        Self([8, 1, 1])
    }
}

/// Distributes `total` slots over classes in proportion `num/den` of each
/// class count: every class gets its floor, leftovers go to the largest
/// fractional remainders (ties to the lower class code), never beyond `caps`.
fn apportion(counts: &[usize; 3], caps: &[usize; 3], num: usize, den: usize, total: usize) -> [usize; 3] {
    let mut out = [0usize; 3];
    for c in 0..3 {
        out[c] = (counts[c] * num / den).min(caps[c]);
    }
    let mut order: Vec<usize> = (0..3).collect();
    order.sort_by_key(|&c| (std::cmp::Reverse(counts[c] * num % den), c));
    let mut remaining = total.saturating_sub(out.iter().sum());
    while remaining > 0 {
        let Some(&c) = order.iter().find(|&&c| out[c] < caps[c]) else {
            break;
        };
        out[c] += 1;
        remaining -= 1;
        order.retain(|&o| o != c);
        if order.is_empty() {
            order = (0..3).collect();
        }
    }
    out
}

/// Stratified, seeded split. Sizes follow `train = ⌊8N/10⌋`,
/// `val = ⌊N/10⌋`, `test = N − train − val` (for the default ratio), and
/// each class's train share is within one sample of its proportional size.
pub fn split(manifest: &DatasetManifest, ratio: SplitRatio, seed: u64) -> Result<DatasetManifest, DatasetError> {
    let n = manifest.entries.len();
    if n < 10 {
        return Err(DatasetError::TooFewSamples(n));
    }
    let [a, b, c] = ratio.0.map(|v| v as usize);
    let den = a + b + c;
    let n_train = n * a / den;
    let n_val = n * b / den;

    let mut by_class: [Vec<usize>; 3] = Default::default();
    for (k, e) in manifest.entries.iter().enumerate() {
        by_class[e.label.index()].push(k);
    }
    let counts = [by_class[0].len(), by_class[1].len(), by_class[2].len()];
    let train = apportion(&counts, &counts, a, den, n_train);
    let room = [counts[0] - train[0], counts[1] - train[1], counts[2] - train[2]];
    let val = apportion(&counts, &room, b, den, n_val);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = manifest.clone();
    for (class, members) in by_class.iter_mut().enumerate() {
        members.shuffle(&mut rng);
        for (rank, &k) in members.iter().enumerate() {
            out.entries[k].split = Some(if rank < train[class] {
                Split::Train
            } else if rank < train[class] + val[class] {
                Split::Val
            } else {
                Split::Test
            });
        }
    }
    out.split = Some(SplitRecord {
        ratio: ratio.0,
        seed,
        stratified: true,
    });
    Ok(out)
}

/// Endless index stream drawing a class uniformly, then a member of it.
#[derive(Debug, Clone)]
pub struct BalancedSampler {
    by_class: [Vec<usize>; 3],
    rng: ChaCha8Rng,
}

impl BalancedSampler {
    pub fn new(labels: &[ActivityLabel], seed: u64) -> Result<Self, DatasetError> {
        let mut by_class: [Vec<usize>; 3] = Default::default();
        for (k, label) in labels.iter().enumerate() {
            by_class[label.index()].push(k);
        }
        if let Some(missing) = ActivityLabel::ALL.iter().find(|l| by_class[l.index()].is_empty()) {
            return Err(DatasetError::MissingClass(*missing));
        }
        Ok(Self {
            by_class,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    pub fn rng_mut(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }
}

impl Iterator for BalancedSampler {
    type Item = usize;

    fn next(&mut self) -> Option<usize> {
        let class = &self.by_class[self.rng.gen_range(0..ActivityLabel::COUNT)];
        Some(class[self.rng.gen_range(0..class.len())])
    }
}

/// Convenience wrapper for [`BalancedSampler::new`].
pub fn balanced_indices(labels: &[ActivityLabel], seed: u64) -> Result<BalancedSampler, DatasetError> {
    BalancedSampler::new(labels, seed)
}

/// Importer for the published spectrogram release.
///
/// Expected layout below `release_dir`: one directory per subset, named
/// either by subset (`W1.8k_NB`, `NB`) or as `<system>/<scenario>` with
/// system `BQ`/`biquad` or `PIFA`/`pifa` and scenario `LOS`/`NLOS`. Inside
/// a subset, every `.csv` file (400 lines of 52 comma- or space-separated
/// amplitudes) or `.whk` file is one spectrogram. Its label is the nearest
/// enclosing directory named `0`/`1`/`2` (or `no_presence`, `walking`,
/// `walking_arm_waving`), otherwise a `<code>_` file-name prefix.
///
/// Each subset lands in `out_dir/<subset>` as an ordinary dataset.
pub fn import_release(release_dir: &Path, out_dir: &Path) -> Result<Vec<DatasetManifest>, DatasetError> {
    let subsets = find_subsets(release_dir)?;
    if subsets.is_empty() {
        return Err(DatasetError::Import {
            path: release_dir.to_path_buf(),
            detail: "no subset directories found".into(),
        });
    }
    if out_dir.exists() {
        return Err(DatasetError::OutputExists(out_dir.to_path_buf()));
    }
    let staging = staging_dir(out_dir);
    if staging.exists() {
        fs::remove_dir_all(&staging).map_err(io_err(&staging))?;
    }
    let result = (|| {
        let mut manifests = Vec::new();
        for (name, dir) in &subsets {
            manifests.push(import_subset(name, dir, &staging.join(name))?);
        }
        fs::rename(&staging, out_dir).map_err(io_err(out_dir))?;
        Ok(manifests)
    })();
    if result.is_err() {
        let _ = fs::remove_dir_all(&staging);
    }
    result
}

fn subset_by_name(name: &str) -> Option<&'static str> {
    let upper = name.to_ascii_uppercase();
    WALLHACK_SUBSETS
        .iter()
        .map(|s| s.0)
        .find(|s| upper == s.to_ascii_uppercase() || upper == s[6..])
}

fn find_subsets(root: &Path) -> Result<Vec<(String, PathBuf)>, DatasetError> {
    let mut found: BTreeMap<String, PathBuf> = BTreeMap::new();
    for entry in sorted_dir(root)? {
        if !entry.is_dir() {
            continue;
        }
        let name = entry
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        if let Some(subset) = subset_by_name(&name) {
            found.insert(subset.into(), entry);
            continue;
        }
        let system = match name.to_ascii_uppercase().as_str() {
            "BQ" | "BIQUAD" => 'B',
            "PIFA" | "PIFA_PLANE" => 'P',
            _ => continue,
        };
        for inner in sorted_dir(&entry)? {
            let scenario = inner.file_name().map(|n| n.to_string_lossy().to_ascii_uppercase());
            let tag = match scenario.as_deref() {
                Some("LOS") => 'L',
                Some("NLOS") => 'N',
                _ => continue,
            };
            if inner.is_dir() {
                found.insert(format!("W1.8k_{tag}{system}"), inner);
            }
        }
    }
    Ok(found.into_iter().collect())
}

fn sorted_dir(dir: &Path) -> Result<Vec<PathBuf>, DatasetError> {
    let mut entries: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(io_err(dir))?
        .map(|e| e.map(|e| e.path()).map_err(io_err(dir)))
        .collect::<Result<_, _>>()?;
    entries.sort();
    Ok(entries)
}

fn label_from_name(name: &str) -> Option<ActivityLabel> {
    match name.to_ascii_lowercase().as_str() {
        "0" | "no_presence" | "nopresence" => Some(ActivityLabel::NoPresence),
        "1" | "walking" => Some(ActivityLabel::Walking),
        "2" | "walking_arm_waving" | "walking+arm-waving" => Some(ActivityLabel::WalkingArmWaving),
        _ => None,
    }
}

fn collect_windows(
    dir: &Path,
    label: Option<ActivityLabel>,
    out: &mut Vec<(PathBuf, Option<ActivityLabel>)>,
) -> Result<(), DatasetError> {
    for path in sorted_dir(dir)? {
        let name = path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        if path.is_dir() {
            collect_windows(&path, label_from_name(&name).or(label), out)?;
        } else if matches!(path.extension().and_then(|e| e.to_str()), Some("csv" | "whk")) {
            let prefixed = name.split_once('_').and_then(|(p, _)| label_from_name(p));
            out.push((path, label.or(prefixed)));
        }
    }
    Ok(())
}

fn read_csv_window(path: &Path) -> Result<Array2<f32>, DatasetError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let mut values = Vec::new();
    let mut rows = 0;
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let row: Vec<f32> = line
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|t| !t.is_empty())
            .map(|t| t.parse::<f32>())
            .collect::<Result<_, _>>()
            .map_err(|e| DatasetError::Import {
                path: path.to_path_buf(),
                detail: format!("line {}: {e}", rows + 1),
            })?;
        if row.len() != SUBCARRIERS {
            return Err(DatasetError::ShapeMismatch {
                path: path.to_path_buf(),
                detail: format!("row {} has {} values, expected {SUBCARRIERS}", rows + 1, row.len()),
            });
        }
        values.extend(row);
        rows += 1;
    }
    Ok(Array2::from_shape_vec((rows, SUBCARRIERS), values).expect("rows x 52"))
}

fn import_subset(name: &str, src: &Path, dst: &Path) -> Result<DatasetManifest, DatasetError> {
    let (_, scenario, antenna, _) = *WALLHACK_SUBSETS
        .iter()
        .find(|s| s.0 == name)
        .expect("subset names come from the table");
    let mut files = Vec::new();
    collect_windows(src, None, &mut files)?;
    let windows_dir = dst.join(WINDOWS_DIR);
    fs::create_dir_all(&windows_dir).map_err(io_err(&windows_dir))?;
    let mut manifest = DatasetManifest {
        format: MANIFEST_FORMAT.into(),
        generator: Provenance::default(),
        subset_name: name.into(),
        preprocessing: Preprocessing {
            hampel_half_window: 0,
            hampel_n_sigma: 0.0,
            hampel_mad_scale: 0.0,
            window_len: WINDOW_LEN,
            stride: WINDOW_LEN,
            normalization: "imported".into(),
            storage: "f32-le".into(),
        },
        split: None,
        sessions: Vec::new(),
        entries: Vec::new(),
    };
    for (path, label) in files {
        let label = label.ok_or_else(|| DatasetError::Import {
            path: path.clone(),
            detail: "cannot infer the class label".into(),
        })?;
        let data = if path.extension().and_then(|e| e.to_str()) == Some("whk") {
            read_window(&path)?
        } else {
            read_csv_window(&path)?
        };
        if data.dim() != (WINDOW_LEN, SUBCARRIERS) {
            return Err(DatasetError::ShapeMismatch {
                path,
                detail: format!("{:?}, expected ({WINDOW_LEN}, {SUBCARRIERS})", data.dim()),
            });
        }
        let id = window_id(manifest.entries.len());
        let file = format!("{WINDOWS_DIR}/{id}.whk");
        write_window(&dst.join(&file), &data)?;
        manifest.entries.push(ManifestEntry {
            id,
            file,
            label,
            meta: SessionMeta::without_zone(scenario, antenna, 0.0, 0),
            session: None,
            interval: None,
            source_offset: 0,
            split: None,
        });
    }
    manifest.save(dst)?;
    Ok(manifest)
}
