use std::fs::{self, File};
use std::io::{self, BufReader, BufWriter, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::{Args, Subcommand};
use serde::Serialize;
use wallhack_core::csi::ActivityLabel;
use wallhack_core::dataset::{
    build_dataset, import_release, split, DatasetManifest, DatasetStats, Split, SplitRatio, MANIFEST_FILE,
};
use wallhack_core::ingest::{
    meta_comment, meta_from_comments, read_frames, serialize_csi_line, FrameSource, LossTracker, RssiSummary,
};

use crate::error::{io_error, CliError, CliResult};
use crate::provenance::{header, ReportProvenance};
use crate::session::{
    expand_sessions, label_comment, label_from_comments, load_session_input, parse_label, MetaArgs, PipelineArgs,
};

#[derive(Debug, Args, Serialize)]
#[group(id = "input", required = true, multiple = false)]
pub struct IngestSource {
    /// Listen for one wire line per datagram on this address.
    #[arg(long, group = "input")]
    pub udp: Option<SocketAddr>,
    /// Read a capture file.
    #[arg(long, group = "input")]
    pub file: Option<PathBuf>,
    /// Read standard input (e.g. a serial console piped in).
    #[arg(long, group = "input")]
    pub stdin: bool,
}

#[derive(Debug, Args, Serialize)]
pub struct IngestArgs {
    #[command(flatten)]
    pub source: IngestSource,
    /// Session file to write.
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
    /// UDP only: stop after this many seconds without a datagram.
    #[arg(long, default_value_t = 5.0)]
    pub idle_timeout: f64,
    /// Stop after this many frames.
    #[arg(long)]
    pub max_frames: Option<usize>,
    /// Label recorded in the session header.
    #[arg(long, value_parser = parse_label)]
    pub label: Option<ActivityLabel>,
    #[command(flatten)]
    pub meta: MetaArgs,
    /// Start time recorded in the session header (Unix microseconds).
    #[arg(long, default_value_t = 0)]
    pub start_us: u64,
}

pub fn ingest(args: &IngestArgs) -> CliResult<()> {
    let source = match (&args.source.udp, &args.source.file) {
        (Some(bind), _) => {
            if !(args.idle_timeout.is_finite() && args.idle_timeout > 0.0) {
                return Err(CliError::usage("idle timeout must be positive"));
            }
            FrameSource::Udp {
                bind: *bind,
                idle_timeout: Some(Duration::from_secs_f64(args.idle_timeout)),
            }
        }
        (None, Some(path)) => FrameSource::file(path),
        (None, None) => FrameSource::Reader(Box::new(BufReader::new(io::stdin()))),
    };
    let mut stream = read_frames(source)?;
    if let Some(addr) = stream.local_addr() {
        eprintln!("listening on udp://{addr}");
    }

    // Comments ahead of the first frame are read by now; a capture's own
    // session and label headers carry over unless overridden by flags.
    let first = stream.next();
    let carried = stream.stats().comments.clone();
    let mut lines = header("ingest", args, None);
    let meta = match args.meta.standalone(args.start_us)? {
        Some(meta) => Some(meta),
        None => meta_from_comments(&carried)
            .transpose()
            .map_err(|e| CliError::data(format!("bad session header: {e}")))?
            .map(|base| {
                if args.meta.is_empty() {
                    Ok(base)
                } else {
                    args.meta.resolve(Some(base), "capture")
                }
            })
            .transpose()?,
    };
    if let Some(meta) = meta {
        lines.push(meta_comment(&meta));
    }
    let carried_label = label_from_comments(&carried)
        .transpose()
        .map_err(|e| CliError::data(format!("bad label header: {e}")))?;
    if let Some(label) = args.label.or(carried_label) {
        lines.push(label_comment(label));
    }
    if let Some(parent) = args.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| io_error(parent, e))?;
    }
    let file = File::create(&args.out).map_err(|e| io_error(&args.out, e))?;
    let mut out = BufWriter::new(file);
    let write_err = |e| io_error(&args.out, e);
    for line in &lines {
        writeln!(out, "# {line}").map_err(write_err)?;
    }

    let mut loss = LossTracker::new();
    let mut regressions = 0u64;
    let mut rssi = Vec::new();
    let limit = args.max_frames.unwrap_or(usize::MAX);
    for frame in first.into_iter().chain(stream.by_ref()).take(limit) {
        writeln!(out, "{}", serialize_csi_line(&frame)).map_err(write_err)?;
        if loss.push(frame.seq).is_err() {
            regressions += 1;
        }
        rssi.push(frame.rssi_dbm);
    }
    out.flush().map_err(write_err)?;
    if let Some(e) = stream.take_error() {
        return Err(CliError::data(format!("source failed: {e}")));
    }
    let stats = stream.stats();
    let report = loss.report();
    println!("frames     {}", rssi.len());
    println!("skipped    {}", stats.skipped);
    println!("expected   {}", report.expected);
    println!(
        "lost       {} ({:.2} %, {} gaps)",
        report.lost,
        report.loss_percent(),
        report.gaps.len()
    );
    if regressions > 0 {
        println!("reordered  {regressions}");
    }
    if let Some(s) = RssiSummary::from_values(&rssi) {
        println!(
            "rssi       mean {:.2} dBm, std {:.2} dB, range {}..{}",
            s.mean_dbm, s.std_dbm, s.min_dbm, s.max_dbm
        );
    }
    println!("session    {}", args.out.display());
    Ok(())
}

#[derive(Debug, Args, Serialize)]
pub struct PreprocessArgs {
    /// Session file, or `-` for standard input.
    pub session: String,
    /// Annotation intervals (JSON); defaults to `<session>.intervals.json`
    /// when present, then --label, then the session's label header.
    #[arg(long)]
    pub intervals: Option<PathBuf>,
    /// Label the whole session.
    #[arg(long, value_parser = parse_label)]
    pub label: Option<ActivityLabel>,
    #[command(flatten)]
    pub meta: MetaArgs,
    #[command(flatten)]
    pub pipeline: PipelineArgs,
    /// Dataset directory to create.
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
    /// Subset name recorded in the manifest.
    #[arg(long, default_value = "session")]
    pub subset: String,
}

pub fn preprocess(args: &PreprocessArgs) -> CliResult<()> {
    let params = args.pipeline.params()?;
    let input = load_session_input(&args.session, args.intervals.as_deref(), args.label, &args.meta)?;
    let manifest = build_dataset(&[input], &params, &args.subset, &args.out)?;
    print_stats(&manifest.stats());
    println!("dataset    {}", args.out.display());
    Ok(())
}

#[derive(Debug, Subcommand)]
pub enum DatasetCommand {
    /// Preprocess session files into a dataset directory.
    Build(BuildArgs),
    /// Assign stratified train/val/test splits in place.
    Split(SplitArgs),
    /// Print window counts per class and split.
    Stats(StatsArgs),
    /// Convert a published release into datasets, one per subset.
    Import(ImportArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct BuildArgs {
    /// Session files or directories of `*.csi` files. Each session's
    /// intervals come from `<session>.intervals.json`, else its label header.
    #[arg(required = true)]
    pub sessions: Vec<PathBuf>,
    #[command(flatten)]
    pub meta: MetaArgs,
    #[command(flatten)]
    pub pipeline: PipelineArgs,
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
    #[arg(long, default_value = "dataset")]
    pub subset: String,
}

#[derive(Debug, Args, Serialize)]
pub struct SplitArgs {
    /// Dataset directory.
    #[arg(long)]
    pub dataset: PathBuf,
    /// Train:val:test weights.
    #[arg(long, default_value = "8:1:1", value_parser = parse_ratio)]
    pub ratio: SplitRatioArg,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct SplitRatioArg(pub [u32; 3]);

fn parse_ratio(s: &str) -> Result<SplitRatioArg, String> {
    let parts: Vec<u32> = s
        .split(':')
        .map(|p| p.trim().parse::<u32>())
        .collect::<Result<_, _>>()
        .map_err(|_| format!("ratio must look like 8:1:1, got {s:?}"))?;
    match parts.as_slice() {
        [a, b, c] if a + b + c > 0 => Ok(SplitRatioArg([*a, *b, *c])),
        _ => Err(format!("ratio must look like 8:1:1, got {s:?}")),
    }
}

#[derive(Debug, Args, Serialize)]
pub struct StatsArgs {
    /// Dataset directory, or a directory of datasets (e.g. an import).
    #[arg(long)]
    pub dataset: PathBuf,
    /// Also write the statistics as JSON.
    #[arg(long)]
    #[serde(skip)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct ImportArgs {
    /// Root of the unpacked release.
    #[arg(long)]
    pub release: PathBuf,
    /// Directory to create; one dataset per subset inside.
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
}

pub fn dataset(cmd: &DatasetCommand) -> CliResult<()> {
    match cmd {
        DatasetCommand::Build(args) => build(args),
        DatasetCommand::Split(args) => split_cmd(args),
        DatasetCommand::Stats(args) => stats_cmd(args),
        DatasetCommand::Import(args) => import_cmd(args),
    }
}

fn build(args: &BuildArgs) -> CliResult<()> {
    let params = args.pipeline.params()?;
    let inputs = expand_sessions(&args.sessions)?
        .iter()
        .map(|p| load_session_input(&p.to_string_lossy(), None, None, &args.meta))
        .collect::<CliResult<Vec<_>>>()?;
    let manifest = build_dataset(&inputs, &params, &args.subset, &args.out)?;
    println!("{} sessions", inputs.len());
    print_stats(&manifest.stats());
    println!("dataset    {}", args.out.display());
    Ok(())
}

fn split_cmd(args: &SplitArgs) -> CliResult<()> {
    let manifest = DatasetManifest::load(&args.dataset)?;
    let manifest = split(&manifest, SplitRatio(args.ratio.0), args.seed)?;
    manifest.save(&args.dataset)?;
    print_stats(&manifest.stats());
    Ok(())
}

/// Datasets under `dir`: itself when it holds a manifest, else its
/// immediate subdirectories that do, sorted by name.
pub fn find_datasets(dir: &Path) -> CliResult<Vec<PathBuf>> {
    if dir.join(MANIFEST_FILE).is_file() {
        return Ok(vec![dir.to_path_buf()]);
    }
    let entries = fs::read_dir(dir).map_err(|e| io_error(dir, e))?;
    let mut found: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join(MANIFEST_FILE).is_file())
        .collect();
    found.sort();
    if found.is_empty() {
        return Err(CliError::usage(format!("{}: no {MANIFEST_FILE} found", dir.display())));
    }
    Ok(found)
}

#[derive(Serialize)]
struct StatsReport {
    provenance: ReportProvenance,
    subsets: Vec<DatasetStats>,
    total: usize,
}

fn stats_cmd(args: &StatsArgs) -> CliResult<()> {
    let dirs = find_datasets(&args.dataset)?;
    let mut all = Vec::new();
    for dir in &dirs {
        let stats = DatasetManifest::load(dir)?.stats();
        print_stats(&stats);
        all.push(stats);
    }
    let total: usize = all.iter().map(|s| s.total).sum();
    if all.len() > 1 {
        println!("total {total} across {} subsets", all.len());
    }
    if let Some(path) = &args.report {
        let report = StatsReport {
            provenance: ReportProvenance::new("dataset stats", args, None),
            subsets: all,
            total,
        };
        write_json(path, &report)?;
    }
    Ok(())
}

fn import_cmd(args: &ImportArgs) -> CliResult<()> {
    let manifests = import_release(&args.release, &args.out)?;
    let mut total = 0;
    for m in &manifests {
        print_stats(&m.stats());
        total += m.entries.len();
    }
    println!("total {total} across {} subsets", manifests.len());
    Ok(())
}

pub fn write_json(path: &Path, value: &impl Serialize) -> CliResult<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| io_error(parent, e))?;
    }
    let mut text = serde_json::to_string_pretty(value).expect("reports serialize");
    text.push('\n');
    fs::write(path, text).map_err(|e| io_error(path, e))
}

pub fn print_stats(stats: &DatasetStats) {
    let class = |l: ActivityLabel| stats.per_class[l.index()];
    println!(
        "{:<14} total {:>5}   no-presence {:>5}   walking {:>5}   arm-waving {:>5}",
        stats.subset_name,
        stats.total,
        class(ActivityLabel::NoPresence),
        class(ActivityLabel::Walking),
        class(ActivityLabel::WalkingArmWaving)
    );
    if stats.unassigned < stats.total {
        let split = |s: Split| stats.per_split.get(&s).copied().unwrap_or(0);
        println!(
            "{:<14} train {:>5}   val {:>5}   test {:>5}   unassigned {:>5}",
            "",
            split(Split::Train),
            split(Split::Val),
            split(Split::Test),
            stats.unassigned
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ratios_parse() {
        assert_eq!(parse_ratio("8:1:1").unwrap().0, [8, 1, 1]);
        assert_eq!(parse_ratio(" 7 : 2 : 1").unwrap().0, [7, 2, 1]);
        for bad in ["8:1", "a:b:c", "0:0:0", "8:1:1:1"] {
            assert!(parse_ratio(bad).is_err(), "{bad}");
        }
    }
}
