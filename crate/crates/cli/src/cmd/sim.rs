use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{self, BufWriter};
use std::path::{Path, PathBuf};

use clap::Args;
use serde::Serialize;
use wallhack_core::csi::{ActivityLabel, SessionMeta};
use wallhack_core::dataset::{intervals_to_json, AnnotationInterval};
use wallhack_core::ingest::{meta_comment, write_session};
use wallhack_core::linksim::{
    calibrate, recording_protocol, survey, ActivityModel, Anchor, FreeParams, ScenarioConfig, SurveyPoint,
};

use crate::error::{io_error, CliError, CliResult};
use crate::provenance::{comment_block, header};
use crate::session::{label_comment, parse_antenna, parse_label, parse_scenario};

#[derive(Debug, Args, Serialize)]
pub struct SimulateArgs {
    /// Preset name or scenario TOML file.
    #[arg(long, default_value = "nlos-biquad")]
    pub scenario: String,
    /// Activity label 0 (no presence), 1 (walking) or 2 (walking + arm-waving).
    #[arg(long, default_value = "1", value_parser = parse_label, conflicts_with = "protocol")]
    pub label: ActivityLabel,
    /// Activity zone 1..=5; omitted for a session without zone.
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=5), conflicts_with = "protocol")]
    pub zone: Option<u8>,
    /// Session length in seconds.
    #[arg(long, default_value_t = 120.0, conflicts_with = "protocol")]
    pub duration: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Timestamp of the first frame, microseconds since the Unix epoch.
    #[arg(long, default_value_t = 0, conflicts_with = "protocol")]
    pub start_us: u64,
    /// Session file to write; standard output when omitted.
    #[arg(long, conflicts_with = "protocol")]
    #[serde(skip)]
    pub out: Option<PathBuf>,
    /// Also write the session's annotation interval here.
    #[arg(long, conflicts_with = "protocol")]
    #[serde(skip)]
    pub intervals: Option<PathBuf>,
    /// Write the whole recording protocol (11 sessions with interval files)
    /// into this directory instead of a single session.
    #[arg(long)]
    #[serde(skip)]
    pub protocol: Option<PathBuf>,
}

fn write_file(path: &Path, contents: &[u8]) -> CliResult<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| io_error(parent, e))?;
    }
    fs::write(path, contents).map_err(|e| io_error(path, e))
}

fn write_session_file(path: &Path, header: &[String], frames: &[wallhack_core::csi::CsiFrame]) -> CliResult<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| io_error(parent, e))?;
    }
    let file = File::create(path).map_err(|e| io_error(path, e))?;
    write_session(BufWriter::new(file), header, frames).map_err(|e| io_error(path, e))
}

pub fn simulate(args: &SimulateArgs) -> CliResult<()> {
    let cfg = ScenarioConfig::resolve(&args.scenario)?;
    let base = header("simulate", args, Some(args.seed));
    if let Some(dir) = &args.protocol {
        return simulate_protocol(&cfg, &base, args.seed, dir);
    }
    if !(args.duration.is_finite() && args.duration > 0.0) {
        return Err(CliError::usage(format!(
            "duration must be positive, got {}",
            args.duration
        )));
    }
    let meta = match args.zone {
        Some(z) => SessionMeta::in_zone(cfg.scenario, cfg.antenna, z, args.start_us)
            .map_err(|e| CliError::usage(e.to_string()))?,
        None => SessionMeta::without_zone(cfg.scenario, cfg.antenna, cfg.link_distance_m, args.start_us),
    };
    let activity = ActivityModel::for_label(args.label);
    let frames: Vec<_> = wallhack_core::linksim::FrameSynthesizer::new(&cfg, &activity, args.zone, args.seed)?
        .with_start_time(args.start_us)
        .with_duration(args.duration)?
        .collect();
    let mut lines = base;
    lines.push(meta_comment(&meta));
    lines.push(label_comment(args.label));
    match &args.out {
        Some(path) => write_session_file(path, &lines, &frames)?,
        None => {
            let stdout = io::stdout();
            write_session(BufWriter::new(stdout.lock()), &lines, &frames)
                .or_else(|e| {
                    if e.kind() == io::ErrorKind::BrokenPipe {
                        Ok(())
                    } else {
                        Err(e)
                    }
                })
                .map_err(|e| CliError::internal(format!("stdout: {e}")))?;
        }
    }
    if let Some(path) = &args.intervals {
        let interval = AnnotationInterval::covering(&frames, args.label).expect("positive duration");
        write_file(path, intervals_to_json(&[interval]).as_bytes())?;
    }
    if let Some(path) = &args.out {
        println!(
            "{} frames ({} s, {}) -> {}",
            frames.len(),
            args.duration,
            args.label,
            path.display()
        );
    }
    Ok(())
}

fn simulate_protocol(cfg: &ScenarioConfig, base: &[String], seed: u64, dir: &Path) -> CliResult<()> {
    let sessions = recording_protocol(cfg, seed);
    fs::create_dir_all(dir).map_err(|e| io_error(dir, e))?;
    println!(
        "{:<16} {:<22} {:>4} {:>8} {:>7}",
        "session", "label", "zone", "frames", "seed"
    );
    for (k, s) in sessions.iter().enumerate() {
        let frames = s.synthesize(cfg)?;
        let name = format!("session-{:02}", k + 1);
        let mut lines = base.to_vec();
        lines.push(meta_comment(&s.meta));
        lines.push(label_comment(s.label));
        write_session_file(&dir.join(format!("{name}.csi")), &lines, &frames)?;
        let interval = AnnotationInterval::covering(&frames, s.label).expect("sessions are non-empty");
        write_file(
            &dir.join(format!("{name}.intervals.json")),
            intervals_to_json(&[interval]).as_bytes(),
        )?;
        let zone = s.meta.zone_index.map_or("-".to_string(), |z| z.to_string());
        println!(
            "{:<16} {:<22} {:>4} {:>8} {:>7}",
            name,
            s.label.name(),
            zone,
            frames.len(),
            s.seed
        );
    }
    Ok(())
}

#[derive(Debug, Args, Serialize)]
pub struct SurveyArgs {
    /// Preset name or scenario TOML file.
    #[arg(long, default_value = "nlos-biquad")]
    pub scenario: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Override the shadowing standard deviation (dB); 0 gives the mean curve.
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Write the curve as plot-ready CSV.
    #[arg(long)]
    #[serde(skip)]
    pub out: Option<PathBuf>,
}

pub fn survey_curve_csv(points: &[SurveyPoint], header_lines: &[String]) -> String {
    let mut out = comment_block(header_lines);
    out.push_str("distance_m,mean_dbm,std_db,min_dbm,max_dbm,frames\n");
    for p in points {
        let _ = writeln!(
            out,
            "{:.1},{:.3},{:.3},{},{},{}",
            p.distance_m, p.rssi.mean_dbm, p.rssi.std_dbm, p.rssi.min_dbm, p.rssi.max_dbm, p.rssi.n
        );
    }
    out
}

pub fn survey_cmd(args: &SurveyArgs) -> CliResult<()> {
    let mut cfg = ScenarioConfig::resolve(&args.scenario)?;
    if let Some(sigma) = args.sigma {
        cfg.shadowing_sigma_db = sigma;
        cfg.validate()?;
    }
    let points = survey(&cfg, args.seed);
    println!(
        "{:>10} {:>10} {:>8} {:>5} {:>5}",
        "distance_m", "mean_dbm", "std_db", "min", "max"
    );
    for p in &points {
        println!(
            "{:>10.1} {:>10.2} {:>8.2} {:>5} {:>5}",
            p.distance_m, p.rssi.mean_dbm, p.rssi.std_dbm, p.rssi.min_dbm, p.rssi.max_dbm
        );
    }
    let (first, last) = (points[0].rssi.mean_dbm, points[points.len() - 1].rssi.mean_dbm);
    println!(
        "drop {:.2} dB over {:.0} m ({})",
        first - last,
        points[points.len() - 1].distance_m - points[0].distance_m,
        cfg.name
    );
    if let Some(path) = &args.out {
        write_file(
            path,
            survey_curve_csv(&points, &header("survey", args, Some(args.seed))).as_bytes(),
        )?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum FreeSet {
    /// Fit per-wall loss and reference loss; the path-loss exponent stays fixed.
    WallRef,
    /// Fit exponent, per-wall loss and reference loss.
    All,
}

#[derive(Debug, Args, Serialize)]
pub struct CalibrateArgs {
    /// Anchor file: one `distance_m rssi_dbm` pair per line (comma or
    /// whitespace separated, `#` comments).
    #[arg(long)]
    pub anchors: PathBuf,
    /// Antenna system of the template: biquad, pifa-plane or pifa.
    #[arg(long, value_parser = parse_antenna)]
    pub antenna: wallhack_core::csi::AntennaKind,
    /// Scenario of the template: los or nlos.
    #[arg(long, default_value = "nlos", value_parser = parse_scenario)]
    pub scenario: wallhack_core::csi::Scenario,
    /// Parameters left free in the fit.
    #[arg(long, value_enum, default_value_t = FreeSet::WallRef)]
    pub free: FreeSet,
    /// Name recorded in the fitted config.
    #[arg(long)]
    pub name: Option<String>,
    /// Write the fitted scenario config (TOML) here.
    #[arg(long)]
    #[serde(skip)]
    pub out: Option<PathBuf>,
}

pub fn parse_anchors(text: &str, path: &Path) -> CliResult<Vec<Anchor>> {
    let mut anchors = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|f| !f.is_empty())
            .collect();
        let bad = || {
            CliError::data(format!(
                "{}:{}: expected `distance_m rssi_dbm`, got {line:?}",
                path.display(),
                n + 1
            ))
        };
        let [d, r] = fields.as_slice() else {
            return Err(bad());
        };
        let (d, r): (f64, f64) = (d.parse().map_err(|_| bad())?, r.parse().map_err(|_| bad())?);
        if !(d.is_finite() && r.is_finite()) {
            return Err(bad());
        }
        anchors.push(Anchor::new(d, r));
    }
    Ok(anchors)
}

pub fn calibrate_cmd(args: &CalibrateArgs) -> CliResult<()> {
    let text = fs::read_to_string(&args.anchors).map_err(|e| io_error(&args.anchors, e))?;
    let anchors = parse_anchors(&text, &args.anchors)?;
    let mut template = ScenarioConfig::template(args.scenario, args.antenna);
    if let Some(name) = &args.name {
        template.name = name.clone();
    }
    let free = match args.free {
        FreeSet::WallRef => FreeParams::WALL_AND_REFERENCE,
        FreeSet::All => FreeParams::ALL,
    };
    let fit = calibrate(&anchors, &template, free)?;
    let cfg = &fit.config;
    println!("{:<22} {:>10}", "parameter", "value");
    println!("{:<22} {:>10.4}", "path_loss_exponent", cfg.path_loss_exponent);
    println!("{:<22} {:>10.4}", "per_wall_loss_db", cfg.walls.per_wall_loss_db);
    println!("{:<22} {:>10.4}", "reference_loss_db", cfg.reference_loss_db);
    println!("{:<22} {:>10.4}", "residual_rms_db", fit.residual_rms_db);
    println!();
    println!("{:>10} {:>10} {:>10}", "distance_m", "anchor", "model");
    for a in &anchors {
        let model = wallhack_core::linksim::link_budget_dbm(cfg, a.distance_m);
        println!("{:>10.2} {:>10.2} {:>10.2}", a.distance_m, a.rssi_dbm, model);
    }
    if let Some(path) = &args.out {
        let mut text = comment_block(&header("calibrate", args, None));
        text.push_str(&cfg.to_toml());
        write_file(path, text.as_bytes())?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn anchor_files_parse() {
        let anchors = parse_anchors("# d rssi\n1, -33\n\n18\t-68\n", Path::new("a")).unwrap();
        assert_eq!(anchors, vec![Anchor::new(1.0, -33.0), Anchor::new(18.0, -68.0)]);
        for bad in ["1", "1 2 3", "x -3", "1 NaN"] {
            let err = parse_anchors(bad, Path::new("a")).unwrap_err();
            assert_eq!(err.code(), 2, "{bad}");
        }
    }

    #[test]
    fn survey_csv_layout() {
        let cfg = ScenarioConfig::preset("nlos-biquad").unwrap();
        let points = survey(&cfg, 1);
        let text = survey_curve_csv(&points, &["generator: x".to_string()]);
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "# generator: x");
        assert_eq!(lines[1], "distance_m,mean_dbm,std_db,min_dbm,max_dbm,frames");
        assert_eq!(lines.len(), 2 + 18);
    }
}
