use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader};
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};
use std::time::{Duration, Instant};

use wallhack_core::dataset::{
    build_dataset, split, AnnotationInterval, DatasetManifest, PipelineParams, SessionInput, SplitRatio,
};
use wallhack_core::linksim::{recording_protocol, ScenarioConfig, PRESET_NAMES};

fn wallhack(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_wallhack"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("spawn wallhack")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = wallhack(dir, args);
    assert!(
        out.status.success(),
        "wallhack {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(dir: &Path, args: &[&str]) -> i32 {
    wallhack(dir, args).status.code().expect("exit code")
}

/// Every file below `root`, keyed by relative path.
fn tree(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<PathBuf, Vec<u8>>) {
        for entry in fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                walk(root, &path, out);
            } else {
                out.insert(path.strip_prefix(root).unwrap().to_path_buf(), fs::read(&path).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(root, root, &mut out);
    out
}

#[test]
fn four_second_pipe_yields_one_window() {
    let dir = tempfile::tempdir().unwrap();
    let mut sim = Command::new(env!("CARGO_BIN_EXE_wallhack"))
        .args(["simulate", "--duration", "4", "--seed", "1"])
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    let status = Command::new(env!("CARGO_BIN_EXE_wallhack"))
        .current_dir(dir.path())
        .args(["preprocess", "-", "--out", "pp"])
        .stdin(sim.stdout.take().unwrap())
        .stdout(Stdio::null())
        .status()
        .unwrap();
    assert!(sim.wait().unwrap().success());
    assert!(status.success());
    let manifest = DatasetManifest::load(&dir.path().join("pp")).unwrap();
    assert_eq!(manifest.entries.len(), 1);
    assert_eq!(manifest.stats().total, 1);
}

#[test]
fn exit_codes_follow_error_class() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(code(d, &["--help"]), 0);
    assert_eq!(code(d, &["--version"]), 0);
    assert_eq!(code(d, &["simulate", "--no-such-flag"]), 1);
    assert_eq!(code(d, &["preprocess", "missing.csi", "--label", "1", "--out", "x"]), 1);
    assert_eq!(code(d, &["survey", "--scenario", "no-such-preset"]), 1);
    assert_eq!(code(d, &["simulate", "--zone", "9"]), 1);

    fs::write(d.join("bad.csi"), "this is not a frame\n").unwrap();
    assert_eq!(code(d, &["preprocess", "bad.csi", "--label", "1", "--out", "y"]), 2);
    fs::write(d.join("anchors.txt"), "1.0 -33\n18 oops\n").unwrap();
    assert_eq!(
        code(d, &["calibrate", "--anchors", "anchors.txt", "--antenna", "biquad"]),
        2
    );

    ok(d, &["simulate", "--duration", "4", "--out", "s.csi"]);
    assert_eq!(code(d, &["preprocess", "s.csi", "--out", "ds"]), 0);
    assert_eq!(
        code(d, &["preprocess", "s.csi", "--out", "ds"]),
        1,
        "refuses to overwrite"
    );
    assert_eq!(
        code(d, &["train", "--dataset", "ds", "--out", "m"]),
        1,
        "unsplit dataset"
    );
}

#[test]
fn monitor_bind_failure_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let taken = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = taken.local_addr().unwrap().to_string();
    let out = wallhack(
        dir.path(),
        &["monitor", "serve", "--bind", &addr, "--simulate", "nlos-biquad"],
    );
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains(&addr));
}

#[test]
fn monitor_serves_until_killed() {
    let dir = tempfile::tempdir().unwrap();
    let mut child = Command::new(env!("CARGO_BIN_EXE_wallhack"))
        .current_dir(dir.path())
        .args([
            "monitor",
            "serve",
            "--bind",
            "127.0.0.1:0",
            "--simulate",
            "nlos-biquad",
            "--sim-rssi",
            "-42",
        ])
        .stdout(Stdio::piped())
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    let mut first = String::new();
    BufReader::new(child.stdout.take().unwrap())
        .read_line(&mut first)
        .unwrap();
    assert!(first.starts_with("serving http://127.0.0.1:"), "{first}");
    let started = Instant::now();
    assert!(child.try_wait().unwrap().is_none());
    child.kill().unwrap();
    child.wait().unwrap();
    assert!(started.elapsed() < Duration::from_secs(5));
}

#[test]
fn survey_reports_eighteen_distances() {
    let dir = tempfile::tempdir().unwrap();
    ok(
        dir.path(),
        &[
            "survey",
            "--scenario",
            "nlos-biquad",
            "--seed",
            "3",
            "--out",
            "curve.csv",
        ],
    );
    let text = fs::read_to_string(dir.path().join("curve.csv")).unwrap();
    assert!(text.starts_with("# generator: wallhack "));
    let rows: Vec<Vec<f64>> = text
        .lines()
        .filter(|l| !l.starts_with('#'))
        .skip(1)
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), 18);
    assert_eq!(rows[0][0], 1.0);
    assert_eq!(rows[17][0], 18.0);
    assert!((rows[0][1] + 33.0).abs() <= 1.0, "{:?}", rows[0]);
    assert!((rows[17][1] + 68.0).abs() <= 1.0, "{:?}", rows[17]);
}

#[test]
fn shipped_scenario_files_match_presets() {
    let configs = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    for name in PRESET_NAMES {
        let path = configs.join(format!("{name}.toml"));
        let file = ScenarioConfig::load(&path).unwrap();
        assert_eq!(file, ScenarioConfig::preset(name).unwrap(), "{}", path.display());
    }
}

/// `simulate --protocol`, `dataset build` and `dataset split` chained through
/// files give the same windows as composing the library directly.
#[test]
fn chained_commands_match_library_composition() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["simulate", "--protocol", "sessions", "--seed", "1"]);
    ok(d, &["dataset", "build", "sessions", "--out", "ds"]);
    ok(d, &["dataset", "split", "--dataset", "ds", "--seed", "1"]);
    let cli = DatasetManifest::load(&d.join("ds")).unwrap();

    let cfg = ScenarioConfig::preset("nlos-biquad").unwrap();
    let sessions: Vec<SessionInput> = recording_protocol(&cfg, 1)
        .iter()
        .map(|s| {
            let frames = s.synthesize(&cfg).unwrap();
            SessionInput {
                intervals: vec![AnnotationInterval::covering(&frames, s.label).unwrap()],
                frames,
                meta: s.meta.clone(),
                source: None,
            }
        })
        .collect();
    let lib_dir = d.join("lib");
    let lib = build_dataset(&sessions, &PipelineParams::default(), "dataset", &lib_dir).unwrap();
    let lib = split(&lib, SplitRatio::default(), 1).unwrap();

    assert_eq!(cli.entries.len(), 375);
    assert_eq!(cli.entries, lib.entries);
    assert_eq!(cli.preprocessing, lib.preprocessing);
    for (a, b) in cli.sessions.iter().zip(&lib.sessions) {
        assert_eq!((&a.meta, &a.intervals, a.frames), (&b.meta, &b.intervals, b.frames));
    }
    for e in &cli.entries {
        assert_eq!(
            fs::read(d.join("ds").join(&e.file)).unwrap(),
            fs::read(lib_dir.join(&e.file)).unwrap(),
            "{}",
            e.file
        );
    }
}

#[test]
fn artifacts_are_byte_identical_across_runs() {
    let run = |root: &Path| {
        ok(
            root,
            &[
                "simulate",
                "--protocol",
                "sessions",
                "--seed",
                "7",
                "--scenario",
                "nlos-pifa-plane",
            ],
        );
        ok(root, &["dataset", "build", "sessions", "--out", "ds"]);
        ok(root, &["dataset", "split", "--dataset", "ds", "--seed", "7"]);
        ok(root, &["survey", "--seed", "7", "--out", "survey.csv"]);
        ok(
            root,
            &[
                "train",
                "--dataset",
                "ds",
                "--out",
                "model",
                "--epochs",
                "1",
                "--seed",
                "7",
            ],
        );
        ok(
            root,
            &[
                "eval",
                "--dataset",
                "ds",
                "--model",
                "model/model.whnn",
                "--report",
                "eval.json",
            ],
        );
    };
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    run(a.path());
    run(b.path());
    let (ta, tb) = (tree(a.path()), tree(b.path()));
    assert_eq!(ta.keys().collect::<Vec<_>>(), tb.keys().collect::<Vec<_>>());
    for (path, bytes) in &ta {
        assert!(bytes == &tb[path], "{} differs", path.display());
    }
    assert!(ta.contains_key(Path::new("model/history.csv")));
}

#[test]
fn runs_aggregates_consecutive_seeds() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["simulate", "--protocol", "sessions", "--seed", "2"]);
    ok(d, &["dataset", "build", "sessions", "--out", "ds"]);
    ok(d, &["dataset", "split", "--dataset", "ds", "--seed", "2"]);
    let stdout = ok(
        d,
        &[
            "runs",
            "--dataset",
            "ds",
            "--runs",
            "2",
            "--epochs",
            "1",
            "--seed",
            "5",
            "--out",
            "runs",
        ],
    );
    assert!(stdout.contains("mean±std"), "{stdout}");
    let report: serde_json::Value = serde_json::from_slice(&fs::read(d.join("runs/runs.json")).unwrap()).unwrap();
    let seeds: Vec<u64> = report["runs"]
        .as_array()
        .unwrap()
        .iter()
        .map(|r| r["seed"].as_u64().unwrap())
        .collect();
    assert_eq!(seeds, [5, 6]);
    assert_eq!(report["provenance"]["generator"], "wallhack 0.1.0");
    assert!(report["summary"]["accuracy"].as_str().unwrap().contains('±'));
    assert!(d.join("runs/run-01/model.whnn").is_file());
}

#[test]
fn ingest_file_round_trips_session() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["simulate", "--duration", "5", "--seed", "4", "--out", "a.csi"]);
    ok(d, &["ingest", "--file", "a.csi", "--out", "b.csi"]);
    let frames = |p: &str| -> Vec<String> {
        fs::read_to_string(d.join(p))
            .unwrap()
            .lines()
            .filter(|l| !l.starts_with('#'))
            .map(String::from)
            .collect()
    };
    assert_eq!(frames("a.csi"), frames("b.csi"));
    assert_eq!(frames("a.csi").len(), 500);
    let b = fs::read_to_string(d.join("b.csi")).unwrap();
    assert!(b.contains("# session: {"), "session header carried over");
}
