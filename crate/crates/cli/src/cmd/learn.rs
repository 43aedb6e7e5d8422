use std::fs;
use std::path::{Path, PathBuf};

use clap::Args;
use serde::Serialize;
use wallhack_core::dataset::{DatasetManifest, Split};
use wallhack_core::dsp::SpectrogramWindow;
use wallhack_core::model::{
    aggregate_runs, evaluate, history_csv, load_checkpoint, save_checkpoint, train, Aggregate, EpochRecord, RunMetrics,
    TrainConfig, ARCHITECTURE,
};

use crate::cmd::data::write_json;
use crate::error::{io_error, CliError, CliResult};
use crate::provenance::ReportProvenance;

pub const MODEL_FILE: &str = "model.whnn";
pub const HISTORY_FILE: &str = "history.csv";

#[derive(Debug, Clone, Args, Serialize)]
pub struct TrainArgs {
    #[arg(long, default_value_t = 50)]
    pub epochs: usize,
    #[arg(long = "lr", default_value_t = 1e-4)]
    pub learning_rate: f64,
    #[arg(long, default_value_t = 16)]
    pub batch_size: usize,
    /// Disable random circular time shifts of training windows.
    #[arg(long)]
    pub no_augment: bool,
}

impl TrainArgs {
    fn config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            epochs: self.epochs,
            augment: !self.no_augment,
            seed,
            ..TrainConfig::default()
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct TrainCmd {
    /// Split dataset directory.
    #[arg(long)]
    pub dataset: PathBuf,
    /// Directory for the checkpoint, history and report.
    #[serde(skip)]
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub train: TrainArgs,
}

#[derive(Debug, Args, Serialize)]
pub struct EvalCmd {
    #[arg(long)]
    pub dataset: PathBuf,
    /// Checkpoint file.
    #[arg(long)]
    pub model: PathBuf,
    /// Split to score: train, val or test.
    #[arg(long, default_value = "test", value_parser = parse_split)]
    pub split: Split,
    /// Also write the metrics as JSON.
    #[serde(skip)]
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct RunsCmd {
    #[arg(long)]
    pub dataset: PathBuf,
    /// Number of independent runs; run `i` uses seed `seed + i`.
    #[arg(long, default_value_t = 3)]
    pub runs: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[serde(skip)]
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub train: TrainArgs,
}

fn parse_split(s: &str) -> Result<Split, String> {
    match s {
        "train" => Ok(Split::Train),
        "val" => Ok(Split::Val),
        "test" => Ok(Split::Test),
        _ => Err(format!("split must be train, val or test, got {s:?}")),
    }
}

struct Splits {
    train: Vec<SpectrogramWindow>,
    val: Vec<SpectrogramWindow>,
    test: Vec<SpectrogramWindow>,
}

fn load_splits(dir: &Path) -> CliResult<Splits> {
    let manifest = DatasetManifest::load(dir)?;
    if manifest.split.is_none() {
        return Err(CliError::usage(format!(
            "{}: dataset has no split; run `dataset split` first",
            dir.display()
        )));
    }
    Ok(Splits {
        train: manifest.load_split(dir, Split::Train)?,
        val: manifest.load_split(dir, Split::Val)?,
        test: manifest.load_split(dir, Split::Test)?,
    })
}

#[derive(Serialize)]
struct TrainReport<'a> {
    provenance: ReportProvenance,
    architecture: &'static str,
    config: &'a TrainConfig,
    train_windows: usize,
    val_windows: usize,
    best_epoch: usize,
    history: &'a [EpochRecord],
}

fn create_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| io_error(dir, e))
}

fn print_history(history: &[EpochRecord], best_epoch: usize) {
    println!("{:>5} {:>10} {:>8} {:>9}", "epoch", "train_loss", "val_acc", "val_loss");
    for r in history {
        let mark = if r.epoch == best_epoch { " *" } else { "" };
        println!(
            "{:>5} {:>10.4} {:>7.1}% {:>9.4}{mark}",
            r.epoch,
            r.train_loss,
            100.0 * r.val_acc,
            r.val_loss
        );
    }
}

/// Trains one model and writes checkpoint plus history under `out`.
fn train_into(
    splits: &Splits,
    cfg: &TrainConfig,
    out: &Path,
    provenance: ReportProvenance,
) -> CliResult<(wallhack_core::model::ModelParams, usize)> {
    let outcome = train(&splits.train, &splits.val, cfg)?;
    create_dir(out)?;
    save_checkpoint(&outcome.params, &out.join(MODEL_FILE))?;
    let history_path = out.join(HISTORY_FILE);
    fs::write(&history_path, history_csv(&outcome.history, cfg)).map_err(|e| io_error(&history_path, e))?;
    write_json(
        &out.join("train.json"),
        &TrainReport {
            provenance,
            architecture: ARCHITECTURE,
            config: cfg,
            train_windows: splits.train.len(),
            val_windows: splits.val.len(),
            best_epoch: outcome.best_epoch,
            history: &outcome.history,
        },
    )?;
    print_history(&outcome.history, outcome.best_epoch);
    Ok((outcome.params, outcome.best_epoch))
}

pub fn train_cmd(args: &TrainCmd) -> CliResult<()> {
    let splits = load_splits(&args.dataset)?;
    let cfg = args.train.config(args.seed);
    let provenance = ReportProvenance::new("train", args, Some(args.seed));
    let (_, best) = train_into(&splits, &cfg, &args.out, provenance)?;
    println!("best epoch {best}; checkpoint {}", args.out.join(MODEL_FILE).display());
    Ok(())
}

pub fn print_metrics(m: &RunMetrics) {
    println!(
        "precision {:.1}%  recall {:.1}%  f1 {:.1}%  accuracy {:.1}%",
        m.precision, m.recall, m.f1, m.accuracy
    );
    println!("confusion (rows true, columns predicted; 0 1 2)");
    for (k, row) in m.confusion.iter().enumerate() {
        println!("  {k}: {:>5} {:>5} {:>5}", row[0], row[1], row[2]);
    }
}

#[derive(Serialize)]
struct EvalReport<'a> {
    provenance: ReportProvenance,
    split: Split,
    windows: usize,
    metrics: &'a RunMetrics,
}

pub fn eval_cmd(args: &EvalCmd) -> CliResult<()> {
    let manifest = DatasetManifest::load(&args.dataset)?;
    let windows = manifest.load_split(&args.dataset, args.split)?;
    if windows.is_empty() {
        return Err(CliError::usage(format!(
            "{}: no windows in the {:?} split",
            args.dataset.display(),
            args.split
        )));
    }
    let params = load_checkpoint(&args.model)?;
    let metrics = evaluate(&params, &windows)?;
    println!("{} windows", windows.len());
    print_metrics(&metrics);
    if let Some(path) = &args.report {
        write_json(
            path,
            &EvalReport {
                provenance: ReportProvenance::new("eval", args, None),
                split: args.split,
                windows: windows.len(),
                metrics: &metrics,
            },
        )?;
    }
    Ok(())
}

#[derive(Serialize)]
struct RunRecord {
    run: usize,
    seed: u64,
    best_epoch: usize,
    metrics: RunMetrics,
}

#[derive(Serialize)]
struct RunsReport {
    provenance: ReportProvenance,
    test_windows: usize,
    runs: Vec<RunRecord>,
    aggregate: Aggregate,
    /// `mean±std` strings, one decimal.
    summary: SummaryStrings,
}

#[derive(Serialize)]
struct SummaryStrings {
    precision: String,
    recall: String,
    f1: String,
    accuracy: String,
}

pub fn runs_cmd(args: &RunsCmd) -> CliResult<()> {
    if args.runs < 2 {
        return Err(CliError::usage("aggregation needs at least 2 runs"));
    }
    let splits = load_splits(&args.dataset)?;
    if splits.test.is_empty() {
        return Err(CliError::data("test split is empty"));
    }
    let mut records = Vec::with_capacity(args.runs);
    for run in 0..args.runs {
        let seed = args.seed.wrapping_add(run as u64);
        let cfg = args.train.config(seed);
        println!("run {run} (seed {seed})");
        let dir = args.out.join(format!("run-{run:02}"));
        let (params, best_epoch) = train_into(&splits, &cfg, &dir, ReportProvenance::new("runs", args, Some(seed)))?;
        let metrics = evaluate(&params, &splits.test)?;
        print_metrics(&metrics);
        records.push(RunRecord {
            run,
            seed,
            best_epoch,
            metrics,
        });
    }
    let metrics: Vec<RunMetrics> = records.iter().map(|r| r.metrics.clone()).collect();
    let aggregate = aggregate_runs(&metrics)?;
    println!();
    println!(
        "{:>4} {:>6} {:>10} {:>10} {:>10} {:>10}",
        "run", "seed", "precision", "recall", "f1", "accuracy"
    );
    for r in &records {
        println!(
            "{:>4} {:>6} {:>10.1} {:>10.1} {:>10.1} {:>10.1}",
            r.run, r.seed, r.metrics.precision, r.metrics.recall, r.metrics.f1, r.metrics.accuracy
        );
    }
    println!(
        "{:>11} {:>10} {:>10} {:>10} {:>10}",
        "mean±std",
        aggregate.precision.to_string(),
        aggregate.recall.to_string(),
        aggregate.f1.to_string(),
        aggregate.accuracy.to_string()
    );
    let report = RunsReport {
        provenance: ReportProvenance::new("runs", args, Some(args.seed)),
        test_windows: splits.test.len(),
        runs: records,
        summary: SummaryStrings {
            precision: aggregate.precision.to_string(),
            recall: aggregate.recall.to_string(),
            f1: aggregate.f1.to_string(),
            accuracy: aggregate.accuracy.to_string(),
        },
        aggregate,
    };
    write_json(&args.out.join("runs.json"), &report)?;
    Ok(())
}
