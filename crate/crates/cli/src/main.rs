//! Command-line front end: dataset synthesis, proposal generation, training,
//! inference, post-processing, evaluation, run planning and execution, and
//! report rendering. Every command reads deterministic text formats (JSON,
//! JSON Lines, CSV) and writes the same.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{ArgAction, Parser, Subcommand};
use serde::Deserialize;

use wstal_core::harness::{
    format_report, plan_runs, run_all, training_bags, HarnessConfig, PlanInput,
};
use wstal_core::io::{
    load_dataset, read_json, read_model, read_segment_rows, write_boxes_csv, write_json,
    write_model, write_segment_rows, ModelFile, SegmentRow,
};
use wstal_core::metrics::{evaluate_sequences_with, EvalItem, EvalReport, WardNorm};
use wstal_core::postprocess::{resolve_and_merge, temporal_nms, NmsConfig};
use wstal_core::proposals::{generate_proposals, ProposalConfig};
use wstal_core::synth::{gen_benchmark, SynthConfig};
use wstal_core::trainer::{infer, train_mil, InferConfig, InferMode, RskpConfig, TrainConfig};

#[derive(Parser)]
#[command(
    name = "wstal",
    version,
    about = "Weakly supervised temporal action localization on 1-D multi-channel streams"
)]
struct Cli {
    /// JSON config file for the subcommand.
    #[arg(long, global = true, value_name = "json")]
    config: Option<PathBuf>,
    /// Overrides the seed in the loaded config.
    #[arg(long, global = true, value_name = "int")]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, value_name = "dir", default_value = "out")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic benchmark dataset into the output directory.
    Synth,
    /// Emit candidate proposal boxes as CSV.
    Propose,
    /// Train a MIL model on a dataset and write it as JSON.
    Train,
    /// Run a trained model over a dataset and write predicted segments.
    Infer,
    /// Suppress and optionally merge a segment file.
    Postprocess {
        /// Segment JSON Lines file to clean up.
        input: PathBuf,
        /// Suppress overlaps at or above this tIoU.
        #[arg(long, default_value_t = 0.5)]
        iou_thresh: f64,
        /// Suppress only within the same class.
        #[arg(long, default_value_t = true, action = ArgAction::Set)]
        class_wise: bool,
        /// Also resolve cross-class overlaps and merge touching same-class
        /// segments.
        #[arg(long)]
        merge: bool,
    },
    /// Score predicted segments against ground truth.
    Eval {
        /// Ground-truth segment JSON Lines file.
        #[arg(long)]
        gt: PathBuf,
        /// Predicted segment JSON Lines file.
        #[arg(long)]
        pred: PathBuf,
        /// Sampling rate for frame metrics.
        #[arg(long)]
        fps: f64,
        /// tIoU thresholds for average precision.
        #[arg(long, value_delimiter = ',', default_values_t = vec![0.3, 0.4, 0.5, 0.6, 0.7])]
        thresholds: Vec<f64>,
        /// Misalignment denominator: sequence-duration or class-gt-duration.
        #[arg(long, default_value = "sequence-duration")]
        ward_norm: String,
    },
    /// Print the exact run accounting for a list of dataset descriptions.
    Plan,
    /// Execute every run in the configured grid against a dataset.
    Run,
    /// Render the aggregate CSV in the output directory as a text table.
    Report,
}

/// `synth` config: generator settings plus the benchmark shape.
#[derive(Deserialize)]
#[serde(default)]
struct SynthJob {
    subjects: usize,
    sequences_per_subject: usize,
    #[serde(flatten)]
    synth: SynthConfig,
}

impl Default for SynthJob {
    fn default() -> Self {
        SynthJob {
            subjects: 5,
            sequences_per_subject: 2,
            synth: SynthConfig::default(),
        }
    }
}

/// `train` config: dataset location, optional subject selection, and
/// trainer settings.
#[derive(Deserialize)]
struct TrainJob {
    dataset: PathBuf,
    /// Train only on these subjects (default: all).
    #[serde(default)]
    subjects: Option<Vec<String>>,
    /// Exclude this subject (leave-one-subject-out style).
    #[serde(default)]
    hold_out: Option<String>,
    /// Split sequences into half-overlapping clips of this many seconds;
    /// omit to use whole sequences as bags.
    #[serde(default)]
    clip_sec: Option<f64>,
    #[serde(flatten)]
    train: TrainConfig,
}

/// `infer` config: model and dataset locations plus inference settings.
#[derive(Deserialize)]
struct InferJob {
    model: PathBuf,
    dataset: PathBuf,
    /// Restrict inference to this subject (default: all sequences).
    #[serde(default)]
    subject: Option<String>,
    #[serde(default = "default_mode")]
    mode: InferMode,
    #[serde(default)]
    window_sec: Option<f64>,
    #[serde(default = "default_thresh")]
    thresh: f64,
    #[serde(default = "default_smooth")]
    smooth_win: usize,
    #[serde(default)]
    nms: NmsConfig,
    #[serde(default)]
    rskp: Option<RskpConfig>,
}

fn default_mode() -> InferMode {
    InferMode::Full
}

fn default_thresh() -> f64 {
    0.5
}

fn default_smooth() -> usize {
    1
}

/// `run` config: dataset name and location plus the full harness grid.
#[derive(Deserialize)]
struct RunJob {
    #[serde(default = "default_name")]
    name: String,
    dataset: PathBuf,
    /// Generate the dataset first from the harness synth settings.
    #[serde(default)]
    generate: bool,
    #[serde(flatten)]
    harness: HarnessConfig,
}

fn default_name() -> String {
    "dataset".to_string()
}

fn load_config<T: serde::de::DeserializeOwned>(cli: &Cli, command: &str) -> Result<T> {
    let path = cli
        .config
        .as_ref()
        .with_context(|| format!("{command} requires --config <json>"))?;
    read_json(path).with_context(|| format!("reading config {}", path.display()))
}

fn main() {
    if let Err(err) = dispatch(&Cli::parse()) {
        eprintln!("error: {err:#}");
        std::process::exit(1);
    }
}

fn dispatch(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Synth => cmd_synth(cli),
        Command::Propose => cmd_propose(cli),
        Command::Train => cmd_train(cli),
        Command::Infer => cmd_infer(cli),
        Command::Postprocess {
            input,
            iou_thresh,
            class_wise,
            merge,
        } => cmd_postprocess(cli, input, *iou_thresh, *class_wise, *merge),
        Command::Eval {
            gt,
            pred,
            fps,
            thresholds,
            ward_norm,
        } => cmd_eval(cli, gt, pred, *fps, thresholds, ward_norm),
        Command::Plan => cmd_plan(cli),
        Command::Run => cmd_run(cli),
        Command::Report => cmd_report(cli),
    }
}

fn cmd_synth(cli: &Cli) -> Result<()> {
    let mut job: SynthJob = load_config(cli, "synth")?;
    if let Some(seed) = cli.seed {
        job.synth.seed = seed;
    }
    gen_benchmark(
        &job.synth,
        job.subjects,
        job.sequences_per_subject,
        &cli.out,
    )?;
    println!(
        "wrote {} subjects x {} sequences to {}",
        job.subjects,
        job.sequences_per_subject,
        cli.out.display()
    );
    Ok(())
}

fn cmd_propose(cli: &Cli) -> Result<()> {
    let mut cfg: ProposalConfig = load_config(cli, "propose")?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    let set = generate_proposals(&cfg)?;
    let path = cli.out.join("proposals.csv");
    write_boxes_csv(&path, &set.boxes)?;
    println!(
        "wrote {} proposals ({} structured) to {}",
        set.len(),
        set.structured_count,
        path.display()
    );
    Ok(())
}

fn cmd_train(cli: &Cli) -> Result<()> {
    let mut job: TrainJob = load_config(cli, "train")?;
    if let Some(seed) = cli.seed {
        job.train.seed = seed;
    }
    let dataset = load_dataset(&job.dataset)?;
    let num_classes = dataset
        .records
        .iter()
        .map(|r| r.num_classes)
        .max()
        .context("train: dataset has no sequences")?;

    let mut subjects: BTreeSet<&str> = dataset
        .records
        .iter()
        .map(|r| r.subject_id.as_str())
        .collect();
    if let Some(keep) = &job.subjects {
        let keep: BTreeSet<&str> = keep.iter().map(|s| s.as_str()).collect();
        subjects.retain(|s| keep.contains(s));
    }
    if let Some(out) = &job.hold_out {
        subjects.remove(out.as_str());
    }
    if subjects.is_empty() {
        bail!("train: no training subjects left after filtering");
    }

    let (feats, bags) = training_bags(&dataset, &subjects, num_classes, job.clip_sec)?;
    let outcome = train_mil(&feats, &bags, &job.train)?;
    let path = cli.out.join("model.json");
    write_model(
        &path,
        &ModelFile {
            pooling: job.train.pooling,
            model: outcome.model,
        },
    )?;
    println!(
        "trained on {} bags for {} epochs (objective {:.6} -> {:.6}); wrote {}",
        bags.len(),
        job.train.epochs,
        outcome.epoch_losses.first().copied().unwrap_or(f64::NAN),
        outcome.epoch_losses.last().copied().unwrap_or(f64::NAN),
        path.display()
    );
    Ok(())
}

fn cmd_infer(cli: &Cli) -> Result<()> {
    let job: InferJob = load_config(cli, "infer")?;
    if matches!(job.mode, InferMode::Window) && job.window_sec.is_none() {
        bail!("infer: window mode requires window_sec");
    }
    let model = read_model(&job.model)?;
    let dataset = load_dataset(&job.dataset)?;

    let mut rows = Vec::new();
    let mut seen = 0usize;
    for record in &dataset.records {
        if let Some(subject) = &job.subject {
            if &record.subject_id != subject {
                continue;
            }
        }
        seen += 1;
        let cfg = InferConfig {
            mode: job.mode,
            window_len: job
                .window_sec
                .map(|w| (w * record.fps).round() as usize)
                .unwrap_or(0),
            thresh: job.thresh,
            smooth_win: job.smooth_win,
            fps: record.fps,
            nms: job.nms,
            rskp: job.rskp,
        };
        let preds = infer(&model.model, dataset.features[&record.sequence_id].view(), &cfg)?;
        rows.extend(
            preds
                .iter()
                .map(|s| SegmentRow::from_segment(&record.sequence_id, s)),
        );
    }
    if seen == 0 {
        bail!("infer: no sequences matched the subject filter");
    }
    let path = cli.out.join("predictions.jsonl");
    write_segment_rows(&path, &rows)?;
    println!(
        "wrote {} segments over {seen} sequences to {}",
        rows.len(),
        path.display()
    );
    Ok(())
}

fn cmd_postprocess(
    cli: &Cli,
    input: &Path,
    iou_thresh: f64,
    class_wise: bool,
    merge: bool,
) -> Result<()> {
    let rows = read_segment_rows(input)?;
    let cfg = NmsConfig {
        iou_thresh,
        class_wise,
    };
    let mut by_seq: BTreeMap<String, Vec<wstal_core::segment::Segment>> = BTreeMap::new();
    for row in &rows {
        by_seq
            .entry(row.sequence_id.clone())
            .or_default()
            .push(row.to_segment());
    }
    let mut out_rows = Vec::new();
    for (seq_id, segs) in &by_seq {
        let mut cleaned = temporal_nms(segs, &cfg)?;
        if merge {
            cleaned = resolve_and_merge(&cleaned)?;
        }
        out_rows.extend(cleaned.iter().map(|s| SegmentRow::from_segment(seq_id, s)));
    }
    let path = cli.out.join("postprocessed.jsonl");
    write_segment_rows(&path, &out_rows)?;
    println!(
        "kept {} of {} segments; wrote {}",
        out_rows.len(),
        rows.len(),
        path.display()
    );
    Ok(())
}

fn parse_ward_norm(s: &str) -> Result<WardNorm> {
    match s {
        "sequence-duration" => Ok(WardNorm::SequenceDuration),
        "class-gt-duration" => Ok(WardNorm::ClassGtDuration),
        other => bail!("unknown ward norm {other:?}; use sequence-duration or class-gt-duration"),
    }
}

fn print_report_row(report: &EvalReport) {
    let m = &report.misalignment;
    let cols = [
        ("P", report.macro_avg.precision),
        ("R", report.macro_avg.recall),
        ("F1", report.macro_avg.f1),
        ("UR", m.underfill),
        ("OR", m.overfill),
        ("DR", m.deletion),
        ("IR", m.insertion),
        ("FR", m.fragmentation),
        ("MR", m.merge),
        ("mAP", report.mean_ap),
    ];
    let header: Vec<String> = cols.iter().map(|(n, _)| format!("{n:>8}")).collect();
    let values: Vec<String> = cols.iter().map(|(_, v)| format!("{v:>8.3}")).collect();
    println!("{}", header.join(" "));
    println!("{}", values.join(" "));
}

fn cmd_eval(
    cli: &Cli,
    gt: &Path,
    pred: &Path,
    fps: f64,
    thresholds: &[f64],
    ward_norm: &str,
) -> Result<()> {
    let norm = parse_ward_norm(ward_norm)?;
    let gt_rows = read_segment_rows(gt)?;
    let pred_rows = read_segment_rows(pred)?;
    let mut gt_by_seq: BTreeMap<String, Vec<wstal_core::segment::Segment>> = BTreeMap::new();
    for row in &gt_rows {
        gt_by_seq
            .entry(row.sequence_id.clone())
            .or_default()
            .push(row.to_segment());
    }
    let mut pred_by_seq: BTreeMap<String, Vec<wstal_core::segment::Segment>> = BTreeMap::new();
    for row in &pred_rows {
        pred_by_seq
            .entry(row.sequence_id.clone())
            .or_default()
            .push(row.to_segment());
    }
    let ids: BTreeSet<&String> = gt_by_seq.keys().chain(pred_by_seq.keys()).collect();
    let items: Vec<EvalItem> = ids
        .iter()
        .map(|id| {
            let gt = gt_by_seq.get(*id).cloned().unwrap_or_default();
            let pred = pred_by_seq.get(*id).cloned().unwrap_or_default();
            // Sequence length is not stored in segment files; span the
            // latest annotation.
            let duration = gt
                .iter()
                .chain(&pred)
                .map(|s| s.end)
                .fold(0.0f64, f64::max);
            EvalItem {
                gt,
                pred,
                fps,
                duration,
            }
        })
        .collect();
    let report = evaluate_sequences_with(&items, thresholds, norm)?;
    let path = cli.out.join("eval.json");
    write_json(&path, &report)?;
    print_report_row(&report);
    println!("wrote {}", path.display());
    Ok(())
}

fn cmd_plan(cli: &Cli) -> Result<()> {
    let inputs: Vec<PlanInput> = load_config(cli, "plan")?;
    let plan = plan_runs(&inputs)?;
    let path = cli.out.join("plan.json");
    write_json(&path, &plan)?;
    let width = plan
        .rows
        .iter()
        .map(|r| r.dataset.len())
        .max()
        .unwrap_or(7)
        .max(7);
    println!(
        "{:width$} {:>6} {:>9} {:>7} {:>7}",
        "dataset", "seeds", "subjects", "models", "runs"
    );
    for row in &plan.rows {
        println!(
            "{:width$} {:>6} {:>9} {:>7} {:>7}",
            row.dataset, row.seeds, row.subjects, row.models, row.runs
        );
    }
    println!("{:width$} {:>6} {:>9} {:>7} {:>7}", "total", "", "", "", plan.total);
    println!("wrote {}", path.display());
    Ok(())
}

fn cmd_run(cli: &Cli) -> Result<()> {
    let mut job: RunJob = load_config(cli, "run")?;
    if let Some(seed) = cli.seed {
        job.harness.seeds = vec![seed];
    }
    if job.generate {
        gen_benchmark(
            &job.harness.synth,
            job.harness.subjects,
            job.harness.sequences_per_subject,
            &job.dataset,
        )?;
        println!("generated dataset at {}", job.dataset.display());
    }
    let results = run_all(&job.name, &job.dataset, &cli.out, &job.harness)?;
    println!(
        "completed {} runs; reports under {}",
        results.len(),
        cli.out.join("runs").display()
    );
    let rows = wstal_core::harness::read_aggregate(&cli.out.join("aggregate.csv"))?;
    println!("{}", format_report(&rows)?);
    Ok(())
}

fn cmd_report(cli: &Cli) -> Result<()> {
    let rows = wstal_core::harness::read_aggregate(&cli.out.join("aggregate.csv"))?;
    println!("{}", format_report(&rows)?);
    Ok(())
}
