use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{
    load_dataset, write_json, write_segment_rows, Dataset, SegmentRow,
};
use crate::metrics::{evaluate_sequences_with, EvalItem, EvalReport, WardNorm};
use crate::postprocess::NmsConfig;
use crate::segment::{bag_label_of, BagLabel};
use crate::synth::SynthConfig;
use crate::trainer::{
    make_clips, train_mil, infer, InferConfig, InferMode, Pooling, RskpConfig, TrainConfig,
};

/// One dataset's worth of run accounting.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanInput {
    pub dataset: String,
    pub seeds: usize,
    pub subjects: usize,
    pub models: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanRow {
    pub dataset: String,
    pub seeds: usize,
    pub subjects: usize,
    pub models: usize,
    pub runs: usize,
}

/// Exact run accounting: per-dataset seeds x subjects x models plus a total.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BenchmarkPlan {
    pub rows: Vec<PlanRow>,
    pub total: usize,
}

pub fn plan_runs(inputs: &[PlanInput]) -> Result<BenchmarkPlan> {
    let mut rows = Vec::with_capacity(inputs.len());
    let mut total = 0usize;
    for input in inputs {
        if input.seeds == 0 || input.subjects == 0 || input.models == 0 {
            return Err(Error::invalid(format!(
                "plan: dataset {} has a zero count",
                input.dataset
            )));
        }
        let runs = input.seeds * input.subjects * input.models;
        total += runs;
        rows.push(PlanRow {
            dataset: input.dataset.clone(),
            seeds: input.seeds,
            subjects: input.subjects,
            models: input.models,
            runs,
        });
    }
    Ok(BenchmarkPlan { rows, total })
}

/// One leave-one-subject-out split.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LosoSplit {
    pub train_subjects: Vec<String>,
    pub test_subject: String,
}

/// Enumerates leave-one-subject-out splits in sorted subject order; every
/// subject serves as the test split exactly once.
pub fn loso_splits<S: AsRef<str>>(subjects: &[S]) -> Result<Vec<LosoSplit>> {
    let uniq: BTreeSet<&str> = subjects.iter().map(|s| s.as_ref()).collect();
    if uniq.len() < 2 {
        return Err(Error::invalid(format!(
            "loso: need at least 2 distinct subjects, got {}",
            uniq.len()
        )));
    }
    Ok(uniq
        .iter()
        .map(|&test| LosoSplit {
            train_subjects: uniq
                .iter()
                .filter(|&&s| s != test)
                .map(|&s| s.to_string())
                .collect(),
            test_subject: test.to_string(),
        })
        .collect())
}

/// The registered toy-model variants: a pooling kernel optionally followed
/// by affinity-propagation score refinement at inference.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelId {
    Attn,
    Max,
    Linsoft,
    AttnRskp,
    MaxRskp,
    LinsoftRskp,
}

impl ModelId {
    pub const ALL: [ModelId; 6] = [
        ModelId::Attn,
        ModelId::Max,
        ModelId::Linsoft,
        ModelId::AttnRskp,
        ModelId::MaxRskp,
        ModelId::LinsoftRskp,
    ];

    pub fn pooling(self) -> Pooling {
        match self {
            ModelId::Attn | ModelId::AttnRskp => Pooling::Attention,
            ModelId::Max | ModelId::MaxRskp => Pooling::Max,
            ModelId::Linsoft | ModelId::LinsoftRskp => Pooling::LinearSoftmax,
        }
    }

    pub fn refine(self) -> bool {
        matches!(
            self,
            ModelId::AttnRskp | ModelId::MaxRskp | ModelId::LinsoftRskp
        )
    }
}

impl fmt::Display for ModelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ModelId::Attn => "attn",
            ModelId::Max => "max",
            ModelId::Linsoft => "linsoft",
            ModelId::AttnRskp => "attn-rskp",
            ModelId::MaxRskp => "max-rskp",
            ModelId::LinsoftRskp => "linsoft-rskp",
        };
        f.write_str(s)
    }
}

impl FromStr for ModelId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ModelId::ALL
            .iter()
            .copied()
            .find(|m| m.to_string() == s)
            .ok_or_else(|| {
                Error::invalid(format!(
                    "unknown model id {s:?}; known: {}",
                    ModelId::ALL.map(|m| m.to_string()).join(", ")
                ))
            })
    }
}

fn mode_str(mode: InferMode) -> &'static str {
    match mode {
        InferMode::Full => "full",
        InferMode::Window => "window",
    }
}

/// Identifies one benchmark run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub dataset: String,
    pub seed: u64,
    pub held_out_subject: String,
    pub model: ModelId,
    pub mode: InferMode,
    /// Window length in seconds; required iff `mode` is `window`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub window_sec: Option<f64>,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        match (self.mode, self.window_sec) {
            (InferMode::Window, None) => {
                Err(Error::invalid("run: window mode requires window_sec"))
            }
            (InferMode::Window, Some(w)) if !(w > 0.0) => {
                Err(Error::invalid(format!("run: window_sec must be positive, got {w}")))
            }
            (InferMode::Full, Some(_)) => {
                Err(Error::invalid("run: window_sec is only valid in window mode"))
            }
            _ => Ok(()),
        }
    }

    pub fn run_id(&self) -> String {
        format!(
            "{}-{}-{}-{}-seed{}",
            self.dataset,
            self.model,
            mode_str(self.mode),
            self.held_out_subject,
            self.seed
        )
    }
}

/// Shared knobs for every run the harness executes.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct HarnessConfig {
    pub synth: SynthConfig,
    pub subjects: usize,
    pub sequences_per_subject: usize,
    pub train: TrainConfig,
    /// Split each training sequence into half-overlapping clips of this many
    /// seconds, labeling each clip by the classes it overlaps; `None` uses
    /// whole sequences as bags.
    pub clip_sec: Option<f64>,
    pub infer_thresh: f64,
    pub smooth_win: usize,
    /// Default window length in seconds for window-mode runs.
    pub window_sec: f64,
    pub nms: NmsConfig,
    pub rskp: RskpConfig,
    pub tiou_thresholds: Vec<f64>,
    pub seeds: Vec<u64>,
    pub ward_norm: WardNorm,
    pub models: Vec<ModelId>,
    pub modes: Vec<InferMode>,
}

impl Default for HarnessConfig {
    fn default() -> Self {
        HarnessConfig {
            synth: SynthConfig::default(),
            subjects: 5,
            sequences_per_subject: 2,
            train: TrainConfig::default(),
            clip_sec: None,
            infer_thresh: 0.5,
            smooth_win: 1,
            window_sec: 30.0,
            nms: NmsConfig::default(),
            rskp: RskpConfig::default(),
            tiou_thresholds: crate::metrics::DEFAULT_TIOU_THRESHOLDS.to_vec(),
            seeds: vec![2022, 2024, 2026],
            ward_norm: WardNorm::SequenceDuration,
            models: vec![ModelId::Attn],
            modes: vec![InferMode::Full],
        }
    }
}

/// Builds MIL bags for training: whole sequences, or half-overlapping clips
/// of `clip_sec` seconds labeled by the gt classes each clip overlaps.
pub fn training_bags(
    dataset: &Dataset,
    train_subjects: &BTreeSet<&str>,
    num_classes: usize,
    clip_sec: Option<f64>,
) -> Result<(Vec<Array2<f64>>, Vec<BagLabel>)> {
    let mut feats = Vec::new();
    let mut bags = Vec::new();
    for record in &dataset.records {
        if !train_subjects.contains(record.subject_id.as_str()) {
            continue;
        }
        let full = &dataset.features[&record.sequence_id];
        match clip_sec {
            None => {
                feats.push(full.clone());
                bags.push(bag_label_of(&record.gt, num_classes));
            }
            Some(sec) => {
                if !(sec > 0.0) {
                    return Err(Error::invalid("clip_sec must be positive"));
                }
                let t = full.nrows();
                let window = ((sec * record.fps).round() as usize).max(2);
                let clips = if t < window {
                    vec![(0, t)]
                } else {
                    make_clips(t, window)?.clips
                };
                for (a, b) in clips {
                    let clip_start = a as f64 / record.fps;
                    let clip_end = b as f64 / record.fps;
                    let inside: Vec<_> = record
                        .gt
                        .iter()
                        .filter(|s| s.start < clip_end && s.end > clip_start)
                        .cloned()
                        .collect();
                    feats.push(full.slice(ndarray::s![a..b, ..]).to_owned());
                    bags.push(bag_label_of(&inside, num_classes));
                }
            }
        }
    }
    if feats.is_empty() {
        return Err(Error::invalid("run: no training sequences for this split"));
    }
    Ok((feats, bags))
}

/// Executes one run end to end: trains the run's model on every subject but
/// the held-out one, infers on the held-out subject's sequences,
/// post-processes, evaluates, and persists `report.json` plus
/// `predictions.jsonl` under `out/runs/<run_id>/`, updating the aggregate
/// CSV. Deterministic per `RunConfig`: repeating a run rewrites identical
/// bytes.
pub fn run_pipeline(
    run: &RunConfig,
    dataset_dir: &Path,
    out_dir: &Path,
    hc: &HarnessConfig,
) -> Result<EvalReport> {
    run.validate()?;
    let dataset = load_dataset(dataset_dir)?;
    let num_classes = dataset
        .records
        .iter()
        .map(|r| r.num_classes)
        .max()
        .ok_or_else(|| Error::invalid("run: dataset has no sequences"))?;

    let all_subjects: BTreeSet<&str> = dataset
        .records
        .iter()
        .map(|r| r.subject_id.as_str())
        .collect();
    if !all_subjects.contains(run.held_out_subject.as_str()) {
        return Err(Error::invalid(format!(
            "run: subject {} not present in the dataset",
            run.held_out_subject
        )));
    }
    let train_subjects: BTreeSet<&str> = all_subjects
        .iter()
        .copied()
        .filter(|&s| s != run.held_out_subject)
        .collect();

    let (feats, bags) = training_bags(&dataset, &train_subjects, num_classes, hc.clip_sec)?;
    let train_cfg = TrainConfig {
        pooling: run.model.pooling(),
        seed: run.seed,
        ..hc.train.clone()
    };
    let outcome = train_mil(&feats, &bags, &train_cfg)?;

    let mut items = Vec::new();
    let mut pred_rows = Vec::new();
    for record in &dataset.records {
        if record.subject_id != run.held_out_subject {
            continue;
        }
        let features = &dataset.features[&record.sequence_id];
        let infer_cfg = InferConfig {
            mode: run.mode,
            window_len: run
                .window_sec
                .map(|w| (w * record.fps).round() as usize)
                .unwrap_or(0),
            thresh: hc.infer_thresh,
            smooth_win: hc.smooth_win,
            fps: record.fps,
            nms: hc.nms,
            rskp: run.model.refine().then_some(hc.rskp),
        };
        let preds = infer(&outcome.model, features.view(), &infer_cfg)?;
        pred_rows.extend(
            preds
                .iter()
                .map(|s| SegmentRow::from_segment(&record.sequence_id, s)),
        );
        items.push(EvalItem {
            gt: record.gt.clone(),
            pred: preds,
            fps: record.fps,
            duration: record.duration,
        });
    }

    let report = evaluate_sequences_with(&items, &hc.tiou_thresholds, hc.ward_norm)?;

    let run_dir = out_dir.join("runs").join(run.run_id());
    write_segment_rows(&run_dir.join("predictions.jsonl"), &pred_rows)?;
    write_json(&run_dir.join("report.json"), &report)?;
    upsert_aggregate(&out_dir.join("aggregate.csv"), aggregate_row(run, &report))?;
    Ok(report)
}

/// Enumerates and executes every run implied by the config: seeds x LOSO
/// splits x models x modes.
pub fn run_all(
    dataset_name: &str,
    dataset_dir: &Path,
    out_dir: &Path,
    hc: &HarnessConfig,
) -> Result<Vec<(RunConfig, EvalReport)>> {
    let dataset = load_dataset(dataset_dir)?;
    let subjects: Vec<String> = dataset
        .records
        .iter()
        .map(|r| r.subject_id.clone())
        .collect();
    let splits = loso_splits(&subjects)?;
    let mut results = Vec::new();
    for &seed in &hc.seeds {
        for split in &splits {
            for &model in &hc.models {
                for &mode in &hc.modes {
                    let run = RunConfig {
                        dataset: dataset_name.to_string(),
                        seed,
                        held_out_subject: split.test_subject.clone(),
                        model,
                        mode,
                        window_sec: matches!(mode, InferMode::Window)
                            .then_some(hc.window_sec),
                    };
                    let report = run_pipeline(&run, dataset_dir, out_dir, hc)?;
                    results.push((run, report));
                }
            }
        }
    }
    Ok(results)
}

/// One aggregate CSV line; the metric columns mirror the report table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub run_id: String,
    pub dataset: String,
    pub model: String,
    pub mode: String,
    pub subject: String,
    pub seed: u64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub underfill: f64,
    pub overfill: f64,
    pub deletion: f64,
    pub insertion: f64,
    pub fragmentation: f64,
    pub merge: f64,
    pub mean_ap: f64,
}

fn aggregate_row(run: &RunConfig, report: &EvalReport) -> AggregateRow {
    AggregateRow {
        run_id: run.run_id(),
        dataset: run.dataset.clone(),
        model: run.model.to_string(),
        mode: mode_str(run.mode).to_string(),
        subject: run.held_out_subject.clone(),
        seed: run.seed,
        precision: report.macro_avg.precision,
        recall: report.macro_avg.recall,
        f1: report.macro_avg.f1,
        underfill: report.misalignment.underfill,
        overfill: report.misalignment.overfill,
        deletion: report.misalignment.deletion,
        insertion: report.misalignment.insertion,
        fragmentation: report.misalignment.fragmentation,
        merge: report.misalignment.merge,
        mean_ap: report.mean_ap,
    }
}

/// Inserts or replaces the row with the same `run_id`, keeping the file
/// sorted by run id so reruns are byte-identical regardless of order.
pub fn upsert_aggregate(path: &Path, row: AggregateRow) -> Result<()> {
    let mut rows = if path.is_file() {
        read_aggregate(path)?
    } else {
        Vec::new()
    };
    rows.retain(|r| r.run_id != row.run_id);
    rows.push(row);
    rows.sort_by(|a, b| a.run_id.cmp(&b.run_id));
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent.to_path_buf(), e))?;
    }
    let mut w = csv::Writer::from_path(path)
        .map_err(|e| Error::parse(path.to_path_buf(), e.to_string()))?;
    for r in &rows {
        w.serialize(r)
            .map_err(|e| Error::parse(path.to_path_buf(), e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(path.to_path_buf(), e))?;
    Ok(())
}

pub fn read_aggregate(path: &Path) -> Result<Vec<AggregateRow>> {
    if !path.is_file() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let mut reader = csv::Reader::from_path(path)
        .map_err(|e| Error::parse(path.to_path_buf(), e.to_string()))?;
    reader
        .deserialize()
        .map(|r| r.map_err(|e| Error::parse(path.to_path_buf(), e.to_string())))
        .collect()
}

const REPORT_COLUMNS: [&str; 10] = ["P", "R", "F1", "UR", "OR", "DR", "IR", "FR", "MR", "mAP"];

fn row_metrics(row: &AggregateRow) -> [f64; 10] {
    [
        row.precision,
        row.recall,
        row.f1,
        row.underfill,
        row.overfill,
        row.deletion,
        row.insertion,
        row.fragmentation,
        row.merge,
        row.mean_ap,
    ]
}

/// Formats the aggregate rows as a text table: one line per dataset x model,
/// averaging metrics across seeds and subjects. When both inference modes
/// are present a cell reads "window|full"; otherwise it is the single mode's
/// value.
pub fn format_report(rows: &[AggregateRow]) -> Result<String> {
    if rows.is_empty() {
        return Err(Error::invalid("report: no runs to aggregate"));
    }
    // (dataset, model) -> mode -> (sums, count)
    let mut groups: BTreeMap<(String, String), BTreeMap<String, ([f64; 10], usize)>> =
        BTreeMap::new();
    for row in rows {
        let entry = groups
            .entry((row.dataset.clone(), row.model.clone()))
            .or_default()
            .entry(row.mode.clone())
            .or_insert(([0.0; 10], 0));
        let m = row_metrics(row);
        for (s, v) in entry.0.iter_mut().zip(m) {
            *s += v;
        }
        entry.1 += 1;
    }

    let mut table: Vec<Vec<String>> = Vec::new();
    let mut header = vec!["dataset".to_string(), "model".to_string()];
    header.extend(REPORT_COLUMNS.iter().map(|c| c.to_string()));
    table.push(header);
    for ((dataset, model), modes) in &groups {
        let mean = |mode: &str, k: usize| -> Option<f64> {
            modes.get(mode).map(|(sums, n)| sums[k] / *n as f64)
        };
        let mut line = vec![dataset.clone(), model.clone()];
        for k in 0..REPORT_COLUMNS.len() {
            let cell = match (mean("window", k), mean("full", k)) {
                (Some(w), Some(f)) => format!("{w:.3}|{f:.3}"),
                (Some(w), None) => format!("{w:.3}"),
                (None, Some(f)) => format!("{f:.3}"),
                (None, None) => "-".to_string(),
            };
            line.push(cell);
        }
        table.push(line);
    }

    let cols = table[0].len();
    let widths: Vec<usize> = (0..cols)
        .map(|c| table.iter().map(|row| row[c].len()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for row in &table {
        let line: Vec<String> = row
            .iter()
            .zip(&widths)
            .map(|(cell, w)| format!("{cell:<w$}"))
            .collect();
        out.push_str(line.join("  ").trim_end());
        out.push('\n');
    }
    Ok(out)
}

/// `format_report` over an aggregate CSV on disk.
pub fn report_from_csv(path: &Path) -> Result<String> {
    format_report(&read_aggregate(path)?)
}
