use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use ndarray::{Array2, ArrayView2};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::segment::{Segment, SequenceRecord};
use crate::trainer::{Pooling, ToyModel};

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::io(path.to_path_buf(), source)
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| io_err(parent, e))?;
        }
    }
    Ok(())
}

fn require_file(path: &Path) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Error::MissingFile(path.to_path_buf()))
    }
}

/// Writes one JSON object per line.
pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    ensure_parent(path)?;
    let file = File::create(path).map_err(|e| io_err(path, e))?;
    let mut w = BufWriter::new(file);
    for item in items {
        let line = serde_json::to_string(item)
            .map_err(|e| Error::parse(path.to_path_buf(), e.to_string()))?;
        writeln!(w, "{line}").map_err(|e| io_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

/// Reads a JSON-Lines file, skipping blank lines.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    require_file(path)?;
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| io_err(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let item = serde_json::from_str(&line)
            .map_err(|e| Error::parse(path.to_path_buf(), format!("line {}: {e}", i + 1)))?;
        out.push(item);
    }
    Ok(out)
}

/// Writes pretty-printed JSON (deterministic for map-free or BTreeMap data).
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    ensure_parent(path)?;
    let file = File::create(path).map_err(|e| io_err(path, e))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, value)
        .map_err(|e| Error::parse(path.to_path_buf(), e.to_string()))?;
    writeln!(w).map_err(|e| io_err(path, e))?;
    w.flush().map_err(|e| io_err(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    require_file(path)?;
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    serde_json::from_reader(BufReader::new(file))
        .map_err(|e| Error::parse(path.to_path_buf(), e.to_string()))
}

/// One segment attributed to a sequence, as stored in JSON-Lines files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentRow {
    pub sequence_id: String,
    pub class_id: usize,
    pub start: f64,
    pub end: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
}

impl SegmentRow {
    pub fn from_segment(sequence_id: &str, seg: &Segment) -> Self {
        SegmentRow {
            sequence_id: sequence_id.to_string(),
            class_id: seg.class_id,
            start: seg.start,
            end: seg.end,
            score: seg.score,
        }
    }

    pub fn to_segment(&self) -> Segment {
        Segment {
            class_id: self.class_id,
            start: self.start,
            end: self.end,
            score: self.score,
        }
    }
}

pub fn write_segment_rows(path: &Path, rows: &[SegmentRow]) -> Result<()> {
    write_jsonl(path, rows)
}

pub fn read_segment_rows(path: &Path) -> Result<Vec<SegmentRow>> {
    read_jsonl(path)
}

/// Groups segment rows by sequence id, preserving per-sequence order.
pub fn group_segments(rows: &[SegmentRow]) -> BTreeMap<String, Vec<Segment>> {
    let mut out: BTreeMap<String, Vec<Segment>> = BTreeMap::new();
    for row in rows {
        out.entry(row.sequence_id.clone())
            .or_default()
            .push(row.to_segment());
    }
    out
}

/// Per-sequence metadata line (ground truth lives in a separate file).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetaRow {
    pub sequence_id: String,
    pub subject_id: String,
    pub fps: f64,
    pub duration: f64,
    pub channels: usize,
    pub num_classes: usize,
}

impl MetaRow {
    pub fn from_record(r: &SequenceRecord) -> Self {
        MetaRow {
            sequence_id: r.sequence_id.clone(),
            subject_id: r.subject_id.clone(),
            fps: r.fps,
            duration: r.duration,
            channels: r.channels,
            num_classes: r.num_classes,
        }
    }

    pub fn into_record(self, gt: Vec<Segment>) -> SequenceRecord {
        SequenceRecord {
            sequence_id: self.sequence_id,
            subject_id: self.subject_id,
            fps: self.fps,
            duration: self.duration,
            channels: self.channels,
            num_classes: self.num_classes,
            gt,
        }
    }
}

/// Writes a feature matrix as headerless CSV, one row per frame.
pub fn write_features_csv(path: &Path, features: ArrayView2<f64>) -> Result<()> {
    ensure_parent(path)?;
    let file = File::create(path).map_err(|e| io_err(path, e))?;
    let mut w = BufWriter::new(file);
    for row in features.rows() {
        let line = row
            .iter()
            .map(|v| v.to_string())
            .collect::<Vec<_>>()
            .join(",");
        writeln!(w, "{line}").map_err(|e| io_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

pub fn read_features_csv(path: &Path) -> Result<Array2<f64>> {
    require_file(path)?;
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    let mut rows: Vec<f64> = Vec::new();
    let mut width = None;
    let mut count = 0usize;
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| io_err(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let vals: Vec<f64> = line
            .split(',')
            .map(|s| {
                s.trim().parse::<f64>().map_err(|e| {
                    Error::parse(path.to_path_buf(), format!("line {}: {e}", i + 1))
                })
            })
            .collect::<Result<_>>()?;
        match width {
            None => width = Some(vals.len()),
            Some(w) if w != vals.len() => {
                return Err(Error::parse(
                    path.to_path_buf(),
                    format!("line {}: expected {} columns, got {}", i + 1, w, vals.len()),
                ));
            }
            _ => {}
        }
        rows.extend(vals);
        count += 1;
    }
    let width = width.unwrap_or(0);
    Array2::from_shape_vec((count, width), rows)
        .map_err(|e| Error::parse(path.to_path_buf(), e.to_string()))
}

/// Writes proposal boxes as CSV with a `feat_start,feat_end` header.
pub fn write_boxes_csv(path: &Path, boxes: &[[usize; 2]]) -> Result<()> {
    ensure_parent(path)?;
    let file = File::create(path).map_err(|e| io_err(path, e))?;
    let mut w = BufWriter::new(file);
    writeln!(w, "feat_start,feat_end").map_err(|e| io_err(path, e))?;
    for b in boxes {
        writeln!(w, "{},{}", b[0], b[1]).map_err(|e| io_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

pub fn read_boxes_csv(path: &Path) -> Result<Vec<[usize; 2]>> {
    require_file(path)?;
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| io_err(path, e))?;
        if i == 0 || line.trim().is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 2 {
            return Err(Error::parse(
                path.to_path_buf(),
                format!("line {}: expected 2 columns", i + 1),
            ));
        }
        let s = parts[0].trim().parse::<usize>().map_err(|e| {
            Error::parse(path.to_path_buf(), format!("line {}: {e}", i + 1))
        })?;
        let e_ = parts[1].trim().parse::<usize>().map_err(|e| {
            Error::parse(path.to_path_buf(), format!("line {}: {e}", i + 1))
        })?;
        out.push([s, e_]);
    }
    Ok(out)
}

/// A trained model together with the pooling it was trained under.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub pooling: Pooling,
    pub model: ToyModel,
}

pub fn write_model(path: &Path, model: &ModelFile) -> Result<()> {
    write_json(path, model)
}

pub fn read_model(path: &Path) -> Result<ModelFile> {
    read_json(path)
}

/// An on-disk dataset: sequence records plus per-sequence feature matrices.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub records: Vec<SequenceRecord>,
    pub features: BTreeMap<String, Array2<f64>>,
}

impl Dataset {
    pub fn record(&self, sequence_id: &str) -> Result<&SequenceRecord> {
        self.records
            .iter()
            .find(|r| r.sequence_id == sequence_id)
            .ok_or_else(|| Error::invalid(format!("unknown sequence {sequence_id}")))
    }
}

/// Writes `metadata.jsonl`, `gt.jsonl` and `features/<id>.csv` under `dir`.
pub fn save_dataset(dir: &Path, dataset: &Dataset) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let metas: Vec<MetaRow> = dataset.records.iter().map(MetaRow::from_record).collect();
    write_jsonl(&dir.join("metadata.jsonl"), &metas)?;
    let mut gt_rows = Vec::new();
    for r in &dataset.records {
        for seg in &r.gt {
            gt_rows.push(SegmentRow::from_segment(&r.sequence_id, seg));
        }
    }
    write_jsonl(&dir.join("gt.jsonl"), &gt_rows)?;
    for r in &dataset.records {
        let feats = dataset.features.get(&r.sequence_id).ok_or_else(|| {
            Error::invalid(format!("no features for sequence {}", r.sequence_id))
        })?;
        write_features_csv(&features_path(dir, &r.sequence_id), feats.view())?;
    }
    Ok(())
}

pub fn features_path(dir: &Path, sequence_id: &str) -> PathBuf {
    dir.join("features").join(format!("{sequence_id}.csv"))
}

/// Loads a dataset directory written by `save_dataset`, validating every
/// record and requiring a feature file per sequence.
pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let metas: Vec<MetaRow> = read_jsonl(&dir.join("metadata.jsonl"))?;
    let gt_rows: Vec<SegmentRow> = read_jsonl(&dir.join("gt.jsonl"))?;
    let mut by_seq = group_segments(&gt_rows);
    let mut records = Vec::with_capacity(metas.len());
    let mut features = BTreeMap::new();
    for meta in metas {
        let gt = by_seq.remove(&meta.sequence_id).unwrap_or_default();
        let record = meta.into_record(gt);
        record.validate()?;
        let path = features_path(dir, &record.sequence_id);
        let feats = read_features_csv(&path)?;
        if feats.ncols() != record.channels {
            return Err(Error::shape(format!(
                "{}: {} feature columns, metadata says {}",
                path.display(),
                feats.ncols(),
                record.channels
            )));
        }
        features.insert(record.sequence_id.clone(), feats);
        records.push(record);
    }
    if let Some(id) = by_seq.keys().next() {
        return Err(Error::invalid(format!(
            "gt.jsonl references unknown sequence {id}"
        )));
    }
    Ok(Dataset { records, features })
}
