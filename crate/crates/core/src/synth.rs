use std::path::Path;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{save_dataset, Dataset};
use crate::segment::{rasterize, Segment, SequenceRecord};

/// Controls for the synthetic stream generator.
///
/// Streams alternate null gaps (shifted-exponential, floor `min_gap_sec`,
/// mean `gap_mean_sec`) with actions of a uniformly random class whose
/// durations are `min_action_sec` plus an exponential excess, so the
/// configured `mean_action_sec` is preserved while every action stays
/// detectable; actions truncated by the stream end below `min_action_sec`
/// are dropped. Frames emit class-conditional Gaussian features: class c
/// gets a distinct mean vector of magnitude ~`class_sep`, the null class the
/// zero mean, all with shared `noise_std`. `subject_shift` is the norm of a
/// per-subject offset added to action-class means by `gen_benchmark`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub num_classes: usize,
    pub channels: usize,
    pub fps: f64,
    pub duration: f64,
    pub mean_action_sec: f64,
    pub min_action_sec: f64,
    pub gap_mean_sec: f64,
    pub min_gap_sec: f64,
    pub class_sep: f64,
    pub noise_std: f64,
    pub subject_shift: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            num_classes: 3,
            channels: 3,
            fps: 25.0,
            duration: 60.0,
            mean_action_sec: 3.0,
            min_action_sec: 1.0,
            gap_mean_sec: 3.0,
            min_gap_sec: 0.0,
            class_sep: 4.0,
            noise_std: 1.0,
            subject_shift: 0.0,
            seed: 2022,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes == 0 || self.channels == 0 {
            return Err(Error::invalid("synth: need at least one class and channel"));
        }
        for (name, v) in [
            ("fps", self.fps),
            ("duration", self.duration),
            ("mean_action_sec", self.mean_action_sec),
            ("min_action_sec", self.min_action_sec),
            ("gap_mean_sec", self.gap_mean_sec),
            ("class_sep", self.class_sep),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::invalid(format!("synth: {name} must be positive, got {v}")));
            }
        }
        if self.min_action_sec > self.mean_action_sec {
            return Err(Error::invalid(format!(
                "synth: min_action_sec {} exceeds mean_action_sec {}",
                self.min_action_sec, self.mean_action_sec
            )));
        }
        if !(self.min_gap_sec >= 0.0) || self.min_gap_sec > self.gap_mean_sec {
            return Err(Error::invalid(format!(
                "synth: min_gap_sec {} must lie in [0, gap_mean_sec {}]",
                self.min_gap_sec, self.gap_mean_sec
            )));
        }
        if !(self.noise_std >= 0.0) || !(self.subject_shift >= 0.0) {
            return Err(Error::invalid("synth: noise_std and subject_shift must be non-negative"));
        }
        Ok(())
    }

    /// The feature-space mean of a class; class 0 is the zero vector, action
    /// classes get distinct axis-aligned vectors scaled by `class_sep`.
    pub fn class_mean(&self, class_id: usize) -> Vec<f64> {
        let mut mean = vec![0.0; self.channels];
        if class_id > 0 {
            let axis = (class_id - 1) % self.channels;
            let tier = ((class_id - 1) / self.channels) as f64;
            mean[axis] = self.class_sep * (1.0 + tier);
        }
        mean
    }
}

fn gen_stream_inner(
    cfg: &SynthConfig,
    sequence_id: &str,
    subject_id: &str,
    shift: &[f64],
    seed: u64,
) -> Result<(SequenceRecord, Array2<f64>)> {
    cfg.validate()?;
    let frames = (cfg.duration * cfg.fps).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // Alternate exponential gaps and shifted-exponential action durations.
    let mut gt: Vec<Segment> = Vec::new();
    let mut t = 0.0;
    let excess = cfg.mean_action_sec - cfg.min_action_sec;
    let gap_excess = cfg.gap_mean_sec - cfg.min_gap_sec;
    while t < cfg.duration {
        let mut gap = cfg.min_gap_sec;
        if gap_excess > 0.0 {
            gap += rng.sample::<f64, _>(Exp1) * gap_excess;
        }
        let start = t + gap;
        if start >= cfg.duration {
            break;
        }
        let class = rng.random_range(1..=cfg.num_classes);
        let mut dur = cfg.min_action_sec;
        if excess > 0.0 {
            dur += rng.sample::<f64, _>(Exp1) * excess;
        }
        let end = (start + dur).min(cfg.duration);
        if end - start >= cfg.min_action_sec - 1e-9 {
            gt.push(Segment::new(class, start, end));
        }
        t = end;
    }
    if gt.is_empty() {
        return Err(Error::invalid(format!(
            "synth: duration {}s too short to fit one action",
            cfg.duration
        )));
    }

    let labels = rasterize(&gt, cfg.fps, cfg.duration)?;
    let mut feats = Array2::zeros((frames, cfg.channels));
    for (i, &label) in labels.labels.iter().enumerate() {
        let mean = cfg.class_mean(label);
        for d in 0..cfg.channels {
            let mut v = mean[d];
            if label != 0 {
                v += shift[d];
            }
            if cfg.noise_std > 0.0 {
                v += cfg.noise_std * rng.sample::<f64, _>(StandardNormal);
            }
            feats[[i, d]] = v;
        }
    }

    let record = SequenceRecord {
        sequence_id: sequence_id.to_string(),
        subject_id: subject_id.to_string(),
        fps: cfg.fps,
        duration: cfg.duration,
        channels: cfg.channels,
        num_classes: cfg.num_classes,
        gt,
    };
    record.validate()?;
    Ok((record, feats))
}

/// Generates one labeled stream and its frame-feature matrix.
pub fn gen_stream(cfg: &SynthConfig) -> Result<(SequenceRecord, Array2<f64>)> {
    let zero = vec![0.0; cfg.channels.max(1)];
    gen_stream_inner(cfg, &format!("seq-{}", cfg.seed), "s00", &zero, cfg.seed)
}

/// Generates `subjects x sequences_per_subject` streams with a per-subject
/// mean shift of norm `cfg.subject_shift` applied to action-class features.
pub fn gen_sequences(
    cfg: &SynthConfig,
    subjects: usize,
    sequences_per_subject: usize,
) -> Result<Dataset> {
    cfg.validate()?;
    if subjects < 2 {
        return Err(Error::invalid(format!(
            "synth: need at least 2 subjects for a benchmark, got {subjects}"
        )));
    }
    if sequences_per_subject == 0 {
        return Err(Error::invalid("synth: sequences_per_subject must be positive"));
    }
    let mut seeder = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut records = Vec::new();
    let mut features = std::collections::BTreeMap::new();
    for k in 0..subjects {
        // Random direction scaled to the configured shift norm.
        let raw: Vec<f64> = (0..cfg.channels)
            .map(|_| seeder.sample::<f64, _>(StandardNormal))
            .collect();
        let norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
        let shift: Vec<f64> = if norm > 1e-12 {
            raw.iter().map(|v| v / norm * cfg.subject_shift).collect()
        } else {
            let mut e = vec![0.0; cfg.channels];
            e[0] = cfg.subject_shift;
            e
        };
        let subject_id = format!("s{k:02}");
        for m in 0..sequences_per_subject {
            let seq_seed: u64 = seeder.random();
            let sequence_id = format!("s{k:02}-r{m:02}");
            let (record, feats) =
                gen_stream_inner(cfg, &sequence_id, &subject_id, &shift, seq_seed)?;
            features.insert(sequence_id, feats);
            records.push(record);
        }
    }
    Ok(Dataset { records, features })
}

/// `gen_sequences` plus writing the dataset directory (`metadata.jsonl`,
/// `gt.jsonl`, `features/<id>.csv`) under `out`.
pub fn gen_benchmark(
    cfg: &SynthConfig,
    subjects: usize,
    sequences_per_subject: usize,
    out: &Path,
) -> Result<Dataset> {
    let dataset = gen_sequences(cfg, subjects, sequences_per_subject)?;
    save_dataset(out, &dataset)?;
    Ok(dataset)
}
