use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::segment::{rasterize, tiou, FrameLabelSequence, Segment};

/// Precision / recall / F1 triple; zero denominators yield 0.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Prf {
    fn from_counts(tp: u64, fp: u64, fn_: u64) -> Self {
        let precision = if tp + fp > 0 {
            tp as f64 / (tp + fp) as f64
        } else {
            0.0
        };
        let recall = if tp + fn_ > 0 {
            tp as f64 / (tp + fn_) as f64
        } else {
            0.0
        };
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        Prf {
            precision,
            recall,
            f1,
        }
    }
}

/// Per-class frame counts against a ground-truth labeling.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct FrameConfusion {
    pub true_pos: u64,
    pub false_pos: u64,
    pub false_neg: u64,
}

/// Frame-level confusion per class (background 0 never gets an entry).
/// Classes appear if they occur in either sequence.
pub fn frame_confusion(
    gt: &FrameLabelSequence,
    pred: &FrameLabelSequence,
) -> Result<BTreeMap<usize, FrameConfusion>> {
    if gt.len() != pred.len() {
        return Err(Error::shape(format!(
            "frame_confusion: {} gt frames vs {} predicted",
            gt.len(),
            pred.len()
        )));
    }
    let mut out: BTreeMap<usize, FrameConfusion> = BTreeMap::new();
    for (&g, &p) in gt.labels.iter().zip(&pred.labels) {
        if g == p {
            if g != 0 {
                out.entry(g).or_default().true_pos += 1;
            }
        } else {
            if p != 0 {
                out.entry(p).or_default().false_pos += 1;
            }
            if g != 0 {
                out.entry(g).or_default().false_neg += 1;
            }
        }
    }
    Ok(out)
}

/// Per-class and macro-averaged frame precision/recall/F1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrfReport {
    pub per_class: BTreeMap<usize, Prf>,
    pub macro_avg: Prf,
}

fn prf_from_confusion(confusion: &BTreeMap<usize, FrameConfusion>) -> PrfReport {
    let per_class: BTreeMap<usize, Prf> = confusion
        .iter()
        .map(|(&c, k)| (c, Prf::from_counts(k.true_pos, k.false_pos, k.false_neg)))
        .collect();
    let n = per_class.len().max(1) as f64;
    let macro_avg = Prf {
        precision: per_class.values().map(|p| p.precision).sum::<f64>() / n,
        recall: per_class.values().map(|p| p.recall).sum::<f64>() / n,
        f1: per_class.values().map(|p| p.f1).sum::<f64>() / n,
    };
    PrfReport {
        per_class,
        macro_avg,
    }
}

/// Frame-level precision/recall/F1 per class plus the unweighted macro
/// average over classes present in either sequence (background excluded).
pub fn frame_prf(gt: &FrameLabelSequence, pred: &FrameLabelSequence) -> Result<PrfReport> {
    Ok(prf_from_confusion(&frame_confusion(gt, pred)?))
}

/// The six misalignment ratios as percentages: Underfill, Overfill,
/// Deletion, Insertion, Fragmentation, Merge.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MisalignmentRatios {
    pub underfill: f64,
    pub overfill: f64,
    pub deletion: f64,
    pub insertion: f64,
    pub fragmentation: f64,
    pub merge: f64,
}

/// Per-class misalignment frame counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct WardCounts {
    pub underfill: u64,
    pub overfill: u64,
    pub deletion: u64,
    pub insertion: u64,
    pub fragmentation: u64,
    pub merge: u64,
}

impl WardCounts {
    pub fn gt_side(&self) -> u64 {
        self.deletion + self.underfill + self.fragmentation
    }

    pub fn pred_side(&self) -> u64 {
        self.insertion + self.overfill + self.merge
    }
}

/// Denominator for turning misalignment durations into ratios.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WardNorm {
    /// Divide every class's error duration by the total sequence duration.
    SequenceDuration,
    /// Divide by that class's total ground-truth duration (classes with no
    /// ground truth are skipped).
    ClassGtDuration,
}

fn mask_runs(mask: &[bool]) -> Vec<(usize, usize)> {
    let mut runs = Vec::new();
    let mut start = None;
    for (i, &m) in mask.iter().enumerate() {
        match (start, m) {
            (None, true) => start = Some(i),
            (Some(s), false) => {
                runs.push((s, i));
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        runs.push((s, mask.len()));
    }
    runs
}

/// Classifies every misaligned frame of one class given the binary gt and
/// prediction masks.
///
/// Ground-truth side (gt-positive frames the prediction misses): a gt run
/// with no predicted frame is deletion; in a partially covered run, missing
/// frames outside the first..last covered frame are underfill and missing
/// frames between covered frames are fragmentation. Prediction side
/// (predicted frames outside the gt): a prediction run overlapping no gt run
/// is insertion; otherwise frames bridging two overlapped gt runs are merge
/// and any spill beyond the outermost overlapped gt boundary is overfill.
fn ward_class_counts(gt_mask: &[bool], pred_mask: &[bool]) -> WardCounts {
    let mut counts = WardCounts::default();
    let gt_runs = mask_runs(gt_mask);
    let pred_runs = mask_runs(pred_mask);

    for &(gs, ge) in &gt_runs {
        let covered: Vec<usize> = (gs..ge).filter(|&t| pred_mask[t]).collect();
        if covered.is_empty() {
            counts.deletion += (ge - gs) as u64;
            continue;
        }
        let first = covered[0];
        let last = *covered.last().unwrap();
        for t in gs..ge {
            if !pred_mask[t] {
                if t < first || t > last {
                    counts.underfill += 1;
                } else {
                    counts.fragmentation += 1;
                }
            }
        }
    }

    for &(ps, pe) in &pred_runs {
        let overlapped: Vec<(usize, usize)> = gt_runs
            .iter()
            .filter(|&&(gs, ge)| gs < pe && ge > ps)
            .cloned()
            .collect();
        if overlapped.is_empty() {
            counts.insertion += (pe - ps) as u64;
            continue;
        }
        // Bridging zones between consecutive overlapped gt runs.
        let zones: Vec<(usize, usize)> = overlapped
            .windows(2)
            .map(|w| (w[0].1, w[1].0))
            .collect();
        for t in ps..pe {
            if !gt_mask[t] {
                if zones.iter().any(|&(zs, ze)| zs <= t && t < ze) {
                    counts.merge += 1;
                } else {
                    counts.overfill += 1;
                }
            }
        }
    }
    counts
}

/// Per-class misalignment frame counts from rasterized label sequences.
pub fn ward_counts(
    gt: &FrameLabelSequence,
    pred: &FrameLabelSequence,
) -> Result<BTreeMap<usize, WardCounts>> {
    if gt.len() != pred.len() {
        return Err(Error::shape(format!(
            "ward_counts: {} gt frames vs {} predicted",
            gt.len(),
            pred.len()
        )));
    }
    let classes: BTreeSet<usize> = gt
        .labels
        .iter()
        .chain(&pred.labels)
        .cloned()
        .filter(|&c| c != 0)
        .collect();
    let mut out = BTreeMap::new();
    for c in classes {
        let gt_mask: Vec<bool> = gt.labels.iter().map(|&l| l == c).collect();
        let pred_mask: Vec<bool> = pred.labels.iter().map(|&l| l == c).collect();
        out.insert(c, ward_class_counts(&gt_mask, &pred_mask));
    }
    Ok(out)
}

fn ratios_from_counts(
    counts: &BTreeMap<usize, WardCounts>,
    total_frames: u64,
    gt_frames: &BTreeMap<usize, u64>,
    norm: WardNorm,
) -> MisalignmentRatios {
    let mut sums = MisalignmentRatios::default();
    let mut n = 0usize;
    for (c, k) in counts {
        let denom = match norm {
            WardNorm::SequenceDuration => total_frames,
            WardNorm::ClassGtDuration => gt_frames.get(c).copied().unwrap_or(0),
        };
        if denom == 0 {
            continue;
        }
        let d = denom as f64 / 100.0;
        sums.underfill += k.underfill as f64 / d;
        sums.overfill += k.overfill as f64 / d;
        sums.deletion += k.deletion as f64 / d;
        sums.insertion += k.insertion as f64 / d;
        sums.fragmentation += k.fragmentation as f64 / d;
        sums.merge += k.merge as f64 / d;
        n += 1;
    }
    if n > 0 {
        let nf = n as f64;
        sums.underfill /= nf;
        sums.overfill /= nf;
        sums.deletion /= nf;
        sums.insertion /= nf;
        sums.fragmentation /= nf;
        sums.merge /= nf;
    }
    sums
}

/// Ward-style misalignment ratios between ground-truth and predicted
/// segments, rasterized at `fps` over `duration` seconds. Each class's error
/// frames are divided by the chosen denominator, averaged over the classes
/// present in either input, and expressed as percentages.
pub fn ward_errors_with(
    gt: &[Segment],
    pred: &[Segment],
    fps: f64,
    duration: f64,
    norm: WardNorm,
) -> Result<MisalignmentRatios> {
    let gt_labels = rasterize(gt, fps, duration)?;
    let pred_labels = rasterize(pred, fps, duration)?;
    let counts = ward_counts(&gt_labels, &pred_labels)?;
    let mut gt_frames: BTreeMap<usize, u64> = BTreeMap::new();
    for &l in &gt_labels.labels {
        if l != 0 {
            *gt_frames.entry(l).or_insert(0) += 1;
        }
    }
    Ok(ratios_from_counts(
        &counts,
        gt_labels.len() as u64,
        &gt_frames,
        norm,
    ))
}

/// `ward_errors_with` under the default sequence-duration normalization.
pub fn ward_errors(
    gt: &[Segment],
    pred: &[Segment],
    fps: f64,
    duration: f64,
) -> Result<MisalignmentRatios> {
    ward_errors_with(gt, pred, fps, duration, WardNorm::SequenceDuration)
}

/// Greedy matching and all-point interpolated average precision for one
/// class, pooling predictions across `(sequence, Segment)` pairs. Returns
/// `None` when the class appears in neither predictions nor ground truth or
/// has no ground truth and no predictions to penalize.
fn ap_pooled(
    preds: &[(usize, Segment)],
    gts: &[(usize, Segment)],
    class_id: usize,
    tau: f64,
) -> Result<Option<f64>> {
    let mut cls_preds: Vec<&(usize, Segment)> =
        preds.iter().filter(|(_, s)| s.class_id == class_id).collect();
    let mut cls_gts: Vec<&(usize, Segment)> =
        gts.iter().filter(|(_, s)| s.class_id == class_id).collect();
    if cls_preds.iter().any(|(_, s)| s.score.is_none()) {
        return Err(Error::invalid("ap: unscored prediction"));
    }
    if cls_gts.is_empty() {
        // No ground truth: any prediction is a false positive.
        return Ok(if cls_preds.is_empty() { None } else { Some(0.0) });
    }
    if cls_preds.is_empty() {
        return Ok(Some(0.0));
    }
    cls_preds.sort_by(|(qa, a), (qb, b)| {
        b.score
            .unwrap()
            .total_cmp(&a.score.unwrap())
            .then(a.start.total_cmp(&b.start))
            .then(qa.cmp(qb))
            .then(a.end.total_cmp(&b.end))
    });
    cls_gts.sort_by(|(qa, a), (qb, b)| {
        qa.cmp(qb)
            .then(a.start.total_cmp(&b.start))
            .then(a.end.total_cmp(&b.end))
    });

    let mut matched = vec![false; cls_gts.len()];
    let mut tp = 0u64;
    let mut precisions = Vec::with_capacity(cls_preds.len());
    let mut recalls = Vec::with_capacity(cls_preds.len());
    for (k, (pq, p)) in cls_preds.iter().enumerate() {
        let mut best: Option<(usize, f64)> = None;
        for (gi, (gq, g)) in cls_gts.iter().enumerate() {
            if matched[gi] || gq != pq {
                continue;
            }
            let ov = tiou(p.interval(), g.interval());
            if ov >= tau && best.map_or(true, |(_, b)| ov > b) {
                best = Some((gi, ov));
            }
        }
        if let Some((gi, _)) = best {
            matched[gi] = true;
            tp += 1;
        }
        precisions.push(tp as f64 / (k + 1) as f64);
        recalls.push(tp as f64 / cls_gts.len() as f64);
    }

    // Precision envelope, then sum p * delta-recall over the curve.
    let mut envelope = precisions.clone();
    for k in (0..envelope.len().saturating_sub(1)).rev() {
        envelope[k] = envelope[k].max(envelope[k + 1]);
    }
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for (k, &r) in recalls.iter().enumerate() {
        ap += (r - prev_recall) * envelope[k];
        prev_recall = r;
    }
    Ok(Some(ap))
}

/// Average precision of one class at one tIoU threshold: predictions ranked
/// by descending score (ties: earlier start) greedily match the unmatched
/// ground truth with the highest tIoU >= `tau` (inclusive). Returns `None`
/// when the class has neither ground truth nor predictions; no ground truth
/// but some predictions scores 0.
pub fn ap_at_tiou(
    preds: &[Segment],
    gts: &[Segment],
    class_id: usize,
    tau: f64,
) -> Result<Option<f64>> {
    let p: Vec<(usize, Segment)> = preds.iter().map(|&s| (0, s)).collect();
    let g: Vec<(usize, Segment)> = gts.iter().map(|&s| (0, s)).collect();
    ap_pooled(&p, &g, class_id, tau)
}

/// Mean over thresholds of the per-threshold mean class AP. Errors if no
/// class is evaluable or `thresholds` is empty.
pub fn mean_ap(preds: &[Segment], gts: &[Segment], thresholds: &[f64]) -> Result<f64> {
    let p: Vec<(usize, Segment)> = preds.iter().map(|&s| (0, s)).collect();
    let g: Vec<(usize, Segment)> = gts.iter().map(|&s| (0, s)).collect();
    mean_ap_pooled(&p, &g, thresholds).map(|(m, _)| m)
}

fn mean_ap_pooled(
    preds: &[(usize, Segment)],
    gts: &[(usize, Segment)],
    thresholds: &[f64],
) -> Result<(f64, Vec<ApEntry>)> {
    if thresholds.is_empty() {
        return Err(Error::invalid("mean_ap: no thresholds"));
    }
    let classes: BTreeSet<usize> = preds
        .iter()
        .chain(gts)
        .map(|(_, s)| s.class_id)
        .filter(|&c| c != 0)
        .collect();
    let mut entries = Vec::new();
    let mut tau_means = Vec::new();
    for &tau in thresholds {
        let mut aps = Vec::new();
        for &c in &classes {
            if let Some(ap) = ap_pooled(preds, gts, c, tau)? {
                entries.push(ApEntry {
                    class_id: c,
                    tau,
                    ap,
                });
                aps.push(ap);
            }
        }
        if !aps.is_empty() {
            tau_means.push(aps.iter().sum::<f64>() / aps.len() as f64);
        }
    }
    if tau_means.is_empty() {
        return Err(Error::invalid("mean_ap: no evaluable classes"));
    }
    Ok((
        tau_means.iter().sum::<f64>() / tau_means.len() as f64,
        entries,
    ))
}

/// One AP measurement in an evaluation report.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ApEntry {
    pub class_id: usize,
    pub tau: f64,
    pub ap: f64,
}

/// The full evaluation of a set of sequences.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub per_class: BTreeMap<usize, Prf>,
    pub macro_avg: Prf,
    pub misalignment: MisalignmentRatios,
    pub ap: Vec<ApEntry>,
    pub mean_ap: f64,
}

/// Ground truth and predictions for one sequence.
#[derive(Debug, Clone)]
pub struct EvalItem {
    pub gt: Vec<Segment>,
    pub pred: Vec<Segment>,
    pub fps: f64,
    pub duration: f64,
}

/// Evaluates predictions against ground truth across sequences: frame
/// confusion and misalignment counts are summed over sequences before
/// computing ratios, and AP ranks all predictions together while matching
/// within each sequence.
pub fn evaluate_sequences_with(
    items: &[EvalItem],
    thresholds: &[f64],
    norm: WardNorm,
) -> Result<EvalReport> {
    if items.is_empty() {
        return Err(Error::invalid("evaluate_sequences: no sequences"));
    }
    let mut confusion: BTreeMap<usize, FrameConfusion> = BTreeMap::new();
    let mut counts: BTreeMap<usize, WardCounts> = BTreeMap::new();
    let mut gt_frames: BTreeMap<usize, u64> = BTreeMap::new();
    let mut total_frames = 0u64;
    let mut pooled_preds = Vec::new();
    let mut pooled_gts = Vec::new();

    for (idx, item) in items.iter().enumerate() {
        let gt_labels = rasterize(&item.gt, item.fps, item.duration)?;
        let pred_labels = rasterize(&item.pred, item.fps, item.duration)?;
        for (c, k) in frame_confusion(&gt_labels, &pred_labels)? {
            let e = confusion.entry(c).or_default();
            e.true_pos += k.true_pos;
            e.false_pos += k.false_pos;
            e.false_neg += k.false_neg;
        }
        for (c, k) in ward_counts(&gt_labels, &pred_labels)? {
            let e = counts.entry(c).or_default();
            e.underfill += k.underfill;
            e.overfill += k.overfill;
            e.deletion += k.deletion;
            e.insertion += k.insertion;
            e.fragmentation += k.fragmentation;
            e.merge += k.merge;
        }
        for &l in &gt_labels.labels {
            if l != 0 {
                *gt_frames.entry(l).or_insert(0) += 1;
            }
        }
        total_frames += gt_labels.len() as u64;
        pooled_preds.extend(item.pred.iter().map(|&s| (idx, s)));
        pooled_gts.extend(item.gt.iter().map(|&s| (idx, s)));
    }

    let prf = prf_from_confusion(&confusion);
    let misalignment = ratios_from_counts(&counts, total_frames, &gt_frames, norm);
    let (map, ap) = mean_ap_pooled(&pooled_preds, &pooled_gts, thresholds)?;
    Ok(EvalReport {
        per_class: prf.per_class,
        macro_avg: prf.macro_avg,
        misalignment,
        ap,
        mean_ap: map,
    })
}

/// `evaluate_sequences_with` under the default sequence-duration
/// normalization.
pub fn evaluate_sequences(items: &[EvalItem], thresholds: &[f64]) -> Result<EvalReport> {
    evaluate_sequences_with(items, thresholds, WardNorm::SequenceDuration)
}

/// The default tIoU thresholds for mAP.
pub const DEFAULT_TIOU_THRESHOLDS: [f64; 5] = [0.3, 0.4, 0.5, 0.6, 0.7];

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn labels(v: Vec<usize>) -> FrameLabelSequence {
        FrameLabelSequence { labels: v, fps: 1.0 }
    }

    #[test]
    fn prf_on_exact_match_is_one() {
        let gt = labels(vec![0, 1, 1, 2, 0]);
        let out = frame_prf(&gt, &gt.clone()).unwrap();
        for prf in out.per_class.values() {
            assert_eq!(prf.precision, 1.0);
            assert_eq!(prf.recall, 1.0);
            assert_eq!(prf.f1, 1.0);
        }
        assert_eq!(out.macro_avg.f1, 1.0);
    }

    #[test]
    fn prf_zero_division_convention() {
        let gt = labels(vec![1, 1, 0]);
        let pred = labels(vec![0, 0, 0]);
        let out = frame_prf(&gt, &pred).unwrap();
        let c1 = out.per_class[&1];
        assert_eq!((c1.precision, c1.recall, c1.f1), (0.0, 0.0, 0.0));
    }

    #[test]
    fn prf_hand_example() {
        let gt = labels(vec![1, 1, 0, 0]);
        let pred = labels(vec![1, 0, 0, 1]);
        let out = frame_prf(&gt, &pred).unwrap();
        let c1 = out.per_class[&1];
        assert_eq!((c1.precision, c1.recall, c1.f1), (0.5, 0.5, 0.5));
    }

    #[test]
    fn prf_rejects_length_mismatch() {
        assert!(frame_prf(&labels(vec![0, 1]), &labels(vec![0])).is_err());
    }

    /// Brute-force per-class counter used as an independent oracle.
    fn brute_force_prf(gt: &[usize], pred: &[usize]) -> BTreeMap<usize, (u64, u64, u64)> {
        let classes: BTreeSet<usize> =
            gt.iter().chain(pred).cloned().filter(|&c| c != 0).collect();
        let mut out = BTreeMap::new();
        for c in classes {
            let tp = gt
                .iter()
                .zip(pred)
                .filter(|(&g, &p)| g == c && p == c)
                .count() as u64;
            let fp = gt
                .iter()
                .zip(pred)
                .filter(|(&g, &p)| g != c && p == c)
                .count() as u64;
            let fn_ = gt
                .iter()
                .zip(pred)
                .filter(|(&g, &p)| g == c && p != c)
                .count() as u64;
            out.insert(c, (tp, fp, fn_));
        }
        out
    }

    #[test]
    fn ward_exact_match_is_all_zero() {
        let gt = vec![Segment::new(1, 10.0, 20.0)];
        let pred = vec![Segment::scored(1, 10.0, 20.0, 0.9)];
        let r = ward_errors(&gt, &pred, 1.0, 100.0).unwrap();
        assert_eq!(r, MisalignmentRatios::default());
    }

    #[test]
    fn ward_single_error_constructions() {
        let fps = 1.0;
        let dur = 100.0;
        let gt = vec![Segment::new(1, 10.0, 20.0)];

        // Deletion: nothing predicted.
        let r = ward_errors(&gt, &[], fps, dur).unwrap();
        assert_eq!(r.deletion, 10.0);
        assert_eq!(
            (r.underfill, r.overfill, r.insertion, r.fragmentation, r.merge),
            (0.0, 0.0, 0.0, 0.0, 0.0)
        );

        // Underfill: prediction inside the gt.
        let r = ward_errors(&gt, &[Segment::scored(1, 12.0, 18.0, 0.9)], fps, dur).unwrap();
        assert_eq!(r.underfill, 4.0);
        assert_eq!(
            (r.deletion, r.overfill, r.insertion, r.fragmentation, r.merge),
            (0.0, 0.0, 0.0, 0.0, 0.0)
        );

        // Overfill: prediction spilling over both edges.
        let r = ward_errors(&gt, &[Segment::scored(1, 8.0, 22.0, 0.9)], fps, dur).unwrap();
        assert_eq!(r.overfill, 4.0);
        assert_eq!(
            (r.deletion, r.underfill, r.insertion, r.fragmentation, r.merge),
            (0.0, 0.0, 0.0, 0.0, 0.0)
        );

        // Insertion: gt covered exactly, plus a prediction in background.
        let preds = vec![
            Segment::scored(1, 10.0, 20.0, 0.9),
            Segment::scored(1, 50.0, 60.0, 0.8),
        ];
        let r = ward_errors(&gt, &preds, fps, dur).unwrap();
        assert_eq!(r.insertion, 10.0);
        assert_eq!(
            (r.deletion, r.underfill, r.overfill, r.fragmentation, r.merge),
            (0.0, 0.0, 0.0, 0.0, 0.0)
        );

        // Fragmentation: two runs split one gt segment.
        let preds = vec![
            Segment::scored(1, 10.0, 14.0, 0.9),
            Segment::scored(1, 16.0, 20.0, 0.8),
        ];
        let r = ward_errors(&gt, &preds, fps, dur).unwrap();
        assert_eq!(r.fragmentation, 2.0);
        assert_eq!(
            (r.deletion, r.underfill, r.overfill, r.insertion, r.merge),
            (0.0, 0.0, 0.0, 0.0, 0.0)
        );

        // Merge: one prediction bridging two gt segments.
        let gt2 = vec![Segment::new(1, 10.0, 20.0), Segment::new(1, 30.0, 40.0)];
        let r = ward_errors(&gt2, &[Segment::scored(1, 10.0, 40.0, 0.9)], fps, dur).unwrap();
        assert_eq!(r.merge, 10.0);
        assert_eq!(
            (r.deletion, r.underfill, r.overfill, r.insertion, r.fragmentation),
            (0.0, 0.0, 0.0, 0.0, 0.0)
        );
    }

    #[test]
    fn ward_class_gt_duration_norm() {
        let gt = vec![Segment::new(1, 10.0, 20.0)];
        let r = ward_errors_with(&gt, &[], 1.0, 100.0, WardNorm::ClassGtDuration).unwrap();
        // 10 deleted frames over 10 gt frames -> 100%.
        assert_eq!(r.deletion, 100.0);
    }

    #[test]
    fn ap_exact_match_is_one_everywhere() {
        let gts = vec![Segment::new(1, 5.0, 9.0)];
        let preds = vec![Segment::scored(1, 5.0, 9.0, 0.7)];
        for tau in DEFAULT_TIOU_THRESHOLDS {
            assert_eq!(ap_at_tiou(&preds, &gts, 1, tau).unwrap(), Some(1.0));
        }
    }

    #[test]
    fn ap_hand_built_curve() {
        // One FP above one TP for a single gt: AP = 0.5.
        let gts = vec![Segment::new(1, 10.0, 20.0)];
        let preds = vec![
            Segment::scored(1, 50.0, 60.0, 0.9),
            Segment::scored(1, 10.0, 20.0, 0.8),
        ];
        assert_eq!(ap_at_tiou(&preds, &gts, 1, 0.5).unwrap(), Some(0.5));
    }

    #[test]
    fn ap_tiou_threshold_is_inclusive() {
        // tIoU exactly 0.5: pred [0, 10), gt [0, 15) -> 10/15; pick gt [5, 15)
        // vs pred [0,10): inter 5, union 15 -> 1/3. Use pred [0,10] gt [0,20]:
        // 10/20 = 0.5 exactly.
        let gts = vec![Segment::new(1, 0.0, 20.0)];
        let preds = vec![Segment::scored(1, 0.0, 10.0, 0.9)];
        assert_eq!(ap_at_tiou(&preds, &gts, 1, 0.5).unwrap(), Some(1.0));
        assert_eq!(ap_at_tiou(&preds, &gts, 1, 0.5 + 1e-9).unwrap(), Some(0.0));
    }

    #[test]
    fn ap_no_gt_conventions() {
        let preds = vec![Segment::scored(2, 0.0, 1.0, 0.5)];
        assert_eq!(ap_at_tiou(&preds, &[], 2, 0.5).unwrap(), Some(0.0));
        assert_eq!(ap_at_tiou(&[], &[], 2, 0.5).unwrap(), None);
    }

    #[test]
    fn mean_ap_examples() {
        let gts = vec![Segment::new(1, 0.0, 10.0), Segment::new(2, 20.0, 30.0)];
        let perfect = vec![
            Segment::scored(1, 0.0, 10.0, 0.9),
            Segment::scored(2, 20.0, 30.0, 0.8),
        ];
        let m = mean_ap(&perfect, &gts, &DEFAULT_TIOU_THRESHOLDS).unwrap();
        assert_eq!(m, 1.0);

        // Empty predictions, non-empty gt.
        let m = mean_ap(&[], &gts, &DEFAULT_TIOU_THRESHOLDS).unwrap();
        assert_eq!(m, 0.0);

        // One perfect class, one absent class: mean of 1.0 and 0.0.
        let half = vec![Segment::scored(1, 0.0, 10.0, 0.9)];
        let m = mean_ap(&half, &gts, &DEFAULT_TIOU_THRESHOLDS).unwrap();
        assert_eq!(m, 0.5);

        assert!(mean_ap(&perfect, &gts, &[]).is_err());
        assert!(mean_ap(&[], &[], &DEFAULT_TIOU_THRESHOLDS).is_err());
    }

    #[test]
    fn evaluate_sequences_pools_across_items() {
        let items = vec![
            EvalItem {
                gt: vec![Segment::new(1, 0.0, 10.0)],
                pred: vec![Segment::scored(1, 0.0, 10.0, 0.9)],
                fps: 2.0,
                duration: 60.0,
            },
            EvalItem {
                gt: vec![Segment::new(2, 5.0, 15.0)],
                pred: vec![Segment::scored(2, 5.0, 15.0, 0.8)],
                fps: 2.0,
                duration: 60.0,
            },
        ];
        let report = evaluate_sequences(&items, &DEFAULT_TIOU_THRESHOLDS).unwrap();
        assert_eq!(report.mean_ap, 1.0);
        assert_eq!(report.macro_avg.f1, 1.0);
        assert_eq!(report.misalignment, MisalignmentRatios::default());
        assert_eq!(report.per_class.len(), 2);
    }

    fn random_label_seq(
        rng: &mut impl rand::Rng,
        len: usize,
        classes: usize,
    ) -> Vec<usize> {
        // Runs of random labels, biased toward background.
        let mut v = Vec::with_capacity(len);
        while v.len() < len {
            let label = if rng.random_bool(0.5) {
                0
            } else {
                rng.random_range(1..=classes)
            };
            let run = rng.random_range(1..8).min(len - v.len());
            v.extend(std::iter::repeat_n(label, run));
        }
        v
    }

    #[test]
    fn prf_matches_brute_force_on_random_sequences() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(77);
        for _ in 0..50 {
            let len = rng.random_range(1..400);
            let gt = random_label_seq(&mut rng, len, 3);
            let pred = random_label_seq(&mut rng, len, 3);
            let fast = frame_confusion(&labels(gt.clone()), &labels(pred.clone())).unwrap();
            let slow = brute_force_prf(&gt, &pred);
            assert_eq!(fast.len(), slow.len());
            for (c, k) in &fast {
                assert_eq!((k.true_pos, k.false_pos, k.false_neg), slow[c]);
            }
        }
    }

    #[test]
    fn ward_partition_property_random() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(31);
        for _ in 0..60 {
            let len = rng.random_range(4..300);
            let gt = random_label_seq(&mut rng, len, 2);
            let pred = random_label_seq(&mut rng, len, 2);
            let counts = ward_counts(&labels(gt.clone()), &labels(pred.clone())).unwrap();
            for (c, k) in counts {
                let gt_only = gt
                    .iter()
                    .zip(&pred)
                    .filter(|(&g, &p)| g == c && p != c)
                    .count() as u64;
                let pred_only = gt
                    .iter()
                    .zip(&pred)
                    .filter(|(&g, &p)| g != c && p == c)
                    .count() as u64;
                assert_eq!(k.gt_side(), gt_only, "class {c}");
                assert_eq!(k.pred_side(), pred_only, "class {c}");
            }
        }
    }

    proptest! {
        #[test]
        fn ap_is_monotone_in_tau(seed in 0u64..300) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let gts: Vec<Segment> = (0..rng.random_range(1..6))
                .map(|_| {
                    let s = rng.random_range(0.0..80.0);
                    Segment::new(1, s, s + rng.random_range(1.0..10.0))
                })
                .collect();
            let preds: Vec<Segment> = (0..rng.random_range(1..8))
                .map(|_| {
                    let s = rng.random_range(0.0..80.0);
                    Segment::scored(1, s, s + rng.random_range(1.0..10.0), rng.random_range(0.0..1.0))
                })
                .collect();
            let mut prev = f64::INFINITY;
            for tau in [0.1, 0.3, 0.5, 0.7, 0.9] {
                let ap = ap_at_tiou(&preds, &gts, 1, tau).unwrap().unwrap();
                prop_assert!(ap <= prev + 1e-12);
                prev = ap;
            }
        }

        #[test]
        fn ap_is_rank_invariant(seed in 0u64..300) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let gts: Vec<Segment> = (0..rng.random_range(1..5))
                .map(|_| {
                    let s = rng.random_range(0.0..60.0);
                    Segment::new(1, s, s + rng.random_range(1.0..8.0))
                })
                .collect();
            let preds: Vec<Segment> = (0..rng.random_range(1..8))
                .map(|_| {
                    let s = rng.random_range(0.0..60.0);
                    Segment::scored(1, s, s + rng.random_range(1.0..8.0), rng.random_range(0.01..0.99))
                })
                .collect();
            let base = ap_at_tiou(&preds, &gts, 1, 0.4).unwrap();
            // Positive monotone transforms preserve the ranking.
            let squashed: Vec<Segment> = preds
                .iter()
                .map(|s| Segment::scored(s.class_id, s.start, s.end, 0.1 + 0.5 * s.score.unwrap()))
                .collect();
            prop_assert_eq!(base, ap_at_tiou(&squashed, &gts, 1, 0.4).unwrap());
            let squared: Vec<Segment> = preds
                .iter()
                .map(|s| Segment::scored(s.class_id, s.start, s.end, s.score.unwrap().powi(2)))
                .collect();
            prop_assert_eq!(base, ap_at_tiou(&squared, &gts, 1, 0.4).unwrap());
        }
    }
}
