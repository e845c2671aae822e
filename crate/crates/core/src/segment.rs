use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A temporal interval of one action class, in seconds.
///
/// `class_id` is 1-based; 0 is reserved for the background (null) class and
/// never appears in a segment. `score` is present on predictions and absent
/// on ground truth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub class_id: usize,
    pub start: f64,
    pub end: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
}

impl Segment {
    /// An unscored (ground-truth) segment.
    pub fn new(class_id: usize, start: f64, end: f64) -> Self {
        Segment {
            class_id,
            start,
            end,
            score: None,
        }
    }

    /// A scored (predicted) segment.
    pub fn scored(class_id: usize, start: f64, end: f64, score: f64) -> Self {
        Segment {
            class_id,
            start,
            end,
            score: Some(score),
        }
    }

    pub fn duration(&self) -> f64 {
        self.end - self.start
    }

    pub fn interval(&self) -> (f64, f64) {
        (self.start, self.end)
    }
}

/// Temporal intersection-over-union of two intervals `(start, end)`.
///
/// Returns 0 when the union is empty. Inputs are expected to satisfy
/// `start <= end`.
pub fn tiou(a: (f64, f64), b: (f64, f64)) -> f64 {
    let inter = (a.1.min(b.1) - a.0.max(b.0)).max(0.0);
    let union = (a.1 - a.0) + (b.1 - b.0) - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// One recorded stream: identity, timing, and ground-truth segments.
///
/// `num_classes` counts action classes only; the background class 0 is
/// implicit. Ground-truth segments of different classes must not overlap.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceRecord {
    pub sequence_id: String,
    pub subject_id: String,
    pub fps: f64,
    pub duration: f64,
    pub channels: usize,
    pub num_classes: usize,
    pub gt: Vec<Segment>,
}

impl SequenceRecord {
    /// Checks the documented invariants of the record.
    pub fn validate(&self) -> Result<()> {
        if !(self.fps > 0.0) {
            return Err(Error::invalid(format!(
                "sequence {}: fps must be positive, got {}",
                self.sequence_id, self.fps
            )));
        }
        if !(self.duration > 0.0) {
            return Err(Error::invalid(format!(
                "sequence {}: duration must be positive, got {}",
                self.sequence_id, self.duration
            )));
        }
        if self.channels == 0 || self.num_classes == 0 {
            return Err(Error::invalid(format!(
                "sequence {}: channels and num_classes must be at least 1",
                self.sequence_id
            )));
        }
        for seg in &self.gt {
            if seg.class_id == 0 || seg.class_id > self.num_classes {
                return Err(Error::invalid(format!(
                    "sequence {}: class_id {} outside 1..={}",
                    self.sequence_id, seg.class_id, self.num_classes
                )));
            }
            if !(seg.start < seg.end) || seg.start < 0.0 || seg.end > self.duration + 1e-9 {
                return Err(Error::invalid(format!(
                    "sequence {}: segment [{}, {}) outside [0, {})",
                    self.sequence_id, seg.start, seg.end, self.duration
                )));
            }
        }
        // Different classes may not overlap in the ground truth.
        let mut sorted: Vec<&Segment> = self.gt.iter().collect();
        sorted.sort_by(|a, b| a.start.total_cmp(&b.start));
        for w in sorted.windows(2) {
            if w[1].start < w[0].end - 1e-9 && w[0].class_id != w[1].class_id {
                return Err(Error::invalid(format!(
                    "sequence {}: ground-truth segments of classes {} and {} overlap",
                    self.sequence_id, w[0].class_id, w[1].class_id
                )));
            }
        }
        Ok(())
    }
}

/// Per-frame class labels at a fixed rate; 0 is background.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameLabelSequence {
    pub labels: Vec<usize>,
    pub fps: f64,
}

impl FrameLabelSequence {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Converts segments into a per-frame label sequence of `round(duration*fps)`
/// frames. Frame `t` is covered by a segment iff `start <= t/fps < end`.
///
/// Conflicts between different classes are resolved by the higher score; if
/// either conflicting segment is unscored the labeling is ambiguous and an
/// error is returned. Equal scores keep the segment that sorts first by
/// `(start, class_id, end)`. Same-class overlap is never a conflict.
pub fn rasterize(segments: &[Segment], fps: f64, duration: f64) -> Result<FrameLabelSequence> {
    if !(fps > 0.0) {
        return Err(Error::invalid(format!("fps must be positive, got {fps}")));
    }
    if !(duration >= 0.0) {
        return Err(Error::invalid(format!(
            "duration must be non-negative, got {duration}"
        )));
    }
    let total = (duration * fps).round() as usize;
    let mut labels = vec![0usize; total];
    // Index of the segment that claimed each frame, or usize::MAX.
    let mut claimed = vec![usize::MAX; total];

    let mut order: Vec<usize> = (0..segments.len()).collect();
    order.sort_by(|&i, &j| {
        let (a, b) = (&segments[i], &segments[j]);
        a.start
            .total_cmp(&b.start)
            .then(a.class_id.cmp(&b.class_id))
            .then(a.end.total_cmp(&b.end))
    });

    for &idx in &order {
        let seg = &segments[idx];
        let first = ((seg.start * fps) - 1e-9).ceil().max(0.0) as usize;
        let last_excl = (((seg.end * fps) - 1e-9).ceil().max(0.0) as usize).min(total);
        for t in first..last_excl {
            let prev = claimed[t];
            if prev == usize::MAX {
                labels[t] = seg.class_id;
                claimed[t] = idx;
            } else if labels[t] != seg.class_id {
                let a = &segments[prev];
                match (a.score, seg.score) {
                    (Some(sa), Some(sb)) => {
                        if sb > sa {
                            labels[t] = seg.class_id;
                            claimed[t] = idx;
                        }
                    }
                    _ => {
                        return Err(Error::AmbiguousGroundTruth {
                            class_a: labels[t],
                            class_b: seg.class_id,
                            frame: t,
                        });
                    }
                }
            }
        }
    }
    Ok(FrameLabelSequence { labels, fps })
}

/// Multi-hot bag label over action classes 1..=C.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BagLabel {
    pub present: Vec<bool>,
}

impl BagLabel {
    pub fn new(num_classes: usize) -> Self {
        BagLabel {
            present: vec![false; num_classes],
        }
    }

    pub fn num_classes(&self) -> usize {
        self.present.len()
    }

    /// Whether class `class_id` (1-based) is present in the bag.
    pub fn is_positive(&self, class_id: usize) -> bool {
        class_id >= 1 && class_id <= self.present.len() && self.present[class_id - 1]
    }

    /// 1-based ids of the positive classes, ascending.
    pub fn positive_classes(&self) -> Vec<usize> {
        self.present
            .iter()
            .enumerate()
            .filter(|(_, &p)| p)
            .map(|(i, _)| i + 1)
            .collect()
    }

    /// The label vector as 0.0/1.0 targets indexed by class-1.
    pub fn targets(&self) -> Vec<f64> {
        self.present
            .iter()
            .map(|&p| if p { 1.0 } else { 0.0 })
            .collect()
    }
}

/// The weak (bag-level) label of a set of segments: which of the classes
/// 1..=`num_classes` occur at all.
pub fn bag_label_of(segments: &[Segment], num_classes: usize) -> BagLabel {
    let mut bag = BagLabel::new(num_classes);
    for seg in segments {
        debug_assert!(seg.class_id >= 1 && seg.class_id <= num_classes);
        if seg.class_id >= 1 && seg.class_id <= num_classes {
            bag.present[seg.class_id - 1] = true;
        }
    }
    bag
}

/// The weak (bag-level) label of a sequence.
pub fn bag_label(record: &SequenceRecord) -> BagLabel {
    bag_label_of(&record.gt, record.num_classes)
}

/// Summary statistics of segment durations, in seconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DurationProfile {
    pub count: usize,
    pub mean: f64,
    pub std: f64,
    pub p5: f64,
    pub median: f64,
    pub p95: f64,
}

/// Linear-interpolation percentile of sorted data: index `h = (n-1)*p/100`,
/// interpolating between the two nearest ranks.
pub fn percentile(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty(), "percentile of empty slice");
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * (p / 100.0);
    let lo = h.floor().min((n - 1) as f64).max(0.0) as usize;
    let hi = (lo + 1).min(n - 1);
    let frac = h - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

/// Duration statistics (population std, interpolated percentiles) over a
/// non-empty set of segments.
pub fn profile_durations(segments: &[Segment]) -> Result<DurationProfile> {
    if segments.is_empty() {
        return Err(Error::invalid("cannot profile an empty segment list"));
    }
    let mut durs: Vec<f64> = segments.iter().map(Segment::duration).collect();
    durs.sort_by(f64::total_cmp);
    let n = durs.len() as f64;
    let mean = durs.iter().sum::<f64>() / n;
    let var = durs.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / n;
    Ok(DurationProfile {
        count: durs.len(),
        mean,
        std: var.sqrt(),
        p5: percentile(&durs, 5.0),
        median: percentile(&durs, 50.0),
        p95: percentile(&durs, 95.0),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn tiou_basic() {
        assert_eq!(tiou((0.0, 1.0), (0.0, 1.0)), 1.0);
        assert_eq!(tiou((0.0, 1.0), (2.0, 3.0)), 0.0);
        assert!((tiou((0.0, 2.0), (1.0, 3.0)) - 1.0 / 3.0).abs() < 1e-12);
        // Touching intervals share no time.
        assert_eq!(tiou((0.0, 1.0), (1.0, 2.0)), 0.0);
        // Degenerate intervals have empty union.
        assert_eq!(tiou((1.0, 1.0), (1.0, 1.0)), 0.0);
    }

    #[test]
    fn rasterize_covers_half_open_intervals() {
        // 10 fps, frame t covered iff start <= t/10 < end.
        let segs = [Segment::new(1, 0.25, 0.5)];
        let fl = rasterize(&segs, 10.0, 1.0).unwrap();
        // t/10 in [0.25, 0.5) -> t in {3, 4}.
        assert_eq!(fl.labels, vec![0, 0, 0, 1, 1, 0, 0, 0, 0, 0]);
    }

    #[test]
    fn rasterize_is_exact_on_frame_boundaries() {
        let segs = [Segment::new(2, 0.2, 0.4)];
        let fl = rasterize(&segs, 50.0, 1.0).unwrap();
        let on: Vec<usize> = (0..50).filter(|&t| fl.labels[t] == 2).collect();
        // 0.2*50 = 10 and 0.4*50 = 20 despite float noise.
        assert_eq!(on, (10..20).collect::<Vec<_>>());
    }

    #[test]
    fn rasterize_rejects_unscored_cross_class_overlap() {
        let segs = [Segment::new(1, 0.0, 1.0), Segment::new(2, 0.5, 1.5)];
        let err = rasterize(&segs, 10.0, 2.0).unwrap_err();
        assert!(matches!(err, Error::AmbiguousGroundTruth { .. }));
    }

    #[test]
    fn rasterize_resolves_scored_overlap_by_score() {
        let segs = [
            Segment::scored(1, 0.0, 1.0, 0.3),
            Segment::scored(2, 0.5, 1.5, 0.9),
        ];
        let fl = rasterize(&segs, 10.0, 2.0).unwrap();
        assert_eq!(&fl.labels[..5], &[1, 1, 1, 1, 1]);
        assert_eq!(&fl.labels[5..15], &[2; 10]);
        assert_eq!(&fl.labels[15..], &[0; 5]);
    }

    #[test]
    fn rasterize_errors_on_mixed_scored_unscored_overlap() {
        let segs = [
            Segment::new(1, 0.0, 1.0),
            Segment::scored(2, 0.5, 1.5, 0.9),
        ];
        assert!(matches!(
            rasterize(&segs, 10.0, 2.0),
            Err(Error::AmbiguousGroundTruth { .. })
        ));
    }

    #[test]
    fn rasterize_same_class_overlap_is_fine() {
        let segs = [Segment::new(1, 0.0, 1.0), Segment::new(1, 0.5, 1.5)];
        let fl = rasterize(&segs, 10.0, 2.0).unwrap();
        assert_eq!(fl.labels.iter().filter(|&&l| l == 1).count(), 15);
    }

    #[test]
    fn bag_label_is_multi_hot() {
        let rec = SequenceRecord {
            sequence_id: "s".into(),
            subject_id: "u".into(),
            fps: 10.0,
            duration: 10.0,
            channels: 3,
            num_classes: 4,
            gt: vec![
                Segment::new(2, 0.0, 1.0),
                Segment::new(2, 3.0, 4.0),
                Segment::new(4, 5.0, 6.0),
            ],
        };
        let bag = bag_label(&rec);
        assert_eq!(bag.present, vec![false, true, false, true]);
        assert_eq!(bag.positive_classes(), vec![2, 4]);
        assert!(bag.is_positive(2) && !bag.is_positive(1));
    }

    #[test]
    fn percentiles_use_linear_interpolation() {
        let xs: Vec<f64> = (1..=100).map(|i| i as f64).collect();
        let prof = profile_durations(
            &xs.iter()
                .map(|&d| Segment::new(1, 0.0, d))
                .collect::<Vec<_>>(),
        )
        .unwrap();
        assert_eq!(prof.count, 100);
        assert!((prof.p5 - 5.95).abs() < 1e-12);
        assert!((prof.median - 50.5).abs() < 1e-12);
        assert!((prof.p95 - 95.05).abs() < 1e-12);
        assert!((prof.mean - 50.5).abs() < 1e-12);
    }

    #[test]
    fn profile_rejects_empty() {
        assert!(profile_durations(&[]).is_err());
    }

    #[test]
    fn validate_rejects_cross_class_gt_overlap() {
        let rec = SequenceRecord {
            sequence_id: "s".into(),
            subject_id: "u".into(),
            fps: 10.0,
            duration: 10.0,
            channels: 1,
            num_classes: 2,
            gt: vec![Segment::new(1, 0.0, 2.0), Segment::new(2, 1.0, 3.0)],
        };
        assert!(rec.validate().is_err());
    }

    proptest! {
        #[test]
        fn tiou_is_symmetric_and_bounded(
            s1 in 0.0..100.0f64, d1 in 0.0..50.0f64,
            s2 in 0.0..100.0f64, d2 in 0.0..50.0f64,
        ) {
            let a = (s1, s1 + d1);
            let b = (s2, s2 + d2);
            let ab = tiou(a, b);
            let ba = tiou(b, a);
            prop_assert!((ab - ba).abs() < 1e-12);
            prop_assert!((0.0..=1.0).contains(&ab));
            if d1 > 0.0 {
                prop_assert!((tiou(a, a) - 1.0).abs() < 1e-12);
            }
        }

        #[test]
        fn rasterize_frame_count_matches_duration(
            start_frames in 0usize..200,
            len_frames in 1usize..100,
            fps in prop::sample::select(vec![10.0, 25.0, 50.0, 100.0]),
        ) {
            // Frame-aligned segments rasterize to exactly their frame count.
            let start = start_frames as f64 / fps;
            let end = (start_frames + len_frames) as f64 / fps;
            let seg = Segment::new(1, start, end);
            let duration = 300.0 / fps * 2.0;
            let fl = rasterize(&[seg], fps, duration).unwrap();
            let covered = fl.labels.iter().filter(|&&l| l == 1).count();
            prop_assert_eq!(covered, len_frames.min(fl.len().saturating_sub(start_frames)));
        }
    }
}
