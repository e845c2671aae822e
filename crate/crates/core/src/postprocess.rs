use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::segment::{tiou, Segment};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NmsConfig {
    /// Segments with tIoU >= this against a kept segment are suppressed.
    pub iou_thresh: f64,
    /// Suppress only within the same class (default) or across classes.
    pub class_wise: bool,
}

impl Default for NmsConfig {
    fn default() -> Self {
        NmsConfig {
            iou_thresh: 0.5,
            class_wise: true,
        }
    }
}

fn require_scores(segments: &[Segment]) -> Result<()> {
    if segments.iter().any(|s| s.score.is_none()) {
        return Err(Error::invalid("expected scored segments"));
    }
    Ok(())
}

/// Greedy priority order: higher score first, ties by earlier start, lower
/// class id, then earlier end.
fn priority(a: &Segment, b: &Segment) -> std::cmp::Ordering {
    b.score
        .unwrap()
        .total_cmp(&a.score.unwrap())
        .then(a.start.total_cmp(&b.start))
        .then(a.class_id.cmp(&b.class_id))
        .then(a.end.total_cmp(&b.end))
}

/// Greedy temporal non-maximum suppression: repeatedly keep the
/// highest-priority remaining segment and discard every remaining segment
/// (of the same class when `class_wise`) with tIoU >= `iou_thresh` against
/// it. Output is sorted by start time; input order never matters.
pub fn temporal_nms(segments: &[Segment], cfg: &NmsConfig) -> Result<Vec<Segment>> {
    if !(cfg.iou_thresh > 0.0 && cfg.iou_thresh <= 1.0) {
        return Err(Error::invalid(format!(
            "iou_thresh must lie in (0, 1], got {}",
            cfg.iou_thresh
        )));
    }
    require_scores(segments)?;
    let mut order: Vec<&Segment> = segments.iter().collect();
    order.sort_by(|a, b| priority(a, b));

    let mut kept: Vec<Segment> = Vec::new();
    let mut suppressed = vec![false; order.len()];
    for i in 0..order.len() {
        if suppressed[i] {
            continue;
        }
        let keep = order[i];
        kept.push(*keep);
        for j in (i + 1)..order.len() {
            if suppressed[j] {
                continue;
            }
            let other = order[j];
            if (!cfg.class_wise || other.class_id == keep.class_id)
                && tiou(keep.interval(), other.interval()) >= cfg.iou_thresh
            {
                suppressed[j] = true;
            }
        }
    }
    kept.sort_by(|a, b| {
        a.start
            .total_cmp(&b.start)
            .then(a.class_id.cmp(&b.class_id))
            .then(a.end.total_cmp(&b.end))
    });
    Ok(kept)
}

/// Subtracts `blockers` from `(start, end)`, returning the uncovered pieces.
fn subtract(start: f64, end: f64, blockers: &[(f64, f64)]) -> Vec<(f64, f64)> {
    let mut pieces = vec![(start, end)];
    for &(bs, be) in blockers {
        let mut next = Vec::with_capacity(pieces.len() + 1);
        for (ps, pe) in pieces {
            if be <= ps || bs >= pe {
                next.push((ps, pe));
                continue;
            }
            if bs > ps {
                next.push((ps, bs));
            }
            if be < pe {
                next.push((be, pe));
            }
        }
        pieces = next;
    }
    pieces.retain(|(s, e)| e - s > 1e-9);
    pieces
}

/// Deterministic cleanup for display and frame metrics: (i) where segments
/// of different classes overlap, the higher-confidence segment keeps the
/// time and the lower-confidence one is truncated to its uncovered remainder
/// (possibly splitting, possibly vanishing); (ii) same-class segments that
/// touch or overlap merge into one segment scored by the max of its members.
///
/// The output has no cross-class overlap and no same-class adjacency, and
/// never covers more time than the input.
pub fn resolve_and_merge(segments: &[Segment]) -> Result<Vec<Segment>> {
    require_scores(segments)?;
    let mut order: Vec<&Segment> = segments.iter().collect();
    order.sort_by(|a, b| priority(a, b));

    // Step (i): claim time in priority order; later (weaker) segments keep
    // only what earlier claims left uncovered.
    let mut claimed: Vec<(f64, f64)> = Vec::new();
    let mut resolved: Vec<Segment> = Vec::new();
    for seg in order {
        for (s, e) in subtract(seg.start, seg.end, &claimed) {
            resolved.push(Segment {
                class_id: seg.class_id,
                start: s,
                end: e,
                score: seg.score,
            });
        }
        claimed.push((seg.start, seg.end));
    }

    // Step (ii): merge touching/overlapping same-class pieces.
    resolved.sort_by(|a, b| {
        a.class_id
            .cmp(&b.class_id)
            .then(a.start.total_cmp(&b.start))
    });
    let mut merged: Vec<Segment> = Vec::new();
    for seg in resolved {
        match merged.last_mut() {
            Some(last)
                if last.class_id == seg.class_id && seg.start <= last.end + 1e-9 =>
            {
                last.end = last.end.max(seg.end);
                last.score = Some(last.score.unwrap().max(seg.score.unwrap()));
            }
            _ => merged.push(seg),
        }
    }
    merged.sort_by(|a, b| {
        a.start
            .total_cmp(&b.start)
            .then(a.class_id.cmp(&b.class_id))
    });
    Ok(merged)
}
