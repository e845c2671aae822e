use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

use crate::error::{Error, Result};
use crate::proposals::ProposalSet;
use crate::segment::{percentile, tiou, BagLabel};

/// Default tIoU for propagating a seed label to neighboring proposals.
pub const DEFAULT_IOU_POS: f64 = 0.5;
/// Default tIoU for linking proposals into clusters.
pub const DEFAULT_IOU_CLUSTER: f64 = 0.4;
/// Bag probabilities from proposal scoring are clamped into
/// `[EPS, 1 - EPS]` before any log-loss sees them.
pub const BAG_CLAMP_EPS: f64 = 1e-6;

/// Attention-weighted mean over time: `y_c = sum_t a_t p_tc / sum_t a_t`.
///
/// `probs` is T x C with entries in [0, 1]; `alpha` holds T non-negative
/// weights. Errors if shapes disagree, a weight is negative, or all weights
/// are zero.
pub fn attention_pool(probs: ArrayView2<f64>, alpha: ArrayView1<f64>) -> Result<Array1<f64>> {
    if probs.nrows() != alpha.len() {
        return Err(Error::shape(format!(
            "attention_pool: {} rows vs {} weights",
            probs.nrows(),
            alpha.len()
        )));
    }
    if alpha.iter().any(|&a| a < 0.0) {
        return Err(Error::invalid("attention_pool: negative attention weight"));
    }
    let denom: f64 = alpha.sum();
    if denom <= 0.0 {
        return Err(Error::invalid("attention_pool: all attention weights are zero"));
    }
    let weighted = probs.to_owned() * &alpha.insert_axis(Axis(1));
    Ok(weighted.sum_axis(Axis(0)) / denom)
}

/// Column-wise maximum over time. An empty input pools to all zeros.
pub fn max_pool(probs: ArrayView2<f64>) -> Array1<f64> {
    let c = probs.ncols();
    let mut out = Array1::zeros(c);
    for row in probs.rows() {
        for (j, &v) in row.iter().enumerate() {
            if v > out[j] {
                out[j] = v;
            }
        }
    }
    out
}

/// Linear-softmax pooling: `y_c = sum_t p_tc^2 / sum_t p_tc`, which weights
/// each frame by its own activation. Columns that are identically zero pool
/// to zero.
pub fn linear_softmax_pool(probs: ArrayView2<f64>) -> Array1<f64> {
    let c = probs.ncols();
    let mut out = Array1::zeros(c);
    for j in 0..c {
        let col = probs.column(j);
        let denom: f64 = col.sum();
        if denom > 0.0 {
            out[j] = col.iter().map(|&v| v * v).sum::<f64>() / denom;
        }
    }
    out
}

fn softmax_lane(mut xs: ndarray::ArrayViewMut1<f64>) {
    let max = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in xs.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    xs.mapv_inplace(|x| x / sum);
}

/// Dual-stream proposal scoring: classification logits are softmaxed across
/// classes (per proposal), detection logits across proposals (per class),
/// and the element-wise product scores each proposal. The bag score per
/// class is the sum over proposals, clamped into `[BAG_CLAMP_EPS, 1 - BAG_CLAMP_EPS]`.
///
/// Returns `(proposal_scores, bag_scores)` for P x C logit matrices.
pub fn wsddn_score(
    cls_logits: ArrayView2<f64>,
    det_logits: ArrayView2<f64>,
) -> Result<(Array2<f64>, Array1<f64>)> {
    if cls_logits.dim() != det_logits.dim() {
        return Err(Error::shape(format!(
            "wsddn_score: {:?} vs {:?}",
            cls_logits.dim(),
            det_logits.dim()
        )));
    }
    let (p, c) = cls_logits.dim();
    if p == 0 || c == 0 {
        return Err(Error::invalid("wsddn_score: empty logit matrix"));
    }
    let mut cls = cls_logits.to_owned();
    for row in cls.rows_mut() {
        softmax_lane(row);
    }
    let mut det = det_logits.to_owned();
    for col in det.columns_mut() {
        softmax_lane(col);
    }
    let scores = cls * &det;
    let bag = scores
        .sum_axis(Axis(0))
        .mapv(|v| v.clamp(BAG_CLAMP_EPS, 1.0 - BAG_CLAMP_EPS));
    Ok((scores, bag))
}

/// Per-proposal pseudo labels: `assignments[p]` is a 1-based class id or 0
/// for background, `weights[p]` the confidence a training loss should give
/// that proposal.
#[derive(Debug, Clone, PartialEq)]
pub struct PseudoLabels {
    pub assignments: Vec<usize>,
    pub weights: Vec<f64>,
}

fn check_pseudo_inputs(
    prev_scores: &ArrayView2<f64>,
    proposals: &ProposalSet,
    bag: &BagLabel,
) -> Result<()> {
    if prev_scores.nrows() != proposals.len() {
        return Err(Error::shape(format!(
            "{} score rows vs {} proposals",
            prev_scores.nrows(),
            proposals.len()
        )));
    }
    if prev_scores.ncols() != bag.num_classes() {
        return Err(Error::shape(format!(
            "{} score columns vs {} classes",
            prev_scores.ncols(),
            bag.num_classes()
        )));
    }
    Ok(())
}

/// Seed-and-propagate refinement: for each positive bag class the highest
/// scoring proposal becomes the seed, and every proposal within `iou_pos`
/// tIoU of the seed inherits the class with the seed's score as weight.
///
/// When seeds of several classes claim one proposal, the higher seed score
/// wins (ties go to the lower class id). Unclaimed proposals are background
/// with weight 1.
pub fn oicr_refine(
    prev_scores: ArrayView2<f64>,
    proposals: &ProposalSet,
    bag: &BagLabel,
    iou_pos: f64,
) -> Result<PseudoLabels> {
    check_pseudo_inputs(&prev_scores, proposals, bag)?;
    let p = proposals.len();
    let mut assignments = vec![0usize; p];
    let mut weights = vec![1.0f64; p];
    let mut claim_score = vec![f64::NEG_INFINITY; p];

    for class_id in bag.positive_classes() {
        let col = prev_scores.column(class_id - 1);
        let Some(seed) = argmax(col) else { continue };
        let seed_score = col[seed];
        let seed_iv = proposals.interval(seed);
        for q in 0..p {
            if tiou(proposals.interval(q), seed_iv) >= iou_pos && seed_score > claim_score[q] {
                assignments[q] = class_id;
                weights[q] = seed_score;
                claim_score[q] = seed_score;
            }
        }
    }
    Ok(PseudoLabels {
        assignments,
        weights,
    })
}

fn argmax(col: ArrayView1<f64>) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &v) in col.iter().enumerate() {
        match best {
            Some((_, bv)) if v <= bv => {}
            _ => best = Some((i, v)),
        }
    }
    best.map(|(i, _)| i)
}

/// Cluster-based pseudo labels: per positive class, proposals scoring
/// strictly above the class median form a graph with edges at
/// tIoU >= `iou_cluster`; each connected component is a cluster whose
/// members share the class label with weight = mean member score.
///
/// Returns the clusters (member indices ascending, ordered by class then
/// first member) alongside the per-proposal labels. Cross-class conflicts
/// resolve to the higher cluster weight, ties to the lower class id.
pub fn pcl_cluster(
    prev_scores: ArrayView2<f64>,
    proposals: &ProposalSet,
    bag: &BagLabel,
    iou_cluster: f64,
) -> Result<(Vec<Vec<usize>>, PseudoLabels)> {
    check_pseudo_inputs(&prev_scores, proposals, bag)?;
    let p = proposals.len();
    let mut assignments = vec![0usize; p];
    let mut weights = vec![1.0f64; p];
    let mut claim_weight = vec![f64::NEG_INFINITY; p];
    let mut clusters: Vec<Vec<usize>> = Vec::new();

    for class_id in bag.positive_classes() {
        let col = prev_scores.column(class_id - 1);
        let mut sorted: Vec<f64> = col.iter().cloned().collect();
        sorted.sort_by(f64::total_cmp);
        if sorted.is_empty() {
            continue;
        }
        let median = percentile(&sorted, 50.0);
        let members: Vec<usize> = (0..p).filter(|&i| col[i] > median).collect();
        if members.is_empty() {
            continue;
        }
        // Connected components among the members at tIoU >= iou_cluster.
        let mut component = vec![usize::MAX; members.len()];
        let mut next = 0usize;
        for i in 0..members.len() {
            if component[i] != usize::MAX {
                continue;
            }
            let mut stack = vec![i];
            component[i] = next;
            while let Some(u) = stack.pop() {
                for v in 0..members.len() {
                    if component[v] == usize::MAX
                        && tiou(
                            proposals.interval(members[u]),
                            proposals.interval(members[v]),
                        ) >= iou_cluster
                    {
                        component[v] = next;
                        stack.push(v);
                    }
                }
            }
            next += 1;
        }
        for comp in 0..next {
            let cluster: Vec<usize> = members
                .iter()
                .zip(&component)
                .filter(|(_, &c)| c == comp)
                .map(|(&m, _)| m)
                .collect();
            let weight =
                cluster.iter().map(|&m| col[m]).sum::<f64>() / cluster.len() as f64;
            for &m in &cluster {
                if weight > claim_weight[m] {
                    assignments[m] = class_id;
                    weights[m] = weight;
                    claim_weight[m] = weight;
                }
            }
            clusters.push(cluster);
        }
    }
    Ok((clusters, PseudoLabels {
        assignments,
        weights,
    }))
}

/// Row-normalizes an affinity matrix; rows that sum to zero become identity
/// rows so isolated nodes keep their own scores under propagation.
fn normalize_rows(affinity: ArrayView2<f64>) -> Array2<f64> {
    let mut norm = affinity.to_owned();
    for (i, mut row) in norm.rows_mut().into_iter().enumerate() {
        let sum: f64 = row.sum();
        if sum > 0.0 {
            row.mapv_inplace(|v| v / sum);
        } else {
            row.fill(0.0);
            row[i] = 1.0;
        }
    }
    norm
}

/// Iterative knowledge propagation over proposals:
/// `S <- (1 - alpha) * S0 + alpha * A_norm . S`, run `steps` times from
/// `S = S0`, where `A_norm` is the row-normalized affinity. Converges to
/// `(1 - alpha) * (I - alpha * A_norm)^-1 . S0` for `0 <= alpha < 1`.
pub fn rskp_propagate(
    s0: ArrayView2<f64>,
    affinity: ArrayView2<f64>,
    alpha: f64,
    steps: usize,
) -> Result<Array2<f64>> {
    let p = s0.nrows();
    if affinity.dim() != (p, p) {
        return Err(Error::shape(format!(
            "rskp_propagate: affinity {:?} vs {} proposals",
            affinity.dim(),
            p
        )));
    }
    if !(0.0..1.0).contains(&alpha) {
        return Err(Error::invalid(format!(
            "rskp_propagate: alpha must lie in [0, 1), got {alpha}"
        )));
    }
    if affinity.iter().any(|&a| a < 0.0) {
        return Err(Error::invalid("rskp_propagate: negative affinity"));
    }
    let norm = normalize_rows(affinity);
    let base = s0.mapv(|v| v * (1.0 - alpha));
    let mut s = s0.to_owned();
    for _ in 0..steps {
        s = &base + &(norm.dot(&s) * alpha);
    }
    Ok(s)
}

/// Default proposal affinity: `A_ij = exp(-|c_i - c_j| / sigma)` for
/// temporally overlapping boxes (tIoU > 0) and 0 otherwise, where `c` is the
/// box center and `sigma` the median pairwise center distance (1 if that
/// median is zero or there is a single box).
pub fn temporal_affinity(boxes: &[[usize; 2]]) -> Array2<f64> {
    let p = boxes.len();
    let centers: Vec<f64> = boxes.iter().map(|b| (b[0] + b[1]) as f64 / 2.0).collect();
    let mut gaps: Vec<f64> = Vec::with_capacity(p * (p.saturating_sub(1)) / 2);
    for i in 0..p {
        for j in (i + 1)..p {
            gaps.push((centers[i] - centers[j]).abs());
        }
    }
    gaps.sort_by(f64::total_cmp);
    let sigma = if gaps.is_empty() {
        1.0
    } else {
        let m = percentile(&gaps, 50.0);
        if m > 0.0 {
            m
        } else {
            1.0
        }
    };
    let mut a = Array2::zeros((p, p));
    for i in 0..p {
        for j in 0..p {
            let iv_i = (boxes[i][0] as f64, boxes[i][1] as f64);
            let iv_j = (boxes[j][0] as f64, boxes[j][1] as f64);
            if tiou(iv_i, iv_j) > 0.0 {
                a[[i, j]] = (-(centers[i] - centers[j]).abs() / sigma).exp();
            }
        }
    }
    a
}

/// Loss value and analytic gradients of the snippet contrast.
#[derive(Debug, Clone)]
pub struct ColaLoss {
    pub loss: f64,
    pub grad_anchor: Vec<f64>,
    pub grad_positive: Vec<f64>,
    pub grad_negatives: Vec<Vec<f64>>,
}

fn cosine_sim(u: &[f64], v: &[f64]) -> Result<(f64, f64, f64)> {
    let nu = u.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nv = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if nu == 0.0 || nv == 0.0 {
        return Err(Error::invalid("cosine similarity of a zero vector"));
    }
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    Ok((dot / (nu * nv), nu, nv))
}

/// d sim(u, v) / d u for cosine similarity.
fn cosine_grad_u(u: &[f64], v: &[f64], sim: f64, nu: f64, nv: f64) -> Vec<f64> {
    u.iter()
        .zip(v)
        .map(|(&ui, &vi)| vi / (nu * nv) - sim * ui / (nu * nu))
        .collect()
}

/// Temperature-scaled contrast of one anchor snippet against a positive and
/// a set of negatives using cosine similarity:
/// `L = -log( e^{s_p/tau} / (e^{s_p/tau} + sum_n e^{s_n/tau}) )`.
///
/// Returns the loss with analytic gradients for every input vector. With no
/// negatives the loss is exactly 0. Errors on a zero-norm vector,
/// non-positive `tau`, or mismatched dimensions.
pub fn cola_loss(
    anchor: &[f64],
    positive: &[f64],
    negatives: &[Vec<f64>],
    tau: f64,
) -> Result<ColaLoss> {
    if !(tau > 0.0) {
        return Err(Error::invalid(format!("tau must be positive, got {tau}")));
    }
    if anchor.is_empty() || positive.len() != anchor.len() {
        return Err(Error::shape(format!(
            "cola_loss: anchor dim {} vs positive dim {}",
            anchor.len(),
            positive.len()
        )));
    }
    for (i, n) in negatives.iter().enumerate() {
        if n.len() != anchor.len() {
            return Err(Error::shape(format!(
                "cola_loss: negative {i} has dim {} vs {}",
                n.len(),
                anchor.len()
            )));
        }
    }

    let (sim_p, na, np) = cosine_sim(anchor, positive)?;
    let mut sims_n = Vec::with_capacity(negatives.len());
    let mut norms_n = Vec::with_capacity(negatives.len());
    for n in negatives {
        let (s, _, nn) = cosine_sim(anchor, n)?;
        sims_n.push(s);
        norms_n.push(nn);
    }

    // L = -a_p + logsumexp(a_p, a_n..), a = sim / tau.
    let a_p = sim_p / tau;
    let mut max_a = a_p;
    for &s in &sims_n {
        max_a = max_a.max(s / tau);
    }
    let e_p = (a_p - max_a).exp();
    let mut z = e_p;
    for &s in &sims_n {
        z += (s / tau - max_a).exp();
    }
    let loss = z.ln() + max_a - a_p;

    // Softmax responsibilities; dL/d a_p = sigma_p - 1, dL/d a_n = sigma_n.
    let sigma_p = e_p / z;
    let d_sim_p = (sigma_p - 1.0) / tau;

    let mut grad_anchor = cosine_grad_u(anchor, positive, sim_p, na, np)
        .into_iter()
        .map(|g| g * d_sim_p)
        .collect::<Vec<_>>();
    let grad_positive = cosine_grad_u(positive, anchor, sim_p, np, na)
        .into_iter()
        .map(|g| g * d_sim_p)
        .collect::<Vec<_>>();

    let mut grad_negatives = Vec::with_capacity(negatives.len());
    for ((n, &s_n), &nn) in negatives.iter().zip(&sims_n).zip(&norms_n) {
        let sigma_n = (s_n / tau - max_a).exp() / z;
        let d_sim_n = sigma_n / tau;
        for (ga, gn) in grad_anchor
            .iter_mut()
            .zip(cosine_grad_u(anchor, n, s_n, na, nn))
        {
            *ga += d_sim_n * gn;
        }
        grad_negatives.push(
            cosine_grad_u(n, anchor, s_n, nn, na)
                .into_iter()
                .map(|g| g * d_sim_n)
                .collect(),
        );
    }

    Ok(ColaLoss {
        loss,
        grad_anchor,
        grad_positive,
        grad_negatives,
    })
}

/// Mean binary cross-entropy between bag predictions and the multi-hot bag
/// label, with its gradient. Predictions must lie strictly inside (0, 1);
/// a prediction at exactly 0 or 1 is rejected rather than silently clamped.
pub fn bce_bag_loss(pred: &[f64], bag: &BagLabel) -> Result<(f64, Vec<f64>)> {
    if pred.len() != bag.num_classes() {
        return Err(Error::shape(format!(
            "bce_bag_loss: {} predictions vs {} classes",
            pred.len(),
            bag.num_classes()
        )));
    }
    if pred.is_empty() {
        return Err(Error::invalid("bce_bag_loss: empty prediction"));
    }
    for &p in pred {
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::invalid(format!(
                "bce_bag_loss: prediction {p} outside the open interval (0, 1)"
            )));
        }
    }
    let c = pred.len() as f64;
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(pred.len());
    for (&p, y) in pred.iter().zip(bag.targets()) {
        loss -= y * p.ln() + (1.0 - y) * (1.0 - p).ln();
        grad.push((p - y) / (p * (1.0 - p)) / c);
    }
    Ok((loss / c, grad))
}
