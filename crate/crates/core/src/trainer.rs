use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mil::{bce_bag_loss, rskp_propagate, temporal_affinity};
use crate::postprocess::{temporal_nms, NmsConfig};
use crate::segment::{BagLabel, Segment};

/// Fixed-length clips over a stream of `total_frames` frames with a 50%
/// stride: clip k is `[k*round(0.5*window), k*round(0.5*window) + window)`
/// for every k whose clip ends within the stream. A trailing remainder
/// shorter than the stride is dropped.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClipIndex {
    pub clips: Vec<(usize, usize)>,
    pub window: usize,
    pub stride: usize,
}

pub fn make_clips(total_frames: usize, window: usize) -> Result<ClipIndex> {
    if window < 2 {
        return Err(Error::invalid(format!(
            "make_clips: window must be at least 2 frames, got {window}"
        )));
    }
    if total_frames < window {
        return Err(Error::invalid(format!(
            "make_clips: stream of {total_frames} frames is shorter than the {window}-frame window"
        )));
    }
    let stride = ((window as f64) * 0.5).round() as usize;
    let mut clips = Vec::new();
    let mut start = 0;
    while start + window <= total_frames {
        clips.push((start, start + window));
        start += stride;
    }
    Ok(ClipIndex {
        clips,
        window,
        stride,
    })
}

/// Handcrafted per-frame features from a channels x time signal: for each
/// channel, the mean, standard deviation, and mean absolute first difference
/// over a `win`-frame window centered on the frame (clamped at the stream
/// edges). Output is T x D with D = 3 * channels, feature triples grouped by
/// channel. `win` must be odd.
pub fn extract_features(signal: ArrayView2<f64>, win: usize) -> Result<Array2<f64>> {
    if win == 0 || win % 2 == 0 {
        return Err(Error::invalid(format!(
            "extract_features: window must be odd and positive, got {win}"
        )));
    }
    let (channels, t) = signal.dim();
    let half = win / 2;
    let mut feats = Array2::zeros((t, 3 * channels));
    for s in 0..channels {
        let row = signal.row(s);
        for i in 0..t {
            let lo = i.saturating_sub(half);
            let hi = (i + half + 1).min(t);
            let n = (hi - lo) as f64;
            let window = row.slice(ndarray::s![lo..hi]);
            let mean = window.sum() / n;
            let var = window.iter().map(|&x| (x - mean) * (x - mean)).sum::<f64>() / n;
            let mad = if hi - lo >= 2 {
                (lo + 1..hi)
                    .map(|j| (row[j] - row[j - 1]).abs())
                    .sum::<f64>()
                    / (hi - lo - 1) as f64
            } else {
                0.0
            };
            feats[[i, 3 * s]] = mean;
            feats[[i, 3 * s + 1]] = var.sqrt();
            feats[[i, 3 * s + 2]] = mad;
        }
    }
    Ok(feats)
}

/// A linear per-frame classifier with a scalar attention head: frame scores
/// `sigmoid(x W_cls + b_cls)` and attention `sigmoid(x w_att + b_att)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyModel {
    pub w_cls: Array2<f64>,
    pub b_cls: Array1<f64>,
    pub w_att: Array1<f64>,
    pub b_att: f64,
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl ToyModel {
    /// Small Gaussian initialization, deterministic per seed. Draw order is
    /// `w_cls` row-major, then `b_cls`, `w_att`, `b_att`.
    pub fn init(dim: usize, num_classes: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dist = Normal::new(0.0, 0.01).expect("valid normal");
        let draw = |rng: &mut ChaCha8Rng| dist.sample(rng);
        let w_cls = Array2::from_shape_fn((dim, num_classes), |_| draw(&mut rng));
        let b_cls = Array1::from_shape_fn(num_classes, |_| draw(&mut rng));
        let w_att = Array1::from_shape_fn(dim, |_| draw(&mut rng));
        let b_att = draw(&mut rng);
        ToyModel {
            w_cls,
            b_cls,
            w_att,
            b_att,
        }
    }

    pub fn feature_dim(&self) -> usize {
        self.w_cls.nrows()
    }

    pub fn num_classes(&self) -> usize {
        self.w_cls.ncols()
    }

    /// Class activation sequence: per-frame class probabilities, T x C.
    pub fn cas(&self, features: ArrayView2<f64>) -> Array2<f64> {
        let mut z = features.dot(&self.w_cls);
        z += &self.b_cls;
        z.mapv_into(sigmoid)
    }

    /// Per-frame attention weights in (0, 1).
    pub fn attention(&self, features: ArrayView2<f64>) -> Array1<f64> {
        let z = features.dot(&self.w_att) + self.b_att;
        z.mapv_into(sigmoid)
    }

    fn check_features(&self, features: &ArrayView2<f64>) -> Result<()> {
        if features.ncols() != self.feature_dim() {
            return Err(Error::shape(format!(
                "feature dim {} vs model dim {}",
                features.ncols(),
                self.feature_dim()
            )));
        }
        Ok(())
    }
}

/// How per-frame class probabilities aggregate into a bag prediction.
/// `Mean` is attention frozen uniform; it exists chiefly for convexity and
/// sanity checks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Pooling {
    Attention,
    Max,
    LinearSoftmax,
    Mean,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    /// Multiplicative learning-rate decay applied every `lr_decay_every`
    /// epochs.
    pub lr_decay: f64,
    pub lr_decay_every: usize,
    pub pooling: Pooling,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-4,
            weight_decay: 1e-5,
            epochs: 80,
            lr_decay: 0.9,
            lr_decay_every: 10,
            pooling: Pooling::Attention,
            seed: 2022,
        }
    }
}

/// Gradient of the training objective with respect to every model parameter.
#[derive(Debug, Clone)]
pub struct ModelGrad {
    pub w_cls: Array2<f64>,
    pub b_cls: Array1<f64>,
    pub w_att: Array1<f64>,
    pub b_att: f64,
}

impl ModelGrad {
    fn zeros(dim: usize, classes: usize) -> Self {
        ModelGrad {
            w_cls: Array2::zeros((dim, classes)),
            b_cls: Array1::zeros(classes),
            w_att: Array1::zeros(dim),
            b_att: 0.0,
        }
    }
}

/// Bag probabilities are clamped into `[CLAMP, 1 - CLAMP]` before the log
/// loss; sigmoid underflow is the only way to reach the boundary.
const CLAMP: f64 = 1e-12;

fn pool_forward(probs: &Array2<f64>, alpha: &Array1<f64>, pooling: Pooling) -> Array1<f64> {
    let (t, c) = probs.dim();
    match pooling {
        Pooling::Attention => {
            let denom: f64 = alpha.sum();
            let weighted = probs * &alpha.view().insert_axis(Axis(1));
            weighted.sum_axis(Axis(0)) / denom
        }
        Pooling::Mean => probs.sum_axis(Axis(0)) / t as f64,
        Pooling::Max => {
            let mut out = Array1::zeros(c);
            for j in 0..c {
                out[j] = probs.column(j).iter().cloned().fold(0.0, f64::max);
            }
            out
        }
        Pooling::LinearSoftmax => {
            let mut out = Array1::zeros(c);
            for j in 0..c {
                let col = probs.column(j);
                let s1: f64 = col.sum();
                if s1 > 0.0 {
                    out[j] = col.iter().map(|&p| p * p).sum::<f64>() / s1;
                }
            }
            out
        }
    }
}

/// d(bag)/d(probs) contributions: fills `d_probs` (T x C) and `d_alpha` (T)
/// given the upstream gradient `g` on the pooled vector.
fn pool_backward(
    probs: &Array2<f64>,
    alpha: &Array1<f64>,
    pooled: &Array1<f64>,
    g: &Array1<f64>,
    pooling: Pooling,
    d_probs: &mut Array2<f64>,
    d_alpha: &mut Array1<f64>,
) {
    let (t, c) = probs.dim();
    match pooling {
        Pooling::Attention => {
            let denom: f64 = alpha.sum();
            for i in 0..t {
                let mut da = 0.0;
                for j in 0..c {
                    d_probs[[i, j]] = g[j] * alpha[i] / denom;
                    da += g[j] * (probs[[i, j]] - pooled[j]) / denom;
                }
                d_alpha[i] = da;
            }
        }
        Pooling::Mean => {
            let inv = 1.0 / t as f64;
            for i in 0..t {
                for j in 0..c {
                    d_probs[[i, j]] = g[j] * inv;
                }
            }
        }
        Pooling::Max => {
            for j in 0..c {
                let col = probs.column(j);
                let mut best = 0usize;
                for i in 1..t {
                    if col[i] > col[best] {
                        best = i;
                    }
                }
                d_probs[[best, j]] = g[j];
            }
        }
        Pooling::LinearSoftmax => {
            for j in 0..c {
                let col = probs.column(j);
                let s1: f64 = col.sum();
                if s1 > 0.0 {
                    for i in 0..t {
                        d_probs[[i, j]] = g[j] * (2.0 * col[i] - pooled[j]) / s1;
                    }
                }
            }
        }
    }
}

/// Mean bag loss over sequences plus `weight_decay * ||params||^2`, and its
/// analytic gradient. The per-sequence loss is `bce_bag_loss` of the pooled
/// frame probabilities against the bag label.
pub fn mil_objective_grad(
    model: &ToyModel,
    features: &[Array2<f64>],
    bags: &[BagLabel],
    pooling: Pooling,
    weight_decay: f64,
) -> Result<(f64, ModelGrad)> {
    if features.is_empty() {
        return Err(Error::invalid("training set is empty"));
    }
    if features.len() != bags.len() {
        return Err(Error::shape(format!(
            "{} feature sequences vs {} bag labels",
            features.len(),
            bags.len()
        )));
    }
    let dim = model.feature_dim();
    let classes = model.num_classes();
    let mut grad = ModelGrad::zeros(dim, classes);
    let mut total = 0.0;
    let n = features.len() as f64;

    for (feats, bag) in features.iter().zip(bags) {
        model.check_features(&feats.view())?;
        if bag.num_classes() != classes {
            return Err(Error::shape(format!(
                "bag with {} classes vs model with {}",
                bag.num_classes(),
                classes
            )));
        }
        if feats.nrows() == 0 {
            return Err(Error::invalid("zero-length feature sequence"));
        }
        let probs = model.cas(feats.view());
        let alpha = model.attention(feats.view());
        let pooled = pool_forward(&probs, &alpha, pooling);
        let clamped: Vec<f64> = pooled.iter().map(|&y| y.clamp(CLAMP, 1.0 - CLAMP)).collect();
        let (loss, g_bag) = bce_bag_loss(&clamped, bag)?;
        total += loss / n;

        // Gradient on the pooled vector; zero where the clamp was active.
        let mut g = Array1::zeros(classes);
        for j in 0..classes {
            if (pooled[j] - clamped[j]).abs() == 0.0 {
                g[j] = g_bag[j] / n;
            }
        }

        let t = feats.nrows();
        let mut d_probs = Array2::zeros((t, classes));
        let mut d_alpha = Array1::zeros(t);
        pool_backward(&probs, &alpha, &pooled, &g, pooling, &mut d_probs, &mut d_alpha);

        // Through the sigmoids into the linear parameters.
        let dz = &d_probs * &(&probs * &probs.mapv(|p| 1.0 - p));
        grad.w_cls += &feats.t().dot(&dz);
        grad.b_cls += &dz.sum_axis(Axis(0));
        if matches!(pooling, Pooling::Attention) {
            let dza = &d_alpha * &(&alpha * &alpha.mapv(|a| 1.0 - a));
            grad.w_att += &feats.t().dot(&dza);
            grad.b_att += dza.sum();
        }
    }

    // Weight decay on every parameter.
    let sq = model.w_cls.iter().map(|w| w * w).sum::<f64>()
        + model.b_cls.iter().map(|w| w * w).sum::<f64>()
        + model.w_att.iter().map(|w| w * w).sum::<f64>()
        + model.b_att * model.b_att;
    total += weight_decay * sq;
    grad.w_cls += &model.w_cls.mapv(|w| 2.0 * weight_decay * w);
    grad.b_cls += &model.b_cls.mapv(|w| 2.0 * weight_decay * w);
    grad.w_att += &model.w_att.mapv(|w| 2.0 * weight_decay * w);
    grad.b_att += 2.0 * weight_decay * model.b_att;

    Ok((total, grad))
}

/// The training objective alone (used by finite-difference checks).
pub fn mil_objective(
    model: &ToyModel,
    features: &[Array2<f64>],
    bags: &[BagLabel],
    pooling: Pooling,
    weight_decay: f64,
) -> Result<f64> {
    mil_objective_grad(model, features, bags, pooling, weight_decay).map(|(l, _)| l)
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: ToyModel,
    /// Objective at the start of each epoch, plus the final value; length
    /// `epochs + 1`.
    pub epoch_losses: Vec<f64>,
}

/// Full-batch gradient descent on the MIL objective. Deterministic per
/// `cfg.seed`; zero epochs returns the seeded initialization untouched.
pub fn train_mil(
    features: &[Array2<f64>],
    bags: &[BagLabel],
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    if features.is_empty() {
        return Err(Error::invalid("training set is empty"));
    }
    if !(cfg.learning_rate > 0.0) {
        return Err(Error::invalid("learning_rate must be positive"));
    }
    let dim = features[0].ncols();
    let classes = bags
        .first()
        .map(BagLabel::num_classes)
        .ok_or_else(|| Error::invalid("no bag labels"))?;
    let mut model = ToyModel::init(dim, classes, cfg.seed);
    let mut epoch_losses = Vec::with_capacity(cfg.epochs + 1);

    for epoch in 0..cfg.epochs {
        let (loss, grad) =
            mil_objective_grad(&model, features, bags, cfg.pooling, cfg.weight_decay)?;
        epoch_losses.push(loss);
        let decay_steps = if cfg.lr_decay_every == 0 {
            0
        } else {
            epoch / cfg.lr_decay_every
        };
        let lr = cfg.learning_rate * cfg.lr_decay.powi(decay_steps as i32);
        model.w_cls -= &grad.w_cls.mapv(|g| lr * g);
        model.b_cls -= &grad.b_cls.mapv(|g| lr * g);
        model.w_att -= &grad.w_att.mapv(|g| lr * g);
        model.b_att -= lr * grad.b_att;
    }
    let final_loss = mil_objective(&model, features, bags, cfg.pooling, cfg.weight_decay)?;
    epoch_losses.push(final_loss);
    Ok(TrainOutcome {
        model,
        epoch_losses,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InferMode {
    Full,
    Window,
}

/// Optional score refinement over candidate segments before suppression:
/// scores propagate along the temporal affinity graph.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct RskpConfig {
    pub alpha: f64,
    pub steps: usize,
}

impl Default for RskpConfig {
    fn default() -> Self {
        RskpConfig {
            alpha: 0.5,
            steps: 20,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InferConfig {
    pub mode: InferMode,
    /// Window length in frames; ignored in full mode.
    pub window_len: usize,
    /// CAS threshold: frames with probability >= thresh join a run.
    pub thresh: f64,
    /// Odd moving-average width applied to each CAS column before
    /// thresholding; 1 disables smoothing.
    pub smooth_win: usize,
    /// Frames per second used to convert frame indices to seconds.
    pub fps: f64,
    pub nms: NmsConfig,
    pub rskp: Option<RskpConfig>,
}

impl Default for InferConfig {
    fn default() -> Self {
        InferConfig {
            mode: InferMode::Full,
            window_len: 0,
            thresh: 0.5,
            smooth_win: 1,
            fps: 1.0,
            nms: NmsConfig::default(),
            rskp: None,
        }
    }
}

/// Centered moving average with clamped edges; `win` must be odd.
fn smooth_column(xs: &[f64], win: usize) -> Vec<f64> {
    if win <= 1 {
        return xs.to_vec();
    }
    let half = win / 2;
    let t = xs.len();
    (0..t)
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half + 1).min(t);
            xs[lo..hi].iter().sum::<f64>() / (hi - lo) as f64
        })
        .collect()
}

/// Extracts scored segments from a model's CAS: per class, maximal runs of
/// frames with (optionally smoothed) probability >= `thresh` become segments
/// scored by the mean in-run probability. Window mode slides half-overlapping
/// windows (plus a tail window reaching the stream end), processes each
/// independently, offsets and concatenates; both modes end with temporal NMS.
/// Streams shorter than the window degrade to full mode.
pub fn infer(model: &ToyModel, features: ArrayView2<f64>, cfg: &InferConfig) -> Result<Vec<Segment>> {
    model.check_features(&features)?;
    if !(cfg.fps > 0.0) {
        return Err(Error::invalid("infer: fps must be positive"));
    }
    if cfg.smooth_win == 0 || cfg.smooth_win % 2 == 0 {
        return Err(Error::invalid("infer: smooth_win must be odd"));
    }
    let t = features.nrows();
    let windows: Vec<(usize, usize)> = match cfg.mode {
        InferMode::Full => vec![(0, t)],
        InferMode::Window => {
            if cfg.window_len < 2 {
                return Err(Error::invalid(
                    "infer: window mode needs window_len >= 2 frames",
                ));
            }
            if t <= cfg.window_len {
                vec![(0, t)]
            } else {
                let stride = ((cfg.window_len as f64) * 0.5).round().max(1.0) as usize;
                let mut ws = Vec::new();
                let mut start = 0;
                while start + cfg.window_len <= t {
                    ws.push((start, start + cfg.window_len));
                    start += stride;
                }
                if ws.last().map(|w| w.1) != Some(t) {
                    ws.push((t - cfg.window_len, t));
                }
                ws
            }
        }
    };

    let mut candidates: Vec<Segment> = Vec::new();
    let mut boxes: Vec<[usize; 2]> = Vec::new();
    for &(ws, we) in &windows {
        if ws == we {
            continue;
        }
        let probs = model.cas(features.slice(ndarray::s![ws..we, ..]));
        for class in 1..=model.num_classes() {
            let col: Vec<f64> = probs.column(class - 1).to_vec();
            let col = smooth_column(&col, cfg.smooth_win);
            let mut run_start: Option<usize> = None;
            for (i, &p) in col.iter().chain(std::iter::once(&f64::NEG_INFINITY)).enumerate() {
                match (run_start, p >= cfg.thresh) {
                    (None, true) => run_start = Some(i),
                    (Some(r0), false) => {
                        let mean = col[r0..i].iter().sum::<f64>() / (i - r0) as f64;
                        candidates.push(Segment::scored(
                            class,
                            (ws + r0) as f64 / cfg.fps,
                            (ws + i) as f64 / cfg.fps,
                            mean,
                        ));
                        boxes.push([ws + r0, ws + i]);
                        run_start = None;
                    }
                    _ => {}
                }
            }
        }
    }

    if let (Some(rskp), false) = (cfg.rskp, candidates.is_empty()) {
        let p = candidates.len();
        let c = model.num_classes();
        let mut s0 = Array2::zeros((p, c));
        for (i, seg) in candidates.iter().enumerate() {
            s0[[i, seg.class_id - 1]] = seg.score.unwrap_or(0.0);
        }
        let affinity = temporal_affinity(&boxes);
        let s = rskp_propagate(s0.view(), affinity.view(), rskp.alpha, rskp.steps)?;
        for (i, seg) in candidates.iter_mut().enumerate() {
            seg.score = Some(s[[i, seg.class_id - 1]]);
        }
    }

    temporal_nms(&candidates, &cfg.nms)
}
