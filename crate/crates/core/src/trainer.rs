//! Windowed training of the filter's gate networks by backpropagation
//! through the filter recursion.
//!
//! A window is one target over `W` consecutive frames: the truth boxes and
//! whatever detections the target produced. The filter starts from the
//! window's first detection, then for each later frame predicts, scores the
//! prediction against the truth, and updates with the detection (or coasts).
//!
//! Loss per window, averaged over the `W − 1` predictions:
//!
//! ```text
//! α_pred · Σ_i ½ (r_i² / v_i + ln v_i + ln 2π)   prediction residual r = H b' − truth, v = diag(H P' Hᵀ)
//! α_meas · Σ_i (y_i / s_i)²                      innovation y = z − H b' − Δʰ, s = frame-size input scale
//! ```
//!
//! Boxes are kept in pixels; the filter normalizes network inputs and
//! outputs by the frame size itself.

use std::fmt::Write as _;
use std::sync::Arc;

use log::{info, warn};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::BBox;
use crate::linalg::Matrix;
use crate::mekf::{
    clamp_size, FrameNormalizer, MeasVec, Memory, MemoryKalmanFilter, NoiseModel, PredictTrace, StateVec,
    UpdateTrace, MEAS_DIM, STATE_DIM,
};
use crate::nnet::{AdamW, GateWeights, LstmTrace, OptState};
use crate::par;
use crate::synthgen::Scenario;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("empty dataset")]
    EmptyDataset,
    #[error("window {0} does not start with a detection")]
    BadWindow(usize),
    #[error("non-finite {what} in the forward pass")]
    NonFinite { what: &'static str },
    #[error("compensation head produced a non-finite output (failsafe)")]
    Failsafe,
    #[error("update failed: {0}")]
    Update(String),
    #[error("training diverged at epoch {epoch}: loss {loss:.6e} vs initial {initial:.6e}")]
    Diverged { epoch: usize, loss: f64, initial: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub optimizer: AdamW,
    /// Window length in frames.
    pub window: usize,
    pub stride: usize,
    /// Minimum fraction of window frames with a detection.
    pub min_coverage: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub alpha_pred: f64,
    pub alpha_meas: f64,
    pub val_split: f64,
    pub seed: u64,
    /// Global gradient-norm clip.
    pub clip_norm: f64,
    /// Abort when the training loss exceeds this multiple of the initial loss.
    pub divergence_factor: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            optimizer: AdamW::default(),
            window: 20,
            stride: 10,
            min_coverage: 0.8,
            batch_size: 4,
            epochs: 30,
            alpha_pred: 1.0,
            alpha_meas: 0.1,
            val_split: 0.2,
            seed: 0,
            clip_norm: 5.0,
            divergence_factor: 1e3,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::Config(m.into()));
        let o = &self.optimizer;
        if self.window < 2 {
            return bad("window must be at least 2 frames");
        }
        if self.stride == 0 || self.batch_size == 0 {
            return bad("stride and batch_size must be positive");
        }
        if !(o.lr >= 0.0 && o.lr.is_finite()) {
            return bad("lr must be finite and non-negative");
        }
        if !((0.0..1.0).contains(&o.beta1) && (0.0..1.0).contains(&o.beta2) && o.eps > 0.0 && o.weight_decay >= 0.0) {
            return bad("AdamW needs beta1, beta2 in [0, 1), eps > 0 and weight_decay >= 0");
        }
        if !(self.min_coverage > 0.0 && self.min_coverage <= 1.0) {
            return bad("min_coverage must be in (0, 1]");
        }
        if !(self.alpha_pred >= 0.0 && self.alpha_meas >= 0.0) {
            return bad("loss weights must be non-negative");
        }
        if !(0.0..1.0).contains(&self.val_split) {
            return bad("val_split must be in [0, 1)");
        }
        if !(self.clip_norm > 0.0 && self.divergence_factor > 0.0) {
            return bad("clip_norm and divergence_factor must be positive");
        }
        Ok(())
    }
}

/// One target over consecutive frames.
#[derive(Debug, Clone, PartialEq)]
pub struct Window {
    pub scenario: String,
    pub target: usize,
    /// First frame, 0-based.
    pub start: usize,
    pub truth: Vec<BBox>,
    pub dets: Vec<Option<BBox>>,
}

impl Window {
    pub fn len(&self) -> usize {
        self.truth.len()
    }

    pub fn is_empty(&self) -> bool {
        self.truth.is_empty()
    }

    pub fn coverage(&self) -> f64 {
        self.dets.iter().filter(|d| d.is_some()).count() as f64 / self.dets.len() as f64
    }
}

/// Cuts every target of every scenario into windows of `cfg.window` frames
/// every `cfg.stride` frames. A window is kept when its first frame has a
/// detection and at least `cfg.min_coverage` of its frames do.
pub fn build_dataset(scenarios: &[Scenario], cfg: &TrainConfig) -> Vec<Window> {
    let w = cfg.window;
    let mut out = Vec::new();
    for s in scenarios {
        for (k, target) in s.targets.iter().enumerate() {
            let dets: Vec<Option<BBox>> = (0..s.frames)
                .map(|t| {
                    s.detections[t]
                        .iter()
                        .find(|d| d.target == Some(k))
                        .map(|d| d.detection.bbox)
                })
                .collect();
            let mut start = 0;
            while start + w <= s.frames {
                let win = &dets[start..start + w];
                let seen = win.iter().filter(|d| d.is_some()).count();
                if win[0].is_some() && seen as f64 >= cfg.min_coverage * w as f64 - 1e-9 {
                    out.push(Window {
                        scenario: s.name.clone(),
                        target: k,
                        start,
                        truth: target.boxes[start..start + w].to_vec(),
                        dets: win.to_vec(),
                    });
                }
                start += cfg.stride;
            }
        }
    }
    out
}

struct Step {
    predict: PredictTrace,
    pred_mean: StateVec,
    pred_var: MeasVec,
    truth: MeasVec,
    update: Option<UpdateTrace>,
    coast_clamped: [bool; 2],
    memory: LstmTrace,
}

struct Forward {
    init_memory: LstmTrace,
    steps: Vec<Step>,
    loss: f64,
}

const LN_2PI: f64 = 1.8378770664093453;

fn forward(filter: &MemoryKalmanFilter, win: &Window, cfg: &TrainConfig) -> Result<Forward, TrainError> {
    let first = win.dets.first().copied().flatten().ok_or(TrainError::BadWindow(win.start))?;
    let mut mean = [first.x(), first.y(), first.w(), first.h(), 0.0, 0.0, 0.0, 0.0];
    let mut cov = filter.noise().initial_cov(first.w(), first.h());
    let (mut memory, init_memory) = filter.memory_traced(&Memory::zeros(filter.weights().arch.memory), &mean);
    if !memory.is_finite() {
        return Err(TrainError::NonFinite { what: "memory" });
    }
    let in_scale = filter.normalizer().input_scale();
    let (mut nll, mut meas) = (0.0, 0.0);
    let mut steps = Vec::with_capacity(win.len().saturating_sub(1));

    for t in 1..win.len() {
        let (pred, predict) = filter.predict_traced(&mean, &cov, &memory);
        if pred.failsafe {
            return Err(TrainError::Failsafe);
        }
        let truth = win.truth[t].to_array();
        let mut pred_var = [0.0; MEAS_DIM];
        for i in 0..MEAS_DIM {
            let v = pred.cov[(i, i)];
            let r = pred.mean[i] - truth[i];
            nll += 0.5 * (r * r / v + v.ln() + LN_2PI);
            pred_var[i] = v;
        }
        let mut coast_clamped = [false; 2];
        let update = match win.dets[t] {
            Some(z) => {
                let (m, c, tr) = filter
                    .update_traced(&pred, &z.to_array())
                    .map_err(|e| TrainError::Update(e.to_string()))?;
                if tr.failsafe {
                    return Err(TrainError::Failsafe);
                }
                meas += (0..MEAS_DIM).map(|i| (tr.innovation[i] / in_scale[i]).powi(2)).sum::<f64>();
                mean = m;
                cov = c;
                Some(tr)
            }
            None => {
                mean = pred.mean;
                coast_clamped = clamp_size(&mut mean);
                cov = pred.cov.clone();
                None
            }
        };
        let (next, mem_trace) = filter.memory_traced(&pred.memory, &mean);
        if !next.is_finite() {
            return Err(TrainError::NonFinite { what: "memory" });
        }
        memory = next;
        steps.push(Step {
            predict,
            pred_mean: pred.mean,
            pred_var,
            truth,
            update,
            coast_clamped,
            memory: mem_trace,
        });
    }
    let norm = 1.0 / steps.len().max(1) as f64;
    let loss = norm * (cfg.alpha_pred * nll + cfg.alpha_meas * meas);
    if !loss.is_finite() {
        return Err(TrainError::NonFinite { what: "loss" });
    }
    Ok(Forward {
        init_memory,
        steps,
        loss,
    })
}

/// Loss of one window under the filter's current weights.
pub fn window_loss(filter: &MemoryKalmanFilter, win: &Window, cfg: &TrainConfig) -> Result<f64, TrainError> {
    Ok(forward(filter, win, cfg)?.loss)
}

/// Loss of one window and its exact gradient with respect to every gate
/// weight.
pub fn loss_and_grad(
    filter: &MemoryKalmanFilter,
    win: &Window,
    cfg: &TrainConfig,
) -> Result<(f64, GateWeights), TrainError> {
    let fwd = forward(filter, win, cfg)?;
    let weights = filter.weights();
    let mut grads = weights.zeros_like();
    let mem = weights.arch.memory;
    let norm = 1.0 / fwd.steps.len().max(1) as f64;
    let in_scale = filter.normalizer().input_scale();

    let mut d_mean: StateVec = [0.0; STATE_DIM];
    let mut d_cov = Matrix::zeros(STATE_DIM, STATE_DIM);
    let mut d_h = vec![0.0; mem];
    let mut d_c = vec![0.0; mem];

    for step in fwd.steps.iter().rev() {
        let (dh_prev, dc_prev) = filter.memory_backward(&step.memory, &d_h, &d_c, &mut d_mean, &mut grads);
        let (mut d_pm, mut d_pc) = match &step.update {
            Some(tr) => {
                let mut d_innov = [0.0; MEAS_DIM];
                for i in 0..MEAS_DIM {
                    d_innov[i] = cfg.alpha_meas * norm * 2.0 * tr.innovation[i] / (in_scale[i] * in_scale[i]);
                }
                let adj = filter.update_backward(tr, &d_mean, &d_cov, &d_innov, &mut grads);
                (adj.d_mean, adj.d_cov)
            }
            None => {
                let mut dm = d_mean;
                for (k, c) in [2usize, 3].into_iter().enumerate() {
                    if step.coast_clamped[k] {
                        dm[c] = 0.0;
                    }
                }
                (dm, d_cov.clone())
            }
        };
        for i in 0..MEAS_DIM {
            let v = step.pred_var[i];
            let r = step.pred_mean[i] - step.truth[i];
            d_pm[i] += cfg.alpha_pred * norm * r / v;
            d_pc[(i, i)] += cfg.alpha_pred * norm * 0.5 * (1.0 / v - r * r / (v * v));
        }
        let (adj, dh_pred) = filter.predict_backward(&step.predict, &d_pm, &d_pc, &mut grads);
        d_mean = adj.d_mean;
        d_cov = adj.d_cov;
        d_h = dh_prev.iter().zip(&dh_pred).map(|(a, b)| a + b).collect();
        d_c = dc_prev;
    }
    let mut unused = [0.0; STATE_DIM];
    filter.memory_backward(&fwd.init_memory, &d_h, &d_c, &mut unused, &mut grads);
    Ok((fwd.loss, grads))
}

/// Mean loss over `windows`, summed in index order.
pub fn mean_loss(filter: &MemoryKalmanFilter, windows: &[&Window], cfg: &TrainConfig) -> Result<f64, TrainError> {
    if windows.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let losses = par::map(windows, |w| window_loss(filter, w, cfg));
    let mut sum = 0.0;
    for l in losses {
        sum += l?;
    }
    Ok(sum / windows.len() as f64)
}

/// Largest relative difference between the analytic gradient and central
/// finite differences (Richardson-extrapolated, step 1e-3) over every
/// `every`-th parameter. The denominator is `max(|analytic|, |numeric|, floor)`.
pub fn gradient_check(
    weights: &GateWeights,
    noise: NoiseModel,
    norm: FrameNormalizer,
    win: &Window,
    cfg: &TrainConfig,
    every: usize,
    floor: f64,
) -> Result<f64, TrainError> {
    let filter = MemoryKalmanFilter::new(Arc::new(weights.clone()), noise, norm);
    let (_, grads) = loss_and_grad(&filter, win, cfg)?;
    let analytic = grads.to_flat();
    let base = weights.to_flat();
    let idx: Vec<usize> = (0..base.len()).step_by(every.max(1)).collect();
    let h = 1e-3;
    let chunks: Vec<&[usize]> = idx.chunks(idx.len().div_ceil(64).max(1)).collect();
    let errs = par::map(&chunks, |chunk| -> Result<f64, TrainError> {
        let mut shared = Arc::new(weights.clone());
        let mut worst = 0.0f64;
        for &i in chunk.iter() {
            let mut eval = |delta: f64| {
                *Arc::get_mut(&mut shared).expect("no other handle").param_mut(i) = base[i] + delta;
                window_loss(&MemoryKalmanFilter::new(shared.clone(), noise, norm), win, cfg)
            };
            let wide = (eval(h)? - eval(-h)?) / (2.0 * h);
            let narrow = (eval(h / 2.0)? - eval(-h / 2.0)?) / h;
            *Arc::get_mut(&mut shared).expect("no other handle").param_mut(i) = base[i];
            let numeric = (4.0 * narrow - wide) / 3.0;
            let a = analytic[i];
            worst = worst.max((a - numeric).abs() / a.abs().max(numeric.abs()).max(floor));
        }
        Ok(worst)
    });
    let mut worst = 0.0f64;
    for e in errs {
        worst = worst.max(e?);
    }
    Ok(worst)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossPoint {
    pub epoch: usize,
    pub train: f64,
    pub validation: f64,
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    /// Weights with the lowest validation loss (epoch 0 included).
    pub weights: GateWeights,
    pub curve: Vec<LossPoint>,
    pub best_epoch: usize,
    pub skipped_batches: usize,
    pub train_windows: usize,
    pub val_windows: usize,
}

impl TrainReport {
    pub fn baseline(&self) -> LossPoint {
        self.curve[0]
    }

    pub fn best(&self) -> LossPoint {
        self.curve[self.best_epoch]
    }
}

/// Loss curve as text: a header, then `epoch,train,validation` per line.
pub fn format_curve(curve: &[LossPoint]) -> String {
    let mut s = String::from("epoch,train,validation\n");
    for p in curve {
        writeln!(s, "{},{},{}", p.epoch, p.train, p.validation).expect("writing to a string");
    }
    s
}

/// Deterministic split of window indices into (train, validation), both
/// sorted. At least one window stays in the training set.
pub fn split_indices(n: usize, val_split: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_val = ((n as f64 * val_split).round() as usize).min(n.saturating_sub(1));
    let mut val = idx[..n_val].to_vec();
    let mut train = idx[n_val..].to_vec();
    val.sort_unstable();
    train.sort_unstable();
    (train, val)
}

/// Trains `initial` on `dataset` with AdamW on summed-then-averaged batch
/// gradients, clipped to `cfg.clip_norm`. The batch's per-window gradients
/// are computed in parallel and reduced in batch order. A batch whose
/// forward pass fails is skipped with a warning. Every epoch the full
/// training and validation losses are recomputed; a failsafe or non-finite
/// value there aborts training, as does divergence. Without a validation
/// split the training loss selects the best weights.
pub fn train(
    dataset: &[Window],
    initial: GateWeights,
    noise: NoiseModel,
    norm: FrameNormalizer,
    cfg: &TrainConfig,
) -> Result<TrainReport, TrainError> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let (train_idx, val_idx) = split_indices(dataset.len(), cfg.val_split, cfg.seed);
    let train_set: Vec<&Window> = train_idx.iter().map(|&i| &dataset[i]).collect();
    let val_set: Vec<&Window> = val_idx.iter().map(|&i| &dataset[i]).collect();
    let filter_for = |w: &GateWeights| MemoryKalmanFilter::new(Arc::new(w.clone()), noise, norm);

    let evaluate = |w: &GateWeights, epoch: usize| -> Result<LossPoint, TrainError> {
        let f = filter_for(w);
        let train = mean_loss(&f, &train_set, cfg)?;
        let validation = if val_set.is_empty() { train } else { mean_loss(&f, &val_set, cfg)? };
        Ok(LossPoint { epoch, train, validation })
    };

    let mut weights = initial;
    let start = evaluate(&weights, 0)?;
    info!("epoch 0: train {:.6} validation {:.6}", start.train, start.validation);
    let mut curve = vec![start];
    let mut best = (start.validation, weights.clone(), 0);
    let mut opt = OptState::new(cfg.optimizer, weights.num_params());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let mut order = train_idx.clone();
    let mut skipped = 0;

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            let filter = filter_for(&weights);
            let results = par::map(batch, |&i| loss_and_grad(&filter, &dataset[i], cfg));
            let mut sum = weights.zeros_like();
            let mut failed = None;
            for r in results {
                match r {
                    Ok((_, g)) => sum.add_assign(&g),
                    Err(e) => {
                        failed = Some(e);
                        break;
                    }
                }
            }
            if let Some(e) = failed {
                warn!("epoch {epoch}: skipping batch: {e}");
                skipped += 1;
                continue;
            }
            sum.scale(1.0 / batch.len() as f64);
            let g = sum.norm();
            if g > cfg.clip_norm {
                sum.scale(cfg.clip_norm / g);
            }
            let mut flat = weights.to_flat();
            opt.adamw_step(&mut flat, &sum.to_flat());
            weights.assign_flat(&flat);
        }
        if !weights.is_finite() {
            return Err(TrainError::NonFinite { what: "weights" });
        }
        let point = evaluate(&weights, epoch)?;
        info!("epoch {epoch}: train {:.6} validation {:.6}", point.train, point.validation);
        if point.train > cfg.divergence_factor * start.train.abs() {
            return Err(TrainError::Diverged {
                epoch,
                loss: point.train,
                initial: start.train,
            });
        }
        curve.push(point);
        if point.validation < best.0 {
            best = (point.validation, weights.clone(), epoch);
        }
    }

    Ok(TrainReport {
        weights: best.1,
        curve,
        best_epoch: best.2,
        skipped_batches: skipped,
        train_windows: train_set.len(),
        val_windows: val_set.len(),
    })
}

#[cfg(test)]
mod tests {
    use std::f64::consts::PI;

    use super::*;
    use crate::nnet::GateArch;
    use crate::synthgen::{figure_spin_config, generate, ScenarioConfig};

    fn filter(w: GateWeights) -> MemoryKalmanFilter {
        MemoryKalmanFilter::new(Arc::new(w), NoiseModel::default(), FrameNormalizer::default())
    }

    fn spin_windows(seed: u64, frames: usize, targets: usize, cfg: &TrainConfig) -> Vec<Window> {
        build_dataset(&[generate(&figure_spin_config(frames, targets), seed).unwrap()], cfg)
    }

    #[test]
    fn window_count() {
        let cfg = TrainConfig::default();
        let full = ScenarioConfig {
            frames: 100,
            num_targets: 3,
            miss_rate: 0.0,
            ..ScenarioConfig::default()
        };
        let ds = build_dataset(&[generate(&full, 1).unwrap()], &cfg);
        // starts 0, 10, ..., 80 for each target
        assert_eq!(ds.len(), 3 * ((100 - 20) / 10 + 1));
        assert!(ds.iter().all(|w| w.len() == 20 && w.coverage() == 1.0));
        assert!(build_dataset(&[], &cfg).is_empty());
        let empty = generate(&ScenarioConfig { frames: 0, ..full }, 1).unwrap();
        assert!(build_dataset(&[empty], &cfg).is_empty());
    }

    #[test]
    fn sparse_windows_excluded() {
        let cfg = TrainConfig::default();
        let sparse = ScenarioConfig {
            frames: 100,
            num_targets: 4,
            miss_rate: 0.5,
            ..ScenarioConfig::default()
        };
        let s = generate(&sparse, 3).unwrap();
        let ds = build_dataset(std::slice::from_ref(&s), &cfg);
        assert!(ds.iter().all(|w| w.coverage() >= 0.8 && w.dets[0].is_some()));
        let lenient = TrainConfig { min_coverage: 0.05, ..cfg };
        assert!(build_dataset(&[s], &lenient).len() > ds.len());
    }

    #[test]
    fn zero_weights_give_zero_loss() {
        let cfg = TrainConfig {
            alpha_pred: 0.0,
            alpha_meas: 0.0,
            ..TrainConfig::default()
        };
        let ds = spin_windows(4, 60, 2, &cfg);
        let f = filter(GateWeights::init_random(GateArch::default(), 9));
        let (loss, g) = loss_and_grad(&f, &ds[0], &cfg).unwrap();
        assert_eq!(loss, 0.0);
        assert_eq!(g.norm(), 0.0);
    }

    #[test]
    fn perfect_prediction_nll_is_the_gaussian_constant() {
        // a static box observed exactly: the first prediction is exact and
        // its variance is the initial position variance plus process noise
        let b = BBox::new(300.0, 200.0, 40.0, 100.0).unwrap();
        let win = Window {
            scenario: "static".into(),
            target: 0,
            start: 0,
            truth: vec![b, b],
            dets: vec![Some(b), None],
        };
        let cfg = TrainConfig {
            alpha_meas: 0.0,
            ..TrainConfig::default()
        };
        let f = filter(GateWeights::init(GateArch::default(), 0));
        let n = NoiseModel::default();
        let var = |s: f64| (2.0 * n.sigma_p * s).powi(2) + (10.0 * n.sigma_v * s).powi(2) + (n.sigma_p * s).powi(2);
        let logdet = [var(40.0), var(100.0), var(40.0), var(100.0)].iter().map(|v| v.ln()).sum::<f64>();
        let expected = 0.5 * (logdet + 4.0 * (2.0 * PI).ln());
        let loss = window_loss(&f, &win, &cfg).unwrap();
        assert!((loss - expected).abs() < 1e-12, "{loss} vs {expected}");
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let cfg = TrainConfig {
            window: 5,
            stride: 5,
            ..TrainConfig::default()
        };
        let ds = spin_windows(11, 40, 3, &cfg);
        let w = GateWeights::init_random(GateArch::default(), 5);
        for win in ds.iter().take(2) {
            let err =
                gradient_check(&w, NoiseModel::default(), FrameNormalizer::default(), win, &cfg, 7, 1e-6).unwrap();
            assert!(err < 1e-4, "max relative error {err}");
        }
    }

    #[test]
    fn gradient_check_covers_coasting() {
        let cfg = TrainConfig {
            window: 5,
            stride: 5,
            min_coverage: 0.5,
            ..TrainConfig::default()
        };
        let mut win = spin_windows(12, 40, 1, &cfg).remove(0);
        win.dets[2] = None;
        let w = GateWeights::init_random(GateArch::default(), 6);
        let err = gradient_check(&w, NoiseModel::default(), FrameNormalizer::default(), &win, &cfg, 5, 1e-6).unwrap();
        assert!(err < 1e-4, "max relative error {err}");
    }

    #[test]
    fn zero_lr_keeps_weights_and_flat_curve() {
        let mut cfg = TrainConfig {
            epochs: 3,
            ..TrainConfig::default()
        };
        cfg.optimizer.lr = 0.0;
        let ds = spin_windows(21, 80, 2, &cfg);
        let init = GateWeights::init(GateArch::default(), 3);
        let rep = train(&ds, init.clone(), NoiseModel::default(), FrameNormalizer::default(), &cfg).unwrap();
        assert_eq!(rep.weights, init);
        assert!(rep.curve.iter().all(|p| p == &LossPoint { epoch: p.epoch, ..rep.curve[0] }));
    }

    #[test]
    fn training_is_deterministic_and_improves() {
        let cfg = TrainConfig {
            epochs: 4,
            ..TrainConfig::default()
        };
        let ds = spin_windows(31, 120, 4, &cfg);
        let run = || {
            train(
                &ds,
                GateWeights::init(GateArch::default(), 1),
                NoiseModel::default(),
                FrameNormalizer::default(),
                &cfg,
            )
            .unwrap()
        };
        let (a, b) = (run(), run());
        assert_eq!(a.weights, b.weights);
        assert_eq!(a.curve, b.curve);
        assert!(a.best().validation < a.baseline().validation);
        assert_eq!(a.train_windows + a.val_windows, ds.len());
        assert!(format_curve(&a.curve).starts_with("epoch,train,validation\n0,"));
    }

    #[test]
    fn epoch_zero_is_the_plain_filter_loss() {
        let cfg = TrainConfig::default();
        let ds = spin_windows(41, 60, 2, &cfg);
        let refs: Vec<&Window> = ds.iter().collect();
        let plain = MemoryKalmanFilter::plain(NoiseModel::default(), FrameNormalizer::default());
        let zero_heads = filter(GateWeights::init(GateArch::default(), 77));
        assert_eq!(mean_loss(&plain, &refs, &cfg).unwrap(), mean_loss(&zero_heads, &refs, &cfg).unwrap());
    }

    #[test]
    fn bad_configs_rejected() {
        let ok = TrainConfig::default();
        assert!(ok.validate().is_ok());
        for c in [
            TrainConfig { window: 1, ..ok },
            TrainConfig { batch_size: 0, ..ok },
            TrainConfig { val_split: 1.0, ..ok },
            TrainConfig { min_coverage: 0.0, ..ok },
            TrainConfig { clip_norm: 0.0, ..ok },
        ] {
            assert!(c.validate().is_err());
        }
        let ds: Vec<Window> = vec![];
        let e = train(&ds, GateWeights::init(GateArch::default(), 0), NoiseModel::default(), FrameNormalizer::default(), &ok);
        assert!(matches!(e, Err(TrainError::EmptyDataset)));
    }

    #[test]
    fn split_is_deterministic_and_disjoint() {
        let (t, v) = split_indices(50, 0.2, 9);
        assert_eq!((t.len(), v.len()), (40, 10));
        assert!(t.iter().all(|i| !v.contains(i)));
        assert_eq!(split_indices(50, 0.2, 9), (t, v));
        assert_eq!(split_indices(1, 0.5, 0).0, vec![0]);
    }
}
