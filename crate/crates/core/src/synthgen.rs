//! Deterministic synthetic scenarios: ground-truth trajectories under
//! several motion regimes plus noisy, confidence-scored detections.
//!
//! # Random stream
//!
//! All randomness comes from one `ChaCha8Rng` seeded with
//! `seed_from_u64(seed)`. A uniform `u` is `rng.random::<f64>()` (53 random
//! bits in `[0, 1)`). Standard normals use Box–Muller on a pair of uniforms
//! `(u1, u2)`: `r = sqrt(-2 ln(1 - u1))`, giving `r cos(2π u2)` then
//! `r sin(2π u2)`. Draw order:
//!
//! 1. For each random target `0..num_targets`, exactly nine uniforms:
//!    `u0` regime (weighted pick from the mix), `u1` width, `u2` aspect ratio,
//!    `u3..u8` regime parameters (see [`Motion`]; unused ones are still drawn).
//! 2. For each frame, for each target (random targets first, then scripted
//!    ones, in order): one uniform for the miss test, then two Box–Muller
//!    pairs giving the x, y, w, h noise. These five uniforms are drawn even
//!    when the detection is dropped.
//!
//! Scripted targets draw nothing at setup.

use std::f64::consts::PI;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{iou, BBox};
use crate::io::{self, FormatError, MotLine};
use crate::pipeline::Detection;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid scenario config: {0}")]
    Config(String),
    #[error(transparent)]
    Format(#[from] FormatError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MotionRegime {
    ConstantVelocity,
    Circular,
    /// Fast circling with the box width oscillating at twice the turn rate.
    FigureSpin,
    StopAndDash,
    /// A jump, two quick spins, a pause, repeated with a fixed period.
    JumpSpin,
    /// Hand-placed keyframe path.
    Scripted,
}

/// A fully specified motion. Positions are box centers in pixels, rates are
/// per frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Motion {
    ConstantVelocity {
        x: f64,
        y: f64,
        vx: f64,
        vy: f64,
    },
    Circular {
        cx: f64,
        cy: f64,
        radius: f64,
        omega: f64,
        phase: f64,
    },
    /// `w = w0 (1 + width_amp sin 2θ)` with `θ = phase + ω t`.
    FigureSpin {
        cx: f64,
        cy: f64,
        radius: f64,
        omega: f64,
        phase: f64,
        width_amp: f64,
    },
    /// Alternates `stop_frames` at rest with `dash_frames` at `speed`; each
    /// dash turns the heading by `turn` radians.
    StopAndDash {
        x: f64,
        y: f64,
        speed: f64,
        heading: f64,
        stop_frames: usize,
        dash_frames: usize,
        turn: f64,
    },
    JumpSpin {
        x: f64,
        y: f64,
        vx: f64,
        vy: f64,
        period: usize,
        offset: usize,
        jump_height: f64,
        spin_radius: f64,
    },
    /// Piecewise-linear path through `[frame, x, y]` keys (frames increasing),
    /// held constant outside the first and last key.
    Waypoints { keys: Vec<[f64; 3]> },
}

impl Motion {
    pub fn regime(&self) -> MotionRegime {
        match self {
            Motion::ConstantVelocity { .. } => MotionRegime::ConstantVelocity,
            Motion::Circular { .. } => MotionRegime::Circular,
            Motion::FigureSpin { .. } => MotionRegime::FigureSpin,
            Motion::StopAndDash { .. } => MotionRegime::StopAndDash,
            Motion::JumpSpin { .. } => MotionRegime::JumpSpin,
            Motion::Waypoints { .. } => MotionRegime::Scripted,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptedTarget {
    pub motion: Motion,
    pub w: f64,
    pub h: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegimeWeight {
    pub regime: MotionRegime,
    pub weight: f64,
}

/// Detections of `target` are dropped for frames `start..end` (0-based).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OcclusionEvent {
    pub target: usize,
    pub occluder: Option<usize>,
    pub start: usize,
    pub end: usize,
}

/// `score = clamp(base - penalty * occluded_fraction, floor, 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConfidenceModel {
    pub base: f64,
    pub penalty: f64,
    pub floor: f64,
}

impl Default for ConfidenceModel {
    fn default() -> Self {
        Self {
            base: 0.9,
            penalty: 0.6,
            floor: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    pub name: String,
    pub arena_width: f64,
    pub arena_height: f64,
    pub frames: usize,
    /// Randomly drawn targets.
    pub num_targets: usize,
    pub regime_mix: Vec<RegimeWeight>,
    pub width_range: (f64, f64),
    /// Height over width.
    pub aspect_range: (f64, f64),
    /// Detection noise std as a fraction of the box size.
    pub noise_sigma: f64,
    pub miss_rate: f64,
    pub occlusions: Vec<OcclusionEvent>,
    pub confidence: ConfidenceModel,
    /// Hand-placed targets, indexed after the random ones.
    pub scripted: Vec<ScriptedTarget>,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            name: "synthetic".into(),
            arena_width: 1280.0,
            arena_height: 720.0,
            frames: 200,
            num_targets: 5,
            regime_mix: [
                MotionRegime::ConstantVelocity,
                MotionRegime::Circular,
                MotionRegime::FigureSpin,
                MotionRegime::StopAndDash,
            ]
            .into_iter()
            .map(|regime| RegimeWeight { regime, weight: 1.0 })
            .collect(),
            width_range: (30.0, 60.0),
            aspect_range: (2.0, 3.0),
            noise_sigma: 0.03,
            miss_rate: 0.05,
            occlusions: Vec::new(),
            confidence: ConfidenceModel::default(),
            scripted: Vec::new(),
        }
    }
}

impl ScenarioConfig {
    pub fn total_targets(&self) -> usize {
        self.num_targets + self.scripted.len()
    }

    pub fn validate(&self) -> Result<(), String> {
        let pos = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(format!("{name} must be finite and > 0, got {v}"))
            }
        };
        pos("arena_width", self.arena_width)?;
        pos("arena_height", self.arena_height)?;
        pos("width_range.0", self.width_range.0)?;
        pos("aspect_range.0", self.aspect_range.0)?;
        if self.width_range.1 < self.width_range.0 || self.aspect_range.1 < self.aspect_range.0 {
            return Err("ranges must be (min, max) with min <= max".into());
        }
        if 2.0 * self.width_range.1 * self.aspect_range.1 > self.arena_height || 2.0 * self.width_range.1 > self.arena_width {
            return Err("largest boxes do not fit the arena".into());
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(format!("noise_sigma must be >= 0, got {}", self.noise_sigma));
        }
        if !(0.0..=1.0).contains(&self.miss_rate) {
            return Err(format!("miss_rate must be in [0, 1], got {}", self.miss_rate));
        }
        let c = &self.confidence;
        if !(0.0..=1.0).contains(&c.base) || !(0.0..=1.0).contains(&c.floor) || c.penalty.is_nan() || c.penalty < 0.0 {
            return Err("confidence base/floor must be in [0, 1] and penalty >= 0".into());
        }
        if self.num_targets > 0 {
            if self.regime_mix.is_empty() || self.regime_mix.iter().any(|r| r.weight.is_nan() || r.weight < 0.0) {
                return Err("regime_mix needs non-negative weights".into());
            }
            if self.regime_mix.iter().map(|r| r.weight).sum::<f64>() <= 0.0 {
                return Err("regime_mix weights sum to zero".into());
            }
        }
        let n = self.total_targets();
        for o in &self.occlusions {
            if o.target >= n || o.occluder.is_some_and(|k| k >= n) || o.start > o.end {
                return Err(format!("bad occlusion event {o:?}"));
            }
        }
        for s in &self.scripted {
            pos("scripted.w", s.w)?;
            pos("scripted.h", s.h)?;
            if let Motion::Waypoints { keys } = &s.motion {
                if keys.is_empty() || keys.windows(2).any(|p| p[1][0] <= p[0][0]) {
                    return Err("waypoint frames must be non-empty and strictly increasing".into());
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TruthTrack {
    /// 1-based identity.
    pub id: u32,
    pub regime: Option<MotionRegime>,
    /// One box per frame.
    pub boxes: Vec<BBox>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthDetection {
    pub detection: Detection,
    /// Index into `Scenario::targets` of the target that produced it.
    pub target: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub seed: u64,
    pub frames: usize,
    pub targets: Vec<TruthTrack>,
    /// Per frame (index `k` is frame `k + 1`).
    pub detections: Vec<Vec<SynthDetection>>,
}

impl Scenario {
    pub fn detection_frames(&self) -> Vec<Vec<Detection>> {
        self.detections
            .iter()
            .map(|f| f.iter().map(|d| d.detection).collect())
            .collect()
    }

    /// Per-frame `(id, box)` truth lists.
    pub fn truth_frames(&self) -> Vec<Vec<(i64, BBox)>> {
        (0..self.frames)
            .map(|t| self.targets.iter().map(|tr| (tr.id as i64, tr.boxes[t])).collect())
            .collect()
    }

    pub fn truth_rows(&self) -> Vec<MotLine> {
        let mut rows = Vec::new();
        for t in 0..self.frames {
            for tr in &self.targets {
                rows.push(MotLine::from_box(t as u32 + 1, tr.id as i64, &tr.boxes[t], 1.0));
            }
        }
        rows
    }

    pub fn detection_rows(&self) -> Vec<MotLine> {
        self.detections
            .iter()
            .flatten()
            .map(|d| MotLine::from_box(d.detection.frame, -1, &d.detection.bbox, d.detection.score))
            .collect()
    }

    /// Writes `<name>.gt.txt` and `<name>.det.txt` into `dir`.
    pub fn export(&self, dir: impl AsRef<Path>) -> Result<(), SynthError> {
        let dir = dir.as_ref();
        io::write_mot(&self.truth_rows(), dir.join(format!("{}.gt.txt", self.name)))?;
        io::write_mot(&self.detection_rows(), dir.join(format!("{}.det.txt", self.name)))?;
        Ok(())
    }

    /// Reads a scenario back from truth and detection files. Each detection
    /// is linked to the truth box it overlaps best (IoU ≥ 0.5), if any.
    pub fn import(name: &str, truth: impl AsRef<Path>, dets: impl AsRef<Path>) -> Result<Scenario, SynthError> {
        let truth_rows = io::read_mot(truth)?;
        let det_frames = io::parse_detections(dets)?;
        let truth_frames = io::group_by_frame(&truth_rows)?;
        let frames = truth_frames.len().max(det_frames.len());
        let mut ids: Vec<i64> = truth_rows.iter().map(|r| r.id).collect();
        ids.sort_unstable();
        ids.dedup();
        let mut targets = Vec::new();
        for &id in &ids {
            let mut boxes = Vec::with_capacity(frames);
            let mut last = None;
            let mut first = None;
            for t in 0..frames {
                let b = truth_frames.get(t).and_then(|f| f.iter().find(|(i, _)| *i == id)).map(|x| x.1);
                if b.is_some() && first.is_none() {
                    first = Some(t);
                }
                last = b.or(last);
                boxes.push(last);
            }
            // tracks that start late are back-filled with their first box
            let fill = boxes[first.unwrap_or(0)];
            let boxes = boxes.into_iter().map(|b| b.or(fill).expect("every id has a box")).collect();
            targets.push(TruthTrack {
                id: u32::try_from(id).map_err(|_| SynthError::Config(format!("truth id {id} must be a positive integer")))?,
                regime: None,
                boxes,
            });
        }
        let mut detections = vec![Vec::new(); frames];
        for (t, list) in det_frames.into_iter().enumerate() {
            for det in list {
                let present: Vec<usize> = truth_frames
                    .get(t)
                    .map(|f| f.iter().map(|(id, _)| ids.binary_search(id).expect("id listed")).collect())
                    .unwrap_or_default();
                let target = present
                    .into_iter()
                    .map(|k| (k, iou(&targets[k].boxes[t], &det.bbox)))
                    .filter(|&(_, v)| v >= 0.5)
                    .max_by(|a, b| a.1.total_cmp(&b.1).then(b.0.cmp(&a.0)))
                    .map(|(k, _)| k);
                detections[t].push(SynthDetection { detection: det, target });
            }
        }
        Ok(Scenario {
            name: name.to_string(),
            seed: 0,
            frames,
            targets,
            detections,
        })
    }
}

struct Uniforms<'a>(&'a mut ChaCha8Rng);

impl Uniforms<'_> {
    fn next(&mut self) -> f64 {
        self.0.random::<f64>()
    }

    fn normal_pair(&mut self) -> (f64, f64) {
        let (u1, u2) = (self.next(), self.next());
        let r = (-2.0 * (1.0 - u1).ln()).sqrt();
        let a = 2.0 * PI * u2;
        (r * a.cos(), r * a.sin())
    }
}

fn lerp(lo: f64, hi: f64, u: f64) -> f64 {
    lo + (hi - lo) * u
}

fn random_motion(regime: MotionRegime, u: &[f64; 6], w: f64, h: f64, cfg: &ScenarioConfig) -> Motion {
    let (aw, ah) = (cfg.arena_width, cfg.arena_height);
    let sign = if u[4] < 0.5 { 1.0 } else { -1.0 };
    match regime {
        MotionRegime::ConstantVelocity => {
            let speed = lerp(1.0, 5.0, u[2]);
            let heading = 2.0 * PI * u[3];
            Motion::ConstantVelocity {
                x: lerp(w, aw - w, u[0]),
                y: lerp(h, ah - h, u[1]),
                vx: speed * heading.cos(),
                vy: speed * heading.sin(),
            }
        }
        MotionRegime::Circular | MotionRegime::FigureSpin => {
            let spin = regime == MotionRegime::FigureSpin;
            let (r_lo, r_hi) = if spin { (40.0, 80.0) } else { (30.0, 100.0) };
            let (o_lo, o_hi) = if spin { (0.12, 0.18) } else { (0.03, 0.08) };
            let w_max = if spin { 1.3 * w } else { w };
            let radius = lerp(r_lo, r_hi, u[2]).min(0.5 * (aw - w_max)).min(0.5 * (ah - h)).max(0.0);
            let (mx, my) = (radius + 0.5 * w_max, radius + 0.5 * h);
            let cx = lerp(mx, aw - mx, u[0]);
            let cy = lerp(my, ah - my, u[1]);
            let omega = sign * lerp(o_lo, o_hi, u[3]);
            let phase = 2.0 * PI * u[5];
            if spin {
                Motion::FigureSpin {
                    cx,
                    cy,
                    radius,
                    omega,
                    phase,
                    width_amp: 0.3,
                }
            } else {
                Motion::Circular {
                    cx,
                    cy,
                    radius,
                    omega,
                    phase,
                }
            }
        }
        MotionRegime::StopAndDash => Motion::StopAndDash {
            x: lerp(w, aw - w, u[0]),
            y: lerp(h, ah - h, u[1]),
            speed: lerp(6.0, 12.0, u[2]),
            heading: 2.0 * PI * u[3],
            stop_frames: 10 + (20.0 * u[4]) as usize,
            dash_frames: 5 + (10.0 * u[5]) as usize,
            turn: 2.0,
        },
        MotionRegime::JumpSpin | MotionRegime::Scripted => {
            let period = 40 + (20.0 * u[4]) as usize;
            let heading = 2.0 * PI * u[3];
            let speed = lerp(0.5, 1.5, u[2]);
            Motion::JumpSpin {
                x: lerp(w + 40.0, aw - w - 40.0, u[0]),
                y: lerp(h + 40.0, ah - h - 40.0, u[1]),
                vx: speed * heading.cos(),
                vy: speed * heading.sin(),
                period,
                offset: (u[5] * period as f64) as usize,
                jump_height: 0.3 * h,
                spin_radius: 0.6 * w,
            }
        }
    }
}

/// Keeps a center whose box extends `mx`/`my` either side inside the arena,
/// mirroring position and velocity at the walls.
fn reflect(pos: &mut f64, vel: &mut f64, margin: f64, size: f64) {
    let (lo, hi) = (margin, size - margin);
    if hi <= lo {
        *pos = 0.5 * size;
        return;
    }
    for _ in 0..4 {
        if *pos < lo {
            *pos = 2.0 * lo - *pos;
            *vel = vel.abs();
        } else if *pos > hi {
            *pos = 2.0 * hi - *pos;
            *vel = -vel.abs();
        } else {
            break;
        }
    }
    *pos = pos.clamp(lo, hi);
}

/// Truth boxes for `frames` frames.
pub fn simulate(motion: &Motion, w0: f64, h0: f64, frames: usize, arena: (f64, f64)) -> Vec<BBox> {
    let (aw, ah) = arena;
    let mut out = Vec::with_capacity(frames);
    let fit = |x: f64, y: f64, w: f64, h: f64| {
        let w = w.min(aw);
        let h = h.min(ah);
        let x = x.clamp(0.5 * w, aw - 0.5 * w);
        let y = y.clamp(0.5 * h, ah - 0.5 * h);
        BBox::new(x, y, w, h).expect("simulated boxes are finite with positive size")
    };
    match *motion {
        Motion::Waypoints { ref keys } => {
            for t in 0..frames {
                let t = t as f64;
                let k = keys.partition_point(|key| key[0] <= t);
                let (x, y) = match k {
                    0 => (keys[0][1], keys[0][2]),
                    k if k == keys.len() => (keys[k - 1][1], keys[k - 1][2]),
                    k => {
                        let (a, b) = (keys[k - 1], keys[k]);
                        let f = (t - a[0]) / (b[0] - a[0]);
                        (a[1] + f * (b[1] - a[1]), a[2] + f * (b[2] - a[2]))
                    }
                };
                out.push(fit(x, y, w0, h0));
            }
        }
        Motion::ConstantVelocity { x, y, vx, vy } => {
            let (mut x, mut y, mut vx, mut vy) = (x, y, vx, vy);
            for _ in 0..frames {
                out.push(fit(x, y, w0, h0));
                x += vx;
                y += vy;
                reflect(&mut x, &mut vx, 0.5 * w0, aw);
                reflect(&mut y, &mut vy, 0.5 * h0, ah);
            }
        }
        Motion::Circular { cx, cy, radius, omega, phase } => {
            for t in 0..frames {
                let th = phase + omega * t as f64;
                out.push(fit(cx + radius * th.cos(), cy + radius * th.sin(), w0, h0));
            }
        }
        Motion::FigureSpin {
            cx,
            cy,
            radius,
            omega,
            phase,
            width_amp,
        } => {
            for t in 0..frames {
                let th = phase + omega * t as f64;
                let w = w0 * (1.0 + width_amp * (2.0 * th).sin());
                out.push(fit(cx + radius * th.cos(), cy + radius * th.sin(), w, h0));
            }
        }
        Motion::StopAndDash {
            x,
            y,
            speed,
            heading,
            stop_frames,
            dash_frames,
            turn,
        } => {
            let (mut x, mut y) = (x, y);
            let (mut vx, mut vy) = (speed * heading.cos(), speed * heading.sin());
            let cycle = (stop_frames + dash_frames).max(1);
            for t in 0..frames {
                out.push(fit(x, y, w0, h0));
                let s = t % cycle;
                if s == stop_frames && t > 0 {
                    // new dash: rotate heading
                    let (c, sn) = (turn.cos(), turn.sin());
                    (vx, vy) = (c * vx - sn * vy, sn * vx + c * vy);
                }
                if s >= stop_frames {
                    x += vx;
                    y += vy;
                    reflect(&mut x, &mut vx, 0.5 * w0, aw);
                    reflect(&mut y, &mut vy, 0.5 * h0, ah);
                }
            }
        }
        Motion::JumpSpin {
            x,
            y,
            vx,
            vy,
            period,
            offset,
            jump_height,
            spin_radius,
        } => {
            let (mut x, mut y, mut vx, mut vy) = (x, y, vx, vy);
            let period = period.max(4);
            let jump = period / 4;
            let spin = period / 2;
            let mx = 0.5 * 1.3 * w0 + spin_radius;
            let my = 0.5 * h0 + jump_height + spin_radius;
            for t in 0..frames {
                let s = (t + offset) % period;
                let (mut dx, mut dy, mut w, mut h) = (0.0, 0.0, w0, h0);
                if s < jump {
                    let a = PI * s as f64 / jump as f64;
                    dy = -jump_height * a.sin();
                    h = h0 * (1.0 - 0.1 * a.sin());
                } else if s < jump + spin {
                    let a = 4.0 * PI * (s - jump) as f64 / spin as f64;
                    dx = spin_radius * a.sin();
                    dy = 0.3 * spin_radius * (1.0 - a.cos());
                    w = w0 * (1.0 + 0.3 * a.sin().abs());
                }
                out.push(fit(x + dx, y + dy, w, h));
                x += vx;
                y += vy;
                reflect(&mut x, &mut vx, mx, aw);
                reflect(&mut y, &mut vy, my, ah);
            }
        }
    }
    out
}

/// Fraction of `b` covered by the most-covering box in front of it (larger
/// bottom edge means closer to the camera).
fn occluded_fraction(k: usize, boxes: &[BBox]) -> f64 {
    let b = &boxes[k];
    boxes
        .iter()
        .enumerate()
        .filter(|&(j, o)| j != k && o.bottom() > b.bottom())
        .map(|(_, o)| b.intersection_area(o) / b.area())
        .fold(0.0, f64::max)
}

pub fn generate(cfg: &ScenarioConfig, seed: u64) -> Result<Scenario, SynthError> {
    cfg.validate().map_err(SynthError::Config)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut u = Uniforms(&mut rng);
    let arena = (cfg.arena_width, cfg.arena_height);

    let mut specs: Vec<(Motion, f64, f64)> = Vec::with_capacity(cfg.total_targets());
    let total_weight: f64 = cfg.regime_mix.iter().map(|r| r.weight).sum();
    for _ in 0..cfg.num_targets {
        let draws: [f64; 9] = std::array::from_fn(|_| u.next());
        let mut pick = draws[0] * total_weight;
        let mut regime = cfg.regime_mix.last().expect("validated non-empty").regime;
        for r in &cfg.regime_mix {
            if pick < r.weight {
                regime = r.regime;
                break;
            }
            pick -= r.weight;
        }
        let w = lerp(cfg.width_range.0, cfg.width_range.1, draws[1]);
        let h = w * lerp(cfg.aspect_range.0, cfg.aspect_range.1, draws[2]);
        let params: [f64; 6] = std::array::from_fn(|i| draws[3 + i]);
        specs.push((random_motion(regime, &params, w, h, cfg), w, h));
    }
    for s in &cfg.scripted {
        specs.push((s.motion.clone(), s.w, s.h));
    }

    let targets: Vec<TruthTrack> = specs
        .iter()
        .enumerate()
        .map(|(k, (m, w, h))| TruthTrack {
            id: k as u32 + 1,
            regime: Some(m.regime()),
            boxes: simulate(m, *w, *h, cfg.frames, arena),
        })
        .collect();

    let mut detections = Vec::with_capacity(cfg.frames);
    let sigma = cfg.noise_sigma;
    for t in 0..cfg.frames {
        let boxes: Vec<BBox> = targets.iter().map(|tr| tr.boxes[t]).collect();
        let mut list = Vec::new();
        for (k, b) in boxes.iter().enumerate() {
            let miss = u.next();
            let (n1, n2) = u.normal_pair();
            let (n3, n4) = u.normal_pair();
            let hidden = cfg.occlusions.iter().any(|o| o.target == k && (o.start..o.end).contains(&t));
            if hidden || miss < cfg.miss_rate {
                continue;
            }
            let noisy = BBox::new(
                b.x() + sigma * b.w() * n1,
                b.y() + sigma * b.h() * n2,
                (b.w() + sigma * b.w() * n3).max(1.0),
                (b.h() + sigma * b.h() * n4).max(1.0),
            )
            .expect("noisy boxes stay finite");
            let c = &cfg.confidence;
            let score = (c.base - c.penalty * occluded_fraction(k, &boxes)).clamp(c.floor, 1.0);
            list.push(SynthDetection {
                detection: Detection::new(noisy, score, t as u32 + 1).expect("score clamped into [0, 1]"),
                target: Some(k),
            });
        }
        detections.push(list);
    }

    Ok(Scenario {
        name: cfg.name.clone(),
        seed,
        frames: cfg.frames,
        targets,
        detections,
    })
}

/// Training/evaluation mix dominated by figure-spin targets.
pub fn figure_spin_config(frames: usize, targets: usize) -> ScenarioConfig {
    ScenarioConfig {
        name: "figure_spin".into(),
        frames,
        num_targets: targets,
        regime_mix: vec![RegimeWeight {
            regime: MotionRegime::FigureSpin,
            weight: 1.0,
        }],
        miss_rate: 0.05,
        ..ScenarioConfig::default()
    }
}

/// `count` figure-spin scenarios of 200 frames and 5 targets, seeded
/// `base_seed`, `base_seed + 1`, ...
pub fn figure_spin_scenarios(count: usize, base_seed: u64) -> Vec<Scenario> {
    let cfg = figure_spin_config(200, 5);
    (0..count as u64)
        .map(|k| generate(&cfg, base_seed.wrapping_add(k)).expect("figure-spin config is valid"))
        .collect()
}

fn pair_config(name: &str, frames: usize, scripted: Vec<ScriptedTarget>, occlusions: Vec<OcclusionEvent>) -> ScenarioConfig {
    ScenarioConfig {
        name: name.into(),
        frames,
        num_targets: 0,
        noise_sigma: 0.02,
        miss_rate: 0.0,
        scripted,
        occlusions,
        ..ScenarioConfig::default()
    }
}

/// Names and seeds of the occlusion benchmark, in order.
pub const SUITE: [(&str, u64); 5] = [
    ("crossing", 101),
    ("occlusion_5", 105),
    ("occlusion_10", 110),
    ("occlusion_20", 120),
    ("spin_after_jump", 131),
];

fn walker(keys: Vec<[f64; 3]>, w: f64, h: f64) -> ScriptedTarget {
    ScriptedTarget {
        motion: Motion::Waypoints { keys },
        w,
        h,
    }
}

/// Configurations of the occlusion benchmark.
///
/// * `crossing`: two people of different heights walk past each other at
///   constant speed; the shorter one passes behind.
/// * `occlusion_N`: a walker goes behind a standing person, is undetected
///   for exactly N frames while it slows to a crawl, then walks on at its
///   old speed.
/// * `spin_after_jump`: two dancers repeat jump-then-spin routines while
///   drifting across each other.
///
/// Apart from the scripted `occlusion_N` gaps, a target is hidden whenever
/// more than half of it is covered by a box in front of it.
pub fn occlusion_suite_configs() -> Vec<(ScenarioConfig, u64)> {
    let mut out = Vec::new();
    for (name, seed) in SUITE {
        let mut cfg = match name {
            "crossing" => pair_config(
                name,
                140,
                vec![
                    walker(vec![[0.0, 300.0, 400.0], [139.0, 856.0, 400.0]], 50.0, 150.0),
                    walker(vec![[0.0, 860.0, 382.0], [139.0, 304.0, 382.0]], 46.0, 115.0),
                ],
                vec![],
            ),
            "spin_after_jump" => pair_config(
                name,
                200,
                vec![
                    ScriptedTarget {
                        motion: Motion::JumpSpin {
                            x: 560.0,
                            y: 380.0,
                            vx: 0.8,
                            vy: 0.0,
                            period: 50,
                            offset: 0,
                            jump_height: 40.0,
                            spin_radius: 30.0,
                        },
                        w: 50.0,
                        h: 150.0,
                    },
                    ScriptedTarget {
                        motion: Motion::JumpSpin {
                            x: 720.0,
                            y: 370.0,
                            vx: -0.8,
                            vy: 0.0,
                            period: 50,
                            offset: 25,
                            jump_height: 35.0,
                            spin_radius: 30.0,
                        },
                        w: 46.0,
                        h: 120.0,
                    },
                ],
                vec![],
            ),
            _ => {
                let gap: usize = name.trim_start_matches("occlusion_").parse().expect("suite name");
                let g = gap as f64;
                let (speed, crawl, start) = (5.0, 1.0, 60.0);
                // reaches 10 px short of the occluder's center when hidden
                let x_hide = 630.0;
                let x0 = x_hide - speed * start;
                let x_show = x_hide + crawl * g;
                let frames = 130 + gap;
                let end = frames as f64 - 1.0;
                pair_config(
                    name,
                    frames,
                    vec![
                        walker(vec![[0.0, 640.0, 400.0]], 60.0, 160.0),
                        walker(
                            vec![
                                [0.0, x0, 390.0],
                                [start, x_hide, 390.0],
                                [start + g, x_show, 390.0],
                                [end, x_show + speed * (end - start - g), 390.0],
                            ],
                            52.0,
                            120.0,
                        ),
                    ],
                    vec![OcclusionEvent {
                        target: 1,
                        occluder: Some(0),
                        start: start as usize,
                        end: start as usize + gap,
                    }],
                )
            }
        };
        let mut hidden = hidden_intervals(&cfg);
        if cfg.occlusions.is_empty() {
            cfg.occlusions.append(&mut hidden);
        }
        out.push((cfg, seed));
    }
    out
}

/// Occlusion events for every maximal run of frames where a target is more
/// than half covered by a box in front of it.
fn hidden_intervals(cfg: &ScenarioConfig) -> Vec<OcclusionEvent> {
    let arena = (cfg.arena_width, cfg.arena_height);
    let tracks: Vec<Vec<BBox>> = cfg.scripted.iter().map(|s| simulate(&s.motion, s.w, s.h, cfg.frames, arena)).collect();
    let mut events = Vec::new();
    for k in 0..tracks.len() {
        let mut start = None;
        for t in 0..=cfg.frames {
            let covered = t < cfg.frames && {
                let boxes: Vec<BBox> = tracks.iter().map(|b| b[t]).collect();
                occluded_fraction(k, &boxes) > 0.5
            };
            match (covered, start) {
                (true, None) => start = Some(t),
                (false, Some(s)) => {
                    events.push(OcclusionEvent {
                        target: cfg.num_targets + k,
                        occluder: None,
                        start: s,
                        end: t,
                    });
                    start = None;
                }
                _ => {}
            }
        }
    }
    events
}

pub fn occlusion_suite() -> Vec<Scenario> {
    occlusion_suite_configs()
        .into_iter()
        .map(|(cfg, seed)| generate(&cfg, seed).expect("suite configs are valid"))
        .collect()
}
