//! The per-frame tracker.
//!
//! Each frame: predict every live track, match high-confidence detections
//! with a motion-adaptive IoU cost (stage 1), match the leftover tracks to
//! low-confidence detections with plain IoU (stage 2), update matched tracks,
//! coast the rest, and start tentative tracks from unmatched high-confidence
//! detections.
//!
//! Lifecycle: a tentative track is confirmed after `min_hits` consecutive
//! matches and deleted on its first miss; a confirmed track becomes lost on a
//! miss and is confirmed again on its next match; any track unmatched for
//! more than `max_age` frames is deleted. Only confirmed tracks matched in
//! the current frame are reported.

use log::warn;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::assign::{self, CostMatrix};
use crate::geometry::{iou, mat_params, mo_iou, BBox, MatConfig};
use crate::mekf::{Diagnostic, MemoryKalmanFilter, Prediction, TrackState};
use crate::par;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Detection {
    pub bbox: BBox,
    pub score: f64,
    pub frame: u32,
}

impl Detection {
    pub fn new(bbox: BBox, score: f64, frame: u32) -> Result<Self, String> {
        if !(0.0..=1.0).contains(&score) {
            return Err(format!("detection score must be in [0, 1], got {score}"));
        }
        Ok(Self { bbox, score, frame })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrackStatus {
    Tentative,
    Confirmed,
    Lost,
}

#[derive(Debug, Clone)]
pub struct Track {
    id: u64,
    pub state: TrackState,
    pub status: TrackStatus,
    /// Consecutive frames with a match.
    pub hits: u32,
    /// Frames since the last match.
    pub age_since_update: u32,
    pub last_score: f64,
}

impl Track {
    pub fn id(&self) -> u64 {
        self.id
    }

    pub fn bbox(&self) -> BBox {
        self.state.bbox()
    }
}

/// Similarity used by the first association stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AssocMetric {
    /// Motion-adaptive IoU with `(p, q)` from each track's velocity.
    MoIou,
    /// Plain IoU (the ablation baseline).
    Iou,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrackerConfig {
    pub tau_high: f64,
    pub tau_low: f64,
    pub mat: MatConfig,
    /// Largest accepted stage-1 cost.
    pub gate_high: f64,
    /// Largest accepted stage-2 cost.
    pub gate_low: f64,
    pub min_hits: u32,
    pub max_age: u32,
    /// Weight of the appearance similarity in the stage-1 cost.
    pub appearance_weight: f64,
    pub stage1_metric: AssocMetric,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self {
            tau_high: 0.6,
            tau_low: 0.1,
            mat: MatConfig::default(),
            gate_high: 0.85,
            gate_low: 0.5,
            min_hits: 3,
            max_age: 30,
            appearance_weight: 0.0,
            stage1_metric: AssocMetric::MoIou,
        }
    }
}

impl TrackerConfig {
    /// `tau_low == tau_high` is allowed and disables the second stage.
    pub fn validate(&self) -> Result<(), String> {
        if !(0.0 <= self.tau_low && self.tau_low <= self.tau_high && self.tau_high <= 1.0) {
            return Err(format!(
                "need 0 <= tau_low <= tau_high <= 1, got tau_low={} tau_high={}",
                self.tau_low, self.tau_high
            ));
        }
        for (name, g) in [("gate_high", self.gate_high), ("gate_low", self.gate_low)] {
            if !g.is_finite() || g < 0.0 {
                return Err(format!("{name} must be finite and >= 0, got {g}"));
            }
        }
        if !(0.0..=1.0).contains(&self.appearance_weight) {
            return Err(format!("appearance_weight must be in [0, 1], got {}", self.appearance_weight));
        }
        if self.min_hits == 0 {
            return Err("min_hits must be >= 1".into());
        }
        self.mat.validate()
    }
}

/// One reported box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackOutput {
    pub frame: u32,
    pub id: u64,
    pub bbox: BBox,
    pub score: f64,
}

/// Appearance similarity in `[0, 1]` between a track and a detection.
pub type AppearanceHook = Box<dyn Fn(&Track, &Detection) -> f64 + Send + Sync>;

#[derive(Debug, Error, PartialEq)]
pub enum PipelineError {
    #[error("frame {got} is not after the previous frame {last}")]
    OutOfOrder { last: u32, got: u32 },
    #[error("detection from frame {got} passed to step for frame {expected}")]
    FrameMismatch { expected: u32, got: u32 },
    #[error("invalid tracker config: {0}")]
    Config(String),
}

pub struct Tracker {
    cfg: TrackerConfig,
    filter: MemoryKalmanFilter,
    tracks: Vec<Track>,
    next_id: u64,
    last_frame: Option<u32>,
    hook: Option<AppearanceHook>,
    diagnostics: u64,
}

impl Tracker {
    pub fn new(cfg: TrackerConfig, filter: MemoryKalmanFilter) -> Result<Self, PipelineError> {
        cfg.validate().map_err(PipelineError::Config)?;
        Ok(Self {
            cfg,
            filter,
            tracks: Vec::new(),
            next_id: 1,
            last_frame: None,
            hook: None,
            diagnostics: 0,
        })
    }

    pub fn config(&self) -> &TrackerConfig {
        &self.cfg
    }

    pub fn tracks(&self) -> &[Track] {
        &self.tracks
    }

    /// Filter diagnostics and clamped hook outputs seen so far.
    pub fn diagnostics(&self) -> u64 {
        self.diagnostics
    }

    pub fn set_appearance_hook(&mut self, hook: AppearanceHook) {
        self.hook = Some(hook);
    }

    pub fn step(&mut self, frame: u32, dets: &[Detection]) -> Result<Vec<TrackOutput>, PipelineError> {
        if let Some(last) = self.last_frame {
            if frame <= last {
                return Err(PipelineError::OutOfOrder { last, got: frame });
            }
        }
        if let Some(d) = dets.iter().find(|d| d.frame != frame) {
            return Err(PipelineError::FrameMismatch {
                expected: frame,
                got: d.frame,
            });
        }
        self.last_frame = Some(frame);
        let cfg = self.cfg;

        let filter = &self.filter;
        let preds: Vec<Prediction> = par::map(&self.tracks, |t| filter.spg_predict(&t.state));
        self.diagnostics += preds.iter().filter(|p| p.failsafe).count() as u64;

        let high: Vec<usize> = (0..dets.len()).filter(|&i| dets[i].score >= cfg.tau_high).collect();
        let low: Vec<usize> = (0..dets.len())
            .filter(|&i| dets[i].score >= cfg.tau_low && dets[i].score < cfg.tau_high)
            .collect();

        // det index per track
        let mut matched: Vec<Option<usize>> = vec![None; self.tracks.len()];
        let all_tracks: Vec<usize> = (0..self.tracks.len()).collect();
        let (stage1, clamped) = self.stage1_costs(&all_tracks, &preds, dets, &high);
        if clamped > 0 {
            warn!("appearance hook returned {clamped} values outside [0, 1]; clamped");
            self.diagnostics += clamped;
        }
        let a1 = assign::solve(&stage1, cfg.gate_high);
        for &(r, c) in &a1.matches {
            matched[all_tracks[r]] = Some(high[c]);
        }
        let new_dets: Vec<usize> = a1.unmatched_cols.iter().map(|&c| high[c]).collect();

        let rest: Vec<usize> = a1.unmatched_rows.iter().map(|&r| all_tracks[r]).collect();
        if !rest.is_empty() && !low.is_empty() {
            let rows = par::map(&rest, |&t| {
                let pb = preds[t].bbox();
                low.iter().map(|&d| 1.0 - iou(&pb, &dets[d].bbox)).collect::<Vec<_>>()
            });
            let c2 = CostMatrix::new(rest.len(), low.len(), rows.concat()).expect("iou costs are in [0, 1]");
            for &(r, c) in &assign::solve(&c2, cfg.gate_low).matches {
                matched[rest[r]] = Some(low[c]);
            }
        }

        let work: Vec<usize> = (0..self.tracks.len()).collect();
        let results: Vec<(TrackState, Option<Diagnostic>)> = par::map(&work, |&t| match matched[t] {
            Some(d) => filter.sug_update(&preds[t], &dets[d].bbox),
            None => (filter.coast(&preds[t]), None),
        });

        let mut out = Vec::new();
        let mut kept = Vec::with_capacity(self.tracks.len() + new_dets.len());
        for ((mut track, (state, diag)), m) in self.tracks.drain(..).zip(results).zip(&matched) {
            if diag.is_some() {
                self.diagnostics += 1;
            }
            track.state = state;
            match m {
                Some(d) => {
                    track.hits += 1;
                    track.age_since_update = 0;
                    track.last_score = dets[*d].score;
                    track.status = match track.status {
                        TrackStatus::Tentative if track.hits >= cfg.min_hits => TrackStatus::Confirmed,
                        TrackStatus::Tentative => TrackStatus::Tentative,
                        TrackStatus::Confirmed | TrackStatus::Lost => TrackStatus::Confirmed,
                    };
                    if track.status == TrackStatus::Confirmed {
                        out.push(TrackOutput {
                            frame,
                            id: track.id,
                            bbox: track.bbox(),
                            score: track.last_score,
                        });
                    }
                }
                None => {
                    track.hits = 0;
                    track.age_since_update += 1;
                    if track.status == TrackStatus::Tentative || track.age_since_update > cfg.max_age {
                        continue;
                    }
                    track.status = TrackStatus::Lost;
                }
            }
            kept.push(track);
        }

        for d in new_dets {
            let det = &dets[d];
            let status = if cfg.min_hits <= 1 {
                TrackStatus::Confirmed
            } else {
                TrackStatus::Tentative
            };
            let track = Track {
                id: self.next_id,
                state: filter.initiate(&det.bbox),
                status,
                hits: 1,
                age_since_update: 0,
                last_score: det.score,
            };
            self.next_id += 1;
            if status == TrackStatus::Confirmed {
                out.push(TrackOutput {
                    frame,
                    id: track.id,
                    bbox: track.bbox(),
                    score: det.score,
                });
            }
            kept.push(track);
        }
        self.tracks = kept;
        out.sort_by_key(|o| o.id);
        Ok(out)
    }

    /// Stage-1 cost rows (built in parallel) and the number of clamped hook outputs.
    fn stage1_costs(
        &self,
        tracks: &[usize],
        preds: &[Prediction],
        dets: &[Detection],
        high: &[usize],
    ) -> (CostMatrix, u64) {
        let cfg = &self.cfg;
        let lambda = cfg.appearance_weight;
        let hook = self.hook.as_ref().filter(|_| lambda > 0.0);
        let live = &self.tracks;
        let rows = par::map(tracks, |&t| {
            let track = &live[t];
            let pb = preds[t].bbox();
            let m = &track.state.mean;
            let (p, q) = mat_params(m[4], m[5], m[7], m[2].max(1.0), m[3].max(1.0), &cfg.mat);
            let mut clamped = 0u64;
            let row: Vec<f64> = high
                .iter()
                .map(|&d| {
                    let det = &dets[d];
                    let motion = match cfg.stage1_metric {
                        AssocMetric::MoIou => mo_iou(&pb, &det.bbox, p, q).expect("validated mat levels"),
                        AssocMetric::Iou => iou(&pb, &det.bbox),
                    };
                    let sim = match hook {
                        Some(f) => {
                            let raw = f(track, det);
                            let app = if raw.is_nan() { 0.0 } else { raw.clamp(0.0, 1.0) };
                            if app != raw {
                                clamped += 1;
                            }
                            (1.0 - lambda) * motion + lambda * app
                        }
                        None => motion,
                    };
                    (1.0 - sim).max(0.0)
                })
                .collect();
            (row, clamped)
        });
        let clamped: u64 = rows.iter().map(|r| r.1).sum();
        let data: Vec<f64> = rows.into_iter().flat_map(|r| r.0).collect();
        let c = CostMatrix::new(tracks.len(), high.len(), data).expect("similarities are in [0, 1]");
        (c, clamped)
    }
}

/// Runs a whole sequence; `frames[k]` holds the detections of frame `k + 1`.
/// Returns every reported box, sorted by `(frame, id)`.
pub fn run_sequence(tracker: &mut Tracker, frames: &[Vec<Detection>]) -> Result<Vec<TrackOutput>, PipelineError> {
    let mut out = Vec::new();
    for (k, dets) in frames.iter().enumerate() {
        out.extend(tracker.step(k as u32 + 1, dets)?);
    }
    Ok(out)
}
