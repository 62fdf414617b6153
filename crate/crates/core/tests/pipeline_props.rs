use std::collections::HashSet;

use proptest::prelude::*;

use memosort::mekf::{FrameNormalizer, MemoryKalmanFilter, NoiseModel};
use memosort::pipeline::{run_sequence, AssocMetric, Tracker, TrackerConfig};
use memosort::synthgen::{generate, ScenarioConfig};

fn tracker(cfg: TrackerConfig) -> Tracker {
    Tracker::new(cfg, MemoryKalmanFilter::plain(NoiseModel::default(), FrameNormalizer::default())).unwrap()
}

fn scenario(seed: u64, targets: usize, miss: f64) -> Vec<Vec<memosort::pipeline::Detection>> {
    let cfg = ScenarioConfig {
        frames: 60,
        num_targets: targets,
        miss_rate: miss,
        ..ScenarioConfig::default()
    };
    generate(&cfg, seed).unwrap().detection_frames()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn one_detection_per_track_and_valid_boxes(
        seed in 0u64..10_000,
        targets in 1usize..8,
        miss in 0.0f64..0.4,
        iou_metric in any::<bool>(),
    ) {
        let frames = scenario(seed, targets, miss);
        let cfg = TrackerConfig {
            stage1_metric: if iou_metric { AssocMetric::Iou } else { AssocMetric::MoIou },
            ..TrackerConfig::default()
        };
        let mut tr = tracker(cfg);
        for (k, dets) in frames.iter().enumerate() {
            let out = tr.step(k as u32 + 1, dets).unwrap();
            let eligible = dets.iter().filter(|d| d.score >= cfg.tau_low).count();
            prop_assert!(out.len() <= eligible);
            let ids: HashSet<u64> = out.iter().map(|o| o.id).collect();
            prop_assert_eq!(ids.len(), out.len());
            for o in &out {
                let b = o.bbox;
                prop_assert!(b.w() > 0.0 && b.h() > 0.0);
                prop_assert!(b.x().is_finite() && b.y().is_finite());
            }
            let live: HashSet<u64> = tr.tracks().iter().map(|t| t.id()).collect();
            prop_assert_eq!(live.len(), tr.tracks().len());
        }
    }

    #[test]
    fn equal_thresholds_ignore_low_band(seed in 0u64..10_000, tau in 0.2f64..0.9) {
        let frames = scenario(seed, 4, 0.1);
        let single = TrackerConfig { tau_high: tau, tau_low: tau, ..TrackerConfig::default() };
        // dropping every detection below tau changes nothing when the second stage is empty
        let filtered: Vec<Vec<_>> = frames
            .iter()
            .map(|f| f.iter().filter(|d| d.score >= tau).cloned().collect())
            .collect();
        let a = run_sequence(&mut tracker(single), &frames).unwrap();
        let b = run_sequence(&mut tracker(single), &filtered).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn reruns_are_identical(seed in 0u64..10_000) {
        let frames = scenario(seed, 5, 0.1);
        let a = run_sequence(&mut tracker(TrackerConfig::default()), &frames).unwrap();
        let b = run_sequence(&mut tracker(TrackerConfig::default()), &frames).unwrap();
        prop_assert_eq!(a, b);
    }
}

#[test]
fn ids_are_never_reused() {
    // a target that vanishes long enough to be dropped comes back under a new id
    let frames = scenario(3, 1, 0.0);
    let mut gap = frames.clone();
    for f in gap.iter_mut().take(45).skip(10) {
        f.clear();
    }
    let cfg = TrackerConfig { max_age: 5, ..TrackerConfig::default() };
    let out = run_sequence(&mut tracker(cfg), &gap).unwrap();
    let before: HashSet<u64> = out.iter().filter(|o| o.frame <= 10).map(|o| o.id).collect();
    let after: HashSet<u64> = out.iter().filter(|o| o.frame > 45).map(|o| o.id).collect();
    assert!(!before.is_empty() && !after.is_empty());
    assert!(before.is_disjoint(&after));
}
