//! CLEAR-MOT accuracy, identity F1 and one-step prediction error.

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::assign::{self, CostMatrix};
use crate::geometry::{iou, BBox};
use crate::mekf::MemoryKalmanFilter;
use crate::par;
use crate::synthgen::Scenario;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("duplicate id {id} in frame {frame} of the {side}")]
    DuplicateId { frame: usize, id: i64, side: &'static str },
    #[error("nothing to evaluate: {0}")]
    Empty(&'static str),
}

/// Counts and scores for one sequence (or a sum of sequences).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceReport {
    pub name: String,
    pub frames: usize,
    pub gt: u64,
    pub predictions: u64,
    pub matches: u64,
    pub false_positives: u64,
    pub misses: u64,
    pub id_switches: u64,
    pub idtp: u64,
    pub mota: f64,
    pub idf1: f64,
}

impl SequenceReport {
    fn finish(mut self) -> Self {
        let gt = self.gt as f64;
        self.mota = 1.0 - (self.misses + self.false_positives + self.id_switches) as f64 / gt;
        let denom = (self.gt + self.predictions) as f64;
        self.idf1 = if denom > 0.0 { 2.0 * self.idtp as f64 / denom } else { 1.0 };
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub name: String,
    pub mota: f64,
    pub idf1: f64,
    pub id_switches: u64,
    pub false_positives: u64,
    pub misses: u64,
    pub gt: u64,
    /// One-step prediction RMSE in pixels, when measured.
    pub pred_rmse: Option<f64>,
    pub sequences: Vec<SequenceReport>,
}

impl EvalReport {
    /// Sums the counts of several sequences into one report.
    pub fn from_sequences(name: &str, sequences: Vec<SequenceReport>) -> Result<Self, MetricsError> {
        let mut total = SequenceReport {
            name: name.to_string(),
            frames: 0,
            gt: 0,
            predictions: 0,
            matches: 0,
            false_positives: 0,
            misses: 0,
            id_switches: 0,
            idtp: 0,
            mota: 0.0,
            idf1: 0.0,
        };
        for s in &sequences {
            total.frames += s.frames;
            total.gt += s.gt;
            total.predictions += s.predictions;
            total.matches += s.matches;
            total.false_positives += s.false_positives;
            total.misses += s.misses;
            total.id_switches += s.id_switches;
            total.idtp += s.idtp;
        }
        if total.gt == 0 {
            return Err(MetricsError::Empty("no ground-truth boxes"));
        }
        let total = total.finish();
        Ok(Self {
            name: name.to_string(),
            mota: total.mota,
            idf1: total.idf1,
            id_switches: total.id_switches,
            false_positives: total.false_positives,
            misses: total.misses,
            gt: total.gt,
            pred_rmse: None,
            sequences,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("reports serialize")
    }
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{}", self.name)?;
        writeln!(f, "  MOTA  {:.4}", self.mota)?;
        writeln!(f, "  IDF1  {:.4}", self.idf1)?;
        writeln!(f, "  IDSW  {}", self.id_switches)?;
        writeln!(f, "  FP    {}", self.false_positives)?;
        writeln!(f, "  FN    {}", self.misses)?;
        writeln!(f, "  GT    {}", self.gt)?;
        if let Some(r) = self.pred_rmse {
            writeln!(f, "  RMSE  {r:.3} px")?;
        }
        if self.sequences.len() > 1 {
            for s in &self.sequences {
                writeln!(
                    f,
                    "  {:<20} MOTA {:.4}  IDF1 {:.4}  IDSW {}",
                    s.name, s.mota, s.idf1, s.id_switches
                )?;
            }
        }
        Ok(())
    }
}

fn check_unique(frames: &[Vec<(i64, BBox)>], side: &'static str) -> Result<(), MetricsError> {
    for (t, f) in frames.iter().enumerate() {
        for (k, (id, _)) in f.iter().enumerate() {
            if f[..k].iter().any(|(j, _)| j == id) {
                return Err(MetricsError::DuplicateId { frame: t + 1, id: *id, side });
            }
        }
    }
    Ok(())
}

/// Evaluates one sequence. `truth[k]` and `results[k]` hold frame `k + 1`;
/// either may be shorter than the other.
///
/// Per frame, last frame's truth↔result pairs are kept while their IoU
/// stays at or above `threshold`; the rest are matched by Hungarian
/// assignment on `1 - IoU` among pairs above the threshold. An identity
/// switch is counted when a truth object is matched to a different result
/// id than at its previous match. IDF1 uses the one-to-one truth-id ↔
/// result-id pairing that maximizes the number of co-detected frames.
pub fn evaluate(
    name: &str,
    truth: &[Vec<(i64, BBox)>],
    results: &[Vec<(i64, BBox)>],
    threshold: f64,
) -> Result<SequenceReport, MetricsError> {
    check_unique(truth, "truth")?;
    check_unique(results, "results")?;
    let frames = truth.len().max(results.len());
    let empty = Vec::new();
    let mut rep = SequenceReport {
        name: name.to_string(),
        frames,
        gt: 0,
        predictions: 0,
        matches: 0,
        false_positives: 0,
        misses: 0,
        id_switches: 0,
        idtp: 0,
        mota: 0.0,
        idf1: 0.0,
    };
    let mut prev: HashMap<i64, i64> = HashMap::new();
    let mut last_match: HashMap<i64, i64> = HashMap::new();
    let mut overlap: HashMap<(i64, i64), u64> = HashMap::new();
    let mut gt_ids = Vec::new();
    let mut hyp_ids = Vec::new();

    for t in 0..frames {
        let gts = truth.get(t).unwrap_or(&empty);
        let hyps = results.get(t).unwrap_or(&empty);
        rep.gt += gts.len() as u64;
        rep.predictions += hyps.len() as u64;
        gt_ids.extend(gts.iter().map(|g| g.0));
        hyp_ids.extend(hyps.iter().map(|h| h.0));

        let ious: Vec<Vec<f64>> = gts.iter().map(|g| hyps.iter().map(|h| iou(&g.1, &h.1)).collect()).collect();
        for (gi, g) in gts.iter().enumerate() {
            for (hi, h) in hyps.iter().enumerate() {
                if ious[gi][hi] >= threshold {
                    *overlap.entry((g.0, h.0)).or_default() += 1;
                }
            }
        }

        let mut gt_used = vec![false; gts.len()];
        let mut hyp_used = vec![false; hyps.len()];
        let mut pairs = Vec::new();
        for (gi, g) in gts.iter().enumerate() {
            if let Some(&hid) = prev.get(&g.0) {
                if let Some(hi) = hyps.iter().position(|h| h.0 == hid) {
                    if ious[gi][hi] >= threshold && !hyp_used[hi] {
                        gt_used[gi] = true;
                        hyp_used[hi] = true;
                        pairs.push((gi, hi));
                    }
                }
            }
        }
        let free_g: Vec<usize> = (0..gts.len()).filter(|&i| !gt_used[i]).collect();
        let free_h: Vec<usize> = (0..hyps.len()).filter(|&i| !hyp_used[i]).collect();
        if !free_g.is_empty() && !free_h.is_empty() {
            let data = free_g
                .iter()
                .flat_map(|&gi| {
                    let row = &ious[gi];
                    free_h.iter().map(move |&hi| {
                        let v = row[hi];
                        if v >= threshold {
                            1.0 - v
                        } else {
                            f64::INFINITY
                        }
                    })
                })
                .collect();
            let c = CostMatrix::new(free_g.len(), free_h.len(), data).expect("costs in [0, 1] or inf");
            for (r, k) in assign::solve(&c, f64::INFINITY).matches {
                pairs.push((free_g[r], free_h[k]));
            }
        }

        prev.clear();
        for &(gi, hi) in &pairs {
            let (gid, hid) = (gts[gi].0, hyps[hi].0);
            if let Some(&old) = last_match.get(&gid) {
                if old != hid {
                    rep.id_switches += 1;
                }
            }
            last_match.insert(gid, hid);
            prev.insert(gid, hid);
        }
        rep.matches += pairs.len() as u64;
        rep.misses += (gts.len() - pairs.len()) as u64;
        rep.false_positives += (hyps.len() - pairs.len()) as u64;
    }

    gt_ids.sort_unstable();
    gt_ids.dedup();
    hyp_ids.sort_unstable();
    hyp_ids.dedup();
    if !gt_ids.is_empty() && !hyp_ids.is_empty() {
        let max = overlap.values().copied().max().unwrap_or(0) as f64;
        let data = gt_ids
            .iter()
            .flat_map(|g| hyp_ids.iter().map(|h| max - overlap.get(&(*g, *h)).copied().unwrap_or(0) as f64))
            .collect();
        let c = CostMatrix::new(gt_ids.len(), hyp_ids.len(), data).expect("non-negative costs");
        rep.idtp = assign::solve(&c, f64::INFINITY)
            .matches
            .iter()
            .map(|&(g, h)| overlap.get(&(gt_ids[g], hyp_ids[h])).copied().unwrap_or(0))
            .sum();
    }
    if rep.gt == 0 {
        return Err(MetricsError::Empty("no ground-truth boxes"));
    }
    Ok(rep.finish())
}

/// One-step-ahead prediction RMSE of box centers, in pixels.
///
/// Each target is tracked on its own detections: the filter starts at its
/// first detection, then every frame predicts, and updates when the target
/// was detected (coasting otherwise). The prediction error against the
/// truth center is recorded on frames where the target is detected, after
/// the first `burn_in` predictions of the target.
pub fn prediction_rmse(filter: &MemoryKalmanFilter, scenario: &Scenario, burn_in: usize) -> Result<f64, MetricsError> {
    let (sum, n) = prediction_sq_error(filter, scenario, burn_in);
    if n == 0 {
        return Err(MetricsError::Empty("no scored prediction steps"));
    }
    Ok((sum / n as f64).sqrt())
}

/// Sum of squared center errors and the number of scored steps, so several
/// scenarios can be pooled.
pub fn prediction_sq_error(filter: &MemoryKalmanFilter, scenario: &Scenario, burn_in: usize) -> (f64, usize) {
    let per_target = par::map_range(scenario.targets.len(), |k| {
        let truth = &scenario.targets[k].boxes;
        let mut state = None;
        let (mut sum, mut n, mut steps) = (0.0, 0usize, 0usize);
        for (t, frame) in scenario.detections.iter().enumerate().take(scenario.frames) {
            let det = frame.iter().find(|d| d.target == Some(k));
            state = match (state, det) {
                (None, None) => None,
                (None, Some(d)) => Some(filter.initiate(&d.detection.bbox)),
                (Some(s), det) => {
                    let pred = filter.spg_predict(&s);
                    steps += 1;
                    if let Some(d) = det {
                        if steps > burn_in {
                            sum += (pred.mean[0] - truth[t].x()).powi(2) + (pred.mean[1] - truth[t].y()).powi(2);
                            n += 1;
                        }
                        Some(filter.sug_update(&pred, &d.detection.bbox).0)
                    } else {
                        Some(filter.coast(&pred))
                    }
                }
            };
        }
        (sum, n)
    });
    per_target.into_iter().fold((0.0, 0), |a, b| (a.0 + b.0, a.1 + b.1))
}

/// Indices of `reports` ranked by MOTA, then IDF1, both descending. Equal
/// reports keep their input order.
pub fn rank(reports: &[EvalReport]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..reports.len()).collect();
    idx.sort_by(|&a, &b| {
        let (ra, rb) = (&reports[a], &reports[b]);
        rb.mota.total_cmp(&ra.mota).then(rb.idf1.total_cmp(&ra.idf1))
    });
    idx
}

/// Ranked text table.
pub fn compare(reports: &[EvalReport]) -> String {
    let mut s = format!(
        "{:<4} {:<24} {:>8} {:>8} {:>6} {:>6} {:>6} {:>10}\n",
        "rank", "name", "MOTA", "IDF1", "IDSW", "FP", "FN", "RMSE(px)"
    );
    for (k, i) in rank(reports).into_iter().enumerate() {
        let r = &reports[i];
        let rmse = r.pred_rmse.map_or_else(|| "-".to_string(), |v| format!("{v:.3}"));
        s.push_str(&format!(
            "{:<4} {:<24} {:>8.4} {:>8.4} {:>6} {:>6} {:>6} {:>10}\n",
            k + 1,
            r.name,
            r.mota,
            r.idf1,
            r.id_switches,
            r.false_positives,
            r.misses,
            rmse
        ));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mekf::{FrameNormalizer, NoiseModel};
    use crate::synthgen::{generate, occlusion_suite, Motion, ScenarioConfig, ScriptedTarget};

    fn b(x: f64, y: f64) -> BBox {
        BBox::new(x, y, 20.0, 40.0).unwrap()
    }

    fn two_targets(frames: usize) -> Vec<Vec<(i64, BBox)>> {
        (0..frames)
            .map(|t| vec![(1, b(100.0 + t as f64, 100.0)), (2, b(300.0, 100.0 + t as f64))])
            .collect()
    }

    #[test]
    fn perfect_tracking() {
        let gt = two_targets(10);
        let r = evaluate("p", &gt, &gt, 0.5).unwrap();
        assert_eq!((r.mota, r.idf1, r.id_switches), (1.0, 1.0, 0));
    }

    #[test]
    fn empty_results() {
        let gt = two_targets(10);
        let r = evaluate("e", &gt, &[], 0.5).unwrap();
        assert_eq!((r.mota, r.idf1, r.misses), (0.0, 0.0, 20));
        assert!(evaluate("x", &[], &[], 0.5).is_err());
    }

    #[test]
    fn mid_sequence_swap() {
        let gt = two_targets(10);
        // result ids 7/8; ids swap from frame 6 on
        let res: Vec<Vec<(i64, BBox)>> = gt
            .iter()
            .enumerate()
            .map(|(t, f)| {
                let (a, b) = if t < 5 { (7, 8) } else { (8, 7) };
                vec![(a, f[0].1), (b, f[1].1)]
            })
            .collect();
        let r = evaluate("swap", &gt, &res, 0.5).unwrap();
        assert_eq!(r.id_switches, 2);
        assert_eq!(r.matches, 20);
        // both 2x2 pairings give 5 + 5 overlapping frames
        let brute = [(5u64 + 5), (5 + 5)].into_iter().max().unwrap();
        assert_eq!(r.idtp, brute);
        assert!((r.idf1 - 2.0 * 10.0 / 40.0).abs() < 1e-12);
        assert!((r.mota - (1.0 - 2.0 / 20.0)).abs() < 1e-12);
    }

    #[test]
    fn one_target_changes_id_mid_sequence() {
        let gt = two_targets(10);
        // target 2 is reported as 8, then as 9 from frame 6 on
        let res: Vec<Vec<(i64, BBox)>> = gt
            .iter()
            .enumerate()
            .map(|(t, f)| vec![(7, f[0].1), (if t < 5 { 8 } else { 9 }, f[1].1)])
            .collect();
        let r = evaluate("one", &gt, &res, 0.5).unwrap();
        assert_eq!(r.id_switches, 1);
        // enumerate every one-to-one pairing of truth {1, 2} with results {7, 8, 9}
        let overlap = |g: usize, h: usize| match (g, h) {
            (0, 0) => 10u64,
            (1, 1) | (1, 2) => 5,
            _ => 0,
        };
        let mut best = 0;
        for h1 in 0..3 {
            for h2 in 0..3 {
                if h1 != h2 {
                    best = best.max(overlap(0, h1) + overlap(1, h2));
                }
            }
        }
        assert_eq!(r.idtp, best);
        assert!((r.idf1 - 2.0 * best as f64 / 40.0).abs() < 1e-12);
        assert!((r.mota - 0.95).abs() < 1e-12);
    }

    #[test]
    fn degenerate_gates_match_the_plain_filter_rmse() {
        let s = generate(&crate::synthgen::figure_spin_config(120, 3), 8).unwrap();
        let plain = MemoryKalmanFilter::plain(NoiseModel::default(), FrameNormalizer::default());
        let zero = MemoryKalmanFilter::new(
            std::sync::Arc::new(crate::nnet::GateWeights::init(crate::nnet::GateArch::default(), 99)),
            NoiseModel::default(),
            FrameNormalizer::default(),
        );
        assert_eq!(prediction_rmse(&plain, &s, 5).unwrap(), prediction_rmse(&zero, &s, 5).unwrap());
    }

    #[test]
    fn single_target_swap_counts_once() {
        let gt: Vec<Vec<(i64, BBox)>> = (0..10).map(|t| vec![(1, b(100.0 + t as f64, 100.0))]).collect();
        let res: Vec<Vec<(i64, BBox)>> = gt
            .iter()
            .enumerate()
            .map(|(t, f)| vec![(if t < 4 { 3 } else { 9 }, f[0].1)])
            .collect();
        let r = evaluate("s", &gt, &res, 0.5).unwrap();
        assert_eq!(r.id_switches, 1);
        // brute force over {1↔3, 1↔9}: 4 vs 6 frames
        assert_eq!(r.idtp, 6);
        assert!((r.idf1 - 12.0 / 20.0).abs() < 1e-12);
    }

    #[test]
    fn relabeling_results_does_not_change_scores() {
        let gt = two_targets(12);
        let res: Vec<Vec<(i64, BBox)>> = gt
            .iter()
            .enumerate()
            .map(|(t, f)| {
                let mut v = vec![(10, f[0].1)];
                if t % 3 != 0 {
                    v.push((if t < 6 { 11 } else { 12 }, f[1].1));
                }
                v
            })
            .collect();
        let relabeled: Vec<Vec<(i64, BBox)>> = res
            .iter()
            .map(|f| f.iter().map(|(id, bb)| (1000 - id, *bb)).collect())
            .collect();
        let a = evaluate("a", &gt, &res, 0.5).unwrap();
        let b = evaluate("a", &gt, &relabeled, 0.5).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn duplicates_rejected() {
        let gt = vec![vec![(1, b(0.0, 0.0)), (1, b(50.0, 0.0))]];
        assert!(matches!(evaluate("d", &gt, &[], 0.5), Err(MetricsError::DuplicateId { .. })));
    }

    #[test]
    fn suite_truth_scores_perfectly() {
        for s in occlusion_suite() {
            let gt = s.truth_frames();
            let r = evaluate(&s.name, &gt, &gt, 0.5).unwrap();
            assert_eq!((r.mota, r.idf1), (1.0, 1.0), "{}", s.name);
        }
    }

    #[test]
    fn plain_kf_converges_on_noiseless_constant_velocity() {
        let cfg = ScenarioConfig {
            frames: 120,
            num_targets: 0,
            noise_sigma: 0.0,
            miss_rate: 0.0,
            scripted: vec![ScriptedTarget {
                motion: Motion::ConstantVelocity {
                    x: 200.0,
                    y: 300.0,
                    vx: 3.0,
                    vy: 1.0,
                },
                w: 40.0,
                h: 100.0,
            }],
            ..ScenarioConfig::default()
        };
        let s = generate(&cfg, 0).unwrap();
        let kf = MemoryKalmanFilter::plain(NoiseModel::default(), FrameNormalizer::default());
        let rmse = prediction_rmse(&kf, &s, 40).unwrap();
        assert!(rmse < 0.5, "{rmse}");
        let empty = generate(&ScenarioConfig { frames: 0, ..cfg }, 0).unwrap();
        assert!(prediction_rmse(&kf, &empty, 0).is_err());
    }

    #[test]
    fn ranking() {
        let mk = |name: &str, mota, idf1| EvalReport {
            name: name.into(),
            mota,
            idf1,
            id_switches: 0,
            false_positives: 0,
            misses: 0,
            gt: 1,
            pred_rmse: None,
            sequences: vec![],
        };
        let r = vec![mk("a", 0.8, 0.5), mk("b", 0.9, 0.1), mk("c", 0.8, 0.7), mk("d", 0.8, 0.5)];
        assert_eq!(rank(&r), vec![1, 2, 0, 3]);
        let same = vec![mk("x", 0.5, 0.5), mk("y", 0.5, 0.5), mk("z", 0.5, 0.5)];
        assert_eq!(rank(&same), vec![0, 1, 2]);
        let table = compare(&r);
        assert_eq!(table.lines().nth(1).unwrap().split_whitespace().nth(1), Some("b"));
        let order = rank(&r);
        for w in order.windows(2) {
            let (x, y) = (&r[w[0]], &r[w[1]]);
            assert!(x.mota > y.mota || (x.mota == y.mota && x.idf1 >= y.idf1));
        }
    }

    #[test]
    fn report_serializes() {
        let gt = two_targets(5);
        let seq = evaluate("s", &gt, &gt, 0.5).unwrap();
        let rep = EvalReport::from_sequences("all", vec![seq]).unwrap();
        let back: EvalReport = serde_json::from_str(&rep.to_json()).unwrap();
        assert_eq!(back, rep);
        assert!(rep.to_string().contains("MOTA  1.0000"));
    }
}
