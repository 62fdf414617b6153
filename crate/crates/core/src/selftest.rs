//! Built-in consistency checks run by `memosort selftest`.
//!
//! Each check is seeded and its report line contains no timings, so two
//! runs print the same text.

#![allow(clippy::needless_range_loop)]

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::assign::{self, CostMatrix};
use crate::geometry::{eiou, hiou, iou, mo_iou, BBox};
use crate::mekf::{FrameNormalizer, MemoryKalmanFilter, NoiseModel, TrackState};
use crate::nnet::{GateArch, GateWeights};
use crate::synthgen::{figure_spin_config, generate};
use crate::trainer::{build_dataset, gradient_check, TrainConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl fmt::Display for CheckResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "{tag} {:<16} {}", self.name, self.detail)
    }
}

pub fn run_all() -> Vec<CheckResult> {
    vec![kf_degeneracy(100), iou_degeneracy(10_000), assignment_oracle(300), gradient(13)]
}

/// Dense Gauss-Jordan inverse with partial pivoting.
fn invert<const N: usize>(mut a: [[f64; N]; N]) -> [[f64; N]; N] {
    let mut inv = [[0.0; N]; N];
    for (i, row) in inv.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    for col in 0..N {
        let piv = (col..N).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs())).unwrap();
        a.swap(col, piv);
        inv.swap(col, piv);
        let d = a[col][col];
        for j in 0..N {
            a[col][j] /= d;
            inv[col][j] /= d;
        }
        for i in 0..N {
            if i != col {
                let f = a[i][col];
                for j in 0..N {
                    a[i][j] -= f * a[col][j];
                    inv[i][j] -= f * inv[col][j];
                }
            }
        }
    }
    inv
}

/// Constant-velocity Kalman filter written out with plain arrays.
struct Textbook {
    x: [f64; 8],
    p: [[f64; 8]; 8],
    noise: NoiseModel,
}

impl Textbook {
    fn predict(&mut self) {
        let (w, h) = (self.x[2], self.x[3]);
        let mut x = self.x;
        for i in 0..4 {
            x[i] += self.x[i + 4];
        }
        let f = |i: usize, j: usize| -> f64 { f64::from(i == j) + f64::from(i < 4 && j == i + 4) };
        let mut fp = [[0.0; 8]; 8];
        for i in 0..8 {
            for j in 0..8 {
                fp[i][j] = (0..8).map(|k| f(i, k) * self.p[k][j]).sum();
            }
        }
        let q = self.noise.process_diag(w, h);
        for i in 0..8 {
            for j in 0..8 {
                self.p[i][j] = (0..8).map(|k| fp[i][k] * f(j, k)).sum();
            }
            self.p[i][i] += q[i];
        }
        self.x = x;
    }

    fn update(&mut self, z: [f64; 4]) {
        let r = self.noise.measurement_diag(self.x[2], self.x[3]);
        let mut s = [[0.0; 4]; 4];
        for i in 0..4 {
            for j in 0..4 {
                s[i][j] = self.p[i][j];
            }
            s[i][i] += r[i];
        }
        let si = invert(s);
        let mut k = [[0.0; 4]; 8];
        for i in 0..8 {
            for j in 0..4 {
                k[i][j] = (0..4).map(|l| self.p[i][l] * si[l][j]).sum();
            }
        }
        let y: Vec<f64> = (0..4).map(|i| z[i] - self.x[i]).collect();
        for i in 0..8 {
            self.x[i] += (0..4).map(|j| k[i][j] * y[j]).sum::<f64>();
        }
        let mut p = self.p;
        for i in 0..8 {
            for j in 0..8 {
                p[i][j] -= (0..4).map(|l| k[i][l] * self.p[l][j]).sum::<f64>();
            }
        }
        self.p = p;
    }
}

fn max_gap(s: &TrackState, o: &Textbook) -> f64 {
    let mut m = 0.0f64;
    for i in 0..8 {
        m = m.max((s.mean[i] - o.x[i]).abs());
        for j in 0..8 {
            m = m.max((s.cov[(i, j)] - o.p[i][j]).abs());
        }
    }
    m
}

/// Zero-head filter against the textbook filter over random sequences.
pub fn kf_degeneracy(sequences: usize) -> CheckResult {
    let noise = NoiseModel::default();
    let filter = MemoryKalmanFilter::plain(noise, FrameNormalizer::default());
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst = 0.0f64;
    for _ in 0..sequences {
        let (mut x, mut y) = (rng.random_range(100.0..1100.0), rng.random_range(100.0..600.0));
        let (w, h) = (rng.random_range(20.0..80.0), rng.random_range(40.0..200.0));
        let (vx, vy) = (rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0));
        let first = BBox::new(x, y, w, h).expect("valid box");
        let mut s = filter.initiate(&first);
        let mut o = Textbook {
            x: s.mean,
            p: std::array::from_fn(|i| std::array::from_fn(|j| s.cov[(i, j)])),
            noise,
        };
        for _ in 0..50 {
            x += vx + rng.random_range(-2.0..2.0);
            y += vy + rng.random_range(-2.0..2.0);
            let z = BBox::new(x, y, w * rng.random_range(0.95..1.05), h * rng.random_range(0.95..1.05))
                .expect("valid box");
            let pred = filter.spg_predict(&s);
            s = filter.sug_update(&pred, &z).0;
            o.predict();
            o.update(z.to_array());
            worst = worst.max(max_gap(&s, &o));
        }
    }
    CheckResult {
        name: "kf_degeneracy",
        passed: worst <= 1e-9,
        detail: format!("{sequences} x 50 steps, max |diff| {worst:.3e} (limit 1e-9)"),
    }
}

/// `eiou(p=0)`, `mo_iou(0, 0)` equal `iou` exactly and `hiou(q=0)` is 1.
pub fn iou_degeneracy(pairs: usize) -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut bad = 0;
    let rand_box = |rng: &mut ChaCha8Rng| {
        BBox::new(
            rng.random_range(0.0..200.0),
            rng.random_range(0.0..200.0),
            rng.random_range(1.0..100.0),
            rng.random_range(1.0..100.0),
        )
        .expect("valid box")
    };
    for _ in 0..pairs {
        let a = rand_box(&mut rng);
        let b = rand_box(&mut rng);
        let base = iou(&a, &b);
        let ok = eiou(&a, &b, 0.0).ok() == Some(base)
            && mo_iou(&a, &b, 0.0, 0.0).ok() == Some(base)
            && hiou(&a, &b, 0.0).ok() == Some(1.0);
        if !ok {
            bad += 1;
        }
    }
    CheckResult {
        name: "iou_degeneracy",
        passed: bad == 0,
        detail: format!("{pairs} random pairs, {bad} mismatches"),
    }
}

fn brute_min(c: &CostMatrix) -> f64 {
    fn rec(c: &CostMatrix, r: usize, used: &mut [bool], acc: f64, best: &mut f64) {
        if r == c.rows() {
            *best = best.min(acc);
            return;
        }
        for k in 0..c.cols() {
            if !used[k] {
                used[k] = true;
                rec(c, r + 1, used, acc + c.get(r, k), best);
                used[k] = false;
            }
        }
    }
    // enumerate from the shorter side
    let c = if c.rows() <= c.cols() {
        c.clone()
    } else {
        let data = (0..c.cols())
            .flat_map(|k| (0..c.rows()).map(move |r| (r, k)))
            .map(|(r, k)| c.get(r, k))
            .collect();
        CostMatrix::new(c.cols(), c.rows(), data).expect("transposed costs stay valid")
    };
    let mut best = f64::INFINITY;
    rec(&c, 0, &mut vec![false; c.cols()], 0.0, &mut best);
    best
}

/// Hungarian total cost against exhaustive search on small matrices.
pub fn assignment_oracle(trials: usize) -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut bad = 0;
    for _ in 0..trials {
        let (m, n) = (rng.random_range(1..=6), rng.random_range(1..=6));
        let data = (0..m * n).map(|_| rng.random_range(0.0..10.0)).collect();
        let c = CostMatrix::new(m, n, data).expect("finite non-negative costs");
        let got = assign::solve(&c, f64::INFINITY).total_cost(&c);
        if (got - brute_min(&c)).abs() > 1e-9 {
            bad += 1;
        }
    }
    CheckResult {
        name: "assignment",
        passed: bad == 0,
        detail: format!("{trials} random matrices up to 6x6, {bad} non-optimal"),
    }
}

/// Training-loss gradient against finite differences on a 5-frame window,
/// checking every `every`-th parameter.
pub fn gradient(every: usize) -> CheckResult {
    let cfg = TrainConfig {
        window: 5,
        stride: 5,
        ..TrainConfig::default()
    };
    let scenario = generate(&figure_spin_config(30, 2), 17).expect("valid scenario config");
    let windows = build_dataset(&[scenario], &cfg);
    let weights = GateWeights::init_random(GateArch::default(), 19);
    let result = windows
        .first()
        .ok_or_else(|| "no window".to_string())
        .and_then(|w| {
            gradient_check(
                &weights,
                NoiseModel::default(),
                FrameNormalizer::default(),
                w,
                &cfg,
                every,
                1e-6,
            )
            .map_err(|e| e.to_string())
        });
    match result {
        Ok(err) => CheckResult {
            name: "gradient",
            passed: err < 1e-4,
            detail: format!("W=5, every {every}th parameter, max rel err {err:.3e} (limit 1e-4)"),
        },
        Err(e) => CheckResult {
            name: "gradient",
            passed: false,
            detail: e,
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_checks_pass_and_repeat() {
        let a = run_all();
        for r in &a {
            assert!(r.passed, "{r}");
        }
        let b = run_all();
        assert_eq!(a, b);
    }

    #[test]
    fn inverse_oracle() {
        let a = [[4.0, 1.0, 0.0], [1.0, 3.0, 1.0], [0.0, 1.0, 2.0]];
        let inv = invert(a);
        for i in 0..3 {
            for j in 0..3 {
                let v: f64 = (0..3).map(|k| a[i][k] * inv[k][j]).sum();
                assert!((v - f64::from(i == j)).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn brute_force_on_wide_and_tall() {
        let c = CostMatrix::from_rows(&[vec![1.0, 5.0, 0.5]]).unwrap();
        assert_eq!(brute_min(&c), 0.5);
        let t = CostMatrix::from_rows(&[vec![3.0], vec![1.0], vec![2.0]]).unwrap();
        assert_eq!(brute_min(&t), 1.0);
    }
}
