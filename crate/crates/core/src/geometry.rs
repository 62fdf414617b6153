//! Axis-aligned boxes and the IoU family used for association.
//!
//! Boxes are stored in center format `[x, y, w, h]`. Besides plain IoU this
//! module provides the expansion IoU (both boxes scaled by `2p + 1` around
//! their centers), the height IoU (a 1-D vertical IoU raised to a power `q`),
//! their product (Mo-IoU) and the motion-adaptive rule that picks `(p, q)`
//! from a track's normalized speeds.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("invalid box [{x}, {y}, {w}, {h}]: width and height must be positive and all fields finite")]
    InvalidBox { x: f64, y: f64, w: f64, h: f64 },
    #[error("expansion level must be finite and non-negative, got {0}")]
    NegativeExpansion(f64),
    #[error("height exponent must be finite and non-negative, got {0}")]
    NegativeExponent(f64),
}

/// Center-format bounding box in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BBox {
    x: f64,
    y: f64,
    w: f64,
    h: f64,
}

impl BBox {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Result<Self, GeometryError> {
        let finite = x.is_finite() && y.is_finite() && w.is_finite() && h.is_finite();
        if !finite || w <= 0.0 || h <= 0.0 {
            return Err(GeometryError::InvalidBox { x, y, w, h });
        }
        Ok(Self { x, y, w, h })
    }

    /// Builds a box from MOT-style top-left coordinates.
    pub fn from_tlwh(left: f64, top: f64, w: f64, h: f64) -> Result<Self, GeometryError> {
        Self::new(left + w / 2.0, top + h / 2.0, w, h)
    }

    pub fn x(&self) -> f64 {
        self.x
    }

    pub fn y(&self) -> f64 {
        self.y
    }

    pub fn w(&self) -> f64 {
        self.w
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn left(&self) -> f64 {
        self.x - self.w / 2.0
    }

    pub fn top(&self) -> f64 {
        self.y - self.h / 2.0
    }

    pub fn right(&self) -> f64 {
        self.x + self.w / 2.0
    }

    pub fn bottom(&self) -> f64 {
        self.y + self.h / 2.0
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.x, self.y, self.w, self.h]
    }

    /// Area of the intersection with `other` (0 when disjoint or touching).
    pub fn intersection_area(&self, other: &BBox) -> f64 {
        let iw = (self.right().min(other.right()) - self.left().max(other.left())).max(0.0);
        let ih = (self.bottom().min(other.bottom()) - self.top().max(other.top())).max(0.0);
        iw * ih
    }
}

impl<'de> Deserialize<'de> for BBox {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Raw {
            x: f64,
            y: f64,
            w: f64,
            h: f64,
        }
        let raw = Raw::deserialize(deserializer)?;
        BBox::new(raw.x, raw.y, raw.w, raw.h).map_err(serde::de::Error::custom)
    }
}

/// Thresholds and levels of the motion-adaptive technique.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MatConfig {
    pub m_slow: f64,
    pub m_fast: f64,
    pub n_slow: f64,
    pub n_fast: f64,
    pub theta_center: f64,
    pub theta_height: f64,
}

impl MatConfig {
    /// DanceTrack operating point: expansion 2/1, height exponent 0.5/0.6.
    pub const DANCETRACK: MatConfig = MatConfig {
        m_slow: 2.0,
        m_fast: 1.0,
        n_slow: 0.5,
        n_fast: 0.6,
        theta_center: 0.0406,
        theta_height: 0.0090,
    };

    /// SportsMOT thresholds with the same levels.
    pub const SPORTSMOT: MatConfig = MatConfig {
        theta_center: 0.1172,
        theta_height: 0.0062,
        ..MatConfig::DANCETRACK
    };

    pub fn validate(&self) -> Result<(), String> {
        let fields = [
            ("m_slow", self.m_slow),
            ("m_fast", self.m_fast),
            ("n_slow", self.n_slow),
            ("n_fast", self.n_fast),
            ("theta_center", self.theta_center),
            ("theta_height", self.theta_height),
        ];
        for (name, v) in fields {
            if !v.is_finite() || v < 0.0 {
                return Err(format!("mat.{name} must be finite and >= 0, got {v}"));
            }
        }
        Ok(())
    }
}

impl Default for MatConfig {
    fn default() -> Self {
        MatConfig::DANCETRACK
    }
}

pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let inter = a.intersection_area(b);
    if inter <= 0.0 {
        return 0.0;
    }
    // Extents from the edges, like the intersection, so that iou(a, a) is exactly 1.
    let area = |b: &BBox| (b.right() - b.left()) * (b.bottom() - b.top());
    let union = area(a) + area(b) - inter;
    (inter / union).clamp(0.0, 1.0)
}

/// Scales width and height by `2p + 1` around the same center.
pub fn expand(b: &BBox, p: f64) -> Result<BBox, GeometryError> {
    if !p.is_finite() || p < 0.0 {
        return Err(GeometryError::NegativeExpansion(p));
    }
    let k = 2.0 * p + 1.0;
    BBox::new(b.x, b.y, b.w * k, b.h * k)
}

pub fn eiou(a: &BBox, b: &BBox, p: f64) -> Result<f64, GeometryError> {
    if p == 0.0 {
        return Ok(iou(a, b));
    }
    Ok(iou(&expand(a, p)?, &expand(b, p)?))
}

/// Vertical 1-D IoU of the two height intervals, before exponentiation.
pub fn height_overlap_ratio(a: &BBox, b: &BBox) -> f64 {
    let l = (a.bottom().min(b.bottom()) - a.top().max(b.top())).max(0.0);
    if l <= 0.0 {
        return 0.0;
    }
    let (ha, hb) = (a.bottom() - a.top(), b.bottom() - b.top());
    (l / (ha + hb - l)).clamp(0.0, 1.0)
}

/// `(l / (h_a + h_b - l))^q` with `0^0 = 1`.
pub fn hiou(a: &BBox, b: &BBox, q: f64) -> Result<f64, GeometryError> {
    if !q.is_finite() || q < 0.0 {
        return Err(GeometryError::NegativeExponent(q));
    }
    if q == 0.0 {
        return Ok(1.0);
    }
    Ok(height_overlap_ratio(a, b).powf(q))
}

pub fn mo_iou(a: &BBox, b: &BBox, p: f64, q: f64) -> Result<f64, GeometryError> {
    let e = eiou(a, b, p)?;
    if e == 0.0 {
        // still validate q so the error contract does not depend on geometry
        hiou(a, b, q)?;
        return Ok(0.0);
    }
    Ok(e * hiou(a, b, q)?)
}

/// Picks `(p, q)` from the normalized center and height speeds.
///
/// Velocities come from the filtered state. The height speed is taken in
/// absolute value so shrinking and growing are treated alike. Both
/// comparisons are inclusive (`<=` selects the slow level).
pub fn mat_params(vx: f64, vy: f64, vh: f64, w: f64, h: f64, cfg: &MatConfig) -> (f64, f64) {
    let center_speed = ((vx / w).powi(2) + (vy / h).powi(2)).sqrt();
    let height_speed = (vh / h).abs();
    let p = if center_speed <= cfg.theta_center {
        cfg.m_slow
    } else {
        cfg.m_fast
    };
    let q = if height_speed <= cfg.theta_height {
        cfg.n_slow
    } else {
        cfg.n_fast
    };
    (p, q)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn bb(x: f64, y: f64, w: f64, h: f64) -> BBox {
        BBox::new(x, y, w, h).unwrap()
    }

    /// Monte-Carlo area estimate of IoU over the joint bounding rectangle.
    fn mc_iou(a: &BBox, b: &BBox, samples: usize) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (x0, x1) = (a.left().min(b.left()), a.right().max(b.right()));
        let (y0, y1) = (a.top().min(b.top()), a.bottom().max(b.bottom()));
        let inside = |bx: &BBox, x: f64, y: f64| x >= bx.left() && x <= bx.right() && y >= bx.top() && y <= bx.bottom();
        let (mut inter, mut union) = (0usize, 0usize);
        for _ in 0..samples {
            let x = x0 + rng.random::<f64>() * (x1 - x0);
            let y = y0 + rng.random::<f64>() * (y1 - y0);
            let (ia, ib) = (inside(a, x, y), inside(b, x, y));
            if ia && ib {
                inter += 1;
            }
            if ia || ib {
                union += 1;
            }
        }
        inter as f64 / union as f64
    }

    #[test]
    fn rejects_degenerate_boxes() {
        assert!(BBox::new(0.0, 0.0, 0.0, 1.0).is_err());
        assert!(BBox::new(0.0, 0.0, 1.0, -1.0).is_err());
        assert!(BBox::new(f64::NAN, 0.0, 1.0, 1.0).is_err());
        assert!(BBox::new(0.0, f64::INFINITY, 1.0, 1.0).is_err());
    }

    #[test]
    fn iou_examples() {
        assert_eq!(iou(&bb(5.0, 5.0, 10.0, 10.0), &bb(5.0, 5.0, 10.0, 10.0)), 1.0);
        assert_eq!(iou(&bb(0.0, 0.0, 2.0, 2.0), &bb(2.0, 0.0, 2.0, 2.0)), 0.0);
        let (a, b) = (bb(0.0, 0.0, 4.0, 4.0), bb(2.0, 0.0, 4.0, 4.0));
        let oracle = mc_iou(&a, &b, 1_000_000);
        assert!((oracle - 1.0 / 3.0).abs() < 1e-2, "oracle {oracle}");
        assert!((iou(&a, &b) - oracle).abs() < 1e-2);
        assert!((iou(&a, &b) - 8.0 / 24.0).abs() < 1e-15);
    }

    #[test]
    fn expand_examples() {
        assert_eq!(expand(&bb(0.0, 0.0, 2.0, 2.0), 0.0).unwrap(), bb(0.0, 0.0, 2.0, 2.0));
        assert_eq!(expand(&bb(1.0, 2.0, 3.0, 4.0), 0.5).unwrap(), bb(1.0, 2.0, 6.0, 8.0));
        assert_eq!(expand(&bb(0.0, 0.0, 10.0, 10.0), 2.0).unwrap(), bb(0.0, 0.0, 50.0, 50.0));
        assert_eq!(
            expand(&bb(0.0, 0.0, 1.0, 1.0), -0.1),
            Err(GeometryError::NegativeExpansion(-0.1))
        );
    }

    #[test]
    fn eiou_examples() {
        let (a, b) = (bb(0.0, 0.0, 2.0, 2.0), bb(2.0, 0.0, 2.0, 2.0));
        assert_eq!(eiou(&a, &b, 0.0).unwrap(), iou(&a, &b));
        let expanded = eiou(&a, &b, 0.5).unwrap();
        let oracle = mc_iou(&expand(&a, 0.5).unwrap(), &expand(&b, 0.5).unwrap(), 1_000_000);
        assert!((oracle - 1.0 / 3.0).abs() < 1e-2);
        assert!((expanded - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(eiou(&a, &a, 3.0).unwrap(), 1.0);
        assert!(eiou(&a, &b, -1.0).is_err());
    }

    #[test]
    fn hiou_examples() {
        let (a, b) = (bb(0.0, 0.0, 1.0, 4.0), bb(5.0, 2.0, 1.0, 4.0));
        assert_eq!(hiou(&a, &b, 0.0).unwrap(), 1.0);
        assert!((hiou(&a, &b, 1.0).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert!((hiou(&a, &b, 0.5).unwrap() - 0.57735).abs() < 1e-5);
        // disjoint vertical extents with q = 0 still give 1
        let c = bb(0.0, 100.0, 1.0, 4.0);
        assert_eq!(hiou(&a, &c, 0.0).unwrap(), 1.0);
        assert_eq!(hiou(&a, &c, 0.5).unwrap(), 0.0);
    }

    #[test]
    fn mo_iou_examples() {
        let (a, b) = (bb(0.0, 0.0, 4.0, 4.0), bb(2.0, 0.0, 4.0, 4.0));
        assert_eq!(mo_iou(&a, &b, 0.0, 0.0).unwrap(), iou(&a, &b));
        assert!((mo_iou(&a, &b, 0.0, 1.0).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        let far = bb(100.0, 0.0, 4.0, 4.0);
        assert_eq!(mo_iou(&a, &far, 2.0, 0.5).unwrap(), 0.0);
    }

    #[test]
    fn mat_examples() {
        let cfg = MatConfig::DANCETRACK;
        assert_eq!(cfg.theta_center, 0.0406);
        assert_eq!(cfg.theta_height, 0.0090);
        assert_eq!((cfg.m_slow, cfg.m_fast, cfg.n_slow, cfg.n_fast), (2.0, 1.0, 0.5, 0.6));
        assert_eq!(mat_params(0.0, 0.0, 0.0, 10.0, 20.0, &cfg), (2.0, 0.5));

        let sports = MatConfig::SPORTSMOT;
        let w = 100.0;
        let eps = 1e-9;
        let (p, _) = mat_params((0.1172 + eps) * w, 0.0, 0.0, w, 50.0, &sports);
        assert_eq!(p, sports.m_fast);
        // exactly on the threshold counts as slow
        let (p, q) = mat_params(0.0, 0.0, -0.5, w, 50.0, &MatConfig { theta_height: 0.01, ..sports });
        assert_eq!((p, q), (sports.m_slow, sports.n_slow));
        let (_, q) = mat_params(0.0, 0.0, -0.6, w, 50.0, &MatConfig { theta_height: 0.01, ..sports });
        assert_eq!(q, sports.n_fast);
    }

    fn arb_box() -> impl Strategy<Value = BBox> {
        (-50.0..50.0f64, -50.0..50.0f64, 0.1..40.0f64, 0.1..40.0f64)
            .prop_map(|(x, y, w, h)| bb(x, y, w, h))
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(2000))]

        #[test]
        fn iou_bounded_and_symmetric(a in arb_box(), b in arb_box()) {
            let v = iou(&a, &b);
            prop_assert!((0.0..=1.0).contains(&v));
            prop_assert_eq!(v, iou(&b, &a));
            prop_assert_eq!(iou(&a, &a), 1.0);
        }

        #[test]
        fn eiou_monotone_in_p(a in arb_box(), b in arb_box(), p in 0.0..3.0f64, dp in 0.0..2.0f64) {
            prop_assert_eq!(eiou(&a, &b, 0.0).unwrap(), iou(&a, &b));
            let lo = eiou(&a, &b, p).unwrap();
            let hi = eiou(&a, &b, p + dp).unwrap();
            prop_assert!(hi + 1e-12 >= lo, "eiou decreased: {} -> {}", lo, hi);
        }

        #[test]
        fn hiou_bounded_and_non_increasing(a in arb_box(), b in arb_box(), q in 0.0..3.0f64, dq in 0.0..2.0f64) {
            prop_assert_eq!(hiou(&a, &b, 0.0).unwrap(), 1.0);
            let base = height_overlap_ratio(&a, &b);
            prop_assert!((0.0..=1.0).contains(&base));
            prop_assert!(hiou(&a, &b, q + dq).unwrap() <= hiou(&a, &b, q).unwrap() + 1e-15);
        }

        #[test]
        fn mo_iou_bounded_by_factors(a in arb_box(), b in arb_box(), p in 0.0..3.0f64, q in 0.0..3.0f64) {
            let m = mo_iou(&a, &b, p, q).unwrap();
            prop_assert!(m <= eiou(&a, &b, p).unwrap().min(1.0));
            prop_assert!(m <= hiou(&a, &b, q).unwrap());
            prop_assert_eq!(mo_iou(&a, &b, 0.0, 0.0).unwrap(), iou(&a, &b));
        }

        #[test]
        fn mat_output_in_level_set(vx in -20.0..20.0f64, vy in -20.0..20.0f64, vh in -5.0..5.0f64, w in 1.0..100.0f64, h in 1.0..200.0f64) {
            let cfg = MatConfig::DANCETRACK;
            let (p, q) = mat_params(vx, vy, vh, w, h, &cfg);
            prop_assert!(p == cfg.m_slow || p == cfg.m_fast);
            prop_assert!(q == cfg.n_slow || q == cfg.n_fast);
        }
    }
}
