//! MOT-Challenge style text rows:
//! `frame,id,x_left,y_top,w,h,score,a,b,c` (comma separated, one per line).
//!
//! Raw detections carry id `-1`. The three trailing fields are kept as read
//! and written back unchanged (`-1,-1,-1` when absent). Numbers are written
//! with Rust's shortest round-trip formatting, so parse → write reproduces a
//! file written by this module byte for byte.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use thiserror::Error;

use crate::geometry::BBox;
use crate::pipeline::{Detection, TrackOutput};

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("{path}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MotLine {
    pub frame: u32,
    pub id: i64,
    pub left: f64,
    pub top: f64,
    pub w: f64,
    pub h: f64,
    pub score: f64,
    pub extra: [f64; 3],
}

impl MotLine {
    pub fn bbox(&self) -> Result<BBox, crate::geometry::GeometryError> {
        BBox::from_tlwh(self.left, self.top, self.w, self.h)
    }

    pub fn from_box(frame: u32, id: i64, b: &BBox, score: f64) -> Self {
        Self {
            frame,
            id,
            left: b.left(),
            top: b.top(),
            w: b.w(),
            h: b.h(),
            score,
            extra: [-1.0; 3],
        }
    }
}

pub fn parse_mot(text: &str) -> Result<Vec<MotLine>, FormatError> {
    let mut out = Vec::new();
    for (k, raw) in text.lines().enumerate() {
        let line = k + 1;
        let raw = raw.trim();
        if raw.is_empty() {
            continue;
        }
        let err = |msg: String| FormatError::Parse { line, msg };
        let fields: Vec<&str> = raw.split(',').map(str::trim).collect();
        if !(7..=10).contains(&fields.len()) {
            return Err(err(format!("expected 7 to 10 fields, found {}", fields.len())));
        }
        let num = |i: usize| -> Result<f64, FormatError> {
            let v: f64 = fields[i]
                .parse()
                .map_err(|_| err(format!("field {} is not a number: {:?}", i + 1, fields[i])))?;
            if !v.is_finite() {
                return Err(err(format!("field {} is not finite", i + 1)));
            }
            Ok(v)
        };
        let frame: u32 = fields[0]
            .parse()
            .map_err(|_| err(format!("frame is not a non-negative integer: {:?}", fields[0])))?;
        if frame == 0 {
            return Err(err("frames are numbered from 1".into()));
        }
        let id: i64 = fields[1]
            .parse()
            .map_err(|_| err(format!("id is not an integer: {:?}", fields[1])))?;
        let mut extra = [-1.0; 3];
        for (j, slot) in extra.iter_mut().enumerate() {
            if 7 + j < fields.len() {
                *slot = num(7 + j)?;
            }
        }
        let row = MotLine {
            frame,
            id,
            left: num(2)?,
            top: num(3)?,
            w: num(4)?,
            h: num(5)?,
            score: num(6)?,
            extra,
        };
        if row.w <= 0.0 || row.h <= 0.0 {
            return Err(err(format!("box size must be positive, got {}x{}", row.w, row.h)));
        }
        out.push(row);
    }
    Ok(out)
}

pub fn format_mot(rows: &[MotLine]) -> String {
    let mut s = String::new();
    for r in rows {
        writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{}",
            r.frame, r.id, r.left, r.top, r.w, r.h, r.score, r.extra[0], r.extra[1], r.extra[2]
        )
        .expect("writing to a string");
    }
    s
}

pub fn read_mot(path: impl AsRef<Path>) -> Result<Vec<MotLine>, FormatError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| FormatError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_mot(&text)
}

pub fn write_mot(rows: &[MotLine], path: impl AsRef<Path>) -> Result<(), FormatError> {
    let path = path.as_ref();
    fs::write(path, format_mot(rows)).map_err(|source| FormatError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Groups detection rows by frame. Index `k` of the result holds frame
/// `k + 1`; frames without rows are empty. Row order is not required.
pub fn group_detections(rows: &[MotLine]) -> Result<Vec<Vec<Detection>>, FormatError> {
    let last = rows.iter().map(|r| r.frame).max().unwrap_or(0) as usize;
    let mut frames = vec![Vec::new(); last];
    for (k, r) in rows.iter().enumerate() {
        let bad = |msg: String| FormatError::Parse { line: k + 1, msg };
        let bbox = r.bbox().map_err(|e| bad(e.to_string()))?;
        let det = Detection::new(bbox, r.score, r.frame).map_err(bad)?;
        frames[r.frame as usize - 1].push(det);
    }
    Ok(frames)
}

pub fn parse_detections(path: impl AsRef<Path>) -> Result<Vec<Vec<Detection>>, FormatError> {
    group_detections(&read_mot(path)?)
}

/// Result rows sorted by `(frame, id)`.
pub fn results_to_rows(results: &[TrackOutput]) -> Vec<MotLine> {
    let mut rows: Vec<MotLine> = results
        .iter()
        .map(|r| MotLine::from_box(r.frame, r.id as i64, &r.bbox, r.score))
        .collect();
    rows.sort_by_key(|r| (r.frame, r.id));
    rows
}

pub fn write_results(results: &[TrackOutput], path: impl AsRef<Path>) -> Result<(), FormatError> {
    write_mot(&results_to_rows(results), path)
}

/// Per-frame `(id, box)` lists for evaluation, frame `k + 1` at index `k`.
/// Duplicate `(frame, id)` rows are rejected.
pub fn group_by_frame(rows: &[MotLine]) -> Result<Vec<Vec<(i64, BBox)>>, FormatError> {
    let last = rows.iter().map(|r| r.frame).max().unwrap_or(0) as usize;
    let mut frames: Vec<Vec<(i64, BBox)>> = vec![Vec::new(); last];
    for (k, r) in rows.iter().enumerate() {
        let bad = |msg: String| FormatError::Parse { line: k + 1, msg };
        let bbox = r.bbox().map_err(|e| bad(e.to_string()))?;
        let slot = &mut frames[r.frame as usize - 1];
        if slot.iter().any(|(id, _)| *id == r.id) {
            return Err(bad(format!("duplicate id {} in frame {}", r.id, r.frame)));
        }
        slot.push((r.id, bbox));
    }
    Ok(frames)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_converts_to_center() {
        let rows = parse_mot("1,-1,10,20,30,40,0.9,-1,-1,-1\n").unwrap();
        let frames = group_detections(&rows).unwrap();
        assert_eq!(frames.len(), 1);
        let d = &frames[0][0];
        assert_eq!((d.bbox.x(), d.bbox.y(), d.bbox.w(), d.bbox.h()), (25.0, 40.0, 30.0, 40.0));
        assert_eq!(d.score, 0.9);
        assert_eq!(d.frame, 1);
    }

    #[test]
    fn empty_input() {
        assert!(parse_mot("").unwrap().is_empty());
        assert!(group_detections(&[]).unwrap().is_empty());
        assert_eq!(format_mot(&[]), "");
    }

    #[test]
    fn bad_number_names_line() {
        let e = parse_mot("1,-1,10,20,abc,40,0.9,-1,-1,-1").unwrap_err();
        assert!(e.to_string().starts_with("line 1:"), "{e}");
        let e = parse_mot("1,-1,1,1,1,1,0.5\n\n2,-1,1,1").unwrap_err();
        assert!(e.to_string().starts_with("line 3:"), "{e}");
        assert!(parse_mot("0,-1,1,1,1,1,0.5").is_err());
        assert!(parse_mot("1,-1,1,1,0,1,0.5").is_err());
    }

    #[test]
    fn score_outside_unit_interval_rejected() {
        let rows = parse_mot("1,-1,1,1,5,5,1.5").unwrap();
        assert!(group_detections(&rows).is_err());
    }

    #[test]
    fn unsorted_frames_are_grouped() {
        let rows = parse_mot("3,-1,0,0,5,5,0.5\n1,-1,0,0,5,5,0.7\n3,-1,9,9,5,5,0.2\n").unwrap();
        let f = group_detections(&rows).unwrap();
        assert_eq!(f.iter().map(Vec::len).collect::<Vec<_>>(), vec![1, 0, 2]);
    }

    #[test]
    fn round_trip_is_exact() {
        let text = "1,3,0.1,-2.5,10.25,7,0.8765432101234567,-1,-1,-1\n2,1,1e-7,3,4,5,1,0,1,2\n";
        let rows = parse_mot(text).unwrap();
        let out = format_mot(&rows);
        assert_eq!(out, "1,3,0.1,-2.5,10.25,7,0.8765432101234567,-1,-1,-1\n2,1,0.0000001,3,4,5,1,0,1,2\n");
        assert_eq!(parse_mot(&out).unwrap(), rows);
        assert_eq!(format_mot(&parse_mot(&out).unwrap()), out);
    }

    #[test]
    fn results_sorted_by_frame_then_id() {
        let b = BBox::new(10.0, 10.0, 4.0, 4.0).unwrap();
        let res = vec![
            TrackOutput { frame: 2, id: 1, bbox: b, score: 0.9 },
            TrackOutput { frame: 1, id: 7, bbox: b, score: 0.9 },
            TrackOutput { frame: 1, id: 2, bbox: b, score: 0.9 },
        ];
        let rows = results_to_rows(&res);
        assert_eq!(rows.iter().map(|r| (r.frame, r.id)).collect::<Vec<_>>(), vec![(1, 2), (1, 7), (2, 1)]);
        let text = format_mot(&rows);
        assert_eq!(text.lines().count(), 3);
        assert!(text.starts_with("1,2,8,8,4,4,0.9,-1,-1,-1\n"));
    }

    #[test]
    fn duplicate_ids_rejected() {
        let rows = parse_mot("1,4,0,0,5,5,1\n1,4,3,3,5,5,1\n").unwrap();
        assert!(group_by_frame(&rows).is_err());
    }
}
