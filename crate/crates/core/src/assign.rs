//! Minimum-cost bipartite assignment (Hungarian method with potentials).
//!
//! Gated-out pairs are marked with `f64::INFINITY`. The solver first
//! maximizes the number of finite pairs, then minimizes their total cost;
//! pairs whose cost exceeds the gate are dropped afterwards. Among optimal
//! matchings the lexicographically smallest one (by row, then column) is
//! returned.

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum AssignError {
    #[error("cost matrix {rows}x{cols} needs {expected} entries, got {got}")]
    Shape {
        rows: usize,
        cols: usize,
        expected: usize,
        got: usize,
    },
    #[error("cost at ({row}, {col}) must be >= 0 or +inf, got {value}")]
    InvalidEntry { row: usize, col: usize, value: f64 },
}

/// Rows are tracks, columns detections.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl CostMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, AssignError> {
        if data.len() != rows * cols {
            return Err(AssignError::Shape {
                rows,
                cols,
                expected: rows * cols,
                got: data.len(),
            });
        }
        for (k, &value) in data.iter().enumerate() {
            if value.is_nan() || value < 0.0 {
                return Err(AssignError::InvalidEntry {
                    row: k / cols.max(1),
                    col: k % cols.max(1),
                    value,
                });
            }
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, AssignError> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(AssignError::Shape {
                    rows: rows.len(),
                    cols,
                    expected: rows.len() * cols,
                    got: rows.iter().map(Vec::len).sum(),
                });
            }
            data.extend_from_slice(r);
        }
        Self::new(rows.len(), cols, data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Assignment {
    /// `(row, col)` pairs, sorted by row.
    pub matches: Vec<(usize, usize)>,
    pub unmatched_rows: Vec<usize>,
    pub unmatched_cols: Vec<usize>,
}

impl Assignment {
    pub fn total_cost(&self, c: &CostMatrix) -> f64 {
        self.matches.iter().map(|&(r, k)| c.get(r, k)).sum()
    }
}

/// Solves the assignment and drops pairs with cost above `gate`.
pub fn solve(c: &CostMatrix, gate: f64) -> Assignment {
    debug_assert!(!gate.is_nan(), "gate must be a number");
    let (rows, cols) = (c.rows, c.cols);
    let mut out = Assignment::default();
    if rows == 0 || cols == 0 {
        out.unmatched_rows = (0..rows).collect();
        out.unmatched_cols = (0..cols).collect();
        return out;
    }

    let n = rows.max(cols);
    let max_finite = c.data.iter().copied().filter(|v| v.is_finite()).fold(0.0, f64::max);
    // Any single finite pair is cheaper than any infinite one, whatever the rest.
    let big = (n as f64) * (max_finite + 1.0) * 2.0;
    let mut a = vec![0.0; n * n];
    for r in 0..rows {
        for k in 0..cols {
            let v = c.get(r, k);
            a[r * n + k] = if v.is_finite() { v } else { big };
        }
    }

    let (col_of_row, u, v) = hungarian(&a, n);
    let tol = 1e-11 * big;
    let col_of_row = lexicographic_min(&a, n, &u, &v, col_of_row, tol);

    let mut col_used = vec![false; cols];
    for (r, &k) in col_of_row.iter().enumerate().take(rows) {
        if k < cols && c.get(r, k).is_finite() && c.get(r, k) <= gate {
            out.matches.push((r, k));
            col_used[k] = true;
        } else {
            out.unmatched_rows.push(r);
        }
    }
    out.unmatched_cols = (0..cols).filter(|&k| !col_used[k]).collect();
    out
}

/// Square Hungarian method (shortest augmenting paths with row/column
/// potentials). Returns the column of each row and the potentials.
fn hungarian(a: &[f64], n: usize) -> (Vec<usize>, Vec<f64>, Vec<f64>) {
    // 1-based internally; index 0 is the virtual root column.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut row_of_col = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        row_of_col[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = row_of_col[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = a[(i0 - 1) * n + (j - 1)] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[row_of_col[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if row_of_col[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            row_of_col[j0] = row_of_col[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut col_of_row = vec![0usize; n];
    for j in 1..=n {
        col_of_row[row_of_col[j] - 1] = j - 1;
    }
    (col_of_row, u[1..].to_vec(), v[1..].to_vec())
}

/// Rewrites an optimal matching into the lexicographically smallest one.
///
/// By complementary slackness a perfect matching is optimal exactly when it
/// uses only tight edges (zero reduced cost under optimal potentials). Rows
/// are fixed in order to the smallest tight column that still leaves a
/// perfect matching on the remaining rows, found by an alternating path.
fn lexicographic_min(a: &[f64], n: usize, u: &[f64], v: &[f64], mut col_of_row: Vec<usize>, tol: f64) -> Vec<usize> {
    let tight = |r: usize, k: usize| (a[r * n + k] - u[r] - v[k]).abs() <= tol;
    let mut row_of_col = vec![0usize; n];
    for (r, &k) in col_of_row.iter().enumerate() {
        row_of_col[k] = r;
    }
    let mut col_fixed = vec![false; n];
    for r in 0..n {
        let current = col_of_row[r];
        for k in 0..current {
            if col_fixed[k] || !tight(r, k) {
                continue;
            }
            // Row r takes k; k's owner must reach `current` along tight edges.
            let owner = row_of_col[k];
            let mut seen = vec![false; n];
            seen[k] = true;
            let mut path = Vec::new();
            if reroute(owner, current, r, &tight, &col_of_row, &row_of_col, &col_fixed, &mut seen, &mut path) {
                // path holds (row, new col) pairs
                for &(pr, pk) in &path {
                    col_of_row[pr] = pk;
                    row_of_col[pk] = pr;
                }
                col_of_row[r] = k;
                row_of_col[k] = r;
                break;
            }
        }
        col_fixed[col_of_row[r]] = true;
    }
    col_of_row
}

#[allow(clippy::too_many_arguments)]
fn reroute(
    row: usize,
    target: usize,
    skip_row: usize,
    tight: &impl Fn(usize, usize) -> bool,
    col_of_row: &[usize],
    row_of_col: &[usize],
    col_fixed: &[bool],
    seen: &mut [bool],
    path: &mut Vec<(usize, usize)>,
) -> bool {
    let n = col_of_row.len();
    for k in 0..n {
        if seen[k] || col_fixed[k] || !tight(row, k) {
            continue;
        }
        seen[k] = true;
        if k == target {
            path.push((row, k));
            return true;
        }
        let next = row_of_col[k];
        if next == skip_row {
            continue;
        }
        if reroute(next, target, skip_row, tight, col_of_row, row_of_col, col_fixed, seen, path) {
            path.push((row, k));
            return true;
        }
    }
    false
}
