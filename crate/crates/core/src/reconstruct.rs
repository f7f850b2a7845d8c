// Copyright 2026 Pulsecal Contributors
// SPDX-License-Identifier: Apache-2.0

//! The sign matrix linking a discretized quadrature tail `Q_n` to the
//! per-pulse rotation θ(mΔt), and its inversion.
//!
//! In a ±π train of period mΔt, the tail sample n steps after a pulse
//! adds to θ with sign `(-1)^⌊(n-1)/m⌋`, because each later pulse flips
//! the frame. Finite-width pulses suppress the tail while a pulse is on,
//! which zeros the w columns following each block boundary.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::extraction::{period_steps, ThetaTrace};
use crate::io;

/// Condition estimates above this are logged as ill-conditioned.
pub const ILL_CONDITIONED: f64 = 1e6;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SignMatrix {
    /// Row-major, `dim × dim`; row i is period `offset + i`, column j is
    /// tail index `offset + j`.
    entries: Vec<i8>,
    dim: usize,
    /// First retained row and column index (1-based).
    offset: usize,
    /// Pulse width in steps; 0 for the ideal matrix.
    width: usize,
}

impl SignMatrix {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn offset(&self) -> usize {
        self.offset
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// Largest row/column index.
    pub fn n(&self) -> usize {
        self.offset + self.dim - 1
    }

    /// Entry by 1-based period `m` and tail index `c`.
    pub fn get(&self, m: usize, c: usize) -> i8 {
        assert!(m >= self.offset && c >= self.offset && m <= self.n() && c <= self.n());
        self.entries[(m - self.offset) * self.dim + (c - self.offset)]
    }

    /// Row for 1-based period `m`.
    pub fn row(&self, m: usize) -> &[i8] {
        let i = m - self.offset;
        &self.entries[i * self.dim..(i + 1) * self.dim]
    }

    pub fn to_dmatrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_iterator(self.dim, self.dim, self.entries.iter().map(|v| *v as f64))
    }

    /// `Δt · M · Q`: the rotation each period row predicts.
    pub fn apply(&self, q: &[f64], dt: f64) -> Result<Vec<f64>> {
        if q.len() != self.dim {
            return Err(Error::LengthMismatch(format!(
                "Q has {} entries, matrix dimension is {}",
                q.len(),
                self.dim
            )));
        }
        Ok(self
            .entries
            .chunks(self.dim)
            .map(|row| dt * row.iter().zip(q).map(|(s, v)| *s as f64 * v).sum::<f64>())
            .collect())
    }

    /// 2-norm condition number from the singular values.
    pub fn condition(&self) -> f64 {
        condition(&self.to_dmatrix())
    }
}

fn entry(m: usize, c: usize, w: usize) -> i8 {
    let local = (c - 1) % m;
    if local < w {
        0
    } else if ((c - 1) / m) % 2 == 0 {
        1
    } else {
        -1
    }
}

fn build(n: usize, w: usize) -> SignMatrix {
    let offset = w + 1;
    let dim = n + 1 - offset;
    let mut entries = Vec::with_capacity(dim * dim);
    for m in offset..=n {
        for c in offset..=n {
            entries.push(entry(m, c, w));
        }
    }
    SignMatrix {
        entries,
        dim,
        offset,
        width: w,
    }
}

/// The ideal `n × n` matrix, entry `(-1)^⌊(c-1)/m⌋`.
pub fn build_sign_matrix(n: usize) -> Result<SignMatrix> {
    if n == 0 {
        return Err(Error::InvalidInput("sign matrix needs n >= 1".into()));
    }
    Ok(build(n, 0))
}

/// The finite-width matrix over indices `w+1..=n`, zero wherever the tail
/// index falls in the first `w` steps of a block.
pub fn build_sign_matrix_finite(n: usize, w: usize) -> Result<SignMatrix> {
    if n <= w {
        return Err(Error::InvalidInput(format!(
            "finite sign matrix needs n > w, got n = {n}, w = {w}"
        )));
    }
    Ok(build(n, w))
}

/// Brute-force alternating block sum for one period: walks the pulses of
/// the train and adds each tail sample with the sign of the pulse it
/// follows, skipping the first `w` steps of every block. `q[0]` is
/// `Q_{w+1}`.
pub fn eq2_oracle(q: &[f64], m: usize, w: usize, dt: f64) -> Result<f64> {
    if m == 0 {
        return Err(Error::InvalidInput("period must be at least one step".into()));
    }
    let n = q.len() + w;
    let mut sum = 0.0;
    let mut sign = 1.0;
    let mut block_start = 1;
    while block_start <= n {
        for c in block_start..(block_start + m).min(n + 1) {
            if c - block_start >= w {
                sum += sign * q[c - w - 1];
            }
        }
        sign = -sign;
        block_start += m;
    }
    Ok(dt * sum)
}

/// Recovered tail. `values[i]` is `Q_{offset+i}`, located
/// `(offset + i - origin) Δt` after the pulse center.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadratureVector {
    pub dt: f64,
    pub offset: usize,
    pub origin: usize,
    pub values: Vec<f64>,
    /// `‖Δt M Q - θ‖ / ‖θ‖` over the rows used.
    pub residual: f64,
    pub condition: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct QuadratureMeta {
    residual: f64,
    condition: f64,
    dt: f64,
    offset: usize,
    origin: usize,
}

impl QuadratureVector {
    pub const CSV_HEADER: [&'static str; 2] = ["t_s", "q_rad_per_s"];

    /// Time of the first value relative to the pulse center.
    pub fn t0(&self) -> f64 {
        (self.offset as f64 - self.origin as f64) * self.dt
    }

    pub fn time(&self, i: usize) -> f64 {
        self.t0() + i as f64 * self.dt
    }

    /// Writes the CSV and a JSON sidecar with the same stem.
    pub fn write(&self, csv_path: &Path) -> Result<()> {
        let rows: Vec<Vec<String>> = self
            .values
            .iter()
            .enumerate()
            .map(|(i, v)| vec![io::fmt_time(self.time(i)), io::fmt_value(*v)])
            .collect();
        io::write_csv(csv_path, &Self::CSV_HEADER, &rows)?;
        io::write_json(&Self::meta_path(csv_path), &self.meta())
    }

    fn meta(&self) -> QuadratureMeta {
        QuadratureMeta {
            residual: self.residual,
            condition: self.condition,
            dt: self.dt,
            offset: self.offset,
            origin: self.origin,
        }
    }

    pub fn meta_path(csv_path: &Path) -> std::path::PathBuf {
        csv_path.with_extension("json")
    }

    pub fn read(csv_path: &Path) -> Result<Self> {
        let meta: QuadratureMeta = io::read_json(&Self::meta_path(csv_path))?;
        let rows = io::read_csv(csv_path, &Self::CSV_HEADER)?;
        let q = Self {
            dt: meta.dt,
            offset: meta.offset,
            origin: meta.origin,
            values: rows.iter().map(|r| r[1]).collect(),
            residual: meta.residual,
            condition: meta.condition,
        };
        for (i, r) in rows.iter().enumerate() {
            if (r[0] - q.time(i)).abs() > 1e-6 * q.dt {
                return Err(Error::Parse {
                    path: csv_path.to_path_buf(),
                    line: i as u64 + 2,
                    message: format!("time {:e} does not match the metadata grid", r[0]),
                });
            }
        }
        Ok(q)
    }

    pub fn l2(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Index of the tail sample that lines up with the pulse center. For
/// finite width the tail starts mid-pulse: the w zeroed steps straddle the
/// center, so the first free column `w+1` sits `w+1-origin` steps out.
pub fn origin_for_width(w: usize) -> usize {
    if w == 0 {
        0
    } else {
        w.div_ceil(2)
    }
}

fn condition(a: &DMatrix<f64>) -> f64 {
    let sv = a.singular_values();
    let max = sv.max();
    let min = sv.min();
    if min > 0.0 {
        max / min
    } else {
        f64::INFINITY
    }
}

/// Solves `Δt M Q = θ` for Q.
///
/// Each θ entry is matched to the matrix row for its period. With every
/// row present the square system is solved by pivoted LU; rows for missing
/// or failed periods are dropped and the rest solved by SVD least squares.
/// Periods outside the matrix range are ignored.
pub fn solve_quadrature(trace: &ThetaTrace, m: &SignMatrix) -> Result<QuadratureVector> {
    trace.validate()?;
    let dt = trace.dt;
    let mut rows = Vec::new();
    for (t, th) in trace.periods.iter().zip(&trace.theta) {
        let k = period_steps(*t, dt)?;
        if k < m.offset() || k > m.n() {
            log::warn!("period {k} steps is outside the matrix range, ignored");
            continue;
        }
        rows.push((k, *th));
    }
    if rows.is_empty() {
        return Err(Error::InvalidInput(
            "no theta values fall inside the matrix range".into(),
        ));
    }
    let full = m.to_dmatrix();
    let a = DMatrix::from_fn(rows.len(), m.dim(), |i, j| full[(rows[i].0 - m.offset(), j)] * dt);
    let b = DVector::from_iterator(rows.len(), rows.iter().map(|r| r.1));

    let cond = condition(&a);
    if !cond.is_finite() || cond > 1e14 {
        return Err(Error::SingularMatrix(format!(
            "condition estimate {cond:e} over {} rows",
            rows.len()
        )));
    }
    if cond > ILL_CONDITIONED {
        log::warn!("sign matrix is ill-conditioned: condition {cond:e}");
    }
    let q = if rows.len() == m.dim() {
        a.clone()
            .lu()
            .solve(&b)
            .ok_or_else(|| Error::SingularMatrix("LU factorization failed".into()))?
    } else {
        if rows.len() < m.dim() {
            log::warn!(
                "{} of {} rows available; returning the minimum-norm solution",
                rows.len(),
                m.dim()
            );
        }
        a.clone()
            .svd(true, true)
            .solve(&b, 1e-14)
            .map_err(|e| Error::SingularMatrix(e.to_string()))?
    };
    let r = &a * &q - &b;
    let bn = b.norm();
    let residual = if bn > 0.0 { r.norm() / bn } else { r.norm() };
    Ok(QuadratureVector {
        dt,
        offset: m.offset(),
        origin: origin_for_width(m.width()),
        values: q.iter().copied().collect(),
        residual,
        condition: cond,
    })
}
