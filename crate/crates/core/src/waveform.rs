// Copyright 2026 Pulsecal Contributors
// SPDX-License-Identifier: Apache-2.0

//! Sample grids, Gaussian pulse envelopes and ±π pulse trains.
//!
//! Envelopes are complex baseband waveforms in angular-frequency units
//! (rad/s): the real part drives rotations about x, the imaginary part
//! rotations about y. A Gaussian `A exp(-π t² / t_pw²)` has area `A t_pw`,
//! so a π pulse of width `t_pw` has amplitude `π / t_pw`. Pulses are
//! truncated to the closed window `[-1.5 t_pw, +1.5 t_pw]`.

use std::f64::consts::PI;
use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io;

/// Sample period of the reference waveform generator, 1 / (1.2 GS/s).
pub const AWG_DT: f64 = 1.0 / 1.2e9;

/// Half-width of the truncation window in units of `t_pw`.
pub const TRUNCATION_HALF_WIDTH: f64 = 1.5;

/// Uniform time grid. Sample `k` sits at `t0 + k * dt`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleGrid {
    pub dt: f64,
    pub n: usize,
    pub t0: f64,
}

impl SampleGrid {
    pub fn new(dt: f64, n: usize, t0: f64) -> Result<Self> {
        if !(dt.is_finite() && dt > 0.0) {
            return Err(Error::InvalidGrid(format!("dt must be positive, got {dt:e}")));
        }
        if n == 0 {
            return Err(Error::InvalidGrid("grid needs at least one sample".into()));
        }
        if !t0.is_finite() {
            return Err(Error::InvalidGrid("t0 must be finite".into()));
        }
        Ok(Self { dt, n, t0 })
    }

    /// Grid at the waveform generator rate starting at `t0`.
    pub fn awg(n: usize, t0: f64) -> Result<Self> {
        Self::new(AWG_DT, n, t0)
    }

    #[inline]
    pub fn time(&self, k: usize) -> f64 {
        self.t0 + k as f64 * self.dt
    }

    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.n).map(move |k| self.time(k))
    }

    /// Time of the last sample.
    pub fn end(&self) -> f64 {
        self.time(self.n - 1)
    }

    /// Signed index of the sample nearest to `t`.
    pub fn nearest_index(&self, t: f64) -> isize {
        ((t - self.t0) / self.dt).round() as isize
    }

    /// Snaps `t` to the nearest sample time (may lie outside the grid).
    pub fn snap(&self, t: f64) -> f64 {
        self.t0 + self.nearest_index(t) as f64 * self.dt
    }

    pub fn same_dt(&self, dt: f64) -> bool {
        same_dt(self.dt, dt)
    }
}

pub fn same_dt(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * a.abs().max(b.abs())
}

/// Complex baseband drive waveform; real part is A_I, imaginary part A_Q.
#[derive(Debug, Clone, PartialEq)]
pub struct Envelope {
    grid: SampleGrid,
    samples: Vec<Complex64>,
}

impl Envelope {
    pub fn new(grid: SampleGrid, samples: Vec<Complex64>) -> Result<Self> {
        if samples.len() != grid.n {
            return Err(Error::LengthMismatch(format!(
                "{} samples for a grid of {}",
                samples.len(),
                grid.n
            )));
        }
        if let Some(k) = samples.iter().position(|s| !(s.re.is_finite() && s.im.is_finite())) {
            return Err(Error::InvalidInput(format!("non-finite sample at index {k}")));
        }
        Ok(Self { grid, samples })
    }

    pub fn zeros(grid: SampleGrid) -> Self {
        Self {
            grid,
            samples: vec![Complex64::new(0.0, 0.0); grid.n],
        }
    }

    /// Builds an envelope from separate in-phase and quadrature arrays.
    pub fn from_iq(grid: SampleGrid, i: &[f64], q: &[f64]) -> Result<Self> {
        if i.len() != q.len() {
            return Err(Error::LengthMismatch(format!(
                "I has {} samples, Q has {}",
                i.len(),
                q.len()
            )));
        }
        let samples = i.iter().zip(q).map(|(&a, &b)| Complex64::new(a, b)).collect();
        Self::new(grid, samples)
    }

    pub fn grid(&self) -> &SampleGrid {
        &self.grid
    }

    pub fn samples(&self) -> &[Complex64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<Complex64> {
        self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn in_phase(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.re).collect()
    }

    pub fn quadrature(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.im).collect()
    }

    /// Discrete area `sum(samples) * dt`, in radians.
    pub fn area(&self) -> Complex64 {
        self.samples.iter().sum::<Complex64>() * self.grid.dt
    }

    pub fn is_real(&self) -> bool {
        self.samples.iter().all(|s| s.im == 0.0)
    }

    pub fn scaled(&self, factor: Complex64) -> Self {
        Self {
            grid: self.grid,
            samples: self.samples.iter().map(|s| s * factor).collect(),
        }
    }

    /// Sample-wise sum; both envelopes must share a grid.
    pub fn try_add(&self, other: &Envelope) -> Result<Self> {
        if !self.grid.same_dt(other.grid.dt) {
            return Err(Error::DtMismatch {
                expected: self.grid.dt,
                found: other.grid.dt,
            });
        }
        if self.len() != other.len() {
            return Err(Error::LengthMismatch(format!(
                "{} vs {} samples",
                self.len(),
                other.len()
            )));
        }
        let samples = self
            .samples
            .iter()
            .zip(&other.samples)
            .map(|(a, b)| a + b)
            .collect();
        Ok(Self {
            grid: self.grid,
            samples,
        })
    }

    /// L2 norm of the samples (no dt factor).
    pub fn l2(&self) -> f64 {
        self.samples.iter().map(|s| s.norm_sqr()).sum::<f64>().sqrt()
    }

    pub const CSV_HEADER: [&'static str; 3] = ["time_s", "i_rad_per_s", "q_rad_per_s"];

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let rows: Vec<Vec<String>> = self
            .samples
            .iter()
            .enumerate()
            .map(|(k, s)| {
                vec![
                    io::fmt_time(self.grid.time(k)),
                    io::fmt_value(s.re),
                    io::fmt_value(s.im),
                ]
            })
            .collect();
        io::write_csv(path, &Self::CSV_HEADER, &rows)
    }

    /// Reads an envelope CSV; the time column must be uniform.
    pub fn read_csv(path: &Path) -> Result<Self> {
        let rows = io::read_csv(path, &Self::CSV_HEADER)?;
        let times: Vec<f64> = rows.iter().map(|r| r[0]).collect();
        let (t0, dt) = io::uniform_spacing(path, &times)?;
        let grid = SampleGrid::new(dt, rows.len(), t0)?;
        let samples = rows.iter().map(|r| Complex64::new(r[1], r[2])).collect();
        Self::new(grid, samples)
    }
}

/// A single Gaussian pulse. The intended rotation is `amplitude * t_pw`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianPulseSpec {
    /// Peak drive in rad/s (signed).
    pub amplitude: f64,
    /// Pulse width in seconds.
    pub t_pw: f64,
    /// Center time in seconds.
    pub center: f64,
}

impl GaussianPulseSpec {
    /// Pulse whose untruncated area equals `angle` radians.
    pub fn with_area(angle: f64, t_pw: f64, center: f64) -> Self {
        Self {
            amplitude: angle / t_pw,
            t_pw,
            center,
        }
    }

    pub fn pi(t_pw: f64, center: f64) -> Self {
        Self::with_area(PI, t_pw, center)
    }

    pub fn area(&self) -> f64 {
        self.amplitude * self.t_pw
    }

    fn validate(&self, dt: f64) -> Result<()> {
        if !(self.t_pw.is_finite() && self.t_pw > 0.0) {
            return Err(Error::InvalidInput(format!(
                "pulse width must be positive, got {:e}",
                self.t_pw
            )));
        }
        if !self.amplitude.is_finite() || !self.center.is_finite() {
            return Err(Error::InvalidInput("pulse amplitude and center must be finite".into()));
        }
        if self.t_pw < 2.0 * dt * (1.0 - 1e-12) {
            return Err(Error::GridTooCoarse { t_pw: self.t_pw, dt });
        }
        Ok(())
    }

    /// Truncated Gaussian value at time `t`.
    #[inline]
    pub fn value_at(&self, t: f64) -> f64 {
        let d = t - self.center;
        // Closed window; the slack absorbs rounding in t0 + k dt.
        if d.abs() <= TRUNCATION_HALF_WIDTH * self.t_pw * (1.0 + 1e-12) {
            self.amplitude * (-PI * d * d / (self.t_pw * self.t_pw)).exp()
        } else {
            0.0
        }
    }

    /// Indices of grid samples inside the truncation window.
    fn support(&self, grid: &SampleGrid) -> (isize, isize) {
        let half = TRUNCATION_HALF_WIDTH * self.t_pw;
        let lo = ((self.center - half - grid.t0) / grid.dt).ceil() as isize - 1;
        let hi = ((self.center + half - grid.t0) / grid.dt).floor() as isize + 1;
        (lo, hi)
    }
}

/// Adds `phase * pulse` into `buf` (a buffer on `grid`), clipping at the
/// grid edges. Returns the number of window samples that fell outside.
pub(crate) fn add_gaussian(
    buf: &mut [Complex64],
    grid: &SampleGrid,
    pulse: &GaussianPulseSpec,
    phase: Complex64,
) -> usize {
    let (lo, hi) = pulse.support(grid);
    let mut clipped = 0;
    for k in lo..=hi {
        let v = pulse.value_at(grid.t0 + k as f64 * grid.dt);
        if v == 0.0 {
            continue;
        }
        if k < 0 || k as usize >= buf.len() {
            clipped += 1;
            continue;
        }
        buf[k as usize] += phase * v;
    }
    clipped
}

/// Samples a single truncated Gaussian onto `grid`.
pub fn gaussian_envelope(spec: &GaussianPulseSpec, grid: &SampleGrid) -> Result<Envelope> {
    spec.validate(grid.dt)?;
    let half = TRUNCATION_HALF_WIDTH * spec.t_pw;
    let tol = 1e-9 * grid.dt;
    if spec.center - half < grid.t0 - grid.dt - tol || spec.center + half > grid.end() + grid.dt + tol {
        let needed = (2.0 * half / grid.dt).ceil() as usize + 1;
        return Err(Error::SequenceOverflow {
            needed,
            available: grid.n,
        });
    }
    let mut env = Envelope::zeros(*grid);
    add_gaussian(&mut env.samples, grid, spec, Complex64::new(1.0, 0.0));
    Ok(env)
}

/// Train of alternating-sign π pulses used to amplify quadrature errors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PiPairSequenceSpec {
    pub t_pw: f64,
    /// Pulse period T in seconds.
    pub period: f64,
    /// Even number of pulses; the first is positive.
    pub n_pulses: usize,
}

impl PiPairSequenceSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.t_pw > 0.0 && self.period.is_finite()) {
            return Err(Error::InvalidInput("pulse width and period must be positive".into()));
        }
        if self.period < self.t_pw * (1.0 - 1e-12) {
            return Err(Error::InvalidInput(format!(
                "period {:e} s is shorter than the pulse width {:e} s",
                self.period, self.t_pw
            )));
        }
        if self.n_pulses % 2 != 0 {
            return Err(Error::InvalidInput(format!(
                "pulse count must be even, got {}",
                self.n_pulses
            )));
        }
        if self.period < 3.0 * self.t_pw * (1.0 - 1e-12) {
            log::warn!(
                "period {:.3e} s is below 3 t_pw; neighbouring pulse windows overlap",
                self.period
            );
        }
        Ok(())
    }

    /// Sign of pulse `k`: +, -, +, -, ...
    pub fn sign(k: usize) -> f64 {
        if k % 2 == 0 {
            1.0
        } else {
            -1.0
        }
    }
}

/// ±π pulse train with centers at `k T` (snapped to the grid), `k = 0..n`.
pub fn pi_pair_sequence(spec: &PiPairSequenceSpec, grid: &SampleGrid) -> Result<Envelope> {
    spec.validate()?;
    let mut env = Envelope::zeros(*grid);
    if spec.n_pulses == 0 {
        return Ok(env);
    }
    GaussianPulseSpec::pi(spec.t_pw, 0.0).validate(grid.dt)?;
    let half = TRUNCATION_HALF_WIDTH * spec.t_pw;
    let last = grid.snap((spec.n_pulses - 1) as f64 * spec.period);
    let tol = 1e-9 * grid.dt;
    if grid.snap(0.0) - half < grid.t0 - grid.dt - tol || last + half > grid.end() + grid.dt + tol {
        let needed = ((last - grid.snap(0.0) + 2.0 * half) / grid.dt).ceil() as usize + 1;
        return Err(Error::SequenceOverflow {
            needed,
            available: grid.n,
        });
    }
    for k in 0..spec.n_pulses {
        let center = grid.snap(k as f64 * spec.period);
        let pulse = GaussianPulseSpec::pi(spec.t_pw, center);
        add_gaussian(
            &mut env.samples,
            grid,
            &pulse,
            Complex64::new(PiPairSequenceSpec::sign(k), 0.0),
        );
    }
    Ok(env)
}

/// Joins abutting envelopes that share a sample period.
pub fn concatenate(envelopes: &[Envelope]) -> Result<Envelope> {
    let first = envelopes
        .first()
        .ok_or_else(|| Error::InvalidInput("nothing to concatenate".into()))?;
    let dt = first.grid.dt;
    let mut samples = Vec::with_capacity(envelopes.iter().map(Envelope::len).sum());
    let mut next_t = first.grid.t0;
    for env in envelopes {
        if !same_dt(env.grid.dt, dt) {
            return Err(Error::DtMismatch {
                expected: dt,
                found: env.grid.dt,
            });
        }
        if (env.grid.t0 - next_t).abs() > 1e-6 * dt {
            return Err(Error::InvalidGrid(format!(
                "envelope starting at {:e} s does not abut previous end {:e} s",
                env.grid.t0, next_t
            )));
        }
        samples.extend_from_slice(&env.samples);
        next_t = env.grid.t0 + env.len() as f64 * dt;
    }
    let grid = SampleGrid::new(dt, samples.len(), first.grid.t0)?;
    Envelope::new(grid, samples)
}
