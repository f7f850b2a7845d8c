// Copyright 2026 Pulsecal Contributors
// SPDX-License-Identifier: Apache-2.0

//! Rotating-frame Bloch propagation of a driven two-level system.
//!
//! A drive sample `(a_i, a_q)` held for `dt` rotates the Bloch vector by
//! `Ω dt`, `Ω = |a_i + i a_q|`, right-handed about `(a_i, a_q, 0) / Ω`.
//! This is the spinor unitary `exp(-i (Ω dt / 2) n·σ)`; a positive
//! in-phase π/2 pulse takes the ground state `(0, 0, 1)` to `(0, -1, 0)`.

use std::f64::consts::FRAC_PI_2;
use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io;
use crate::waveform::{add_gaussian, Envelope, GaussianPulseSpec, SampleGrid, TRUNCATION_HALF_WIDTH};

/// Default number of sample-and-hold sub-steps per drive sample.
pub const DEFAULT_OVERSAMPLE: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlochState {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl BlochState {
    pub const GROUND: Self = Self { x: 0.0, y: 0.0, z: 1.0 };
    pub const EXCITED: Self = Self { x: 0.0, y: 0.0, z: -1.0 };

    pub fn new(x: f64, y: f64, z: f64) -> Result<Self> {
        let s = Self { x, y, z };
        if !(x.is_finite() && y.is_finite() && z.is_finite()) || s.norm() > 1.0 + 1e-9 {
            return Err(Error::InvalidInput(format!(
                "Bloch vector ({x}, {y}, {z}) lies outside the unit ball"
            )));
        }
        Ok(s)
    }

    pub fn norm(&self) -> f64 {
        (self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    /// Probability of the ground state, `(1 + z) / 2`.
    pub fn ground_population(&self) -> f64 {
        0.5 * (1.0 + self.z)
    }
}

/// Relaxation constants; `None` disables the corresponding channel.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecoherenceParams {
    pub t1: Option<f64>,
    pub t2: Option<f64>,
}

impl DecoherenceParams {
    pub const NONE: Self = Self { t1: None, t2: None };

    pub fn new(t1: Option<f64>, t2: Option<f64>) -> Result<Self> {
        let d = Self { t1, t2 };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("T1", self.t1), ("T2", self.t2)] {
            if let Some(v) = v {
                if !(v > 0.0) {
                    return Err(Error::InvalidInput(format!("{name} must be positive, got {v:e}")));
                }
            }
        }
        if let (Some(t1), Some(t2)) = (self.t1, self.t2) {
            if t2 > 2.0 * t1 * (1.0 + 1e-12) {
                return Err(Error::InvalidInput(format!(
                    "T2 = {t2:e} s exceeds 2 T1 = {:e} s",
                    2.0 * t1
                )));
            }
        }
        Ok(())
    }

    pub fn is_none(&self) -> bool {
        self.t1.is_none() && self.t2.is_none()
    }
}

/// Exact rotation for drive `(a_i, a_q)` held for `dt`.
#[inline]
pub fn step(s: BlochState, a_i: f64, a_q: f64, dt: f64) -> BlochState {
    let omega = a_i.hypot(a_q);
    if omega == 0.0 {
        return s;
    }
    let (kx, ky) = (a_i / omega, a_q / omega);
    let (sin, cos) = (omega * dt).sin_cos();
    // Rodrigues with k = (kx, ky, 0).
    let kdotv = kx * s.x + ky * s.y;
    let cx = ky * s.z;
    let cy = -kx * s.z;
    let cz = kx * s.y - ky * s.x;
    let c1 = 1.0 - cos;
    BlochState {
        x: s.x * cos + cx * sin + kx * kdotv * c1,
        y: s.y * cos + cy * sin + ky * kdotv * c1,
        z: s.z * cos + cz * sin,
    }
}

/// Exact free relaxation over `dt`: transverse decay with T2, longitudinal
/// relaxation toward the ground state with T1.
#[inline]
pub fn decohere(s: BlochState, dec: &DecoherenceParams, dt: f64) -> BlochState {
    let mut out = s;
    if let Some(t2) = dec.t2 {
        let f = (-dt / t2).exp();
        out.x *= f;
        out.y *= f;
    }
    if let Some(t1) = dec.t1 {
        out.z = 1.0 + (out.z - 1.0) * (-dt / t1).exp();
    }
    out
}

/// Piecewise-constant propagator with operator-split decoherence.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Propagator {
    pub dec: DecoherenceParams,
    /// Sub-steps per sample; only matters when decoherence is enabled.
    pub oversample: usize,
}

impl Default for Propagator {
    fn default() -> Self {
        Self {
            dec: DecoherenceParams::NONE,
            oversample: DEFAULT_OVERSAMPLE,
        }
    }
}

impl Propagator {
    pub fn new(dec: DecoherenceParams, oversample: usize) -> Result<Self> {
        dec.validate()?;
        if oversample == 0 {
            return Err(Error::InvalidInput("oversampling factor must be at least 1".into()));
        }
        Ok(Self { dec, oversample })
    }

    /// One drive sample held for `dt`.
    #[inline]
    pub fn advance(&self, s: BlochState, a: Complex64, dt: f64) -> BlochState {
        if self.dec.is_none() {
            return step(s, a.re, a.im, dt);
        }
        let h = dt / self.oversample as f64;
        let mut s = s;
        for _ in 0..self.oversample {
            s = decohere(step(s, a.re, a.im, h), &self.dec, h);
        }
        s
    }

    /// Free evolution (zero drive) for `dt`.
    pub fn idle(&self, s: BlochState, dt: f64) -> BlochState {
        decohere(s, &self.dec, dt)
    }

    /// Final state after every sample of `samples`.
    pub fn run(&self, s: BlochState, samples: &[Complex64], dt: f64) -> BlochState {
        samples.iter().fold(s, |s, a| self.advance(s, *a, dt))
    }

    /// State after each sample.
    pub fn evolve(&self, s: BlochState, env: &Envelope) -> Vec<BlochState> {
        let dt = env.grid().dt;
        let mut cur = s;
        env.samples()
            .iter()
            .map(|a| {
                cur = self.advance(cur, *a, dt);
                cur
            })
            .collect()
    }
}

/// State after each sample with the default oversampling.
pub fn evolve(s: BlochState, env: &Envelope, dec: &DecoherenceParams) -> Result<Vec<BlochState>> {
    Ok(Propagator::new(*dec, DEFAULT_OVERSAMPLE)?.evolve(s, env))
}

/// Ideal tomography: the Bloch components themselves.
pub fn tomography(s: &BlochState) -> [f64; 3] {
    s.to_array()
}

/// Tomography by analysis pulses: each component is read as `z` after a
/// Gaussian π/2 pulse of width `t_pw` (phase `-y` for x, `+x` for y, none
/// for z), propagated with `prop` on a grid of spacing `dt`.
pub fn physical_tomography(
    s: &BlochState,
    prop: &Propagator,
    t_pw: f64,
    dt: f64,
) -> Result<[f64; 3]> {
    let k = (TRUNCATION_HALF_WIDTH * t_pw / dt).ceil() as usize;
    let grid = SampleGrid::new(dt, 2 * k + 1, -(k as f64) * dt)?;
    if t_pw < 2.0 * dt * (1.0 - 1e-12) {
        return Err(Error::GridTooCoarse { t_pw, dt });
    }
    let pulse = GaussianPulseSpec::with_area(FRAC_PI_2, t_pw, 0.0);
    let mut buf = vec![Complex64::new(0.0, 0.0); grid.n];
    add_gaussian(&mut buf, &grid, &pulse, Complex64::new(1.0, 0.0));
    let read = |phase: Complex64| {
        let samples: Vec<Complex64> = buf.iter().map(|a| a * phase).collect();
        prop.run(*s, &samples, dt).z
    };
    // A right-handed π/2 about -y takes +x to +z; about +x it takes +y to +z.
    Ok([
        read(Complex64::new(0.0, -1.0)),
        read(Complex64::new(1.0, 0.0)),
        s.z,
    ])
}

pub const TRAJECTORY_HEADER: [&str; 4] = ["time_s", "x", "y", "z"];

pub fn write_trajectory(path: &Path, grid: &SampleGrid, states: &[BlochState]) -> Result<()> {
    if states.len() != grid.n {
        return Err(Error::LengthMismatch(format!(
            "{} states for a grid of {}",
            states.len(),
            grid.n
        )));
    }
    let rows: Vec<Vec<String>> = states
        .iter()
        .enumerate()
        .map(|(k, s)| {
            vec![
                io::fmt_time(grid.time(k)),
                io::fmt_value(s.x),
                io::fmt_value(s.y),
                io::fmt_value(s.z),
            ]
        })
        .collect();
    io::write_csv(path, &TRAJECTORY_HEADER, &rows)
}
