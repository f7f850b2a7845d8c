// Copyright 2026 Pulsecal Contributors
// SPDX-License-Identifier: Apache-2.0

//! Randomized benchmarking with random π and π/2 pulses about x and y.
//!
//! Each sequence is `n` gates drawn uniformly from
//! {±π, ±π/2} × {x, y}, then one recovery gate that returns the ideal
//! state to +z. Survival is the ground-state probability `(1 + z) / 2`,
//! and its mean over sequences is fitted to `A e^{-N/N0} + B`.
//!
//! Randomness: task `(length index l, sequence s, randomization r)` draws
//! from `ChaCha8Rng` seeded with the master seed on stream
//! `(l << 40) | (s << 20) | r`, so serial and parallel runs agree.

use std::f64::consts::{FRAC_PI_2, PI};
use std::path::Path;

use nalgebra::Matrix3;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::TransferFunction;
use crate::error::{Error, Result};
use crate::extraction::pulse_response;
use crate::io;
use crate::qubit::{BlochState, DecoherenceParams, Propagator, DEFAULT_OVERSAMPLE};
use crate::waveform::{GaussianPulseSpec, TRUNCATION_HALF_WIDTH};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Gate {
    Xp,
    Xm,
    X90p,
    X90m,
    Yp,
    Ym,
    Y90p,
    Y90m,
    /// No pulse in this slot. Only used for recovery.
    Idle,
}

impl Gate {
    /// The gates drawn at random.
    pub const RANDOM: [Gate; 8] = [
        Gate::Xp,
        Gate::Xm,
        Gate::X90p,
        Gate::X90m,
        Gate::Yp,
        Gate::Ym,
        Gate::Y90p,
        Gate::Y90m,
    ];

    /// Signed rotation angle in radians.
    pub fn angle(self) -> f64 {
        match self {
            Gate::Xp | Gate::Yp => PI,
            Gate::Xm | Gate::Ym => -PI,
            Gate::X90p | Gate::Y90p => FRAC_PI_2,
            Gate::X90m | Gate::Y90m => -FRAC_PI_2,
            Gate::Idle => 0.0,
        }
    }

    /// Drive phase: in-phase for x, quadrature for y.
    pub fn phase(self) -> Complex64 {
        match self {
            Gate::Yp | Gate::Ym | Gate::Y90p | Gate::Y90m => Complex64::i(),
            _ => Complex64::new(1.0, 0.0),
        }
    }

    /// Exact action on a cardinal Bloch vector.
    fn rotate(self, v: [i8; 3]) -> [i8; 3] {
        let [x, y, z] = v;
        // (cos, sin) of the angle.
        let (c, s) = match self.angle() {
            a if a == PI || a == -PI => (-1, 0),
            a if a == FRAC_PI_2 => (0, 1),
            a if a == -FRAC_PI_2 => (0, -1),
            _ => return v,
        };
        match self.phase().im != 0.0 {
            false => [x, c * y - s * z, s * y + c * z],
            true => [c * x + s * z, y, -s * x + c * z],
        }
    }

    /// Gate returning cardinal state `v` to +z.
    fn recovery(v: [i8; 3]) -> Gate {
        match v {
            [0, 0, 1] => Gate::Idle,
            [0, 0, -1] => Gate::Xm,
            [1, 0, 0] => Gate::Y90m,
            [-1, 0, 0] => Gate::Y90p,
            [0, 1, 0] => Gate::X90p,
            [0, -1, 0] => Gate::X90m,
            _ => unreachable!("not a cardinal state: {v:?}"),
        }
    }
}

/// `n_gates` uniform draws followed by the recovery gate.
pub fn generate_rbm_sequence<R: Rng>(rng: &mut R, n_gates: usize) -> Vec<Gate> {
    let mut gates = Vec::with_capacity(n_gates + 1);
    let mut v = [0i8, 0, 1];
    for _ in 0..n_gates {
        let g = Gate::RANDOM[rng.random_range(0..Gate::RANDOM.len())];
        v = g.rotate(v);
        gates.push(g);
    }
    gates.push(Gate::recovery(v));
    gates
}

/// RNG for one (length, sequence, randomization) task.
pub fn task_rng(seed: u64, length_index: usize, sequence: usize, randomization: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((length_index as u64) << 40) | ((sequence as u64) << 20) | randomization as u64);
    rng
}

fn default_lengths() -> Vec<usize> {
    (1..=10).map(|k| 1usize << k).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RbmConfig {
    pub seed: u64,
    pub n_sequences: usize,
    pub n_randomizations: usize,
    #[serde(default = "default_lengths")]
    pub lengths: Vec<usize>,
    /// Pulse width, s.
    pub t_pw: f64,
    /// Gate period, s.
    pub period: f64,
    #[serde(default)]
    pub decoherence: DecoherenceParams,
}

impl RbmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_sequences == 0 || self.n_randomizations == 0 {
            return Err(Error::InvalidInput("need at least one sequence and randomization".into()));
        }
        if self.n_sequences >= 1 << 20 || self.n_randomizations >= 1 << 20 || self.lengths.len() >= 1 << 20 {
            return Err(Error::InvalidInput("too many sequences for the RNG stream layout".into()));
        }
        if self.lengths.len() < 5 {
            return Err(Error::InvalidInput("decay fit needs at least 5 lengths".into()));
        }
        if self.lengths[0] == 0 || self.lengths.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidInput("lengths must be positive and increasing".into()));
        }
        if !(self.t_pw > 0.0 && self.t_pw.is_finite()) {
            return Err(Error::InvalidInput(format!("t_pw must be positive, got {:e}", self.t_pw)));
        }
        if !(self.period >= self.t_pw && self.period.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "period {:e} s must be at least t_pw {:e} s",
                self.period, self.t_pw
            )));
        }
        self.decoherence.validate()
    }
}

/// Fit of `A e^{-N/N0} + B`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    /// Decay constant in pulses; `None` when the data show no decay.
    pub n0: Option<f64>,
    pub amplitude: f64,
    pub offset: f64,
    /// Standard error of N0; `None` when it cannot be estimated.
    pub n0_stderr: Option<f64>,
}

impl DecayFit {
    pub fn error_per_pulse(&self) -> f64 {
        self.n0.map_or(0.0, |n| 1.0 / n)
    }

    pub fn error_per_pulse_stderr(&self) -> Option<f64> {
        match (self.n0, self.n0_stderr) {
            (Some(n), Some(s)) => Some(s / (n * n)),
            (None, _) => Some(0.0),
            _ => None,
        }
    }
}

/// Best `(A, B)` in `[0, 1]²` for fixed rate `k`, and its cost.
fn project(ns: &[f64], y: &[f64], k: f64) -> (f64, f64, f64) {
    let e: Vec<f64> = ns.iter().map(|n| (-k * n).exp()).collect();
    let cost = |a: f64, b: f64| -> f64 {
        e.iter().zip(y).map(|(e, y)| (y - a * e - b).powi(2)).sum()
    };
    let n = ns.len() as f64;
    let (see, se, sy, sey) = e.iter().zip(y).fold((0.0, 0.0, 0.0, 0.0), |acc, (e, y)| {
        (acc.0 + e * e, acc.1 + e, acc.2 + y, acc.3 + e * y)
    });
    let clamp = |v: f64| v.clamp(0.0, 1.0);
    let mut best = (f64::INFINITY, 0.0, 0.0);
    let mut consider = |a: f64, b: f64| {
        let c = cost(a, b);
        if c < best.0 {
            best = (c, a, b);
        }
    };
    let det = see * n - se * se;
    if det > 1e-14 * see * n {
        let a = (sey * n - se * sy) / det;
        let b = (see * sy - se * sey) / det;
        if (0.0..=1.0).contains(&a) && (0.0..=1.0).contains(&b) {
            return (a, b, cost(a, b));
        }
    }
    // Active constraint on one variable; optimize the other.
    for a in [0.0, 1.0] {
        consider(a, clamp((sy - a * se) / n));
    }
    for b in [0.0, 1.0] {
        if see > 0.0 {
            consider(clamp((sey - b * se) / see), b);
        }
    }
    (best.1, best.2, best.0)
}

/// Fits `A e^{-N/N0} + B` with `A, B ∈ [0, 1]` by variable projection:
/// `A, B` are solved exactly for each rate, and the rate is found by a log
/// grid then golden-section refinement.
pub fn fit_decay(lengths: &[usize], survival: &[f64]) -> Result<DecayFit> {
    if lengths.len() != survival.len() {
        return Err(Error::LengthMismatch("lengths and survival differ in length".into()));
    }
    if lengths.len() < 5 {
        return Err(Error::InvalidInput(format!(
            "decay fit needs at least 5 lengths, got {}",
            lengths.len()
        )));
    }
    if survival.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("survival values must be finite".into()));
    }
    let ns: Vec<f64> = lengths.iter().map(|n| *n as f64).collect();
    let lo = survival.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = survival.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let flat = |offset: f64| DecayFit {
        n0: None,
        amplitude: 0.0,
        offset,
        n0_stderr: None,
    };
    // Spans below the simulator's rounding floor carry no decay.
    if hi - lo <= 1e-9 {
        let mean = survival.iter().sum::<f64>() / survival.len() as f64;
        return Ok(flat(mean.clamp(0.0, 1.0)));
    }

    let n_min = ns.iter().copied().fold(f64::INFINITY, f64::min).max(1.0);
    let n_max = ns.iter().copied().fold(0.0, f64::max);
    let (ln_lo, ln_hi) = ((1e-4 / n_max).ln(), (10.0 / n_min).ln());
    const GRID: usize = 240;
    let at = |i: usize| ln_lo + (ln_hi - ln_lo) * i as f64 / (GRID - 1) as f64;
    let cost = |lnk: f64| project(&ns, survival, lnk.exp()).2;
    let best = (0..GRID)
        .map(|i| (i, cost(at(i))))
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .expect("grid is non-empty")
        .0;
    if best == 0 {
        let (_, b, _) = project(&ns, survival, (ln_lo).exp());
        return Ok(flat(b));
    }
    let (mut a, mut b) = (at(best - 1), at((best + 1).min(GRID - 1)));
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (cost(c), cost(d));
    for _ in 0..200 {
        if (b - a).abs() < 1e-13 {
            break;
        }
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = cost(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = cost(d);
        }
    }
    let k = (0.5 * (a + b)).exp();
    if !(k.is_finite() && k > 0.0) {
        return Err(Error::NonConvergence(format!("decay rate search ended at {k:e}")));
    }
    let (amp, off, ssr) = project(&ns, survival, k);
    let n0 = 1.0 / k;

    // Covariance of (A, B, N0) from the Gauss-Newton normal matrix.
    let mut jtj = Matrix3::<f64>::zeros();
    for n in &ns {
        let e = (-n / n0).exp();
        let j = nalgebra::Vector3::new(e, 1.0, amp * e * n / (n0 * n0));
        jtj += j * j.transpose();
    }
    let dof = ns.len().saturating_sub(3).max(1) as f64;
    let s2 = ssr / dof;
    let n0_stderr = jtj
        .try_inverse()
        .map(|inv| (s2 * inv[(2, 2)]).sqrt())
        .filter(|v| v.is_finite());
    Ok(DecayFit {
        n0: Some(n0),
        amplitude: amp,
        offset: off,
        n0_stderr,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RbmResult {
    pub lengths: Vec<usize>,
    /// Mean survival per length.
    pub survival: Vec<f64>,
    pub survival_stderr: Vec<f64>,
    /// Every task's survival, per length, in (sequence, randomization) order.
    pub samples: Vec<Vec<f64>>,
    pub fit: DecayFit,
    pub error_per_pulse: f64,
    pub error_per_pulse_stderr: Option<f64>,
}

impl RbmResult {
    pub const CSV_HEADER: [&'static str; 3] = ["N", "survival_mean", "survival_stderr"];

    pub fn write_json(&self, path: &Path) -> Result<()> {
        io::write_json(path, self)
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        io::read_json(path)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let rows: Vec<Vec<String>> = self
            .lengths
            .iter()
            .zip(&self.survival)
            .zip(&self.survival_stderr)
            .map(|((n, m), s)| vec![n.to_string(), io::fmt_value(*m), io::fmt_value(*s)])
            .collect();
        io::write_csv(path, &Self::CSV_HEADER, &rows)
    }
}

/// Pulse amplitude for which the sampled π pulse has area exactly π, as a
/// Rabi calibration would set it.
fn calibrated_pi(t_pw: f64, dt: f64) -> GaussianPulseSpec {
    let raw = GaussianPulseSpec::pi(t_pw, 0.0);
    let half = (TRUNCATION_HALF_WIDTH * t_pw / dt).ceil() as i64 + 1;
    let area: f64 = (-half..=half).map(|k| raw.value_at(k as f64 * dt)).sum::<f64>() * dt;
    GaussianPulseSpec {
        amplitude: raw.amplitude * PI / area,
        ..raw
    }
}

/// Simulates one gate list and returns its survival.
///
/// The drive is the superposition of the single-pulse channel response,
/// scaled and phased per gate. The channel is linear and time-invariant,
/// so this equals filtering the assembled sequence.
fn run_sequence(
    gates: &[Gate],
    response: &crate::extraction::PulseResponse,
    period_steps: f64,
    readout: isize,
    prop: &Propagator,
    dt: f64,
) -> f64 {
    let centers: Vec<isize> = (0..gates.len())
        .map(|k| (k as f64 * period_steps).round() as isize)
        .collect();
    let last = *centers.last().expect("sequence has a recovery gate");
    let start = response.lo.min(0);
    let end = last + readout;
    let mut drive = vec![Complex64::new(0.0, 0.0); (end - start + 1) as usize];
    for (g, c) in gates.iter().zip(&centers) {
        if *g == Gate::Idle {
            continue;
        }
        let w = g.phase() * (g.angle() / PI);
        for (i, v) in response.values.iter().enumerate() {
            let j = c + response.lo + i as isize - start;
            if j >= 0 && (j as usize) < drive.len() {
                drive[j as usize] += w * v;
            }
        }
    }
    let s = prop.run(BlochState::GROUND, &drive, dt);
    s.ground_population()
}

/// Runs the benchmark through channel `h`, optionally predistorting with
/// `predistortion` first. Readout is `1.5 t_pw` after the recovery pulse.
pub fn run_rbm(
    cfg: &RbmConfig,
    h: &TransferFunction,
    predistortion: Option<&TransferFunction>,
) -> Result<RbmResult> {
    cfg.validate()?;
    let dt = h.dt();
    if cfg.t_pw < 2.0 * dt * (1.0 - 1e-12) {
        return Err(Error::GridTooCoarse { t_pw: cfg.t_pw, dt });
    }
    let total = match predistortion {
        Some(p) => {
            if !crate::waveform::same_dt(p.dt(), dt) {
                return Err(Error::DtMismatch {
                    expected: dt,
                    found: p.dt(),
                });
            }
            let len = h.len().max(p.len());
            h.resized(len).compose(&p.resized(len))?
        }
        None => h.clone(),
    };
    let response = pulse_response(&total, &calibrated_pi(cfg.t_pw, dt))?;
    let readout = (TRUNCATION_HALF_WIDTH * cfg.t_pw / dt + 1e-9).floor() as isize;
    let prop = Propagator::new(cfg.decoherence, DEFAULT_OVERSAMPLE)?;
    let period_steps = cfg.period / dt;

    let per_length = cfg.n_sequences * cfg.n_randomizations;
    let tasks: Vec<(usize, usize, usize)> = (0..cfg.lengths.len())
        .flat_map(|l| {
            (0..cfg.n_sequences).flat_map(move |s| (0..cfg.n_randomizations).map(move |r| (l, s, r)))
        })
        .collect();
    let values: Vec<f64> = tasks
        .par_iter()
        .map(|&(l, s, r)| {
            let mut rng = task_rng(cfg.seed, l, s, r);
            let gates = generate_rbm_sequence(&mut rng, cfg.lengths[l]);
            run_sequence(&gates, &response, period_steps, readout, &prop, dt)
        })
        .collect();

    let samples: Vec<Vec<f64>> = values.chunks(per_length).map(<[f64]>::to_vec).collect();
    let survival: Vec<f64> = samples
        .iter()
        .map(|v| v.iter().sum::<f64>() / v.len() as f64)
        .collect();
    let survival_stderr: Vec<f64> = samples
        .iter()
        .zip(&survival)
        .map(|(v, m)| {
            if v.len() < 2 {
                return 0.0;
            }
            let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64;
            (var / v.len() as f64).sqrt()
        })
        .collect();
    check_monotone(&cfg.lengths, &survival, &survival_stderr)?;
    let fit = fit_decay(&cfg.lengths, &survival)?;
    Ok(RbmResult {
        lengths: cfg.lengths.clone(),
        survival,
        survival_stderr,
        samples,
        error_per_pulse: fit.error_per_pulse(),
        error_per_pulse_stderr: fit.error_per_pulse_stderr(),
        fit,
    })
}

/// Rejects survival curves that rise with length by more than four
/// combined standard errors.
fn check_monotone(lengths: &[usize], mean: &[f64], stderr: &[f64]) -> Result<()> {
    for i in 0..mean.len() {
        for j in i + 1..mean.len() {
            let allowed = 4.0 * stderr[i].hypot(stderr[j]) + 1e-6;
            if mean[j] - mean[i] > allowed {
                return Err(Error::FitFailed(format!(
                    "survival rises from {:.4} at N = {} to {:.4} at N = {}",
                    mean[i], lengths[i], mean[j], lengths[j]
                )));
            }
        }
    }
    Ok(())
}
