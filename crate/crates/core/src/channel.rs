// Copyright 2026 Pulsecal Contributors
// SPDX-License-Identifier: Apache-2.0

//! Control-line distortion as a transfer function on a DFT grid.
//!
//! Bins use the standard DFT ordering. The matching impulse response puts
//! indices `k < L/2` at time `k dt` and indices `k ≥ L/2` at `(k - L) dt`,
//! so acausal parts of inverse filters live at the end of the buffer.

use std::f64::consts::PI;
use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::dft;
use crate::error::{Error, Result};
use crate::io;
use crate::waveform::{same_dt, Envelope, GaussianPulseSpec, SampleGrid, TRUNCATION_HALF_WIDTH};

pub use crate::dft::padded_len;

/// Default Tikhonov floor relative to the largest bin magnitude.
pub const DEFAULT_EPS: f64 = 1e-3;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const ONE: Complex64 = Complex64::new(1.0, 0.0);

#[derive(Debug, Clone, PartialEq)]
pub struct TransferFunction {
    dt: f64,
    bins: Vec<Complex64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TransferJson {
    dt: f64,
    bins: Vec<[f64; 2]>,
}

impl TransferFunction {
    pub fn new(dt: f64, bins: Vec<Complex64>) -> Result<Self> {
        if !(dt.is_finite() && dt > 0.0) {
            return Err(Error::InvalidGrid(format!("dt must be positive, got {dt:e}")));
        }
        if bins.is_empty() {
            return Err(Error::InvalidInput("transfer function has no bins".into()));
        }
        if bins.iter().any(|b| !(b.re.is_finite() && b.im.is_finite())) {
            return Err(Error::InvalidInput("transfer function has non-finite bins".into()));
        }
        Ok(Self { dt, bins })
    }

    pub fn identity(dt: f64, len: usize) -> Self {
        Self {
            dt,
            bins: vec![ONE; len.max(1)],
        }
    }

    /// Transfer function whose impulse response is `taps` (see module docs
    /// for the time placement), zero-padded or folded to `len`.
    pub fn from_impulse_response(dt: f64, taps: &[Complex64], len: usize) -> Result<Self> {
        if taps.len() > len {
            return Err(Error::LengthMismatch(format!(
                "{} taps exceed DFT length {len}",
                taps.len()
            )));
        }
        Self::new(dt, dft::forward_padded(taps, len))
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn len(&self) -> usize {
        self.bins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bins.is_empty()
    }

    pub fn bins(&self) -> &[Complex64] {
        &self.bins
    }

    pub fn is_identity(&self) -> bool {
        self.bins.iter().all(|b| *b == ONE)
    }

    /// Frequency of bin `k` in Hz, negative above Nyquist.
    pub fn frequency(&self, k: usize) -> f64 {
        let n = self.len() as f64;
        let k = if k < self.len().div_ceil(2) {
            k as f64
        } else {
            k as f64 - n
        };
        k / (n * self.dt)
    }

    pub fn impulse_response(&self) -> Vec<Complex64> {
        let mut buf = self.bins.clone();
        dft::inverse(&mut buf);
        buf
    }

    /// Bin-wise product; the result applies `self` then `other`.
    pub fn compose(&self, other: &TransferFunction) -> Result<Self> {
        self.check_compatible(other)?;
        let bins = self.bins.iter().zip(&other.bins).map(|(a, b)| a * b).collect();
        Ok(Self { dt: self.dt, bins })
    }

    /// Same filter on a DFT grid of length `len`. Positive and negative
    /// time halves of the impulse response are kept separately; taps that
    /// do not fit are dropped.
    pub fn resized(&self, len: usize) -> Self {
        let len = len.max(1);
        if len == self.len() {
            return self.clone();
        }
        if self.is_identity() {
            return Self::identity(self.dt, len);
        }
        let ir = self.impulse_response();
        let old = ir.len();
        let pos = old.div_ceil(2);
        let neg = old - pos;
        let mut out = vec![ZERO; len];
        let keep_pos = pos.min(len.div_ceil(2));
        let keep_neg = neg.min(len / 2);
        out[..keep_pos].copy_from_slice(&ir[..keep_pos]);
        for j in 1..=keep_neg {
            out[len - j] = ir[old - j];
        }
        dft::forward(&mut out);
        Self {
            dt: self.dt,
            bins: out,
        }
    }

    fn check_compatible(&self, other: &TransferFunction) -> Result<()> {
        if !same_dt(self.dt, other.dt) {
            return Err(Error::DtMismatch {
                expected: self.dt,
                found: other.dt,
            });
        }
        if self.len() != other.len() {
            return Err(Error::LengthMismatch(format!(
                "DFT lengths {} and {}",
                self.len(),
                other.len()
            )));
        }
        Ok(())
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        io::write_json(
            path,
            &TransferJson {
                dt: self.dt,
                bins: self.bins.iter().map(|b| [b.re, b.im]).collect(),
            },
        )
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        let raw: TransferJson = io::read_json(path)?;
        Self::new(
            raw.dt,
            raw.bins.iter().map(|b| Complex64::new(b[0], b[1])).collect(),
        )
    }
}

fn check_dt(grid: &SampleGrid, dt: f64) -> Result<()> {
    if grid.same_dt(dt) {
        Ok(())
    } else {
        Err(Error::DtMismatch {
            expected: dt,
            found: grid.dt,
        })
    }
}

/// Filters `env` through `h` by zero-padded DFT and truncates back to the
/// envelope length. `h` must be at least as long as the envelope.
pub fn apply_transfer(env: &Envelope, h: &TransferFunction) -> Result<Envelope> {
    check_dt(env.grid(), h.dt)?;
    if h.len() < env.len() {
        return Err(Error::LengthMismatch(format!(
            "DFT length {} is shorter than the envelope ({} samples)",
            h.len(),
            env.len()
        )));
    }
    if h.is_identity() {
        return Ok(env.clone());
    }
    let mut buf = dft::forward_padded(env.samples(), h.len());
    for (x, hb) in buf.iter_mut().zip(h.bins()) {
        *x *= hb;
    }
    dft::inverse(&mut buf);
    buf.truncate(env.len());
    Envelope::new(*env.grid(), buf)
}

/// Applies a (typically inverted) transfer function to a drive envelope.
/// The real part of the result goes to the in-phase channel, the
/// imaginary part to the quadrature channel.
pub fn predistort(env: &Envelope, h_inv: &TransferFunction) -> Result<Envelope> {
    apply_transfer(env, h_inv)
}

/// Tikhonov-regularized reciprocal `conj(h) / max(|h|², eps² max|h|²)`.
/// With `eps = 0`, bins that are exactly zero map to zero.
pub fn invert_transfer(h: &TransferFunction, eps: f64) -> Result<TransferFunction> {
    if !(eps >= 0.0 && eps.is_finite()) {
        return Err(Error::InvalidInput(format!("eps must be non-negative, got {eps}")));
    }
    let peak = h.bins.iter().map(|b| b.norm_sqr()).fold(0.0, f64::max);
    if peak == 0.0 {
        return Err(Error::AllZeroBins);
    }
    if h.is_identity() {
        return Ok(h.clone());
    }
    let floor = eps * eps * peak;
    let bins = h
        .bins
        .iter()
        .map(|b| {
            let d = b.norm_sqr().max(floor);
            if d == 0.0 {
                ZERO
            } else {
                b.conj() / d
            }
        })
        .collect();
    Ok(TransferFunction { dt: h.dt, bins })
}

/// Impulse response `δ + i tail/π`, where `tail[n-1]` is the integral of
/// the desired quadrature level over `((n-1) dt, n dt]`. A π-area in-phase
/// pulse then produces that level after it.
fn tail_transfer(grid: &SampleGrid, tail_integrals: &[f64]) -> Result<TransferFunction> {
    let len = padded_len(grid.n);
    if tail_integrals.iter().all(|v| *v == 0.0) {
        return Ok(TransferFunction::identity(grid.dt, len));
    }
    let mut taps = vec![ZERO; 1 + tail_integrals.len()];
    taps[0] = ONE;
    for (tap, v) in taps[1..].iter_mut().zip(tail_integrals) {
        *tap = Complex64::new(0.0, v / PI);
    }
    TransferFunction::from_impulse_response(grid.dt, &taps, len)
}

/// Constant quadrature `level` (rad/s) for `duration` after each unit π of
/// in-phase drive.
pub fn synth_static_quadrature(
    level: f64,
    duration: f64,
    grid: &SampleGrid,
) -> Result<TransferFunction> {
    if !level.is_finite() || !(duration >= 0.0) {
        return Err(Error::InvalidInput("level must be finite and duration non-negative".into()));
    }
    let n_tail = (duration / grid.dt).round() as usize;
    if n_tail >= grid.n {
        return Err(Error::InvalidInput(format!(
            "duration {duration:e} s exceeds the grid span"
        )));
    }
    tail_transfer(grid, &vec![level * grid.dt; n_tail])
}

/// Quadrature `levels[n-1]` (rad/s) held over `((n-1) dt, n dt]` after each
/// unit π of in-phase drive.
pub fn synth_piecewise_quadrature(levels: &[f64], grid: &SampleGrid) -> Result<TransferFunction> {
    if levels.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("levels must be finite".into()));
    }
    if 2 * levels.len() >= padded_len(grid.n) {
        return Err(Error::InvalidInput(format!(
            "{} levels do not fit the grid",
            levels.len()
        )));
    }
    let tail: Vec<f64> = levels.iter().map(|v| v * grid.dt).collect();
    tail_transfer(grid, &tail)
}

/// Damped-cosine quadrature tail `amp exp(-t/decay) cos(2π freq t)` after
/// each unit π of in-phase drive. Cell integrals are exact.
pub fn synth_ringing_quadrature(
    amp: f64,
    freq: f64,
    decay: f64,
    grid: &SampleGrid,
) -> Result<TransferFunction> {
    if !(decay > 0.0 && decay.is_finite()) {
        return Err(Error::InvalidInput(format!("decay must be positive, got {decay:e}")));
    }
    if !(amp.is_finite() && freq.is_finite()) {
        return Err(Error::InvalidInput("amplitude and frequency must be finite".into()));
    }
    let len = padded_len(grid.n);
    // Tail below e^-30 of its start is dropped; it must also fit causally.
    let n_tail = ((30.0 * decay / grid.dt).ceil() as usize).min(len / 2 - 1);
    let s = Complex64::new(-1.0 / decay, 2.0 * PI * freq);
    let primitive = |t: f64| ((s * t).exp() / s).re;
    let tail: Vec<f64> = (1..=n_tail)
        .map(|n| amp * (primitive(n as f64 * grid.dt) - primitive((n - 1) as f64 * grid.dt)))
        .collect();
    tail_transfer(grid, &tail)
}

/// Probe used to excite the channel when its quadrature response was
/// reconstructed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Probe {
    /// Finite Gaussian π pulse centered at time zero.
    Gaussian(GaussianPulseSpec),
    /// Idealized instantaneous pulse of the given area at time zero.
    Impulse { area: f64 },
}

/// Transfer function `(X + i Q) / X` from a reconstructed quadrature
/// response `q`, where `q[n]` sits at `q_t0 + n dt` relative to the probe
/// center. Bins where the probe carries no energy fall back to identity.
pub fn transfer_from_reconstruction(
    q: &[f64],
    q_t0: f64,
    dt: f64,
    len: usize,
    probe: &Probe,
    eps: f64,
) -> Result<TransferFunction> {
    if !(dt > 0.0) {
        return Err(Error::InvalidGrid(format!("dt must be positive, got {dt:e}")));
    }
    let origin = (q_t0 / dt).round() as isize;
    let span = origin.unsigned_abs() + q.len();
    if 2 * span >= len {
        return Err(Error::LengthMismatch(format!(
            "DFT length {len} is too short for a response spanning {span} samples"
        )));
    }
    let mut qbuf = vec![ZERO; len];
    for (n, &v) in q.iter().enumerate() {
        let k = (origin + n as isize).rem_euclid(len as isize) as usize;
        qbuf[k] = Complex64::new(v, 0.0);
    }
    if q.iter().all(|v| *v == 0.0) {
        probe_area(probe)?;
        return Ok(TransferFunction::identity(dt, len));
    }
    dft::forward(&mut qbuf);
    let bins = match probe {
        Probe::Impulse { area } => {
            let area = probe_area(&Probe::Impulse { area: *area })?;
            qbuf.iter().map(|qf| ONE + Complex64::i() * qf * dt / area).collect()
        }
        Probe::Gaussian(spec) => {
            probe_area(probe)?;
            let half = (TRUNCATION_HALF_WIDTH * spec.t_pw / dt).ceil() as isize + 1;
            if 2 * half as usize >= len {
                return Err(Error::LengthMismatch("probe does not fit the DFT grid".into()));
            }
            let centered = GaussianPulseSpec { center: 0.0, ..*spec };
            let mut xbuf = vec![ZERO; len];
            for k in -half..=half {
                let idx = k.rem_euclid(len as isize) as usize;
                xbuf[idx] = Complex64::new(centered.value_at(k as f64 * dt), 0.0);
            }
            dft::forward(&mut xbuf);
            let peak = xbuf.iter().map(|x| x.norm_sqr()).fold(0.0, f64::max);
            let floor = eps * eps * peak;
            xbuf.iter()
                .zip(&qbuf)
                .map(|(x, qf)| {
                    let d = x.norm_sqr().max(floor);
                    if d == 0.0 {
                        ONE
                    } else {
                        ONE + Complex64::i() * qf * x.conj() / d
                    }
                })
                .collect()
        }
    };
    TransferFunction::new(dt, bins)
}

fn probe_area(probe: &Probe) -> Result<f64> {
    let area = match probe {
        Probe::Gaussian(spec) => spec.area(),
        Probe::Impulse { area } => *area,
    };
    if area == 0.0 || !area.is_finite() {
        Err(Error::ZeroProbe)
    } else {
        Ok(area)
    }
}

/// Real RF samples `g(t_k)` at `t_k = t0 + k / sample_rate` around a
/// carrier `f_mw`.
#[derive(Debug, Clone, PartialEq)]
pub struct RfCapture {
    pub sample_rate: f64,
    pub f_mw: f64,
    pub t0: f64,
    pub samples: Vec<f64>,
}

impl RfCapture {
    pub fn new(sample_rate: f64, f_mw: f64, t0: f64, samples: Vec<f64>) -> Result<Self> {
        let cap = Self {
            sample_rate,
            f_mw,
            t0,
            samples,
        };
        cap.validate()?;
        Ok(cap)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sample_rate > 0.0 && self.sample_rate.is_finite()) {
            return Err(Error::InvalidInput("sample rate must be positive".into()));
        }
        if !(self.f_mw > 0.0 && self.f_mw.is_finite()) {
            return Err(Error::InvalidInput("carrier frequency must be positive".into()));
        }
        if self.sample_rate <= 2.0 * self.f_mw {
            return Err(Error::CarrierUndersampled {
                sample_rate: self.sample_rate,
                f_mw: self.f_mw,
            });
        }
        if self.samples.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("capture has non-finite samples".into()));
        }
        Ok(())
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.sample_rate
    }

    pub fn time(&self, k: usize) -> f64 {
        self.t0 + k as f64 * self.dt()
    }

    /// Upconverts `envelope(t)` (dimensionless I + iQ) onto the carrier:
    /// `g = I cos(ω t) - Q sin(ω t)`.
    pub fn modulate<F>(sample_rate: f64, f_mw: f64, t0: f64, n: usize, envelope: F) -> Result<Self>
    where
        F: Fn(f64) -> Complex64,
    {
        let w = 2.0 * PI * f_mw;
        let samples = (0..n)
            .map(|k| {
                let t = t0 + k as f64 / sample_rate;
                let a = envelope(t);
                a.re * (w * t).cos() - a.im * (w * t).sin()
            })
            .collect();
        Self::new(sample_rate, f_mw, t0, samples)
    }

    pub const CSV_HEADER: [&'static str; 2] = ["time_s", "value"];

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let rows: Vec<Vec<String>> = self
            .samples
            .iter()
            .enumerate()
            .map(|(k, v)| vec![io::fmt_time(self.time(k)), io::fmt_value(*v)])
            .collect();
        io::write_csv(path, &Self::CSV_HEADER, &rows)
    }

    /// The carrier is not stored in the CSV and must be supplied.
    pub fn read_csv(path: &Path, f_mw: f64) -> Result<Self> {
        let rows = io::read_csv(path, &Self::CSV_HEADER)?;
        let times: Vec<f64> = rows.iter().map(|r| r[0]).collect();
        let (t0, dt) = io::uniform_spacing(path, &times)?;
        Self::new(1.0 / dt, f_mw, t0, rows.iter().map(|r| r[1]).collect())
    }
}

/// Complex envelope `A_I + i A_Q` at the capture rate, one value per
/// capture sample whose centered one-carrier-period window fits inside the
/// capture.
///
/// Each window is a weighted least-squares projection of `g` onto `cos`
/// and `-sin`. Sample weights are the overlap of each sample cell with the
/// window, so the projection approximates the one-period quadrature
/// integrals for any ratio of sample rate to carrier and is exact for pure
/// tones.
pub fn demodulate_raw(capture: &RfCapture) -> Result<Envelope> {
    capture.validate()?;
    let dt = capture.dt();
    let half = 0.5 * capture.sample_rate / capture.f_mw;
    let reach = (half + 0.5).ceil() as usize;
    let weights: Vec<f64> = (0..=2 * reach)
        .map(|i| {
            let d = i as f64 - reach as f64;
            ((d + 0.5).min(half) - (d - 0.5).max(-half)).clamp(0.0, 1.0)
        })
        .collect();
    let n = capture.samples.len();
    if n < 2 * reach + 1 {
        return Err(Error::InvalidInput(format!(
            "capture of {n} samples is shorter than one carrier window ({} samples)",
            2 * reach + 1
        )));
    }
    let w = 2.0 * PI * capture.f_mw;
    let (c, s): (Vec<f64>, Vec<f64>) = (0..n)
        .map(|j| {
            let ph = w * capture.time(j);
            (ph.cos(), ph.sin())
        })
        .unzip();
    let n_out = n - 2 * reach;
    let mut out = Vec::with_capacity(n_out);
    for j in 0..n_out {
        let (mut cc, mut ss, mut cs, mut gc, mut gs) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for (wi, i) in weights.iter().zip(j..) {
            let g = capture.samples[i] * wi;
            cc += wi * c[i] * c[i];
            ss += wi * s[i] * s[i];
            cs += wi * c[i] * s[i];
            gc += g * c[i];
            gs += g * s[i];
        }
        let det = cc * ss - cs * cs;
        if det.abs() <= 1e-12 * (cc * ss) {
            return Err(Error::CarrierUndersampled {
                sample_rate: capture.sample_rate,
                f_mw: capture.f_mw,
            });
        }
        let a = (gc * ss - gs * cs) / det;
        let b = (gs * cc - gc * cs) / det;
        out.push(Complex64::new(a, -b));
    }
    Envelope::new(SampleGrid::new(dt, n_out, capture.time(reach))?, out)
}

/// Demodulates and resamples onto `grid`.
pub fn demodulate(capture: &RfCapture, grid: &SampleGrid) -> Result<Envelope> {
    resample(&demodulate_raw(capture)?, grid)
}

/// Windowed linear interpolation: each output is the mean of the
/// piecewise-linear interpolant of `src` over `[t - dt/2, t + dt/2]`.
/// Values beyond the source span hold the nearest end sample.
pub fn resample(src: &Envelope, grid: &SampleGrid) -> Result<Envelope> {
    let s = src.samples();
    let sg = src.grid();
    let n = s.len();
    // cum[j] = integral of the interpolant from t0 to t_j, in sample units.
    let mut cum = vec![ZERO; n];
    for j in 1..n {
        cum[j] = cum[j - 1] + 0.5 * (s[j - 1] + s[j]);
    }
    let primitive = |t: f64| -> Complex64 {
        let u = (t - sg.t0) / sg.dt;
        if u <= 0.0 {
            return s[0] * u;
        }
        let last = (n - 1) as f64;
        if u >= last {
            return cum[n - 1] + s[n - 1] * (u - last);
        }
        let j = (u.floor() as usize).min(n - 2);
        let f = u - j as f64;
        cum[j] + s[j] * f + 0.5 * (s[j + 1] - s[j]) * f * f
    };
    let half = 0.5 * grid.dt;
    let scale = sg.dt / grid.dt;
    let out = (0..grid.n)
        .map(|k| {
            let t = grid.time(k);
            (primitive(t + half) - primitive(t - half)) * scale
        })
        .collect();
    Envelope::new(*grid, out)
}

/// Central differences in the interior, one-sided at the ends.
fn derivative(env: &Envelope) -> Vec<Complex64> {
    let s = env.samples();
    let dt = env.grid().dt;
    let n = s.len();
    if n < 2 {
        return vec![ZERO; n];
    }
    (0..n)
        .map(|k| match k {
            0 => (s[1] - s[0]) / dt,
            k if k == n - 1 => (s[n - 1] - s[n - 2]) / dt,
            k => (s[k + 1] - s[k - 1]) / (2.0 * dt),
        })
        .collect()
}

fn step_impulse(capture: &RfCapture, grid: &SampleGrid) -> Result<Vec<Complex64>> {
    Ok(derivative(&demodulate(capture, grid)?))
}

/// Carrier phases averaged over when building the step reference.
const REFERENCE_PHASES: usize = 8;

/// Estimates the channel from a captured step response. The step edge is
/// taken to be at `t = 0`.
///
/// The demodulated, resampled and differentiated capture is divided bin by
/// bin by the same chain applied to an ideal step, so the demodulator
/// window and the interpolation kernel cancel. The reference is averaged
/// over carrier phases, which removes the counter-rotating image that a
/// discontinuous edge leaks into baseband; it therefore models a step
/// whose bandwidth stays below twice the carrier. Bins where the reference
/// carries no energy use the Tikhonov floor.
pub fn estimate_transfer_from_step(capture: &RfCapture, grid: &SampleGrid) -> Result<TransferFunction> {
    estimate_transfer_from_step_eps(capture, grid, DEFAULT_EPS)
}

pub fn estimate_transfer_from_step_eps(
    capture: &RfCapture,
    grid: &SampleGrid,
    eps: f64,
) -> Result<TransferFunction> {
    capture.validate()?;
    let len = padded_len(grid.n);
    let y = step_impulse(capture, grid)?;
    if y.iter().all(|v| *v == ZERO) {
        return Err(Error::AllZeroBins);
    }
    // Half a capture sample keeps the reference edge off the sample grid.
    let edge = 0.5 * capture.dt();
    let mut x = vec![ZERO; grid.n];
    for p in 0..REFERENCE_PHASES {
        let rot = Complex64::from_polar(1.0, 2.0 * PI * p as f64 / REFERENCE_PHASES as f64);
        let reference = RfCapture::modulate(
            capture.sample_rate,
            capture.f_mw,
            capture.t0,
            capture.samples.len(),
            |t| if t >= edge { rot } else { ZERO },
        )?;
        for (acc, v) in x.iter_mut().zip(step_impulse(&reference, grid)?) {
            *acc += v * rot.conj() / REFERENCE_PHASES as f64;
        }
    }
    let yf = dft::forward_padded(&y, len);
    let xf = dft::forward_padded(&x, len);
    let peak = xf.iter().map(|v| v.norm_sqr()).fold(0.0, f64::max);
    if peak == 0.0 {
        return Err(Error::AllZeroBins);
    }
    let floor = eps * eps * peak;
    let bins = yf
        .iter()
        .zip(&xf)
        .map(|(yv, xv)| yv * xv.conj() / xv.norm_sqr().max(floor))
        .collect();
    TransferFunction::new(grid.dt, bins)
}
