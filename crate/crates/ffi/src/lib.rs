// Copyright 2026 Pulsecal Contributors
// SPDX-License-Identifier: Apache-2.0

//! C ABI over the pulsecal core.
//!
//! Conventions:
//! - Every fallible call returns a `PcStatus`; outputs go through pointer
//!   arguments and are written only on `PC_STATUS_OK`.
//! - Objects are opaque handles created by `pc_*_new`-style calls and
//!   released with the matching `pc_*_free`. Freeing NULL is a no-op.
//! - After a failure, `pc_last_error` describes it until the next call on
//!   the same thread.
//! - Panics never cross the boundary; they surface as `PC_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use num_complex::Complex64;
use pulsecal::channel::{apply_transfer, invert_transfer, TransferFunction};
use pulsecal::error::ErrorClass;
use pulsecal::extraction::ThetaTrace;
use pulsecal::qubit::{BlochState, DecoherenceParams, Propagator, DEFAULT_OVERSAMPLE};
use pulsecal::reconstruct::{build_sign_matrix, build_sign_matrix_finite, solve_quadrature, SignMatrix};
use pulsecal::waveform::{gaussian_envelope, Envelope, GaussianPulseSpec, SampleGrid};
use pulsecal::Error;

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PcStatus {
    Ok = 0,
    /// A required pointer argument was NULL.
    NullPointer = 1,
    /// Bad argument, unreadable file or malformed data.
    InvalidInput = 2,
    /// Arguments disagree with each other, e.g. different sample periods.
    Consistency = 3,
    /// Singular system, failed fit or all-zero spectrum.
    Numerical = 4,
    /// Internal panic; the library state is otherwise unaffected.
    Panic = 5,
}

/// Complex baseband drive on a uniform grid.
pub struct PcEnvelope(Envelope);

/// Transfer function sampled on a DFT grid.
pub struct PcTransfer(TransferFunction);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior NULs removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

struct Failure(PcStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match e.class() {
            ErrorClass::Input => PcStatus::InvalidInput,
            ErrorClass::Consistency => PcStatus::Consistency,
            ErrorClass::Numerical => PcStatus::Numerical,
        };
        Failure(status, e.to_string())
    }
}

fn null(name: &str) -> Failure {
    Failure(PcStatus::NullPointer, format!("{name} is NULL"))
}

fn invalid(msg: impl Into<String>) -> Failure {
    Failure(PcStatus::InvalidInput, msg.into())
}

/// Runs `f` behind the panic barrier and records any failure.
fn guard<F>(f: F) -> PcStatus
where
    F: FnOnce() -> Result<(), Failure>,
{
    clear_error();
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => PcStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            PcStatus::Panic
        }
    }
}

/// # Safety
/// `p` is NULL or valid for `n` reads.
unsafe fn slice<'a, T>(p: *const T, n: usize, name: &str) -> Result<&'a [T], Failure> {
    if n == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(name));
    }
    Ok(std::slice::from_raw_parts(p, n))
}

/// # Safety
/// `p` is NULL or valid for `n` writes.
unsafe fn slice_mut<'a, T>(p: *mut T, n: usize, name: &str) -> Result<&'a mut [T], Failure> {
    if n == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(null(name));
    }
    Ok(std::slice::from_raw_parts_mut(p, n))
}

/// # Safety
/// `p` is NULL or points to a live handle.
unsafe fn handle<'a, T>(p: *const T, name: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(name))
}

/// # Safety
/// `out` is NULL or valid for one write.
unsafe fn put<T>(out: *mut T, v: T, name: &str) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null(name));
    }
    out.write(v);
    Ok(())
}

/// # Safety
/// `p` is NULL or a NUL-terminated string.
unsafe fn path<'a>(p: *const c_char, name: &str) -> Result<&'a Path, Failure> {
    if p.is_null() {
        return Err(null(name));
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| invalid(format!("{name} is not UTF-8")))?;
    Ok(Path::new(s))
}

/// Message for the last failed call on this thread, or NULL. The pointer
/// stays valid until the next pulsecal call on the same thread.
#[no_mangle]
pub extern "C" fn pc_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn pc_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Envelope of `n` samples at `t0 + k dt` from in-phase and quadrature
/// arrays in rad/s.
///
/// # Safety
/// `i` and `q` are valid for `n` reads; `out` is valid for one write.
#[no_mangle]
pub unsafe extern "C" fn pc_envelope_new(
    dt: f64,
    t0: f64,
    i: *const f64,
    q: *const f64,
    n: usize,
    out: *mut *mut PcEnvelope,
) -> PcStatus {
    guard(|| {
        let (i, q) = (slice(i, n, "i")?, slice(q, n, "q")?);
        let grid = SampleGrid::new(dt, n, t0)?;
        let env = Envelope::from_iq(grid, i, q)?;
        put(out, Box::into_raw(Box::new(PcEnvelope(env))), "out")
    })
}

/// Sampled Gaussian π pulse of width `t_pw` centered at `center`.
///
/// # Safety
/// `out` is valid for one write.
#[no_mangle]
pub unsafe extern "C" fn pc_envelope_gaussian_pi(
    t_pw: f64,
    center: f64,
    dt: f64,
    t0: f64,
    n: usize,
    out: *mut *mut PcEnvelope,
) -> PcStatus {
    guard(|| {
        let grid = SampleGrid::new(dt, n, t0)?;
        let env = gaussian_envelope(&GaussianPulseSpec::pi(t_pw, center), &grid)?;
        put(out, Box::into_raw(Box::new(PcEnvelope(env))), "out")
    })
}

/// Number of samples; 0 for NULL.
///
/// # Safety
/// `env` is NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn pc_envelope_len(env: *const PcEnvelope) -> usize {
    env.as_ref().map_or(0, |e| e.0.len())
}

/// Copies the samples into `i` and `q`, which must hold `n` values each,
/// where `n` equals `pc_envelope_len`.
///
/// # Safety
/// `env` is a live handle; `i` and `q` are valid for `n` writes.
#[no_mangle]
pub unsafe extern "C" fn pc_envelope_copy_iq(
    env: *const PcEnvelope,
    i: *mut f64,
    q: *mut f64,
    n: usize,
) -> PcStatus {
    guard(|| {
        let env = &handle(env, "env")?.0;
        if n != env.len() {
            return Err(Failure(
                PcStatus::Consistency,
                format!("buffers hold {n} samples, envelope has {}", env.len()),
            ));
        }
        let (i, q) = (slice_mut(i, n, "i")?, slice_mut(q, n, "q")?);
        for ((a, b), s) in i.iter_mut().zip(q.iter_mut()).zip(env.samples()) {
            *a = s.re;
            *b = s.im;
        }
        Ok(())
    })
}

/// # Safety
/// `env` is NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn pc_envelope_free(env: *mut PcEnvelope) {
    if !env.is_null() {
        drop(Box::from_raw(env));
    }
}

/// Distortion-free transfer function of `len` bins.
///
/// # Safety
/// `out` is valid for one write.
#[no_mangle]
pub unsafe extern "C" fn pc_transfer_identity(dt: f64, len: usize, out: *mut *mut PcTransfer) -> PcStatus {
    guard(|| {
        if !(dt > 0.0 && dt.is_finite()) || len == 0 {
            return Err(invalid(format!("need dt > 0 and len > 0, got {dt:e}, {len}")));
        }
        let h = TransferFunction::identity(dt, len);
        put(out, Box::into_raw(Box::new(PcTransfer(h))), "out")
    })
}

/// Transfer function of the complex impulse response `re + i im`
/// (`n_taps` taps) on a DFT grid of `len` bins.
///
/// # Safety
/// `re` and `im` are valid for `n_taps` reads; `out` for one write.
#[no_mangle]
pub unsafe extern "C" fn pc_transfer_from_impulse(
    dt: f64,
    re: *const f64,
    im: *const f64,
    n_taps: usize,
    len: usize,
    out: *mut *mut PcTransfer,
) -> PcStatus {
    guard(|| {
        let (re, im) = (slice(re, n_taps, "re")?, slice(im, n_taps, "im")?);
        let taps: Vec<Complex64> = re.iter().zip(im).map(|(a, b)| Complex64::new(*a, *b)).collect();
        let h = TransferFunction::from_impulse_response(dt, &taps, len)?;
        put(out, Box::into_raw(Box::new(PcTransfer(h))), "out")
    })
}

/// Loads a transfer function JSON file.
///
/// # Safety
/// `path` is a NUL-terminated UTF-8 string; `out` is valid for one write.
#[no_mangle]
pub unsafe extern "C" fn pc_transfer_read_json(path_: *const c_char, out: *mut *mut PcTransfer) -> PcStatus {
    guard(|| {
        let h = TransferFunction::read_json(path(path_, "path")?)?;
        put(out, Box::into_raw(Box::new(PcTransfer(h))), "out")
    })
}

/// Writes a transfer function JSON file atomically.
///
/// # Safety
/// `h` is a live handle; `path` is a NUL-terminated UTF-8 string.
#[no_mangle]
pub unsafe extern "C" fn pc_transfer_write_json(h: *const PcTransfer, path_: *const c_char) -> PcStatus {
    guard(|| {
        let h = &handle(h, "h")?.0;
        h.write_json(path(path_, "path")?)?;
        Ok(())
    })
}

/// Number of DFT bins; 0 for NULL.
///
/// # Safety
/// `h` is NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn pc_transfer_len(h: *const PcTransfer) -> usize {
    h.as_ref().map_or(0, |h| h.0.len())
}

/// Tikhonov-regularized inverse; `eps = 0` inverts exactly.
///
/// # Safety
/// `h` is a live handle; `out` is valid for one write.
#[no_mangle]
pub unsafe extern "C" fn pc_transfer_invert(h: *const PcTransfer, eps: f64, out: *mut *mut PcTransfer) -> PcStatus {
    guard(|| {
        let inv = invert_transfer(&handle(h, "h")?.0, eps)?;
        put(out, Box::into_raw(Box::new(PcTransfer(inv))), "out")
    })
}

/// # Safety
/// `h` is NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn pc_transfer_free(h: *mut PcTransfer) {
    if !h.is_null() {
        drop(Box::from_raw(h));
    }
}

/// Filters `env` through `h`. Use an inverted transfer function to
/// predistort. `h` must have at least as many bins as `env` has samples.
///
/// # Safety
/// `env` and `h` are live handles; `out` is valid for one write.
#[no_mangle]
pub unsafe extern "C" fn pc_apply_transfer(
    env: *const PcEnvelope,
    h: *const PcTransfer,
    out: *mut *mut PcEnvelope,
) -> PcStatus {
    guard(|| {
        let y = apply_transfer(&handle(env, "env")?.0, &handle(h, "h")?.0)?;
        put(out, Box::into_raw(Box::new(PcEnvelope(y))), "out")
    })
}

fn sign_matrix(n: usize, w: usize) -> Result<SignMatrix, Failure> {
    Ok(if w == 0 {
        build_sign_matrix(n)?
    } else {
        build_sign_matrix_finite(n, w)?
    })
}

/// Side length of the sign matrix for size `n` and pulse width `w`
/// samples, i.e. `n - w`.
///
/// # Safety
/// `dim` is valid for one write.
#[no_mangle]
pub unsafe extern "C" fn pc_sign_matrix_dim(n: usize, w: usize, dim: *mut usize) -> PcStatus {
    guard(|| put(dim, sign_matrix(n, w)?.dim(), "dim"))
}

/// Fills `entries` (row-major, `len = dim * dim`) with the ±1/0 sign
/// matrix. Rows and columns both run over periods `w+1..=n`.
///
/// # Safety
/// `entries` is valid for `len` writes.
#[no_mangle]
pub unsafe extern "C" fn pc_sign_matrix(n: usize, w: usize, entries: *mut i8, len: usize) -> PcStatus {
    guard(|| {
        let m = sign_matrix(n, w)?;
        let d = m.dim();
        if len != d * d {
            return Err(Failure(
                PcStatus::Consistency,
                format!("buffer holds {len} entries, matrix has {}", d * d),
            ));
        }
        let out = slice_mut(entries, len, "entries")?;
        for r in 0..d {
            out[r * d..(r + 1) * d].copy_from_slice(m.row(r + m.offset()));
        }
        Ok(())
    })
}

/// Solves for the quadrature tail from θ values (radians) measured at
/// periods of `period_steps[k] * dt`. Writes `q_len = n - w` values in
/// rad/s; `q[i]` sits `*t0_out + i dt` after the pulse center.
///
/// # Safety
/// `period_steps` and `theta` are valid for `n_rows` reads, `q` for
/// `q_len` writes and `t0_out` for one write.
#[no_mangle]
pub unsafe extern "C" fn pc_solve_quadrature(
    period_steps: *const usize,
    theta: *const f64,
    n_rows: usize,
    dt: f64,
    n: usize,
    w: usize,
    q: *mut f64,
    q_len: usize,
    t0_out: *mut f64,
) -> PcStatus {
    guard(|| {
        let steps = slice(period_steps, n_rows, "period_steps")?;
        let theta = slice(theta, n_rows, "theta")?;
        if t0_out.is_null() {
            return Err(null("t0_out"));
        }
        let m = sign_matrix(n, w)?;
        if q_len != m.dim() {
            return Err(Failure(
                PcStatus::Consistency,
                format!("q holds {q_len} values, the solution has {}", m.dim()),
            ));
        }
        let q = slice_mut(q, q_len, "q")?;
        let trace = ThetaTrace {
            dt,
            periods: steps.iter().map(|k| *k as f64 * dt).collect(),
            theta: theta.to_vec(),
            residual: vec![0.0; n_rows],
            failures: Vec::new(),
        };
        let sol = solve_quadrature(&trace, &m)?;
        q.copy_from_slice(&sol.values);
        put(t0_out, sol.t0(), "t0_out")
    })
}

/// Evolves the Bloch vector `xyz` (3 values, updated in place) under the
/// envelope's drive. `t1` and `t2` in seconds; pass 0 or a negative value
/// to disable a relaxation channel.
///
/// # Safety
/// `env` is a live handle; `xyz` is valid for 3 reads and writes.
#[no_mangle]
pub unsafe extern "C" fn pc_bloch_evolve(env: *const PcEnvelope, t1: f64, t2: f64, xyz: *mut f64) -> PcStatus {
    guard(|| {
        let env = &handle(env, "env")?.0;
        let v = slice_mut(xyz, 3, "xyz")?;
        let on = |t: f64| (t > 0.0).then_some(t);
        let dec = DecoherenceParams::new(on(t1), on(t2))?;
        let s = BlochState::new(v[0], v[1], v[2])?;
        let end = Propagator::new(dec, DEFAULT_OVERSAMPLE)?.run(s, env.samples(), env.grid().dt);
        v.copy_from_slice(&end.to_array());
        Ok(())
    })
}
