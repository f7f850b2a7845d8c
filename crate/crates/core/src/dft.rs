// Copyright 2026 Pulsecal Contributors
// SPDX-License-Identifier: Apache-2.0

//! Thin wrappers over `rustfft` with a per-thread planner.

use std::cell::RefCell;

use num_complex::Complex64;
use rustfft::FftPlanner;

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

/// Unnormalized forward DFT, in place.
pub(crate) fn forward(buf: &mut [Complex64]) {
    let fft = PLANNER.with(|p| p.borrow_mut().plan_fft_forward(buf.len()));
    fft.process(buf);
}

/// Inverse DFT including the 1/N factor, in place.
pub(crate) fn inverse(buf: &mut [Complex64]) {
    let n = buf.len();
    let fft = PLANNER.with(|p| p.borrow_mut().plan_fft_inverse(n));
    fft.process(buf);
    let scale = 1.0 / n as f64;
    for v in buf.iter_mut() {
        *v *= scale;
    }
}

/// Forward DFT of `data` zero-padded to `len`.
pub(crate) fn forward_padded(data: &[Complex64], len: usize) -> Vec<Complex64> {
    debug_assert!(data.len() <= len);
    let mut buf = vec![Complex64::new(0.0, 0.0); len];
    buf[..data.len()].copy_from_slice(data);
    forward(&mut buf);
    buf
}

/// DFT length used for an envelope of `n` samples: the next power of two
/// at or above `4 n`, so that distortion tails do not wrap around.
pub fn padded_len(n: usize) -> usize {
    (4 * n.max(1)).next_power_of_two()
}
