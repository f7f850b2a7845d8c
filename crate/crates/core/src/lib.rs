// Copyright 2026 Pulsecal Contributors
// SPDX-License-Identifier: Apache-2.0

//! Qubit-based measurement and correction of microwave pulse distortion.
//!
//! A simulated two-level system is driven with alternating ±π pulses
//! through a distorting control line. The per-pulse quadrature rotation
//! θ(T), measured as a function of pulse period, is inverted through a
//! sign matrix to recover the quadrature response of the line. That
//! response becomes a transfer function whose regularized inverse is used
//! to predistort subsequent pulses, and randomized benchmarking measures
//! the resulting gate error.
//!
//! Module map:
//!
//! - [`waveform`]: sample grids, Gaussian pulses, ±π pulse trains.
//! - [`channel`]: transfer functions, synthetic distortions, DFT
//!   calibration and predistortion, RF demodulation.
//! - [`qubit`]: rotating-frame Bloch propagation with T1/T2.
//! - [`extraction`]: θ(T) scans and fits.
//! - [`reconstruct`]: sign matrices and the linear solve for the
//!   quadrature distortion.
//! - [`rbm`]: randomized benchmarking.
//! - [`cli`]: config-driven pipelines behind the `pulsecal` binary.

pub mod channel;
pub mod cli;
mod dft;
pub mod error;
pub mod extraction;
pub mod io;
pub mod qubit;
pub mod rbm;
pub mod reconstruct;
pub mod waveform;

pub use error::{Error, Result};

/// Re-exported so downstream crates do not need their own `num-complex`.
pub use num_complex::Complex64;
