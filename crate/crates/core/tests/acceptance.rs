// Copyright 2026 Pulsecal Contributors
// SPDX-License-Identifier: Apache-2.0

//! Acceptance checks. Each test prints one `criterion N: PASS|FAIL` line
//! (visible with `--nocapture`) and then asserts the verdict. Tolerances
//! are pinned here.

use std::f64::consts::PI;

use num_complex::Complex64;
use pulsecal::channel::{
    apply_transfer, estimate_transfer_from_step, invert_transfer, padded_len, predistort,
    synth_piecewise_quadrature, synth_ringing_quadrature, synth_static_quadrature,
    transfer_from_reconstruction, Probe, RfCapture, TransferFunction,
};
use pulsecal::extraction::{fit_theta, run_theta_scan, PulseShape, ScanOptions, ThetaTrace};
use pulsecal::qubit::{step, BlochState, DecoherenceParams};
use pulsecal::rbm::{run_rbm, RbmConfig};
use pulsecal::reconstruct::{
    build_sign_matrix, build_sign_matrix_finite, eq2_oracle, solve_quadrature, QuadratureVector,
};
use pulsecal::waveform::{gaussian_envelope, Envelope, GaussianPulseSpec, SampleGrid, AWG_DT};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const MHZ: f64 = 2.0 * PI * 1e6;
const TPW: f64 = 2.5e-9;

fn report(n: u32, pass: bool, detail: &str) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    println!("criterion {n}: {verdict} {detail}");
}

fn counts(max: usize) -> Vec<usize> {
    (1..=max / 2).map(|k| 2 * k).collect()
}

fn steps(lo: usize, hi: usize) -> Vec<f64> {
    (lo..=hi).map(|m| m as f64 * AWG_DT).collect()
}

fn scan_and_fit(h: &TransferFunction, periods: &[f64], shape: PulseShape) -> ThetaTrace {
    let opts = ScanOptions {
        shape,
        ..Default::default()
    };
    let scan = run_theta_scan(h, TPW, periods, &counts(400), &opts).unwrap();
    fit_theta(&scan).unwrap()
}

fn static_channel() -> TransferFunction {
    let grid = SampleGrid::awg(256, 0.0).unwrap();
    synth_static_quadrature(0.4 * MHZ, 30e-9, &grid).unwrap()
}

#[test]
fn criterion_1_static_distortion_theta() {
    let h = static_channel();
    let periods = [12usize, 18, 36, 42, 48];
    let ts: Vec<f64> = periods.iter().map(|m| *m as f64 * AWG_DT).collect();
    let deg = |tr: &ThetaTrace| -> Vec<f64> {
        ts.iter().map(|t| tr.at(*t).expect("row fitted").to_degrees()).collect()
    };
    let finite = deg(&scan_and_fit(&h, &ts, PulseShape::Gaussian));
    let instant = deg(&scan_and_fit(&h, &ts, PulseShape::Instantaneous));
    let ok = |d: &[f64]| {
        (d[0] - 1.44).abs() <= 0.1
            && d[1].abs() <= 0.05
            && d[2..].iter().all(|v| (v - 4.32).abs() <= 0.1)
    };
    let pass = ok(&finite);
    report(
        1,
        pass,
        &format!(
            "2.5 ns pulses: theta(10, 15, 30, 35, 40 ns) = {:.3?} deg; instantaneous pulses: {:.3?} deg",
            finite, instant
        ),
    );
    assert!(ok(&instant), "instantaneous-pulse values {instant:?}");
    assert!(pass, "finite-pulse values {finite:?}");
}

#[test]
fn criterion_2_golden_matrices() {
    #[rustfmt::skip]
    let s2: [[i8; 10]; 10] = [
        [1, -1, 1, -1, 1, -1, 1, -1, 1, -1],
        [1, 1, -1, -1, 1, 1, -1, -1, 1, 1],
        [1, 1, 1, -1, -1, -1, 1, 1, 1, -1],
        [1, 1, 1, 1, -1, -1, -1, -1, 1, 1],
        [1, 1, 1, 1, 1, -1, -1, -1, -1, -1],
        [1, 1, 1, 1, 1, 1, -1, -1, -1, -1],
        [1, 1, 1, 1, 1, 1, 1, -1, -1, -1],
        [1, 1, 1, 1, 1, 1, 1, 1, -1, -1],
        [1, 1, 1, 1, 1, 1, 1, 1, 1, -1],
        [1, 1, 1, 1, 1, 1, 1, 1, 1, 1],
    ];
    #[rustfmt::skip]
    let s3: [[i8; 7]; 7] = [
        [1, 0, 0, 0, -1, 0, 0],
        [1, 1, 0, 0, 0, -1, -1],
        [1, 1, 1, 0, 0, 0, -1],
        [1, 1, 1, 1, 0, 0, 0],
        [1, 1, 1, 1, 1, 0, 0],
        [1, 1, 1, 1, 1, 1, 0],
        [1, 1, 1, 1, 1, 1, 1],
    ];
    let ideal = build_sign_matrix(10).unwrap();
    let finite = build_sign_matrix_finite(10, 3).unwrap();
    let ideal_ok = (1..=10).all(|m| ideal.row(m) == s2[m - 1]);
    let finite_ok = (4..=10).all(|m| finite.row(m) == s3[m - 4]);
    report(2, ideal_ok && finite_ok, &format!("ideal {ideal_ok}, finite {finite_ok}"));
    assert!(ideal_ok && finite_ok);
}

#[test]
fn criterion_3_oracle_equivalence_and_inversion() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut exact = true;
    let mut worst = 0.0f64;
    for i in 0..100 {
        let w = if i % 2 == 0 { 0 } else { 3 };
        let n = rng.random_range(w + 1..=64);
        let m = build_sign_matrix_finite(n, w).unwrap();
        let q: Vec<f64> = (0..m.dim()).map(|_| rng.random_range(-1e8..1e8)).collect();
        let theta = m.apply(&q, AWG_DT).unwrap();
        for k in m.offset()..=n {
            exact &= theta[k - m.offset()] == eq2_oracle(&q, k, w, AWG_DT).unwrap();
        }
        let trace = ThetaTrace {
            dt: AWG_DT,
            periods: steps(m.offset(), n),
            residual: vec![0.0; theta.len()],
            theta,
            failures: vec![],
        };
        let got = solve_quadrature(&trace, &m).unwrap();
        worst = worst.max(rel_l2(&got.values, &q));
    }
    let pass = exact && worst < 1e-10;
    report(3, pass, &format!("bit-exact oracle {exact}, worst inversion error {worst:.2e}"));
    assert!(pass);
}

fn rel_l2(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum();
    let den: f64 = b.iter().map(|y| y * y).sum();
    (num / den).sqrt()
}

/// Hidden tail: three plateaus over 30 ns.
fn hidden_levels() -> Vec<f64> {
    let mut levels = vec![0.6 * MHZ; 8];
    levels.extend(vec![-0.3 * MHZ; 10]);
    levels.extend(vec![0.2 * MHZ; 18]);
    levels
}

/// Quadrature at the qubit after one 2.5 ns π pulse centered on sample 0,
/// indexed from sample `-100`.
fn gaussian_quadrature(h: &TransferFunction) -> Vec<f64> {
    let g = SampleGrid::awg(200, -100.0 * AWG_DT).unwrap();
    let env = gaussian_envelope(&GaussianPulseSpec::pi(TPW, 0.0), &g).unwrap();
    apply_transfer(&env, &h.resized(padded_len(200).max(h.len())))
        .unwrap()
        .quadrature()
}

fn reconstruct(h: &TransferFunction, n: usize, shape: PulseShape) -> QuadratureVector {
    let (w, m) = match shape {
        PulseShape::Instantaneous => (0, build_sign_matrix(n).unwrap()),
        PulseShape::Gaussian => (3, build_sign_matrix_finite(n, 3).unwrap()),
    };
    let trace = scan_and_fit(h, &steps(w + 1, n), shape);
    solve_quadrature(&trace, &m).unwrap()
}

#[test]
fn criterion_4_blind_reconstruction() {
    let levels = hidden_levels();
    let grid = SampleGrid::awg(256, 0.0).unwrap();
    let h = synth_piecewise_quadrature(&levels, &grid).unwrap();

    let q = reconstruct(&h, 36, PulseShape::Instantaneous);
    let err_instant = rel_l2(&q.values, &levels);

    // With finite pulses Q is the quadrature a 2.5 ns pulse produces at the
    // qubit. It outlasts the tail by the pulse half-width, so N covers
    // 36 + 5 steps.
    let q = reconstruct(&h, 42, PulseShape::Gaussian);
    let truth_full = gaussian_quadrature(&h);
    let truth: Vec<f64> = (0..q.values.len())
        .map(|i| {
            let t = q.time(i);
            truth_full[(100.0 + t / AWG_DT).round() as usize]
        })
        .collect();
    let err_finite = rel_l2(&q.values, &truth);

    let pass = err_instant < 0.05 && err_finite < 0.20;
    report(
        4,
        pass,
        &format!(
            "instantaneous L2 error {err_instant:.2e} (< 5%), finite-pulse L2 error {:.1}% (< 20%)",
            100.0 * err_finite
        ),
    );
    assert!(err_instant < 0.05);
    assert!(err_finite < 0.20);
}

fn ringing_channel(amp_mhz: f64) -> TransferFunction {
    let grid = SampleGrid::awg(512, 0.0).unwrap();
    synth_ringing_quadrature(amp_mhz * MHZ, 80e6, 10e-9, &grid).unwrap()
}

/// Measure θ with 2.5 ns pulses, reconstruct with the finite-width matrix
/// over a 50 ns window, and invert the resulting channel estimate.
fn predistortion_filter(h: &TransferFunction) -> TransferFunction {
    let q = reconstruct(h, 60, PulseShape::Gaussian);
    let probe = Probe::Gaussian(GaussianPulseSpec::pi(TPW, 0.0));
    let est = transfer_from_reconstruction(&q.values, q.t0(), AWG_DT, h.len(), &probe, 1e-3).unwrap();
    invert_transfer(&est, 1e-3).unwrap()
}

#[test]
fn criterion_5_predistortion_efficacy() {
    let h = ringing_channel(5.0);
    let inv = predistortion_filter(&h);
    let periods = steps(4, 60);
    let before = scan_and_fit(&h, &periods, PulseShape::Gaussian);
    let corrected = h.compose(&inv.resized(h.len())).unwrap();
    let after = scan_and_fit(&corrected, &periods, PulseShape::Gaussian);
    let ratio = before.max_abs() / after.max_abs();
    let pass = ratio >= 5.0 && after.failures.is_empty();
    report(
        5,
        pass,
        &format!(
            "max|theta| {:.3} deg -> {:.3} deg, reduction {ratio:.1}x (>= 5x)",
            before.max_abs().to_degrees(),
            after.max_abs().to_degrees()
        ),
    );
    assert!(pass);
}

/// Depolarizing parameter of idling for `t` under T1/T2, from a dense RK4
/// integration of the Bloch equations.
fn idle_depolarizing(t1: f64, t2: f64, t: f64) -> f64 {
    let deriv = |v: [f64; 3]| [-v[0] / t2, -v[1] / t2, (1.0 - v[2]) / t1];
    let run = |mut v: [f64; 3]| {
        let n = 20_000;
        let h = t / n as f64;
        let add = |a: [f64; 3], b: [f64; 3], s: f64| [a[0] + s * b[0], a[1] + s * b[1], a[2] + s * b[2]];
        for _ in 0..n {
            let k1 = deriv(v);
            let k2 = deriv(add(v, k1, h / 2.0));
            let k3 = deriv(add(v, k2, h / 2.0));
            let k4 = deriv(add(v, k3, h));
            for i in 0..3 {
                v[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
            }
        }
        v
    };
    let c = run([0.0; 3]);
    let trace: f64 = (0..3)
        .map(|i| {
            let mut e = [0.0; 3];
            e[i] = 1.0;
            run(e)[i] - c[i]
        })
        .sum();
    trace / 3.0
}

#[test]
fn criterion_6_rbm() {
    let h = ringing_channel(5.0);
    let inv = predistortion_filter(&h);
    let mut lines = Vec::new();
    let mut ordering = true;
    for t_pw in [2.5e-9, 3.5e-9, 5e-9, 7e-9] {
        let cfg = RbmConfig {
            seed: 2026,
            n_sequences: 12,
            n_randomizations: 2,
            lengths: (1..=10).map(|k| 1 << k).collect(),
            t_pw,
            period: 3.0 * t_pw,
            decoherence: DecoherenceParams::NONE,
        };
        let raw = run_rbm(&cfg, &h, None).unwrap().error_per_pulse;
        let pre = run_rbm(&cfg, &h, Some(&inv)).unwrap().error_per_pulse;
        ordering &= pre < raw;
        lines.push(format!("{:.1} ns: {raw:.2e} -> {pre:.2e}", t_pw * 1e9));
    }

    let ident = TransferFunction::identity(AWG_DT, 1024);
    let base = RbmConfig {
        seed: 1,
        n_sequences: 8,
        n_randomizations: 1,
        lengths: (1..=10).map(|k| 1 << k).collect(),
        t_pw: 3.5e-9,
        period: 10.5e-9,
        decoherence: DecoherenceParams::NONE,
    };
    let ideal = run_rbm(&base, &ident, None).unwrap().error_per_pulse;

    let (t1, t2) = (12e-6, 24e-6);
    let dec_cfg = RbmConfig {
        n_sequences: 24,
        lengths: vec![16, 64, 256, 512, 1024, 2048, 4096],
        decoherence: DecoherenceParams::new(Some(t1), Some(t2)).unwrap(),
        ..base.clone()
    };
    let dec = run_rbm(&dec_cfg, &ident, None).unwrap().error_per_pulse;
    // The gate period is the sampled one: centers sit on the AWG grid.
    let oracle = -idle_depolarizing(t1, t2, base.period).ln();
    let dec_rel = (dec / oracle - 1.0).abs();

    let pass = ordering && ideal < 1e-6 && dec_rel < 0.2;
    report(
        6,
        pass,
        &format!(
            "error per pulse uncorrected -> predistorted [{}]; identity {ideal:.1e}; T1-limited {dec:.3e} vs oracle {oracle:.3e} ({:.1}%)",
            lines.join(", "),
            100.0 * dec_rel
        ),
    );
    assert!(ordering, "{lines:?}");
    assert!(ideal < 1e-6);
    assert!(dec_rel < 0.2);
}

/// Independent check: spinor propagation with `exp(-i (φ/2) n·σ)` per
/// sample, read out as a Bloch vector.
fn spinor_bloch(samples: &[Complex64], dt: f64) -> [f64; 3] {
    let i = Complex64::i();
    let mut a = Complex64::new(1.0, 0.0);
    let mut b = Complex64::new(0.0, 0.0);
    for s in samples {
        let (vx, vy) = (s.re * dt, s.im * dt);
        let phi = vx.hypot(vy);
        if phi == 0.0 {
            continue;
        }
        let (nx, ny) = (vx / phi, vy / phi);
        let (c, sn) = ((phi / 2.0).cos(), (phi / 2.0).sin());
        // n·σ = [[0, nx - i ny], [nx + i ny, 0]]
        let off_up = Complex64::new(nx, -ny);
        let off_dn = Complex64::new(nx, ny);
        let na = a * c - i * sn * off_up * b;
        let nb = b * c - i * sn * off_dn * a;
        a = na;
        b = nb;
    }
    let ab = a.conj() * b;
    [2.0 * ab.re, 2.0 * ab.im, a.norm_sqr() - b.norm_sqr()]
}

#[test]
fn criterion_7_simulator_fidelity() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let n = rng.random_range(20..300);
        let samples: Vec<Complex64> = (0..n)
            .map(|_| Complex64::new(rng.random_range(-2e9..2e9), rng.random_range(-2e9..2e9)))
            .collect();
        let s = samples
            .iter()
            .fold(BlochState::GROUND, |s, a| step(s, a.re, a.im, AWG_DT));
        let o = spinor_bloch(&samples, AWG_DT);
        for (x, y) in s.to_array().iter().zip(o) {
            worst = worst.max((x - y).abs());
        }
    }
    let mut s = BlochState::new(0.6, 0.0, 0.8).unwrap();
    let mut norm_err = 0.0f64;
    for _ in 0..10_000 {
        s = step(s, rng.random_range(-1e9..1e9), rng.random_range(-1e9..1e9), AWG_DT);
        norm_err = norm_err.max((s.norm() - 1.0).abs());
    }
    let pass = worst < 1e-10 && norm_err < 1e-12;
    report(
        7,
        pass,
        &format!("max deviation from spinor oracle {worst:.1e}, norm drift {norm_err:.1e}"),
    );
    assert!(pass);
}

fn smooth_channel(len: usize, rng: &mut ChaCha8Rng) -> TransferFunction {
    let taps: Vec<Complex64> = (0..8)
        .map(|k| {
            if k == 0 {
                Complex64::new(1.0, 0.0)
            } else {
                let w = 0.25 * 0.5f64.powi(k);
                Complex64::new(rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5)) * w
            }
        })
        .collect();
    TransferFunction::from_impulse_response(AWG_DT, &taps, len).unwrap()
}

#[test]
fn criterion_8_dft_pipeline() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let grid = SampleGrid::awg(96, -20.0 * AWG_DT).unwrap();
    let len = padded_len(grid.n);
    let x = gaussian_envelope(&GaussianPulseSpec::pi(TPW, 0.0), &grid)
        .unwrap()
        .try_add(&gaussian_envelope(&GaussianPulseSpec::with_area(1.0, 4e-9, 30.0 * AWG_DT), &grid)
            .unwrap()
            .scaled(Complex64::i()))
        .unwrap();
    let mut round_trip = 0.0f64;
    for _ in 0..10 {
        let h = smooth_channel(len, &mut rng);
        let inv = invert_transfer(&h, 0.0).unwrap();
        let y = apply_transfer(&predistort(&x, &inv).unwrap(), &h).unwrap();
        round_trip = round_trip.max(env_rel_l2(&y, &x));
    }

    let fc = 300e6;
    let (fs, f_mw) = (40e9, 5.4e9);
    let cap = RfCapture::modulate(fs, f_mw, -20e-9, (200e-9 * fs) as usize, |t| {
        let edge = t - 0.5 / fs;
        if edge < 0.0 {
            Complex64::new(0.0, 0.0)
        } else {
            Complex64::new(1.0 - (-2.0 * PI * fc * edge).exp(), 0.0)
        }
    })
    .unwrap();
    let g = SampleGrid::new(AWG_DT / 4.0, 640, -10e-9).unwrap();
    let est = estimate_transfer_from_step(&cap, &g).unwrap();
    let mut worst = 0.0f64;
    for k in 0..est.len() {
        let f = est.frequency(k);
        if f.abs() <= fc {
            let expect = 1.0 / (1.0 + (f / fc).powi(2)).sqrt();
            worst = worst.max((est.bins()[k].norm() / expect - 1.0).abs());
        }
    }
    let pass = round_trip < 1e-9 && worst < 0.02;
    report(
        8,
        pass,
        &format!(
            "H*H^-1 round trip {round_trip:.1e}, one-pole magnitude error {:.2}% up to 300 MHz",
            100.0 * worst
        ),
    );
    assert!(pass);
}

fn env_rel_l2(a: &Envelope, b: &Envelope) -> f64 {
    let num: f64 = a
        .samples()
        .iter()
        .zip(b.samples())
        .map(|(x, y)| (x - y).norm_sqr())
        .sum();
    (num / b.l2().powi(2)).sqrt()
}
