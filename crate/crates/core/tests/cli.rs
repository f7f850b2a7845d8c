// Copyright 2026 Pulsecal Contributors
// SPDX-License-Identifier: Apache-2.0

//! End-to-end runs of the `pulsecal` binary.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use num_complex::Complex64;
use pulsecal::channel::{RfCapture, TransferFunction};
use pulsecal::waveform::{Envelope, SampleGrid, AWG_DT};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn pulsecal(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pulsecal"))
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Exit code and parsed error JSON of a failed run.
fn failure(o: &Output) -> (i32, Value) {
    let stderr = String::from_utf8_lossy(&o.stderr);
    let line = stderr
        .lines()
        .rev()
        .find(|l| l.starts_with('{'))
        .unwrap_or_else(|| panic!("no error JSON in {stderr}"));
    (o.status.code().unwrap(), serde_json::from_str(line).unwrap())
}

fn demo(name: &str, out: &Path) -> Value {
    let cfg = configs().join(format!("{name}.json"));
    let o = pulsecal(&["demo", "--config", s(&cfg)], out);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    serde_json::from_str(&std::fs::read_to_string(out.join("summary.json")).unwrap()).unwrap()
}

fn f(v: &Value) -> f64 {
    v.as_f64().unwrap_or_else(|| panic!("not a number: {v}"))
}

#[test]
fn static_demo_reports_the_expected_angles() {
    let dir = tempfile::tempdir().unwrap();
    let sum = demo("static", dir.path());
    assert!(f(&sum["theta_at_deg"]["15ns"]).abs() < 0.01);
    assert!((f(&sum["theta_at_deg"]["30ns"]) - 4.32).abs() < 0.01);
    assert!((f(&sum["theta_at_deg"]["10ns"]) - 1.44).abs() < 0.01);
    assert!(f(&sum["reconstruction_rel_l2_error"]) < 0.05);
    assert!(f(&sum["max_abs_theta_predistorted_deg"]) < 0.1 * f(&sum["max_abs_theta_deg"]));
}

#[test]
fn identity_demo_is_a_no_op() {
    let dir = tempfile::tempdir().unwrap();
    let sum = demo("identity", dir.path());
    assert_eq!(f(&sum["reconstruction_l2_error"]), 0.0);
    assert!(sum["reconstruction_rel_l2_error"].is_null());
    assert!(f(&sum["error_per_pulse"]) < 1e-6);
    assert!(f(&sum["error_per_pulse_predistorted"]) < 1e-6);
    let inv = TransferFunction::read_json(&dir.path().join("predistortion.json")).unwrap();
    assert!(inv.is_identity());
}

#[test]
fn ringing_demo_predistortion_lowers_the_error() {
    let dir = tempfile::tempdir().unwrap();
    let sum = demo("ringing", dir.path());
    let (raw, pre) = (
        f(&sum["error_per_pulse"]),
        f(&sum["error_per_pulse_predistorted"]),
    );
    assert!(pre < raw, "{pre:e} !< {raw:e}");
}

#[test]
fn reruns_are_byte_identical() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    demo("static", a.path());
    demo("static", b.path());
    let mut names: Vec<_> = std::fs::read_dir(a.path())
        .unwrap()
        .map(|e| e.unwrap().file_name())
        .collect();
    names.sort();
    assert!(names.len() >= 10);
    for n in names {
        let x = std::fs::read(a.path().join(&n)).unwrap();
        let y = std::fs::read(b.path().join(&n)).unwrap();
        assert!(x == y, "{n:?} differs");
    }
}

#[test]
fn stages_resume_from_written_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    let cfg = configs().join("static.json");
    let cfg = s(&cfg);
    assert!(pulsecal(&["scan", "--config", cfg], out).status.success());
    let scan = out.join("scan.csv");
    assert!(pulsecal(&["fit-theta", s(&scan), "--config", cfg], out).status.success());
    let theta = out.join("theta.csv");
    assert!(pulsecal(&["reconstruct", s(&theta), "--config", cfg], out).status.success());
    let pre = out.join("predistortion.json");
    assert!(pulsecal(&["rbm", "--predistortion", s(&pre), "--config", cfg], out).status.success());

    let demo_dir = tempfile::tempdir().unwrap();
    demo("static", demo_dir.path());
    for n in ["scan.csv", "theta.csv", "quadrature.csv", "predistortion.json"] {
        let same = std::fs::read(out.join(n)).unwrap() == std::fs::read(demo_dir.path().join(n)).unwrap();
        assert!(same, "{n} differs");
    }
    let same = std::fs::read(out.join("rbm.json")).unwrap()
        == std::fs::read(demo_dir.path().join("rbm_predistorted.json")).unwrap();
    assert!(same, "rbm.json differs");
}

fn test_envelope(n: usize) -> Envelope {
    let grid = SampleGrid::awg(n, -5.0 * AWG_DT).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let samples = (0..n)
        .map(|_| Complex64::new(rng.random_range(-1e8..1e8), rng.random_range(-1e8..1e8)))
        .collect();
    Envelope::new(grid, samples).unwrap()
}

#[test]
fn predistort_with_identity_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let wf = dir.path().join("wf.csv");
    test_envelope(40).write_csv(&wf).unwrap();
    let h = dir.path().join("h.json");
    TransferFunction::identity(AWG_DT, 128).write_json(&h).unwrap();
    let o = pulsecal(&["predistort", s(&wf), s(&h)], dir.path());
    assert!(o.status.success());
    let same = std::fs::read(&wf).unwrap() == std::fs::read(dir.path().join("predistorted.csv")).unwrap();
    assert!(same, "predistorted.csv differs from the input");
}

#[test]
fn predistort_then_channel_recovers_the_input() {
    let dir = tempfile::tempdir().unwrap();
    let x = test_envelope(60);
    let wf = dir.path().join("wf.csv");
    x.write_csv(&wf).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let taps: Vec<Complex64> = (0..6)
        .map(|k| {
            if k == 0 {
                Complex64::new(1.0, 0.0)
            } else {
                Complex64::new(rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1)) * 0.5f64.powi(k)
            }
        })
        .collect();
    let h = dir.path().join("h.json");
    // Shorter than the envelope: the CLI pads it.
    TransferFunction::from_impulse_response(AWG_DT, &taps, 32)
        .unwrap()
        .write_json(&h)
        .unwrap();
    assert!(pulsecal(&["predistort", s(&wf), s(&h)], dir.path()).status.success());
    let pre = dir.path().join("predistorted.csv");
    assert!(pulsecal(&["apply-channel", s(&pre), s(&h)], dir.path()).status.success());
    let y = Envelope::read_csv(&dir.path().join("channel_applied.csv")).unwrap();
    let num: f64 = y
        .samples()
        .iter()
        .zip(x.samples())
        .map(|(a, b)| (a - b).norm_sqr())
        .sum();
    assert!((num / x.l2().powi(2)).sqrt() < 1e-9);
}

#[test]
fn dt_mismatch_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let wf = dir.path().join("wf.csv");
    test_envelope(16).write_csv(&wf).unwrap();
    let h = dir.path().join("h.json");
    TransferFunction::identity(AWG_DT / 2.0, 64).write_json(&h).unwrap();
    let (code, err) = failure(&pulsecal(&["predistort", s(&wf), s(&h)], dir.path()));
    assert_eq!(code, 3);
    assert_eq!(err["error"]["kind"], "dt_mismatch");
    assert_eq!(err["error"]["exit_code"], 3);
}

#[test]
fn missing_transfer_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let wf = dir.path().join("wf.csv");
    test_envelope(16).write_csv(&wf).unwrap();
    let missing = dir.path().join("nope.json");
    let (code, err) = failure(&pulsecal(&["predistort", s(&wf), s(&missing)], dir.path()));
    assert_eq!(code, 2);
    assert_eq!(err["error"]["kind"], "io");
}

#[test]
fn all_zero_transfer_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    let wf = dir.path().join("wf.csv");
    test_envelope(16).write_csv(&wf).unwrap();
    let h = dir.path().join("h.json");
    TransferFunction::new(AWG_DT, vec![Complex64::new(0.0, 0.0); 64])
        .unwrap()
        .write_json(&h)
        .unwrap();
    let (code, err) = failure(&pulsecal(&["predistort", s(&wf), s(&h)], dir.path()));
    assert_eq!(code, 4);
    assert_eq!(err["error"]["kind"], "all_zero_bins");
}

#[test]
fn bad_configs_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"version": 1, "channel": {"kind": "identity"}, "speed": 3}"#).unwrap();
    let (code, err) = failure(&pulsecal(&["scan", "--config", s(&cfg)], dir.path()));
    assert_eq!(code, 2);
    assert_eq!(err["error"]["kind"], "parse");
    let (code, err) = failure(&pulsecal(&["frobnicate"], dir.path()));
    assert_eq!(code, 2);
    assert_eq!(err["error"]["kind"], "usage");
}

const CARRIER: f64 = 5.4e9;

/// Step through an optional one-pole low-pass, 5.4 GHz carrier at 40 GS/s.
fn step_capture(fc: Option<f64>) -> RfCapture {
    let fs = 40e9;
    RfCapture::modulate(fs, CARRIER, -20e-9, (200e-9 * fs) as usize, |t| {
        let edge = t - 0.5 / fs;
        match (edge < 0.0, fc) {
            (true, _) => Complex64::new(0.0, 0.0),
            (false, None) => Complex64::new(1.0, 0.0),
            (false, Some(fc)) => Complex64::new(1.0 - (-2.0 * PI * fc * edge).exp(), 0.0),
        }
    })
    .unwrap()
}

fn calibrate(cap: &RfCapture, dir: &Path) -> TransferFunction {
    let path = dir.join("capture.csv");
    cap.write_csv(&path).unwrap();
    let o = pulsecal(
        &["calibrate-external", s(&path), "--carrier-hz", "5.4e9", "--grid-rate", "4.8e9"],
        dir,
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    TransferFunction::read_json(&dir.join("transfer_external.json")).unwrap()
}

#[test]
fn identity_step_calibrates_to_identity() {
    let dir = tempfile::tempdir().unwrap();
    let h = calibrate(&step_capture(None), dir.path());
    for (k, b) in h.bins().iter().enumerate() {
        let f = h.frequency(k).abs();
        if f > 600e6 {
            continue;
        }
        // The edge's counter-rotating image leaks in as f / (2 f_mw).
        let bound = if f <= 50e6 { 0.01 } else { 1.2 * f / (2.0 * CARRIER) + 0.002 };
        assert!((b - 1.0).norm() < bound, "f {f:e}: {b}");
    }
}

#[test]
fn one_pole_capture_matches_the_analytic_curve() {
    let dir = tempfile::tempdir().unwrap();
    let fc = 300e6;
    let h = calibrate(&step_capture(Some(fc)), dir.path());
    let mut worst = 0.0f64;
    for (k, b) in h.bins().iter().enumerate() {
        let f = h.frequency(k);
        if f.abs() <= fc {
            let expect = 1.0 / (1.0 + (f / fc).powi(2)).sqrt();
            worst = worst.max((b.norm() / expect - 1.0).abs());
        }
    }
    assert!(worst < 0.02, "{worst}");
}

#[test]
fn truncated_capture_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("capture.csv");
    step_capture(None).write_csv(&path).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    // Drop the value of the last row.
    let cut = text.trim_end().rfind(',').unwrap() + 1;
    std::fs::write(&path, &text[..cut]).unwrap();
    let (code, err) = failure(&pulsecal(
        &["calibrate-external", s(&path), "--carrier-hz", "5.4e9"],
        dir.path(),
    ));
    assert_eq!(code, 2);
    assert_eq!(err["error"]["kind"], "parse");
    assert!(err["error"]["message"].as_str().unwrap().contains(':'));
}
