// Copyright 2026 Pulsecal Contributors
// SPDX-License-Identifier: Apache-2.0

//! Command-line orchestration. Every stage writes its artifact atomically
//! into the output directory, and every artifact can be fed back to the
//! next stage's subcommand.

pub mod config;

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use log::{info, warn};
use serde::Serialize;

use crate::channel::{
    apply_transfer, estimate_transfer_from_step, invert_transfer, padded_len, predistort,
    transfer_from_reconstruction, Probe, RfCapture, TransferFunction,
};
use crate::error::{Error, Result};
use crate::extraction::{fit_theta, run_theta_scan, PulseShape, ScanOptions, ThetaScan, ThetaTrace};
use crate::io;
use crate::qubit::{Propagator, DEFAULT_OVERSAMPLE};
use crate::rbm::{run_rbm, RbmResult};
use crate::reconstruct::{build_sign_matrix, build_sign_matrix_finite, solve_quadrature, QuadratureVector};
use crate::waveform::{gaussian_envelope, same_dt, Envelope, GaussianPulseSpec, SampleGrid};

pub use config::RunConfig;

const DEFAULT_OUT: &str = "pulsecal_out";

#[derive(Debug, Parser)]
#[command(name = "pulsecal", version, about = "Qubit drive-line distortion calibration")]
pub struct Cli {
    /// JSON run configuration; built-in defaults with an identity channel
    /// are used when absent.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for the parallel stages.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Read x and y through π/2 analysis pulses.
    #[arg(long, global = true)]
    pub physical_tomography: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Full pipeline: scan, fit, reconstruct, predistort, rescan, benchmark.
    Demo,
    /// θ scan through the configured channel; writes scan.csv.
    Scan,
    /// Fits θ(T) from a scan CSV; writes theta.csv and theta_fit.json.
    FitTheta { scan: PathBuf },
    /// Solves for the quadrature tail from a θ CSV; writes quadrature.csv,
    /// transfer_estimate.json and predistortion.json.
    Reconstruct { theta: PathBuf },
    /// Predistorts an envelope CSV with the inverse of a transfer function;
    /// writes predistorted.csv.
    Predistort {
        waveform: PathBuf,
        transfer: PathBuf,
        /// Tikhonov floor for the inversion.
        #[arg(long, default_value_t = 0.0)]
        eps: f64,
    },
    /// Estimates the external line from an RF step capture; writes
    /// transfer_external.json.
    CalibrateExternal {
        capture: PathBuf,
        /// Carrier of the capture, Hz.
        #[arg(long, default_value_t = 0.54e9)]
        carrier_hz: f64,
        /// Caps the AWG samples the estimate covers; by default it spans
        /// the capture less two carrier periods of demodulation margin at
        /// each end.
        #[arg(long)]
        samples: Option<usize>,
        /// Sample rate of the estimate's grid, S/s; the AWG rate when
        /// absent. A finer grid limits aliasing of wideband responses.
        #[arg(long)]
        grid_rate: Option<f64>,
    },
    /// Randomized benchmarking through the configured channel; writes
    /// rbm.json and rbm.csv.
    Rbm {
        /// Transfer function JSON applied to every drive before the channel.
        #[arg(long)]
        predistortion: Option<PathBuf>,
    },
    /// Filters an envelope CSV through a transfer function; writes
    /// channel_applied.csv.
    #[command(hide = true)]
    ApplyChannel { waveform: PathBuf, transfer: PathBuf },
}

#[derive(Serialize)]
struct ErrorReport<'a> {
    error: ErrorBody<'a>,
}

#[derive(Serialize)]
struct ErrorBody<'a> {
    kind: &'a str,
    message: String,
    exit_code: i32,
}

fn error_json(kind: &str, message: String, exit_code: i32) -> String {
    serde_json::to_string(&ErrorReport {
        error: ErrorBody {
            kind,
            message,
            exit_code,
        },
    })
    .expect("error report serializes")
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code. Failures print a JSON error object on stderr.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return 0;
            }
            eprintln!("{}", error_json("usage", e.to_string().trim_end().to_string(), 2));
            return 2;
        }
    };
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            let code = e.exit_code();
            eprintln!("{}", error_json(e.kind(), e.to_string(), code));
            code
        }
    }
}

pub fn run(cli: &Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Error::InvalidInput("--threads must be at least 1".into()));
        }
        // A second initialization in the same process keeps the first pool.
        if rayon::ThreadPoolBuilder::new().num_threads(n).build_global().is_err() {
            warn!("thread pool already initialized; --threads ignored");
        }
    }
    let cfg = load_config(cli)?;
    let out = cli
        .out
        .clone()
        .or_else(|| cfg.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT));
    std::fs::create_dir_all(&out)?;
    match &cli.command {
        Command::Demo => cmd_demo(&cfg, &out).map(|_| ()),
        Command::Scan => {
            let h = cfg.build_channel()?;
            scan(&cfg, &h)?.write_csv(&out.join("scan.csv"))
        }
        Command::FitTheta { scan } => {
            let scan = ThetaScan::read_csv(scan, cfg.grid.dt)?;
            write_trace(&fit_theta(&scan)?, &out, "theta")
        }
        Command::Reconstruct { theta } => {
            let trace = ThetaTrace::read_csv(theta, cfg.grid.dt)?;
            reconstruct_stage(&cfg, &trace, &out).map(|_| ())
        }
        Command::Predistort {
            waveform,
            transfer,
            eps,
        } => cmd_predistort(waveform, transfer, *eps, &out.join("predistorted.csv")),
        Command::CalibrateExternal {
            capture,
            carrier_hz,
            samples,
            grid_rate,
        } => {
            let dt = match grid_rate {
                Some(r) if *r > 0.0 && r.is_finite() => 1.0 / r,
                Some(r) => return Err(Error::InvalidInput(format!("--grid-rate must be positive, got {r}"))),
                None => cfg.grid.dt,
            };
            cmd_calibrate_external(capture, *carrier_hz, dt, *samples, &out)
        }
        Command::Rbm { predistortion } => {
            let h = cfg.build_channel()?;
            let pre = predistortion.as_deref().map(TransferFunction::read_json).transpose()?;
            let res = run_rbm(&cfg.rbm_config()?, &h, pre.as_ref())?;
            write_rbm(&res, &out, "rbm")
        }
        Command::ApplyChannel { waveform, transfer } => {
            let env = Envelope::read_csv(waveform)?;
            let h = fit_length(TransferFunction::read_json(transfer)?, &env)?;
            apply_transfer(&env, &h)?.write_csv(&out.join("channel_applied.csv"))
        }
    }
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig {
            version: config::CONFIG_VERSION,
            seed: 0,
            output_dir: None,
            grid: Default::default(),
            channel: config::ChannelConfig::Identity,
            pulse: Default::default(),
            scan: Default::default(),
            reconstruct: Default::default(),
            decoherence: Default::default(),
            rbm: Default::default(),
        },
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if cli.physical_tomography {
        cfg.scan.physical_tomography = true;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn scan(cfg: &RunConfig, h: &TransferFunction) -> Result<ThetaScan> {
    let (periods, counts) = cfg.scan_axes()?;
    let opts = ScanOptions {
        shape: cfg.scan.shape,
        propagator: Propagator::new(cfg.decoherence, DEFAULT_OVERSAMPLE)?,
        physical_tomography: cfg.scan.physical_tomography,
    };
    info!("scanning {} periods x {} pulse counts", periods.len(), counts.len());
    run_theta_scan(h, cfg.pulse.t_pw, &periods, &counts, &opts)
}

fn write_trace(trace: &ThetaTrace, out: &Path, stem: &str) -> Result<()> {
    trace.write_csv(&out.join(format!("{stem}.csv")))?;
    io::write_json(&out.join(format!("{stem}_fit.json")), trace)
}

struct Reconstruction {
    q: QuadratureVector,
    inverse: TransferFunction,
}

fn reconstruct_stage(cfg: &RunConfig, trace: &ThetaTrace, out: &Path) -> Result<Reconstruction> {
    let (n, w) = cfg.matrix_shape()?;
    let m = if w == 0 {
        build_sign_matrix(n)?
    } else {
        build_sign_matrix_finite(n, w)?
    };
    let q = solve_quadrature(trace, &m)?;
    q.write(&out.join("quadrature.csv"))?;
    let probe = match cfg.scan.shape {
        PulseShape::Gaussian => Probe::Gaussian(GaussianPulseSpec::pi(cfg.pulse.t_pw, 0.0)),
        PulseShape::Instantaneous => Probe::Impulse {
            area: std::f64::consts::PI,
        },
    };
    let len = padded_len(cfg.grid.channel_samples);
    let eps = cfg.reconstruct.eps;
    let estimate = transfer_from_reconstruction(&q.values, q.t0(), q.dt, len, &probe, eps)?;
    estimate.write_json(&out.join("transfer_estimate.json"))?;
    let inverse = invert_transfer(&estimate, eps)?;
    inverse.write_json(&out.join("predistortion.json"))?;
    Ok(Reconstruction { q, inverse })
}

/// Extends a short transfer function to cover `env`; dt must agree.
fn fit_length(h: TransferFunction, env: &Envelope) -> Result<TransferFunction> {
    if !same_dt(h.dt(), env.grid().dt) {
        return Err(Error::DtMismatch {
            expected: env.grid().dt,
            found: h.dt(),
        });
    }
    if h.len() < env.len() {
        Ok(h.resized(padded_len(env.len())))
    } else {
        Ok(h)
    }
}

pub fn cmd_predistort(waveform: &Path, transfer: &Path, eps: f64, out: &Path) -> Result<()> {
    let env = Envelope::read_csv(waveform)?;
    let h = fit_length(TransferFunction::read_json(transfer)?, &env)?;
    predistort(&env, &invert_transfer(&h, eps)?)?.write_csv(out)
}

pub fn cmd_calibrate_external(
    capture: &Path,
    carrier_hz: f64,
    dt: f64,
    samples: Option<usize>,
    out: &Path,
) -> Result<()> {
    let cap = RfCapture::read_csv(capture, carrier_hz)?;
    cap.validate()?;
    let margin = 2.0 / carrier_hz;
    let start = ((cap.t0 + margin) / dt).ceil();
    let end = cap.time(cap.samples.len() - 1) - margin;
    let span = ((end - start * dt) / dt).floor();
    if !(span >= 2.0) {
        return Err(Error::InvalidInput(format!(
            "capture is too short for a grid of {dt:e} s after demodulation margins"
        )));
    }
    let n = samples.map_or(span as usize, |s| s.min(span as usize));
    let grid = SampleGrid::new(dt, n, start * dt)?;
    estimate_transfer_from_step(&cap, &grid)?.write_json(&out.join("transfer_external.json"))
}

fn write_rbm(res: &RbmResult, out: &Path, stem: &str) -> Result<()> {
    res.write_json(&out.join(format!("{stem}.json")))?;
    res.write_csv(&out.join(format!("{stem}.csv")))
}

/// Headline numbers of a demo run. Angles are in degrees here only.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub shape: PulseShape,
    pub theta_min_deg: f64,
    pub theta_max_deg: f64,
    /// θ at 10, 15 and 30 ns when those periods were scanned and fitted.
    pub theta_at_deg: BTreeMap<String, Option<f64>>,
    pub fit_failures: usize,
    pub reconstruction_condition: f64,
    pub reconstruction_residual: f64,
    /// `‖Q - Q_true‖`, rad/s.
    pub reconstruction_l2_error: f64,
    /// The same relative to `‖Q_true‖`; absent for a distortion-free channel.
    pub reconstruction_rel_l2_error: Option<f64>,
    pub max_abs_theta_deg: f64,
    pub max_abs_theta_predistorted_deg: f64,
    pub error_per_pulse: f64,
    pub error_per_pulse_predistorted: f64,
}

/// Quadrature the scan's pulses produce at the qubit, sampled at the
/// reconstruction's time points.
fn ground_truth(cfg: &RunConfig, h: &TransferFunction, q: &QuadratureVector) -> Result<Vec<f64>> {
    let dt = q.dt;
    match cfg.scan.shape {
        PulseShape::Instantaneous => {
            // h = δ + i tail/π with tail integrated per sample.
            let taps = h.impulse_response();
            Ok((0..q.values.len())
                .map(|i| {
                    let k = q.offset + i;
                    taps.get(k).map_or(0.0, |t| std::f64::consts::PI * t.im / dt)
                })
                .collect())
        }
        PulseShape::Gaussian => {
            let lead = (q.origin as f64 + 1.5 * cfg.pulse.t_pw / dt).ceil() as usize + 1;
            let n = lead + q.offset + q.values.len();
            let grid = SampleGrid::new(dt, n, -(lead as f64) * dt)?;
            let env = gaussian_envelope(&GaussianPulseSpec::pi(cfg.pulse.t_pw, 0.0), &grid)?;
            let full = apply_transfer(&env, &h.resized(padded_len(n).max(h.len())))?.quadrature();
            Ok((0..q.values.len())
                .map(|i| full[(q.time(i) / dt).round() as isize as usize + lead])
                .collect())
        }
    }
}

pub fn cmd_demo(cfg: &RunConfig, out: &Path) -> Result<Summary> {
    let h = cfg.build_channel()?;
    h.write_json(&out.join("channel.json"))?;
    io::write_json(&out.join("config.json"), cfg)?;

    let scan_before = scan(cfg, &h)?;
    scan_before.write_csv(&out.join("scan.csv"))?;
    let trace = fit_theta(&scan_before)?;
    write_trace(&trace, out, "theta")?;

    info!("reconstructing the quadrature tail");
    let rec = reconstruct_stage(cfg, &trace, out)?;
    let truth = ground_truth(cfg, &h, &rec.q)?;
    let err: f64 = rec
        .q
        .values
        .iter()
        .zip(&truth)
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        .sqrt();
    let truth_norm = truth.iter().map(|v| v * v).sum::<f64>().sqrt();

    info!("rescanning with predistortion");
    let len = h.len().max(rec.inverse.len());
    let corrected = h.resized(len).compose(&rec.inverse.resized(len))?;
    let scan_after = scan(cfg, &corrected)?;
    scan_after.write_csv(&out.join("scan_predistorted.csv"))?;
    let trace_after = fit_theta(&scan_after)?;
    write_trace(&trace_after, out, "theta_predistorted")?;

    info!("benchmarking");
    let rbm_cfg = cfg.rbm_config()?;
    let rbm_before = run_rbm(&rbm_cfg, &h, None)?;
    write_rbm(&rbm_before, out, "rbm")?;
    let rbm_after = run_rbm(&rbm_cfg, &h, Some(&rec.inverse))?;
    write_rbm(&rbm_after, out, "rbm_predistorted")?;

    let deg = |v: f64| v.to_degrees();
    let theta_at_deg = [("10ns", 10e-9), ("15ns", 15e-9), ("30ns", 30e-9)]
        .into_iter()
        .map(|(k, t)| (k.to_string(), trace.at(t).map(deg)))
        .collect();
    let summary = Summary {
        shape: cfg.scan.shape,
        theta_min_deg: deg(trace.theta.iter().copied().fold(f64::INFINITY, f64::min)),
        theta_max_deg: deg(trace.theta.iter().copied().fold(f64::NEG_INFINITY, f64::max)),
        theta_at_deg,
        fit_failures: trace.failures.len(),
        reconstruction_condition: rec.q.condition,
        reconstruction_residual: rec.q.residual,
        reconstruction_l2_error: err,
        reconstruction_rel_l2_error: (truth_norm > 0.0).then(|| err / truth_norm),
        max_abs_theta_deg: deg(trace.max_abs()),
        max_abs_theta_predistorted_deg: deg(trace_after.max_abs()),
        error_per_pulse: rbm_before.error_per_pulse,
        error_per_pulse_predistorted: rbm_after.error_per_pulse,
    };
    io::write_json(&out.join("summary.json"), &summary)?;
    Ok(summary)
}
