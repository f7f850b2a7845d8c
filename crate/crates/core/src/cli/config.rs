// Copyright 2026 Pulsecal Contributors
// SPDX-License-Identifier: Apache-2.0

//! JSON run configuration. Unknown keys are rejected at every level.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::channel::{
    padded_len, synth_piecewise_quadrature, synth_ringing_quadrature, synth_static_quadrature,
    TransferFunction,
};
use crate::error::{Error, Result};
use crate::extraction::{default_axes, PulseShape};
use crate::io;
use crate::qubit::DecoherenceParams;
use crate::rbm::RbmConfig;
use crate::waveform::{SampleGrid, AWG_DT};

/// Schema version understood by this build.
pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub version: u32,
    #[serde(default)]
    pub seed: u64,
    /// Relative paths resolve against the config file's directory.
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub grid: GridConfig,
    pub channel: ChannelConfig,
    #[serde(default)]
    pub pulse: PulseConfig,
    #[serde(default)]
    pub scan: ScanConfig,
    #[serde(default)]
    pub reconstruct: ReconstructConfig,
    #[serde(default)]
    pub decoherence: DecoherenceParams,
    #[serde(default)]
    pub rbm: RbmSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    /// AWG sample period, s.
    #[serde(default = "default_dt")]
    pub dt: f64,
    /// Samples spanned by synthetic channel impulse responses.
    #[serde(default = "default_channel_samples")]
    pub channel_samples: usize,
}

fn default_dt() -> f64 {
    AWG_DT
}

fn default_channel_samples() -> usize {
    512
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            dt: default_dt(),
            channel_samples: default_channel_samples(),
        }
    }
}

/// Distortion channel under test. Quadrature amplitudes are in rad/s.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ChannelConfig {
    Identity,
    Static {
        level_rad_s: f64,
        duration_s: f64,
    },
    Ringing {
        amp_rad_s: f64,
        freq_hz: f64,
        decay_s: f64,
    },
    /// `levels_rad_s[n-1]` holds over `((n-1) dt, n dt]` after each pulse.
    Piecewise {
        levels_rad_s: Vec<f64>,
    },
    /// A TransferFunction JSON file.
    File {
        path: PathBuf,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PulseConfig {
    /// Gaussian pulse width, s.
    #[serde(default = "default_t_pw")]
    pub t_pw: f64,
}

fn default_t_pw() -> f64 {
    2.5e-9
}

impl Default for PulseConfig {
    fn default() -> Self {
        Self { t_pw: default_t_pw() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct ScanConfig {
    /// Inclusive `[first, last]` period in samples. Defaults to the span
    /// of `3 t_pw` through 30 ns and the reconstruction rows.
    #[serde(default)]
    pub period_steps: Option<[usize; 2]>,
    /// Largest pulse count; counts run 2, 4, …, `max_count`.
    #[serde(default)]
    pub max_count: Option<usize>,
    #[serde(default)]
    pub shape: PulseShape,
    #[serde(default)]
    pub physical_tomography: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReconstructConfig {
    /// Matrix size N in samples; 30 ns worth of samples if absent.
    #[serde(default)]
    pub n: Option<usize>,
    /// Pulse width in samples for the finite-width matrix. Defaults to 0
    /// for instantaneous scans and `round(t_pw / dt)` for Gaussian ones.
    #[serde(default)]
    pub width: Option<usize>,
    /// Tikhonov floor for both the channel estimate and its inverse.
    #[serde(default = "default_eps")]
    pub eps: f64,
}

fn default_eps() -> f64 {
    1e-3
}

impl Default for ReconstructConfig {
    fn default() -> Self {
        Self {
            n: None,
            width: None,
            eps: default_eps(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RbmSection {
    #[serde(default = "default_sequences")]
    pub n_sequences: usize,
    #[serde(default = "default_randomizations")]
    pub n_randomizations: usize,
    #[serde(default)]
    pub lengths: Option<Vec<usize>>,
    /// Defaults to the pulse width.
    #[serde(default)]
    pub t_pw: Option<f64>,
    /// Defaults to three pulse widths.
    #[serde(default)]
    pub period: Option<f64>,
}

fn default_sequences() -> usize {
    10
}

fn default_randomizations() -> usize {
    2
}

impl Default for RbmSection {
    fn default() -> Self {
        Self {
            n_sequences: default_sequences(),
            n_randomizations: default_randomizations(),
            lengths: None,
            t_pw: None,
            period: None,
        }
    }
}

impl RunConfig {
    /// Reads and validates a config. Relative paths inside it are resolved
    /// against the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let mut cfg: RunConfig = io::read_json(path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        if let ChannelConfig::File { path: p } = &mut cfg.channel {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        if let Some(out) = &mut cfg.output_dir {
            if out.is_relative() {
                *out = base.join(&*out);
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            return Err(Error::Config(format!(
                "unsupported config version {}, expected {CONFIG_VERSION}",
                self.version
            )));
        }
        self.grid()?;
        if !(self.pulse.t_pw > 0.0 && self.pulse.t_pw.is_finite()) {
            return Err(Error::Config(format!("pulse.t_pw must be positive, got {:e}", self.pulse.t_pw)));
        }
        self.decoherence.validate()?;
        if !(self.reconstruct.eps >= 0.0 && self.reconstruct.eps.is_finite()) {
            return Err(Error::Config("reconstruct.eps must be non-negative".into()));
        }
        let (periods, counts) = self.scan_axes()?;
        if periods.is_empty() || counts.is_empty() {
            return Err(Error::Config("scan axes are empty".into()));
        }
        if let Some([a, b]) = self.scan.period_steps {
            if a == 0 || b < a {
                return Err(Error::Config(format!("scan.period_steps [{a}, {b}] is not a range")));
            }
        }
        if let Some(m) = self.scan.max_count {
            if m < 2 || m % 2 != 0 {
                return Err(Error::Config(format!("scan.max_count must be even and >= 2, got {m}")));
            }
        }
        self.rbm_config()?.validate()?;
        Ok(())
    }

    pub fn grid(&self) -> Result<SampleGrid> {
        if self.grid.channel_samples < 2 {
            return Err(Error::Config("grid.channel_samples must be at least 2".into()));
        }
        SampleGrid::new(self.grid.dt, self.grid.channel_samples, 0.0)
    }

    pub fn build_channel(&self) -> Result<TransferFunction> {
        let grid = self.grid()?;
        match &self.channel {
            ChannelConfig::Identity => Ok(TransferFunction::identity(grid.dt, padded_len(grid.n))),
            ChannelConfig::Static {
                level_rad_s,
                duration_s,
            } => synth_static_quadrature(*level_rad_s, *duration_s, &grid),
            ChannelConfig::Ringing {
                amp_rad_s,
                freq_hz,
                decay_s,
            } => synth_ringing_quadrature(*amp_rad_s, *freq_hz, *decay_s, &grid),
            ChannelConfig::Piecewise { levels_rad_s } => synth_piecewise_quadrature(levels_rad_s, &grid),
            ChannelConfig::File { path } => {
                let h = TransferFunction::read_json(path)?;
                if !crate::waveform::same_dt(h.dt(), grid.dt) {
                    return Err(Error::DtMismatch {
                        expected: grid.dt,
                        found: h.dt(),
                    });
                }
                Ok(h)
            }
        }
    }

    /// Scan axes. Without explicit `period_steps` the periods cover both the
    /// default θ(T) range and the rows `w+1..=n` the reconstruction needs.
    pub fn scan_axes(&self) -> Result<(Vec<f64>, Vec<usize>)> {
        let dt = self.grid.dt;
        let (periods, mut counts) = default_axes(self.pulse.t_pw, dt);
        let periods = match self.scan.period_steps {
            Some([a, b]) => (a..=b).map(|m| m as f64 * dt).collect(),
            None => {
                let (n, w) = self.matrix_shape()?;
                let first = periods.first().map_or(w + 1, |t| (t / dt).round() as usize);
                let last = periods.last().map_or(n, |t| (t / dt).round() as usize);
                (first.min(w + 1)..=last.max(n)).map(|m| m as f64 * dt).collect()
            }
        };
        if let Some(max) = self.scan.max_count {
            counts = (1..=max / 2).map(|k| 2 * k).collect();
        }
        Ok((periods, counts))
    }

    /// Matrix size and pulse width in samples. The size defaults to the
    /// last default period.
    pub fn matrix_shape(&self) -> Result<(usize, usize)> {
        let dt = self.grid.dt;
        let n = match self.reconstruct.n {
            Some(n) => n,
            None => {
                let (periods, _) = default_axes(self.pulse.t_pw, dt);
                periods.last().map_or(0, |t| (t / dt).round() as usize)
            }
        };
        let w = self.reconstruct.width.unwrap_or(match self.scan.shape {
            PulseShape::Instantaneous => 0,
            PulseShape::Gaussian => (self.pulse.t_pw / dt).round() as usize,
        });
        if n <= w {
            return Err(Error::Config(format!("reconstruct.n = {n} must exceed the width {w}")));
        }
        Ok((n, w))
    }

    pub fn rbm_config(&self) -> Result<RbmConfig> {
        let t_pw = self.rbm.t_pw.unwrap_or(self.pulse.t_pw);
        let mut cfg = RbmConfig {
            seed: self.seed,
            n_sequences: self.rbm.n_sequences,
            n_randomizations: self.rbm.n_randomizations,
            lengths: (1..=10).map(|k| 1usize << k).collect(),
            t_pw,
            period: self.rbm.period.unwrap_or(3.0 * t_pw),
            decoherence: self.decoherence,
        };
        if let Some(l) = &self.rbm.lengths {
            cfg.lengths = l.clone();
        }
        Ok(cfg)
    }
}
