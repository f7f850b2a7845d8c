// Copyright 2026 Pulsecal Contributors
// SPDX-License-Identifier: Apache-2.0

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("grid too coarse: pulse width {t_pw:e} s is below two samples of {dt:e} s")]
    GridTooCoarse { t_pw: f64, dt: f64 },

    #[error("sequence overflow: needs {needed} samples, grid has {available}")]
    SequenceOverflow { needed: usize, available: usize },

    #[error("sample spacing mismatch: expected {expected:e} s, found {found:e} s")]
    DtMismatch { expected: f64, found: f64 },

    #[error("length mismatch: {0}")]
    LengthMismatch(String),

    #[error("transfer function has no non-zero bins")]
    AllZeroBins,

    #[error("probe pulse has zero amplitude")]
    ZeroProbe,

    #[error("carrier {f_mw:e} Hz is not resolvable at {sample_rate:e} S/s")]
    CarrierUndersampled { sample_rate: f64, f_mw: f64 },

    #[error("matrix is singular: {0}")]
    SingularMatrix(String),

    #[error("fit failed: {0}")]
    FitFailed(String),

    #[error("did not converge: {0}")]
    NonConvergence(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: u64,
        message: String,
    },

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Coarse classification used for process exit codes and the C ABI.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Input,
    Consistency,
    Numerical,
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::DtMismatch { .. } | Error::LengthMismatch(_) => ErrorClass::Consistency,
            Error::AllZeroBins
            | Error::SingularMatrix(_)
            | Error::FitFailed(_)
            | Error::NonConvergence(_) => ErrorClass::Numerical,
            _ => ErrorClass::Input,
        }
    }

    /// 2 input error, 3 consistency error, 4 numerical failure.
    pub fn exit_code(&self) -> i32 {
        match self.class() {
            ErrorClass::Input => 2,
            ErrorClass::Consistency => 3,
            ErrorClass::Numerical => 4,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidGrid(_) => "invalid_grid",
            Error::GridTooCoarse { .. } => "grid_too_coarse",
            Error::SequenceOverflow { .. } => "sequence_overflow",
            Error::DtMismatch { .. } => "dt_mismatch",
            Error::LengthMismatch(_) => "length_mismatch",
            Error::AllZeroBins => "all_zero_bins",
            Error::ZeroProbe => "zero_probe",
            Error::CarrierUndersampled { .. } => "carrier_undersampled",
            Error::SingularMatrix(_) => "singular_matrix",
            Error::FitFailed(_) => "fit_failed",
            Error::NonConvergence(_) => "non_convergence",
            Error::InvalidInput(_) => "invalid_input",
            Error::Parse { .. } => "parse",
            Error::Config(_) => "config",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
        }
    }
}
