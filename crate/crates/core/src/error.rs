use thiserror::Error;

use crate::density::Diagnostics;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("non-finite entry in {0}")]
    NonFinite(&'static str),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("linear algebra failure: {0}")]
    LinearAlgebra(String),

    #[error("eigendecomposition residual {residual:.3e} exceeds {bound:.3e}; matrix is likely defective")]
    Defective { residual: f64, bound: f64 },

    #[error("leading eigenvalue {0} differs from 1 beyond tolerance")]
    NotTracePreserving(String),

    #[error("peripheral spectrum is degenerate (|lambda_2| = {lambda2_abs}); fixed point is not unique")]
    DegenerateSpectrum { lambda2_abs: f64 },

    #[error("eigenbasis condition number {0:.3e} exceeds 1e10")]
    IllConditioned(f64),

    #[error("u-expansion residual {residual:.3e} above tolerance {tolerance:.1e}; raise k_max (currently {k_max})")]
    ExpansionResidual {
        residual: f64,
        tolerance: f64,
        k_max: usize,
    },

    #[error("invalid density matrix at step {step}: {diagnostics}")]
    InvalidState { step: usize, diagnostics: Diagnostics },

    #[error("optimizer did not converge: {0}")]
    NoConvergence(String),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization: {0}")]
    Serde(#[from] serde_json::Error),
}

impl Error {
    /// Short machine-readable tag for error records.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Dimension(_) => "dimension",
            Error::NonFinite(_) => "non_finite",
            Error::InvalidParameter(_) => "invalid_parameter",
            Error::LinearAlgebra(_) => "linear_algebra",
            Error::Defective { .. } => "defective",
            Error::NotTracePreserving(_) => "not_trace_preserving",
            Error::DegenerateSpectrum { .. } => "degenerate_spectrum",
            Error::IllConditioned(_) => "ill_conditioned",
            Error::ExpansionResidual { .. } => "expansion_residual",
            Error::InvalidState { .. } => "invalid_state",
            Error::NoConvergence(_) => "no_convergence",
            Error::Io(_) => "io",
            Error::Serde(_) => "serialization",
        }
    }
}
