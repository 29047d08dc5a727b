use std::fmt;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{dagger, frobenius_norm, hermitian_eigenvalues, trace, CMatrix, C64};

pub const HERMITICITY_TOL: f64 = 1e-10;
pub const TRACE_TOL: f64 = 1e-10;
pub const POSITIVITY_TOL: f64 = -1e-9;

/// Defects measured by [`diagnose`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Diagnostics {
    /// `‖ρ − ρ†‖_F`
    pub hermiticity_defect: f64,
    /// `|Tr ρ − 1|`
    pub trace_defect: f64,
    pub min_eigenvalue: f64,
}

impl Diagnostics {
    pub fn is_valid(&self) -> bool {
        self.hermiticity_defect < HERMITICITY_TOL
            && self.trace_defect < TRACE_TOL
            && self.min_eigenvalue >= POSITIVITY_TOL
    }
}

impl fmt::Display for Diagnostics {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "hermiticity defect {:.3e}, trace defect {:.3e}, min eigenvalue {:.3e}",
            self.hermiticity_defect, self.trace_defect, self.min_eigenvalue
        )
    }
}

pub fn diagnose(rho: &CMatrix) -> Result<Diagnostics> {
    let (r, c) = rho.dim();
    if r != c || r == 0 || !r.is_power_of_two() {
        return Err(Error::Dimension(format!(
            "density matrix must be 2^n x 2^n, got {r}x{c}"
        )));
    }
    if !crate::linalg::is_finite(rho) {
        return Err(Error::NonFinite("density matrix"));
    }
    let hermiticity_defect = frobenius_norm(&(rho - &dagger(rho)));
    let t = trace(rho);
    let trace_defect = (t - C64::new(1.0, 0.0)).norm();
    let herm = (rho + &dagger(rho)) * C64::new(0.5, 0.0);
    let vals = hermitian_eigenvalues(&herm)?;
    let min_eigenvalue = vals.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(Diagnostics {
        hermiticity_defect,
        trace_defect,
        min_eigenvalue,
    })
}

/// A validated quantum state on `n` qubits.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix {
    rho: CMatrix,
    qubits: usize,
}

impl DensityMatrix {
    /// Validates `rho`; `step` is reported in the error when the check fails.
    pub fn new_at_step(rho: CMatrix, step: usize) -> Result<Self> {
        let d = diagnose(&rho)?;
        if !d.is_valid() {
            return Err(Error::InvalidState {
                step,
                diagnostics: d,
            });
        }
        let qubits = rho.nrows().trailing_zeros() as usize;
        Ok(Self { rho, qubits })
    }

    pub fn new(rho: CMatrix) -> Result<Self> {
        Self::new_at_step(rho, 0)
    }

    /// `|0…0⟩⟨0…0|`
    pub fn ground(qubits: usize) -> Self {
        let d = 1usize << qubits;
        let mut rho = CMatrix::zeros((d, d));
        rho[[0, 0]] = C64::new(1.0, 0.0);
        Self { rho, qubits }
    }

    pub fn maximally_mixed(qubits: usize) -> Self {
        let d = 1usize << qubits;
        Self {
            rho: CMatrix::eye(d) / C64::new(d as f64, 0.0),
            qubits,
        }
    }

    /// Pure state from an (unnormalized) amplitude vector.
    pub fn pure(psi: &[C64]) -> Result<Self> {
        let norm: f64 = psi.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if norm == 0.0 || !norm.is_finite() {
            return Err(Error::InvalidParameter("pure state has zero norm".into()));
        }
        let d = psi.len();
        let rho = CMatrix::from_shape_fn((d, d), |(i, j)| psi[i] * psi[j].conj() / (norm * norm));
        Self::new(rho)
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.rho
    }

    pub fn into_matrix(self) -> CMatrix {
        self.rho
    }

    pub fn qubits(&self) -> usize {
        self.qubits
    }

    pub fn dim(&self) -> usize {
        self.rho.nrows()
    }

    pub fn diagnostics(&self) -> Diagnostics {
        diagnose(&self.rho).expect("validated at construction")
    }
}
