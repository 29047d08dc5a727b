//! Dense superoperators on column-stacked density matrices.

use crate::error::{Error, Result};
use crate::linalg::{conj, devectorize, kron, vectorize, CMatrix, C64};

#[derive(Debug, Clone, PartialEq)]
pub struct Superoperator {
    qubits: usize,
    matrix: CMatrix,
}

impl Superoperator {
    pub fn new(matrix: CMatrix) -> Result<Self> {
        let n = matrix.nrows();
        if n != matrix.ncols() || n == 0 || !n.is_power_of_two() || n.trailing_zeros() % 2 != 0 {
            return Err(Error::Dimension(format!(
                "superoperator must be 4^n x 4^n, got {:?}",
                matrix.dim()
            )));
        }
        let qubits = (n.trailing_zeros() / 2) as usize;
        Ok(Self { qubits, matrix })
    }

    pub fn identity(qubits: usize) -> Self {
        Self {
            qubits,
            matrix: CMatrix::eye(1 << (2 * qubits)),
        }
    }

    pub fn qubits(&self) -> usize {
        self.qubits
    }

    /// Side length of the density matrices acted on.
    pub fn state_dim(&self) -> usize {
        1 << self.qubits
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.matrix
    }

    pub fn into_matrix(self) -> CMatrix {
        self.matrix
    }

    pub fn apply(&self, rho: &CMatrix) -> Result<CMatrix> {
        if rho.dim() != (self.state_dim(), self.state_dim()) {
            return Err(Error::Dimension(format!(
                "operator of shape {:?} given to a {}-qubit superoperator",
                rho.dim(),
                self.qubits
            )));
        }
        devectorize(&self.matrix.dot(&vectorize(rho)))
    }

    /// `self ∘ first`: apply `first`, then `self`.
    pub fn after(&self, first: &Superoperator) -> Result<Superoperator> {
        if self.qubits != first.qubits {
            return Err(Error::Dimension("composing superoperators of different size".into()));
        }
        Ok(Superoperator {
            qubits: self.qubits,
            matrix: self.matrix.dot(&first.matrix),
        })
    }

    /// Largest trace defect `|Tr Φ(E_ab) − δ_ab|` over matrix units.
    ///
    /// A map is trace preserving iff `vec(I)† S = vec(I)†`.
    pub fn trace_defect(&self) -> f64 {
        let d = self.state_dim();
        let mut worst: f64 = 0.0;
        for col in 0..self.matrix.ncols() {
            let t: C64 = (0..d).map(|i| self.matrix[[i + i * d, col]]).sum();
            let (a, b) = (col % d, col / d);
            let target = if a == b { 1.0 } else { 0.0 };
            worst = worst.max((t - C64::new(target, 0.0)).norm());
        }
        worst
    }

    pub fn is_trace_preserving(&self, tol: f64) -> bool {
        self.trace_defect() < tol
    }
}

/// Superoperator of `ρ ↦ A ρ B†`, which is `conj(B) ⊗ A` on column-stacked vectors.
pub fn sandwich_superop(a: &CMatrix, b: &CMatrix) -> Result<Superoperator> {
    if a.dim() != b.dim() || a.nrows() != a.ncols() {
        return Err(Error::Dimension(format!(
            "sandwich of {:?} and {:?}",
            a.dim(),
            b.dim()
        )));
    }
    Superoperator::new(kron(&conj(b), a))
}

/// Superoperator of `ρ ↦ Σ_k K_k ρ K_k†`.
pub fn kraus_superop(kraus: &[CMatrix]) -> Result<Superoperator> {
    let first = kraus
        .first()
        .ok_or_else(|| Error::InvalidParameter("empty Kraus list".into()))?;
    let mut acc = sandwich_superop(first, first)?.into_matrix();
    for k in &kraus[1..] {
        acc = acc + sandwich_superop(k, k)?.matrix();
    }
    Superoperator::new(acc)
}

/// `Tr(ρ)` of the operator encoded by a column-stacked vector.
pub fn vec_trace(v: &ndarray::Array1<C64>) -> C64 {
    let d = (v.len() as f64).sqrt().round() as usize;
    (0..d).map(|i| v[i + i * d]).sum()
}
