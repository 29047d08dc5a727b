//! Random matrices and states, mainly for property tests.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::density::DensityMatrix;
use crate::linalg::{dagger, trace, CMatrix, C64};

pub fn random_matrix<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> CMatrix {
    CMatrix::from_shape_simple_fn((rows, cols), || {
        let re: f64 = StandardNormal.sample(rng);
        let im: f64 = StandardNormal.sample(rng);
        C64::new(re, im)
    })
}

/// Haar-random unitary via QR of a Ginibre matrix with phase correction.
pub fn random_unitary<R: Rng + ?Sized>(d: usize, rng: &mut R) -> CMatrix {
    use ndarray_linalg::QR;
    let g = random_matrix(d, d, rng);
    let (q, r) = g.qr().expect("QR of a Gaussian matrix");
    let mut q = q;
    for j in 0..d {
        let rjj = r[[j, j]];
        let phase = if rjj.norm() > 0.0 { rjj / rjj.norm() } else { C64::new(1.0, 0.0) };
        q.column_mut(j).mapv_inplace(|z| z * phase);
    }
    q
}

/// Random full-rank mixed state on `qubits` qubits (Ginibre ensemble).
pub fn random_density_matrix<R: Rng + ?Sized>(qubits: usize, rng: &mut R) -> DensityMatrix {
    let d = 1usize << qubits;
    let g = random_matrix(d, d, rng);
    let mut rho = g.dot(&dagger(&g));
    let t = trace(&rho);
    rho.mapv_inplace(|z| z / t);
    let herm = (&rho + &dagger(&rho)) * C64::new(0.5, 0.0);
    DensityMatrix::new(herm).expect("Ginibre state is valid")
}

pub fn random_pure_state<R: Rng + ?Sized>(qubits: usize, rng: &mut R) -> DensityMatrix {
    let d = 1usize << qubits;
    let psi = random_matrix(d, 1, rng);
    DensityMatrix::pure(&psi.column(0).to_vec())
        .expect("nonzero vector")
}
