//! Dense complex linear algebra used throughout the simulator.
//!
//! Conventions fixed for the whole crate:
//!
//! * Tensor products put the left factor's index in the most significant
//!   position, so qubit 0 is the most significant bit of a basis index.
//!   Memory qubits precede readout qubits.
//! * Vectorization stacks columns: `vec(X)[i + j * d] = X[i, j]`, which gives
//!   `vec(A X B) = (Bᵀ ⊗ A) vec(X)`.

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use ndarray_linalg::{Eig, Eigh, Factorize, Solve, SVD, UPLO};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type C64 = Complex64;
pub type CMatrix = Array2<C64>;
pub type CVector = Array1<C64>;

pub const ZERO: C64 = C64::new(0.0, 0.0);
pub const ONE: C64 = C64::new(1.0, 0.0);
pub const I: C64 = C64::new(0.0, 1.0);

pub fn identity(n: usize) -> CMatrix {
    Array2::eye(n)
}

pub fn dagger(a: &CMatrix) -> CMatrix {
    a.t().mapv(|z| z.conj())
}

pub fn conj(a: &CMatrix) -> CMatrix {
    a.mapv(|z| z.conj())
}

pub fn trace(a: &CMatrix) -> C64 {
    a.diag().sum()
}

pub fn frobenius_norm(a: &CMatrix) -> f64 {
    a.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

pub fn frobenius_norm_view(a: ArrayView2<C64>) -> f64 {
    a.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// Induced 1-norm (maximum absolute column sum).
pub fn one_norm(a: &CMatrix) -> f64 {
    a.axis_iter(Axis(1))
        .map(|c| c.iter().map(|z| z.norm()).sum::<f64>())
        .fold(0.0, f64::max)
}

pub fn commutator(a: &CMatrix, b: &CMatrix) -> CMatrix {
    a.dot(b) - b.dot(a)
}

pub fn is_finite(a: &CMatrix) -> bool {
    a.iter().all(|z| z.re.is_finite() && z.im.is_finite())
}

pub fn real_matrix(a: &Array2<f64>) -> CMatrix {
    a.mapv(|x| C64::new(x, 0.0))
}

/// Kronecker product `A ⊗ B`.
pub fn kron(a: &CMatrix, b: &CMatrix) -> CMatrix {
    let (ar, ac) = a.dim();
    let (br, bc) = b.dim();
    let mut out = CMatrix::zeros((ar * br, ac * bc));
    for i in 0..ar {
        for j in 0..ac {
            let aij = a[[i, j]];
            if aij == ZERO {
                continue;
            }
            let mut block = out.slice_mut(s![i * br..(i + 1) * br, j * bc..(j + 1) * bc]);
            block.zip_mut_with(b, |o, &bv| *o = aij * bv);
        }
    }
    out
}

/// Column-stacking vectorization.
pub fn vectorize(a: &CMatrix) -> CVector {
    a.t().iter().copied().collect()
}

pub fn devectorize(v: &CVector) -> Result<CMatrix> {
    let d = (v.len() as f64).sqrt().round() as usize;
    if d * d != v.len() {
        return Err(Error::Dimension(format!(
            "vector of length {} is not a square matrix",
            v.len()
        )));
    }
    Ok(CMatrix::from_shape_fn((d, d), |(i, j)| v[i + j * d]))
}

/// Tr_R of a state over `m + r` qubits with memory qubits most significant.
pub fn partial_trace_readout(rho: &CMatrix, m: usize, r: usize) -> Result<CMatrix> {
    let dm = 1usize << m;
    let dr = 1usize << r;
    if rho.dim() != (dm * dr, dm * dr) {
        return Err(Error::Dimension(format!(
            "state of shape {:?} does not match ({m}+{r}) qubits",
            rho.dim()
        )));
    }
    Ok(CMatrix::from_shape_fn((dm, dm), |(a, b)| {
        (0..dr).map(|k| rho[[a * dr + k, b * dr + k]]).sum()
    }))
}

/// `ρ ⊗ |0⟩⟨0|^{⊗r}`.
pub fn embed_ground_readout(rho_m: &CMatrix, r: usize) -> CMatrix {
    let dm = rho_m.nrows();
    let dr = 1usize << r;
    let mut out = CMatrix::zeros((dm * dr, dm * dr));
    for a in 0..dm {
        for b in 0..dm {
            out[[a * dr, b * dr]] = rho_m[[a, b]];
        }
    }
    out
}

/// Solve `A X = B` for a matrix right-hand side.
pub fn solve_matrix(a: &CMatrix, b: &CMatrix) -> Result<CMatrix> {
    let lu = a
        .factorize()
        .map_err(|e| Error::LinearAlgebra(format!("LU factorization failed: {e}")))?;
    let mut x = CMatrix::zeros(b.dim());
    for (j, col) in b.axis_iter(Axis(1)).enumerate() {
        let sol = lu
            .solve(&col.to_owned())
            .map_err(|e| Error::LinearAlgebra(format!("triangular solve failed: {e}")))?;
        x.column_mut(j).assign(&sol);
    }
    Ok(x)
}

const PADE3: [f64; 4] = [120.0, 60.0, 12.0, 1.0];
const PADE5: [f64; 6] = [30240.0, 15120.0, 3360.0, 420.0, 30.0, 1.0];
const PADE7: [f64; 8] = [
    17297280.0, 8648640.0, 1995840.0, 277200.0, 25200.0, 1512.0, 56.0, 1.0,
];
const PADE9: [f64; 10] = [
    17643225600.0,
    8821612800.0,
    2075673600.0,
    302702400.0,
    30270240.0,
    2162160.0,
    110880.0,
    3960.0,
    90.0,
    1.0,
];
const PADE13: [f64; 14] = [
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
];
const THETA: [(usize, f64); 4] = [
    (3, 1.495585217958292e-2),
    (5, 2.539398330063230e-1),
    (7, 9.504178996162932e-1),
    (9, 2.097847961257068e0),
];
const THETA13: f64 = 5.371920351148152;

fn scaled_identity(n: usize, c: f64) -> CMatrix {
    Array2::from_diag_elem(n, C64::new(c, 0.0))
}

fn pade_low(a: &CMatrix, b: &[f64]) -> (CMatrix, CMatrix) {
    let n = a.nrows();
    let a2 = a.dot(a);
    let mut u = scaled_identity(n, b[1]);
    let mut v = scaled_identity(n, b[0]);
    let mut p = identity(n);
    for k in 1..b.len() / 2 {
        p = p.dot(&a2);
        u = u + &p * C64::new(b[2 * k + 1], 0.0);
        v = v + &p * C64::new(b[2 * k], 0.0);
    }
    (a.dot(&u), v)
}

fn pade13(a: &CMatrix) -> (CMatrix, CMatrix) {
    let n = a.nrows();
    let b = PADE13;
    let c = |x: f64| C64::new(x, 0.0);
    let a2 = a.dot(a);
    let a4 = a2.dot(&a2);
    let a6 = a4.dot(&a2);
    let inner_u = &a6 * c(b[13]) + &a4 * c(b[11]) + &a2 * c(b[9]);
    let u = a.dot(&(a6.dot(&inner_u) + &a6 * c(b[7]) + &a4 * c(b[5]) + &a2 * c(b[3]) + scaled_identity(n, b[1])));
    let inner_v = &a6 * c(b[12]) + &a4 * c(b[10]) + &a2 * c(b[8]);
    let v = a6.dot(&inner_v) + &a6 * c(b[6]) + &a4 * c(b[4]) + &a2 * c(b[2]) + scaled_identity(n, b[0]);
    (u, v)
}

/// Matrix exponential by scaling and squaring with a diagonal Padé approximant.
pub fn expm(a: &CMatrix) -> Result<CMatrix> {
    let n = a.nrows();
    if n != a.ncols() {
        return Err(Error::Dimension(format!("expm of non-square {:?}", a.dim())));
    }
    if !is_finite(a) {
        return Err(Error::NonFinite("matrix exponential argument"));
    }
    if n == 0 {
        return Ok(CMatrix::zeros((0, 0)));
    }
    let norm = one_norm(a);
    for &(m, theta) in THETA.iter() {
        if norm <= theta {
            let b: &[f64] = match m {
                3 => &PADE3,
                5 => &PADE5,
                7 => &PADE7,
                _ => &PADE9,
            };
            let (u, v) = pade_low(a, b);
            return solve_matrix(&(&v - &u), &(&v + &u));
        }
    }
    let squarings = if norm > THETA13 {
        (norm / THETA13).log2().ceil().max(0.0) as i32
    } else {
        0
    };
    let scaled = a * C64::new(2f64.powi(-squarings), 0.0);
    let (u, v) = pade13(&scaled);
    let mut r = solve_matrix(&(&v - &u), &(&v + &u))?;
    for _ in 0..squarings {
        r = r.dot(&r);
    }
    Ok(r)
}

/// Eigenvalues and right eigenvectors, sorted by descending modulus.
#[derive(Debug, Clone)]
pub struct EigenDecomposition {
    pub values: CVector,
    /// Right eigenvectors as unit-norm columns, in the order of `values`.
    pub vectors: CMatrix,
    /// Largest relative residual `‖Av − λv‖ / ‖A‖` over all pairs.
    pub residual: f64,
    /// 2-norm condition number of the eigenvector matrix.
    pub condition: f64,
}

impl EigenDecomposition {
    /// Near-defective matrices have an almost singular eigenvector basis.
    pub fn is_nearly_defective(&self) -> bool {
        !(self.condition < 1e12)
    }
}

fn sort_key(z: C64) -> (i64, i64, i64) {
    let q = |x: f64| (x * 1e10).round() as i64;
    (q(z.norm()), q(z.re), q(z.im))
}

pub fn general_eig(a: &CMatrix) -> Result<EigenDecomposition> {
    let n = a.nrows();
    if n != a.ncols() {
        return Err(Error::Dimension(format!("eig of non-square {:?}", a.dim())));
    }
    if !is_finite(a) {
        return Err(Error::NonFinite("eigenvalue problem"));
    }
    let (vals, vecs) = a
        .eig()
        .map_err(|e| Error::LinearAlgebra(format!("eigenvalue iteration failed: {e}")))?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| sort_key(vals[j]).cmp(&sort_key(vals[i])));

    let values: CVector = order.iter().map(|&i| vals[i]).collect();
    let mut vectors = CMatrix::zeros((n, n));
    for (dst, &src) in order.iter().enumerate() {
        let col = vecs.column(src);
        let norm = col.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        vectors
            .column_mut(dst)
            .assign(&col.mapv(|z| z / C64::new(norm.max(f64::MIN_POSITIVE), 0.0)));
    }

    let scale = frobenius_norm(a).max(f64::MIN_POSITIVE);
    let av = a.dot(&vectors);
    let mut residual: f64 = 0.0;
    for k in 0..n {
        let r = (&av.column(k) - &vectors.column(k).mapv(|z| z * values[k]))
            .iter()
            .map(|z| z.norm_sqr())
            .sum::<f64>()
            .sqrt();
        residual = residual.max(r / scale);
    }
    if residual >= 1e-8 {
        return Err(Error::Defective {
            residual,
            bound: 1e-8,
        });
    }
    let condition = condition_number(&vectors)?;
    Ok(EigenDecomposition {
        values,
        vectors,
        residual,
        condition,
    })
}

pub fn singular_values(a: &CMatrix) -> Result<Array1<f64>> {
    let (_, s, _) = a
        .svd(false, false)
        .map_err(|e| Error::LinearAlgebra(format!("SVD failed: {e}")))?;
    Ok(s)
}

pub fn singular_values_real(a: &Array2<f64>) -> Result<Array1<f64>> {
    let (_, s, _) = a
        .svd(false, false)
        .map_err(|e| Error::LinearAlgebra(format!("SVD failed: {e}")))?;
    Ok(s)
}

pub fn condition_number(a: &CMatrix) -> Result<f64> {
    let s = singular_values(a)?;
    let max = s.iter().copied().fold(0.0, f64::max);
    let min = s.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(if min > 0.0 { max / min } else { f64::INFINITY })
}

/// Eigenvalues of a Hermitian matrix in ascending order.
pub fn hermitian_eigenvalues(a: &CMatrix) -> Result<Array1<f64>> {
    let (vals, _) = a
        .eigh(UPLO::Lower)
        .map_err(|e| Error::LinearAlgebra(format!("Hermitian eigensolver failed: {e}")))?;
    Ok(vals)
}

/// Hermitian eigendecomposition `(values, vectors)`.
pub fn hermitian_eig(a: &CMatrix) -> Result<(Array1<f64>, CMatrix)> {
    a.eigh(UPLO::Lower)
        .map_err(|e| Error::LinearAlgebra(format!("Hermitian eigensolver failed: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::random::{random_matrix, random_unitary};
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn sigma_x() -> CMatrix {
        ndarray::array![[ZERO, ONE], [ONE, ZERO]]
    }

    fn sigma_z() -> CMatrix {
        ndarray::array![[ONE, ZERO], [ZERO, -ONE]]
    }

    fn max_abs_diff(a: &CMatrix, b: &CMatrix) -> f64 {
        (a - b).iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    #[test]
    fn kron_of_identities_and_pauli_z() {
        assert_eq!(kron(&identity(2), &identity(2)), identity(4));
        let zi = kron(&sigma_z(), &identity(2));
        let expected = Array2::from_diag(&ndarray::array![ONE, ONE, -ONE, -ONE]);
        assert_eq!(zi, expected);
    }

    #[test]
    fn kron_mixed_product_with_vectors() {
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let a = random_matrix(2, 2, &mut rng);
        let b = random_matrix(2, 2, &mut rng);
        let x = random_matrix(2, 1, &mut rng);
        let y = random_matrix(2, 1, &mut rng);
        let lhs = kron(&a, &b).dot(&kron(&x, &y));
        let rhs = kron(&a.dot(&x), &b.dot(&y));
        assert!(max_abs_diff(&lhs, &rhs) < 1e-13);
    }

    #[test]
    fn vectorize_is_column_stacking() {
        assert_eq!(vectorize(&identity(2)).to_vec(), vec![ONE, ZERO, ZERO, ONE]);
        let m = ndarray::array![[ONE, I], [C64::new(2.0, 0.0), ZERO]];
        assert_eq!(vectorize(&m).to_vec(), vec![ONE, C64::new(2.0, 0.0), I, ZERO]);
        assert!(devectorize(&CVector::zeros(5)).is_err());
    }

    #[test]
    fn vectorization_identity() {
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        for _ in 0..10 {
            let a = random_matrix(2, 2, &mut rng);
            let b = random_matrix(2, 2, &mut rng);
            let rho = random_matrix(2, 2, &mut rng);
            let lhs = vectorize(&a.dot(&rho).dot(&b));
            let rhs = kron(&b.t().to_owned(), &a).dot(&vectorize(&rho));
            let err = (&lhs - &rhs).iter().map(|z| z.norm()).fold(0.0, f64::max);
            assert!(err < 1e-12, "{err}");
        }
    }

    #[test]
    fn partial_trace_of_bell_state() {
        let h = 0.5;
        let mut bell = CMatrix::zeros((4, 4));
        for &(i, j) in &[(0, 0), (0, 3), (3, 0), (3, 3)] {
            bell[[i, j]] = C64::new(h, 0.0);
        }
        let reduced = partial_trace_readout(&bell, 1, 1).unwrap();
        assert!(max_abs_diff(&reduced, &(identity(2) * C64::new(0.5, 0.0))) < 1e-15);
        assert!(partial_trace_readout(&bell, 2, 1).is_err());
    }

    #[test]
    fn partial_trace_matches_index_contraction() {
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let rho = crate::random::random_density_matrix(3, &mut rng);
        let reduced = partial_trace_readout(rho.matrix(), 1, 2).unwrap();
        // Σ_b (I ⊗ ⟨b|) ρ (I ⊗ |b⟩) with explicit basis vectors.
        let mut oracle = CMatrix::zeros((2, 2));
        for b in 0..4 {
            let mut ket = CMatrix::zeros((4, 1));
            ket[[b, 0]] = ONE;
            let proj = kron(&identity(2), &ket);
            oracle = oracle + dagger(&proj).dot(rho.matrix()).dot(&proj);
        }
        assert!(max_abs_diff(&reduced, &oracle) < 1e-12);
    }

    #[test]
    fn expm_of_zero_and_rotation() {
        assert!(max_abs_diff(&expm(&CMatrix::zeros((3, 3))).unwrap(), &identity(3)) < 1e-15);
        let arg = sigma_x() * C64::new(0.0, -std::f64::consts::FRAC_PI_2);
        let e = expm(&arg).unwrap();
        assert!(max_abs_diff(&e, &(sigma_x() * C64::new(0.0, -1.0))) < 1e-14);
        let mut bad = identity(2);
        bad[[0, 1]] = C64::new(f64::NAN, 0.0);
        assert!(matches!(expm(&bad), Err(Error::NonFinite(_))));
    }

    fn taylor_oracle(a: &CMatrix, order: usize) -> CMatrix {
        let mut term = identity(a.nrows());
        let mut sum = term.clone();
        for k in 1..=order {
            term = term.dot(a) / C64::new(k as f64, 0.0);
            sum = sum + &term;
        }
        sum
    }

    #[test]
    fn expm_anti_hermitian_is_unitary_and_matches_taylor() {
        let mut rng = ChaCha20Rng::seed_from_u64(4);
        let g = random_matrix(16, 16, &mut rng);
        // Scale so that the order-30 Taylor series has converged to machine precision.
        let a = (&g - &dagger(&g)) * C64::new(0.05, 0.0);
        let e = expm(&a).unwrap();
        let unitarity = max_abs_diff(&dagger(&e).dot(&e), &identity(16));
        assert!(unitarity < 1e-11, "{unitarity}");
        let oracle = taylor_oracle(&a, 30);
        assert!(max_abs_diff(&e, &oracle) < 1e-12);
    }

    #[test]
    fn expm_large_norm_uses_squaring() {
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        let g = random_matrix(8, 8, &mut rng);
        let a = (&g - &dagger(&g)) * C64::new(4.0, 0.0);
        let e = expm(&a).unwrap();
        assert!(max_abs_diff(&dagger(&e).dot(&e), &identity(8)) < 1e-11);
        // exp(A) = exp(A/4)^4
        let q = expm(&(&a * C64::new(0.25, 0.0))).unwrap();
        let q4 = q.dot(&q).dot(&q).dot(&q);
        assert!(max_abs_diff(&e, &q4) < 1e-10);
    }

    #[test]
    fn expm_commuting_sum() {
        let mut rng = ChaCha20Rng::seed_from_u64(6);
        let u = random_unitary(4, &mut rng);
        let d1 = Array2::from_diag(&ndarray::array![I, -I * 2.0, ONE, ZERO]);
        let d2 = Array2::from_diag(&ndarray::array![ONE * 0.3, I, -ONE, I * 0.5]);
        let a = u.dot(&d1).dot(&dagger(&u));
        let b = u.dot(&d2).dot(&dagger(&u));
        let lhs = expm(&(&a + &b)).unwrap();
        let rhs = expm(&a).unwrap().dot(&expm(&b).unwrap());
        assert!(max_abs_diff(&lhs, &rhs) < 1e-10);
    }

    #[test]
    fn eig_sorted_descending_modulus() {
        let d = Array2::from_diag(&ndarray::array![ONE * 0.1, ONE, ONE * 0.5]);
        let e = general_eig(&d).unwrap();
        let re: Vec<f64> = e.values.iter().map(|z| z.re).collect();
        assert!((re[0] - 1.0).abs() < 1e-14 && (re[1] - 0.5).abs() < 1e-14 && (re[2] - 0.1).abs() < 1e-14);

        let e = general_eig(&sigma_x()).unwrap();
        assert!((e.values[0].re - 1.0).abs() < 1e-14);
        assert!((e.values[1].re + 1.0).abs() < 1e-14);
    }

    #[test]
    fn eig_trace_identity_on_channel_like_map() {
        let mut rng = ChaCha20Rng::seed_from_u64(7);
        let a = random_matrix(16, 16, &mut rng) * C64::new(0.2, 0.0);
        let e = general_eig(&a).unwrap();
        let sum: C64 = e.values.sum();
        assert!((sum - trace(&a)).norm() < 1e-9);
        for k in 1..16 {
            assert!(e.values[k - 1].norm() + 1e-12 >= e.values[k].norm());
        }
    }

    #[test]
    fn eig_flags_defective_jordan_block() {
        let jordan = ndarray::array![[ONE, ONE], [ZERO, ONE]];
        match general_eig(&jordan) {
            Ok(e) => assert!(e.is_nearly_defective()),
            Err(Error::Defective { .. }) => {}
            Err(other) => panic!("unexpected {other}"),
        }
    }
}
