//! Input-dependent encoding channels, measurement, and reset.
//!
//! Qubit `i` of an `L`-qubit register sits at bit `L − 1 − i` of a basis index.
//! Memory qubits are `0..M`, readout qubits `M..M+R`.

use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{
    dagger, hermitian_eig, identity, kron, one_norm, CMatrix, C64, I, ONE, ZERO,
};
use crate::superop::{sandwich_superop, Superoperator};

fn bit(qubits: usize, i: usize) -> usize {
    1 << (qubits - 1 - i)
}

fn z_sign(index: usize, mask: usize) -> f64 {
    if index & mask == 0 {
        1.0
    } else {
        -1.0
    }
}

/// Coupling graph over `L` qubits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Connectivity {
    AllToAll,
    Chain,
    /// All-to-all inside each block, no couplings between blocks.
    Blocks(Vec<Vec<usize>>),
}

impl Connectivity {
    /// Two disjoint all-to-all blocks, each holding half the memory and half
    /// the readout qubits: `{m_0.., r_0..}` and `{m_{M/2}.., r_{R/2}..}`.
    pub fn split(memory: usize, readout: usize) -> Self {
        let (m_half, r_half) = (memory / 2, readout / 2);
        let first: Vec<usize> = (0..m_half).chain(memory..memory + r_half).collect();
        let second: Vec<usize> = (m_half..memory)
            .chain(memory + r_half..memory + readout)
            .collect();
        Connectivity::Blocks(vec![first, second])
    }

    pub fn edges(&self, qubits: usize) -> Vec<(usize, usize)> {
        match self {
            Connectivity::AllToAll => (0..qubits)
                .flat_map(|i| (i + 1..qubits).map(move |j| (i, j)))
                .collect(),
            Connectivity::Chain => (1..qubits).map(|i| (i - 1, i)).collect(),
            Connectivity::Blocks(blocks) => {
                let mut edges = Vec::new();
                for block in blocks {
                    let mut b = block.clone();
                    b.sort_unstable();
                    for (x, &i) in b.iter().enumerate() {
                        for &j in &b[x + 1..] {
                            edges.push((i, j));
                        }
                    }
                }
                edges.sort_unstable();
                edges
            }
        }
    }
}

/// Distribution of the Ising parameters, in units of `1/τ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IsingHyperparameters {
    pub j_max: f64,
    pub eta_x: f64,
    pub eps_x_rms: f64,
    pub eta_z: f64,
    pub eps_z_rms: f64,
}

impl Default for IsingHyperparameters {
    fn default() -> Self {
        Self {
            j_max: 1.0,
            eta_x: 2.0,
            eps_x_rms: 2.0,
            eta_z: 0.5,
            eps_z_rms: 0.5,
        }
    }
}

/// `H0 = Σ J_{ii'} σ^z_i σ^z_{i'} + Σ η^x_i σ^x_i`, `H1 = Σ η^z_i σ^z_i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IsingAnsatz {
    pub qubits: usize,
    pub couplings: Vec<(usize, usize, f64)>,
    pub eta_x: Vec<f64>,
    pub eta_z: Vec<f64>,
}

impl IsingAnsatz {
    /// Draws couplings in edge order, then `ε^x` per qubit, then `ε^z` per qubit.
    pub fn draw<R: Rng + ?Sized>(
        qubits: usize,
        edges: &[(usize, usize)],
        hyper: &IsingHyperparameters,
        rng: &mut R,
    ) -> Result<Self> {
        if hyper.j_max < 0.0 || hyper.eps_x_rms < 0.0 || hyper.eps_z_rms < 0.0 {
            return Err(Error::InvalidParameter(
                "j_max and noise amplitudes must be non-negative".into(),
            ));
        }
        let unif = Uniform::new_inclusive(0.0, hyper.j_max)
            .map_err(|e| Error::InvalidParameter(format!("j_max: {e}")))?;
        let couplings = edges
            .iter()
            .map(|&(i, j)| (i, j, unif.sample(rng)))
            .collect();
        let mut normal = |rms: f64| -> f64 {
            let z: f64 = StandardNormal.sample(rng);
            rms * z
        };
        let eta_x = (0..qubits).map(|_| hyper.eta_x + normal(hyper.eps_x_rms)).collect();
        let eta_z = (0..qubits).map(|_| hyper.eta_z + normal(hyper.eps_z_rms)).collect();
        let a = Self {
            qubits,
            couplings,
            eta_x,
            eta_z,
        };
        a.check()?;
        Ok(a)
    }

    /// Same value for every coupling and field.
    pub fn uniform(qubits: usize, edges: &[(usize, usize)], j: f64, eta_x: f64, eta_z: f64) -> Self {
        Self {
            qubits,
            couplings: edges.iter().map(|&(a, b)| (a, b, j)).collect(),
            eta_x: vec![eta_x; qubits],
            eta_z: vec![eta_z; qubits],
        }
    }

    fn check(&self) -> Result<()> {
        if self.qubits == 0 || self.eta_x.len() != self.qubits || self.eta_z.len() != self.qubits {
            return Err(Error::InvalidParameter("field vectors must have one entry per qubit".into()));
        }
        for &(i, j, _) in &self.couplings {
            if i >= self.qubits || j >= self.qubits || i == j {
                return Err(Error::InvalidParameter(format!(
                    "invalid edge ({i}, {j}) for {} qubits",
                    self.qubits
                )));
            }
        }
        Ok(())
    }
}

pub fn build_ising_hamiltonians(a: &IsingAnsatz) -> Result<(CMatrix, CMatrix)> {
    a.check()?;
    let l = a.qubits;
    let d = 1usize << l;
    let mut h0 = CMatrix::zeros((d, d));
    let mut h1 = CMatrix::zeros((d, d));
    for idx in 0..d {
        let mut diag0 = 0.0;
        for &(i, j, jij) in &a.couplings {
            diag0 += jij * z_sign(idx, bit(l, i)) * z_sign(idx, bit(l, j));
        }
        h0[[idx, idx]] = C64::new(diag0, 0.0);
        let diag1: f64 = (0..l).map(|i| a.eta_z[i] * z_sign(idx, bit(l, i))).sum();
        h1[[idx, idx]] = C64::new(diag1, 0.0);
        for i in 0..l {
            h0[[idx ^ bit(l, i), idx]] += C64::new(a.eta_x[i], 0.0);
        }
    }
    Ok((h0, h1))
}

/// Per-qubit damping (`γ_i = 1/T1_i`) and pure-dephasing rates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dissipation {
    pub gamma: Vec<f64>,
    pub gamma_phi: Vec<f64>,
}

impl Dissipation {
    pub fn none(qubits: usize) -> Self {
        Self {
            gamma: vec![0.0; qubits],
            gamma_phi: vec![0.0; qubits],
        }
    }

    /// Uniform `T1` on every qubit; `f64::INFINITY` means lossless.
    pub fn from_t1(qubits: usize, t1: f64) -> Result<Self> {
        Self::from_t1_t2(qubits, t1, f64::INFINITY)
    }

    /// `γ = 1/T1` and `γ^φ = (1/T2 − 1/(2 T1))/2`, since `D[σ^z]` dephases
    /// coherences at rate `2γ^φ`. An infinite `T2` means no pure dephasing.
    pub fn from_t1_t2(qubits: usize, t1: f64, t2: f64) -> Result<Self> {
        if !(t1 > 0.0) || !(t2 > 0.0) {
            return Err(Error::InvalidParameter("T1 and T2 must be positive".into()));
        }
        let gamma = 1.0 / t1;
        let gamma_phi = if t2.is_infinite() {
            0.0
        } else {
            let g = (1.0 / t2 - 0.5 * gamma) / 2.0;
            if g < -1e-15 {
                return Err(Error::InvalidParameter(format!(
                    "T2 = {t2} exceeds 2 T1 = {}",
                    2.0 * t1
                )));
            }
            g.max(0.0)
        };
        let d = Self {
            gamma: vec![gamma; qubits],
            gamma_phi: vec![gamma_phi; qubits],
        };
        d.check(qubits)?;
        Ok(d)
    }

    /// Per-qubit `T1` and `T2`, converted as in [`Dissipation::from_t1_t2`].
    pub fn per_qubit(t1: &[f64], t2: &[f64]) -> Result<Self> {
        if t1.len() != t2.len() {
            return Err(Error::Dimension(format!("{} T1 values but {} T2 values", t1.len(), t2.len())));
        }
        let mut d = Self::none(t1.len());
        for (q, (&a, &b)) in t1.iter().zip(t2).enumerate() {
            let single = Self::from_t1_t2(1, a, b)?;
            d.gamma[q] = single.gamma[0];
            d.gamma_phi[q] = single.gamma_phi[0];
        }
        Ok(d)
    }

    pub fn is_lossless(&self) -> bool {
        self.gamma.iter().chain(&self.gamma_phi).all(|&g| g == 0.0)
    }

    pub fn check(&self, qubits: usize) -> Result<()> {
        if self.gamma.len() != qubits || self.gamma_phi.len() != qubits {
            return Err(Error::InvalidParameter(format!(
                "dissipation rates must have {qubits} entries"
            )));
        }
        if self
            .gamma
            .iter()
            .chain(&self.gamma_phi)
            .any(|&g| !(g >= 0.0) || !g.is_finite())
        {
            return Err(Error::InvalidParameter("rates must be finite and non-negative".into()));
        }
        Ok(())
    }
}

fn single(q: usize, l: usize, op: &CMatrix) -> CMatrix {
    let mut out = identity(1);
    for i in 0..l {
        out = if i == q { kron(&out, op) } else { kron(&out, &identity(2)) };
    }
    out
}

pub fn sigma_minus() -> CMatrix {
    ndarray::array![[ZERO, ONE], [ZERO, ZERO]]
}

pub fn sigma_z() -> CMatrix {
    ndarray::array![[ONE, ZERO], [ZERO, -ONE]]
}

pub fn sigma_x() -> CMatrix {
    ndarray::array![[ZERO, ONE], [ONE, ZERO]]
}

fn check_hamiltonian(h: &CMatrix, name: &str) -> Result<()> {
    if h.nrows() != h.ncols() || !h.nrows().is_power_of_two() {
        return Err(Error::Dimension(format!("{name} must be 2^L x 2^L")));
    }
    let defect = crate::linalg::frobenius_norm(&(h - &dagger(h)));
    if defect > 1e-10 * (1.0 + crate::linalg::frobenius_norm(h)) {
        return Err(Error::InvalidParameter(format!("{name} is not Hermitian")));
    }
    Ok(())
}

/// Dense Liouvillian `L(u)` on column-stacked vectors.
pub fn build_liouvillian(h0: &CMatrix, h1: &CMatrix, u: f64, diss: &Dissipation) -> Result<Superoperator> {
    check_hamiltonian(h0, "H0")?;
    check_hamiltonian(h1, "H1")?;
    if h0.dim() != h1.dim() {
        return Err(Error::Dimension("H0 and H1 differ in size".into()));
    }
    let d = h0.nrows();
    let l = d.trailing_zeros() as usize;
    diss.check(l)?;
    let h = h0 + &(h1 * C64::new(u, 0.0));
    let id = identity(d);
    let mut gen = (kron(&id, &h) - kron(&h.t().to_owned(), &id)) * (-I);
    let sm = sigma_minus();
    let sz = sigma_z();
    for q in 0..l {
        if diss.gamma[q] > 0.0 {
            let a = single(q, l, &sm);
            gen = gen + dissipator(&a) * C64::new(diss.gamma[q], 0.0);
        }
        if diss.gamma_phi[q] > 0.0 {
            let a = single(q, l, &sz);
            gen = gen + dissipator(&a) * C64::new(diss.gamma_phi[q], 0.0);
        }
    }
    Superoperator::new(gen)
}

/// `D[A]ρ = AρA† − ½{A†A, ρ}` as a dense superoperator.
pub fn dissipator(a: &CMatrix) -> CMatrix {
    let d = a.nrows();
    let id = identity(d);
    let ada = dagger(a).dot(a);
    kron(&a.mapv(|z| z.conj()), a)
        - (kron(&id, &ada) + kron(&ada.t().to_owned(), &id)) * C64::new(0.5, 0.0)
}

/// `exp(τ L(u))` as a dense superoperator.
pub fn hamiltonian_channel(
    h0: &CMatrix,
    h1: &CMatrix,
    u: f64,
    diss: &Dissipation,
    tau: f64,
) -> Result<Superoperator> {
    if !(tau >= 0.0) {
        return Err(Error::InvalidParameter("tau must be non-negative".into()));
    }
    let gen = build_liouvillian(h0, h1, u, diss)?;
    Superoperator::new(crate::linalg::expm(&(gen.matrix() * C64::new(tau, 0.0)))?)
}

/// Trotterized circuit angles, drawn once and fixed for all inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CircuitAnsatz {
    pub qubits: usize,
    pub theta_x: Vec<f64>,
    pub theta_z: Vec<f64>,
    pub theta_i: Vec<f64>,
    pub coupling: f64,
    pub trotter: usize,
    pub tau: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CircuitHyperparameters {
    /// `θ_min` for the x, z and input angles.
    pub theta_min: [f64; 3],
    pub delta_theta: [f64; 3],
    pub coupling: f64,
    pub trotter: usize,
}

impl Default for CircuitHyperparameters {
    fn default() -> Self {
        Self {
            theta_min: [1.0, 0.5, 0.1],
            delta_theta: [1.0, 0.5, 0.1],
            coupling: 1.0,
            trotter: 3,
        }
    }
}

impl CircuitAnsatz {
    /// Angles from `Unif[a, a + δ]` with `a = (τ/n_T) θ_min`, `δ = (τ/n_T) Δθ`;
    /// all `θ^x`, then all `θ^z`, then all `θ^I`.
    pub fn draw<R: Rng + ?Sized>(
        qubits: usize,
        hyper: &CircuitHyperparameters,
        tau: f64,
        rng: &mut R,
    ) -> Result<Self> {
        if hyper.trotter == 0 || qubits == 0 {
            return Err(Error::InvalidParameter("need at least one qubit and one Trotter step".into()));
        }
        let scale = tau / hyper.trotter as f64;
        let mut draw = |k: usize| -> Result<Vec<f64>> {
            let a = scale * hyper.theta_min[k];
            let b = a + scale * hyper.delta_theta[k];
            let dist = Uniform::new_inclusive(a, b)
                .map_err(|e| Error::InvalidParameter(format!("angle range: {e}")))?;
            Ok((0..qubits).map(|_| dist.sample(rng)).collect())
        };
        let theta_x = draw(0)?;
        let theta_z = draw(1)?;
        let theta_i = draw(2)?;
        Ok(Self {
            qubits,
            theta_x,
            theta_z,
            theta_i,
            coupling: hyper.coupling,
            trotter: hyper.trotter,
            tau,
        })
    }
}

/// `R_x(θ) = exp(−iθσ^x/2)`.
fn rx(theta: f64) -> CMatrix {
    let (c, s) = ((theta / 2.0).cos(), (theta / 2.0).sin());
    ndarray::array![[C64::new(c, 0.0), C64::new(0.0, -s)], [C64::new(0.0, -s), C64::new(c, 0.0)]]
}

/// `(W(J) R_z(θ^z + θ^I u) R_x(θ^x))^{n_T}` on a linear chain.
pub fn build_circuit_unitary(a: &CircuitAnsatz, u: f64) -> Result<CMatrix> {
    let l = a.qubits;
    if a.theta_x.len() != l || a.theta_z.len() != l || a.theta_i.len() != l || a.trotter == 0 {
        return Err(Error::Dimension("circuit angle vectors must have one entry per qubit".into()));
    }
    let d = 1usize << l;
    let mut rx_all = identity(1);
    for &t in &a.theta_x {
        rx_all = kron(&rx_all, &rx(t));
    }
    let phase_step = a.coupling * a.tau / a.trotter as f64;
    let diag: Vec<C64> = (0..d)
        .map(|idx| {
            let mut phase = 0.0;
            for i in 0..l {
                // R_z(φ) = exp(−iφσ^z/2)
                let phi = a.theta_z[i] + a.theta_i[i] * u;
                phase += -0.5 * phi * z_sign(idx, bit(l, i));
            }
            for i in 1..l {
                phase += -phase_step * z_sign(idx, bit(l, i - 1)) * z_sign(idx, bit(l, i));
            }
            C64::from_polar(1.0, phase)
        })
        .collect();
    let mut layer = rx_all;
    for (r, mut row) in layer.rows_mut().into_iter().enumerate() {
        row.mapv_inplace(|z| z * diag[r]);
    }
    let mut out = layer.clone();
    for _ in 1..a.trotter {
        out = layer.dot(&out);
    }
    Ok(out)
}

/// `ρ ↦ Tr_R(ρ) ⊗ |0⟩⟨0|^{⊗R}` on the full register.
pub fn measure_reset_channel(memory: usize, readout: usize) -> Superoperator {
    let dr = 1usize << readout;
    let d = (1usize << memory) * dr;
    let mut s = CMatrix::zeros((d * d, d * d));
    for a in 0..(1usize << memory) {
        for b in 0..(1usize << memory) {
            let out = a * dr + b * dr * d;
            for k in 0..dr {
                let input = (a * dr + k) + (b * dr + k) * d;
                s[[out, input]] = ONE;
            }
        }
    }
    Superoperator::new(s).expect("square power-of-four matrix")
}

/// Elementwise mask keeping entries whose readout bit strings agree.
pub fn no_reset_mask(memory: usize, readout: usize) -> ndarray::Array2<f64> {
    let dr = 1usize << readout;
    let d = (1usize << memory) * dr;
    ndarray::Array2::from_shape_fn((d, d), |(i, j)| if i % dr == j % dr { 1.0 } else { 0.0 })
}

/// Measurement-induced decoherence without reset, as a diagonal superoperator.
pub fn no_reset_measurement_superop(memory: usize, readout: usize) -> Superoperator {
    let mask = no_reset_mask(memory, readout);
    let d = mask.nrows();
    let mut s = CMatrix::zeros((d * d, d * d));
    for j in 0..d {
        for i in 0..d {
            s[[i + j * d, i + j * d]] = C64::new(mask[[i, j]], 0.0);
        }
    }
    Superoperator::new(s).expect("square power-of-four matrix")
}

/// `M_j = I^{⊗M} ⊗ |b_j⟩⟨b_j|` for `j = 0 … 2^R − 1`.
pub fn povm_operators(memory: usize, readout: usize) -> Vec<CMatrix> {
    let dr = 1usize << readout;
    let d = (1usize << memory) * dr;
    (0..dr)
        .map(|j| {
            let mut m = CMatrix::zeros((d, d));
            for a in 0..(1usize << memory) {
                m[[a * dr + j, a * dr + j]] = ONE;
            }
            m
        })
        .collect()
}

/// Probabilities `Tr(M_j X)` read off the diagonal.
pub fn povm_probabilities(x: &CMatrix, readout: usize) -> Vec<C64> {
    let dr = 1usize << readout;
    let mut p = vec![ZERO; dr];
    for i in 0..x.nrows() {
        p[i % dr] += x[[i, i]];
    }
    p
}

/// Lindblad generator in effective-Hamiltonian form, applied without
/// building the dense superoperator.
#[derive(Debug, Clone)]
pub struct LindbladAction {
    qubits: usize,
    heff: CMatrix,
    heff_dag: CMatrix,
    gamma: Vec<f64>,
    gamma_phi: Vec<f64>,
    tau: f64,
    substeps: usize,
}

impl LindbladAction {
    pub fn new(h: &CMatrix, diss: &Dissipation, tau: f64) -> Result<Self> {
        let d = h.nrows();
        let l = d.trailing_zeros() as usize;
        diss.check(l)?;
        let mut heff = h.clone();
        for idx in 0..d {
            let mut g = 0.0;
            for q in 0..l {
                if idx & bit(l, q) != 0 {
                    g += diss.gamma[q];
                }
                g += diss.gamma_phi[q];
            }
            heff[[idx, idx]] -= C64::new(0.0, 0.5 * g);
        }
        let rate_bound: f64 = diss.gamma.iter().chain(&diss.gamma_phi).sum::<f64>();
        let norm_bound = 2.0 * one_norm(&heff) + 2.0 * rate_bound;
        let substeps = ((tau * norm_bound) / 2.0).ceil().max(1.0) as usize;
        Ok(Self {
            qubits: l,
            heff_dag: dagger(&heff),
            heff,
            gamma: diss.gamma.clone(),
            gamma_phi: diss.gamma_phi.clone(),
            tau,
            substeps,
        })
    }

    pub fn generator(&self, x: &CMatrix) -> CMatrix {
        let l = self.qubits;
        let d = x.nrows();
        let mut out = (self.heff.dot(x) - x.dot(&self.heff_dag)) * (-I);
        for q in 0..l {
            let m = bit(l, q);
            let g = self.gamma[q];
            if g > 0.0 {
                for a in 0..d {
                    if a & m != 0 {
                        continue;
                    }
                    for b in 0..d {
                        if b & m == 0 {
                            out[[a, b]] += x[[a | m, b | m]] * g;
                        }
                    }
                }
            }
            let gp = self.gamma_phi[q];
            if gp > 0.0 {
                for a in 0..d {
                    for b in 0..d {
                        out[[a, b]] += x[[a, b]] * (gp * z_sign(a, m) * z_sign(b, m));
                    }
                }
            }
        }
        out
    }

    /// `exp(τ L) x` by a Taylor series on each of the substeps.
    pub fn apply(&self, x: &CMatrix) -> CMatrix {
        let h = self.tau / self.substeps as f64;
        let mut state = x.clone();
        for _ in 0..self.substeps {
            let mut term = state.clone();
            let mut sum = state.clone();
            let scale = sum.iter().map(|z| z.norm()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
            for n in 1..80 {
                term = self.generator(&term) * C64::new(h / n as f64, 0.0);
                sum = sum + &term;
                let t = term.iter().map(|z| z.norm()).fold(0.0, f64::max);
                if t <= 1e-18 * scale {
                    break;
                }
            }
            state = sum;
        }
        state
    }
}

/// Per-qubit damping and dephasing over a fixed duration, applied index-wise.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalDecay {
    qubits: usize,
    /// Damping probability `1 − exp(−γ t)`.
    damping: Vec<f64>,
    /// Coherence factor `exp(−2 γ^φ t)`.
    coherence: Vec<f64>,
}

impl LocalDecay {
    pub fn new(diss: &Dissipation, duration: f64) -> Self {
        Self {
            qubits: diss.gamma.len(),
            damping: diss.gamma.iter().map(|g| 1.0 - (-g * duration).exp()).collect(),
            coherence: diss.gamma_phi.iter().map(|g| (-2.0 * g * duration).exp()).collect(),
        }
    }

    pub fn is_identity(&self) -> bool {
        self.damping.iter().all(|&p| p == 0.0) && self.coherence.iter().all(|&c| c == 1.0)
    }

    pub fn apply(&self, x: &CMatrix) -> CMatrix {
        let l = self.qubits;
        let d = x.nrows();
        let mut y = x.clone();
        for q in 0..l {
            let m = bit(l, q);
            let p = self.damping[q];
            if p > 0.0 {
                let keep = (1.0 - p).sqrt();
                let prev = y.clone();
                for a in 0..d {
                    for b in 0..d {
                        let (ea, eb) = (a & m != 0, b & m != 0);
                        y[[a, b]] = match (ea, eb) {
                            (false, false) => prev[[a, b]] + prev[[a | m, b | m]] * p,
                            (true, true) => prev[[a, b]] * (1.0 - p),
                            _ => prev[[a, b]] * keep,
                        };
                    }
                }
            }
            let c = self.coherence[q];
            if c != 1.0 {
                for a in 0..d {
                    for b in 0..d {
                        if (a ^ b) & m != 0 {
                            y[[a, b]] *= c;
                        }
                    }
                }
            }
        }
        y
    }
}

/// One stage of a channel at a fixed input.
#[derive(Debug, Clone)]
pub enum Stage {
    Unitary(CMatrix),
    Lindblad(LindbladAction),
    Decay(LocalDecay),
}

/// The encoding channel `U(u)` at one input value.
#[derive(Debug, Clone)]
pub struct FixedChannel {
    qubits: usize,
    stages: Vec<Stage>,
}

impl FixedChannel {
    pub fn new(qubits: usize, stages: Vec<Stage>) -> Self {
        Self { qubits, stages }
    }

    pub fn qubits(&self) -> usize {
        self.qubits
    }

    pub fn stages(&self) -> &[Stage] {
        &self.stages
    }

    /// The unitary when the channel is a single unitary conjugation.
    pub fn unitary(&self) -> Option<&CMatrix> {
        match self.stages.as_slice() {
            [Stage::Unitary(u)] => Some(u),
            _ => None,
        }
    }

    fn apply_from(&self, start: usize, mut y: CMatrix) -> CMatrix {
        for stage in &self.stages[start..] {
            y = match stage {
                Stage::Unitary(u) => u.dot(&y).dot(&dagger(u)),
                Stage::Lindblad(l) => l.apply(&y),
                Stage::Decay(dc) => dc.apply(&y),
            };
        }
        y
    }

    /// `U(u) x` for any operator `x` on the full register.
    pub fn apply(&self, x: &CMatrix) -> CMatrix {
        self.apply_from(0, x.clone())
    }

    /// `U(u)(x ⊗ |0⟩⟨0|^{⊗R})` for a memory-space operator `x`.
    pub fn apply_product(&self, x: &CMatrix, readout: usize) -> CMatrix {
        let dr = 1usize << readout;
        if let Some(Stage::Unitary(u)) = self.stages.first() {
            let dm = x.nrows();
            let v = CMatrix::from_shape_fn((u.nrows(), dm), |(i, a)| u[[i, a * dr]]);
            let y = v.dot(x).dot(&dagger(&v));
            return self.apply_from(1, y);
        }
        self.apply_from(0, crate::linalg::embed_ground_readout(x, readout))
    }

    /// Dense superoperator of this channel.
    pub fn superoperator(&self) -> Result<Superoperator> {
        let d = 1usize << self.qubits;
        let mut s = CMatrix::zeros((d * d, d * d));
        for b in 0..d {
            for a in 0..d {
                let mut e = CMatrix::zeros((d, d));
                e[[a, b]] = ONE;
                let y = self.apply(&e);
                for j in 0..d {
                    for i in 0..d {
                        s[[i + j * d, a + b * d]] = y[[i, j]];
                    }
                }
            }
        }
        Superoperator::new(s)
    }
}

/// User-supplied unitary family `u ↦ U(u)`.
pub type UnitaryFn = Arc<dyn Fn(f64) -> CMatrix + Send + Sync>;

/// Input-parameterized encoding channel `u ↦ U(u)`.
#[derive(Clone)]
pub enum ChannelFamily {
    Hamiltonian {
        h0: CMatrix,
        h1: CMatrix,
        tau: f64,
        dissipation: Dissipation,
    },
    Circuit {
        ansatz: CircuitAnsatz,
        dissipation: Dissipation,
    },
    Unitary {
        qubits: usize,
        family: UnitaryFn,
    },
}

impl std::fmt::Debug for ChannelFamily {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ChannelFamily::Hamiltonian { tau, dissipation, .. } => f
                .debug_struct("Hamiltonian")
                .field("qubits", &self.qubits())
                .field("tau", tau)
                .field("dissipation", dissipation)
                .finish(),
            ChannelFamily::Circuit { ansatz, dissipation } => f
                .debug_struct("Circuit")
                .field("ansatz", ansatz)
                .field("dissipation", dissipation)
                .finish(),
            ChannelFamily::Unitary { qubits, .. } => {
                f.debug_struct("Unitary").field("qubits", qubits).finish()
            }
        }
    }
}

/// An encoding family together with an optional idle delay after each step.
#[derive(Debug, Clone)]
pub struct Encoding {
    pub family: ChannelFamily,
    /// Pure dissipation for `idle.1` time units after every step.
    pub idle: Option<(Dissipation, f64)>,
}

impl ChannelFamily {
    pub fn hamiltonian(ansatz: &IsingAnsatz, tau: f64, dissipation: Dissipation) -> Result<Self> {
        if !(tau >= 0.0) || !tau.is_finite() {
            return Err(Error::InvalidParameter("tau must be finite and non-negative".into()));
        }
        dissipation.check(ansatz.qubits)?;
        let (h0, h1) = build_ising_hamiltonians(ansatz)?;
        Ok(ChannelFamily::Hamiltonian {
            h0,
            h1,
            tau,
            dissipation,
        })
    }

    pub fn circuit(ansatz: CircuitAnsatz, dissipation: Dissipation) -> Result<Self> {
        dissipation.check(ansatz.qubits)?;
        build_circuit_unitary(&ansatz, 0.0)?;
        Ok(ChannelFamily::Circuit { ansatz, dissipation })
    }

    pub fn qubits(&self) -> usize {
        match self {
            ChannelFamily::Hamiltonian { h0, .. } => h0.nrows().trailing_zeros() as usize,
            ChannelFamily::Circuit { ansatz, .. } => ansatz.qubits,
            ChannelFamily::Unitary { qubits, .. } => *qubits,
        }
    }

    pub fn is_lossless(&self) -> bool {
        match self {
            ChannelFamily::Hamiltonian { dissipation, .. }
            | ChannelFamily::Circuit { dissipation, .. } => dissipation.is_lossless(),
            ChannelFamily::Unitary { .. } => true,
        }
    }

    /// `U(u)` when the channel is unitary at every input.
    pub fn unitary(&self, u: f64) -> Result<Option<CMatrix>> {
        if !self.is_lossless() {
            return Ok(None);
        }
        Ok(Some(match self {
            ChannelFamily::Hamiltonian { h0, h1, tau, .. } => {
                let h = h0 + &(h1 * C64::new(u, 0.0));
                let (vals, vecs) = hermitian_eig(&h)?;
                let mut scaled = vecs.clone();
                for (k, mut col) in scaled.columns_mut().into_iter().enumerate() {
                    let ph = C64::from_polar(1.0, -tau * vals[k]);
                    col.mapv_inplace(|z| z * ph);
                }
                scaled.dot(&dagger(&vecs))
            }
            ChannelFamily::Circuit { ansatz, .. } => build_circuit_unitary(ansatz, u)?,
            ChannelFamily::Unitary { family, .. } => family(u),
        }))
    }

    pub fn at(&self, u: f64) -> Result<FixedChannel> {
        if !u.is_finite() {
            return Err(Error::NonFinite("input value"));
        }
        let l = self.qubits();
        if let Some(unitary) = self.unitary(u)? {
            return Ok(FixedChannel::new(l, vec![Stage::Unitary(unitary)]));
        }
        let stages = match self {
            ChannelFamily::Hamiltonian {
                h0,
                h1,
                tau,
                dissipation,
            } => {
                let h = h0 + &(h1 * C64::new(u, 0.0));
                vec![Stage::Lindblad(LindbladAction::new(&h, dissipation, *tau)?)]
            }
            ChannelFamily::Circuit { ansatz, dissipation } => vec![
                Stage::Unitary(build_circuit_unitary(ansatz, u)?),
                Stage::Decay(LocalDecay::new(dissipation, ansatz.tau)),
            ],
            ChannelFamily::Unitary { .. } => unreachable!("unitary families are lossless"),
        };
        Ok(FixedChannel::new(l, stages))
    }
}

impl Encoding {
    pub fn new(family: ChannelFamily) -> Self {
        Self { family, idle: None }
    }

    pub fn with_idle(mut self, dissipation: Dissipation, duration: f64) -> Result<Self> {
        dissipation.check(self.family.qubits())?;
        if !(duration >= 0.0) {
            return Err(Error::InvalidParameter("idle duration must be non-negative".into()));
        }
        self.idle = Some((dissipation, duration));
        Ok(self)
    }

    pub fn qubits(&self) -> usize {
        self.family.qubits()
    }

    pub fn is_lossless(&self) -> bool {
        self.family.is_lossless()
            && self
                .idle
                .as_ref()
                .map_or(true, |(d, t)| d.is_lossless() || *t == 0.0)
    }

    pub fn at(&self, u: f64) -> Result<FixedChannel> {
        let mut ch = self.family.at(u)?;
        if let Some((d, t)) = &self.idle {
            let decay = LocalDecay::new(d, *t);
            if !decay.is_identity() {
                ch.stages.push(Stage::Decay(decay));
            }
        }
        Ok(ch)
    }

    /// `U(u)` if every stage is unitary.
    pub fn unitary(&self, u: f64) -> Result<Option<CMatrix>> {
        if !self.is_lossless() {
            return Ok(None);
        }
        self.family.unitary(u)
    }
}

/// Dense circuit channel with losses applied after the unitary block.
pub fn circuit_channel(a: &CircuitAnsatz, u: f64, diss: Option<&Dissipation>) -> Result<Superoperator> {
    let family = ChannelFamily::circuit(
        a.clone(),
        diss.cloned().unwrap_or_else(|| Dissipation::none(a.qubits)),
    )?;
    family.at(u)?.superoperator()
}

/// Dense unitary conjugation superoperator.
pub fn unitary_channel(u: &CMatrix) -> Result<Superoperator> {
    sandwich_superop(u, u)
}
