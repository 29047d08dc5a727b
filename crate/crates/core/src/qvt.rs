//! Volterra analysis of a reservoir: u-expansion of the step channel,
//! spectrum of the null-input map `P_0`, kernels up to second order,
//! internal features and Jacobian rank.

use std::io::Write;

use ndarray::{Array1, Array2, Array3};
use rayon::prelude::*;
use serde::Serialize;

use crate::chebyshev::{check_points, max_abs_diff, nodes, ChebyshevFit};
use crate::density::DensityMatrix;
use crate::encoding::{no_reset_mask, povm_probabilities, FixedChannel};
use crate::error::{Error, Result};
use crate::linalg::{
    condition_number, dagger, devectorize, frobenius_norm, general_eig, singular_values_real,
    solve_matrix, trace, vectorize, CMatrix, C64,
};
use crate::reservoir::{
    no_reset_fixed_point, reduced_map, Reservoir, ReducedMap, Simulator,
};
use crate::superop::Superoperator;

/// Expansion orders tried by [`UExpansion::extract_auto`].
pub const AUTO_ORDERS: [usize; 8] = [8, 12, 16, 24, 32, 40, 48, 64];

/// Default tolerance on the held-out reconstruction error.
pub const EXPANSION_TOLERANCE: f64 = 1e-9;

/// Power-series coefficients in `u` of the step channel, restricted to
/// inputs of the form `X ⊗ |0⟩⟨0|^{⊗R}`.
///
/// `p[k]` is `P_k = Tr_R(R_k(· ⊗ |0⟩⟨0|))` on the memory space and `f[k]`
/// holds the functionals `X ↦ Tr(M_j R_k(X ⊗ |0⟩⟨0|))`, one row per `j`.
#[derive(Debug, Clone)]
pub struct UExpansion {
    pub memory: usize,
    pub readout: usize,
    pub k_max: usize,
    pub p: Vec<CMatrix>,
    pub f: Vec<CMatrix>,
    /// Largest entrywise reconstruction error at the held-out points.
    pub residual: f64,
    /// Frobenius norm of each Chebyshev coefficient, a truncation indicator.
    pub chebyshev_tail: Vec<f64>,
    fit: ChebyshevFit,
}

impl UExpansion {
    /// Degree-`k_max` interpolation at `k_max + 1` Chebyshev nodes.
    pub fn extract(r: &Reservoir, k_max: usize, tolerance: f64) -> Result<Self> {
        if k_max < 2 {
            return Err(Error::InvalidParameter("k_max must be at least 2".into()));
        }
        let exact = |u: f64| -> Result<CMatrix> {
            Ok(reduced_map(&r.encoding.at(u)?, r.memory, r.readout)?.stacked())
        };
        let samples: Vec<CMatrix> = nodes(k_max + 1).into_iter().map(exact).collect::<Result<_>>()?;
        let fit = ChebyshevFit::from_samples(&samples);
        let mut residual: f64 = 0.0;
        for u in check_points(8) {
            residual = residual.max(max_abs_diff(&fit.eval(u), &exact(u)?));
        }
        if !(residual <= tolerance) {
            return Err(Error::ExpansionResidual {
                residual,
                tolerance,
                k_max,
            });
        }
        let dm = r.memory_dim();
        let (p, f) = fit
            .monomial()
            .into_iter()
            .map(|m| {
                let rm = ReducedMap::from_stacked(m, dm);
                (rm.step, rm.features)
            })
            .unzip();
        let chebyshev_tail = fit.chebyshev_coefficients().iter().map(frobenius_norm).collect();
        Ok(Self {
            memory: r.memory,
            readout: r.readout,
            k_max,
            p,
            f,
            residual,
            chebyshev_tail,
            fit,
        })
    }

    /// Smallest order in [`AUTO_ORDERS`] meeting `tolerance`.
    pub fn extract_auto(r: &Reservoir, tolerance: f64) -> Result<Self> {
        let mut last = None;
        for k in AUTO_ORDERS {
            match Self::extract(r, k, tolerance) {
                Ok(e) => return Ok(e),
                Err(e @ Error::ExpansionResidual { .. }) => last = Some(e),
                Err(e) => return Err(e),
            }
        }
        Err(last.expect("at least one order tried"))
    }

    pub fn memory_dim(&self) -> usize {
        1 << self.memory
    }

    pub fn features(&self) -> usize {
        1 << self.readout
    }

    /// `P_0` as a superoperator.
    pub fn null_map(&self) -> Result<Superoperator> {
        Superoperator::new(self.p[0].clone())
    }

    /// `C(u)` and feature functionals from the interpolant.
    pub fn eval(&self, u: f64) -> ReducedMap {
        ReducedMap::from_stacked(self.fit.eval(u), self.memory_dim())
    }

    /// Largest `|Tr(P_k ρ)|`-type defect over `k ≥ 1`: the trace row of each `P_k`.
    pub fn trace_defect(&self, k: usize) -> f64 {
        let d = self.memory_dim();
        let pk = &self.p[k];
        (0..pk.ncols())
            .map(|col| (0..d).map(|i| pk[[i + i * d, col]]).sum::<C64>().norm())
            .fold(0.0, f64::max)
    }
}

/// Spectrum of the null-input map and derived memory quantities.
#[derive(Debug, Clone)]
pub struct SpectralData {
    /// Sorted by descending modulus.
    pub eigenvalues: Vec<C64>,
    /// `ϱ_1` has unit trace; the rest unit Frobenius norm with the
    /// largest-magnitude entry real and positive.
    pub eigenmatrices: Vec<CMatrix>,
    pub fixed_point: Option<DensityMatrix>,
    pub lambda2_abs: f64,
    /// `−1/ln|λ_2|`, infinite when degenerate.
    pub memory_time: f64,
    pub degenerate: bool,
    /// `ceil(n_M)`, a rough task-dimension estimate.
    pub d_eff: Option<usize>,
    /// Condition number of the eigenbasis.
    pub condition: f64,
    pub eig_residual: f64,
}

/// Peripheral eigenvalues closer than this to the unit circle count as degenerate.
pub const DEGENERACY_GAP: f64 = 1e-9;

pub fn spectral_analysis(p0: &Superoperator) -> Result<SpectralData> {
    let eig = general_eig(p0.matrix())?;
    let n = eig.values.len();
    let lambda1 = eig.values[0];
    if (lambda1 - C64::new(1.0, 0.0)).norm() > 1e-9 {
        return Err(Error::NotTracePreserving(format!("{lambda1}")));
    }
    if let Some(bad) = eig.values.iter().find(|z| z.norm() > 1.0 + 1e-9) {
        return Err(Error::NotTracePreserving(format!("eigenvalue {bad} outside the unit disk")));
    }
    let lambda2_abs = if n > 1 { eig.values[1].norm() } else { 0.0 };
    let degenerate = lambda2_abs > 1.0 - DEGENERACY_GAP;
    let mut eigenmatrices = Vec::with_capacity(n);
    for a in 0..n {
        let mut m = devectorize(&eig.vectors.column(a).to_owned())?;
        if a == 0 && !degenerate {
            let tr = trace(&m);
            if tr.norm() < 1e-12 {
                return Err(Error::LinearAlgebra("leading eigen-matrix is traceless".into()));
            }
            m.mapv_inplace(|z| z / tr);
        } else {
            normalize_phase(&mut m);
        }
        eigenmatrices.push(m);
    }
    let fixed_point = if degenerate {
        None
    } else {
        let m = &eigenmatrices[0];
        let herm = (m + &dagger(m)).mapv(|z| z * 0.5);
        if max_abs_diff(&herm, m) > 1e-9 {
            return Err(Error::LinearAlgebra("fixed point is not Hermitian".into()));
        }
        Some(DensityMatrix::new(herm)?)
    };
    let memory_time = if degenerate {
        f64::INFINITY
    } else if lambda2_abs == 0.0 {
        0.0
    } else {
        -1.0 / lambda2_abs.ln()
    };
    Ok(SpectralData {
        eigenvalues: eig.values.to_vec(),
        eigenmatrices,
        fixed_point,
        lambda2_abs,
        memory_time,
        degenerate,
        d_eff: memory_time.is_finite().then(|| memory_time.ceil() as usize),
        condition: eig.condition,
        eig_residual: eig.residual,
    })
}

fn normalize_phase(m: &mut CMatrix) {
    let norm = frobenius_norm(m);
    if norm == 0.0 {
        return;
    }
    // First entry (column-major) within rounding of the maximal modulus.
    let max = m.iter().map(|z| z.norm()).fold(0.0, f64::max);
    let mut pivot = C64::new(1.0, 0.0);
    'outer: for j in 0..m.ncols() {
        for i in 0..m.nrows() {
            if m[[i, j]].norm() >= max * (1.0 - 1e-9) {
                pivot = m[[i, j]];
                break 'outer;
            }
        }
    }
    let scale = pivot.conj() / (pivot.norm() * norm);
    m.mapv_inplace(|z| z * scale);
}

impl SpectralData {
    /// Default kernel horizon `ceil(5 n_M)`, capped at 64.
    pub fn default_n_max(&self) -> usize {
        if self.memory_time.is_finite() {
            ((5.0 * self.memory_time).ceil() as usize).clamp(1, 64)
        } else {
            64
        }
    }

    fn require_fixed_point(&self) -> Result<&DensityMatrix> {
        self.fixed_point.as_ref().ok_or(Error::DegenerateSpectrum {
            lambda2_abs: self.lambda2_abs,
        })
    }
}

/// Step-map pieces the kernel recursion needs.
pub trait KernelOps: Sync {
    fn features(&self) -> usize;
    /// `(P_k x, F_k x)` for `k = 0..=order`.
    fn expand(&self, x: &CMatrix, order: usize) -> Result<Vec<(CMatrix, Vec<C64>)>>;
    /// `P_0 x`.
    fn null_step(&self, x: &CMatrix) -> Result<CMatrix>;
    /// `F_0 x`.
    fn null_features(&self, x: &CMatrix) -> Result<Vec<C64>>;
}

/// Measured-and-reset step, from a [`UExpansion`].
pub struct ResetOps<'a> {
    pub expansion: &'a UExpansion,
}

impl KernelOps for ResetOps<'_> {
    fn features(&self) -> usize {
        self.expansion.features()
    }

    fn expand(&self, x: &CMatrix, order: usize) -> Result<Vec<(CMatrix, Vec<C64>)>> {
        let e = self.expansion;
        if order > e.k_max {
            return Err(Error::InvalidParameter(format!("order {order} above k_max {}", e.k_max)));
        }
        let v = vectorize(x);
        (0..=order)
            .map(|k| Ok((devectorize(&e.p[k].dot(&v))?, e.f[k].dot(&v).to_vec())))
            .collect()
    }

    fn null_step(&self, x: &CMatrix) -> Result<CMatrix> {
        devectorize(&self.expansion.p[0].dot(&vectorize(x)))
    }

    fn null_features(&self, x: &CMatrix) -> Result<Vec<C64>> {
        Ok(self.expansion.f[0].dot(&vectorize(x)).to_vec())
    }
}

/// Step without reset, `x ↦ U(u) M x` on the full register.
pub struct NoResetOps {
    readout: usize,
    mask: Array2<f64>,
    null: FixedChannel,
    node_channels: Vec<FixedChannel>,
}

impl NoResetOps {
    /// Expansion of `u ↦ U(u)` at `k_max + 1` Chebyshev nodes, applied per operator.
    pub fn new(r: &Reservoir, k_max: usize) -> Result<Self> {
        let node_channels = nodes(k_max + 1)
            .into_iter()
            .map(|u| r.encoding.at(u))
            .collect::<Result<_>>()?;
        Ok(Self {
            readout: r.readout,
            mask: no_reset_mask(r.memory, r.readout),
            null: r.encoding.at(0.0)?,
            node_channels,
        })
    }

    fn masked(&self, x: &CMatrix) -> CMatrix {
        let mut y = x.clone();
        y.zip_mut_with(&self.mask, |z, &m| *z *= m);
        y
    }
}

impl KernelOps for NoResetOps {
    fn features(&self) -> usize {
        1 << self.readout
    }

    fn expand(&self, x: &CMatrix, order: usize) -> Result<Vec<(CMatrix, Vec<C64>)>> {
        let y = self.masked(x);
        let samples: Vec<CMatrix> = self.node_channels.iter().map(|c| c.apply(&y)).collect();
        let mono = ChebyshevFit::from_samples(&samples).monomial();
        if order >= mono.len() {
            return Err(Error::InvalidParameter(format!("order {order} above expansion degree")));
        }
        Ok(mono
            .into_iter()
            .take(order + 1)
            .map(|m| {
                let p = povm_probabilities(&m, self.readout);
                (m, p)
            })
            .collect())
    }

    fn null_step(&self, x: &CMatrix) -> Result<CMatrix> {
        Ok(self.null.apply(&self.masked(x)))
    }

    fn null_features(&self, x: &CMatrix) -> Result<Vec<C64>> {
        Ok(povm_probabilities(&self.null_step(x)?, self.readout))
    }
}

/// Tabulated kernels per feature `j`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VolterraKernels {
    pub n_max: usize,
    /// `h_0^{(j)}`
    pub h0: Array1<f64>,
    /// `h_1^{(j)}(n_1)` at `[n_1, j]`.
    pub h1: Array2<f64>,
    /// `h_2^{(j)}(n_1, n_2)` at `[n_1, n_2, j]` for `n_1 ≤ n_2`; zero below the diagonal.
    pub h2: Array3<f64>,
    /// Largest imaginary part discarded when converting to real kernels.
    pub imaginary_residue: f64,
}

fn real_parts(v: &[C64], residue: &mut f64) -> Vec<f64> {
    v.iter()
        .map(|z| {
            *residue = residue.max(z.im.abs());
            z.re
        })
        .collect()
}

/// Kernels to second order around `fixed_point`.
///
/// Writing `ρ` for the fixed point, `F_k` for the feature functionals and
/// `P_k` for the memory maps:
/// `h_0 = F_0 ρ`; `h_1(0) = F_1 ρ`, `h_1(n) = F_0 P_0^{n−1} P_1 ρ`;
/// `h_2(0,0) = F_2 ρ`, `h_2(0,n) = F_1 P_0^{n−1} P_1 ρ`,
/// `h_2(n,n) = F_0 P_0^{n−1} P_2 ρ`,
/// `h_2(n_1,n_2) = F_0 P_0^{n_1−1} P_1 P_0^{n_2−n_1−1} P_1 ρ`.
pub fn volterra_kernels(ops: &dyn KernelOps, fixed_point: &CMatrix, n_max: usize) -> Result<VolterraKernels> {
    if n_max < 1 {
        return Err(Error::InvalidParameter("n_max must be at least 1".into()));
    }
    let k = ops.features();
    let mut residue: f64 = 0.0;
    let base = ops.expand(fixed_point, 2)?;
    let h0 = Array1::from(real_parts(&base[0].1, &mut residue));
    let mut h1 = Array2::zeros((n_max + 1, k));
    let mut h2 = Array3::zeros((n_max + 1, n_max + 1, k));
    h1.row_mut(0).assign(&Array1::from(real_parts(&base[1].1, &mut residue)));
    for j in 0..k {
        h2[[0, 0, j]] = real_parts(&base[2].1, &mut residue)[j];
    }

    // w[n] = P_0^{n−1} P_1 ρ, n = 1..n_max
    let mut w = Vec::with_capacity(n_max);
    w.push(base[1].0.clone());
    for _ in 1..n_max {
        let next = ops.null_step(w.last().expect("nonempty"))?;
        w.push(next);
    }
    let mut diag = base[2].0.clone();
    for n in 1..=n_max {
        let wn = &w[n - 1];
        let terms = ops.expand(wn, 1)?;
        let a = real_parts(&terms[0].1, &mut residue);
        let b = real_parts(&terms[1].1, &mut residue);
        let c = real_parts(&ops.null_features(&diag)?, &mut residue);
        for j in 0..k {
            h1[[n, j]] = a[j];
            h2[[0, n, j]] = b[j];
            h2[[n, n, j]] = c[j];
        }
        if n < n_max {
            diag = ops.null_step(&diag)?;
        }
    }

    // Off-diagonal entries, one chain per gap g = n_2 − n_1.
    let chains: Vec<(usize, Vec<Vec<C64>>)> = (1..n_max)
        .into_par_iter()
        .map(|g| -> Result<(usize, Vec<Vec<C64>>)> {
            let mut z = ops.expand(&w[g - 1], 1)?.swap_remove(1).0;
            let mut rows = Vec::with_capacity(n_max - g);
            for n1 in 1..=(n_max - g) {
                rows.push(ops.null_features(&z)?);
                if n1 < n_max - g {
                    z = ops.null_step(&z)?;
                }
            }
            Ok((g, rows))
        })
        .collect::<Result<_>>()?;
    for (g, rows) in chains {
        for (i, row) in rows.iter().enumerate() {
            let n1 = i + 1;
            let vals = real_parts(row, &mut residue);
            for j in 0..k {
                h2[[n1, n1 + g, j]] = vals[j];
            }
        }
    }
    Ok(VolterraKernels {
        n_max,
        h0,
        h1,
        h2,
        imaginary_residue: residue,
    })
}

/// Kernels of the measured-and-reset reservoir.
pub fn reset_kernels(expansion: &UExpansion, spectrum: &SpectralData, n_max: Option<usize>) -> Result<VolterraKernels> {
    let fp = spectrum.require_fixed_point()?;
    let n_max = n_max.unwrap_or_else(|| spectrum.default_n_max());
    volterra_kernels(&ResetOps { expansion }, fp.matrix(), n_max)
}

/// Kernels of the same reservoir with the reset removed.
///
/// The fixed point comes from power iteration on the full register; the
/// returned rate estimates `|λ_2|`.
pub fn no_reset_kernels(r: &Reservoir, k_max: usize, n_max: usize) -> Result<(VolterraKernels, f64)> {
    let (fp, rate) = no_reset_fixed_point(r, 5000)?;
    if rate > 1.0 - DEGENERACY_GAP {
        return Err(Error::DegenerateSpectrum { lambda2_abs: rate });
    }
    let ops = NoResetOps::new(r, k_max)?;
    Ok((volterra_kernels(&ops, fp.matrix(), n_max)?, rate))
}

impl VolterraKernels {
    pub fn features(&self) -> usize {
        self.h0.len()
    }

    /// Largest kernel magnitude of order 1 and 2.
    pub fn max_abs_nonconstant(&self) -> f64 {
        self.h1
            .iter()
            .chain(self.h2.iter())
            .fold(0.0, |m, x| m.max(x.abs()))
    }

    /// CSV with columns `order,n1,n2,j,h`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "order,n1,n2,j,h")?;
        for j in 0..self.features() {
            writeln!(w, "0,,,{j},{}", self.h0[j])?;
        }
        for n1 in 0..=self.n_max {
            for j in 0..self.features() {
                writeln!(w, "1,{n1},,{j},{}", self.h1[[n1, j]])?;
            }
        }
        for n1 in 0..=self.n_max {
            for n2 in n1..=self.n_max {
                for j in 0..self.features() {
                    writeln!(w, "2,{n1},{n2},{j},{}", self.h2[[n1, n2, j]])?;
                }
            }
        }
        Ok(())
    }
}

/// Operator-valued kernels on the full register.
#[derive(Debug, Clone)]
pub struct OperatorKernels {
    /// `ĥ_0 = R_0(ρ ⊗ |0⟩⟨0|)`
    pub h0: CMatrix,
    /// `ĥ_1(0) = R_1(ρ ⊗ |0⟩⟨0|)`, `ĥ_1(n) = R_0(P_0^{n−1} P_1 ρ ⊗ |0⟩⟨0|)`.
    pub h1: Vec<CMatrix>,
}

/// `R_k(x ⊗ |0⟩⟨0|)` for `k = 0..=order` by interpolation in `u`.
fn full_coefficients(r: &Reservoir, x: &CMatrix, k_max: usize, order: usize) -> Result<Vec<CMatrix>> {
    let samples: Vec<CMatrix> = nodes(k_max + 1)
        .into_iter()
        .map(|u| Ok(r.encoding.at(u)?.apply_product(x, r.readout)))
        .collect::<Result<_>>()?;
    Ok(ChebyshevFit::from_samples(&samples)
        .monomial()
        .into_iter()
        .take(order + 1)
        .collect())
}

pub fn operator_kernels(
    r: &Reservoir,
    expansion: &UExpansion,
    spectrum: &SpectralData,
    n_max: usize,
) -> Result<OperatorKernels> {
    let fp = spectrum.require_fixed_point()?.matrix().clone();
    let base = full_coefficients(r, &fp, expansion.k_max, 1)?;
    let mut h1 = vec![base[1].clone()];
    let ops = ResetOps { expansion };
    let mut w = ops.expand(&fp, 1)?.swap_remove(1).0;
    for n in 1..=n_max {
        h1.push(full_coefficients(r, &w, expansion.k_max, 0)?.swap_remove(0));
        if n < n_max {
            w = ops.null_step(&w)?;
        }
    }
    Ok(OperatorKernels {
        h0: base[0].clone(),
        h1,
    })
}

/// Coordinates of the `P_k` in the eigenbasis of `P_0`.
#[derive(Debug, Clone)]
pub struct InternalFeatureSet {
    pub eigenvalues: Vec<C64>,
    /// `c^{(k)} = V^{−1} P_k V`, `k = 0..=k_max`.
    pub c: Vec<CMatrix>,
    /// `ν^{(j)}_α = Tr(M_j R_0(ϱ_α ⊗ |0⟩⟨0|))` at `[j, α]`.
    pub nu: CMatrix,
    pub u_grid: Vec<f64>,
    /// `F_α(u)` for `α ≥ 2` at `[grid index, α − 2]`.
    pub table: Array2<C64>,
    pub condition: f64,
}

/// Eigenbasis matrix conditions above this are rejected.
pub const MAX_BASIS_CONDITION: f64 = 1e10;

fn eigenbasis(spectrum: &SpectralData) -> Result<(CMatrix, f64)> {
    let n = spectrum.eigenmatrices.len();
    let mut v = CMatrix::zeros((n, n));
    for (a, m) in spectrum.eigenmatrices.iter().enumerate() {
        v.column_mut(a).assign(&vectorize(m));
    }
    let cond = condition_number(&v)?;
    if !(cond <= MAX_BASIS_CONDITION) {
        return Err(Error::IllConditioned(cond));
    }
    Ok((v, cond))
}

pub fn internal_features(expansion: &UExpansion, spectrum: &SpectralData, u_grid: &[f64]) -> Result<InternalFeatureSet> {
    spectrum.require_fixed_point()?;
    let (v, condition) = eigenbasis(spectrum)?;
    let c: Vec<CMatrix> = expansion
        .p
        .iter()
        .map(|pk| solve_matrix(&v, &pk.dot(&v)))
        .collect::<Result<_>>()?;
    let nu = expansion.f[0].dot(&v);
    let n = v.ncols();
    let mut set = InternalFeatureSet {
        eigenvalues: spectrum.eigenvalues.clone(),
        c,
        nu,
        u_grid: u_grid.to_vec(),
        table: Array2::zeros((u_grid.len(), n - 1)),
        condition,
    };
    for (i, &u) in u_grid.iter().enumerate() {
        for a in 1..n {
            set.table[[i, a - 1]] = set.feature(a, u);
        }
    }
    Ok(set)
}

impl InternalFeatureSet {
    pub fn modes(&self) -> usize {
        self.eigenvalues.len()
    }

    /// `F_α(u) = Σ_{k≥1} c^{(k)}_{α1} u^k` (0-based `alpha`).
    pub fn feature(&self, alpha: usize, u: f64) -> C64 {
        self.transfer(alpha, 0, u)
    }

    /// `Σ_{k≥1} c^{(k)}_{αβ} u^k`.
    pub fn transfer(&self, alpha: usize, beta: usize, u: f64) -> C64 {
        let mut acc = C64::new(0.0, 0.0);
        for ck in self.c.iter().skip(1).rev() {
            acc = (acc + ck[[alpha, beta]]) * u;
        }
        acc
    }

    /// `x_j − h_0^{(j)}` after a single input `u` placed `p ≥ 1` steps back:
    /// `Σ_α ν^{(j)}_α λ_α^{p−1} F_α(u)`.
    pub fn single_step_response(&self, p: usize, u: f64) -> Vec<f64> {
        assert!(p >= 1, "response needs p >= 1");
        let k = self.nu.nrows();
        let mut out = vec![0.0; k];
        for a in 1..self.modes() {
            let amp = self.eigenvalues[a].powu(p as u32 - 1) * self.feature(a, u);
            for (j, o) in out.iter_mut().enumerate() {
                *o += (self.nu[[j, a]] * amp).re;
            }
        }
        out
    }
}

/// Cross-step memory modes for inputs at `P` distinct past steps.
///
/// `amplitudes` is indexed by chains `(α_1, …, α_P)` over the decaying modes
/// (0-based positions `1..` of the eigenbasis), most recent step first, laid
/// out row-major. Each amplitude is
/// `T_{α_1α_2}(u_1) ⋯ T_{α_{P−1}α_P}(u_{P−1}) F_{α_P}(u_P)` with
/// `T_{αβ}(u) = Σ_{k≥1} c^{(k)}_{αβ} u^k`.
#[derive(Debug, Clone)]
pub struct MemoryModes {
    pub steps: usize,
    pub modes: usize,
    pub amplitudes: Vec<C64>,
}

pub fn single_step_memory_decomposition(set: &InternalFeatureSet, inputs: &[f64]) -> Result<MemoryModes> {
    let steps = inputs.len();
    if steps == 0 || steps > 3 {
        return Err(Error::InvalidParameter("between one and three past steps".into()));
    }
    let m = set.modes() - 1;
    let total = m.pow(steps as u32);
    let mut amplitudes = Vec::with_capacity(total);
    for idx in 0..total {
        let chain = chain_of(idx, m, steps);
        let mut amp = set.feature(chain[steps - 1] + 1, inputs[steps - 1]);
        for p in (0..steps - 1).rev() {
            amp *= set.transfer(chain[p] + 1, chain[p + 1] + 1, inputs[p]);
        }
        amplitudes.push(amp);
    }
    Ok(MemoryModes {
        steps,
        modes: m,
        amplitudes,
    })
}

fn chain_of(mut idx: usize, m: usize, steps: usize) -> Vec<usize> {
    let mut chain = vec![0; steps];
    for p in (0..steps).rev() {
        chain[p] = idx % m;
        idx /= m;
    }
    chain
}

impl MemoryModes {
    /// Contribution to `x_j` of the product term for inputs at steps
    /// `n − n_1, …, n − n_P` with `1 ≤ n_1 < … < n_P`.
    pub fn reconstruct(&self, set: &InternalFeatureSet, lags: &[usize]) -> Result<Vec<f64>> {
        if lags.len() != self.steps || lags[0] < 1 || lags.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidParameter("lags must be increasing and start at 1 or more".into()));
        }
        let k = set.nu.nrows();
        let mut out = vec![0.0; k];
        for (idx, amp) in self.amplitudes.iter().enumerate() {
            let chain = chain_of(idx, self.modes, self.steps);
            let mut weight = set.eigenvalues[chain[0] + 1].powu(lags[0] as u32 - 1);
            for p in 1..self.steps {
                weight *= set.eigenvalues[chain[p] + 1].powu((lags[p] - lags[p - 1]) as u32 - 1);
            }
            for (j, o) in out.iter_mut().enumerate() {
                *o += (set.nu[[j, chain[0] + 1]] * weight * amp).re;
            }
        }
        Ok(out)
    }
}

/// Finite-difference Jacobian settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JacobianOptions {
    pub epsilon: f64,
    /// Relative singular-value threshold. The Richardson gradients are accurate
    /// to ~1e-11 relative, so the default sits two decades above that floor.
    pub threshold: f64,
    /// Rows `p = 0..=past_steps`.
    pub past_steps: usize,
}

impl Default for JacobianOptions {
    fn default() -> Self {
        Self {
            epsilon: 1e-3,
            threshold: 1e-9,
            past_steps: 40,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct JacobianReport {
    pub rank: usize,
    pub threshold: f64,
    pub epsilon: f64,
    /// Descending, divided by the largest.
    pub relative_singular_values: Vec<f64>,
    /// `∂ x̃_m(N) / ∂ u_{N−p}` at `[p, m − 1]`, moments without the constant.
    pub matrix: Array2<f64>,
}

impl JacobianReport {
    pub fn rank_at(&self, threshold: f64) -> usize {
        self.relative_singular_values.iter().filter(|&&s| s > threshold).count()
    }
}

/// Numerical rank of the moment-feature gradients at the last step with
/// respect to the last `past_steps + 1` inputs.
///
/// Gradients are Richardson-extrapolated central differences with steps
/// `ε` and `ε/2`. The run starts from the ground state, so `inputs` must
/// include its own washout.
pub fn jacobian_rank(sim: &Simulator, inputs: &[f64], opts: &JacobianOptions) -> Result<JacobianReport> {
    if !(1e-4..=1e-2).contains(&opts.epsilon) {
        return Err(Error::InvalidParameter(format!("epsilon {} outside [1e-4, 1e-2]", opts.epsilon)));
    }
    if !(opts.threshold > 0.0 && opts.threshold < 1.0) {
        return Err(Error::InvalidParameter(format!("threshold {} outside (0, 1)", opts.threshold)));
    }
    let n = inputs.len();
    if n <= opts.past_steps {
        return Err(Error::InvalidParameter(format!(
            "{n} inputs cannot cover {} past steps",
            opts.past_steps
        )));
    }
    let r = sim.reservoir();
    let k = r.features();
    let mut states = Vec::with_capacity(n);
    let mut rho = DensityMatrix::ground(r.memory).into_matrix();
    for &u in inputs {
        states.push(rho.clone());
        rho = sim.step(u, &rho)?.0;
    }
    let final_row = |t: usize, du: f64| -> Result<Vec<f64>> {
        let mut x = states[t].clone();
        let mut probs = Vec::new();
        for (s, &u) in inputs.iter().enumerate().skip(t) {
            let v = if s == t { u + du } else { u };
            let (next, p) = sim.step(v, &x)?;
            x = next;
            probs = p;
        }
        Ok(probs)
    };
    let rows: Vec<Vec<f64>> = (0..=opts.past_steps)
        .into_par_iter()
        .map(|p| -> Result<Vec<f64>> {
            let t = n - 1 - p;
            let d = |e: f64| -> Result<Vec<f64>> {
                let plus = final_row(t, e)?;
                let minus = final_row(t, -e)?;
                Ok(plus.iter().zip(&minus).map(|(a, b)| (a - b) / (2.0 * e)).collect())
            };
            let coarse = d(opts.epsilon)?;
            let fine = d(opts.epsilon / 2.0)?;
            Ok(coarse.iter().zip(&fine).map(|(c, f)| (4.0 * f - c) / 3.0).collect())
        })
        .collect::<Result<_>>()?;
    let mut matrix = Array2::zeros((opts.past_steps + 1, k - 1));
    for (p, row) in rows.iter().enumerate() {
        for m in 1..k {
            matrix[[p, m - 1]] = (0..k)
                .map(|j| if (m & j).count_ones() % 2 == 0 { row[j] } else { -row[j] })
                .sum();
        }
    }
    let s = singular_values_real(&matrix)?;
    let top = s.iter().cloned().fold(0.0, f64::max);
    let mut relative: Vec<f64> = s.iter().map(|&x| if top > 0.0 { x / top } else { 0.0 }).collect();
    relative.sort_by(|a, b| b.total_cmp(a));
    let rank = relative.iter().filter(|&&x| x > opts.threshold).count();
    Ok(JacobianReport {
        rank,
        threshold: opts.threshold,
        epsilon: opts.epsilon,
        relative_singular_values: relative,
        matrix,
    })
}

/// Spectral summary for serialization.
#[derive(Debug, Clone, Serialize)]
pub struct SpectrumRecord {
    pub eigenvalues_re: Vec<f64>,
    pub eigenvalues_im: Vec<f64>,
    pub lambda2_abs: f64,
    /// `None` encodes an infinite memory time.
    pub memory_time: Option<f64>,
    pub degenerate: bool,
    pub d_eff: Option<usize>,
    pub condition: f64,
}

impl From<&SpectralData> for SpectrumRecord {
    fn from(s: &SpectralData) -> Self {
        Self {
            eigenvalues_re: s.eigenvalues.iter().map(|z| z.re).collect(),
            eigenvalues_im: s.eigenvalues.iter().map(|z| z.im).collect(),
            lambda2_abs: s.lambda2_abs,
            memory_time: s.memory_time.is_finite().then_some(s.memory_time),
            degenerate: s.degenerate,
            d_eff: s.d_eff,
            condition: s.condition,
        }
    }
}
