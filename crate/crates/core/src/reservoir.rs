//! Feature generation: effective-state recursion, no-reset variant, and
//! finite-shot sampling.

use std::io::Write;

use ndarray::{Array1, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Binomial, Distribution};

use crate::chebyshev::{check_points, max_abs_diff, nodes, ChebyshevFit};
use crate::density::{diagnose, DensityMatrix};
use crate::encoding::{no_reset_mask, povm_probabilities, Encoding, FixedChannel};
use crate::error::{Error, Result};
use crate::linalg::{devectorize, partial_trace_readout, vectorize, CMatrix, C64};
use crate::superop::Superoperator;

/// A reservoir of `memory + readout` qubits with its encoding channel.
#[derive(Debug, Clone)]
pub struct Reservoir {
    pub memory: usize,
    pub readout: usize,
    pub encoding: Encoding,
}

impl Reservoir {
    pub fn new(memory: usize, readout: usize, encoding: Encoding) -> Result<Self> {
        if memory == 0 || readout == 0 {
            return Err(Error::InvalidParameter("need at least one memory and one readout qubit".into()));
        }
        if encoding.qubits() != memory + readout {
            return Err(Error::Dimension(format!(
                "encoding acts on {} qubits, reservoir has {memory}+{readout}",
                encoding.qubits()
            )));
        }
        Ok(Self {
            memory,
            readout,
            encoding,
        })
    }

    pub fn qubits(&self) -> usize {
        self.memory + self.readout
    }

    /// Number of measured features `K = 2^R`.
    pub fn features(&self) -> usize {
        1 << self.readout
    }

    pub fn memory_dim(&self) -> usize {
        1 << self.memory
    }
}

/// `C(u)`: memory-space map `ρ ↦ Tr_R(U(u)(ρ ⊗ |0⟩⟨0|^{⊗R}))`.
pub fn memory_step_map(channel: &FixedChannel, memory: usize, readout: usize) -> Result<Superoperator> {
    if channel.qubits() != memory + readout {
        return Err(Error::Dimension(format!(
            "channel on {} qubits, expected {memory}+{readout}",
            channel.qubits()
        )));
    }
    Superoperator::new(reduced_map(channel, memory, readout)?.step)
}

/// Memory step map and feature functionals of one channel, as matrices on
/// column-stacked memory operators.
#[derive(Debug, Clone, PartialEq)]
pub struct ReducedMap {
    /// `4^M × 4^M`
    pub step: CMatrix,
    /// `K × 4^M`; row `j` is `X ↦ Tr(M_j U(u)(X ⊗ |0⟩⟨0|))`.
    pub features: CMatrix,
}

impl ReducedMap {
    pub(crate) fn stacked(&self) -> CMatrix {
        ndarray::concatenate(ndarray::Axis(0), &[self.step.view(), self.features.view()])
            .expect("same column count")
    }

    pub(crate) fn from_stacked(m: CMatrix, memory_dim: usize) -> Self {
        let n = memory_dim * memory_dim;
        Self {
            step: m.slice(ndarray::s![..n, ..]).to_owned(),
            features: m.slice(ndarray::s![n.., ..]).to_owned(),
        }
    }
}

/// Builds [`ReducedMap`] from matrix units; `Φ(E_ba) = Φ(E_ab)†` halves the work.
pub fn reduced_map(channel: &FixedChannel, memory: usize, readout: usize) -> Result<ReducedMap> {
    let dm = 1usize << memory;
    let k = 1usize << readout;
    let mut step = CMatrix::zeros((dm * dm, dm * dm));
    let mut features = CMatrix::zeros((k, dm * dm));
    for b in 0..dm {
        for a in 0..=b {
            let mut e = CMatrix::zeros((dm, dm));
            e[[a, b]] = C64::new(1.0, 0.0);
            let y = channel.apply_product(&e, readout);
            let reduced = partial_trace_readout(&y, memory, readout)?;
            let probs = povm_probabilities(&y, readout);
            let col = a + b * dm;
            let mirror = b + a * dm;
            for j in 0..dm {
                for i in 0..dm {
                    step[[i + j * dm, col]] = reduced[[i, j]];
                    if a != b {
                        step[[j + i * dm, mirror]] = reduced[[i, j]].conj();
                    }
                }
            }
            for (jj, p) in probs.iter().enumerate() {
                features[[jj, col]] = *p;
                if a != b {
                    features[[jj, mirror]] = p.conj();
                }
            }
        }
    }
    Ok(ReducedMap { step, features })
}

/// How the per-step channel is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Engine {
    /// Rebuild and apply the channel at every input.
    Exact,
    /// Chebyshev interpolation in `u` of the reduced step map, with degree
    /// raised until the check-point error is below `tolerance`.
    Interpolated { tolerance: f64 },
    /// `Exact` for lossless encodings, `Interpolated { 1e-10 }` otherwise.
    Auto,
}

use serde::{Deserialize, Serialize};

impl Default for Engine {
    fn default() -> Self {
        Engine::Auto
    }
}

enum Model {
    Exact,
    Interpolated { fit: ChebyshevFit, degree: usize },
}

/// Runs the measured-and-reset recursion for a fixed reservoir.
pub struct Simulator {
    reservoir: Reservoir,
    model: Model,
    validate: bool,
}

/// Feature rows `x_j(n)` and optional sampled frequencies.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSeries {
    /// `N × K` probabilities (or moments after [`probability_to_moment`]).
    pub values: Array2<f64>,
    pub samples: Option<Array2<f64>>,
    pub shots: Option<u64>,
}

/// Output of a feature run.
#[derive(Debug, Clone)]
pub struct Run {
    pub features: FeatureSeries,
    /// Memory state after the last step (full state for no-reset runs).
    pub final_state: CMatrix,
}

impl Simulator {
    pub fn new(reservoir: Reservoir, engine: Engine) -> Result<Self> {
        let engine = match engine {
            Engine::Auto if reservoir.encoding.is_lossless() => Engine::Exact,
            Engine::Auto => Engine::Interpolated { tolerance: 1e-10 },
            e => e,
        };
        let model = match engine {
            Engine::Exact | Engine::Auto => Model::Exact,
            Engine::Interpolated { tolerance } => {
                let (fit, degree) = interpolate_reduced_map(&reservoir, tolerance)?;
                Model::Interpolated { fit, degree }
            }
        };
        Ok(Self {
            reservoir,
            model,
            validate: true,
        })
    }

    /// Skip per-step density-matrix validation.
    pub fn without_validation(mut self) -> Self {
        self.validate = false;
        self
    }

    pub fn reservoir(&self) -> &Reservoir {
        &self.reservoir
    }

    /// Interpolation degree, when interpolating.
    pub fn interpolation_degree(&self) -> Option<usize> {
        match &self.model {
            Model::Exact => None,
            Model::Interpolated { degree, .. } => Some(*degree),
        }
    }

    /// One step: returns the next memory state and the feature row.
    pub fn step(&self, u: f64, rho_m: &CMatrix) -> Result<(CMatrix, Vec<f64>)> {
        let r = &self.reservoir;
        match &self.model {
            Model::Exact => {
                let ch = r.encoding.at(u)?;
                let y = ch.apply_product(rho_m, r.readout);
                let probs = povm_probabilities(&y, r.readout).iter().map(|z| z.re).collect();
                Ok((partial_trace_readout(&y, r.memory, r.readout)?, probs))
            }
            Model::Interpolated { fit, .. } => {
                let a = fit.eval(u);
                let out = a.dot(&vectorize(rho_m));
                let n = r.memory_dim() * r.memory_dim();
                let next = devectorize(&out.slice(ndarray::s![..n]).to_owned())?;
                let probs = out.slice(ndarray::s![n..]).iter().map(|z| z.re).collect();
                Ok((next, probs))
            }
        }
    }

    /// Expected features for `inputs` starting from memory state `rho0`.
    pub fn run(&self, inputs: &[f64], rho0: &DensityMatrix) -> Result<Run> {
        let r = &self.reservoir;
        if rho0.dim() != r.memory_dim() {
            return Err(Error::Dimension(format!(
                "initial state has dimension {}, memory needs {}",
                rho0.dim(),
                r.memory_dim()
            )));
        }
        check_inputs(inputs)?;
        let mut values = Array2::zeros((inputs.len(), r.features()));
        let mut rho = rho0.matrix().clone();
        for (n, &u) in inputs.iter().enumerate() {
            let (next, probs) = self.step(u, &rho)?;
            check_probabilities(&probs, n + 1)?;
            if self.validate {
                let d = diagnose(&next)?;
                if !d.is_valid() {
                    return Err(Error::InvalidState {
                        step: n + 1,
                        diagnostics: d,
                    });
                }
            }
            values.row_mut(n).assign(&Array1::from(probs));
            rho = next;
        }
        Ok(Run {
            features: FeatureSeries {
                values,
                samples: None,
                shots: None,
            },
            final_state: rho,
        })
    }

    /// Memory state after `steps` null inputs from `rho0`.
    pub fn washout(&self, steps: usize, rho0: &DensityMatrix) -> Result<DensityMatrix> {
        let run = self.run(&vec![0.0; steps], rho0)?;
        DensityMatrix::new(run.final_state)
    }
}

fn check_inputs(inputs: &[f64]) -> Result<()> {
    for (n, &u) in inputs.iter().enumerate() {
        if !u.is_finite() {
            return Err(Error::NonFinite("input sequence"));
        }
        if u.abs() > 1.0 + 1e-12 {
            return Err(Error::InvalidParameter(format!(
                "input u[{}] = {u} outside [-1, 1]",
                n + 1
            )));
        }
    }
    Ok(())
}

fn check_probabilities(p: &[f64], step: usize) -> Result<()> {
    let sum: f64 = p.iter().sum();
    if p.iter().any(|&x| !(x >= -1e-10 && x <= 1.0 + 1e-10)) || (sum - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidParameter(format!(
            "feature row at step {step} is not a distribution (sum {sum})"
        )));
    }
    Ok(())
}

fn interpolate_reduced_map(r: &Reservoir, tolerance: f64) -> Result<(ChebyshevFit, usize)> {
    let exact = |u: f64| -> Result<CMatrix> {
        Ok(reduced_map(&r.encoding.at(u)?, r.memory, r.readout)?.stacked())
    };
    let checks: Vec<(f64, CMatrix)> = check_points(8)
        .into_iter()
        .map(|u| exact(u).map(|m| (u, m)))
        .collect::<Result<_>>()?;
    let mut worst = f64::INFINITY;
    for n in [16usize, 24, 32, 48, 64, 96, 128] {
        let samples: Vec<CMatrix> = nodes(n).into_iter().map(exact).collect::<Result<_>>()?;
        let fit = ChebyshevFit::from_samples(&samples);
        worst = checks
            .iter()
            .map(|(u, m)| max_abs_diff(&fit.eval(*u), m))
            .fold(0.0, f64::max);
        if worst <= tolerance {
            return Ok((fit, n - 1));
        }
    }
    Err(Error::ExpansionResidual {
        residual: worst,
        tolerance,
        k_max: 127,
    })
}

/// No-reset recursion `ρ_n = U(u_n) M ρ_{n−1}`, where `M` removes coherences
/// between different readout outcomes. `M` leaves readout-diagonal initial
/// states such as the ground state unchanged, and makes runs resumable
/// from the `final_state` of an earlier run.
pub fn run_no_reset_features(r: &Reservoir, inputs: &[f64], rho0: &DensityMatrix) -> Result<Run> {
    let d = 1usize << r.qubits();
    if rho0.dim() != d {
        return Err(Error::Dimension(format!(
            "no-reset runs start from a {d}-dimensional state"
        )));
    }
    check_inputs(inputs)?;
    let mask = no_reset_mask(r.memory, r.readout);
    let mut values = Array2::zeros((inputs.len(), r.features()));
    let mut rho = rho0.matrix().clone();
    for (n, &u) in inputs.iter().enumerate() {
        rho.zip_mut_with(&mask, |z, &m| *z *= m);
        rho = r.encoding.at(u)?.apply(&rho);
        let d = diagnose(&rho)?;
        if !d.is_valid() {
            return Err(Error::InvalidState {
                step: n + 1,
                diagnostics: d,
            });
        }
        let probs: Vec<f64> = povm_probabilities(&rho, r.readout).iter().map(|z| z.re).collect();
        check_probabilities(&probs, n + 1)?;
        values.row_mut(n).assign(&Array1::from(probs));
    }
    Ok(Run {
        features: FeatureSeries {
            values,
            samples: None,
            shots: None,
        },
        final_state: rho,
    })
}

/// Draws `shots` i.i.d. outcomes per row and stores empirical frequencies.
///
/// Multinomial counts come from sequential conditional binomials, which is
/// exact in distribution.
pub fn sample_features(x: &FeatureSeries, shots: u64, seed: u64) -> Result<FeatureSeries> {
    if shots == 0 {
        return Err(Error::InvalidParameter("shot count must be at least 1".into()));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let (n_rows, k) = x.values.dim();
    let mut samples = Array2::zeros((n_rows, k));
    for n in 0..n_rows {
        let row = x.values.row(n);
        check_probabilities(row.as_slice().unwrap_or(&row.to_vec()), n + 1)?;
        let mut remaining = shots;
        let mut mass: f64 = row.iter().map(|&p| p.max(0.0)).sum();
        for j in 0..k {
            let p = row[j].max(0.0);
            let count = if j + 1 == k || remaining == 0 {
                remaining
            } else {
                let q = if mass > 0.0 { (p / mass).clamp(0.0, 1.0) } else { 0.0 };
                let draw = Binomial::new(remaining, q)
                    .map_err(|e| Error::InvalidParameter(format!("binomial: {e}")))?
                    .sample(&mut rng);
                draw
            };
            samples[[n, j]] = count as f64 / shots as f64;
            remaining -= count;
            mass -= p;
        }
    }
    Ok(FeatureSeries {
        values: x.values.clone(),
        samples: Some(samples),
        shots: Some(shots),
    })
}

fn walsh_hadamard(k: usize) -> Array2<f64> {
    Array2::from_shape_fn((k, k), |(m, j)| {
        if (m & j).count_ones() % 2 == 0 {
            1.0
        } else {
            -1.0
        }
    })
}

/// `moment_m = Σ_j (−1)^{popcount(m & j)} x_j`: expectations of products of
/// readout `σ^z` over the subset encoded by `m`.
pub fn probability_to_moment(x: &FeatureSeries) -> Result<FeatureSeries> {
    let k = x.values.ncols();
    if !k.is_power_of_two() {
        return Err(Error::Dimension(format!("{k} features is not a power of two")));
    }
    let h = walsh_hadamard(k);
    Ok(FeatureSeries {
        values: x.values.dot(&h.t()),
        samples: x.samples.as_ref().map(|s| s.dot(&h.t())),
        shots: x.shots,
    })
}

pub fn moment_to_probability(x: &FeatureSeries) -> Result<FeatureSeries> {
    let k = x.values.ncols();
    if !k.is_power_of_two() {
        return Err(Error::Dimension(format!("{k} features is not a power of two")));
    }
    let h = walsh_hadamard(k) / k as f64;
    Ok(FeatureSeries {
        values: x.values.dot(&h.t()),
        samples: x.samples.as_ref().map(|s| s.dot(&h.t())),
        shots: x.shots,
    })
}

impl FeatureSeries {
    pub fn len(&self) -> usize {
        self.values.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.values.nrows() == 0
    }

    pub fn width(&self) -> usize {
        self.values.ncols()
    }

    /// Sampled values when present, otherwise expected values.
    pub fn observed(&self) -> &Array2<f64> {
        self.samples.as_ref().unwrap_or(&self.values)
    }

    /// CSV with columns `n,j,x,xbar,S`; `xbar` is empty and `S` is `inf`
    /// without sampling.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "n,j,x,xbar,S")?;
        let shots = self.shots.map_or_else(|| "inf".to_string(), |s| s.to_string());
        for n in 0..self.len() {
            for j in 0..self.width() {
                let xbar = self
                    .samples
                    .as_ref()
                    .map_or_else(String::new, |s| s[[n, j]].to_string());
                writeln!(w, "{},{},{},{},{}", n + 1, j, self.values[[n, j]], xbar, shots)?;
            }
        }
        Ok(())
    }
}

/// Fixed point of the no-reset step at `u = 0` by power iteration, with the
/// per-step contraction of a traceless perturbation as a `|λ_2|` estimate.
pub fn no_reset_fixed_point(r: &Reservoir, max_steps: usize) -> Result<(DensityMatrix, f64)> {
    let d = 1usize << r.qubits();
    let mask = no_reset_mask(r.memory, r.readout);
    let ch = r.encoding.at(0.0)?;
    let step = |x: &CMatrix| -> CMatrix {
        let mut y = x.clone();
        y.zip_mut_with(&mask, |z, &m| *z *= m);
        ch.apply(&y)
    };
    let mut rho = DensityMatrix::ground(r.qubits()).into_matrix();
    // Traceless Hermitian probe with weight on every readout pattern.
    let mut probe = CMatrix::from_shape_fn((d, d), |(i, j)| {
        let v = ((i * 7 + j * 13) % 11) as f64 / 11.0 - 0.5;
        C64::new(v, if i == j { 0.0 } else { 0.1 * v })
    });
    probe = &probe + &crate::linalg::dagger(&probe);
    let tr = crate::linalg::trace(&probe) / C64::new(d as f64, 0.0);
    for i in 0..d {
        probe[[i, i]] -= tr;
    }
    let mut rate: f64 = 0.0;
    for _ in 0..max_steps {
        let next = step(&rho);
        let delta = crate::linalg::frobenius_norm(&(&next - &rho));
        rho = next;
        let norm_before = crate::linalg::frobenius_norm(&probe).max(f64::MIN_POSITIVE);
        probe = step(&probe);
        let norm_after = crate::linalg::frobenius_norm(&probe);
        rate = norm_after / norm_before;
        if norm_after > 0.0 {
            probe.mapv_inplace(|z| z / norm_after);
        }
        if delta < 1e-15 {
            break;
        }
    }
    Ok((DensityMatrix::new(rho)?, rate))
}

/// Maximal entrywise difference of two dense operators.
pub fn operator_distance(a: &CMatrix, b: &CMatrix) -> f64 {
    max_abs_diff(a, b)
}
