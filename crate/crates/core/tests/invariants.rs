//! Structural properties of the Volterra analysis on hand-built encodings.

use std::sync::Arc;

use nisqrc::density::DensityMatrix;
use nisqrc::encoding::{sigma_x, sigma_z, ChannelFamily, Encoding};
use nisqrc::linalg::{devectorize, expm, identity, kron, vectorize, CMatrix, C64};
use nisqrc::qvt::{reset_kernels, spectral_analysis, UExpansion};
use nisqrc::reservoir::{Engine, Reservoir, Simulator};

/// CNOT with the memory qubit as control and the readout qubit as target.
fn cnot() -> CMatrix {
    let mut c = CMatrix::zeros((4, 4));
    for (i, j) in [(0, 0), (1, 1), (2, 3), (3, 2)] {
        c[[i, j]] = C64::new(1.0, 0.0);
    }
    c
}

/// Input acts on the memory qubit only and the readout copies it through a
/// controlled gate, so the memory map is unital for every input.
fn memory_unital_reservoir() -> Reservoir {
    let family = ChannelFamily::Unitary {
        qubits: 2,
        family: Arc::new(|u: f64| {
            let g = sigma_x() * C64::new(0.7, 0.0) + sigma_z() * C64::new(0.3 + 0.8 * u, 0.0);
            let v = expm(&(g * C64::new(0.0, -1.0))).unwrap();
            cnot().dot(&kron(&v, &identity(2)))
        }),
    };
    Reservoir::new(1, 1, Encoding::new(family)).unwrap()
}

#[test]
fn unital_memory_preserves_fixed_point() {
    let r = memory_unital_reservoir();
    let e = UExpansion::extract_auto(&r, 1e-9).unwrap();
    let s = spectral_analysis(&e.null_map().unwrap()).unwrap();
    let fp = s.fixed_point.as_ref().unwrap();
    let mixed = DensityMatrix::maximally_mixed(1);
    let dist = (fp.matrix() - mixed.matrix()).iter().map(|z| z.norm()).fold(0.0, f64::max);
    assert!(dist < 1e-10, "fixed point differs from I/2 by {dist:e}");
    for k in 1..e.p.len() {
        let out = devectorize(&e.p[k].dot(&vectorize(fp.matrix()))).unwrap();
        let size = out.iter().map(|z| z.norm()).fold(0.0, f64::max);
        assert!(size < 1e-10, "P_{k} rho_FP has entry {size:e}");
    }
    let h = reset_kernels(&e, &s, Some(10)).unwrap();
    for n in 1..=10 {
        for j in 0..2 {
            assert!(h.h1[[n, j]].abs() < 1e-10, "h1({n})[{j}] = {:e}", h.h1[[n, j]]);
        }
    }
}

#[test]
fn unital_memory_features_ignore_past_inputs() {
    // Consequence of the vanishing first-order kernel, checked on the simulator
    // directly: from I/2 the features never depend on the input history.
    let sim = Simulator::new(memory_unital_reservoir(), Engine::Exact).unwrap();
    let run = sim
        .run(&[0.9, -0.4, 0.2, 0.7, -1.0], &DensityMatrix::maximally_mixed(1))
        .unwrap();
    for row in run.features.values.rows() {
        assert!((row[0] - 0.5).abs() < 1e-12 && (row[1] - 0.5).abs() < 1e-12, "{row}");
    }
}
