//! Simulation and analysis of measured-and-reset quantum reservoir computers.
//!
//! A reservoir of `M` memory qubits and `R` readout qubits is driven by a
//! scalar input `u_n` each step. The readout qubits are measured in the
//! computational basis and reset, and the measured probabilities are the
//! features consumed by a trained linear readout.
//!
//! Modules, bottom to top:
//!
//! * [`linalg`], [`superop`], [`density`]: dense complex linear algebra.
//! * [`encoding`]: input-dependent channels (Ising/Lindblad and Trotter circuit).
//! * [`reservoir`]: feature recursion, finite-shot sampling.
//! * [`qvt`]: u-expansions, spectra, Volterra kernels, internal features,
//!   Jacobian rank.
//! * [`ce`], [`learn`], [`experiment`]: the channel-equalization benchmark.

pub mod ce;
pub mod chebyshev;
pub mod density;
pub mod encoding;
pub mod error;
pub mod experiment;
pub mod learn;
pub mod linalg;
pub mod qvt;
pub mod random;
pub mod reservoir;
pub mod seed;
pub mod superop;

pub use density::{DensityMatrix, Diagnostics};
pub use error::{Error, Result};
pub use linalg::{CMatrix, C64};
pub use superop::Superoperator;
