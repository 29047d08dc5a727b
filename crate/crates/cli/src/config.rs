//! TOML experiment configuration.
//!
//! Every table and key is optional; missing keys take the defaults below and
//! unknown keys are rejected. Numbers that may be infinite (`t1`, `t2`,
//! shot counts) also accept the string `"inf"`.

use std::fmt;
use std::path::Path;

use nisqrc::encoding::{CircuitHyperparameters, IsingHyperparameters};
use nisqrc::experiment::{AnsatzKind, ReservoirSpec, Topology};
use nisqrc::qvt::JacobianOptions;
use nisqrc::reservoir::Engine;
use serde::de::{self, Visitor};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::CliError;

/// A float that may be `+inf`, written `"inf"` in config and output files.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Extended(pub f64);

impl Extended {
    pub const INFINITY: Extended = Extended(f64::INFINITY);
}

impl fmt::Display for Extended {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0 == f64::INFINITY {
            write!(f, "inf")
        } else {
            write!(f, "{}", self.0)
        }
    }
}

impl Serialize for Extended {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        if self.0 == f64::INFINITY {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(self.0)
        }
    }
}

impl<'de> Deserialize<'de> for Extended {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        struct V;
        impl Visitor<'_> for V {
            type Value = Extended;

            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("a finite number or \"inf\"")
            }

            fn visit_f64<E: de::Error>(self, v: f64) -> Result<Extended, E> {
                if v.is_finite() {
                    Ok(Extended(v))
                } else {
                    Err(E::custom(format!("{v} is not allowed; write \"inf\"")))
                }
            }

            fn visit_i64<E: de::Error>(self, v: i64) -> Result<Extended, E> {
                Ok(Extended(v as f64))
            }

            fn visit_u64<E: de::Error>(self, v: u64) -> Result<Extended, E> {
                Ok(Extended(v as f64))
            }

            fn visit_str<E: de::Error>(self, v: &str) -> Result<Extended, E> {
                match v {
                    "inf" | "infinity" => Ok(Extended::INFINITY),
                    _ => Err(E::custom(format!("unknown sentinel {v:?}; only \"inf\" is accepted"))),
                }
            }
        }
        d.deserialize_any(V)
    }
}

/// `T1`/`T2` given once for all qubits or once per qubit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Coherence {
    Uniform(Extended),
    PerQubit(Vec<Extended>),
}

impl Default for Coherence {
    fn default() -> Self {
        Coherence::Uniform(Extended::INFINITY)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AnsatzName {
    Ising,
    Circuit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReservoirConfig {
    pub memory: usize,
    pub readout: usize,
    pub ansatz: AnsatzName,
    pub topology: Topology,
    pub tau: f64,
    pub t1: Coherence,
    pub t2: Coherence,
    pub ising: IsingHyperparameters,
    pub circuit: CircuitHyperparameters,
}

impl Default for ReservoirConfig {
    fn default() -> Self {
        Self {
            memory: 2,
            readout: 4,
            ansatz: AnsatzName::Ising,
            topology: Topology::Connected,
            tau: 1.0,
            t1: Coherence::default(),
            t2: Coherence::default(),
            ising: IsingHyperparameters::default(),
            circuit: CircuitHyperparameters::default(),
        }
    }
}

impl ReservoirConfig {
    pub fn spec(&self) -> Result<ReservoirSpec, CliError> {
        if self.memory == 0 || self.readout == 0 {
            return Err(CliError::Config("reservoir.memory and reservoir.readout must be at least 1".into()));
        }
        let qubits = self.memory + self.readout;
        let ansatz = match self.ansatz {
            AnsatzName::Ising => AnsatzKind::Hamiltonian(self.ising),
            AnsatzName::Circuit => AnsatzKind::Circuit(self.circuit),
        };
        let (t1, t2, coherence) = match (&self.t1, &self.t2) {
            (Coherence::Uniform(a), Coherence::Uniform(b)) => (a.0, b.0, None),
            (a, b) => {
                let expand = |c: &Coherence, key: &str| -> Result<Vec<f64>, CliError> {
                    match c {
                        Coherence::Uniform(v) => Ok(vec![v.0; qubits]),
                        Coherence::PerQubit(v) if v.len() == qubits => Ok(v.iter().map(|x| x.0).collect()),
                        Coherence::PerQubit(v) => Err(CliError::Config(format!(
                            "reservoir.{key} lists {} values for {qubits} qubits",
                            v.len()
                        ))),
                    }
                };
                (f64::INFINITY, f64::INFINITY, Some((expand(a, "t1")?, expand(b, "t2")?)))
            }
        };
        Ok(ReservoirSpec {
            memory: self.memory,
            readout: self.readout,
            ansatz,
            topology: self.topology,
            tau: self.tau,
            t1,
            t2,
            coherence,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EngineKind {
    Auto,
    Exact,
    Interpolated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EngineConfig {
    pub kind: EngineKind,
    /// Only read by `interpolated`.
    pub tolerance: f64,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            kind: EngineKind::Auto,
            tolerance: 1e-10,
        }
    }
}

impl EngineConfig {
    pub fn engine(&self) -> Engine {
        match self.kind {
            EngineKind::Auto => Engine::Auto,
            EngineKind::Exact => Engine::Exact,
            EngineKind::Interpolated => Engine::Interpolated {
                tolerance: self.tolerance,
            },
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpectrumConfig {
    /// Extra evolution times, each at the base `t1`.
    pub tau_grid: Vec<f64>,
    /// Extra uniform `T1` values, each at the base `tau`.
    pub t1_grid: Vec<Extended>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KernelConfig {
    /// Largest lag; defaults to `5 n_M` capped at 64.
    pub n_max: Option<usize>,
    pub reset: bool,
    /// Chebyshev degree of the no-reset expansion.
    pub k_max: usize,
    /// Residual bound for the reset u-expansion.
    pub tolerance: f64,
}

impl Default for KernelConfig {
    fn default() -> Self {
        Self {
            n_max: None,
            reset: true,
            k_max: 24,
            tolerance: nisqrc::qvt::EXPANSION_TOLERANCE,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CeConfig {
    pub snr_db: f64,
    pub train_messages: usize,
    pub train_length: usize,
    pub test_messages: usize,
    /// `N_ts` grid.
    pub test_lengths: Vec<usize>,
    /// `S` grid; `"inf"` uses expected features.
    pub shots: Vec<Extended>,
    /// Empty means the reservoir topology only.
    pub topologies: Vec<Topology>,
    pub reset: Vec<bool>,
    pub washout: Option<usize>,
    pub l2: f64,
}

impl Default for CeConfig {
    fn default() -> Self {
        Self {
            snr_db: 20.0,
            train_messages: 100,
            train_length: 100,
            test_messages: 100,
            test_lengths: vec![100],
            shots: vec![Extended::INFINITY],
            topologies: Vec::new(),
            reset: vec![true],
            washout: None,
            l2: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct JacobianConfig {
    pub epsilon: f64,
    pub threshold: f64,
    pub past_steps: usize,
    /// Length of the random input sequence, washout included.
    pub inputs: usize,
    /// Inputs are drawn from `Unif[-input_range, input_range]`.
    pub input_range: f64,
    /// Empty means the reservoir topology only.
    pub topologies: Vec<Topology>,
}

impl Default for JacobianConfig {
    fn default() -> Self {
        let o = JacobianOptions::default();
        Self {
            epsilon: o.epsilon,
            threshold: o.threshold,
            past_steps: o.past_steps,
            inputs: 200,
            input_range: 0.9,
            topologies: Vec::new(),
        }
    }
}

impl JacobianConfig {
    pub fn options(&self) -> JacobianOptions {
        JacobianOptions {
            epsilon: self.epsilon,
            threshold: self.threshold,
            past_steps: self.past_steps,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    /// Master seed; `--seed` overrides it.
    pub seed: u64,
    /// Independent reservoir/data draws per sweep point.
    pub replicates: usize,
    pub reservoir: ReservoirConfig,
    pub engine: EngineConfig,
    pub spectrum: SpectrumConfig,
    pub kernels: KernelConfig,
    pub ce: CeConfig,
    pub jacobian: JacobianConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            replicates: 1,
            reservoir: ReservoirConfig::default(),
            engine: EngineConfig::default(),
            spectrum: SpectrumConfig::default(),
            kernels: KernelConfig::default(),
            ce: CeConfig::default(),
            jacobian: JacobianConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        let cfg: Self = toml::from_str(text).map_err(|e| CliError::Config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    /// Checks that are not expressible in the schema itself.
    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        if self.replicates == 0 {
            return bad("replicates must be at least 1".into());
        }
        if self.ce.test_lengths.is_empty() || self.ce.shots.is_empty() || self.ce.reset.is_empty() {
            return bad("ce.test_lengths, ce.shots and ce.reset must be non-empty".into());
        }
        for s in &self.ce.shots {
            if s.0 != f64::INFINITY && !(s.0 >= 1.0 && s.0.fract() == 0.0) {
                return bad(format!("ce.shots entry {s} must be a positive integer or \"inf\""));
            }
        }
        if self.spectrum.tau_grid.iter().any(|&t| !(t > 0.0 && t.is_finite())) {
            return bad("spectrum.tau_grid entries must be positive and finite".into());
        }
        if self.spectrum.t1_grid.iter().any(|t| !(t.0 > 0.0)) {
            return bad("spectrum.t1_grid entries must be positive".into());
        }
        if !self.spectrum.t1_grid.is_empty() && !matches!(self.reservoir.t2, Coherence::Uniform(_)) {
            return bad("spectrum.t1_grid requires a scalar reservoir.t2".into());
        }
        if !(self.jacobian.input_range > 0.0 && self.jacobian.input_range <= 1.0) {
            return bad("jacobian.input_range must lie in (0, 1]".into());
        }
        Ok(())
    }
}
