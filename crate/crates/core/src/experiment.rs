//! Seeded end-to-end channel-equalization runs.

use ndarray::{concatenate, Array2, Axis};
use rayon::prelude::*;
use serde::Serialize;

use crate::ce::{
    direct_inverse_baseline, distort, error_rate, generate_message, normalize_input, rounding_baseline,
    ChannelModel,
};
use crate::density::DensityMatrix;
use crate::encoding::{
    ChannelFamily, CircuitAnsatz, CircuitHyperparameters, Connectivity, Dissipation, Encoding,
    IsingAnsatz, IsingHyperparameters,
};
use crate::error::{Error, Result};
use crate::learn::{fit_logistic_on_u, fit_softmax_readout, FeatureKind, FitOptions, ReadoutModel};
use crate::qvt::{spectral_analysis, SpectralData};
use crate::reservoir::{
    memory_step_map, run_no_reset_features, sample_features, Engine, FeatureSeries, Reservoir, Simulator,
};
use crate::seed::{derive_seed, rng_for};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Topology {
    /// All-to-all couplings.
    Connected,
    /// Two disconnected all-to-all blocks, see [`Connectivity::split`].
    Split,
    /// Nearest-neighbour chain.
    Chain,
}

#[derive(Debug, Clone, PartialEq)]
pub enum AnsatzKind {
    Hamiltonian(IsingHyperparameters),
    /// Always a linear chain.
    Circuit(CircuitHyperparameters),
}

/// Everything needed to draw a reservoir from a seed.
#[derive(Debug, Clone, PartialEq)]
pub struct ReservoirSpec {
    pub memory: usize,
    pub readout: usize,
    pub ansatz: AnsatzKind,
    pub topology: Topology,
    pub tau: f64,
    pub t1: f64,
    pub t2: f64,
    /// Per-qubit `(T1, T2)`; overrides the uniform `t1`, `t2` when set.
    pub coherence: Option<(Vec<f64>, Vec<f64>)>,
}

impl ReservoirSpec {
    /// The (2+4) all-to-all Ising reservoir with the default hyperparameters.
    pub fn default_ising(memory: usize, readout: usize) -> Self {
        Self {
            memory,
            readout,
            ansatz: AnsatzKind::Hamiltonian(IsingHyperparameters::default()),
            topology: Topology::Connected,
            tau: 1.0,
            t1: f64::INFINITY,
            t2: f64::INFINITY,
            coherence: None,
        }
    }

    pub fn qubits(&self) -> usize {
        self.memory + self.readout
    }

    pub fn connectivity(&self) -> Connectivity {
        match self.topology {
            Topology::Connected => Connectivity::AllToAll,
            Topology::Split => Connectivity::split(self.memory, self.readout),
            Topology::Chain => Connectivity::Chain,
        }
    }

    /// Draws parameters from stream `"reservoir"` of `seed`.
    pub fn build(&self, seed: u64) -> Result<Reservoir> {
        let l = self.qubits();
        let dissipation = match &self.coherence {
            Some((t1, t2)) if t1.len() != l => {
                return Err(Error::Dimension(format!("{} per-qubit T1 values for {l} qubits", t1.len())))
            }
            Some((t1, t2)) => Dissipation::per_qubit(t1, t2)?,
            None => Dissipation::from_t1_t2(l, self.t1, self.t2)?,
        };
        let mut rng = rng_for(seed, "reservoir", 0);
        let family = match &self.ansatz {
            AnsatzKind::Hamiltonian(h) => {
                let a = IsingAnsatz::draw(l, &self.connectivity().edges(l), h, &mut rng)?;
                ChannelFamily::hamiltonian(&a, self.tau, dissipation)?
            }
            AnsatzKind::Circuit(h) => {
                if self.topology == Topology::Split {
                    return Err(Error::InvalidParameter("the circuit ansatz only supports a chain".into()));
                }
                ChannelFamily::circuit(CircuitAnsatz::draw(l, h, self.tau, &mut rng)?, dissipation)?
            }
        };
        Reservoir::new(self.memory, self.readout, Encoding::new(family))
    }
}

/// Spectrum of the null-input memory map of `r`.
pub fn reservoir_spectrum(r: &Reservoir) -> Result<SpectralData> {
    spectral_analysis(&memory_step_map(&r.encoding.at(0.0)?, r.memory, r.readout)?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CeSettings {
    pub snr_db: f64,
    pub train_messages: usize,
    pub train_length: usize,
    pub test_messages: usize,
    pub test_length: usize,
    /// `None` uses expected features.
    pub shots: Option<u64>,
    pub reset: bool,
    /// Null-input steps before every message; `None` means `10 ceil(n_M)`.
    pub washout: Option<usize>,
    pub l2: f64,
    pub engine: Engine,
}

impl Default for CeSettings {
    fn default() -> Self {
        Self {
            snr_db: 20.0,
            train_messages: 100,
            train_length: 100,
            test_messages: 100,
            test_length: 100,
            shots: None,
            reset: true,
            washout: None,
            l2: 1e-6,
            engine: Engine::Auto,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CeOutcome {
    pub nisqrc_train: f64,
    pub nisqrc_test: f64,
    pub direct_inverse: f64,
    pub rounding: f64,
    pub logistic_u: f64,
    pub clipped: usize,
    pub inverse_fallbacks: usize,
    pub memory_time: f64,
    pub washout: usize,
    pub model: ReadoutModel,
    pub logistic_model: ReadoutModel,
}

struct Message {
    symbols: Vec<i32>,
    received: Vec<f64>,
}

fn draw_messages(seed: u64, split: &str, count: usize, length: usize, snr_db: f64) -> Result<Vec<Message>> {
    (0..count as u64)
        .map(|i| {
            let symbols = generate_message(length, derive_seed(seed, &format!("{split}-message"), i));
            let received = distort(&symbols, snr_db, derive_seed(seed, &format!("{split}-noise"), i))?;
            Ok(Message { symbols, received })
        })
        .collect()
}

/// Feature source for one reservoir variant, starting each message from the
/// washed-out state.
enum FeatureSource {
    Reset { sim: Simulator, start: DensityMatrix },
    NoReset { reservoir: Reservoir, start: DensityMatrix },
}

impl FeatureSource {
    fn new(r: Reservoir, engine: Engine, reset: bool, washout: usize) -> Result<Self> {
        if reset {
            let sim = Simulator::new(r, engine)?;
            let start = sim.washout(washout, &DensityMatrix::ground(sim.reservoir().memory))?;
            Ok(FeatureSource::Reset { sim, start })
        } else {
            let ground = DensityMatrix::ground(r.qubits());
            let start = DensityMatrix::new(run_no_reset_features(&r, &vec![0.0; washout], &ground)?.final_state)?;
            Ok(FeatureSource::NoReset { reservoir: r, start })
        }
    }

    fn features(&self, inputs: &[f64]) -> Result<FeatureSeries> {
        match self {
            FeatureSource::Reset { sim, start } => Ok(sim.run(inputs, start)?.features),
            FeatureSource::NoReset { reservoir, start } => {
                Ok(run_no_reset_features(reservoir, inputs, start)?.features)
            }
        }
    }
}

fn observed_features(
    source: &FeatureSource,
    inputs: &[Vec<f64>],
    shots: Option<u64>,
    seed: u64,
    stream: &str,
) -> Result<Array2<f64>> {
    let blocks: Vec<Array2<f64>> = inputs
        .par_iter()
        .enumerate()
        .map(|(i, u)| {
            let x = source.features(u)?;
            Ok(match shots {
                Some(s) => sample_features(&x, s, derive_seed(seed, stream, i as u64))?
                    .samples
                    .expect("sampled"),
                None => x.values,
            })
        })
        .collect::<Result<_>>()?;
    let views: Vec<_> = blocks.iter().map(|b| b.view()).collect();
    concatenate(Axis(0), &views).map_err(|e| Error::Dimension(e.to_string()))
}

/// Trains the readout on training messages and reports test error rates
/// for the reservoir and all baselines.
pub fn run_ce(spec: &ReservoirSpec, settings: &CeSettings, seed: u64) -> Result<CeOutcome> {
    if settings.train_messages == 0 || settings.test_messages == 0 || settings.train_length == 0 || settings.test_length == 0 {
        return Err(Error::InvalidParameter("message counts and lengths must be positive".into()));
    }
    if settings.shots == Some(0) {
        return Err(Error::InvalidParameter("shot count must be at least 1".into()));
    }
    let reservoir = spec.build(seed)?;
    let spectrum = reservoir_spectrum(&reservoir)?;
    let washout = match settings.washout {
        Some(w) => w,
        None if spectrum.memory_time.is_finite() => 10 * spectrum.memory_time.ceil() as usize,
        None => {
            return Err(Error::DegenerateSpectrum {
                lambda2_abs: spectrum.lambda2_abs,
            })
        }
    };

    let train = draw_messages(seed, "train", settings.train_messages, settings.train_length, settings.snr_db)?;
    let test = draw_messages(seed, "test", settings.test_messages, settings.test_length, settings.snr_db)?;
    let all_train_u: Vec<f64> = train.iter().flat_map(|m| m.received.iter().cloned()).collect();
    let scale = normalize_input(&all_train_u, None)?.scale;
    let train_inputs: Vec<Vec<f64>> = train
        .iter()
        .map(|m| Ok(normalize_input(&m.received, Some(scale))?.values))
        .collect::<Result<_>>()?;
    let mut clipped = 0;
    let mut test_inputs = Vec::with_capacity(test.len());
    for m in &test {
        let n = normalize_input(&m.received, Some(scale))?;
        clipped += n.clipped;
        test_inputs.push(n.values);
    }
    let train_labels: Vec<i32> = train.iter().flat_map(|m| m.symbols.iter().cloned()).collect();
    let test_labels: Vec<i32> = test.iter().flat_map(|m| m.symbols.iter().cloned()).collect();

    let source = FeatureSource::new(reservoir, settings.engine, settings.reset, washout)?;
    let x_train = observed_features(&source, &train_inputs, settings.shots, seed, "train-shots")?;
    let x_test = observed_features(&source, &test_inputs, settings.shots, seed, "test-shots")?;
    let opts = FitOptions {
        l2: settings.l2,
        ..FitOptions::default()
    };
    let mut model = fit_softmax_readout(x_train.view(), &train_labels, FeatureKind::Probability, &opts)?;
    model.u_scale = Some(scale);
    let nisqrc_train = model.diagnostics.train_error;
    let nisqrc_test = error_rate(&model.predict(x_test.view())?, &test_labels)?;

    let flat_train: Vec<f64> = train_inputs.concat();
    let flat_test: Vec<f64> = test_inputs.concat();
    let mut logistic_model = fit_logistic_on_u(&flat_train, &train_labels, &opts)?;
    logistic_model.u_scale = Some(scale);
    let logistic_u = error_rate(&logistic_model.predict_u(&flat_test)?, &test_labels)?;

    let channel = ChannelModel::default();
    let mut di_pred = Vec::with_capacity(test_labels.len());
    let mut fallbacks = 0;
    let mut round_pred = Vec::with_capacity(test_labels.len());
    for m in &test {
        let di = direct_inverse_baseline(&m.received, &channel)?;
        fallbacks += di.fallbacks.len();
        di_pred.extend(di.symbols);
        round_pred.extend(rounding_baseline(&m.received));
    }
    Ok(CeOutcome {
        nisqrc_train,
        nisqrc_test,
        direct_inverse: error_rate(&di_pred, &test_labels)?,
        rounding: error_rate(&round_pred, &test_labels)?,
        logistic_u,
        clipped,
        inverse_fallbacks: fallbacks,
        memory_time: spectrum.memory_time,
        washout,
        model,
        logistic_model,
    })
}
