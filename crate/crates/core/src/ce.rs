//! Channel equalization: messages, the distortion model, input scaling and
//! the non-reservoir baselines.

use std::io::Write;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::seed::rng_for;

pub const SYMBOLS: [i32; 4] = [-3, -1, 1, 3];

/// Linear channel taps `h(0..8)`.
pub const TAPS: [f64; 8] = [1.0, 0.18, -0.1, 0.091, -0.05, 0.04, 0.03, 0.01];

/// `f(x) = x + 0.06 x² − 0.01 x³`, lowest order first.
pub const NONLINEARITY: [f64; 4] = [0.0, 1.0, 0.06, -0.01];

/// Linear filter followed by a cubic nonlinearity.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelModel {
    pub taps: Vec<f64>,
    /// Coefficients of `f`, lowest order first, at most cubic.
    pub poly: [f64; 4],
}

impl Default for ChannelModel {
    fn default() -> Self {
        Self {
            taps: TAPS.to_vec(),
            poly: NONLINEARITY,
        }
    }
}

impl ChannelModel {
    pub fn f(&self, x: f64) -> f64 {
        let [a, b, c, d] = self.poly;
        a + x * (b + x * (c + x * d))
    }

    fn df(&self, x: f64) -> f64 {
        let [_, b, c, d] = self.poly;
        b + x * (2.0 * c + 3.0 * d * x)
    }

    /// Noiseless received value `f(Σ h(k) m(n−k))`, with `m = 0` before the start.
    pub fn filter(&self, m: &[i32]) -> Vec<f64> {
        (0..m.len())
            .map(|n| {
                let x: f64 = self
                    .taps
                    .iter()
                    .enumerate()
                    .filter(|&(k, _)| k <= n)
                    .map(|(k, &h)| h * m[n - k] as f64)
                    .sum();
                self.f(x)
            })
            .collect()
    }

    /// Interval around 0 on which `f` is increasing: between the real roots
    /// of `f'` (or unbounded when `f'` has none on that side).
    pub fn monotone_branch(&self) -> (f64, f64) {
        let [_, b, c, d] = self.poly;
        if d == 0.0 {
            if c == 0.0 {
                return (f64::NEG_INFINITY, f64::INFINITY);
            }
            let root = -b / (2.0 * c);
            return if root < 0.0 {
                (root, f64::INFINITY)
            } else {
                (f64::NEG_INFINITY, root)
            };
        }
        let disc = 4.0 * c * c - 12.0 * d * b;
        if disc < 0.0 {
            return (f64::NEG_INFINITY, f64::INFINITY);
        }
        let s = disc.sqrt();
        let r1 = (-2.0 * c - s) / (6.0 * d);
        let r2 = (-2.0 * c + s) / (6.0 * d);
        (r1.min(r2), r1.max(r2))
    }

    /// `f⁻¹(u)` on the monotone branch; `None` when `u` is outside its range.
    pub fn invert(&self, u: f64) -> Option<f64> {
        let (lo, hi) = self.monotone_branch();
        let (mut a, mut b) = (lo.max(-1e6), hi.min(1e6));
        if u < self.f(a) || u > self.f(b) {
            return None;
        }
        let mut x = u.clamp(a, b);
        for _ in 0..200 {
            let fx = self.f(x) - u;
            if fx.abs() < 1e-15 * (1.0 + u.abs()) {
                break;
            }
            if fx > 0.0 {
                b = x;
            } else {
                a = x;
            }
            let step = fx / self.df(x);
            let next = x - step;
            x = if step.is_finite() && next > a && next < b {
                next
            } else {
                0.5 * (a + b)
            };
            if b - a < 1e-15 * (1.0 + x.abs()) {
                break;
            }
        }
        Some(x)
    }
}

/// `N` i.i.d. uniform symbols.
pub fn generate_message(n: usize, seed: u64) -> Vec<i32> {
    let mut rng = rng_for(seed, "message", 0);
    (0..n).map(|_| SYMBOLS[rng.random_range(0..4)]).collect()
}

/// Noise variance `10^{−SNR/10}`; infinite SNR means no noise.
pub fn noise_variance(snr_db: f64) -> f64 {
    if snr_db == f64::INFINITY {
        0.0
    } else {
        10f64.powf(-snr_db / 10.0)
    }
}

pub fn distort(m: &[i32], snr_db: f64, seed: u64) -> Result<Vec<f64>> {
    distort_with(&ChannelModel::default(), m, snr_db, seed)
}

pub fn distort_with(model: &ChannelModel, m: &[i32], snr_db: f64, seed: u64) -> Result<Vec<f64>> {
    if snr_db.is_nan() || snr_db == f64::NEG_INFINITY {
        return Err(Error::InvalidParameter(format!("SNR {snr_db} dB")));
    }
    let sigma = noise_variance(snr_db).sqrt();
    let mut rng = rng_for(seed, "noise", 0);
    Ok(model
        .filter(m)
        .into_iter()
        .map(|x| {
            let z: f64 = StandardNormal.sample(&mut rng);
            x + sigma * z
        })
        .collect())
}

/// Scaled inputs and the scale used.
#[derive(Debug, Clone, PartialEq)]
pub struct Normalized {
    pub values: Vec<f64>,
    pub scale: f64,
    /// Entries clipped to `[−1, 1]`.
    pub clipped: usize,
}

/// `ũ = u / u_scale`; `u_scale = max|u|` when not given, otherwise values
/// are clipped to `[−1, 1]`.
pub fn normalize_input(u: &[f64], scale: Option<f64>) -> Result<Normalized> {
    if u.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("received signal"));
    }
    let scale = match scale {
        Some(s) if s > 0.0 && s.is_finite() => s,
        Some(s) => return Err(Error::InvalidParameter(format!("input scale {s}"))),
        None => u.iter().fold(0.0, |m: f64, x| m.max(x.abs())),
    };
    if scale == 0.0 {
        return Err(Error::InvalidParameter("signal is identically zero".into()));
    }
    let mut clipped = 0;
    let values = u
        .iter()
        .map(|&x| {
            let v = x / scale;
            if v.abs() > 1.0 {
                clipped += 1;
                v.clamp(-1.0, 1.0)
            } else {
                v
            }
        })
        .collect();
    Ok(Normalized {
        values,
        scale,
        clipped,
    })
}

/// Nearest symbol; ties go to the smaller magnitude, and `0` maps to `−1`.
pub fn nearest_symbol(x: f64) -> i32 {
    if x < -2.0 {
        -3
    } else if x <= 0.0 {
        -1
    } else if x <= 2.0 {
        1
    } else {
        3
    }
}

pub fn rounding_baseline(u: &[f64]) -> Vec<i32> {
    u.iter().map(|&x| nearest_symbol(x)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct DirectInverse {
    pub symbols: Vec<i32>,
    /// Samples outside the range of the monotone branch; these use the
    /// nearer branch endpoint.
    pub fallbacks: Vec<usize>,
}

/// `f⁻¹` sample by sample, then the causal recursive inverse of the taps:
/// `y(n) = (x̂(n) − Σ_{k≥1} h(k) y(n−k)) / h(0)`, rounded to symbols.
pub fn direct_inverse_baseline(u: &[f64], model: &ChannelModel) -> Result<DirectInverse> {
    let h = &model.taps;
    if h.is_empty() || h[0] == 0.0 {
        return Err(Error::InvalidParameter("leading channel tap must be nonzero".into()));
    }
    let (lo, hi) = model.monotone_branch();
    let mut fallbacks = Vec::new();
    let xhat: Vec<f64> = u
        .iter()
        .enumerate()
        .map(|(n, &v)| {
            model.invert(v).unwrap_or_else(|| {
                fallbacks.push(n);
                if v < model.f(lo.max(-1e6)) {
                    lo
                } else {
                    hi
                }
            })
        })
        .collect();
    let mut y = vec![0.0; u.len()];
    for n in 0..u.len() {
        let mut acc = xhat[n];
        for (k, &hk) in h.iter().enumerate().skip(1).filter(|&(k, _)| k <= n) {
            acc -= hk * y[n - k];
        }
        y[n] = acc / h[0];
    }
    Ok(DirectInverse {
        symbols: y.into_iter().map(nearest_symbol).collect(),
        fallbacks,
    })
}

pub fn error_rate(pred: &[i32], truth: &[i32]) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(Error::Dimension(format!(
            "{} predictions for {} symbols",
            pred.len(),
            truth.len()
        )));
    }
    if truth.is_empty() {
        return Err(Error::InvalidParameter("empty symbol sequence".into()));
    }
    let wrong = pred.iter().zip(truth).filter(|(a, b)| a != b).count();
    Ok(wrong as f64 / truth.len() as f64)
}

/// One message with its received and scaled signals.
#[derive(Debug, Clone, PartialEq)]
pub struct CeDataset {
    pub message: Vec<i32>,
    pub received: Vec<f64>,
    pub normalized: Normalized,
    pub snr_db: f64,
}

impl CeDataset {
    /// CSV with columns `n,m,u,u_norm`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "n,m,u,u_norm")?;
        for (n, ((m, u), v)) in self
            .message
            .iter()
            .zip(&self.received)
            .zip(&self.normalized.values)
            .enumerate()
        {
            writeln!(w, "{},{m},{u},{v}", n + 1)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn messages_are_reproducible_and_uniform() {
        assert_eq!(generate_message(4, 9), generate_message(4, 9));
        let m = generate_message(10_000, 1);
        assert!(m.iter().all(|s| SYMBOLS.contains(s)));
        let sigma = (10_000.0f64 * 0.25 * 0.75).sqrt();
        for s in SYMBOLS {
            let c = m.iter().filter(|&&x| x == s).count() as f64;
            assert!((c - 2500.0).abs() < 3.0 * sigma, "{s}: {c}");
        }
    }

    #[test]
    fn constant_message_without_noise() {
        let m = vec![1; 20];
        let u = distort(&m, f64::INFINITY, 0).unwrap();
        let sum: f64 = TAPS.iter().sum();
        let oracle = sum + 0.06 * sum * sum - 0.01 * sum * sum * sum;
        assert!((u[19] - oracle).abs() < 1e-14);
        assert!((sum - 1.201).abs() < 1e-12);
        let single = distort(&[3], f64::INFINITY, 0).unwrap();
        assert!((single[0] - (3.0 + 0.54 - 0.27)).abs() < 1e-14);
    }

    #[test]
    fn noise_has_requested_variance() {
        assert!((noise_variance(20.0) - 1e-2).abs() < 1e-18);
        let m = generate_message(20_000, 3);
        let clean = distort(&m, f64::INFINITY, 4).unwrap();
        let noisy = distort(&m, 20.0, 4).unwrap();
        let var: f64 = clean.iter().zip(&noisy).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / 20_000.0;
        assert!((var - 0.01).abs() < 0.0005, "{var}");
        assert_eq!(noisy, distort(&m, 20.0, 4).unwrap());
    }

    #[test]
    fn normalization() {
        let n = normalize_input(&[2.0, -4.0], None).unwrap();
        assert_eq!(n.scale, 4.0);
        assert_eq!(n.values, vec![0.5, -1.0]);
        let again = normalize_input(&[1.0, -3.0, 8.0], Some(4.0)).unwrap();
        assert_eq!(again.values, vec![0.25, -0.75, 1.0]);
        assert_eq!(again.clipped, 1);
        assert!(normalize_input(&[0.0, 0.0], None).is_err());
        assert!(normalize_input(&[f64::NAN], None).is_err());
    }

    #[test]
    fn clip_rate_is_small_at_20db() {
        let train: Vec<f64> = (0..100)
            .flat_map(|i| distort(&generate_message(100, 100 + i), 20.0, 200 + i).unwrap())
            .collect();
        let scale = normalize_input(&train, None).unwrap().scale;
        let mut clipped = 0;
        for i in 0..100 {
            let u = distort(&generate_message(100, 300 + i), 20.0, 400 + i).unwrap();
            clipped += normalize_input(&u, Some(scale)).unwrap().clipped;
        }
        assert!((clipped as f64) < 0.01 * 10_000.0, "{clipped}");
    }

    #[test]
    fn rounding_examples() {
        assert_eq!(rounding_baseline(&[0.9, -2.1, 2.0, -2.0, 0.0, 7.0]), vec![1, -3, 1, -1, -1, 3]);
    }

    #[test]
    fn branch_of_default_nonlinearity() {
        let model = ChannelModel::default();
        let (lo, hi) = model.monotone_branch();
        // Roots of f'(x) = 1 + 0.12x − 0.03x².
        let r = (0.0144f64 + 0.12).sqrt();
        assert!((lo - (0.12 - r) / 0.06).abs() < 1e-12);
        assert!((hi - (0.12 + r) / 0.06).abs() < 1e-12);
        for x in [-4.0, -1.0, 0.0, 2.5, 8.0] {
            assert!((model.invert(model.f(x)).unwrap() - x).abs() < 1e-12);
        }
        assert!(model.invert(-3.0).is_none());
    }

    #[test]
    fn direct_inverse_is_exact_without_noise() {
        let model = ChannelModel::default();
        let m = generate_message(1000, 5);
        let u = distort(&m, f64::INFINITY, 6).unwrap();
        let di = direct_inverse_baseline(&u, &model).unwrap();
        assert!(di.fallbacks.is_empty());
        assert_eq!(error_rate(&di.symbols, &m).unwrap(), 0.0);
    }

    #[test]
    fn identity_channel_inverse_is_rounding() {
        let model = ChannelModel {
            taps: vec![1.0],
            poly: [0.0, 1.0, 0.0, 0.0],
        };
        let u = [0.3, -2.5, 2.9, -0.1, 1.7];
        let di = direct_inverse_baseline(&u, &model).unwrap();
        assert_eq!(di.symbols, rounding_baseline(&u));
    }

    #[test]
    fn error_rate_cases() {
        assert_eq!(error_rate(&[1, 3], &[1, 3]).unwrap(), 0.0);
        let mut p = vec![1; 20];
        p[4] = 3;
        assert_eq!(error_rate(&p, &[1; 20]).unwrap(), 0.05);
        assert!(error_rate(&[1], &[1, 1]).is_err());
        let a = generate_message(20_000, 7);
        let b = generate_message(20_000, 8);
        let e = error_rate(&a, &b).unwrap();
        let sigma = (0.75f64 * 0.25 / 20_000.0).sqrt();
        assert!((e - 0.75).abs() < 4.0 * sigma);
    }

    #[test]
    fn dataset_csv() {
        let d = CeDataset {
            message: vec![1, -3],
            received: vec![0.5, -2.0],
            normalized: normalize_input(&[0.5, -2.0], None).unwrap(),
            snr_db: 20.0,
        };
        let mut buf = Vec::new();
        d.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "n,m,u,u_norm\n1,1,0.5,0.25\n2,-3,-2,-1\n");
    }

    proptest! {
        #[test]
        fn rounding_returns_nearest(x in -6.0f64..6.0) {
            let s = nearest_symbol(x);
            let d = (x - s as f64).abs();
            for t in SYMBOLS {
                prop_assert!(d <= (x - t as f64).abs() + 1e-12);
            }
        }

        #[test]
        fn inverse_roundtrip_on_branch(x in -4.1f64..8.1) {
            let model = ChannelModel::default();
            let back = model.invert(model.f(x)).unwrap();
            prop_assert!((back - x).abs() < 1e-9);
        }

        #[test]
        fn distortion_is_deterministic(seed in 0u64..1000, snr in 0.0f64..40.0) {
            let m = generate_message(30, seed);
            prop_assert_eq!(distort(&m, snr, seed).unwrap(), distort(&m, snr, seed).unwrap());
        }
    }
}
