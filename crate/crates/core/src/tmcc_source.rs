//! Monte Carlo model of the TMCC source feeding Alice and Bob.
//!
//! Each pulse carries one photon number `n` drawn from the TMCC law; both
//! modes see the same `n`. Thermal noise may add one photon to a mode. The
//! channel itself is lossless.
//!
//! Randomness comes from [`PulseRng`] (ChaCha with 8 rounds, seeded through
//! `seed_from_u64`), which is value-stable across platforms and releases.
//! Parallel runs use independent generators seeded by [`derive_seed`].

use std::io::{self, BufRead, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::photon_stats::{tmcc_distribution, IntensityParam, PhotonDistribution, StatsError, TAIL_EPS};

pub type PulseRng = ChaCha8Rng;

/// Largest accepted per-mode noise probability.
pub const MAX_NOISE_EPSILON: f64 = 0.5;

pub const PULSE_CSV_HEADER: &str = "pulse_index,n_a,n_b,n_e,noise_a,noise_b";

#[derive(Debug, Error)]
pub enum SourceError {
    #[error("noise epsilon must lie in [0, {MAX_NOISE_EPSILON}], got {0}")]
    InvalidEpsilon(f64),
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error("pulse log line {line}: {msg}")]
    Csv { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub fn pulse_rng(seed: u64) -> PulseRng {
    PulseRng::seed_from_u64(seed)
}

/// SplitMix64 mix of a base seed and a stream index.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// How thermal noise photons are distributed over the two modes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NoiseModel {
    /// Each mode independently gains one photon with probability ε.
    #[default]
    Independent,
    /// With probability ε a single noise photon lands in one of the two
    /// modes, chosen uniformly.
    OnePhotonTotal,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SourceConfig {
    pub lambda: IntensityParam,
    noise_epsilon: f64,
    pub seed: u64,
    pub noise_model: NoiseModel,
}

impl SourceConfig {
    pub fn new(lambda: IntensityParam, noise_epsilon: f64, seed: u64) -> Result<Self, SourceError> {
        if !(0.0..=MAX_NOISE_EPSILON).contains(&noise_epsilon) {
            return Err(SourceError::InvalidEpsilon(noise_epsilon));
        }
        Ok(SourceConfig { lambda, noise_epsilon, seed, noise_model: NoiseModel::Independent })
    }

    pub fn with_noise_model(mut self, model: NoiseModel) -> Self {
        self.noise_model = model;
        self
    }

    pub fn noise_epsilon(&self) -> f64 {
        self.noise_epsilon
    }
}

/// What Alice, Bob and Eve counted for one pulse.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct PulseRecord {
    pub n_a: u32,
    pub n_b: u32,
    pub n_e: u32,
    pub noise_a: bool,
    pub noise_b: bool,
}

/// Inverse-CDF lookup table over a truncated distribution. The tail mass is
/// folded into the last bin.
#[derive(Debug, Clone)]
pub struct InverseCdfSampler {
    cdf: Vec<f64>,
}

impl InverseCdfSampler {
    pub fn new(dist: &PhotonDistribution) -> Self {
        let total: f64 = dist.probs().iter().sum();
        let mut acc = 0.0;
        let mut cdf: Vec<f64> = dist
            .probs()
            .iter()
            .map(|p| {
                acc += p;
                acc / total
            })
            .collect();
        *cdf.last_mut().expect("distribution is nonempty") = 1.0;
        InverseCdfSampler { cdf }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> u32 {
        let u: f64 = rng.random();
        let idx = self.cdf.partition_point(|&c| c <= u);
        idx.min(self.cdf.len() - 1) as u32
    }
}

/// Anything that produces pulse records from a random stream.
pub trait PulseSource {
    fn config(&self) -> &SourceConfig;

    fn sample_pulse(&self, rng: &mut PulseRng) -> PulseRecord;

    /// `count` pulses from a generator seeded with the config seed.
    fn pulses(&self, count: usize) -> Vec<PulseRecord> {
        let mut rng = pulse_rng(self.config().seed);
        (0..count).map(|_| self.sample_pulse(&mut rng)).collect()
    }
}

/// The unattacked source: Alice and Bob share one photon number per pulse.
#[derive(Debug, Clone)]
pub struct TmccSource {
    config: SourceConfig,
    sampler: InverseCdfSampler,
}

impl TmccSource {
    pub fn new(config: SourceConfig) -> Result<Self, SourceError> {
        let dist = tmcc_distribution(config.lambda, TAIL_EPS)?;
        Ok(TmccSource { config, sampler: InverseCdfSampler::new(&dist) })
    }

    pub fn draw_photon_number(&self, rng: &mut PulseRng) -> u32 {
        self.sampler.sample(rng)
    }

    /// Adds thermal noise photons to Alice's and Bob's counts.
    pub fn apply_noise(&self, rng: &mut PulseRng, record: &mut PulseRecord) {
        let eps = self.config.noise_epsilon;
        match self.config.noise_model {
            NoiseModel::Independent => {
                record.noise_a = rng.random_bool(eps);
                record.noise_b = rng.random_bool(eps);
            }
            NoiseModel::OnePhotonTotal => {
                if rng.random_bool(eps) {
                    if rng.random_bool(0.5) {
                        record.noise_a = true;
                    } else {
                        record.noise_b = true;
                    }
                }
            }
        }
        record.n_a += u32::from(record.noise_a);
        record.n_b += u32::from(record.noise_b);
    }
}

impl PulseSource for TmccSource {
    fn config(&self) -> &SourceConfig {
        &self.config
    }

    fn sample_pulse(&self, rng: &mut PulseRng) -> PulseRecord {
        let n = self.draw_photon_number(rng);
        let mut record = PulseRecord { n_a: n, n_b: n, ..PulseRecord::default() };
        self.apply_noise(rng, &mut record);
        record
    }
}

/// Sample cross-covariance and relative correlation of Alice's and Bob's counts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Correlation {
    pub g_ab: f64,
    pub rho_ab: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CorrelationError {
    #[error("need at least 2 pulses, got {0}")]
    TooFewPulses(usize),
    #[error("a margin has zero sample variance; correlation is undefined")]
    Degenerate,
}

/// Sample statistics are accumulated in exact integer arithmetic, so a
/// perfectly correlated log gives `rho_ab == 1.0` exactly.
pub fn correlation_report(pulses: &[PulseRecord]) -> Result<Correlation, CorrelationError> {
    let n = pulses.len();
    if n < 2 {
        return Err(CorrelationError::TooFewPulses(n));
    }
    let (mut sa, mut sb, mut saa, mut sbb, mut sab) = (0i128, 0i128, 0i128, 0i128, 0i128);
    for p in pulses {
        let (a, b) = (i128::from(p.n_a), i128::from(p.n_b));
        sa += a;
        sb += b;
        saa += a * a;
        sbb += b * b;
        sab += a * b;
    }
    let count = n as i128;
    let cov = count * sab - sa * sb;
    let var_a = count * saa - sa * sa;
    let var_b = count * sbb - sb * sb;
    if var_a == 0 || var_b == 0 {
        return Err(CorrelationError::Degenerate);
    }
    let norm = (count * (count - 1)) as f64;
    let rho_ab = cov as f64 / ((var_a as f64) * (var_b as f64)).sqrt();
    Ok(Correlation { g_ab: cov as f64 / norm, rho_ab })
}

pub fn write_pulse_csv<W: Write>(pulses: &[PulseRecord], mut out: W) -> io::Result<()> {
    writeln!(out, "{PULSE_CSV_HEADER}")?;
    for (i, p) in pulses.iter().enumerate() {
        writeln!(out, "{i},{},{},{},{},{}", p.n_a, p.n_b, p.n_e, u8::from(p.noise_a), u8::from(p.noise_b))?;
    }
    Ok(())
}

pub fn read_pulse_csv<R: BufRead>(input: R) -> Result<Vec<PulseRecord>, SourceError> {
    let mut lines = input.lines().enumerate();
    let header = lines.next().map(|(_, h)| h).transpose()?;
    if header.as_deref().map(str::trim) != Some(PULSE_CSV_HEADER) {
        return Err(SourceError::Csv { line: 1, msg: format!("expected header `{PULSE_CSV_HEADER}`") });
    }
    let mut pulses = Vec::new();
    for (idx, line) in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let bad = |msg: String| SourceError::Csv { line: idx + 1, msg };
        let fields: Vec<&str> = line.trim().split(',').collect();
        if fields.len() != 6 {
            return Err(bad(format!("expected 6 fields, got {}", fields.len())));
        }
        let count = |s: &str| s.parse::<u32>().map_err(|e| bad(format!("`{s}`: {e}")));
        let flag = |s: &str| match s {
            "0" => Ok(false),
            "1" => Ok(true),
            other => Err(bad(format!("noise flag must be 0 or 1, got `{other}`"))),
        };
        pulses.push(PulseRecord {
            n_a: count(fields[1])?,
            n_b: count(fields[2])?,
            n_e: count(fields[3])?,
            noise_a: flag(fields[4])?,
            noise_b: flag(fields[5])?,
        });
    }
    Ok(pulses)
}
