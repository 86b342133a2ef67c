//! Eavesdropper models: beam splitting and state cloning.
//!
//! In the splitting attack Eve taps Bob's mode with a beam splitter of
//! amplitudes `(p, q)`. Conditional on `n` photons in the mode, Bob keeps a
//! binomial(`n`, `p²`) share and Eve the rest, which sums to
//!
//! ```text
//! P̃_m^B = |λ|^m p^{2m} I_m(2q|λ|) / (q^m m! I_0(2|λ|))
//! ```
//!
//! In the cloning attack Eve counts `n` photons in Bob's mode and re-emits a
//! replacement state: `n` single photons, a coherent pulse with mean `n`, or
//! one mode of a TMCC beam tuned so its mean is `n`.

use std::fmt;
use std::str::FromStr;

use rand_distr::{Binomial, Distribution};
use statrs::function::factorial::ln_factorial;
use thiserror::Error;

use crate::density_ops::DiagonalDensityMatrix;
use crate::photon_stats::{
    bessel_ratio, ln_bessel_i, poisson_distribution, tmcc_distribution, tmcc_mean, IntensityParam, PhotonDistribution,
    StatsError, TmccLaw, MAX_LAMBDA, TAIL_EPS,
};
use crate::tmcc_source::{
    InverseCdfSampler, PulseRecord, PulseRng, PulseSource, SourceConfig, SourceError, TmccSource,
};

/// Tolerance on `p² + q² = 1`.
pub const SPLIT_NORM_TOL: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum AttackError {
    #[error("invalid split ratio: {0}")]
    InvalidSplit(String),
    #[error("mean photon number {target} is not reachable with |λ| <= {MAX_LAMBDA} (max mean {max_mean})")]
    Unreachable { target: u32, max_mean: f64 },
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error(transparent)]
    Source(#[from] SourceError),
}

/// Beam-splitter amplitudes: `p` toward Bob, `q` toward Eve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitRatio {
    p: f64,
    q: f64,
}

impl SplitRatio {
    pub fn new(p: f64, q: f64) -> Result<Self, AttackError> {
        let in_unit = |x: f64| x.is_finite() && (0.0..=1.0).contains(&x);
        if !in_unit(p) || !in_unit(q) {
            return Err(AttackError::InvalidSplit(format!("amplitudes must lie in [0, 1]: p={p}, q={q}")));
        }
        if (p * p + q * q - 1.0).abs() > SPLIT_NORM_TOL {
            return Err(AttackError::InvalidSplit(format!("p² + q² = {} != 1", p * p + q * q)));
        }
        Ok(SplitRatio { p, q })
    }

    pub fn from_p(p: f64) -> Result<Self, AttackError> {
        Self::new(p, (1.0 - p * p).max(0.0).sqrt())
    }

    /// From Bob's intensity share `p²`.
    pub fn from_p_squared(p2: f64) -> Result<Self, AttackError> {
        if !(p2.is_finite() && (0.0..=1.0).contains(&p2)) {
            return Err(AttackError::InvalidSplit(format!("p² must lie in [0, 1], got {p2}")));
        }
        Self::new(p2.sqrt(), (1.0 - p2).sqrt())
    }

    /// `p = cos ψ`, `q = sin ψ` for `ψ ∈ [0, π/2]`.
    pub fn from_angle(psi: f64) -> Result<Self, AttackError> {
        if !(0.0..=std::f64::consts::FRAC_PI_2).contains(&psi) {
            return Err(AttackError::InvalidSplit(format!("ψ must lie in [0, π/2], got {psi}")));
        }
        if psi == std::f64::consts::FRAC_PI_2 {
            return Self::new(0.0, 1.0);
        }
        Self::new(psi.cos(), psi.sin())
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn q(&self) -> f64 {
        self.q
    }

    /// Fraction `p²` of the photons that reach Bob.
    pub fn bob_fraction(&self) -> f64 {
        self.p * self.p
    }

    pub fn swapped(&self) -> Self {
        SplitRatio { p: self.q, q: self.p }
    }
}

/// Bob's photon-number law after the splitter.
pub fn split_marginal_bob(
    lambda: IntensityParam,
    ratio: SplitRatio,
    tail_eps: f64,
) -> Result<PhotonDistribution, AttackError> {
    let unsplit = tmcc_distribution(lambda, tail_eps)?;
    let (p, q) = (ratio.p, ratio.q);
    if q == 0.0 {
        return Ok(unsplit);
    }
    if p == 0.0 || lambda.is_vacuum() {
        return Ok(PhotonDistribution::vacuum());
    }
    // Bob never counts more photons than the mode carried, so the unsplit
    // cutoff already bounds his tail.
    let l = lambda.magnitude();
    let ln_i0 = TmccLaw::new(lambda).ln_i0();
    let x = 2.0 * q * l;
    let (ln_l, ln_p, ln_q) = (l.ln(), p.ln(), q.ln());
    let probs = (0..=unsplit.cutoff())
        .map(|m| {
            let mf = m as f64;
            let ln_im = ln_bessel_i(m as u32, x)?;
            Ok((mf * ln_l + 2.0 * mf * ln_p + ln_im - mf * ln_q - ln_factorial(m as u64) - ln_i0).exp())
        })
        .collect::<Result<Vec<f64>, StatsError>>()?;
    Ok(PhotonDistribution::from_truncated(probs))
}

/// Eve's photon-number law after the splitter (Bob's with `p` and `q` exchanged).
pub fn split_marginal_eve(
    lambda: IntensityParam,
    ratio: SplitRatio,
    tail_eps: f64,
) -> Result<PhotonDistribution, AttackError> {
    split_marginal_bob(lambda, ratio.swapped(), tail_eps)
}

/// Source with Eve's splitter on Bob's line. Alice's count is the full `n`.
#[derive(Debug, Clone)]
pub struct SplitSource {
    source: TmccSource,
    ratio: SplitRatio,
}

impl SplitSource {
    pub fn new(config: SourceConfig, ratio: SplitRatio) -> Result<Self, AttackError> {
        Ok(SplitSource { source: TmccSource::new(config)?, ratio })
    }

    pub fn ratio(&self) -> SplitRatio {
        self.ratio
    }
}

impl PulseSource for SplitSource {
    fn config(&self) -> &SourceConfig {
        self.source.config()
    }

    fn sample_pulse(&self, rng: &mut PulseRng) -> PulseRecord {
        let n = self.source.draw_photon_number(rng);
        let share = self.ratio.bob_fraction();
        let to_bob = if self.ratio.q == 0.0 {
            n
        } else if self.ratio.p == 0.0 {
            0
        } else {
            Binomial::new(u64::from(n), share).expect("p² lies in (0, 1)").sample(rng) as u32
        };
        let mut record = PulseRecord { n_a: n, n_b: to_bob, n_e: n - to_bob, ..Default::default() };
        self.source.apply_noise(rng, &mut record);
        record
    }
}

/// The `|λ|` whose TMCC mean photon number equals `n`.
///
/// Safeguarded Newton iteration on `⟨N⟩(λ) = n`, using
/// `d⟨N⟩/dλ = 2σ²/λ = 2λ(1 − (I_1/I_0)²)`, with bisection whenever a step
/// leaves the current bracket.
pub fn lambda_of_n(n: u32) -> Result<IntensityParam, AttackError> {
    if n == 0 {
        return Ok(IntensityParam::ZERO);
    }
    let target = f64::from(n);
    let max_mean = tmcc_mean(MAX_LAMBDA);
    if target > max_mean {
        return Err(AttackError::Unreachable { target: n, max_mean });
    }
    let (mut lo, mut hi) = (0.0_f64, MAX_LAMBDA);
    let mut x = (target + 0.25).min(MAX_LAMBDA);
    for _ in 0..200 {
        let r = bessel_ratio(x);
        let f = x * r - target;
        if f > 0.0 {
            hi = x;
        } else {
            lo = x;
        }
        let slope = 2.0 * x * (1.0 - r * r);
        let mut next = x - f / slope;
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        let step = (next - x).abs();
        x = next;
        if step <= 1e-14 * x.max(1.0) || hi - lo <= 1e-14 * x.max(1.0) {
            break;
        }
    }
    Ok(IntensityParam::new(x)?)
}

/// How Eve re-emits the state she measured.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CloneStrategy {
    /// Switches on exactly `n` single-photon emitters.
    SinglePhotonBank,
    /// Coherent laser whose mean photon number is set to `n`.
    Coherent,
    /// TMCC source at `λ(n)`; one mode goes to Bob, the other is discarded.
    TmccClone,
}

impl CloneStrategy {
    pub const ALL: [CloneStrategy; 3] =
        [CloneStrategy::SinglePhotonBank, CloneStrategy::Coherent, CloneStrategy::TmccClone];

    pub fn as_str(self) -> &'static str {
        match self {
            CloneStrategy::SinglePhotonBank => "single-photon-bank",
            CloneStrategy::Coherent => "coherent",
            CloneStrategy::TmccClone => "tmcc-clone",
        }
    }

    /// Whether Bob can expose this clone by something other than photon
    /// counting. A coherent clone has a well-defined phase an interference
    /// check reveals; a bank of single-photon emitters is exposed only if
    /// Bob's detector can tell `n` independent photons from an `n`-photon
    /// Fock state, which is the caller's assumption to make.
    pub fn detectable_beyond_counting(self, assume_mixture_detectable: bool) -> bool {
        match self {
            CloneStrategy::SinglePhotonBank => assume_mixture_detectable,
            CloneStrategy::Coherent => true,
            CloneStrategy::TmccClone => false,
        }
    }
}

impl fmt::Display for CloneStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CloneStrategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let normalized = s.trim().to_ascii_lowercase().replace('_', "-");
        CloneStrategy::ALL.into_iter().find(|c| c.as_str() == normalized).ok_or_else(|| {
            format!("unknown clone strategy `{s}` (expected single-photon-bank, coherent or tmcc-clone)")
        })
    }
}

/// Law of Bob's count given that Eve measured `n` and re-emitted.
fn clone_inner_law(strategy: CloneStrategy, n: u32, tail_eps: f64) -> Result<PhotonDistribution, AttackError> {
    Ok(match strategy {
        CloneStrategy::SinglePhotonBank => PhotonDistribution::point_mass(n as usize),
        CloneStrategy::Coherent => poisson_distribution(f64::from(n), tail_eps)?,
        CloneStrategy::TmccClone => tmcc_distribution(lambda_of_n(n)?, tail_eps)?,
    })
}

/// Bob's density matrix under a cloning attack: the mixture over Eve's
/// measured `n` of the re-emitted laws, weighted by the TMCC law `P_n(λ)`.
///
/// The mixture is renormalized after summation; the mass that had to be
/// redistributed is returned as the matrix's error bound.
pub fn cloned_bob_matrix(
    lambda: IntensityParam,
    strategy: CloneStrategy,
    tail_eps: f64,
) -> Result<DiagonalDensityMatrix, AttackError> {
    let outer = tmcc_distribution(lambda, tail_eps)?;
    if strategy == CloneStrategy::SinglePhotonBank {
        return Ok(DiagonalDensityMatrix::new(outer));
    }
    let mut mixed: Vec<f64> = Vec::new();
    for (n, &weight) in outer.probs().iter().enumerate() {
        if weight == 0.0 {
            continue;
        }
        let inner = clone_inner_law(strategy, n as u32, tail_eps)?;
        if mixed.len() < inner.probs().len() {
            mixed.resize(inner.probs().len(), 0.0);
        }
        for (acc, p) in mixed.iter_mut().zip(inner.probs()) {
            *acc += weight * p;
        }
    }
    let total: f64 = mixed.iter().sum();
    let folded = (1.0 - total).abs();
    let probs = mixed.into_iter().map(|p| p / total).collect();
    let diag = PhotonDistribution::new(probs, 0.0)?;
    Ok(DiagonalDensityMatrix::with_error_bound(diag, folded))
}

/// Source with Eve's measure-and-re-emit station on Bob's line. Alice and Eve
/// both count the original `n`; Bob counts the clone.
#[derive(Debug, Clone)]
pub struct CloneSource {
    source: TmccSource,
    strategy: CloneStrategy,
    // Indexed by Eve's count; empty for the single-photon bank.
    inner: Vec<InverseCdfSampler>,
}

impl CloneSource {
    pub fn new(config: SourceConfig, strategy: CloneStrategy) -> Result<Self, AttackError> {
        let source = TmccSource::new(config)?;
        let inner = match strategy {
            CloneStrategy::SinglePhotonBank => Vec::new(),
            _ => {
                let cutoff = tmcc_distribution(config.lambda, TAIL_EPS)?.cutoff() as u32;
                (0..=cutoff)
                    .map(|n| clone_inner_law(strategy, n, TAIL_EPS).map(|d| InverseCdfSampler::new(&d)))
                    .collect::<Result<_, _>>()?
            }
        };
        Ok(CloneSource { source, strategy, inner })
    }

    pub fn strategy(&self) -> CloneStrategy {
        self.strategy
    }
}

impl PulseSource for CloneSource {
    fn config(&self) -> &SourceConfig {
        self.source.config()
    }

    fn sample_pulse(&self, rng: &mut PulseRng) -> PulseRecord {
        let n = self.source.draw_photon_number(rng);
        let cloned = match self.inner.get(n as usize) {
            Some(sampler) => sampler.sample(rng),
            None => n,
        };
        let mut record = PulseRecord { n_a: n, n_b: cloned, n_e: n, ..Default::default() };
        self.source.apply_noise(rng, &mut record);
        record
    }
}
