//! Photon-number statistics of a TMCC beam and of the reference coherent
//! (Poisson) beam.
//!
//! A TMCC source puts the same photon number into both modes, so each mode on
//! its own is described by the diagonal law
//!
//! ```text
//! P_n(λ) = |λ|^{2n} / (I_0(2|λ|) · (n!)²)
//! ```
//!
//! with `⟨N⟩ = |λ|·I_1(2|λ|)/I_0(2|λ|)` and `⟨N²⟩ = |λ|²`. Everything here is
//! evaluated in log space so that photon numbers up to a few hundred stay
//! representable.

use statrs::function::factorial::ln_factorial;
use thiserror::Error;

/// Ceiling on `|λ|`; keeps every series and table bounded.
pub const MAX_LAMBDA: f64 = 50.0;

/// Default truncation threshold for the tail of a distribution.
pub const TAIL_EPS: f64 = 1e-12;

/// Largest tail threshold accepted by the distribution builders.
pub const MAX_TAIL_EPS: f64 = 1e-6;

/// Tolerance on `sum(probs) + tail_mass == 1`.
pub const NORMALIZATION_TOL: f64 = 1e-12;

/// Hard limit on a TMCC cutoff; reaching it means the tail bound is broken.
pub const MAX_CUTOFF: usize = 10 * (MAX_LAMBDA as usize) + 100;

const MAX_SERIES_TERMS: u32 = 10_000;
// Running Bessel sums are divided by this whenever they exceed it.
const RESCALE: f64 = 1e280;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StatsError {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("I_{order}({x}) overflows f64; use ln_bessel_i or bessel_i_scaled")]
    Overflow { order: u32, x: f64 },
    #[error("intensity |λ| = {0} is outside [0, {MAX_LAMBDA}]")]
    InvalidIntensity(f64),
    #[error("tail_eps must lie in (0, {MAX_TAIL_EPS}], got {0}")]
    InvalidTailEps(f64),
    #[error("no cutoff up to n = {limit} brings the tail below {tail_eps}")]
    CutoffNotFound { limit: usize, tail_eps: f64 },
    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),
}

/// Magnitude `|λ|` of the TMCC state parameter. The phase never enters a
/// photon-counting observable and is not stored.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Default)]
pub struct IntensityParam(f64);

impl IntensityParam {
    pub const ZERO: IntensityParam = IntensityParam(0.0);

    pub fn new(magnitude: f64) -> Result<Self, StatsError> {
        Self::with_ceiling(magnitude, MAX_LAMBDA)
    }

    /// Like [`IntensityParam::new`] but with a caller-chosen ceiling, which
    /// may not exceed [`MAX_LAMBDA`].
    pub fn with_ceiling(magnitude: f64, ceiling: f64) -> Result<Self, StatsError> {
        let ceiling = ceiling.min(MAX_LAMBDA);
        if magnitude.is_finite() && (0.0..=ceiling).contains(&magnitude) {
            Ok(IntensityParam(magnitude))
        } else {
            Err(StatsError::InvalidIntensity(magnitude))
        }
    }

    pub fn magnitude(self) -> f64 {
        self.0
    }

    pub fn is_vacuum(self) -> bool {
        self.0 == 0.0
    }
}

/// Natural log of the modified Bessel function of the first kind, `ln I_n(x)`.
///
/// Summed directly from the power series
/// `I_n(x) = Σ_k (x/2)^{2k+n} / (k!·(k+n)!)`; the leading factor is kept in
/// log space and the running sum is rescaled whenever it grows past `1e280`,
/// so this never overflows. Returns `-inf` for `I_n(0)` with `n ≥ 1`.
pub fn ln_bessel_i(order: u32, x: f64) -> Result<f64, StatsError> {
    if x.is_nan() || x < 0.0 {
        return Err(StatsError::Domain(format!("I_n(x) requires x >= 0, got {x}")));
    }
    if x > 2.0 * MAX_LAMBDA {
        return Err(StatsError::Domain(format!("I_n(x) is only supported for x <= {}, got {x}", 2.0 * MAX_LAMBDA)));
    }
    if x == 0.0 {
        return Ok(if order == 0 { 0.0 } else { f64::NEG_INFINITY });
    }

    let half = 0.5 * x;
    let quarter_sq = half * half;
    let n = f64::from(order);
    let lead = n * half.ln() - ln_factorial(u64::from(order));

    let mut term = 1.0_f64;
    let mut sum = 1.0_f64;
    let mut rescales = 0i32;
    for k in 1..=MAX_SERIES_TERMS {
        let kf = f64::from(k);
        let denom = kf * (kf + n);
        term *= quarter_sq / denom;
        sum += term;
        if sum > RESCALE {
            sum /= RESCALE;
            term /= RESCALE;
            rescales += 1;
        }
        // Past the peak every later ratio is smaller, so the remainder is
        // bounded by a geometric series well under one ulp of the sum.
        if denom > quarter_sq && term < sum * 1e-17 {
            break;
        }
    }
    Ok(lead + sum.ln() + f64::from(rescales) * RESCALE.ln())
}

/// Modified Bessel function of the first kind `I_n(x)`.
pub fn bessel_i(order: u32, x: f64) -> Result<f64, StatsError> {
    let value = ln_bessel_i(order, x)?.exp();
    if value.is_infinite() {
        return Err(StatsError::Overflow { order, x });
    }
    Ok(value)
}

/// Exponentially scaled `e^{-x}·I_n(x)`.
pub fn bessel_i_scaled(order: u32, x: f64) -> Result<f64, StatsError> {
    Ok((ln_bessel_i(order, x)? - x).exp())
}

/// Truncated probability vector over photon numbers `0..=cutoff`.
///
/// The mass that was cut off is kept in `tail_mass`. The same type is used as
/// the diagonal of a density matrix in [`crate::density_ops`].
#[derive(Debug, Clone, PartialEq)]
pub struct PhotonDistribution {
    probs: Vec<f64>,
    tail_mass: f64,
}

impl PhotonDistribution {
    /// Validates and wraps an explicit probability vector.
    pub fn new(probs: Vec<f64>, tail_mass: f64) -> Result<Self, StatsError> {
        if probs.is_empty() {
            return Err(StatsError::InvalidDistribution("empty probability vector".into()));
        }
        if let Some((n, p)) = probs.iter().enumerate().find(|(_, p)| !(p.is_finite() && **p >= 0.0)) {
            return Err(StatsError::InvalidDistribution(format!("probs[{n}] = {p}")));
        }
        if !(tail_mass.is_finite() && (0.0..=MAX_TAIL_EPS).contains(&tail_mass)) {
            return Err(StatsError::InvalidDistribution(format!("tail_mass = {tail_mass}")));
        }
        let total: f64 = probs.iter().sum::<f64>() + tail_mass;
        if (total - 1.0).abs() > NORMALIZATION_TOL {
            return Err(StatsError::InvalidDistribution(format!("probabilities sum to {total}, expected 1")));
        }
        Ok(PhotonDistribution { probs, tail_mass })
    }

    /// Builds from an analytically truncated vector; the tail is whatever the
    /// vector is missing from 1.
    pub(crate) fn from_truncated(probs: Vec<f64>) -> Self {
        let tail_mass = (1.0 - probs.iter().sum::<f64>()).max(0.0);
        PhotonDistribution { probs, tail_mass }
    }

    /// Certain vacuum, `P_0 = 1`.
    pub fn vacuum() -> Self {
        Self::point_mass(0)
    }

    pub fn point_mass(n: usize) -> Self {
        let mut probs = vec![0.0; n + 1];
        probs[n] = 1.0;
        PhotonDistribution { probs, tail_mass: 0.0 }
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn cutoff(&self) -> usize {
        self.probs.len() - 1
    }

    pub fn tail_mass(&self) -> f64 {
        self.tail_mass
    }

    /// `P_n`, zero beyond the cutoff.
    pub fn get(&self, n: usize) -> f64 {
        self.probs.get(n).copied().unwrap_or(0.0)
    }

    pub fn moments(&self) -> MomentSummary {
        let (mean, second_moment) = self.probs.iter().enumerate().fold((0.0, 0.0), |(m1, m2), (n, &p)| {
            let n = n as f64;
            (m1 + n * p, m2 + n * n * p)
        });
        MomentSummary::from_raw(mean, second_moment)
    }

    /// Total-variation distance `½ Σ |P_n − Q_n|`, tails ignored.
    pub fn total_variation(&self, other: &PhotonDistribution) -> f64 {
        let len = self.probs.len().max(other.probs.len());
        0.5 * (0..len).map(|n| (self.get(n) - other.get(n)).abs()).sum::<f64>()
    }
}

/// First two moments of a photon-number law plus derived quantities.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MomentSummary {
    pub mean: f64,
    pub second_moment: f64,
    pub variance: f64,
    /// `σ²/⟨N⟩ − 1`; set to 0 for the vacuum (see [`MomentSummary::is_degenerate`]).
    pub mandel_q: f64,
}

impl MomentSummary {
    fn from_raw(mean: f64, second_moment: f64) -> Self {
        let variance = (second_moment - mean * mean).max(0.0);
        Self::with_variance(mean, second_moment, variance)
    }

    fn with_variance(mean: f64, second_moment: f64, variance: f64) -> Self {
        let mandel_q = if mean > 0.0 { variance / mean - 1.0 } else { 0.0 };
        MomentSummary { mean, second_moment, variance, mandel_q }
    }

    /// True when the mean is zero and `mandel_q` is the continuity value 0
    /// rather than an actual ratio.
    pub fn is_degenerate(&self) -> bool {
        self.mean <= 0.0
    }
}

fn check_tail_eps(tail_eps: f64) -> Result<(), StatsError> {
    if tail_eps > 0.0 && tail_eps <= MAX_TAIL_EPS {
        Ok(())
    } else {
        Err(StatsError::InvalidTailEps(tail_eps))
    }
}

/// Pre-computed logs for evaluating `P_n(λ)` repeatedly.
#[derive(Debug, Clone, Copy)]
pub(crate) struct TmccLaw {
    lambda: f64,
    ln_lambda: f64,
    ln_i0: f64,
}

impl TmccLaw {
    pub(crate) fn new(lambda: IntensityParam) -> Self {
        let lambda = lambda.magnitude();
        let ln_i0 = ln_bessel_i(0, 2.0 * lambda).expect("2|λ| is within the supported range");
        TmccLaw { lambda, ln_lambda: lambda.ln(), ln_i0 }
    }

    pub(crate) fn ln_i0(&self) -> f64 {
        self.ln_i0
    }

    pub(crate) fn pn(&self, n: usize) -> f64 {
        if self.lambda == 0.0 {
            return if n == 0 { 1.0 } else { 0.0 };
        }
        let nf = n as f64;
        (2.0 * nf * self.ln_lambda - self.ln_i0 - 2.0 * ln_factorial(n as u64)).exp()
    }

    /// `P_{n+1}/P_n`.
    fn ratio(&self, n: usize) -> f64 {
        let next = (n + 1) as f64;
        self.lambda * self.lambda / (next * next)
    }
}

/// Accumulates `pmf(0), pmf(1), …` until the geometric tail bound
/// `P_n·r/(1−r)` (valid once the ratio `r` is below ½ and decreasing) drops
/// under `tail_eps`.
fn truncate_by_ratio(
    pmf: impl Fn(usize) -> f64,
    ratio: impl Fn(usize) -> f64,
    tail_eps: f64,
    limit: usize,
) -> Result<PhotonDistribution, StatsError> {
    let mut probs = Vec::new();
    for n in 0..=limit {
        let p = pmf(n);
        probs.push(p);
        let r = ratio(n);
        if r < 0.5 && p * r / (1.0 - r) < tail_eps {
            return Ok(PhotonDistribution::from_truncated(probs));
        }
    }
    Err(StatsError::CutoffNotFound { limit, tail_eps })
}

/// Probability of registering `n` photons in one TMCC mode.
pub fn tmcc_pn(lambda: IntensityParam, n: usize) -> f64 {
    TmccLaw::new(lambda).pn(n)
}

/// The TMCC photon-number law truncated so the discarded tail is below `tail_eps`.
pub fn tmcc_distribution(lambda: IntensityParam, tail_eps: f64) -> Result<PhotonDistribution, StatsError> {
    check_tail_eps(tail_eps)?;
    let law = TmccLaw::new(lambda);
    truncate_by_ratio(|n| law.pn(n), |n| law.ratio(n), tail_eps, MAX_CUTOFF)
}

/// Closed-form moments of the TMCC law.
pub fn tmcc_moments(lambda: IntensityParam) -> MomentSummary {
    let l = lambda.magnitude();
    if l == 0.0 {
        return MomentSummary::with_variance(0.0, 0.0, 0.0);
    }
    let r = bessel_ratio(l);
    let second_moment = l * l;
    MomentSummary::with_variance(l * r, second_moment, second_moment * (1.0 - r * r))
}

/// `I_1(2λ)/I_0(2λ)`.
pub(crate) fn bessel_ratio(lambda: f64) -> f64 {
    let x = 2.0 * lambda;
    let ln_i1 = ln_bessel_i(1, x).expect("x within range");
    let ln_i0 = ln_bessel_i(0, x).expect("x within range");
    (ln_i1 - ln_i0).exp()
}

/// Mean photon number `|λ|·I_1(2|λ|)/I_0(2|λ|)` as a plain function of `|λ|`.
pub(crate) fn tmcc_mean(lambda: f64) -> f64 {
    if lambda == 0.0 {
        0.0
    } else {
        lambda * bessel_ratio(lambda)
    }
}

/// Poisson law of a coherent beam with the given mean, truncated like
/// [`tmcc_distribution`].
pub fn poisson_distribution(mean: f64, tail_eps: f64) -> Result<PhotonDistribution, StatsError> {
    if !(mean.is_finite() && mean >= 0.0) {
        return Err(StatsError::Domain(format!("Poisson mean must be >= 0, got {mean}")));
    }
    check_tail_eps(tail_eps)?;
    if mean == 0.0 {
        return Ok(PhotonDistribution::vacuum());
    }
    let ln_mean = mean.ln();
    let limit = (10.0 * mean) as usize + 100;
    truncate_by_ratio(
        |n| (n as f64 * ln_mean - mean - ln_factorial(n as u64)).exp(),
        |n| mean / (n + 1) as f64,
        tail_eps,
        limit,
    )
}
