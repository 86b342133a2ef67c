//! Independent reference computations for the integration tests.
//!
//! Everything here is written without the library's numerics: plain f64
//! series summed by term recursion, and the binomial-mixture construction of
//! the beam-split marginals. Constants marked "mpmath" were computed once at
//! 40 significant digits and frozen.
#![allow(dead_code)]

use std::time::{Duration, Instant};

// mpmath, 40 digits.
pub const I0_OF_2: f64 = 2.279_585_302_336_067;
pub const INV_I0_OF_2: f64 = 0.438_676_279_837_048_7;
pub const ONE_MINUS_INV_I0_OF_2: f64 = 0.561_323_720_162_951_3;
pub const BESSEL_RATIO_AT_2: f64 = 0.697_774_657_964_008;
pub const I0_OF_100: f64 = 1.073_751_707_131_073_8e42;
pub const I0_OF_100_SCALED: f64 = 0.039_944_379_299_096_68;
pub const MEAN_AT: [(f64, f64); 4] = [
    (0.5, 0.223_194_982_948_267_25),
    (2.0, 1.727_045_222_049_101),
    (4.0, 3.740_941_974_117_754_4),
    (8.0, 7.745_822_043_425_279),
];
pub const MANDEL_Q_AT_0_05: f64 = -0.001_247_400_7;
pub const LAMBDA_OF_N: [(u32, f64); 4] =
    [(1, 1.292_199_812_940_824_5), (2, 2.269_018_209_777_531), (5, 5.256_617_001_290_462), (49, 49.250_641_055_542_59)];
pub const SPLIT_BOB_L2_HALF: [f64; 5] = [
    0.376_250_242_880_046_5,
    0.423_792_184_978_011_6,
    0.164_354_150_391_040_73,
    0.031_694_628_065_310_04,
    0.003_621_387_349_524_261,
];
pub const SPLIT_HS_L2_HALF: f64 = 0.140_717_065_83;
pub const TMCC_CLONE_L2_HS: f64 = 0.032_806_257_9;
pub const TMCC_CLONE_L2_WEAK: f64 = 0.121_901_112_3;
pub const TMCC_CLONE_L2_Q: f64 = 0.170_43;
pub const COHERENT_CLONE_L2: (f64, f64, f64) = (0.071_25, 0.186_69, 0.589_05);
pub const ERROR_FACTORS: [(f64, f64); 5] = [(0.5, 1.0), (1.0, 1.0), (2.0, 0.8), (4.0, 0.584_14), (8.0, 0.414_45)];

/// `I_ν(x)` by direct power series with term recursion. Good for x ≲ 300.
pub fn series_bessel_i(order: u32, x: f64) -> f64 {
    let half = x / 2.0;
    let mut term = (1..=order).fold(1.0, |t, k| t * half / k as f64);
    let mut sum = term;
    for k in 1.. {
        term *= half * half / (k as f64 * (k + order) as f64);
        sum += term;
        if term < sum * 1e-18 {
            break;
        }
    }
    sum
}

/// TMCC law by term recursion `P_n = P_{n-1}·λ²/n²`, normalized by the series
/// `I_0(2λ)`, continued until the terms drop below `1e-18` of the peak.
pub fn tmcc_oracle(lambda: f64) -> Vec<f64> {
    let norm = series_bessel_i(0, 2.0 * lambda);
    let mut probs = vec![1.0 / norm];
    let mut peak = probs[0];
    for n in 1.. {
        let next = probs[n - 1] * lambda * lambda / (n * n) as f64;
        peak = peak.max(next);
        if next < peak * 1e-18 && (n as f64) > lambda {
            break;
        }
        probs.push(next);
    }
    probs
}

/// Binomial pmf row `Binom(·; n, p)`, by ratio recursion from `(1−p)^n`.
pub fn binomial_row(n: usize, p: f64) -> Vec<f64> {
    let mut row = vec![(1.0 - p).powi(n as i32)];
    for m in 0..n {
        let prev = row[m];
        row.push(prev * (n - m) as f64 / (m + 1) as f64 * p / (1.0 - p));
    }
    row
}

/// Bob's split marginal as the double sum `Σ_n P_n(λ)·Binom(m; n, p²)`.
pub fn split_oracle(lambda: f64, p2: f64) -> Vec<f64> {
    let outer = tmcc_oracle(lambda);
    let mut out = vec![0.0; outer.len()];
    for (n, &pn) in outer.iter().enumerate() {
        for (m, b) in binomial_row(n, p2).into_iter().enumerate() {
            out[m] += pn * b;
        }
    }
    out
}

pub fn mean_of(probs: &[f64]) -> f64 {
    probs.iter().enumerate().map(|(n, p)| n as f64 * p).sum()
}

pub fn timed<T>(f: impl FnOnce() -> T) -> (T, Duration) {
    let start = Instant::now();
    let out = f();
    (out, start.elapsed())
}
