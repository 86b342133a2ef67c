//! Bob's eavesdropping detector.
//!
//! Bob compares the histogram of his counts with the TMCC law he expects
//! through four statistics: the shift of the mean, the shift of the Mandel
//! parameter, the weak distance and the Hilbert-Schmidt distance. Each is
//! standardized by its median magnitude over clean Monte Carlo runs (scaled
//! by `√N`, so thresholds carry over to other sample sizes) and the largest
//! standardized value is the score. The alarm threshold is a percentile of
//! the clean-run scores.
//!
//! Splitting drains photons and shows up first as a mean deficit; cloning
//! keeps the mean and reshapes the distribution.

use std::fmt::Write as _;
use std::thread;

use thiserror::Error;

use crate::density_ops::{hs_distance_sq, weak_distance, DiagonalDensityMatrix};
use crate::numfmt::fmt_sig;
use crate::photon_stats::{
    tmcc_distribution, tmcc_moments, IntensityParam, MomentSummary, PhotonDistribution, StatsError, TAIL_EPS,
};
use crate::tmcc_source::{derive_seed, PulseSource, SourceConfig, SourceError, TmccSource};

pub const DEFAULT_MIN_PULSES: usize = 1_000;
pub const DEFAULT_PERCENTILE: f64 = 0.99;
pub const DEFAULT_CALIBRATION_RUNS: usize = 1_000;
pub const DEFAULT_CALIBRATION_PULSES: usize = 10_000;

// Floor for a statistic's clean-run scale (vacuum source: everything is 0).
const MIN_SCALE: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum DetectionError {
    #[error("no counts to analyse")]
    Empty,
    #[error("thresholds were calibrated for |λ| = {calibrated}, not {requested}")]
    ThresholdMismatch { calibrated: f64, requested: f64 },
    #[error("invalid calibration setting: {0}")]
    InvalidCalibration(String),
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error(transparent)]
    Source(#[from] SourceError),
}

/// Normalized histogram of observed photon counts.
pub fn empirical_distribution(counts: &[u32]) -> Result<PhotonDistribution, DetectionError> {
    let max = *counts.iter().max().ok_or(DetectionError::Empty)? as usize;
    let mut hist = vec![0u64; max + 1];
    for &c in counts {
        hist[c as usize] += 1;
    }
    let total = counts.len() as f64;
    let probs = hist.into_iter().map(|h| h as f64 / total).collect();
    Ok(PhotonDistribution::new(probs, 0.0)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DetectionVerdict {
    Clean,
    SuspectSplit,
    SuspectClone,
    InsufficientData,
}

impl DetectionVerdict {
    pub fn as_str(self) -> &'static str {
        match self {
            DetectionVerdict::Clean => "CLEAN",
            DetectionVerdict::SuspectSplit => "SUSPECT_SPLIT",
            DetectionVerdict::SuspectClone => "SUSPECT_CLONE",
            DetectionVerdict::InsufficientData => "INSUFFICIENT_DATA",
        }
    }
}

/// Raw deviations of an empirical histogram from the expected law, in the
/// order mean shift, Mandel shift, weak distance, √(HS distance²).
#[derive(Debug, Clone, Copy, PartialEq)]
struct Deviations([f64; 4]);

struct Expected {
    matrix: DiagonalDensityMatrix,
    moments: MomentSummary,
}

impl Expected {
    fn new(lambda: IntensityParam) -> Result<Self, DetectionError> {
        Ok(Expected { matrix: tmcc_distribution(lambda, TAIL_EPS)?.into(), moments: tmcc_moments(lambda) })
    }

    fn compare(&self, observed: &DiagonalDensityMatrix) -> (MomentSummary, f64, f64, Deviations) {
        let m = observed.diag().moments();
        let weak = weak_distance(observed, &self.matrix);
        let hs = hs_distance_sq(observed, &self.matrix);
        let dev = Deviations([m.mean - self.moments.mean, m.mandel_q - self.moments.mandel_q, weak, hs.sqrt()]);
        (m, weak, hs, dev)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibrationConfig {
    pub runs: usize,
    pub pulses_per_run: usize,
    pub percentile: f64,
    pub seed: u64,
    pub min_pulses: usize,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        CalibrationConfig {
            runs: DEFAULT_CALIBRATION_RUNS,
            pulses_per_run: DEFAULT_CALIBRATION_PULSES,
            percentile: DEFAULT_PERCENTILE,
            seed: 0,
            min_pulses: DEFAULT_MIN_PULSES,
        }
    }
}

/// Clean-run calibration result; carries everything needed to reproduce it.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectionThresholds {
    pub expected_lambda: IntensityParam,
    /// Median of `|statistic|·√N` over clean runs, per statistic.
    pub scales: [f64; 4],
    pub score_threshold: f64,
    pub config: CalibrationConfig,
}

/// Calibrates thresholds from `config.runs` noiseless runs of the declared
/// source. Run `i` uses seed `derive_seed(config.seed, i)`.
pub fn calibrate_thresholds(
    expected_lambda: IntensityParam,
    config: CalibrationConfig,
) -> Result<DetectionThresholds, DetectionError> {
    if config.runs == 0 || config.pulses_per_run == 0 {
        return Err(DetectionError::InvalidCalibration("runs and pulses_per_run must be positive".into()));
    }
    if !(config.percentile > 0.0 && config.percentile < 1.0) {
        return Err(DetectionError::InvalidCalibration(format!(
            "percentile must lie in (0, 1), got {}",
            config.percentile
        )));
    }
    let expected = Expected::new(expected_lambda)?;
    let root_n = (config.pulses_per_run as f64).sqrt();

    let run = |i: usize| -> Result<Deviations, DetectionError> {
        let cfg = SourceConfig::new(expected_lambda, 0.0, derive_seed(config.seed, i as u64))?;
        let counts: Vec<u32> = TmccSource::new(cfg)?.pulses(config.pulses_per_run).iter().map(|p| p.n_b).collect();
        let observed: DiagonalDensityMatrix = empirical_distribution(&counts)?.into();
        Ok(expected.compare(&observed).3)
    };

    let workers = thread::available_parallelism().map_or(1, |n| n.get()).min(config.runs);
    let chunk = config.runs.div_ceil(workers);
    let deviations: Vec<Deviations> = thread::scope(|scope| {
        let handles: Vec<_> = (0..workers)
            .map(|w| {
                let run = &run;
                scope.spawn(move || {
                    (w * chunk..((w + 1) * chunk).min(config.runs)).map(run).collect::<Result<Vec<_>, _>>()
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("calibration worker panicked")).collect::<Result<Vec<Vec<_>>, _>>()
    })?
    .into_iter()
    .flatten()
    .collect();

    let mut scales = [0.0; 4];
    for (j, scale) in scales.iter_mut().enumerate() {
        let mut mags: Vec<f64> = deviations.iter().map(|d| d.0[j].abs() * root_n).collect();
        *scale = quantile(&mut mags, 0.5).max(MIN_SCALE);
    }
    let mut scores: Vec<f64> = deviations
        .iter()
        .map(|d| standardize(d, root_n, &scales).iter().fold(0.0_f64, |m, z| m.max(z.abs())))
        .collect();
    let score_threshold = quantile(&mut scores, config.percentile);
    Ok(DetectionThresholds { expected_lambda, scales, score_threshold, config })
}

/// Empirical quantile, taking the smallest sample with at least `q` of the
/// samples at or below it.
fn quantile(values: &mut [f64], q: f64) -> f64 {
    values.sort_by(f64::total_cmp);
    let rank = ((q * values.len() as f64).ceil() as usize).clamp(1, values.len());
    values[rank - 1]
}

fn standardize(d: &Deviations, root_n: f64, scales: &[f64; 4]) -> [f64; 4] {
    std::array::from_fn(|j| d.0[j] * root_n / scales[j])
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectionReport {
    pub pulse_count: usize,
    pub empirical_mean: f64,
    pub empirical_mandel_q: f64,
    pub expected_mean: f64,
    pub expected_mandel_q: f64,
    pub hs_dist_sq: f64,
    pub weak_dist: f64,
    pub score: f64,
    pub score_threshold: f64,
    pub verdict: DetectionVerdict,
    pub calibration_seed: u64,
    pub calibration_percentile: f64,
    pub calibration_runs: usize,
}

impl DetectionReport {
    /// Flat JSON object, one key per line, numbers with 12 significant digits.
    pub fn to_kv_text(&self) -> String {
        let numbers = [
            ("empirical_mean", self.empirical_mean),
            ("empirical_mandel_q", self.empirical_mandel_q),
            ("expected_mean", self.expected_mean),
            ("expected_mandel_q", self.expected_mandel_q),
            ("hs_dist_sq", self.hs_dist_sq),
            ("weak_dist", self.weak_dist),
            ("score", self.score),
            ("score_threshold", self.score_threshold),
            ("calibration_percentile", self.calibration_percentile),
        ];
        let mut out = String::from("{\n");
        let _ = writeln!(out, "  \"pulse_count\": {},", self.pulse_count);
        for (key, value) in numbers {
            let _ = writeln!(out, "  \"{key}\": {},", fmt_sig(value));
        }
        let _ = writeln!(out, "  \"calibration_runs\": {},", self.calibration_runs);
        let _ = writeln!(out, "  \"calibration_seed\": {},", self.calibration_seed);
        let _ = writeln!(out, "  \"verdict\": \"{}\"", self.verdict.as_str());
        out.push_str("}\n");
        out
    }
}

/// Scores Bob's counts against the law expected for `expected_lambda`.
pub fn detect(
    counts: &[u32],
    expected_lambda: IntensityParam,
    thresholds: &DetectionThresholds,
) -> Result<DetectionReport, DetectionError> {
    if thresholds.expected_lambda != expected_lambda {
        return Err(DetectionError::ThresholdMismatch {
            calibrated: thresholds.expected_lambda.magnitude(),
            requested: expected_lambda.magnitude(),
        });
    }
    let expected = Expected::new(expected_lambda)?;
    let observed: DiagonalDensityMatrix = empirical_distribution(counts)?.into();
    let (moments, weak, hs, dev) = expected.compare(&observed);
    let z = standardize(&dev, (counts.len() as f64).sqrt(), &thresholds.scales);
    let score = z.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let threshold = thresholds.score_threshold;

    let verdict = if counts.len() < thresholds.config.min_pulses {
        DetectionVerdict::InsufficientData
    } else if score <= threshold {
        DetectionVerdict::Clean
    } else {
        let deficit = -z[0];
        let shape = z[1].abs().max(z[2]).max(z[3]);
        if deficit > threshold && deficit >= shape {
            DetectionVerdict::SuspectSplit
        } else {
            DetectionVerdict::SuspectClone
        }
    };

    Ok(DetectionReport {
        pulse_count: counts.len(),
        empirical_mean: moments.mean,
        empirical_mandel_q: moments.mandel_q,
        expected_mean: expected.moments.mean,
        expected_mandel_q: expected.moments.mandel_q,
        hs_dist_sq: hs,
        weak_dist: weak,
        score,
        score_threshold: threshold,
        verdict,
        calibration_seed: thresholds.config.seed,
        calibration_percentile: thresholds.config.percentile,
        calibration_runs: thresholds.config.runs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn histogram_examples() {
        assert_eq!(empirical_distribution(&[0, 0, 0]).unwrap().probs(), &[1.0]);
        assert_eq!(empirical_distribution(&[0, 1, 1, 2]).unwrap().probs(), &[0.25, 0.5, 0.25]);
        assert!(matches!(empirical_distribution(&[]), Err(DetectionError::Empty)));
    }

    fn quick_thresholds(l: f64) -> DetectionThresholds {
        let cfg = CalibrationConfig { runs: 200, pulses_per_run: 2_000, seed: 3, ..Default::default() };
        calibrate_thresholds(IntensityParam::new(l).unwrap(), cfg).unwrap()
    }

    #[test]
    fn too_few_pulses_is_insufficient() {
        let t = quick_thresholds(2.0);
        let report = detect(&[1; 999], IntensityParam::new(2.0).unwrap(), &t).unwrap();
        assert_eq!(report.verdict, DetectionVerdict::InsufficientData);
        assert_eq!(report.pulse_count, 999);
    }

    #[test]
    fn mismatched_thresholds_are_rejected() {
        let t = quick_thresholds(2.0);
        assert!(matches!(
            detect(&[1; 2000], IntensityParam::new(1.0).unwrap(), &t),
            Err(DetectionError::ThresholdMismatch { .. })
        ));
    }

    #[test]
    fn calibration_is_reproducible() {
        assert_eq!(quick_thresholds(1.5), quick_thresholds(1.5));
    }

    #[test]
    fn bad_calibration_settings() {
        let l = IntensityParam::new(1.0).unwrap();
        let bad = CalibrationConfig { percentile: 1.0, ..Default::default() };
        assert!(calibrate_thresholds(l, bad).is_err());
        let bad = CalibrationConfig { runs: 0, ..Default::default() };
        assert!(calibrate_thresholds(l, bad).is_err());
    }

    #[test]
    fn vacuum_source_is_clean() {
        let t = quick_thresholds(0.0);
        let r = detect(&[0; 5000], IntensityParam::ZERO, &t).unwrap();
        assert_eq!(r.verdict, DetectionVerdict::Clean);
    }

    #[test]
    fn quantile_picks_upper_rank() {
        let mut v: Vec<f64> = (1..=100).map(f64::from).collect();
        assert_eq!(quantile(&mut v, 0.99), 99.0);
        assert_eq!(quantile(&mut v, 0.5), 50.0);
    }

    #[test]
    fn report_text_layout() {
        let t = quick_thresholds(2.0);
        let counts: Vec<u32> = (0..3000).map(|i| (i % 4) as u32).collect();
        let text = detect(&counts, IntensityParam::new(2.0).unwrap(), &t).unwrap().to_kv_text();
        assert!(text.starts_with("{\n  \"pulse_count\": 3000,\n  \"empirical_mean\": 1.50000000000,\n"));
        assert!(text.ends_with("\"\n}\n"));
        let parsed: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(parsed["pulse_count"], 3000);
    }
}
