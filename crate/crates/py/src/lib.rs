//! Python bindings for the TMCC QKD simulator.
//!
//! Distributions cross the boundary as plain lists of probabilities, pulses
//! as `(n_a, n_b, n_e, noise_a, noise_b)` tuples and keys as `Key` objects.
//! Every library error surfaces as `ValueError`.

use std::fmt::Display;

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyBytes;

use tmcc_qkd::attacks::{self, CloneSource, CloneStrategy, SplitRatio, SplitSource};
use tmcc_qkd::density_ops::{self, DiagonalDensityMatrix};
use tmcc_qkd::detection::{self, CalibrationConfig, DetectionReport, DetectionThresholds};
use tmcc_qkd::photon_stats::{self, IntensityParam, MomentSummary, PhotonDistribution, MAX_TAIL_EPS, TAIL_EPS};
use tmcc_qkd::public_channel::{self, Frame, MsgType};
use tmcc_qkd::qkd_protocol::{self, ErrorModel, KeyMaterial, Verdict};
use tmcc_qkd::tmcc_source::{PulseRecord, PulseSource, SourceConfig, TmccSource};

/// `(n_a, n_b, n_e, noise_a, noise_b)`.
pub type PulseTuple = (u32, u32, u32, bool, bool);

fn value_err<E: Display>(e: E) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn intensity(lam: f64) -> PyResult<IntensityParam> {
    IntensityParam::new(lam).map_err(value_err)
}

/// Accepts a probability list that may omit up to `MAX_TAIL_EPS` of mass.
fn distribution(probs: Vec<f64>) -> PyResult<PhotonDistribution> {
    let tail = (1.0 - probs.iter().sum::<f64>()).clamp(0.0, MAX_TAIL_EPS);
    PhotonDistribution::new(probs, tail).map_err(value_err)
}

fn to_record(p: PulseTuple) -> PulseRecord {
    PulseRecord { n_a: p.0, n_b: p.1, n_e: p.2, noise_a: p.3, noise_b: p.4 }
}

fn to_tuple(p: &PulseRecord) -> PulseTuple {
    (p.n_a, p.n_b, p.n_e, p.noise_a, p.noise_b)
}

/// Modified Bessel function of the first kind, integer order.
#[pyfunction]
pub fn bessel_i(order: u32, x: f64) -> PyResult<f64> {
    photon_stats::bessel_i(order, x).map_err(value_err)
}

/// TMCC photon-number probabilities up to the tail cutoff.
#[pyfunction]
#[pyo3(signature = (lam, tail_eps = TAIL_EPS))]
pub fn tmcc_distribution(lam: f64, tail_eps: f64) -> PyResult<Vec<f64>> {
    Ok(photon_stats::tmcc_distribution(intensity(lam)?, tail_eps).map_err(value_err)?.probs().to_vec())
}

/// Poisson probabilities with the given mean up to the tail cutoff.
#[pyfunction]
#[pyo3(signature = (mean, tail_eps = TAIL_EPS))]
pub fn poisson_distribution(mean: f64, tail_eps: f64) -> PyResult<Vec<f64>> {
    Ok(photon_stats::poisson_distribution(mean, tail_eps).map_err(value_err)?.probs().to_vec())
}

/// Closed-form moments of the TMCC law.
#[pyclass(frozen, get_all, skip_from_py_object, module = "tmcc_qkd")]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Moments {
    pub mean: f64,
    pub second_moment: f64,
    pub variance: f64,
    pub mandel_q: f64,
}

impl From<MomentSummary> for Moments {
    fn from(m: MomentSummary) -> Self {
        Moments { mean: m.mean, second_moment: m.second_moment, variance: m.variance, mandel_q: m.mandel_q }
    }
}

#[pymethods]
impl Moments {
    fn __repr__(&self) -> String {
        format!(
            "Moments(mean={}, second_moment={}, variance={}, mandel_q={})",
            self.mean, self.second_moment, self.variance, self.mandel_q
        )
    }
}

#[pyfunction]
pub fn tmcc_moments(lam: f64) -> PyResult<Moments> {
    Ok(photon_stats::tmcc_moments(intensity(lam)?).into())
}

/// Moments of an arbitrary probability list.
#[pyfunction]
pub fn distribution_moments(probs: Vec<f64>) -> PyResult<Moments> {
    Ok(distribution(probs)?.moments().into())
}

/// Squared Hilbert-Schmidt distance between two diagonal states.
#[pyfunction]
pub fn hs_distance_sq(a: Vec<f64>, b: Vec<f64>) -> PyResult<f64> {
    Ok(density_ops::hs_distance_sq(&distribution(a)?.into(), &distribution(b)?.into()))
}

/// Sum of absolute differences between two diagonal states.
#[pyfunction]
pub fn weak_distance(a: Vec<f64>, b: Vec<f64>) -> PyResult<f64> {
    Ok(density_ops::weak_distance(&distribution(a)?.into(), &distribution(b)?.into()))
}

/// Bob's and Eve's photon-number marginals after a beam split that sends
/// fraction `p2` of the intensity to Bob.
#[pyfunction]
#[pyo3(signature = (lam, p2, tail_eps = TAIL_EPS))]
pub fn split_marginals(lam: f64, p2: f64, tail_eps: f64) -> PyResult<(Vec<f64>, Vec<f64>)> {
    let (lam, ratio) = (intensity(lam)?, SplitRatio::from_p_squared(p2).map_err(value_err)?);
    let bob = attacks::split_marginal_bob(lam, ratio, tail_eps).map_err(value_err)?;
    let eve = attacks::split_marginal_eve(lam, ratio, tail_eps).map_err(value_err)?;
    Ok((bob.probs().to_vec(), eve.probs().to_vec()))
}

/// Bob's photon-number distribution under a cloning strategy:
/// `tmcc-clone`, `coherent` or `single-photon-bank`.
#[pyfunction]
#[pyo3(signature = (lam, strategy, tail_eps = TAIL_EPS))]
pub fn cloned_distribution(lam: f64, strategy: &str, tail_eps: f64) -> PyResult<Vec<f64>> {
    let strategy: CloneStrategy = strategy.parse().map_err(value_err)?;
    let m: DiagonalDensityMatrix =
        attacks::cloned_bob_matrix(intensity(lam)?, strategy, tail_eps).map_err(value_err)?;
    Ok(m.into_diag().probs().to_vec())
}

/// Intensity whose TMCC mean photon number equals `n`.
#[pyfunction]
pub fn lambda_of_n(n: u32) -> PyResult<f64> {
    Ok(attacks::lambda_of_n(n).map_err(value_err)?.magnitude())
}

/// Generates pulses. With `split_p2` set Eve splits the beam; with
/// `clone_strategy` set she replaces Bob's share with a clone.
#[pyfunction]
#[pyo3(signature = (lam, pulses, epsilon = 0.0, seed = 0, split_p2 = None, clone_strategy = None))]
pub fn simulate(
    py: Python<'_>,
    lam: f64,
    pulses: usize,
    epsilon: f64,
    seed: u64,
    split_p2: Option<f64>,
    clone_strategy: Option<&str>,
) -> PyResult<Vec<PulseTuple>> {
    let config = SourceConfig::new(intensity(lam)?, epsilon, seed).map_err(value_err)?;
    let source: Box<dyn PulseSource + Send + Sync> = match (split_p2, clone_strategy) {
        (Some(_), Some(_)) => return Err(PyValueError::new_err("split_p2 and clone_strategy are exclusive")),
        (Some(p2), None) => {
            let ratio = SplitRatio::from_p_squared(p2).map_err(value_err)?;
            Box::new(SplitSource::new(config, ratio).map_err(value_err)?)
        }
        (None, Some(s)) => {
            let strategy: CloneStrategy = s.parse().map_err(value_err)?;
            Box::new(CloneSource::new(config, strategy).map_err(value_err)?)
        }
        (None, None) => Box::new(TmccSource::new(config).map_err(value_err)?),
    };
    Ok(py.detach(|| source.pulses(pulses)).iter().map(to_tuple).collect())
}

/// Photon-count threshold separating bit 0 (at or below) from bit 1.
#[pyfunction]
pub fn bit_threshold(lam: f64) -> PyResult<u32> {
    Ok(qkd_protocol::bit_threshold(intensity(lam)?))
}

/// Predicted error model at one operating point, as
/// `(threshold, p0, error_factor, p_err)`.
#[pyfunction]
pub fn error_probability(lam: f64, epsilon: f64) -> PyResult<(u32, f64, f64, f64)> {
    let model = ErrorModel::new(intensity(lam)?, epsilon).map_err(value_err)?;
    let e = qkd_protocol::error_probability(&model);
    Ok((model.threshold(), e.p0, e.error_factor, e.p_err))
}

/// Key bits held by one party, with the derived halves and XOR code.
#[pyclass(frozen, eq, from_py_object, module = "tmcc_qkd")]
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Key {
    inner: KeyMaterial,
}

#[pymethods]
impl Key {
    #[new]
    pub fn new(bits: Vec<bool>) -> Self {
        Key { inner: KeyMaterial::from_bits(bits) }
    }

    /// Parses the `<bit count>:<hex>` key file format.
    #[staticmethod]
    pub fn from_key_file(text: &str) -> PyResult<Self> {
        Ok(Key { inner: KeyMaterial::parse_key_file(text).map_err(value_err)? })
    }

    pub fn bits(&self) -> Vec<bool> {
        self.inner.bits().to_vec()
    }

    pub fn xor_code(&self) -> Vec<bool> {
        self.inner.xor_code().to_vec()
    }

    pub fn to_hex(&self) -> String {
        self.inner.to_hex()
    }

    pub fn to_key_file(&self) -> String {
        self.inner.to_key_file()
    }

    /// Compares this key's XOR code with a peer's: `MATCH` or `MISMATCH`.
    pub fn reconcile(&self, remote_xor_code: Vec<bool>) -> &'static str {
        match qkd_protocol::reconcile(&self.inner, &remote_xor_code) {
            Verdict::Match => "MATCH",
            Verdict::Mismatch(_) => "MISMATCH",
        }
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __repr__(&self) -> String {
        format!("Key({})", self.inner.to_key_file().trim_end())
    }
}

/// Alice's and Bob's keys from a pulse list.
#[pyfunction]
pub fn extract_keys(pulses: Vec<PulseTuple>, threshold: u32) -> PyResult<(Key, Key)> {
    let records: Vec<PulseRecord> = pulses.into_iter().map(to_record).collect();
    let (a, b) = qkd_protocol::extract_keys(&records, threshold).map_err(value_err)?;
    Ok((Key { inner: a }, Key { inner: b }))
}

/// Serializes one public-channel frame.
#[pyfunction]
pub fn encode_frame<'py>(py: Python<'py>, msg_type: u8, payload: Vec<u8>) -> PyResult<Bound<'py, PyBytes>> {
    let msg_type = MsgType::try_from(msg_type).map_err(value_err)?;
    let bytes = public_channel::encode_frame(&Frame::new(msg_type, payload)).map_err(value_err)?;
    Ok(PyBytes::new(py, &bytes))
}

/// Parses one frame from the front of `data`, returning
/// `(msg_type, payload, bytes consumed)`.
#[pyfunction]
pub fn decode_frame<'py>(py: Python<'py>, data: &[u8]) -> PyResult<(u8, Bound<'py, PyBytes>, usize)> {
    let (frame, used) = public_channel::decode_frame(data).map_err(value_err)?;
    Ok((frame.msg_type as u8, PyBytes::new(py, &frame.payload), used))
}

/// Clean-run thresholds for one expected intensity.
#[pyclass(frozen, module = "tmcc_qkd")]
pub struct Detector {
    lambda: IntensityParam,
    thresholds: DetectionThresholds,
}

#[pymethods]
impl Detector {
    /// Calibrates by simulating `runs` clean runs of `pulses_per_run` pulses.
    #[new]
    #[pyo3(signature = (lam, runs = 1000, pulses_per_run = 10_000, seed = 0))]
    pub fn new(py: Python<'_>, lam: f64, runs: usize, pulses_per_run: usize, seed: u64) -> PyResult<Self> {
        let lambda = intensity(lam)?;
        let config = CalibrationConfig { runs, pulses_per_run, seed, ..Default::default() };
        let thresholds = py.detach(|| detection::calibrate_thresholds(lambda, config)).map_err(value_err)?;
        Ok(Detector { lambda, thresholds })
    }

    #[getter]
    pub fn score_threshold(&self) -> f64 {
        self.thresholds.score_threshold
    }

    /// Scores Bob's photon counts against the calibration.
    pub fn detect(&self, counts: Vec<u32>) -> PyResult<Report> {
        detection::detect(&counts, self.lambda, &self.thresholds).map(Report::from).map_err(value_err)
    }
}

#[pyclass(frozen, get_all, skip_from_py_object, module = "tmcc_qkd")]
#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub verdict: &'static str,
    pub pulse_count: usize,
    pub empirical_mean: f64,
    pub empirical_mandel_q: f64,
    pub expected_mean: f64,
    pub expected_mandel_q: f64,
    pub hs_dist_sq: f64,
    pub weak_dist: f64,
    pub score: f64,
    pub score_threshold: f64,
    /// The report as the CLI writes it.
    pub json: String,
}

impl From<DetectionReport> for Report {
    fn from(r: DetectionReport) -> Self {
        Report {
            verdict: r.verdict.as_str(),
            pulse_count: r.pulse_count,
            empirical_mean: r.empirical_mean,
            empirical_mandel_q: r.empirical_mandel_q,
            expected_mean: r.expected_mean,
            expected_mandel_q: r.expected_mandel_q,
            hs_dist_sq: r.hs_dist_sq,
            weak_dist: r.weak_dist,
            score: r.score,
            score_threshold: r.score_threshold,
            json: r.to_kv_text(),
        }
    }
}

#[pymethods]
impl Report {
    fn __repr__(&self) -> String {
        format!("Report(verdict={}, pulse_count={}, score={})", self.verdict, self.pulse_count, self.score)
    }
}

#[pymodule]
#[pyo3(name = "tmcc_qkd")]
pub mod module {
    #[pymodule_export]
    use super::{
        bessel_i, bit_threshold, cloned_distribution, decode_frame, distribution_moments, encode_frame,
        error_probability, extract_keys, hs_distance_sq, lambda_of_n, poisson_distribution, simulate, split_marginals,
        tmcc_distribution, tmcc_moments, weak_distance, Detector, Key, Moments, Report,
    };
}
