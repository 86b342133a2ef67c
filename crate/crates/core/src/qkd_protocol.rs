//! Bit extraction, key assembly, XOR half-code reconciliation and the
//! analytic channel-error model.
//!
//! A pulse whose count is at most the integer part of the mean photon number
//! gives bit 0, anything above gives bit 1. Each party splits its bit string
//! at the midpoint and XORs the two halves; the parties agree on the key when
//! the XOR codes agree. A flip at the same position in both halves cancels
//! and is not detected.

use thiserror::Error;

use crate::photon_stats::{tmcc_moments, IntensityParam, TmccLaw};
use crate::tmcc_source::PulseRecord;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ProtocolError {
    #[error("need at least 2 pulses to build a key, got {0}")]
    TooFewPulses(usize),
    #[error("noise epsilon must lie in [0, 1], got {0}")]
    InvalidEpsilon(f64),
    #[error("malformed key data: {0}")]
    KeyFormat(String),
}

/// `true` is bit 1.
pub fn bit_from_count(n: u32, threshold: u32) -> bool {
    n > threshold
}

/// Integer part of the mean photon number.
pub fn bit_threshold(lambda: IntensityParam) -> u32 {
    tmcc_moments(lambda).mean.floor() as u32
}

/// Packs bits most significant first; the last byte is zero-padded.
pub fn pack_bits(bits: &[bool]) -> Vec<u8> {
    bits.chunks(8)
        .map(|chunk| chunk.iter().enumerate().fold(0u8, |byte, (i, &b)| byte | (u8::from(b) << (7 - i))))
        .collect()
}

pub fn unpack_bits(bytes: &[u8], count: usize) -> Result<Vec<bool>, ProtocolError> {
    if bytes.len() != count.div_ceil(8) {
        return Err(ProtocolError::KeyFormat(format!(
            "{count} bits need {} bytes, got {}",
            count.div_ceil(8),
            bytes.len()
        )));
    }
    let bits: Vec<bool> = (0..count).map(|i| bytes[i / 8] & (0x80 >> (i % 8)) != 0).collect();
    let pad_bits = bytes.len() * 8 - count;
    if pad_bits > 0 && bytes[bytes.len() - 1] & ((1u8 << pad_bits) - 1) != 0 {
        return Err(ProtocolError::KeyFormat("nonzero padding bits".into()));
    }
    Ok(bits)
}

/// A party's raw key with its two half-codes and their XOR.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KeyMaterial {
    bits: Vec<bool>,
    xor_code: Vec<bool>,
    dropped_trailing_bit: bool,
}

impl KeyMaterial {
    /// An odd trailing bit is dropped so the halves have equal length.
    pub fn from_bits(mut bits: Vec<bool>) -> Self {
        let dropped_trailing_bit = bits.len() % 2 == 1;
        if dropped_trailing_bit {
            bits.pop();
            log::debug!("dropped odd trailing bit; key length now {}", bits.len());
        }
        let half = bits.len() / 2;
        let xor_code = bits[..half].iter().zip(&bits[half..]).map(|(a, b)| a ^ b).collect();
        KeyMaterial { bits, xor_code, dropped_trailing_bit }
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn half_a(&self) -> &[bool] {
        &self.bits[..self.bits.len() / 2]
    }

    pub fn half_b(&self) -> &[bool] {
        &self.bits[self.bits.len() / 2..]
    }

    pub fn xor_code(&self) -> &[bool] {
        &self.xor_code
    }

    pub fn dropped_trailing_bit(&self) -> bool {
        self.dropped_trailing_bit
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn to_hex(&self) -> String {
        hex::encode(pack_bits(&self.bits))
    }

    pub fn to_bit_string(&self) -> String {
        self.bits.iter().map(|&b| if b { '1' } else { '0' }).collect()
    }

    /// Key file text: `<bit count>:<hex>` on one line.
    pub fn to_key_file(&self) -> String {
        format!("{}:{}\n", self.bits.len(), self.to_hex())
    }

    /// Reads either the `<bit count>:<hex>` key file form or a raw string of
    /// `0`/`1` characters.
    pub fn parse_key_file(text: &str) -> Result<Self, ProtocolError> {
        let text = text.trim();
        let bits = match text.split_once(':') {
            Some((count, hex_part)) => {
                let count: usize =
                    count.trim().parse().map_err(|e| ProtocolError::KeyFormat(format!("bit count `{count}`: {e}")))?;
                let bytes =
                    hex::decode(hex_part.trim()).map_err(|e| ProtocolError::KeyFormat(format!("hex payload: {e}")))?;
                unpack_bits(&bytes, count)?
            }
            None => text
                .chars()
                .filter(|c| !c.is_whitespace())
                .map(|c| match c {
                    '0' => Ok(false),
                    '1' => Ok(true),
                    other => Err(ProtocolError::KeyFormat(format!("unexpected character `{other}`"))),
                })
                .collect::<Result<_, _>>()?,
        };
        Ok(KeyMaterial::from_bits(bits))
    }
}

/// Alice's key from `n_a`, Bob's from `n_b`, in pulse order.
pub fn extract_keys(pulses: &[PulseRecord], threshold: u32) -> Result<(KeyMaterial, KeyMaterial), ProtocolError> {
    if pulses.len() < 2 {
        return Err(ProtocolError::TooFewPulses(pulses.len()));
    }
    let alice = pulses.iter().map(|p| bit_from_count(p.n_a, threshold)).collect();
    let bob = pulses.iter().map(|p| bit_from_count(p.n_b, threshold)).collect();
    Ok((KeyMaterial::from_bits(alice), KeyMaterial::from_bits(bob)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mismatch {
    /// XOR codes differ; `first_index` is the first differing position.
    Bits {
        first_index: usize,
    },
    Length {
        local: usize,
        remote: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Match,
    Mismatch(Mismatch),
}

impl Verdict {
    pub fn is_match(&self) -> bool {
        matches!(self, Verdict::Match)
    }
}

/// Compares the local XOR code with the one received from the peer.
///
/// Decoding the peer's code with one local half and comparing against the
/// other half is the same test, since XOR is an involution.
pub fn reconcile(local: &KeyMaterial, remote_xor_code: &[bool]) -> Verdict {
    let own = local.xor_code();
    if own.len() != remote_xor_code.len() {
        return Verdict::Mismatch(Mismatch::Length { local: own.len(), remote: remote_xor_code.len() });
    }
    match own.iter().zip(remote_xor_code).position(|(a, b)| a != b) {
        None => Verdict::Match,
        Some(first_index) => Verdict::Mismatch(Mismatch::Bits { first_index }),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorModel {
    pub lambda: IntensityParam,
    epsilon: f64,
    threshold: u32,
}

impl ErrorModel {
    pub fn new(lambda: IntensityParam, epsilon: f64) -> Result<Self, ProtocolError> {
        if !(0.0..=1.0).contains(&epsilon) {
            return Err(ProtocolError::InvalidEpsilon(epsilon));
        }
        Ok(ErrorModel { lambda, epsilon, threshold: bit_threshold(lambda) })
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn threshold(&self) -> u32 {
        self.threshold
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorProbability {
    /// Probability of reading bit 0.
    pub p0: f64,
    /// Probability that a 0-pulse sits exactly on the threshold, where one
    /// noise photon flips it.
    pub error_factor: f64,
    /// `ε · error_factor`.
    pub p_err: f64,
}

pub fn error_probability(model: &ErrorModel) -> ErrorProbability {
    let law = TmccLaw::new(model.lambda);
    let t = model.threshold as usize;
    let p0: f64 = (0..=t).map(|n| law.pn(n)).sum();
    let error_factor = law.pn(t) / p0;
    ErrorProbability { p0, error_factor, p_err: model.epsilon * error_factor }
}

/// Disagreement counts between two keys, split by direction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Disagreement {
    pub total: usize,
    pub alice_zero: usize,
    pub bob_zero: usize,
    /// Alice read 0, Bob read 1.
    pub alice0_bob1: usize,
    /// Alice read 1, Bob read 0.
    pub alice1_bob0: usize,
}

impl Disagreement {
    pub fn between(alice: &[bool], bob: &[bool]) -> Self {
        let mut d = Disagreement::default();
        for (&a, &b) in alice.iter().zip(bob) {
            d.total += 1;
            d.alice_zero += usize::from(!a);
            d.bob_zero += usize::from(!b);
            d.alice0_bob1 += usize::from(!a && b);
            d.alice1_bob0 += usize::from(a && !b);
        }
        d
    }

    /// Fraction of all positions where the keys differ.
    pub fn bit_error_rate(&self) -> f64 {
        (self.alice0_bob1 + self.alice1_bob0) as f64 / self.total as f64
    }

    /// `P(Bob = 1 | Alice = 0)`, the empirical counterpart of `p_err`.
    pub fn rate_given_alice_zero(&self) -> f64 {
        self.alice0_bob1 as f64 / self.alice_zero as f64
    }

    /// `P(Alice = 1 | Bob = 0)`, the mirrored error.
    pub fn rate_given_bob_zero(&self) -> f64 {
        self.alice1_bob0 as f64 / self.bob_zero as f64
    }

    /// Sum of both conditional rates with its binomial standard error.
    pub fn combined_conditional_rate(&self) -> (f64, f64) {
        let (r1, r2) = (self.rate_given_alice_zero(), self.rate_given_bob_zero());
        let se = (r1 * (1.0 - r1) / self.alice_zero as f64 + r2 * (1.0 - r2) / self.bob_zero as f64).sqrt();
        (r1 + r2, se)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn bit_rule_boundaries() {
        assert!(!bit_from_count(0, 0));
        assert!(bit_from_count(1, 0));
        assert!(!bit_from_count(3, 3));
        assert!(bit_from_count(4, 3));
    }

    #[test]
    fn odd_trailing_bit_is_dropped() {
        let k = KeyMaterial::from_bits(vec![true, false, true]);
        assert_eq!(k.bits(), &[true, false]);
        assert!(k.dropped_trailing_bit());
        assert_eq!(k.xor_code(), &[true]);
    }

    #[test]
    fn halves_and_xor() {
        let k = KeyMaterial::from_bits(vec![true, true, false, false, true, false]);
        assert_eq!(k.half_a(), &[true, true, false]);
        assert_eq!(k.half_b(), &[false, true, false]);
        assert_eq!(k.xor_code(), &[true, false, false]);
    }

    #[test]
    fn too_few_pulses() {
        assert_eq!(extract_keys(&[PulseRecord::default()], 0), Err(ProtocolError::TooFewPulses(1)));
    }

    #[test]
    fn all_low_counts_give_zero_key() {
        let pulses = vec![PulseRecord { n_a: 1, n_b: 1, ..Default::default() }; 10];
        let (a, b) = extract_keys(&pulses, 1).unwrap();
        assert!(a.bits().iter().chain(b.bits()).all(|&x| !x));
    }

    #[test]
    fn reconcile_cases() {
        let key = KeyMaterial::from_bits(vec![true, false, true, true, false, false]);
        assert_eq!(reconcile(&key, key.xor_code()), Verdict::Match);

        let mut flipped = key.bits().to_vec();
        flipped[1] = !flipped[1];
        let other = KeyMaterial::from_bits(flipped.clone());
        assert_eq!(reconcile(&key, other.xor_code()), Verdict::Mismatch(Mismatch::Bits { first_index: 1 }));

        // Same position in both halves: the XOR code is unchanged.
        flipped[4] = !flipped[4];
        let blind = KeyMaterial::from_bits(flipped);
        assert_ne!(blind.bits(), key.bits());
        assert_eq!(reconcile(&key, blind.xor_code()), Verdict::Match);

        assert_eq!(reconcile(&key, &[true]), Verdict::Mismatch(Mismatch::Length { local: 3, remote: 1 }));
    }

    #[test]
    fn error_model_vacuum_limit() {
        let m = ErrorModel::new(IntensityParam::new(1e-3).unwrap(), 0.07).unwrap();
        assert_eq!(m.threshold(), 0);
        let e = error_probability(&m);
        assert_eq!(e.error_factor, 1.0);
        assert!((e.p_err - 0.07).abs() < 1e-15);
        assert!((e.p0 - TmccLaw::new(m.lambda).pn(0)).abs() < 1e-15);
    }

    #[test]
    fn noiseless_channel_has_no_errors() {
        let m = ErrorModel::new(IntensityParam::new(2.0).unwrap(), 0.0).unwrap();
        assert_eq!(error_probability(&m).p_err, 0.0);
        assert!(ErrorModel::new(IntensityParam::new(2.0).unwrap(), 1.5).is_err());
    }

    #[test]
    fn error_factor_values() {
        // P_t / Σ_{n≤t} P_n with t = floor(mean), evaluated in mpmath.
        let cases =
            [(0.5, 1.0), (1.0, 1.0), (2.0, 0.8), (4.0, 0.584_141_471_762_692_5), (8.0, 0.414_445_250_875_028_75)];
        for (l, expected) in cases {
            let m = ErrorModel::new(IntensityParam::new(l).unwrap(), 0.1).unwrap();
            let e = error_probability(&m);
            assert!((e.error_factor - expected).abs() < 1e-12, "λ={l}: {}", e.error_factor);
            assert!(e.p_err <= 0.1 && e.p_err >= 0.0);
        }
    }

    #[test]
    fn key_file_formats() {
        let key = KeyMaterial::from_bits(vec![true, false, true, true, false, false, true, false, true, true]);
        let text = key.to_key_file();
        assert_eq!(text, "10:b2c0\n");
        assert_eq!(KeyMaterial::parse_key_file(&text).unwrap(), key);
        assert_eq!(KeyMaterial::parse_key_file(&key.to_bit_string()).unwrap(), key);
        assert!(KeyMaterial::parse_key_file("10:b2c1").is_err());
        assert!(KeyMaterial::parse_key_file("3:b2c0").is_err());
        assert!(KeyMaterial::parse_key_file("01x1").is_err());
    }

    proptest! {
        #[test]
        fn reconcile_against_own_code_matches(bits in prop::collection::vec(any::<bool>(), 0..300)) {
            let k = KeyMaterial::from_bits(bits);
            prop_assert_eq!(reconcile(&k, k.xor_code()), Verdict::Match);
        }

        #[test]
        fn pack_unpack_identity(bits in prop::collection::vec(any::<bool>(), 0..300)) {
            prop_assert_eq!(unpack_bits(&pack_bits(&bits), bits.len()).unwrap(), bits);
        }

        #[test]
        fn every_count_maps_to_one_bit(n in any::<u32>(), t in any::<u32>()) {
            prop_assert_eq!(bit_from_count(n, t), n > t);
        }
    }
}
