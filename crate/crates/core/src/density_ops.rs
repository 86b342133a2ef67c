//! Diagonal density matrices and the two distances used to spot an
//! eavesdropper.
//!
//! Alice's measurement removes every off-diagonal element, so each matrix Bob
//! (or Eve) could hold is a mixture of Fock states and is fully described by
//! its photon-number probabilities. Matrices with different cutoffs are
//! compared by zero-padding the shorter diagonal.

use crate::photon_stats::PhotonDistribution;

/// `Σ P_k |k⟩⟨k|`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagonalDensityMatrix {
    diag: PhotonDistribution,
    error_bound: f64,
}

impl DiagonalDensityMatrix {
    pub fn new(diag: PhotonDistribution) -> Self {
        let error_bound = diag.tail_mass();
        DiagonalDensityMatrix { diag, error_bound }
    }

    /// Attaches an explicit bound on the probability mass that was
    /// truncated or redistributed while the matrix was built.
    pub fn with_error_bound(diag: PhotonDistribution, error_bound: f64) -> Self {
        let error_bound = error_bound.max(diag.tail_mass());
        DiagonalDensityMatrix { diag, error_bound }
    }

    pub fn diag(&self) -> &PhotonDistribution {
        &self.diag
    }

    pub fn into_diag(self) -> PhotonDistribution {
        self.diag
    }

    pub fn error_bound(&self) -> f64 {
        self.error_bound
    }

    pub fn trace(&self) -> f64 {
        self.diag.probs().iter().sum()
    }

    fn padded_len(&self, other: &Self) -> usize {
        self.diag.probs().len().max(other.diag.probs().len())
    }
}

impl From<PhotonDistribution> for DiagonalDensityMatrix {
    fn from(diag: PhotonDistribution) -> Self {
        DiagonalDensityMatrix::new(diag)
    }
}

/// A distance value together with the most the untracked tails could change it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DistanceEstimate {
    pub value: f64,
    pub error_bound: f64,
}

/// Squared Hilbert-Schmidt distance `Σ_n (a_n − b_n)²`.
pub fn hs_distance_sq(a: &DiagonalDensityMatrix, b: &DiagonalDensityMatrix) -> f64 {
    (0..a.padded_len(b))
        .map(|n| {
            let d = a.diag.get(n) - b.diag.get(n);
            d * d
        })
        .sum()
}

/// [`hs_distance_sq`] with the contribution the tails could add: at most
/// `t_a² + t_b²`.
pub fn hs_distance_sq_bounded(a: &DiagonalDensityMatrix, b: &DiagonalDensityMatrix) -> DistanceEstimate {
    let (ta, tb) = (a.error_bound, b.error_bound);
    DistanceEstimate { value: hs_distance_sq(a, b), error_bound: ta * ta + tb * tb }
}

/// Weak-norm distance `max_n |a_n − b_n|`.
pub fn weak_distance(a: &DiagonalDensityMatrix, b: &DiagonalDensityMatrix) -> f64 {
    (0..a.padded_len(b)).map(|n| (a.diag.get(n) - b.diag.get(n)).abs()).fold(0.0, f64::max)
}

pub fn weak_distance_bounded(a: &DiagonalDensityMatrix, b: &DiagonalDensityMatrix) -> DistanceEstimate {
    DistanceEstimate { value: weak_distance(a, b), error_bound: a.error_bound.max(b.error_bound) }
}
