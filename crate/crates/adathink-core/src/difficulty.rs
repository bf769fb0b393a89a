//! Problem-difficulty estimation: sampling accuracy and its
//! uncertainty-discounted refinement.

use alloc::vec::Vec;
use core::fmt;

use crate::rollout::{group_accuracy, QuestionGroup};

/// Uncertainty-guided difficulty of one question, with the per-rollout
/// terms retained as an audit trail for reward explainability.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct DifficultyScore {
    /// `D_q ∈ [0, 1]`.
    pub value: f64,
    /// Uncertainty weight `α ∈ [0, 1]` used to compute the score.
    pub alpha: f64,
    /// One term per rollout: `I[correct]·(α(1−H̃) + (1−α))`.
    pub per_rollout_terms: Vec<f64>,
}

/// Sampling-accuracy difficulty: `1 − (1/G)·Σ I[o_i = y*]`.
pub fn difficulty_acc(group: &QuestionGroup) -> f64 {
    1.0 - group_accuracy(group)
}

/// Difficulty with correctness discounted by output-level uncertainty:
///
/// `D_q = 1 − (1/G)·Σ_i I[o_i = y*]·(α(1−H̃_i) + (1−α))`
///
/// The `(1−α)` term carries the correctness indicator; this is the reading
/// that keeps `D_q ∈ [0, 1]` and reduces exactly to [`difficulty_acc`] at
/// `α = 0`.
pub fn difficulty_uncertainty(
    group: &QuestionGroup,
    normalized_uncertainties: &[f64],
    alpha: f64,
) -> Result<DifficultyScore, DifficultyError> {
    if !alpha.is_finite() || !(0.0..=1.0).contains(&alpha) {
        return Err(DifficultyError::InvalidAlpha { value: alpha });
    }
    let g = group.size();
    if normalized_uncertainties.len() != g {
        return Err(DifficultyError::LengthMismatch {
            rollouts: g,
            uncertainties: normalized_uncertainties.len(),
        });
    }
    let per_rollout_terms: Vec<f64> = group
        .correctness()
        .zip(normalized_uncertainties)
        .map(|(correct, &h)| {
            if correct {
                alpha * (1.0 - h) + (1.0 - alpha)
            } else {
                0.0
            }
        })
        .collect();
    let mean: f64 = per_rollout_terms.iter().sum::<f64>() / g as f64;
    Ok(DifficultyScore {
        value: (1.0 - mean).clamp(0.0, 1.0),
        alpha,
        per_rollout_terms,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub enum DifficultyError {
    InvalidAlpha { value: f64 },
    LengthMismatch { rollouts: usize, uncertainties: usize },
}

impl fmt::Display for DifficultyError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::InvalidAlpha { value } => write!(f, "alpha must be in [0, 1], got {value}"),
            Self::LengthMismatch {
                rollouts,
                uncertainties,
            } => write!(
                f,
                "group has {rollouts} rollouts but {uncertainties} normalized uncertainties"
            ),
        }
    }
}

impl core::error::Error for DifficultyError {}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rollout::{Rollout, TokenStep};
    use alloc::vec;
    use alloc::vec::Vec;

    fn group(flags: &[bool]) -> QuestionGroup {
        let rollouts: Vec<Rollout> = flags
            .iter()
            .map(|&ok| {
                Rollout::builder(vec![TokenStep::from_entropy(0.0, 1.0).unwrap()], "a")
                    .correct_override(ok)
                    .build()
                    .unwrap()
            })
            .collect();
        QuestionGroup::new("q", "a", rollouts).unwrap()
    }

    #[test]
    fn acc_difficulty_endpoints_and_hand_count() {
        assert_eq!(difficulty_acc(&group(&[true; 8])), 0.0);
        assert_eq!(difficulty_acc(&group(&[false; 8])), 1.0);
        // 6 of 8 correct -> 0.25.
        assert_eq!(
            difficulty_acc(&group(&[true, true, true, true, true, true, false, false])),
            0.25
        );
    }

    #[test]
    fn all_wrong_is_max_difficulty_regardless_of_uncertainty() {
        let g = group(&[false; 8]);
        let d = difficulty_uncertainty(&g, &[0.3; 8], 0.7).unwrap();
        assert_eq!(d.value, 1.0);
    }

    #[test]
    fn all_correct_confident_is_zero_difficulty() {
        let g = group(&[true; 8]);
        let d = difficulty_uncertainty(&g, &[0.0; 8], 0.9).unwrap();
        assert_eq!(d.value, 0.0);
    }

    #[test]
    fn mixed_case_hand_traced() {
        // G=2: correct with H̃=1 and wrong, α=0.5:
        // 1 − 0.5·(0.5·0 + 0.5) = 0.75.
        let g = group(&[true, false]);
        let d = difficulty_uncertainty(&g, &[1.0, 0.0], 0.5).unwrap();
        assert_eq!(d.value, 0.75);
        assert_eq!(d.per_rollout_terms, vec![0.5, 0.0]);
    }

    #[test]
    fn alpha_zero_reduces_to_sampling_accuracy_exactly() {
        let g = group(&[true, false, true, true, false, true, true, false]);
        let d = difficulty_uncertainty(&g, &[0.9, 0.1, 0.5, 0.3, 1.0, 0.0, 0.2, 0.7], 0.0).unwrap();
        assert_eq!(d.value, difficulty_acc(&g));
    }

    #[test]
    fn length_mismatch_rejected() {
        let g = group(&[true, false]);
        assert!(matches!(
            difficulty_uncertainty(&g, &[0.5], 0.5),
            Err(DifficultyError::LengthMismatch { .. })
        ));
    }
}
