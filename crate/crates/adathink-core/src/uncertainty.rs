//! Token-level entropy, top-K sequence uncertainty, and batch min–max
//! normalization.
//!
//! Entropies are in nats throughout; the base cancels in the min–max
//! normalization, so this is an internal convention only. Entropies are
//! those of the training policy's distributions as ingested, regardless of
//! which policy generated the tokens.

use alloc::vec::Vec;
use core::fmt;

use crate::math;
use crate::rollout::{Batch, TokenStep};

/// Default top-K fraction: the top 20% most uncertain tokens.
pub const DEFAULT_K_FRACTION: f64 = 0.2;

/// Shannon entropy of one decoding step, in nats, with `0·log 0 = 0`.
///
/// When the step carries only a precomputed entropy, that value is
/// returned verbatim.
pub fn token_entropy(step: &TokenStep) -> f64 {
    match step.probs() {
        Some(probs) => {
            let mut h = 0.0;
            for &p in probs {
                if p > 0.0 {
                    h -= p * math::ln(p);
                }
            }
            h
        }
        None => step
            .precomputed_entropy()
            .expect("token step carries either probs or a precomputed entropy"),
    }
}

/// The top-K part of an output-level uncertainty: mean entropy of the K
/// most uncertain tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceUncertainty {
    /// Mean of the `k_used` largest token entropies (nats).
    pub raw: f64,
    /// `K = max(1, ceil(k_fraction · |steps|))`.
    pub k_used: usize,
    /// Step indices of the selected tokens, ascending.
    pub topk_indices: Vec<usize>,
}

/// Mean entropy over the top-K most uncertain tokens of a sequence.
///
/// Ties at the K-th value are broken by earlier step index. `k_fraction`
/// must lie in `(0, 1]`; the floor of 1 keeps the selection nonempty for
/// short outputs.
pub fn sequence_uncertainty(
    steps: &[TokenStep],
    k_fraction: f64,
) -> Result<SequenceUncertainty, UncertaintyError> {
    if steps.is_empty() {
        return Err(UncertaintyError::EmptySequence);
    }
    if !k_fraction.is_finite() || k_fraction <= 0.0 || k_fraction > 1.0 {
        return Err(UncertaintyError::InvalidKFraction { value: k_fraction });
    }
    let n = steps.len();
    let k = (math::ceil(k_fraction * n as f64) as usize).clamp(1, n);

    let entropies: Vec<f64> = steps.iter().map(token_entropy).collect();
    let mut order: Vec<usize> = (0..n).collect();
    // Descending entropy, ascending index on ties.
    order.sort_by(|&a, &b| {
        entropies[b]
            .total_cmp(&entropies[a])
            .then(a.cmp(&b))
    });
    let mut topk: Vec<usize> = order[..k].to_vec();
    topk.sort_unstable();

    let raw = topk.iter().map(|&i| entropies[i]).sum::<f64>() / k as f64;
    Ok(SequenceUncertainty {
        raw,
        k_used: k,
        topk_indices: topk,
    })
}

/// Min–max normalization over a batch of raw uncertainties.
///
/// Degenerate batches (`max == min`, including singletons) map to all
/// zeros, i.e. minimum uncertainty. Outputs are clamped into `[0, 1]`.
pub fn normalize_batch(raws: &[f64]) -> Vec<f64> {
    let min = raws.iter().copied().fold(f64::INFINITY, f64::min);
    let max = raws.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let range = max - min;
    raws.iter()
        .map(|&h| {
            if range > 0.0 {
                ((h - min) / range).clamp(0.0, 1.0)
            } else {
                0.0
            }
        })
        .collect()
}

/// Output-level uncertainty of one rollout after batch normalization.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct UncertaintyScore {
    /// Mean of the `k_used` largest token entropies (nats).
    pub raw: f64,
    /// Batch min–max normalized value in `[0, 1]`.
    pub normalized: f64,
    pub k_used: usize,
    pub topk_indices: Vec<usize>,
}

/// Uncertainty pipeline over a whole batch: per-rollout top-K raw scores
/// followed by min–max normalization over all `|B|·G` rollouts, in
/// group-major order.
pub fn batch_uncertainties(
    batch: &Batch,
    k_fraction: f64,
) -> Result<Vec<UncertaintyScore>, UncertaintyError> {
    let raw: Vec<SequenceUncertainty> = batch
        .rollouts()
        .map(|r| sequence_uncertainty(r.steps(), k_fraction))
        .collect::<Result<_, _>>()?;
    let normalized = normalize_batch(&raw.iter().map(|u| u.raw).collect::<Vec<_>>());
    Ok(raw
        .into_iter()
        .zip(normalized)
        .map(|(u, normalized)| UncertaintyScore {
            raw: u.raw,
            normalized,
            k_used: u.k_used,
            topk_indices: u.topk_indices,
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub enum UncertaintyError {
    EmptySequence,
    InvalidKFraction { value: f64 },
}

impl fmt::Display for UncertaintyError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::EmptySequence => f.write_str("cannot score an empty token sequence"),
            Self::InvalidKFraction { value } => {
                write!(f, "k_fraction must be in (0, 1], got {value}")
            }
        }
    }
}

impl core::error::Error for UncertaintyError {}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use approx::assert_relative_eq;

    fn entropy_steps(entropies: &[f64]) -> Vec<TokenStep> {
        entropies
            .iter()
            .map(|&e| TokenStep::from_entropy(e, 1.0).unwrap())
            .collect()
    }

    #[test]
    fn uniform_entropy_is_log_v() {
        let step = TokenStep::from_probs(vec![0.25; 4], 1.0).unwrap();
        assert_relative_eq!(token_entropy(&step), math::ln(4.0), epsilon = 1e-12);
    }

    #[test]
    fn one_hot_entropy_is_zero() {
        let step = TokenStep::from_probs(vec![1.0, 0.0, 0.0], 1.0).unwrap();
        assert_eq!(token_entropy(&step), 0.0);
    }

    #[test]
    fn three_way_entropy_hand_computed() {
        // -(0.7 ln 0.7 + 0.2 ln 0.2 + 0.1 ln 0.1) = 0.801819 (nats).
        let step = TokenStep::from_probs(vec![0.7, 0.2, 0.1], 1.0).unwrap();
        assert_relative_eq!(token_entropy(&step), 0.801819, epsilon = 1e-6);
    }

    #[test]
    fn precomputed_entropy_returned_verbatim() {
        let step = TokenStep::from_entropy(0.7, 1.0).unwrap();
        assert_eq!(token_entropy(&step), 0.7);
    }

    #[test]
    fn all_zero_entropies_k_floor_is_one() {
        let u = sequence_uncertainty(&entropy_steps(&[0.0; 5]), 0.2).unwrap();
        assert_eq!(u.k_used, 1);
        assert_eq!(u.raw, 0.0);
    }

    #[test]
    fn top_two_of_four() {
        let u = sequence_uncertainty(&entropy_steps(&[1.0, 0.2, 0.8, 0.4]), 0.5).unwrap();
        assert_eq!(u.k_used, 2);
        assert_eq!(u.topk_indices, vec![0, 2]);
        assert_relative_eq!(u.raw, 0.9, epsilon = 1e-12);
    }

    #[test]
    fn single_step_any_fraction() {
        let u = sequence_uncertainty(&entropy_steps(&[0.7]), 0.01).unwrap();
        assert_eq!(u.k_used, 1);
        assert_eq!(u.raw, 0.7);
    }

    #[test]
    fn ties_break_toward_earlier_steps() {
        let u = sequence_uncertainty(&entropy_steps(&[0.5, 0.5, 0.5, 0.1]), 0.5).unwrap();
        assert_eq!(u.topk_indices, vec![0, 1]);
    }

    #[test]
    fn empty_sequence_rejected() {
        assert_eq!(
            sequence_uncertainty(&[], 0.2),
            Err(UncertaintyError::EmptySequence)
        );
    }

    #[test]
    fn normalize_hand_case() {
        let normalized = normalize_batch(&[0.2, 0.8, 0.5]);
        assert_eq!(normalized[0], 0.0);
        assert_eq!(normalized[1], 1.0);
        assert_relative_eq!(normalized[2], 0.5, epsilon = 1e-12);
    }

    #[test]
    fn normalize_degenerate_and_singleton() {
        assert_eq!(normalize_batch(&[0.4, 0.4, 0.4]), vec![0.0, 0.0, 0.0]);
        assert_eq!(normalize_batch(&[3.0]), vec![0.0]);
    }
}
