//! Group-relative policy optimization: group-normalized advantages, the
//! clipped surrogate objective, and KL regularization to a reference
//! policy.

use alloc::vec::Vec;
use core::fmt;

use crate::math;

/// Guard added to the advantage-normalizing standard deviation so constant
/// reward groups degenerate to zero advantages instead of dividing by zero.
pub const ADVANTAGE_STD_GUARD: f64 = 1e-6;

/// Group-relative advantages: `(R_i − mean) / (std + guard)` with the
/// population standard deviation, broadcast to every token of rollout `i`
/// by the caller.
pub fn group_advantages(rewards: &[f64]) -> Vec<f64> {
    let g = rewards.len();
    if g == 0 {
        return Vec::new();
    }
    let mean = rewards.iter().sum::<f64>() / g as f64;
    let variance = rewards.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / g as f64;
    let denom = math::sqrt(variance) + ADVANTAGE_STD_GUARD;
    rewards.iter().map(|r| (r - mean) / denom).collect()
}

/// Clipped surrogate for one token:
/// `min(ratio·Â, clip(ratio, 1−ε, 1+ε)·Â)`.
pub fn clipped_surrogate(ratio: f64, advantage: f64, epsilon: f64) -> f64 {
    let clipped = ratio.clamp(1.0 - epsilon, 1.0 + epsilon);
    (ratio * advantage).min(clipped * advantage)
}

/// `k3` estimator of the per-token KL to the reference policy:
/// `exp(b−a) − (b−a) − 1` for `a = log π_θ`, `b = log π_ref`.
///
/// Nonnegative for all inputs and zero iff the logprobs coincide;
/// unbiased for the exact KL in expectation over sampled tokens.
pub fn k3_divergence(current_logprob: f64, ref_logprob: f64) -> f64 {
    let delta = ref_logprob - current_logprob;
    math::exp(delta) - delta - 1.0
}

/// Exact KL divergence `KL(p ‖ q) = Σ p·(ln p − ln q)` between two full
/// next-token distributions, with `0·ln 0 = 0`.
///
/// Provided for cross-checking the sampled `k3` estimate on tiny
/// vocabularies where the full distributions are available.
pub fn exact_kl(current_probs: &[f64], reference_probs: &[f64]) -> f64 {
    current_probs
        .iter()
        .zip(reference_probs)
        .map(|(&p, &q)| {
            if p > 0.0 {
                p * (math::ln(p) - math::ln(q))
            } else {
                0.0
            }
        })
        .sum()
}

/// Aligned per-rollout inputs for one GRPO loss evaluation.
///
/// The three logprob arrays hold one entry per token of each rollout and
/// must agree on every rollout's length.
#[derive(Debug, Clone, PartialEq)]
pub struct GrpoBatchInputs {
    /// Final per-rollout rewards `R_i`.
    pub rewards: Vec<f64>,
    /// Per-token log-probabilities under the current policy `π_θ`.
    pub current_logprobs: Vec<Vec<f64>>,
    /// Per-token log-probabilities under the rollout policy `π_θ_old`.
    pub old_logprobs: Vec<Vec<f64>>,
    /// Per-token log-probabilities under the reference policy `π_ref`.
    pub ref_logprobs: Vec<Vec<f64>>,
    /// Clipping radius `ε > 0`.
    pub clip_epsilon: f64,
    /// KL penalty coefficient `β ≥ 0`.
    pub kl_beta: f64,
}

/// Loss components of one GRPO evaluation; all normalized by the total
/// token count `Σ|o_i|`.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct GrpoLoss {
    pub policy_loss: f64,
    pub kl: f64,
    /// `policy_loss + β·kl`.
    pub total: f64,
}

/// Token-normalized GRPO loss with the `k3` KL penalty:
///
/// `policy = −(1/Σ|o_i|)·Σ_i Σ_t min(r_{i,t}·Â_i, clip(r_{i,t})·Â_i)`
/// with `r_{i,t} = exp(logπ_θ − logπ_old)`, plus `β` times the mean `k3`
/// divergence to the reference policy.
///
/// Sums run in rollout-major, token-minor order so results are bit-stable
/// across runs.
pub fn grpo_loss(inputs: &GrpoBatchInputs, advantages: &[f64]) -> Result<GrpoLoss, GrpoError> {
    let n = inputs.rewards.len();
    if advantages.len() != n
        || inputs.current_logprobs.len() != n
        || inputs.old_logprobs.len() != n
        || inputs.ref_logprobs.len() != n
    {
        return Err(GrpoError::MisalignedInputs {
            what: "per-rollout arrays differ in length",
        });
    }
    if inputs.clip_epsilon.is_nan() || inputs.clip_epsilon <= 0.0 {
        return Err(GrpoError::InvalidParameter {
            what: "clip_epsilon must be positive",
        });
    }
    if inputs.kl_beta.is_nan() || inputs.kl_beta < 0.0 {
        return Err(GrpoError::InvalidParameter {
            what: "kl_beta must be nonnegative",
        });
    }

    let mut total_tokens = 0usize;
    let mut surrogate_sum = 0.0;
    let mut kl_sum = 0.0;
    for (i, &advantage) in advantages.iter().enumerate() {
        let current = &inputs.current_logprobs[i];
        let old = &inputs.old_logprobs[i];
        let reference = &inputs.ref_logprobs[i];
        if old.len() != current.len() || reference.len() != current.len() {
            return Err(GrpoError::MisalignedInputs {
                what: "token logprob arrays differ in length within a rollout",
            });
        }
        total_tokens += current.len();
        for ((&cur, &prev), &anchor) in current.iter().zip(old).zip(reference) {
            let ratio = math::exp(cur - prev);
            surrogate_sum += clipped_surrogate(ratio, advantage, inputs.clip_epsilon);
            kl_sum += k3_divergence(cur, anchor);
        }
    }
    if total_tokens == 0 {
        return Err(GrpoError::EmptyInputs);
    }

    let scale = 1.0 / total_tokens as f64;
    let policy_loss = -scale * surrogate_sum;
    let kl = scale * kl_sum;
    Ok(GrpoLoss {
        policy_loss,
        kl,
        total: policy_loss + inputs.kl_beta * kl,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub enum GrpoError {
    MisalignedInputs { what: &'static str },
    InvalidParameter { what: &'static str },
    EmptyInputs,
}

impl fmt::Display for GrpoError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::MisalignedInputs { what } => write!(f, "misaligned GRPO inputs: {what}"),
            Self::InvalidParameter { what } => write!(f, "invalid GRPO parameter: {what}"),
            Self::EmptyInputs => f.write_str("GRPO inputs contain no tokens"),
        }
    }
}

impl core::error::Error for GrpoError {}
