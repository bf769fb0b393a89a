//! Reward calibration: dynamic difficulty threshold, EMA-smoothed batch
//! statistics, the piecewise length reward, composite rewards, and the
//! optional n-gram repetition penalty.

use alloc::collections::BTreeSet;
use alloc::vec::Vec;
use core::fmt;

use crate::difficulty::{difficulty_uncertainty, DifficultyScore};
use crate::math;
use crate::rollout::Batch;
use crate::uncertainty::batch_uncertainties;

/// Configuration for the n-gram repetition penalty. Disabled by default;
/// some backbones need it to stop hard-question rollouts from padding
/// length with repetition instead of substantive reasoning.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RepetitionConfig {
    pub enabled: bool,
    /// N-gram size.
    pub n: usize,
    /// Penalty weight; the penalty lies in `[-weight, 0]`.
    pub weight: f64,
}

impl Default for RepetitionConfig {
    fn default() -> Self {
        Self {
            enabled: false,
            n: 4,
            weight: 0.1,
        }
    }
}

/// Batch calibration parameters.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CalibrationConfig {
    /// Quantile `τ ∈ (0, 1)` splitting easy from hard questions.
    pub tau: f64,
    /// Uncertainty weight `α ∈ [0, 1]` in the difficulty estimate.
    pub alpha: f64,
    /// Top-K fraction for sequence uncertainty.
    pub k_fraction: f64,
    /// EMA momentum `α_m ∈ (0, 1]` for the batch statistics.
    pub alpha_m: f64,
    pub repetition: RepetitionConfig,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        Self {
            tau: 0.7,
            alpha: 0.5,
            k_fraction: 0.2,
            alpha_m: 0.1,
            repetition: RepetitionConfig::default(),
        }
    }
}

impl CalibrationConfig {
    pub fn validate(&self) -> Result<(), CalibrationError> {
        let check = |ok: bool, what: &'static str| {
            if ok {
                Ok(())
            } else {
                Err(CalibrationError::InvalidConfig { what })
            }
        };
        check(
            self.tau.is_finite() && self.tau > 0.0 && self.tau < 1.0,
            "tau must be in (0, 1)",
        )?;
        check(
            self.alpha.is_finite() && (0.0..=1.0).contains(&self.alpha),
            "alpha must be in [0, 1]",
        )?;
        check(
            self.k_fraction.is_finite() && self.k_fraction > 0.0 && self.k_fraction <= 1.0,
            "k_fraction must be in (0, 1]",
        )?;
        check(
            self.alpha_m.is_finite() && self.alpha_m > 0.0 && self.alpha_m <= 1.0,
            "alpha_m must be in (0, 1]",
        )?;
        check(self.repetition.n >= 1, "repetition.n must be at least 1")?;
        check(
            self.repetition.weight.is_finite() && self.repetition.weight >= 0.0,
            "repetition.weight must be nonnegative",
        )
    }
}

/// EMA-smoothed batch statistics carried across batches: the difficulty
/// threshold `θ_B` and the mean output lengths of simple and hard
/// questions.
///
/// A fresh state is unseeded; the first update copies the current batch
/// statistics directly. Either mean length may stay unseeded for longer
/// when early batches contain no simple (resp. hard) rollouts.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CalibrationState {
    theta: Option<f64>,
    mean_len_simple: Option<f64>,
    mean_len_hard: Option<f64>,
    momentum: f64,
}

impl CalibrationState {
    /// A fresh, unseeded state with momentum `α_m ∈ (0, 1]`.
    pub fn new(momentum: f64) -> Result<Self, CalibrationError> {
        if !momentum.is_finite() || momentum <= 0.0 || momentum > 1.0 {
            return Err(CalibrationError::InvalidConfig {
                what: "momentum must be in (0, 1]",
            });
        }
        Ok(Self {
            theta: None,
            mean_len_simple: None,
            mean_len_hard: None,
            momentum,
        })
    }

    /// Reconstructs a state from previously saved statistics.
    pub fn from_parts(
        theta: Option<f64>,
        mean_len_simple: Option<f64>,
        mean_len_hard: Option<f64>,
        momentum: f64,
    ) -> Result<Self, CalibrationError> {
        let mut state = Self::new(momentum)?;
        state.theta = theta;
        state.mean_len_simple = mean_len_simple;
        state.mean_len_hard = mean_len_hard;
        Ok(state)
    }

    pub fn initialized(&self) -> bool {
        self.theta.is_some()
    }

    pub fn theta(&self) -> Option<f64> {
        self.theta
    }

    pub fn mean_len_simple(&self) -> Option<f64> {
        self.mean_len_simple
    }

    pub fn mean_len_hard(&self) -> Option<f64> {
        self.mean_len_hard
    }

    pub fn momentum(&self) -> f64 {
        self.momentum
    }
}

/// τ-quantile of the difficulty scores using linear interpolation between
/// order statistics (position `(n−1)·τ`).
///
/// The caller guarantees a nonempty list.
pub fn batch_threshold(difficulties: &[f64], tau: f64) -> f64 {
    assert!(
        !difficulties.is_empty(),
        "batch_threshold requires at least one difficulty score"
    );
    let mut sorted = difficulties.to_vec();
    sorted.sort_by(f64::total_cmp);
    let position = (sorted.len() - 1) as f64 * tau;
    let lo = math::floor(position) as usize;
    let hi = math::ceil(position) as usize;
    if lo == hi {
        sorted[lo]
    } else {
        sorted[lo] + (sorted[hi] - sorted[lo]) * (position - lo as f64)
    }
}

/// One EMA step over the batch statistics:
/// `x ← α_m·x_cur + (1−α_m)·x_old`.
///
/// An unseeded statistic is seeded directly by its first observation; when
/// the current batch has no simple (resp. hard) rollouts the corresponding
/// mean length carries over unchanged.
pub fn ema_update(
    state: &CalibrationState,
    theta_cur: f64,
    mean_len_simple_cur: Option<f64>,
    mean_len_hard_cur: Option<f64>,
) -> CalibrationState {
    let momentum = state.momentum;
    let blend = |old: Option<f64>, cur: Option<f64>| match (old, cur) {
        (Some(o), Some(c)) => Some(momentum * c + (1.0 - momentum) * o),
        (None, Some(c)) => Some(c),
        (old, None) => old,
    };
    CalibrationState {
        theta: blend(state.theta, Some(theta_cur)),
        mean_len_simple: blend(state.mean_len_simple, mean_len_simple_cur),
        mean_len_hard: blend(state.mean_len_hard, mean_len_hard_cur),
        momentum,
    }
}

/// Uncertainty scaling factor `ρ = 0.5 + 0.5·(1 − H̃)`, in `[0.5, 1]`.
pub fn scaling_factor(normalized_uncertainty: f64) -> f64 {
    0.5 + 0.5 * (1.0 - normalized_uncertainty)
}

/// Which branch of the piecewise length reward fired.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum RewardBranch {
    /// Easy question answered correctly: shorter is better.
    SimpleCorrect,
    /// Hard question answered wrongly: longer attempts are compensated.
    HardWrong,
    /// The zero branch (including exact threshold ties).
    Neutral,
}

impl RewardBranch {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::SimpleCorrect => "simple_correct",
            Self::HardWrong => "hard_wrong",
            Self::Neutral => "neutral",
        }
    }
}

/// A length reward value together with the branch that produced it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LengthReward {
    pub value: f64,
    pub branch: RewardBranch,
}

/// Piecewise length reward:
///
/// * `D_q < θ_B` and correct → `max(0, 1 − (L/L̄_s)·ρ)`;
/// * `D_q > θ_B` and wrong  → `min(1, (L/L̄_h)·ρ − 1)`;
/// * otherwise (including `D_q == θ_B`) → `0`.
///
/// If a firing branch lacks its mean-length statistic (no simple or hard
/// rollouts observed yet), the reward falls back to the neutral branch:
/// there is no length scale to calibrate against.
pub fn length_reward(
    length: usize,
    is_correct: bool,
    difficulty: f64,
    state: &CalibrationState,
    rho: f64,
) -> Result<LengthReward, CalibrationError> {
    let theta = state.theta().ok_or(CalibrationError::UninitializedState)?;
    let l = length as f64;
    if difficulty < theta && is_correct {
        if let Some(mean_simple) = state.mean_len_simple() {
            return Ok(LengthReward {
                value: (1.0 - (l / mean_simple) * rho).max(0.0),
                branch: RewardBranch::SimpleCorrect,
            });
        }
    } else if difficulty > theta && !is_correct {
        if let Some(mean_hard) = state.mean_len_hard() {
            return Ok(LengthReward {
                value: ((l / mean_hard) * rho - 1.0).min(1.0),
                branch: RewardBranch::HardWrong,
            });
        }
    }
    Ok(LengthReward {
        value: 0.0,
        branch: RewardBranch::Neutral,
    })
}

/// Composite per-rollout reward and its components.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CompositeReward {
    pub acc: f64,
    pub format: f64,
    pub len: f64,
    pub repetition_penalty: f64,
    /// `R_i = R_acc + 0.5·R_format + 0.5·R_len + penalty`.
    pub total: f64,
}

/// Combines accuracy, format adherence, length calibration, and the
/// optional repetition penalty into the final reward.
pub fn composite_reward(
    acc_ok: bool,
    format_ok: bool,
    len_reward: f64,
    repetition_penalty: f64,
) -> CompositeReward {
    let acc = if acc_ok { 1.0 } else { 0.0 };
    let format = if format_ok { 1.0 } else { 0.0 };
    CompositeReward {
        acc,
        format,
        len: len_reward,
        repetition_penalty,
        total: acc + 0.5 * format + 0.5 * len_reward + repetition_penalty,
    }
}

/// N-gram repetition penalty:
/// `−weight · (repeated n-gram occurrences / total n-grams)`, where an
/// occurrence is repeated if the same n-gram appeared earlier in the
/// sequence. Zero when `n` exceeds the sequence length.
pub fn repetition_penalty(token_ids: &[i64], n: usize, weight: f64) -> f64 {
    assert!(n >= 1, "n-gram size must be at least 1");
    if n > token_ids.len() {
        return 0.0;
    }
    let mut seen: BTreeSet<&[i64]> = BTreeSet::new();
    let mut repeats = 0usize;
    let mut total = 0usize;
    for window in token_ids.windows(n) {
        total += 1;
        if !seen.insert(window) {
            repeats += 1;
        }
    }
    -weight * repeats as f64 / total as f64
}

/// Per-rollout calibration output with the audit values used to produce
/// the reward.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RolloutReward {
    pub reward: CompositeReward,
    pub branch: RewardBranch,
    /// Group difficulty `D_q` this rollout was gated by.
    pub difficulty: f64,
    /// Batch-normalized output uncertainty `H̃_i`.
    pub normalized_uncertainty: f64,
    /// Raw top-K mean entropy `H_i` (nats).
    pub raw_uncertainty: f64,
    /// Scaling factor `ρ_i`.
    pub rho: f64,
    pub is_correct: bool,
    pub length: usize,
}

/// Result of calibrating one batch.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationOutcome {
    /// Per-rollout rewards in group-major order.
    pub rewards: Vec<RolloutReward>,
    /// Post-update EMA state.
    pub state: CalibrationState,
    /// Per-group difficulty scores, in batch order.
    pub difficulties: Vec<DifficultyScore>,
    /// Post-update threshold `θ_B` that gated the length rewards.
    pub threshold: f64,
}

/// Runs the full batch calibration loop:
/// entropies → top-K uncertainties → batch normalization → per-group
/// difficulties → τ-quantile threshold and EMA update → per-rollout length
/// and composite rewards (using the post-update statistics).
///
/// Membership in the simple/hard pools that feed the current-batch mean
/// lengths uses the pre-update threshold once the state is seeded, and the
/// current-batch quantile on the seeding batch. Groups exactly at the
/// threshold belong to neither pool, matching the strict inequalities of
/// the reward.
pub fn calibrate_batch(
    batch: &Batch,
    config: &CalibrationConfig,
    state: &CalibrationState,
) -> Result<CalibrationOutcome, CalibrationError> {
    config.validate()?;

    let uncertainties = batch_uncertainties(batch, config.k_fraction)?;

    let group_size = batch.group_size();
    let mut difficulties: Vec<DifficultyScore> = Vec::with_capacity(batch.groups().len());
    for (index, group) in batch.groups().iter().enumerate() {
        let slice = &uncertainties[index * group_size..(index + 1) * group_size];
        let normalized: Vec<f64> = slice.iter().map(|u| u.normalized).collect();
        difficulties.push(difficulty_uncertainty(group, &normalized, config.alpha)?);
    }
    let difficulty_values: Vec<f64> = difficulties.iter().map(|d| d.value).collect();

    let theta_cur = batch_threshold(&difficulty_values, config.tau);
    // Pool membership: pre-update threshold once seeded, else the raw
    // current-batch quantile.
    let theta_class = state.theta().unwrap_or(theta_cur);

    let mut simple_lengths = LengthPool::default();
    let mut hard_lengths = LengthPool::default();
    for (group, difficulty) in batch.groups().iter().zip(&difficulty_values) {
        let pool = if *difficulty < theta_class {
            &mut simple_lengths
        } else if *difficulty > theta_class {
            &mut hard_lengths
        } else {
            continue;
        };
        for rollout in group.rollouts() {
            pool.add(rollout.len());
        }
    }

    let next_state = ema_update(state, theta_cur, simple_lengths.mean(), hard_lengths.mean());

    let mut rewards = Vec::with_capacity(batch.total_rollouts());
    for (group_index, group) in batch.groups().iter().enumerate() {
        let difficulty = difficulty_values[group_index];
        for (rollout_index, rollout) in group.rollouts().iter().enumerate() {
            let score = &uncertainties[group_index * group_size + rollout_index];
            let rho = scaling_factor(score.normalized);
            let is_correct = rollout.is_correct_against(group.ground_truth());
            let len_reward =
                length_reward(rollout.len(), is_correct, difficulty, &next_state, rho)?;
            let penalty = match (config.repetition.enabled, rollout.token_ids()) {
                (true, Some(ids)) => {
                    repetition_penalty(ids, config.repetition.n, config.repetition.weight)
                }
                _ => 0.0,
            };
            rewards.push(RolloutReward {
                reward: composite_reward(is_correct, rollout.format_ok(), len_reward.value, penalty),
                branch: len_reward.branch,
                difficulty,
                normalized_uncertainty: score.normalized,
                raw_uncertainty: score.raw,
                rho,
                is_correct,
                length: rollout.len(),
            });
        }
    }

    let threshold = next_state
        .theta()
        .expect("state is seeded by the update above");
    Ok(CalibrationOutcome {
        rewards,
        state: next_state,
        difficulties,
        threshold,
    })
}

#[derive(Default)]
struct LengthPool {
    sum: f64,
    count: usize,
}

impl LengthPool {
    fn add(&mut self, length: usize) {
        self.sum += length as f64;
        self.count += 1;
    }

    fn mean(&self) -> Option<f64> {
        (self.count > 0).then(|| self.sum / self.count as f64)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum CalibrationError {
    InvalidConfig { what: &'static str },
    UninitializedState,
    Uncertainty(crate::uncertainty::UncertaintyError),
    Difficulty(crate::difficulty::DifficultyError),
}

impl fmt::Display for CalibrationError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::InvalidConfig { what } => write!(f, "invalid calibration config: {what}"),
            Self::UninitializedState => {
                f.write_str("calibration state is uninitialized; seed it with a batch first")
            }
            Self::Uncertainty(e) => write!(f, "{e}"),
            Self::Difficulty(e) => write!(f, "{e}"),
        }
    }
}

impl core::error::Error for CalibrationError {}

impl From<crate::uncertainty::UncertaintyError> for CalibrationError {
    fn from(e: crate::uncertainty::UncertaintyError) -> Self {
        Self::Uncertainty(e)
    }
}

impl From<crate::difficulty::DifficultyError> for CalibrationError {
    fn from(e: crate::difficulty::DifficultyError) -> Self {
        Self::Difficulty(e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rollout::{QuestionGroup, Rollout, TokenStep};
    use alloc::vec;
    use approx::assert_relative_eq;

    fn seeded_state(theta: f64, simple: f64, hard: f64) -> CalibrationState {
        CalibrationState::from_parts(Some(theta), Some(simple), Some(hard), 0.1).unwrap()
    }

    #[test]
    fn quantile_midpoint_interpolation() {
        assert_eq!(batch_threshold(&[0.0, 1.0], 0.5), 0.5);
    }

    #[test]
    fn quantile_constant_list() {
        assert_eq!(batch_threshold(&[0.2, 0.2, 0.2], 0.9), 0.2);
    }

    #[test]
    fn quantile_interpolates_between_order_statistics() {
        // Position (4-1)·0.7 = 2.1 between 0.7 and 1.0 -> 0.73.
        assert_relative_eq!(
            batch_threshold(&[0.1, 0.4, 0.7, 1.0], 0.7),
            0.73,
            epsilon = 1e-12
        );
    }

    #[test]
    fn ema_seeds_then_blends() {
        let fresh = CalibrationState::new(0.1).unwrap();
        let seeded = ema_update(&fresh, 0.6, None, None);
        assert_eq!(seeded.theta(), Some(0.6));
        assert!(!fresh.initialized() && seeded.initialized());

        let state = seeded_state(0.5, 10.0, 20.0);
        let next = ema_update(&state, 1.0, Some(10.0), None);
        assert_relative_eq!(next.theta().unwrap(), 0.55, epsilon = 1e-12);
        assert_eq!(next.mean_len_simple(), Some(10.0));
        // No hard rollouts in the batch: carries over.
        assert_eq!(next.mean_len_hard(), Some(20.0));
    }

    #[test]
    fn ema_fixed_point_on_constant_input() {
        let mut state = CalibrationState::new(0.1).unwrap();
        for _ in 0..5 {
            state = ema_update(&state, 0.3, Some(7.0), Some(9.0));
        }
        assert_relative_eq!(state.theta().unwrap(), 0.3, epsilon = 1e-12);
        assert_relative_eq!(state.mean_len_simple().unwrap(), 7.0, epsilon = 1e-12);
    }

    #[test]
    fn scaling_factor_endpoints() {
        assert_eq!(scaling_factor(0.0), 1.0);
        assert_eq!(scaling_factor(1.0), 0.5);
        assert_relative_eq!(scaling_factor(0.4), 0.8, epsilon = 1e-12);
    }

    #[test]
    fn length_reward_simple_correct_short_output() {
        let state = seeded_state(0.5, 1000.0, 100.0);
        let r = length_reward(1, true, 0.1, &state, 1.0).unwrap();
        assert_eq!(r.branch, RewardBranch::SimpleCorrect);
        assert_relative_eq!(r.value, 0.999, epsilon = 1e-12);
    }

    #[test]
    fn length_reward_simple_correct_clamps_at_zero() {
        let state = seeded_state(0.5, 100.0, 100.0);
        let r = length_reward(200, true, 0.1, &state, 1.0).unwrap();
        assert_eq!(r.value, 0.0);
        assert_eq!(r.branch, RewardBranch::SimpleCorrect);
    }

    #[test]
    fn length_reward_hard_wrong_endpoints() {
        let state = seeded_state(0.5, 100.0, 100.0);
        // L·ρ == L̄_h -> 0; L·ρ == 2·L̄_h -> clamped to 1.
        let r = length_reward(100, false, 0.9, &state, 1.0).unwrap();
        assert_eq!(r.value, 0.0);
        assert_eq!(r.branch, RewardBranch::HardWrong);
        let r = length_reward(200, false, 0.9, &state, 1.0).unwrap();
        assert_eq!(r.value, 1.0);
        // The floor of the formula: L -> 0 gives -1, not clamped further.
        let r = length_reward(1, false, 0.9, &state, 0.5).unwrap();
        assert_relative_eq!(r.value, 0.005 - 1.0, epsilon = 1e-12);
    }

    #[test]
    fn length_reward_neutral_on_ties_and_cross_branches() {
        let state = seeded_state(0.5, 100.0, 100.0);
        for (correct, difficulty) in [(true, 0.5), (false, 0.5), (false, 0.1), (true, 0.9)] {
            let r = length_reward(10, correct, difficulty, &state, 1.0).unwrap();
            assert_eq!(r.value, 0.0);
            assert_eq!(r.branch, RewardBranch::Neutral);
        }
    }

    #[test]
    fn length_reward_requires_seeded_state() {
        let state = CalibrationState::new(0.1).unwrap();
        assert_eq!(
            length_reward(10, true, 0.1, &state, 1.0),
            Err(CalibrationError::UninitializedState)
        );
    }

    #[test]
    fn composite_reward_arithmetic() {
        assert_eq!(composite_reward(true, true, 1.0, 0.0).total, 2.0);
        assert_eq!(composite_reward(false, false, 0.0, 0.0).total, 0.0);
        assert_eq!(composite_reward(true, true, -1.0, 0.0).total, 1.0);
    }

    #[test]
    fn repetition_penalty_cases() {
        assert_eq!(repetition_penalty(&[1, 2, 3, 4], 2, 1.0), 0.0);
        // Bigrams of [1,2,1,2,1,2]: five total, three repeats.
        assert_relative_eq!(
            repetition_penalty(&[1, 2, 1, 2, 1, 2], 2, 1.0),
            -0.6,
            epsilon = 1e-12
        );
        assert_eq!(repetition_penalty(&[7, 7, 7], 3, 1.0), 0.0);
        // n longer than the sequence: no penalty.
        assert_eq!(repetition_penalty(&[7, 7], 3, 1.0), 0.0);
    }

    fn rollout(entropies: &[f64], answer: &str, correct: bool) -> Rollout {
        let steps = entropies
            .iter()
            .map(|&e| TokenStep::from_entropy(e, 1.0).unwrap())
            .collect();
        Rollout::builder(steps, answer)
            .correct_override(correct)
            .build()
            .unwrap()
    }

    #[test]
    fn calibrate_uniform_batch_gives_zero_length_rewards() {
        // Every group all-correct with identical lengths and entropies:
        // all difficulties equal, θ_B equals that constant, every rollout
        // takes the neutral branch.
        let groups = (0..3)
            .map(|i| {
                QuestionGroup::new(
                    alloc::format!("q{i}"),
                    "a",
                    vec![rollout(&[0.5, 0.5], "a", true), rollout(&[0.5, 0.5], "a", true)],
                )
                .unwrap()
            })
            .collect();
        let batch = Batch::new(groups).unwrap();
        let state = CalibrationState::new(0.1).unwrap();
        let out = calibrate_batch(&batch, &CalibrationConfig::default(), &state).unwrap();
        for r in &out.rewards {
            assert_eq!(r.reward.len, 0.0);
            assert_eq!(r.branch, RewardBranch::Neutral);
        }
        assert!(out.state.initialized());
    }

    #[test]
    fn calibrate_batch_hand_traced() {
        // Two groups, G=2, α=0.5, τ=0.5, k_fraction=1 (plain mean entropy),
        // seeding batch. Raw uncertainties [0.2, 0.4, 0.8, 1.0] normalize
        // to [0, 0.25, 0.75, 1].
        //
        // D_A = 1 − ½·[1.0 + 0.875] = 0.0625 (both correct),
        // D_B = 1 (both wrong); θ_cur = 0.53125 at τ=0.5.
        // Pools split by the raw quantile: L̄_s = mean(2,4) = 3,
        // L̄_h = mean(8,6) = 7; the state seeds to those values.
        let group_a = QuestionGroup::new(
            "a",
            "x",
            vec![
                rollout(&[0.2, 0.2], "x", true),
                rollout(&[0.4, 0.4, 0.4, 0.4], "x", true),
            ],
        )
        .unwrap();
        let group_b = QuestionGroup::new(
            "b",
            "x",
            vec![
                rollout(&[0.8; 8], "y", false),
                rollout(&[1.0; 6], "y", false),
            ],
        )
        .unwrap();
        let batch = Batch::new(vec![group_a, group_b]).unwrap();
        let config = CalibrationConfig {
            tau: 0.5,
            alpha: 0.5,
            k_fraction: 1.0,
            alpha_m: 0.1,
            repetition: RepetitionConfig::default(),
        };
        let state = CalibrationState::new(config.alpha_m).unwrap();
        let out = calibrate_batch(&batch, &config, &state).unwrap();

        assert_relative_eq!(out.difficulties[0].value, 0.0625, epsilon = 1e-12);
        assert_eq!(out.difficulties[1].value, 1.0);
        assert_relative_eq!(out.threshold, 0.53125, epsilon = 1e-12);
        assert_relative_eq!(out.state.mean_len_simple().unwrap(), 3.0, epsilon = 1e-12);
        assert_relative_eq!(out.state.mean_len_hard().unwrap(), 7.0, epsilon = 1e-12);

        // ρ = [1, 0.875, 0.625, 0.5].
        // r1: max(0, 1 − (2/3)·1)       = 1/3      -> total 1 + 0.5 + 1/6.
        // r2: max(0, 1 − (4/3)·0.875)   = 0        -> total 1.5.
        // r3: min(1, (8/7)·0.625 − 1)   = −2/7     -> total 0.5 − 1/7.
        // r4: min(1, (6/7)·0.5 − 1)     = −4/7     -> total 0.5 − 2/7.
        let totals: Vec<f64> = out.rewards.iter().map(|r| r.reward.total).collect();
        assert_relative_eq!(out.rewards[0].reward.len, 1.0 / 3.0, epsilon = 1e-12);
        assert_relative_eq!(totals[0], 1.5 + 1.0 / 6.0, epsilon = 1e-12);
        assert_eq!(out.rewards[0].branch, RewardBranch::SimpleCorrect);
        assert_eq!(totals[1], 1.5);
        assert_relative_eq!(out.rewards[2].reward.len, -2.0 / 7.0, epsilon = 1e-12);
        assert_relative_eq!(totals[2], 0.5 - 1.0 / 7.0, epsilon = 1e-12);
        assert_eq!(out.rewards[2].branch, RewardBranch::HardWrong);
        assert_relative_eq!(totals[3], 0.5 - 2.0 / 7.0, epsilon = 1e-12);

        // Reward ordering audit trail survives into the outcome.
        assert_eq!(out.rewards.len(), 4);
        assert_eq!(out.rewards[0].length, 2);
        assert!(!out.rewards[3].is_correct);
        assert_eq!(out.difficulties[0].per_rollout_terms, vec![1.0, 0.875]);
        assert_eq!(out.rewards[1].normalized_uncertainty, 0.25);
    }

    #[test]
    fn single_group_batch_lands_neutral() {
        // One group, G=2, one correct short / one wrong long: the quantile
        // of a single difficulty equals it, so both rollouts tie with the
        // threshold and take the zero branch; the pools stay empty.
        let group = QuestionGroup::new(
            "q",
            "x",
            vec![rollout(&[0.1, 0.3], "x", true), rollout(&[1.0; 10], "y", false)],
        )
        .unwrap();
        let batch = Batch::new(vec![group]).unwrap();
        let config = CalibrationConfig {
            tau: 0.5,
            alpha: 0.5,
            k_fraction: 0.2,
            ..CalibrationConfig::default()
        };
        let state = CalibrationState::new(config.alpha_m).unwrap();
        let out = calibrate_batch(&batch, &config, &state).unwrap();

        // K = 1 for both rollouts: raws [0.3, 1.0] -> H̃ [0, 1].
        // D = 1 − ½·(0.5·1 + 0.5) = 0.5; θ = 0.5; ties go neutral.
        assert_eq!(out.difficulties[0].value, 0.5);
        assert_eq!(out.threshold, 0.5);
        assert!(out.state.mean_len_simple().is_none());
        assert!(out.state.mean_len_hard().is_none());
        for (r, expected_total) in out.rewards.iter().zip([1.5, 0.5]) {
            assert_eq!(r.branch, RewardBranch::Neutral);
            assert_eq!(r.reward.total, expected_total);
        }
    }
}
