//! Synthetic QA environment and toy parametric policy for running the
//! two-stage adaptive training loop end to end.
//!
//! Questions come in difficulty buckets. A rollout thinks in draft
//! answers: each reasoning step samples a draft from the bucket's M-way
//! answer softmax, and a CONTINUE/STOP draw from the bucket's stop hazard
//! decides whether to commit to that draft. The committed draft (at STOP,
//! or forced at the step cap) is the rollout's answer. The environment
//! marks a rollout correct only if the answer matches the bucket's key
//! *and* an independent comprehension draw succeeds; the comprehension
//! probability rises with rollout length and falls with difficulty, which
//! is what makes thinking longer causally useful on hard questions.
//!
//! Every rollout step carries the true draft distribution, so token
//! entropies are exact and track how settled the policy's answer is —
//! uncertain buckets produce high-entropy steps. The trainer separately
//! optimizes the exact stop-decision and final-answer likelihood.

use alloc::format;
use alloc::string::ToString;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::calibration::{calibrate_batch, CalibrationConfig, CalibrationError, CalibrationState};
use crate::grpo::{group_advantages, grpo_loss, GrpoBatchInputs, GrpoError, GrpoLoss};
use crate::math;
use crate::rollout::{Batch, QuestionGroup, Rollout, TokenStep};

const STREAM_TRAIN: u64 = 1;
const STREAM_EVAL: u64 = 2;
const STREAM_KEYS: u64 = 3;

/// Weight of the greedy baseline's group-relative length penalty.
const GREEDY_PENALTY_WEIGHT: f64 = 1.0;

/// Environment parameters: difficulty buckets, answer space, and the
/// comprehension channel `q(d, L)`.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EnvConfig {
    /// Latent difficulty of each bucket, in `(0, 1]`.
    pub bucket_difficulties: Vec<f64>,
    /// Number of answer options `M`.
    pub num_answers: usize,
    /// Maximum reasoning steps `L_max`.
    pub max_steps: usize,
    /// Comprehension probability at zero length.
    pub q_floor: f64,
    /// Comprehension probability in the long-length limit.
    pub q_ceil: f64,
    /// Length scale `s` of the saturating comprehension curve.
    pub comprehension_scale: f64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            bucket_difficulties: vec![0.1, 0.3, 0.5, 0.7, 0.9],
            num_answers: 4,
            max_steps: 16,
            q_floor: 0.25,
            q_ceil: 0.95,
            comprehension_scale: 0.5,
        }
    }
}

impl EnvConfig {
    pub fn num_buckets(&self) -> usize {
        self.bucket_difficulties.len()
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let check = |ok: bool, what: &'static str| {
            if ok {
                Ok(())
            } else {
                Err(SimError::InvalidEnv { what })
            }
        };
        check(
            !self.bucket_difficulties.is_empty(),
            "at least one difficulty bucket is required",
        )?;
        check(
            self.bucket_difficulties
                .iter()
                .all(|d| d.is_finite() && *d > 0.0 && *d <= 1.0),
            "bucket difficulties must lie in (0, 1]",
        )?;
        check(self.num_answers >= 2, "num_answers must be at least 2")?;
        check(self.max_steps >= 1, "max_steps must be at least 1")?;
        check(
            (0.0..=1.0).contains(&self.q_floor)
                && (0.0..=1.0).contains(&self.q_ceil)
                && self.q_floor <= self.q_ceil,
            "comprehension bounds must satisfy 0 <= q_floor <= q_ceil <= 1",
        )?;
        check(
            self.comprehension_scale.is_finite() && self.comprehension_scale > 0.0,
            "comprehension_scale must be positive",
        )
    }
}

/// One synthetic question: a difficulty bucket, its latent difficulty, and
/// the correct answer index.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SimQuestion {
    pub bucket: usize,
    pub latent_difficulty: f64,
    pub key: usize,
}

/// Probability that a rollout of `length` steps comprehends a question of
/// latent difficulty `d`:
///
/// `q(d, L) = q_floor + (q_ceil − q_floor)·(1 − exp(−L / (s·d·L_max)))`
///
/// Strictly increasing in `L`, strictly decreasing in `d` for `L > 0`.
pub fn comprehension_prob(env: &EnvConfig, latent_difficulty: f64, length: usize) -> f64 {
    let scale = env.comprehension_scale * latent_difficulty * env.max_steps as f64;
    env.q_floor + (env.q_ceil - env.q_floor) * (1.0 - math::exp(-(length as f64) / scale))
}

/// Toy parametric policy: a per-bucket stop logit (geometric-like stop
/// hazard per reasoning step) and per-bucket answer logits.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SimPolicy {
    stop_logits: Vec<f64>,
    /// Row-major `num_buckets × num_answers`.
    answer_logits: Vec<f64>,
    num_answers: usize,
    max_steps: usize,
}

impl SimPolicy {
    /// Zero-initialized policy: stop hazard 0.5 and uniform answers in
    /// every bucket.
    pub fn zeros(num_buckets: usize, num_answers: usize, max_steps: usize) -> Self {
        Self {
            stop_logits: vec![0.0; num_buckets],
            answer_logits: vec![0.0; num_buckets * num_answers],
            num_answers,
            max_steps,
        }
    }

    pub fn num_buckets(&self) -> usize {
        self.stop_logits.len()
    }

    pub fn num_answers(&self) -> usize {
        self.num_answers
    }

    pub fn max_steps(&self) -> usize {
        self.max_steps
    }

    /// Per-step stop hazard of a bucket.
    pub fn stop_prob(&self, bucket: usize) -> f64 {
        math::sigmoid(self.stop_logits[bucket])
    }

    /// M-way answer distribution of a bucket.
    pub fn answer_probs(&self, bucket: usize) -> Vec<f64> {
        let row = &self.answer_logits[bucket * self.num_answers..(bucket + 1) * self.num_answers];
        math::softmax_scaled(row, 1.0)
    }

    /// Number of free parameters: one stop logit per bucket plus the
    /// answer logit matrix.
    pub fn num_params(&self) -> usize {
        self.stop_logits.len() + self.answer_logits.len()
    }

    /// Flattened parameter vector: stop logits first, then answer logits
    /// row-major.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut flat = self.stop_logits.clone();
        flat.extend_from_slice(&self.answer_logits);
        flat
    }

    /// Overwrites the parameters from a flattened vector.
    pub fn set_flat(&mut self, params: &[f64]) {
        assert_eq!(params.len(), self.num_params(), "parameter vector size mismatch");
        let b = self.stop_logits.len();
        self.stop_logits.copy_from_slice(&params[..b]);
        self.answer_logits.copy_from_slice(&params[b..]);
    }

    /// Plain gradient-descent step `θ ← θ − lr·∇`.
    pub fn apply_gradient_step(&mut self, gradient: &[f64], learning_rate: f64) {
        assert_eq!(gradient.len(), self.num_params(), "gradient size mismatch");
        let b = self.stop_logits.len();
        for (p, g) in self.stop_logits.iter_mut().zip(&gradient[..b]) {
            *p -= learning_rate * g;
        }
        for (p, g) in self.answer_logits.iter_mut().zip(&gradient[b..]) {
            *p -= learning_rate * g;
        }
    }

    /// Log-probabilities of a sampled sequence under this policy's current
    /// parameters: one entry per decision token plus one for the answer.
    ///
    /// A non-truncated sequence is `length−1` CONTINUE tokens followed by
    /// STOP; a truncated one is `length` CONTINUE tokens.
    pub fn sequence_logprobs(
        &self,
        bucket: usize,
        length: usize,
        truncated: bool,
        answer_index: usize,
    ) -> Vec<f64> {
        let hazard = self.stop_prob(bucket);
        let mut out = Vec::with_capacity(length + 1);
        for t in 0..length {
            let is_stop = !truncated && t == length - 1;
            out.push(math::ln(if is_stop { hazard } else { 1.0 - hazard }));
        }
        let answer_probs = self.answer_probs(bucket);
        out.push(math::ln(answer_probs[answer_index]));
        out
    }
}

/// A sampled rollout together with the environment-side facts the
/// rollout record itself does not carry.
#[derive(Debug, Clone, PartialEq)]
pub struct SimRollout {
    pub rollout: Rollout,
    pub bucket: usize,
    pub answer_index: usize,
    /// True when the rollout hit the step cap without drawing STOP.
    pub truncated: bool,
}

impl SimRollout {
    pub fn length(&self) -> usize {
        self.rollout.len()
    }

    pub fn env_correct(&self) -> bool {
        self.rollout.correct_override().unwrap_or(false)
    }
}

/// Samples one rollout.
///
/// Reasoning steps run until a STOP draw from the bucket's CONTINUE/STOP
/// hazard or the step cap, with the first step always emitted (`L ≥ 1`).
/// Each step samples a draft answer from the bucket's M-way softmax; the
/// draft at the stopping step is committed as the rollout's answer. An
/// independent comprehension draw with probability `q(d, L)` gates the
/// environment-side correctness mark.
pub fn simulate_rollout(
    policy: &SimPolicy,
    env: &EnvConfig,
    question: &SimQuestion,
    rng: &mut impl Rng,
) -> SimRollout {
    debug_assert_eq!(policy.max_steps(), env.max_steps);
    let hazard = policy.stop_prob(question.bucket);
    let answer_probs = policy.answer_probs(question.bucket);
    let draft_step = TokenStep::from_probs(answer_probs.clone(), 1.0)
        .expect("softmax output is a valid simplex");

    let mut tokens: Vec<i64> = Vec::new();
    let mut logprobs: Vec<f64> = Vec::new();
    let mut stopped = false;
    for _ in 0..policy.max_steps() {
        let stop = rng.gen::<f64>() < hazard;
        let draft = sample_categorical(rng, &answer_probs);
        tokens.push(draft as i64);
        logprobs.push(math::ln(answer_probs[draft]));
        if stop {
            stopped = true;
            break;
        }
    }
    let length = tokens.len();
    let truncated = !stopped;
    let answer_index = tokens[length - 1] as usize;

    let comprehension = rng.gen::<f64>() < comprehension_prob(env, question.latent_difficulty, length);
    let correct = answer_index == question.key && comprehension;

    let rollout = Rollout::builder(vec![draft_step; length], answer_index.to_string())
        .token_ids(tokens)
        .rollout_logprobs(logprobs)
        .correct_override(correct)
        .build()
        .expect("simulated rollout satisfies the data-model invariants");
    SimRollout {
        rollout,
        bucket: question.bucket,
        answer_index,
        truncated,
    }
}

fn sample_categorical(rng: &mut impl Rng, probs: &[f64]) -> usize {
    let u: f64 = rng.gen();
    let mut cumulative = 0.0;
    for (index, &p) in probs.iter().enumerate() {
        cumulative += p;
        if u < cumulative {
            return index;
        }
    }
    probs.len() - 1
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Independent RNG stream for one unit of work, derived from the run seed
/// and a path of indices so rollouts are reproducible regardless of
/// evaluation order.
fn stream(seed: u64, path: &[u64]) -> ChaCha8Rng {
    let mut state = splitmix64(seed);
    for &part in path {
        state = splitmix64(state ^ splitmix64(part));
    }
    ChaCha8Rng::seed_from_u64(state)
}

/// The fixed data of one GRPO update: sampled sequences, their advantages
/// and rewards, and the frozen old/reference log-probabilities. Holds
/// everything needed to evaluate the loss and its analytic gradient at
/// arbitrary policy parameters.
#[derive(Debug, Clone)]
pub struct GrpoStepData {
    seqs: Vec<SampledSeq>,
    rewards: Vec<f64>,
    advantages: Vec<f64>,
    clip_epsilon: f64,
    kl_beta: f64,
}

#[derive(Debug, Clone)]
struct SampledSeq {
    bucket: usize,
    length: usize,
    truncated: bool,
    answer_index: usize,
    old_logprobs: Vec<f64>,
    ref_logprobs: Vec<f64>,
}

impl GrpoStepData {
    /// Freezes a batch of rollouts for one update. `old` is the policy the
    /// rollouts were sampled from; `reference` anchors the KL term.
    pub fn collect(
        rollouts: &[SimRollout],
        rewards: Vec<f64>,
        advantages: Vec<f64>,
        old: &SimPolicy,
        reference: &SimPolicy,
        clip_epsilon: f64,
        kl_beta: f64,
    ) -> Self {
        assert_eq!(rollouts.len(), advantages.len());
        assert_eq!(rollouts.len(), rewards.len());
        let seqs = rollouts
            .iter()
            .map(|r| SampledSeq {
                bucket: r.bucket,
                length: r.length(),
                truncated: r.truncated,
                answer_index: r.answer_index,
                old_logprobs: old.sequence_logprobs(r.bucket, r.length(), r.truncated, r.answer_index),
                ref_logprobs: reference.sequence_logprobs(
                    r.bucket,
                    r.length(),
                    r.truncated,
                    r.answer_index,
                ),
            })
            .collect();
        Self {
            seqs,
            rewards,
            advantages,
            clip_epsilon,
            kl_beta,
        }
    }

    /// GRPO loss of the frozen batch evaluated at `policy`.
    pub fn loss(&self, policy: &SimPolicy) -> Result<GrpoLoss, GrpoError> {
        let inputs = GrpoBatchInputs {
            rewards: self.rewards.clone(),
            current_logprobs: self
                .seqs
                .iter()
                .map(|s| policy.sequence_logprobs(s.bucket, s.length, s.truncated, s.answer_index))
                .collect(),
            old_logprobs: self.seqs.iter().map(|s| s.old_logprobs.clone()).collect(),
            ref_logprobs: self.seqs.iter().map(|s| s.ref_logprobs.clone()).collect(),
            clip_epsilon: self.clip_epsilon,
            kl_beta: self.kl_beta,
        };
        grpo_loss(&inputs, &self.advantages)
    }

    /// Analytic gradient of the total loss with respect to the policy's
    /// flattened parameters.
    ///
    /// Per token, the clipped surrogate contributes `Â·r·∂logπ_θ/∂θ` when
    /// the unclipped branch is active and nothing otherwise; the `k3` term
    /// contributes `(1 − exp(logπ_ref − logπ_θ))·∂logπ_θ/∂θ`.
    pub fn gradient(&self, policy: &SimPolicy) -> Vec<f64> {
        let num_buckets = policy.num_buckets();
        let num_answers = policy.num_answers();
        let mut grad = vec![0.0; policy.num_params()];
        let total_tokens: usize = self.seqs.iter().map(|s| s.length + 1).sum();
        if total_tokens == 0 {
            return grad;
        }
        let scale = 1.0 / total_tokens as f64;

        for (seq, &advantage) in self.seqs.iter().zip(&self.advantages) {
            let hazard = policy.stop_prob(seq.bucket);
            let answer_probs = policy.answer_probs(seq.bucket);
            let current =
                policy.sequence_logprobs(seq.bucket, seq.length, seq.truncated, seq.answer_index);
            for (t, &cur) in current.iter().enumerate() {
                let ratio = math::exp(cur - seq.old_logprobs[t]);
                let clipped = ratio.clamp(1.0 - self.clip_epsilon, 1.0 + self.clip_epsilon);
                let surrogate_slope = if ratio * advantage <= clipped * advantage {
                    advantage * ratio
                } else {
                    0.0
                };
                let kl_slope = 1.0 - math::exp(seq.ref_logprobs[t] - cur);
                let coeff = scale * (-surrogate_slope + self.kl_beta * kl_slope);

                if t < seq.length {
                    // Decision token: d ln p / d stop_logit.
                    let is_stop = !seq.truncated && t == seq.length - 1;
                    let slope = if is_stop { 1.0 - hazard } else { -hazard };
                    grad[seq.bucket] += coeff * slope;
                } else {
                    // Answer token: d ln softmax_m / d logits.
                    let base = num_buckets + seq.bucket * num_answers;
                    for m in 0..num_answers {
                        let indicator = if m == seq.answer_index { 1.0 } else { 0.0 };
                        grad[base + m] += coeff * (indicator - answer_probs[m]);
                    }
                }
            }
        }
        grad
    }
}

/// Reward regime for stage-2 training.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum RewardMode {
    /// Uncertainty-guided difficulty-aware length calibration.
    Adathink,
    /// Schematic greedy baseline: a group-relative length penalty on
    /// every sample regardless of correctness or difficulty, used for the
    /// collapse demonstration.
    GreedyUniform,
    /// Accuracy + format only; stage-1 reward continued as a control.
    AccuracyOnly,
}

impl RewardMode {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Adathink => "adathink",
            Self::GreedyUniform => "greedy_uniform",
            Self::AccuracyOnly => "accuracy_only",
        }
    }
}

impl core::str::FromStr for RewardMode {
    type Err = &'static str;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "adathink" => Ok(Self::Adathink),
            "greedy_uniform" => Ok(Self::GreedyUniform),
            "accuracy_only" => Ok(Self::AccuracyOnly),
            _ => Err("expected one of: adathink, greedy_uniform, accuracy_only"),
        }
    }
}

/// Two-stage training schedule and optimizer knobs.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TrainingSchedule {
    pub stage1_steps: usize,
    pub stage2_steps: usize,
    /// Questions per batch.
    pub batch_size: usize,
    /// Rollouts per question `G`.
    pub group_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    /// Clipping radius `ε` of the surrogate.
    pub clip_epsilon: f64,
    /// KL penalty coefficient `β` (applied in stage 2).
    pub kl_beta: f64,
    /// Rollouts per bucket in each checkpoint evaluation pass.
    pub eval_rollouts_per_bucket: usize,
}

impl Default for TrainingSchedule {
    fn default() -> Self {
        Self {
            stage1_steps: 300,
            stage2_steps: 200,
            batch_size: 32,
            group_size: 8,
            learning_rate: 2.0,
            seed: 0,
            clip_epsilon: 0.2,
            kl_beta: 0.01,
            eval_rollouts_per_bucket: 1600,
        }
    }
}

impl TrainingSchedule {
    pub fn validate(&self) -> Result<(), SimError> {
        let check = |ok: bool, what: &'static str| {
            if ok {
                Ok(())
            } else {
                Err(SimError::InvalidSchedule { what })
            }
        };
        check(self.batch_size >= 1, "batch_size must be at least 1")?;
        check(self.group_size >= 1, "group_size must be at least 1")?;
        check(
            self.learning_rate.is_finite() && self.learning_rate > 0.0,
            "learning_rate must be positive",
        )?;
        check(
            self.clip_epsilon.is_finite() && self.clip_epsilon > 0.0,
            "clip_epsilon must be positive",
        )?;
        check(
            self.kl_beta.is_finite() && self.kl_beta >= 0.0,
            "kl_beta must be nonnegative",
        )?;
        check(
            self.eval_rollouts_per_bucket >= 1,
            "eval_rollouts_per_bucket must be at least 1",
        )
    }
}

/// Per-step training metrics.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct StepMetrics {
    /// Global step index, 1-based across both stages.
    pub step: usize,
    pub stage: u8,
    pub mean_length: f64,
    pub accuracy: f64,
    pub bucket_mean_length: Vec<f64>,
    pub bucket_accuracy: Vec<f64>,
    pub reward_acc: f64,
    pub reward_format: f64,
    pub reward_len: f64,
    pub reward_repetition: f64,
    pub reward_total: f64,
    pub theta: Option<f64>,
    pub mean_len_simple: Option<f64>,
    pub mean_len_hard: Option<f64>,
    pub policy_loss: f64,
    pub kl: f64,
    pub loss: f64,
}

/// Checkpoint evaluation: a fixed-seed rollout sweep over every bucket.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CheckpointEval {
    pub mean_length: f64,
    pub accuracy: f64,
    pub bucket_mean_length: Vec<f64>,
    pub bucket_accuracy: Vec<f64>,
    /// Count of rollouts at each length; index `l − 1` holds length `l`.
    pub length_counts: Vec<u64>,
}

/// Full record of one training run.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TrainingReport {
    pub reward_mode: RewardMode,
    pub schedule: TrainingSchedule,
    pub env: EnvConfig,
    pub calibration: CalibrationConfig,
    /// Correct answer per bucket, drawn once per run from the seed.
    pub bucket_keys: Vec<usize>,
    pub steps: Vec<StepMetrics>,
    /// Highest per-step batch accuracy seen during stage 1.
    pub stage1_peak_accuracy: f64,
    pub stage1_eval: CheckpointEval,
    pub stage2_eval: Option<CheckpointEval>,
}

/// Training checkpoints that carry a length distribution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Checkpoint {
    Stage1End,
    Stage2End,
}

/// One histogram bin: rollout length and its count.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct HistogramBin {
    pub length: usize,
    pub count: u64,
}

/// Length histogram with fixed bin width of one step, over the occupied
/// range, plus the bimodality flag.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LengthHistogram {
    pub bins: Vec<HistogramBin>,
    /// True iff the histogram has two local maxima separated by a trough
    /// no higher than half the smaller peak.
    pub bimodal: bool,
}

/// Histogram of rollout lengths at a checkpoint.
pub fn length_distribution(
    report: &TrainingReport,
    checkpoint: Checkpoint,
) -> Result<LengthHistogram, SimError> {
    let eval = match checkpoint {
        Checkpoint::Stage1End => &report.stage1_eval,
        Checkpoint::Stage2End => report
            .stage2_eval
            .as_ref()
            .ok_or(SimError::MissingCheckpoint { checkpoint })?,
    };
    let counts = &eval.length_counts;
    let first = counts
        .iter()
        .position(|&c| c > 0)
        .ok_or(SimError::MissingCheckpoint { checkpoint })?;
    let last = counts.iter().rposition(|&c| c > 0).unwrap_or(first);
    let bins: Vec<HistogramBin> = (first..=last)
        .map(|i| HistogramBin {
            length: i + 1,
            count: counts[i],
        })
        .collect();
    let bimodal = is_bimodal(&bins);
    Ok(LengthHistogram { bins, bimodal })
}

fn is_bimodal(bins: &[HistogramBin]) -> bool {
    // Collapse plateaus so a flat-topped peak counts once.
    let mut runs: Vec<u64> = Vec::new();
    for bin in bins {
        if runs.last() != Some(&bin.count) {
            runs.push(bin.count);
        }
    }
    let mut peaks: Vec<usize> = Vec::new();
    for i in 0..runs.len() {
        let left_lower = i == 0 || runs[i - 1] < runs[i];
        let right_lower = i + 1 == runs.len() || runs[i + 1] < runs[i];
        if left_lower && right_lower {
            peaks.push(i);
        }
    }
    for a in 0..peaks.len() {
        for b in (a + 1)..peaks.len() {
            let trough = runs[peaks[a] + 1..peaks[b]]
                .iter()
                .copied()
                .min()
                .unwrap_or(u64::MAX);
            let smaller = runs[peaks[a]].min(runs[peaks[b]]);
            if trough.saturating_mul(2) <= smaller {
                return true;
            }
        }
    }
    false
}

/// Runs the two-stage training loop: stage 1 optimizes accuracy and
/// format only; stage 2 switches to the selected reward mode. The
/// reference policy for the stage-2 KL term is the stage-1 endpoint.
/// Deterministic given the schedule seed.
pub fn train(
    schedule: &TrainingSchedule,
    reward_mode: RewardMode,
    calibration: &CalibrationConfig,
    env: &EnvConfig,
) -> Result<TrainingReport, SimError> {
    schedule.validate()?;
    env.validate()?;
    calibration.validate()?;

    let num_buckets = env.num_buckets();
    let mut key_rng = stream(schedule.seed, &[STREAM_KEYS]);
    let bucket_keys: Vec<usize> = (0..num_buckets)
        .map(|_| key_rng.gen_range(0..env.num_answers))
        .collect();

    let mut policy = SimPolicy::zeros(num_buckets, env.num_answers, env.max_steps);
    let mut steps = Vec::with_capacity(schedule.stage1_steps + schedule.stage2_steps);
    let mut stage1_peak_accuracy: f64 = 0.0;

    for step in 1..=schedule.stage1_steps {
        let reference = policy.clone();
        let metrics = run_step(
            &mut policy,
            &reference,
            StepReward::Stage1,
            step,
            1,
            schedule,
            calibration,
            env,
            &bucket_keys,
        )?;
        stage1_peak_accuracy = stage1_peak_accuracy.max(metrics.accuracy);
        steps.push(metrics);
    }

    let stage1_eval = evaluate(&policy, env, &bucket_keys, schedule, 1);

    let reference = policy.clone();
    let mut state = CalibrationState::new(calibration.alpha_m)?;
    for local_step in 1..=schedule.stage2_steps {
        let step = schedule.stage1_steps + local_step;
        let reward = match reward_mode {
            RewardMode::Adathink => StepReward::Adathink { state: &mut state },
            RewardMode::GreedyUniform => StepReward::GreedyUniform,
            RewardMode::AccuracyOnly => StepReward::Stage1,
        };
        let metrics = run_step(
            &mut policy,
            &reference,
            reward,
            step,
            2,
            schedule,
            calibration,
            env,
            &bucket_keys,
        )?;
        steps.push(metrics);
    }

    let stage2_eval =
        (schedule.stage2_steps > 0).then(|| evaluate(&policy, env, &bucket_keys, schedule, 2));

    Ok(TrainingReport {
        reward_mode,
        schedule: schedule.clone(),
        env: env.clone(),
        calibration: calibration.clone(),
        bucket_keys,
        steps,
        stage1_peak_accuracy,
        stage1_eval,
        stage2_eval,
    })
}

enum StepReward<'a> {
    /// Accuracy + format, both at weight 1 (no length term, no KL).
    Stage1,
    /// Calibrated composite reward, with the EMA state threaded through.
    Adathink { state: &'a mut CalibrationState },
    /// `R_acc + 0.5·R_format − 0.5·(L / L_max)`.
    GreedyUniform,
}

#[allow(clippy::too_many_arguments)]
fn run_step(
    policy: &mut SimPolicy,
    reference: &SimPolicy,
    reward: StepReward<'_>,
    step: usize,
    stage: u8,
    schedule: &TrainingSchedule,
    calibration: &CalibrationConfig,
    env: &EnvConfig,
    bucket_keys: &[usize],
) -> Result<StepMetrics, SimError> {
    let num_buckets = env.num_buckets();
    let mut groups: Vec<Vec<SimRollout>> = Vec::with_capacity(schedule.batch_size);
    for question_index in 0..schedule.batch_size {
        let bucket = question_index % num_buckets;
        let question = SimQuestion {
            bucket,
            latent_difficulty: env.bucket_difficulties[bucket],
            key: bucket_keys[bucket],
        };
        let mut group = Vec::with_capacity(schedule.group_size);
        for rollout_index in 0..schedule.group_size {
            let mut rng = stream(
                schedule.seed,
                &[
                    STREAM_TRAIN,
                    step as u64,
                    question_index as u64,
                    rollout_index as u64,
                ],
            );
            group.push(simulate_rollout(policy, env, &question, &mut rng));
        }
        groups.push(group);
    }

    // Per-rollout rewards and their mean components.
    let mut totals: Vec<f64> = Vec::with_capacity(schedule.batch_size * schedule.group_size);
    let mut acc_sum = 0.0;
    let mut format_sum = 0.0;
    let mut len_sum = 0.0;
    let mut rep_sum = 0.0;
    let mut theta = None;
    let mut mean_len_simple = None;
    let mut mean_len_hard = None;

    let use_kl = stage == 2;
    match reward {
        StepReward::Stage1 => {
            for group in &groups {
                for r in group {
                    let acc = if r.env_correct() { 1.0 } else { 0.0 };
                    acc_sum += acc;
                    format_sum += 1.0;
                    totals.push(acc + 1.0);
                }
            }
        }
        StepReward::GreedyUniform => {
            // Group-relative shortening pressure on every sample,
            // correctness-blind: the shortest rollout of a group pays
            // nothing, the longest pays the full penalty, at any absolute
            // length scale. This is what drives the length reward hack.
            for group in &groups {
                let min = group.iter().map(SimRollout::length).min().unwrap_or(1) as f64;
                let max = group.iter().map(SimRollout::length).max().unwrap_or(1) as f64;
                let range = max - min;
                for r in group {
                    let acc = if r.env_correct() { 1.0 } else { 0.0 };
                    let len_penalty = if range > 0.0 {
                        -(r.length() as f64 - min) / range
                    } else {
                        0.0
                    };
                    acc_sum += acc;
                    format_sum += 1.0;
                    len_sum += len_penalty;
                    totals.push(acc + 0.5 + GREEDY_PENALTY_WEIGHT * len_penalty);
                }
            }
        }
        StepReward::Adathink { state } => {
            let question_groups: Vec<QuestionGroup> = groups
                .iter()
                .enumerate()
                .map(|(index, group)| {
                    QuestionGroup::new(
                        format!("step{step}-q{index}"),
                        bucket_keys[group[0].bucket].to_string(),
                        group.iter().map(|r| r.rollout.clone()).collect(),
                    )
                    .expect("simulated groups are nonempty")
                })
                .collect();
            let batch = Batch::new(question_groups).expect("simulated batches are uniform");
            let outcome = calibrate_batch(&batch, calibration, state)?;
            *state = outcome.state.clone();
            theta = Some(outcome.threshold);
            mean_len_simple = outcome.state.mean_len_simple();
            mean_len_hard = outcome.state.mean_len_hard();
            for r in &outcome.rewards {
                acc_sum += r.reward.acc;
                format_sum += r.reward.format;
                len_sum += r.reward.len;
                rep_sum += r.reward.repetition_penalty;
                totals.push(r.reward.total);
            }
        }
    }

    let advantages: Vec<f64> = totals
        .chunks(schedule.group_size)
        .flat_map(group_advantages)
        .collect();

    let flat_rollouts: Vec<SimRollout> = groups.iter().flatten().cloned().collect();
    let kl_beta = if use_kl { schedule.kl_beta } else { 0.0 };
    let data = GrpoStepData::collect(
        &flat_rollouts,
        totals.clone(),
        advantages,
        policy,
        if use_kl { reference } else { policy },
        schedule.clip_epsilon,
        kl_beta,
    );
    let loss = data.loss(policy)?;
    if !loss.total.is_finite() {
        return Err(SimError::Diverged {
            step,
            stage,
            policy_loss: loss.policy_loss,
            kl: loss.kl,
        });
    }
    let gradient = data.gradient(policy);
    policy.apply_gradient_step(&gradient, schedule.learning_rate);

    // Batch statistics for the metrics record.
    let total_rollouts = flat_rollouts.len() as f64;
    let mut bucket_len = vec![0.0f64; num_buckets];
    let mut bucket_acc = vec![0.0f64; num_buckets];
    let mut bucket_count = vec![0usize; num_buckets];
    let mut length_sum = 0.0;
    for r in &flat_rollouts {
        bucket_count[r.bucket] += 1;
        bucket_len[r.bucket] += r.length() as f64;
        bucket_acc[r.bucket] += if r.env_correct() { 1.0 } else { 0.0 };
        length_sum += r.length() as f64;
    }
    for b in 0..num_buckets {
        if bucket_count[b] > 0 {
            bucket_len[b] /= bucket_count[b] as f64;
            bucket_acc[b] /= bucket_count[b] as f64;
        }
    }

    Ok(StepMetrics {
        step,
        stage,
        mean_length: length_sum / total_rollouts,
        accuracy: acc_sum / total_rollouts,
        bucket_mean_length: bucket_len,
        bucket_accuracy: bucket_acc,
        reward_acc: acc_sum / total_rollouts,
        reward_format: format_sum / total_rollouts,
        reward_len: len_sum / total_rollouts,
        reward_repetition: rep_sum / total_rollouts,
        reward_total: totals.iter().sum::<f64>() / total_rollouts,
        theta,
        mean_len_simple,
        mean_len_hard,
        policy_loss: loss.policy_loss,
        kl: loss.kl,
        loss: loss.total,
    })
}

fn evaluate(
    policy: &SimPolicy,
    env: &EnvConfig,
    bucket_keys: &[usize],
    schedule: &TrainingSchedule,
    stage: u8,
) -> CheckpointEval {
    let num_buckets = env.num_buckets();
    let mut bucket_len = vec![0.0f64; num_buckets];
    let mut bucket_acc = vec![0.0f64; num_buckets];
    let mut length_counts = vec![0u64; env.max_steps];
    let per_bucket = schedule.eval_rollouts_per_bucket;

    for bucket in 0..num_buckets {
        let question = SimQuestion {
            bucket,
            latent_difficulty: env.bucket_difficulties[bucket],
            key: bucket_keys[bucket],
        };
        for index in 0..per_bucket {
            let mut rng = stream(
                schedule.seed,
                &[STREAM_EVAL, stage as u64, bucket as u64, index as u64],
            );
            let rollout = simulate_rollout(policy, env, &question, &mut rng);
            bucket_len[bucket] += rollout.length() as f64;
            bucket_acc[bucket] += if rollout.env_correct() { 1.0 } else { 0.0 };
            length_counts[rollout.length() - 1] += 1;
        }
    }

    let total = (num_buckets * per_bucket) as f64;
    let mean_length = bucket_len.iter().sum::<f64>() / total;
    let accuracy = bucket_acc.iter().sum::<f64>() / total;
    for b in 0..num_buckets {
        bucket_len[b] /= per_bucket as f64;
        bucket_acc[b] /= per_bucket as f64;
    }
    CheckpointEval {
        mean_length,
        accuracy,
        bucket_mean_length: bucket_len,
        bucket_accuracy: bucket_acc,
        length_counts,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SimError {
    InvalidSchedule { what: &'static str },
    InvalidEnv { what: &'static str },
    Calibration(CalibrationError),
    Grpo(GrpoError),
    Diverged { step: usize, stage: u8, policy_loss: f64, kl: f64 },
    MissingCheckpoint { checkpoint: Checkpoint },
}

impl fmt::Display for SimError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::InvalidSchedule { what } => write!(f, "invalid schedule: {what}"),
            Self::InvalidEnv { what } => write!(f, "invalid environment: {what}"),
            Self::Calibration(e) => write!(f, "{e}"),
            Self::Grpo(e) => write!(f, "{e}"),
            Self::Diverged {
                step,
                stage,
                policy_loss,
                kl,
            } => write!(
                f,
                "training diverged at stage {stage} step {step}: policy_loss={policy_loss}, kl={kl}"
            ),
            Self::MissingCheckpoint { checkpoint } => {
                let name = match checkpoint {
                    Checkpoint::Stage1End => "stage1_end",
                    Checkpoint::Stage2End => "stage2_end",
                };
                write!(f, "report does not contain the {name} checkpoint")
            }
        }
    }
}

impl core::error::Error for SimError {}

impl From<CalibrationError> for SimError {
    fn from(e: CalibrationError) -> Self {
        Self::Calibration(e)
    }
}

impl From<GrpoError> for SimError {
    fn from(e: GrpoError) -> Self {
        Self::Grpo(e)
    }
}
