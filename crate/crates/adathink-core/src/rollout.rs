//! Rollout data model: per-step token distributions, sampled outputs, and
//! question groups.
//!
//! All types are immutable after construction and safe to share across
//! threads.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use crate::math;

/// Tolerance for the probability-simplex check on ingested distributions.
pub const SIMPLEX_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
enum StepBody {
    /// Full next-token distribution, assumed already temperature-scaled.
    Probs(Vec<f64>),
    /// Precomputed token entropy in nats, for record files that do not
    /// carry full distributions.
    Entropy(f64),
}

/// One decoding step: either a probability vector over the vocabulary or a
/// precomputed entropy, plus the sampling temperature as metadata.
///
/// Exactly one of the two representations is present by construction.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenStep {
    body: StepBody,
    temperature: f64,
}

impl TokenStep {
    /// Builds a step from an explicit probability vector.
    ///
    /// Every entry must be nonnegative and the vector must sum to 1 within
    /// [`SIMPLEX_TOLERANCE`].
    pub fn from_probs(probs: Vec<f64>, temperature: f64) -> Result<Self, RolloutError> {
        validate_temperature(temperature)?;
        if probs.is_empty() {
            return Err(RolloutError::EmptyDistribution);
        }
        let mut sum = 0.0;
        for (index, &p) in probs.iter().enumerate() {
            if !p.is_finite() {
                return Err(RolloutError::NonFiniteValue { index });
            }
            if p < 0.0 {
                return Err(RolloutError::NegativeProbability { index, value: p });
            }
            sum += p;
        }
        if math::abs(sum - 1.0) > SIMPLEX_TOLERANCE {
            return Err(RolloutError::SimplexViolation { sum });
        }
        Ok(Self {
            body: StepBody::Probs(probs),
            temperature,
        })
    }

    /// Builds a step from raw logits by applying a temperature-scaled
    /// softmax. The resulting distribution is exactly normalized.
    pub fn from_logits(logits: &[f64], temperature: f64) -> Result<Self, RolloutError> {
        validate_temperature(temperature)?;
        if logits.is_empty() {
            return Err(RolloutError::EmptyDistribution);
        }
        if let Some(index) = logits.iter().position(|z| !z.is_finite()) {
            return Err(RolloutError::NonFiniteValue { index });
        }
        Ok(Self {
            body: StepBody::Probs(math::softmax_scaled(logits, temperature)),
            temperature,
        })
    }

    /// Builds a step that carries only a precomputed entropy (nats).
    pub fn from_entropy(entropy: f64, temperature: f64) -> Result<Self, RolloutError> {
        validate_temperature(temperature)?;
        if !entropy.is_finite() || entropy < 0.0 {
            return Err(RolloutError::NegativeEntropy { value: entropy });
        }
        Ok(Self {
            body: StepBody::Entropy(entropy),
            temperature,
        })
    }

    /// The full distribution, when present.
    pub fn probs(&self) -> Option<&[f64]> {
        match &self.body {
            StepBody::Probs(p) => Some(p),
            StepBody::Entropy(_) => None,
        }
    }

    /// The precomputed entropy, when no distribution is present.
    pub fn precomputed_entropy(&self) -> Option<f64> {
        match &self.body {
            StepBody::Probs(_) => None,
            StepBody::Entropy(e) => Some(*e),
        }
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }
}

fn validate_temperature(temperature: f64) -> Result<(), RolloutError> {
    if !temperature.is_finite() || temperature <= 0.0 {
        return Err(RolloutError::NonPositiveTemperature { value: temperature });
    }
    Ok(())
}

/// One sampled output: ordered token steps, the extracted answer, format
/// flag, and optional per-token side channels.
///
/// The rollout length is the number of token steps; optional per-token
/// lists must match it exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct Rollout {
    steps: Vec<TokenStep>,
    answer: String,
    format_ok: bool,
    token_ids: Option<Vec<i64>>,
    rollout_logprobs: Option<Vec<f64>>,
    ref_logprobs: Option<Vec<f64>>,
    is_correct: Option<bool>,
}

impl Rollout {
    /// Starts building a rollout from its mandatory parts.
    pub fn builder(steps: Vec<TokenStep>, answer: impl Into<String>) -> RolloutBuilder {
        RolloutBuilder {
            steps,
            answer: answer.into(),
            format_ok: true,
            token_ids: None,
            rollout_logprobs: None,
            ref_logprobs: None,
            is_correct: None,
        }
    }

    /// Token count `L_i` (equals the number of steps).
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn steps(&self) -> &[TokenStep] {
        &self.steps
    }

    pub fn answer(&self) -> &str {
        &self.answer
    }

    pub fn format_ok(&self) -> bool {
        self.format_ok
    }

    pub fn token_ids(&self) -> Option<&[i64]> {
        self.token_ids.as_deref()
    }

    pub fn rollout_logprobs(&self) -> Option<&[f64]> {
        self.rollout_logprobs.as_deref()
    }

    pub fn ref_logprobs(&self) -> Option<&[f64]> {
        self.ref_logprobs.as_deref()
    }

    /// Explicit correctness override, when an external grader supplied one.
    pub fn correct_override(&self) -> Option<bool> {
        self.is_correct
    }

    /// Correctness against a ground truth: the explicit override wins,
    /// otherwise exact string equality after whitespace trim.
    pub fn is_correct_against(&self, ground_truth: &str) -> bool {
        match self.is_correct {
            Some(flag) => flag,
            None => self.answer.trim() == ground_truth.trim(),
        }
    }
}

/// Builder enforcing the rollout invariants at `build` time.
#[derive(Debug, Clone)]
pub struct RolloutBuilder {
    steps: Vec<TokenStep>,
    answer: String,
    format_ok: bool,
    token_ids: Option<Vec<i64>>,
    rollout_logprobs: Option<Vec<f64>>,
    ref_logprobs: Option<Vec<f64>>,
    is_correct: Option<bool>,
}

impl RolloutBuilder {
    pub fn format_ok(mut self, format_ok: bool) -> Self {
        self.format_ok = format_ok;
        self
    }

    pub fn token_ids(mut self, ids: Vec<i64>) -> Self {
        self.token_ids = Some(ids);
        self
    }

    pub fn rollout_logprobs(mut self, logprobs: Vec<f64>) -> Self {
        self.rollout_logprobs = Some(logprobs);
        self
    }

    pub fn ref_logprobs(mut self, logprobs: Vec<f64>) -> Self {
        self.ref_logprobs = Some(logprobs);
        self
    }

    pub fn correct_override(mut self, is_correct: bool) -> Self {
        self.is_correct = Some(is_correct);
        self
    }

    pub fn build(self) -> Result<Rollout, RolloutError> {
        let length = self.steps.len();
        if length == 0 {
            return Err(RolloutError::EmptySteps);
        }
        check_len("token_ids", self.token_ids.as_ref().map(Vec::len), length)?;
        check_len(
            "rollout_logprobs",
            self.rollout_logprobs.as_ref().map(Vec::len),
            length,
        )?;
        check_len(
            "ref_logprobs",
            self.ref_logprobs.as_ref().map(Vec::len),
            length,
        )?;
        Ok(Rollout {
            steps: self.steps,
            answer: self.answer,
            format_ok: self.format_ok,
            token_ids: self.token_ids,
            rollout_logprobs: self.rollout_logprobs,
            ref_logprobs: self.ref_logprobs,
            is_correct: self.is_correct,
        })
    }
}

fn check_len(
    field: &'static str,
    actual: Option<usize>,
    expected: usize,
) -> Result<(), RolloutError> {
    match actual {
        Some(n) if n != expected => Err(RolloutError::LengthMismatch {
            field,
            expected,
            actual: n,
        }),
        _ => Ok(()),
    }
}

/// `G` rollouts for one question plus its ground truth; the unit of
/// difficulty estimation.
#[derive(Debug, Clone, PartialEq)]
pub struct QuestionGroup {
    question_id: String,
    ground_truth: String,
    rollouts: Vec<Rollout>,
}

impl QuestionGroup {
    pub fn new(
        question_id: impl Into<String>,
        ground_truth: impl Into<String>,
        rollouts: Vec<Rollout>,
    ) -> Result<Self, RolloutError> {
        if rollouts.is_empty() {
            return Err(RolloutError::EmptyGroup);
        }
        Ok(Self {
            question_id: question_id.into(),
            ground_truth: ground_truth.into(),
            rollouts,
        })
    }

    pub fn question_id(&self) -> &str {
        &self.question_id
    }

    pub fn ground_truth(&self) -> &str {
        &self.ground_truth
    }

    pub fn rollouts(&self) -> &[Rollout] {
        &self.rollouts
    }

    /// Group size `G`.
    pub fn size(&self) -> usize {
        self.rollouts.len()
    }

    /// Correctness flags of the rollouts, in order.
    pub fn correctness(&self) -> impl Iterator<Item = bool> + '_ {
        self.rollouts
            .iter()
            .map(|r| r.is_correct_against(&self.ground_truth))
    }
}

/// A batch of question groups with uniform group size.
///
/// Non-uniform `G` is rejected: the batch-wide normalization index runs
/// over `|B|·G` rollouts and padding would silently bias it.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    groups: Vec<QuestionGroup>,
}

impl Batch {
    pub fn new(groups: Vec<QuestionGroup>) -> Result<Self, RolloutError> {
        let first = match groups.first() {
            Some(g) => g.size(),
            None => return Err(RolloutError::EmptyBatch),
        };
        for group in &groups {
            if group.size() != first {
                return Err(RolloutError::MixedGroupSize {
                    expected: first,
                    found: group.size(),
                });
            }
        }
        Ok(Self { groups })
    }

    pub fn groups(&self) -> &[QuestionGroup] {
        &self.groups
    }

    /// Uniform group size `G`.
    pub fn group_size(&self) -> usize {
        self.groups[0].size()
    }

    /// Total rollouts `|B|·G`.
    pub fn total_rollouts(&self) -> usize {
        self.groups.len() * self.group_size()
    }

    /// All rollouts in group-major order, the canonical batch index.
    pub fn rollouts(&self) -> impl Iterator<Item = &Rollout> {
        self.groups.iter().flat_map(|g| g.rollouts().iter())
    }
}

/// Proportion of correct outputs among the group's rollouts.
pub fn group_accuracy(group: &QuestionGroup) -> f64 {
    let correct = group.correctness().filter(|&c| c).count();
    correct as f64 / group.size() as f64
}

/// Validation errors for the rollout data model.
#[derive(Debug, Clone, PartialEq)]
pub enum RolloutError {
    EmptyDistribution,
    NegativeProbability { index: usize, value: f64 },
    SimplexViolation { sum: f64 },
    NegativeEntropy { value: f64 },
    NonPositiveTemperature { value: f64 },
    NonFiniteValue { index: usize },
    EmptySteps,
    LengthMismatch { field: &'static str, expected: usize, actual: usize },
    EmptyGroup,
    EmptyBatch,
    MixedGroupSize { expected: usize, found: usize },
}

impl fmt::Display for RolloutError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::EmptyDistribution => f.write_str("probability vector must be nonempty"),
            Self::NegativeProbability { index, value } => {
                write!(f, "negative probability {value} at index {index}")
            }
            Self::SimplexViolation { sum } => {
                write!(f, "simplex violation: probabilities sum to {sum}")
            }
            Self::NegativeEntropy { value } => {
                write!(f, "precomputed entropy must be nonnegative, got {value}")
            }
            Self::NonPositiveTemperature { value } => {
                write!(f, "temperature must be positive, got {value}")
            }
            Self::NonFiniteValue { index } => {
                write!(f, "non-finite value at index {index}")
            }
            Self::EmptySteps => f.write_str("rollout must contain at least one token step"),
            Self::LengthMismatch {
                field,
                expected,
                actual,
            } => write!(
                f,
                "{field} has length {actual} but the rollout has {expected} steps"
            ),
            Self::EmptyGroup => f.write_str("question group must contain at least one rollout"),
            Self::EmptyBatch => f.write_str("batch must contain at least one group"),
            Self::MixedGroupSize { expected, found } => write!(
                f,
                "mixed group sizes in batch: expected G={expected}, found G={found}"
            ),
        }
    }
}

impl core::error::Error for RolloutError {}
