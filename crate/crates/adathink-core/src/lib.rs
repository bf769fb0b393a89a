//! Core engine for uncertainty-guided, difficulty-aware length calibration
//! of reasoning rollouts.
//!
//! The crate is organized around the batch reward-calibration pipeline:
//!
//! 1. [`rollout`] — immutable rollout/group/batch data types;
//! 2. [`uncertainty`] — token entropy, top-K sequence uncertainty, and
//!    batch min–max normalization;
//! 3. [`difficulty`] — sampling-accuracy and uncertainty-discounted
//!    difficulty estimation;
//! 4. [`calibration`] — dynamic difficulty threshold, EMA-smoothed batch
//!    statistics, the piecewise length reward, and composite rewards;
//! 5. [`grpo`] — group-relative advantages, clipped surrogate loss, and
//!    KL regularization;
//! 6. [`sim`] — a synthetic QA environment with a toy parametric policy
//!    for end-to-end two-stage training demonstrations;
//! 7. [`metrics`] — the accuracy-efficiency score and median-split
//!    stratified dataset selection.
//!
//! The crate is `no_std` (with `alloc`); IO, file formats, and the CLI
//! live in the companion `adathink-cli` crate.

#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod calibration;
pub mod difficulty;
pub mod grpo;
mod math;
pub mod metrics;
pub mod rollout;
pub mod sim;
pub mod uncertainty;

pub use calibration::{
    batch_threshold, calibrate_batch, composite_reward, ema_update, length_reward,
    repetition_penalty, scaling_factor, CalibrationConfig, CalibrationError, CalibrationOutcome,
    CalibrationState, CompositeReward, LengthReward, RepetitionConfig, RewardBranch,
};
pub use difficulty::{difficulty_acc, difficulty_uncertainty, DifficultyError, DifficultyScore};
pub use grpo::{
    clipped_surrogate, exact_kl, group_advantages, grpo_loss, k3_divergence, GrpoBatchInputs,
    GrpoError, GrpoLoss,
};
pub use metrics::{aes, median_split_select, AesConfig, LengthRecord, MetricsError, SelectionConfig};
pub use rollout::{group_accuracy, Batch, QuestionGroup, Rollout, RolloutError, TokenStep};
pub use sim::{
    length_distribution, simulate_rollout, train, Checkpoint, CheckpointEval, EnvConfig,
    LengthHistogram, RewardMode, SimError, SimPolicy, SimQuestion, SimRollout, StepMetrics,
    TrainingReport, TrainingSchedule,
};
pub use uncertainty::{
    batch_uncertainties, normalize_batch, sequence_uncertainty, token_entropy, SequenceUncertainty,
    UncertaintyError, UncertaintyScore, DEFAULT_K_FRACTION,
};
