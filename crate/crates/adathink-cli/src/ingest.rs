//! Streaming ingestion and validation of rollout record files, plus the
//! canonical serializer.
//!
//! One record per line, UTF-8. Each record is a self-contained question
//! group:
//!
//! ```json
//! {"question_id": "q1", "ground_truth": "B", "rollouts": [
//!   {"answer": "B", "format_ok": true, "length": 2,
//!    "steps": [{"probs": [0.9, 0.1], "temperature": 1.0},
//!              {"logits": [0.0, 0.0], "temperature": 1.0}]}]}
//! ```
//!
//! A rollout carries either `steps` (full distributions as `probs`, or raw
//! `logits` converted through a temperature-scaled softmax) or a flat
//! `entropies` array. When both are present, distributions win and any
//! disagreement beyond [`ENTROPY_MISMATCH_TOLERANCE`] is a validation
//! error. Optional fields: `token_ids`, `rollout_logprobs`,
//! `ref_logprobs`, `is_correct`. Unknown fields are ignored with a
//! warning.

use std::io::BufRead;

use adathink_core::rollout::{Batch, QuestionGroup, Rollout, RolloutError, TokenStep};
use adathink_core::uncertainty::token_entropy;
use serde::Deserialize;
use thiserror::Error;

/// Maximum allowed gap between a provided per-token entropy and the
/// entropy computed from the accompanying distribution.
pub const ENTROPY_MISMATCH_TOLERANCE: f64 = 1e-4;

/// A validated batch plus any non-fatal warnings raised during parsing.
#[derive(Debug)]
pub struct ParsedBatch {
    pub batch: Batch,
    pub warnings: Vec<String>,
}

#[derive(Debug, Error)]
pub enum ParseError {
    #[error("failed reading input: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {kind}")]
    Line { line: usize, kind: RecordError },
    #[error("input contains no records")]
    Empty,
}

#[derive(Debug, Error)]
pub enum RecordError {
    #[error("invalid JSON: {0}")]
    Json(String),
    #[error("rollout {rollout}: exactly one of `steps` or `entropies` must be present")]
    MissingSteps { rollout: usize },
    #[error("rollout {rollout}, step {step}: exactly one of `probs` or `logits` must be present")]
    AmbiguousStep { rollout: usize, step: usize },
    #[error("rollout {rollout}, step {step}: {source}")]
    InvalidStep {
        rollout: usize,
        step: usize,
        source: RolloutError,
    },
    #[error("rollout {rollout}: declared length {declared} does not match {actual} token steps")]
    LengthMismatch {
        rollout: usize,
        declared: usize,
        actual: usize,
    },
    #[error("rollout {rollout}: `entropies` has {entropies} entries for {steps} steps")]
    EntropyCountMismatch {
        rollout: usize,
        steps: usize,
        entropies: usize,
    },
    #[error(
        "rollout {rollout}, step {step}: provided entropy {provided} disagrees with the \
         distribution entropy {computed}"
    )]
    EntropyMismatch {
        rollout: usize,
        step: usize,
        provided: f64,
        computed: f64,
    },
    #[error("rollout {rollout}: {source}")]
    InvalidRollout {
        rollout: usize,
        source: RolloutError,
    },
    #[error("{source}")]
    InvalidGroup { source: RolloutError },
    #[error("group has {found} rollouts but earlier groups have {expected} (mixed group sizes rejected)")]
    MixedGroupSize { expected: usize, found: usize },
}

#[derive(Debug, Deserialize)]
struct GroupRecord {
    question_id: String,
    ground_truth: String,
    rollouts: Vec<RolloutRecord>,
    #[serde(flatten)]
    unknown: serde_json::Map<String, serde_json::Value>,
}

#[derive(Debug, Deserialize)]
struct RolloutRecord {
    answer: String,
    format_ok: bool,
    length: usize,
    #[serde(default)]
    steps: Option<Vec<StepRecord>>,
    #[serde(default)]
    entropies: Option<Vec<f64>>,
    #[serde(default)]
    token_ids: Option<Vec<i64>>,
    #[serde(default)]
    rollout_logprobs: Option<Vec<f64>>,
    #[serde(default)]
    ref_logprobs: Option<Vec<f64>>,
    #[serde(default)]
    is_correct: Option<bool>,
    #[serde(flatten)]
    unknown: serde_json::Map<String, serde_json::Value>,
}

#[derive(Debug, Deserialize)]
struct StepRecord {
    #[serde(default)]
    probs: Option<Vec<f64>>,
    #[serde(default)]
    logits: Option<Vec<f64>>,
    #[serde(default)]
    temperature: Option<f64>,
    #[serde(flatten)]
    unknown: serde_json::Map<String, serde_json::Value>,
}

/// Parses a line-delimited rollout record stream into a validated batch.
///
/// Blank lines are skipped; every error carries the 1-based line number
/// it was found on. Groups must share one rollout count `G`.
pub fn parse_rollouts(reader: impl BufRead) -> Result<ParsedBatch, ParseError> {
    let mut groups: Vec<QuestionGroup> = Vec::new();
    let mut warnings: Vec<String> = Vec::new();
    let mut expected_group_size: Option<usize> = None;

    for (index, line) in reader.lines().enumerate() {
        let line_number = index + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let group = parse_group_line(&line, line_number, &mut warnings)
            .map_err(|kind| ParseError::Line { line: line_number, kind })?;
        match expected_group_size {
            None => expected_group_size = Some(group.size()),
            Some(expected) if expected != group.size() => {
                return Err(ParseError::Line {
                    line: line_number,
                    kind: RecordError::MixedGroupSize {
                        expected,
                        found: group.size(),
                    },
                });
            }
            Some(_) => {}
        }
        groups.push(group);
    }

    let batch = Batch::new(groups).map_err(|e| match e {
        RolloutError::EmptyBatch => ParseError::Empty,
        other => ParseError::Line {
            line: 0,
            kind: RecordError::InvalidGroup { source: other },
        },
    })?;
    Ok(ParsedBatch { batch, warnings })
}

fn parse_group_line(
    line: &str,
    line_number: usize,
    warnings: &mut Vec<String>,
) -> Result<QuestionGroup, RecordError> {
    let record: GroupRecord =
        serde_json::from_str(line).map_err(|e| RecordError::Json(e.to_string()))?;
    warn_unknown(warnings, line_number, "group record", &record.unknown);

    let mut rollouts = Vec::with_capacity(record.rollouts.len());
    for (rollout_index, rollout) in record.rollouts.into_iter().enumerate() {
        warn_unknown(
            warnings,
            line_number,
            &format!("rollout {rollout_index}"),
            &rollout.unknown,
        );
        rollouts.push(build_rollout(rollout, rollout_index, line_number, warnings)?);
    }
    QuestionGroup::new(record.question_id, record.ground_truth, rollouts)
        .map_err(|source| RecordError::InvalidGroup { source })
}

fn build_rollout(
    record: RolloutRecord,
    rollout_index: usize,
    line_number: usize,
    warnings: &mut Vec<String>,
) -> Result<Rollout, RecordError> {
    let steps = match (record.steps, record.entropies) {
        (Some(step_records), entropies) => {
            let mut steps = Vec::with_capacity(step_records.len());
            for (step_index, step) in step_records.into_iter().enumerate() {
                warn_unknown(
                    warnings,
                    line_number,
                    &format!("rollout {rollout_index}, step {step_index}"),
                    &step.unknown,
                );
                let temperature = step.temperature.unwrap_or(1.0);
                let built = match (step.probs, step.logits) {
                    (Some(probs), None) => TokenStep::from_probs(probs, temperature),
                    (None, Some(logits)) => TokenStep::from_logits(&logits, temperature),
                    _ => {
                        return Err(RecordError::AmbiguousStep {
                            rollout: rollout_index,
                            step: step_index,
                        })
                    }
                };
                steps.push(built.map_err(|source| RecordError::InvalidStep {
                    rollout: rollout_index,
                    step: step_index,
                    source,
                })?);
            }
            // Distributions win over provided entropies, but they must
            // agree.
            if let Some(entropies) = entropies {
                if entropies.len() != steps.len() {
                    return Err(RecordError::EntropyCountMismatch {
                        rollout: rollout_index,
                        steps: steps.len(),
                        entropies: entropies.len(),
                    });
                }
                for (step_index, (step, &provided)) in steps.iter().zip(&entropies).enumerate() {
                    let computed = token_entropy(step);
                    if (computed - provided).abs() > ENTROPY_MISMATCH_TOLERANCE {
                        return Err(RecordError::EntropyMismatch {
                            rollout: rollout_index,
                            step: step_index,
                            provided,
                            computed,
                        });
                    }
                }
            }
            steps
        }
        (None, Some(entropies)) => {
            let mut steps = Vec::with_capacity(entropies.len());
            for (step_index, entropy) in entropies.into_iter().enumerate() {
                steps.push(TokenStep::from_entropy(entropy, 1.0).map_err(|source| {
                    RecordError::InvalidStep {
                        rollout: rollout_index,
                        step: step_index,
                        source,
                    }
                })?);
            }
            steps
        }
        (None, None) => {
            return Err(RecordError::MissingSteps {
                rollout: rollout_index,
            })
        }
    };

    if record.length != steps.len() {
        return Err(RecordError::LengthMismatch {
            rollout: rollout_index,
            declared: record.length,
            actual: steps.len(),
        });
    }

    let mut builder = Rollout::builder(steps, record.answer).format_ok(record.format_ok);
    if let Some(ids) = record.token_ids {
        builder = builder.token_ids(ids);
    }
    if let Some(logprobs) = record.rollout_logprobs {
        builder = builder.rollout_logprobs(logprobs);
    }
    if let Some(logprobs) = record.ref_logprobs {
        builder = builder.ref_logprobs(logprobs);
    }
    if let Some(flag) = record.is_correct {
        builder = builder.correct_override(flag);
    }
    builder.build().map_err(|source| RecordError::InvalidRollout {
        rollout: rollout_index,
        source,
    })
}

fn warn_unknown(
    warnings: &mut Vec<String>,
    line_number: usize,
    context: &str,
    unknown: &serde_json::Map<String, serde_json::Value>,
) {
    for key in unknown.keys() {
        warnings.push(format!(
            "line {line_number}: ignoring unknown field `{key}` in {context}"
        ));
    }
}

#[derive(serde::Serialize)]
struct GroupOut<'a> {
    question_id: &'a str,
    ground_truth: &'a str,
    rollouts: Vec<RolloutOut<'a>>,
}

#[derive(serde::Serialize)]
struct RolloutOut<'a> {
    answer: &'a str,
    format_ok: bool,
    length: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    steps: Option<Vec<StepOut<'a>>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    entropies: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    token_ids: Option<&'a [i64]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    rollout_logprobs: Option<&'a [f64]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    ref_logprobs: Option<&'a [f64]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    is_correct: Option<bool>,
}

#[derive(serde::Serialize)]
struct StepOut<'a> {
    probs: &'a [f64],
    temperature: f64,
}

/// Serializes a batch back to the canonical line-delimited form: one
/// group per line, probability vectors (never logits), and `entropies`
/// only for rollouts that carry no distributions.
pub fn serialize_batch(batch: &Batch) -> String {
    let mut out = String::new();
    for group in batch.groups() {
        let rollouts = group
            .rollouts()
            .iter()
            .map(|rollout| {
                let all_probs = rollout.steps().iter().all(|s| s.probs().is_some());
                let (steps, entropies) = if all_probs {
                    (
                        Some(
                            rollout
                                .steps()
                                .iter()
                                .map(|s| StepOut {
                                    probs: s.probs().expect("checked above"),
                                    temperature: s.temperature(),
                                })
                                .collect(),
                        ),
                        None,
                    )
                } else {
                    (
                        None,
                        Some(rollout.steps().iter().map(token_entropy).collect()),
                    )
                };
                RolloutOut {
                    answer: rollout.answer(),
                    format_ok: rollout.format_ok(),
                    length: rollout.len(),
                    steps,
                    entropies,
                    token_ids: rollout.token_ids(),
                    rollout_logprobs: rollout.rollout_logprobs(),
                    ref_logprobs: rollout.ref_logprobs(),
                    is_correct: rollout.correct_override(),
                }
            })
            .collect();
        let record = GroupOut {
            question_id: group.question_id(),
            ground_truth: group.ground_truth(),
            rollouts,
        };
        out.push_str(&serde_json::to_string(&record).expect("batch serialization is infallible"));
        out.push('\n');
    }
    out
}
