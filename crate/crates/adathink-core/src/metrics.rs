//! Accuracy-efficiency scoring and length-based dataset selection.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::math;

/// Weights of the accuracy-efficiency score. The asymmetric defaults
/// penalize accuracy drops harder than they reward gains.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AesConfig {
    pub alpha_len: f64,
    pub beta_acc: f64,
    pub gamma_acc: f64,
}

impl Default for AesConfig {
    fn default() -> Self {
        Self {
            alpha_len: 1.0,
            beta_acc: 3.0,
            gamma_acc: 5.0,
        }
    }
}

/// Accuracy-efficiency score of a model against a baseline:
///
/// * `ΔLength = (Len_base − Len_model) / Len_base`
/// * `ΔAcc = (Acc_model − Acc_base) / Acc_base`
/// * `AES = α_len·ΔLength + β_acc·ΔAcc` when `ΔAcc ≥ 0`, and
///   `α_len·ΔLength − γ_acc·|ΔAcc|` otherwise.
///
/// Inputs are accuracies in percentage points and lengths in tokens; both
/// deltas are relative, so the score is scale-invariant.
pub fn aes(
    model_acc: f64,
    model_len: f64,
    base_acc: f64,
    base_len: f64,
    config: &AesConfig,
) -> Result<f64, MetricsError> {
    if base_acc.is_nan() || base_acc <= 0.0 || base_len.is_nan() || base_len <= 0.0 {
        return Err(MetricsError::ZeroBaseline);
    }
    if model_acc.is_nan() || model_acc < 0.0 || model_len.is_nan() || model_len <= 0.0 {
        return Err(MetricsError::InvalidModelStats);
    }
    let delta_length = (base_len - model_len) / base_len;
    let delta_acc = (model_acc - base_acc) / base_acc;
    let score = if delta_acc >= 0.0 {
        config.alpha_len * delta_length + config.beta_acc * delta_acc
    } else {
        config.alpha_len * delta_length - config.gamma_acc * math::abs(delta_acc)
    };
    Ok(score)
}

/// Parameters for median-split stratified selection.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SelectionConfig {
    /// Selection ratio `δ ∈ (0, 1]`.
    pub ratio: f64,
    pub seed: u64,
}

/// One dataset record as seen by the selector.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LengthRecord {
    pub id: String,
    pub output_length: u64,
}

/// Selects `round(δ·n)` record ids, stratified by the global median output
/// length: records shorter than the median form the short group, ties and
/// longer records the long group. Per-group counts use largest-remainder
/// rounding so each stratum keeps its proportion within one record, and
/// sampling within a group is uniform without replacement under the seed.
/// The returned ids are sorted.
pub fn median_split_select(
    records: &[LengthRecord],
    config: &SelectionConfig,
) -> Result<Vec<String>, MetricsError> {
    if records.is_empty() {
        return Err(MetricsError::NoRecords);
    }
    if !config.ratio.is_finite() || config.ratio <= 0.0 || config.ratio > 1.0 {
        return Err(MetricsError::InvalidRatio {
            value: config.ratio,
        });
    }
    let n = records.len();
    let target = config.ratio * n as f64;
    if target < 2.0 {
        return Err(MetricsError::RatioTooSmall {
            ratio: config.ratio,
            records: n,
        });
    }
    let total: usize = math::round(target) as usize;

    let median = interpolated_median(records);
    let mut short: Vec<&LengthRecord> = Vec::new();
    let mut long: Vec<&LengthRecord> = Vec::new();
    for record in records {
        if (record.output_length as f64) < median {
            short.push(record);
        } else {
            long.push(record);
        }
    }

    // Largest-remainder allocation over the two strata.
    let exact = [
        config.ratio * short.len() as f64,
        config.ratio * long.len() as f64,
    ];
    let mut counts = [
        math::floor(exact[0]) as usize,
        math::floor(exact[1]) as usize,
    ];
    let mut leftover = total.saturating_sub(counts[0] + counts[1]);
    let mut order = [0usize, 1usize];
    // Larger fractional remainder first; ties favor the short group.
    if exact[1] - counts[1] as f64 > exact[0] - counts[0] as f64 {
        order = [1, 0];
    }
    for group in order {
        let capacity = if group == 0 { short.len() } else { long.len() };
        if leftover > 0 && counts[group] < capacity {
            counts[group] += 1;
            leftover -= 1;
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut selected: Vec<String> = Vec::with_capacity(total);
    for (group, count) in [(&short, counts[0]), (&long, counts[1])] {
        for record in sample_without_replacement(group, count, &mut rng) {
            selected.push(record.id.clone());
        }
    }
    selected.sort_unstable();
    Ok(selected)
}

/// Interpolated median of the output lengths (quantile at `(n−1)·0.5`).
fn interpolated_median(records: &[LengthRecord]) -> f64 {
    let mut lengths: Vec<u64> = records.iter().map(|r| r.output_length).collect();
    lengths.sort_unstable();
    let n = lengths.len();
    if n % 2 == 1 {
        lengths[n / 2] as f64
    } else {
        (lengths[n / 2 - 1] as f64 + lengths[n / 2] as f64) / 2.0
    }
}

/// Partial Fisher–Yates draw of `count` items, deterministic under the
/// caller's RNG.
fn sample_without_replacement<'a>(
    pool: &[&'a LengthRecord],
    count: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<&'a LengthRecord> {
    let mut indices: Vec<usize> = (0..pool.len()).collect();
    let count = count.min(pool.len());
    for i in 0..count {
        let j = rng.gen_range(i..pool.len());
        indices.swap(i, j);
    }
    indices[..count].iter().map(|&i| pool[i]).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub enum MetricsError {
    ZeroBaseline,
    InvalidModelStats,
    NoRecords,
    InvalidRatio { value: f64 },
    RatioTooSmall { ratio: f64, records: usize },
}

impl fmt::Display for MetricsError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::ZeroBaseline => {
                f.write_str("baseline accuracy and length must be positive (relative change undefined)")
            }
            Self::InvalidModelStats => {
                f.write_str("model accuracy must be nonnegative and length positive")
            }
            Self::NoRecords => f.write_str("selection requires at least one record"),
            Self::InvalidRatio { value } => write!(f, "ratio must be in (0, 1], got {value}"),
            Self::RatioTooSmall { ratio, records } => write!(
                f,
                "ratio too small to stratify: {ratio}·{records} < 2"
            ),
        }
    }
}

impl core::error::Error for MetricsError {}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::format;
    use alloc::string::ToString;
    use alloc::vec;
    use approx::assert_relative_eq;

    #[test]
    fn aes_is_zero_when_model_equals_baseline() {
        let score = aes(52.44, 484.0, 52.44, 484.0, &AesConfig::default()).unwrap();
        assert_eq!(score, 0.0);
    }

    #[test]
    fn aes_rejects_zero_baseline() {
        assert!(matches!(
            aes(50.0, 100.0, 0.0, 484.0, &AesConfig::default()),
            Err(MetricsError::ZeroBaseline)
        ));
        assert!(matches!(
            aes(50.0, 100.0, 52.0, 0.0, &AesConfig::default()),
            Err(MetricsError::ZeroBaseline)
        ));
    }

    #[test]
    fn aes_accuracy_gain_branch() {
        // Acc 54.99 / Len 106 vs baseline 52.44 / 484.
        let score = aes(54.99, 106.0, 52.44, 484.0, &AesConfig::default()).unwrap();
        assert_relative_eq!(score, 0.93, epsilon = 0.01);
    }

    #[test]
    fn aes_accuracy_drop_branch() {
        // Acc 38.10 / Len 974 vs baseline 52.44 / 484.
        let score = aes(38.10, 974.0, 52.44, 484.0, &AesConfig::default()).unwrap();
        assert_relative_eq!(score, -2.38, epsilon = 0.01);
    }

    fn records(short: usize, long: usize) -> Vec<LengthRecord> {
        let mut out = Vec::new();
        for i in 0..short {
            out.push(LengthRecord {
                id: format!("s{i:04}"),
                output_length: 10 + i as u64,
            });
        }
        for i in 0..long {
            out.push(LengthRecord {
                id: format!("l{i:04}"),
                output_length: 1000 + i as u64,
            });
        }
        out
    }

    #[test]
    fn full_ratio_returns_all_ids() {
        let recs = records(3, 3);
        let mut expected: Vec<String> = recs.iter().map(|r| r.id.clone()).collect();
        expected.sort_unstable();
        let got = median_split_select(&recs, &SelectionConfig { ratio: 1.0, seed: 9 }).unwrap();
        assert_eq!(got, expected);
    }

    #[test]
    fn balanced_split_takes_two_per_group() {
        let recs = records(5, 5);
        let got = median_split_select(&recs, &SelectionConfig { ratio: 0.4, seed: 1 }).unwrap();
        assert_eq!(got.len(), 4);
        assert_eq!(got.iter().filter(|id| id.starts_with('s')).count(), 2);
        assert_eq!(got.iter().filter(|id| id.starts_with('l')).count(), 2);
    }

    #[test]
    fn same_seed_same_selection() {
        let recs = records(50, 50);
        let config = SelectionConfig { ratio: 0.3, seed: 42 };
        assert_eq!(
            median_split_select(&recs, &config).unwrap(),
            median_split_select(&recs, &config).unwrap()
        );
    }

    #[test]
    fn too_small_ratio_rejected() {
        let recs = records(5, 5);
        assert!(matches!(
            median_split_select(&recs, &SelectionConfig { ratio: 0.1, seed: 0 }),
            Err(MetricsError::RatioTooSmall { .. })
        ));
    }

    #[test]
    fn median_ties_go_long() {
        // Lengths [5, 5]: median 5, both records tie and land in the long
        // group; δ=1 keeps them all.
        let recs = vec![
            LengthRecord { id: "a".to_string(), output_length: 5 },
            LengthRecord { id: "b".to_string(), output_length: 5 },
        ];
        let got = median_split_select(&recs, &SelectionConfig { ratio: 1.0, seed: 0 }).unwrap();
        assert_eq!(got.len(), 2);
    }
}
