//! Configuration resolution: built-in defaults, then the config file,
//! then command-line flags. Every override is tracked so run reports can
//! echo how the final configuration came about.

use std::path::Path;

use adathink_core::calibration::{CalibrationConfig, RepetitionConfig};
use adathink_core::metrics::AesConfig;
use adathink_core::sim::{EnvConfig, RewardMode, TrainingSchedule};
use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

/// Config file schema: a flat key namespace mirroring the module config
/// keys. All keys optional; TOML format.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub tau: Option<f64>,
    pub alpha: Option<f64>,
    pub k_fraction: Option<f64>,
    pub alpha_m: Option<f64>,
    #[serde(default)]
    pub repetition: RepetitionFileConfig,
    pub stage1_steps: Option<usize>,
    pub stage2_steps: Option<usize>,
    pub batch_size: Option<usize>,
    pub group_size: Option<usize>,
    pub learning_rate: Option<f64>,
    pub clip_epsilon: Option<f64>,
    pub kl_beta: Option<f64>,
    pub eval_rollouts_per_bucket: Option<usize>,
    pub reward_mode: Option<String>,
    pub bucket_difficulties: Option<Vec<f64>>,
    pub num_answers: Option<usize>,
    pub max_steps: Option<usize>,
    pub q_floor: Option<f64>,
    pub q_ceil: Option<f64>,
    pub comprehension_scale: Option<f64>,
    pub alpha_len: Option<f64>,
    pub beta_acc: Option<f64>,
    pub gamma_acc: Option<f64>,
    pub ratio: Option<f64>,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RepetitionFileConfig {
    pub enabled: Option<bool>,
    pub n: Option<usize>,
    pub weight: Option<f64>,
}

/// Fully resolved run configuration, echoed verbatim into every output
/// header.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResolvedConfig {
    pub tau: f64,
    pub alpha: f64,
    pub k_fraction: f64,
    pub alpha_m: f64,
    pub repetition_enabled: bool,
    pub repetition_n: usize,
    pub repetition_weight: f64,
    pub stage1_steps: usize,
    pub stage2_steps: usize,
    pub batch_size: usize,
    pub group_size: usize,
    pub learning_rate: f64,
    pub clip_epsilon: f64,
    pub kl_beta: f64,
    pub eval_rollouts_per_bucket: usize,
    pub reward_mode: String,
    pub bucket_difficulties: Vec<f64>,
    pub num_answers: usize,
    pub max_steps: usize,
    pub q_floor: f64,
    pub q_ceil: f64,
    pub comprehension_scale: f64,
    pub alpha_len: f64,
    pub beta_acc: f64,
    pub gamma_acc: f64,
    pub ratio: f64,
    pub seed: u64,
}

impl Default for ResolvedConfig {
    fn default() -> Self {
        let calibration = CalibrationConfig::default();
        let schedule = TrainingSchedule::default();
        let env = EnvConfig::default();
        let aes = AesConfig::default();
        Self {
            tau: calibration.tau,
            alpha: calibration.alpha,
            k_fraction: calibration.k_fraction,
            alpha_m: calibration.alpha_m,
            repetition_enabled: calibration.repetition.enabled,
            repetition_n: calibration.repetition.n,
            repetition_weight: calibration.repetition.weight,
            stage1_steps: schedule.stage1_steps,
            stage2_steps: schedule.stage2_steps,
            batch_size: schedule.batch_size,
            group_size: schedule.group_size,
            learning_rate: schedule.learning_rate,
            clip_epsilon: schedule.clip_epsilon,
            kl_beta: schedule.kl_beta,
            eval_rollouts_per_bucket: schedule.eval_rollouts_per_bucket,
            reward_mode: RewardMode::Adathink.as_str().to_string(),
            bucket_difficulties: env.bucket_difficulties,
            num_answers: env.num_answers,
            max_steps: env.max_steps,
            q_floor: env.q_floor,
            q_ceil: env.q_ceil,
            comprehension_scale: env.comprehension_scale,
            alpha_len: aes.alpha_len,
            beta_acc: aes.beta_acc,
            gamma_acc: aes.gamma_acc,
            ratio: 0.4,
            seed: 0,
        }
    }
}

impl ResolvedConfig {
    /// Loads the config file (when given) over the defaults, recording
    /// each key it sets. Flag overrides are applied afterwards by the
    /// subcommands through [`Overrides`].
    pub fn from_file(path: Option<&Path>) -> Result<(Self, Vec<String>)> {
        let mut resolved = Self::default();
        let mut overrides = Vec::new();
        let Some(path) = path else {
            return Ok((resolved, overrides));
        };
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config file {}", path.display()))?;
        let file: FileConfig = toml::from_str(&text)
            .with_context(|| format!("cannot parse config file {}", path.display()))?;

        macro_rules! apply {
            ($field:ident) => {
                if let Some(value) = file.$field {
                    overrides.push(format!("{}={:?} (config file)", stringify!($field), value));
                    resolved.$field = value;
                }
            };
        }
        apply!(tau);
        apply!(alpha);
        apply!(k_fraction);
        apply!(alpha_m);
        if let Some(value) = file.repetition.enabled {
            overrides.push(format!("repetition.enabled={value} (config file)"));
            resolved.repetition_enabled = value;
        }
        if let Some(value) = file.repetition.n {
            overrides.push(format!("repetition.n={value} (config file)"));
            resolved.repetition_n = value;
        }
        if let Some(value) = file.repetition.weight {
            overrides.push(format!("repetition.weight={value} (config file)"));
            resolved.repetition_weight = value;
        }
        apply!(stage1_steps);
        apply!(stage2_steps);
        apply!(batch_size);
        apply!(group_size);
        apply!(learning_rate);
        apply!(clip_epsilon);
        apply!(kl_beta);
        apply!(eval_rollouts_per_bucket);
        apply!(reward_mode);
        apply!(bucket_difficulties);
        apply!(num_answers);
        apply!(max_steps);
        apply!(q_floor);
        apply!(q_ceil);
        apply!(comprehension_scale);
        apply!(alpha_len);
        apply!(beta_acc);
        apply!(gamma_acc);
        apply!(ratio);
        apply!(seed);
        Ok((resolved, overrides))
    }

    pub fn calibration(&self) -> CalibrationConfig {
        CalibrationConfig {
            tau: self.tau,
            alpha: self.alpha,
            k_fraction: self.k_fraction,
            alpha_m: self.alpha_m,
            repetition: RepetitionConfig {
                enabled: self.repetition_enabled,
                n: self.repetition_n,
                weight: self.repetition_weight,
            },
        }
    }

    pub fn schedule(&self) -> TrainingSchedule {
        TrainingSchedule {
            stage1_steps: self.stage1_steps,
            stage2_steps: self.stage2_steps,
            batch_size: self.batch_size,
            group_size: self.group_size,
            learning_rate: self.learning_rate,
            seed: self.seed,
            clip_epsilon: self.clip_epsilon,
            kl_beta: self.kl_beta,
            eval_rollouts_per_bucket: self.eval_rollouts_per_bucket,
        }
    }

    pub fn env(&self) -> EnvConfig {
        EnvConfig {
            bucket_difficulties: self.bucket_difficulties.clone(),
            num_answers: self.num_answers,
            max_steps: self.max_steps,
            q_floor: self.q_floor,
            q_ceil: self.q_ceil,
            comprehension_scale: self.comprehension_scale,
        }
    }

    pub fn aes(&self) -> AesConfig {
        AesConfig {
            alpha_len: self.alpha_len,
            beta_acc: self.beta_acc,
            gamma_acc: self.gamma_acc,
        }
    }

    pub fn reward_mode(&self) -> Result<RewardMode> {
        match self.reward_mode.parse::<RewardMode>() {
            Ok(mode) => Ok(mode),
            Err(e) => bail!("invalid reward_mode `{}`: {e}", self.reward_mode),
        }
    }
}

/// Helper for recording flag-level overrides uniformly.
pub struct Overrides<'a> {
    pub config: &'a mut ResolvedConfig,
    pub log: &'a mut Vec<String>,
}

impl Overrides<'_> {
    pub fn set_f64(&mut self, key: &str, target: fn(&mut ResolvedConfig) -> &mut f64, value: Option<f64>) {
        if let Some(v) = value {
            *target(self.config) = v;
            self.log.push(format!("{key}={v} (flag)"));
        }
    }

    pub fn set_usize(
        &mut self,
        key: &str,
        target: fn(&mut ResolvedConfig) -> &mut usize,
        value: Option<usize>,
    ) {
        if let Some(v) = value {
            *target(self.config) = v;
            self.log.push(format!("{key}={v} (flag)"));
        }
    }

    pub fn set_u64(&mut self, key: &str, target: fn(&mut ResolvedConfig) -> &mut u64, value: Option<u64>) {
        if let Some(v) = value {
            *target(self.config) = v;
            self.log.push(format!("{key}={v} (flag)"));
        }
    }

    pub fn set_bool(
        &mut self,
        key: &str,
        target: fn(&mut ResolvedConfig) -> &mut bool,
        value: Option<bool>,
    ) {
        if let Some(v) = value {
            *target(self.config) = v;
            self.log.push(format!("{key}={v} (flag)"));
        }
    }

    pub fn set_string(
        &mut self,
        key: &str,
        target: fn(&mut ResolvedConfig) -> &mut String,
        value: Option<String>,
    ) {
        if let Some(v) = value {
            self.log.push(format!("{key}={v} (flag)"));
            *target(self.config) = v;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    #[test]
    fn defaults_match_module_defaults() {
        let resolved = ResolvedConfig::default();
        assert_eq!(resolved.tau, 0.7);
        assert_eq!(resolved.alpha, 0.5);
        assert_eq!(resolved.k_fraction, 0.2);
        assert_eq!(resolved.alpha_m, 0.1);
        assert!(!resolved.repetition_enabled);
        assert_eq!(resolved.repetition_n, 4);
        assert_eq!(resolved.stage1_steps, 300);
        assert_eq!(resolved.stage2_steps, 200);
        assert_eq!(resolved.group_size, 8);
        assert_eq!(resolved.kl_beta, 0.01);
        assert_eq!(resolved.clip_epsilon, 0.2);
        assert_eq!(resolved.beta_acc, 3.0);
        assert_eq!(resolved.gamma_acc, 5.0);
    }

    #[test]
    fn file_values_override_defaults_and_are_logged() {
        let mut file = tempfile::NamedTempFile::new().unwrap();
        writeln!(file, "tau = 0.9\nrepetition.enabled = true\nseed = 7").unwrap();
        let (resolved, overrides) = ResolvedConfig::from_file(Some(file.path())).unwrap();
        assert_eq!(resolved.tau, 0.9);
        assert!(resolved.repetition_enabled);
        assert_eq!(resolved.seed, 7);
        assert_eq!(overrides.len(), 3);
        assert!(overrides.iter().any(|o| o.starts_with("tau=")));
    }

    #[test]
    fn unknown_config_keys_rejected() {
        let mut file = tempfile::NamedTempFile::new().unwrap();
        writeln!(file, "taus = 0.9").unwrap();
        assert!(ResolvedConfig::from_file(Some(file.path())).is_err());
    }
}
