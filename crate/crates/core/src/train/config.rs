use serde::{Deserialize, Serialize};

use crate::arch::{DiscriminatorConfig, GeneratorConfig};
use crate::error::{Error, Result};
use crate::loss::LossWeights;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Seeds {
    /// Patch positions, augmentation draws and shuffling.
    pub data: u64,
    /// Generator and discriminator weights.
    pub init: u64,
}

/// Everything that determines a training run besides the dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub base_lr: f64,
    pub batch_size: usize,
    pub patch: usize,
    pub patches_per_pair: usize,
    pub median_k: usize,
    pub augment: bool,
    /// Stop after this many steps even if epochs remain.
    pub max_steps: Option<u64>,
    /// Save a checkpoint every this many epochs.
    pub checkpoint_every: usize,
    pub extractor_seed: u64,
    pub seeds: Seeds,
    pub weights: LossWeights,
    pub adam: AdamConfig,
    pub generator: GeneratorConfig,
    /// Defaults to the 70×70 ladder trimmed to fit `patch`.
    pub discriminator: Option<DiscriminatorConfig>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 200,
            base_lr: 5e-4,
            batch_size: 32,
            patch: 64,
            patches_per_pair: 8,
            median_k: crate::degrade::DEFAULT_MEDIAN_K,
            augment: true,
            max_steps: None,
            checkpoint_every: 10,
            extractor_seed: crate::loss::DEFAULT_EXTRACTOR_SEED,
            seeds: Seeds::default(),
            weights: LossWeights::default(),
            adam: AdamConfig::default(),
            generator: GeneratorConfig::default(),
            discriminator: None,
        }
    }
}

fn config_problems(r: Result<()>) -> Vec<String> {
    match r {
        Ok(()) => Vec::new(),
        Err(Error::Config(v)) => v,
        Err(e) => vec![e.to_string()],
    }
}

impl TrainConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: TrainConfig = toml::from_str(text).map_err(|e| Error::Config(vec![e.message().to_string()]))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("train config serializes")
    }

    pub fn discriminator_config(&self) -> DiscriminatorConfig {
        self.discriminator
            .clone()
            .unwrap_or_else(|| DiscriminatorConfig::for_patch(self.patch))
    }

    /// Checks every field and reports all problems at once.
    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        if self.epochs == 0 {
            bad.push("epochs = 0: must be at least 1".to_string());
        }
        if !(self.base_lr.is_finite() && self.base_lr > 0.0) {
            bad.push(format!("base_lr = {}: must be a positive number", self.base_lr));
        }
        if self.batch_size < 2 {
            bad.push(format!(
                "batch_size = {}: must be at least 2, batch normalization needs two samples for batch statistics",
                self.batch_size
            ));
        }
        if self.patch == 0 || self.patch % self.generator.downsample_factor() != 0 {
            bad.push(format!(
                "patch = {}: must be a positive multiple of {}",
                self.patch,
                self.generator.downsample_factor()
            ));
        }
        if self.patches_per_pair == 0 {
            bad.push("patches_per_pair = 0: must be at least 1".to_string());
        }
        if self.median_k % 2 == 0 || self.median_k > self.patch {
            bad.push(format!(
                "median_k = {}: must be odd and no larger than the patch",
                self.median_k
            ));
        }
        if self.checkpoint_every == 0 {
            bad.push("checkpoint_every = 0: must be at least 1".to_string());
        }
        if self.max_steps == Some(0) {
            bad.push("max_steps = 0: must be at least 1 when set".to_string());
        }
        bad.extend(self.weights.validate());
        let a = &self.adam;
        if !(0.0..1.0).contains(&a.beta1) || !(0.0..1.0).contains(&a.beta2) {
            bad.push(format!("adam betas ({}, {}) must lie in [0, 1)", a.beta1, a.beta2));
        }
        if !(a.eps.is_finite() && a.eps > 0.0) {
            bad.push(format!("adam.eps = {}: must be positive", a.eps));
        }
        bad.extend(config_problems(self.generator.validate()).into_iter().map(|m| format!("generator: {m}")));
        let d = self.discriminator_config();
        let d_problems = config_problems(d.validate());
        if d_problems.is_empty() && d.receptive_field() > self.patch {
            bad.push(format!(
                "discriminator receptive field {} exceeds patch {}",
                d.receptive_field(),
                self.patch
            ));
        }
        bad.extend(d_problems.into_iter().map(|m| format!("discriminator: {m}")));
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(bad))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_round_trip() {
        let c = TrainConfig::default();
        c.validate().unwrap();
        assert_eq!(TrainConfig::from_toml(&c.to_toml()).unwrap(), c);
    }

    #[test]
    fn every_bad_field_is_reported() {
        let text = "epochs = 0\nbatch_size = 1\nbase_lr = -1.0\nmedian_k = 4\n";
        let Err(Error::Config(bad)) = TrainConfig::from_toml(text) else {
            panic!("expected config error");
        };
        assert_eq!(bad.len(), 4, "{bad:?}");
        assert!(bad.iter().any(|m| m.contains("batch_size") && m.contains("batch normalization")));
    }

    #[test]
    fn unknown_fields_rejected() {
        assert!(TrainConfig::from_toml("epochz = 3\n").is_err());
    }
}
