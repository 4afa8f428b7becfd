//! Adam, the learning-rate schedule, the adversarial step, checkpoints and
//! the epoch loop.

pub mod adam;
pub mod checkpoint;
pub mod config;
pub mod run;
pub mod step;

pub use adam::{adam_step, OptimizerState};
pub use checkpoint::{export_generator, load_checkpoint, load_generator, save_checkpoint};
pub use config::{AdamConfig, Seeds, TrainConfig};
pub use run::{parse_log, train, LogRow, LOG_FILE, LOG_HEADER};
pub use step::{gan_step, GanModels, StepLosses, StepOptions};

use crate::arch::{Discriminator, Generator};
use crate::data::patch::derive_seed;
use crate::error::{Error, Result};
use crate::loss::ContentExtractor;
use crate::scalar::Scalar;

/// `base_lr · (1 − epoch / epochs)`: linear decay ending at `base_lr / epochs`.
pub fn lr_at(epoch: usize, cfg: &TrainConfig) -> Result<f64> {
    if epoch >= cfg.epochs {
        return Err(Error::invalid(format!("epoch {epoch} outside 0..{}", cfg.epochs)));
    }
    Ok(cfg.base_lr - epoch as f64 * (cfg.base_lr / cfg.epochs as f64))
}

/// Models plus position in the run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState<T> {
    pub cfg: TrainConfig,
    pub models: GanModels<T>,
    /// Epoch currently in progress.
    pub epoch: u64,
    /// Next batch index within `epoch`.
    pub batch: u64,
    /// Completed steps.
    pub step: u64,
}

impl<T: Scalar> TrainState<T> {
    /// Fresh models. `seeds.init` replaces the seeds inside the generator and
    /// discriminator configs.
    pub fn new(cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let mut g_cfg = cfg.generator.clone();
        g_cfg.seed = derive_seed(&[cfg.seeds.init, 0]);
        let mut d_cfg = cfg.discriminator_config();
        d_cfg.seed = derive_seed(&[cfg.seeds.init, 1]);
        let gen = Generator::new(g_cfg)?;
        let disc = Discriminator::new(d_cfg)?;
        let models = GanModels {
            g_opt: OptimizerState::new(&gen.params, cfg.adam),
            d_opt: OptimizerState::new(&disc.params, cfg.adam),
            extractor: ContentExtractor::fixed_random(cfg.extractor_seed),
            gen,
            disc,
        };
        Ok(TrainState {
            cfg,
            models,
            epoch: 0,
            batch: 0,
            step: 0,
        })
    }

    pub fn finished(&self) -> bool {
        self.epoch as usize >= self.cfg.epochs || self.cfg.max_steps.is_some_and(|m| self.step >= m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_values() {
        let cfg = TrainConfig::default();
        assert_eq!(lr_at(0, &cfg).unwrap(), 5e-4);
        assert!((lr_at(199, &cfg).unwrap() - 2.5e-6).abs() < 1e-18);
        for e in 1..200 {
            assert!(lr_at(e, &cfg).unwrap() < lr_at(e - 1, &cfg).unwrap());
        }
        assert!(lr_at(200, &cfg).is_err());
    }
}
