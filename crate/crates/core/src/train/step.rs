use crate::arch::{residual_input, Discriminator, Generator};
use crate::data::PatchBatch;
use crate::error::{Error, Result};
use crate::loss::{
    d_loss_var, g_loss_var, gradient_loss_var, perceptual_loss_var, pixel_loss_var, total_loss_var,
    ContentExtractor, LossComponents, LossWeights,
};
use crate::scalar::Scalar;
use crate::tensorops::{Mode, Tape};
use crate::train::{adam_step, OptimizerState};

/// Generator, discriminator, their optimizer states and the frozen
/// perceptual extractor.
#[derive(Debug, Clone, PartialEq)]
pub struct GanModels<T> {
    pub gen: Generator<T>,
    pub disc: Discriminator<T>,
    pub g_opt: OptimizerState<T>,
    pub d_opt: OptimizerState<T>,
    pub extractor: ContentExtractor<T>,
}

/// Scalar outputs of one training step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepLosses<T> {
    pub components: LossComponents<T>,
    pub d_loss: T,
    pub total: T,
}

/// Which networks a step may update.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StepOptions {
    pub update_generator: bool,
    pub update_discriminator: bool,
}

impl Default for StepOptions {
    fn default() -> Self {
        StepOptions {
            update_generator: true,
            update_discriminator: true,
        }
    }
}

fn finite<T: Scalar>(v: T, what: &str) -> Result<T> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite(format!("{what} = {v}")))
    }
}

/// One discriminator update followed by one generator update.
///
/// The discriminator compares the real residual `clean − median` against
/// the generator's residual, detached. The generator then minimises the
/// weighted sum of pixel, gradient and perceptual losses on
/// `median + residual` plus the adversarial term scored by the freshly
/// updated discriminator. On any error `models` is left untouched.
pub fn gan_step<T: Scalar>(
    batch: &PatchBatch<T>,
    models: &mut GanModels<T>,
    weights: &LossWeights,
    lr: f64,
    opts: StepOptions,
) -> Result<StepLosses<T>> {
    let mut next = models.clone();
    let losses = step_inner(batch, &mut next, weights, lr, opts)?;
    *models = next;
    Ok(losses)
}

fn step_inner<T: Scalar>(
    batch: &PatchBatch<T>,
    m: &mut GanModels<T>,
    weights: &LossWeights,
    lr: f64,
    opts: StepOptions,
) -> Result<StepLosses<T>> {
    let input = residual_input(&batch.corrupted, &batch.medians)?;
    let real = batch.clean.zip_map(&batch.medians, |c, md| c - md)?;

    let mut gt = Tape::new();
    let x = gt.constant(input);
    let g_pass = m.gen.forward(&mut gt, x, Mode::Train, opts.update_generator)?;
    let fake_value = gt.value(g_pass.output).detached();

    // discriminator update
    let mut dt = Tape::new();
    let r = dt.constant(real);
    let f = dt.constant(fake_value);
    let real_pass = m.disc.forward(&mut dt, r, Mode::Train, true)?;
    let fake_pass = m.disc.forward(&mut dt, f, Mode::Train, true)?;
    let d_loss = d_loss_var(&mut dt, real_pass.scores, fake_pass.scores)?;
    let d_value = finite(dt.value(d_loss).item(), "discriminator loss")?;
    if opts.update_discriminator {
        let mut grads = dt.backward(d_loss)?;
        m.disc.params.clear_grads();
        m.disc.params.accumulate_grads(&real_pass.binding, &mut grads);
        m.disc.params.accumulate_grads(&fake_pass.binding, &mut grads);
        adam_step(&mut m.disc.params, &mut m.d_opt, lr)?;
        m.disc.params.clear_grads();
    }

    // generator update; the discriminator is a constant here and a scratch
    // copy keeps its running statistics untouched
    let mut critic = m.disc.clone();
    let adv_pass = critic.forward(&mut gt, g_pass.output, Mode::Train, false)?;
    let median = gt.constant(batch.medians.clone());
    let clean = gt.constant(batch.clean.clone());
    let t_hat = gt.add(median, g_pass.output)?;
    let comps = LossComponents {
        pixel: pixel_loss_var(&mut gt, t_hat, clean)?,
        gradient: gradient_loss_var(&mut gt, t_hat, clean)?,
        perceptual: perceptual_loss_var(&mut gt, t_hat, clean, &m.extractor)?,
        adversarial: g_loss_var(&mut gt, adv_pass.scores)?,
    };
    let total = total_loss_var(&mut gt, &comps, weights)?;
    let value = |v| gt.value(v).item();
    let losses = StepLosses {
        components: LossComponents {
            pixel: value(comps.pixel),
            gradient: value(comps.gradient),
            perceptual: value(comps.perceptual),
            adversarial: value(comps.adversarial),
        },
        d_loss: d_value,
        total: finite(value(total), "generator loss")?,
    };
    if opts.update_generator {
        let mut grads = gt.backward(total)?;
        m.gen.params.store_grads(&g_pass.binding, &mut grads);
        adam_step(&mut m.gen.params, &mut m.g_opt, lr)?;
        m.gen.params.clear_grads();
    }
    if !m.gen.params.all_finite() || !m.disc.params.all_finite() {
        return Err(Error::NonFinite("model parameters after update".into()));
    }
    Ok(losses)
}
