//! Network architectures and the residual-over-median restoration path.

pub mod checkpoint;
pub mod discriminator;
pub mod generator;
pub mod params;

pub use discriminator::{DiscStage, Discriminator, DiscriminatorConfig, DiscriminatorPass};
pub use generator::{Generator, GeneratorConfig, GeneratorPass};
pub use params::{Binding, Entry, EntryKind, ModelParams};

use crate::degrade::median_filter;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensorops::{Mode, Tape, Tensor};

use checkpoint::{find_bytes, params_from_records, Record};

/// Generator input for a corrupted image and its median baseline:
/// `2·(corrupted − median)`.
pub fn residual_input<T: Scalar>(corrupted: &Tensor<T>, median: &Tensor<T>) -> Result<Tensor<T>> {
    let two = T::lit(2.0);
    corrupted.zip_map(median, |c, m| two * (c - m))
}

/// Run the generator in eval mode on a value tensor.
pub fn predict_residual<T: Scalar>(gen: &mut Generator<T>, input: &Tensor<T>) -> Result<Tensor<T>> {
    let mut tape = Tape::new();
    let x = tape.constant(input.clone());
    let pass = gen.forward(&mut tape, x, Mode::Eval, false)?;
    Ok(tape.value(pass.output).clone())
}

/// `clamp(baseline + residual, 0, 1)`.
pub fn compose<T: Scalar>(baseline: &Tensor<T>, residual: &Tensor<T>) -> Result<Tensor<T>> {
    baseline.zip_map(residual, |m, r| (m + r).max(T::zero()).min(T::one()))
}

/// Remove dust and scratches from `corrupted` (values in `[0, 1]`): the
/// generator predicts a correction on top of the `median_k` median image.
pub fn restore<T: Scalar>(
    corrupted: &Tensor<T>,
    gen: &mut Generator<T>,
    median_k: usize,
) -> Result<Tensor<T>> {
    let median = median_filter(corrupted, median_k)?;
    let input = residual_input(corrupted, &median)?;
    let residual = predict_residual(gen, &input)?;
    compose(&median, &residual)
}

pub const GENERATOR_CONFIG_RECORD: &str = "meta/generator";
pub const DISCRIMINATOR_CONFIG_RECORD: &str = "meta/discriminator";
pub const GENERATOR_PREFIX: &str = "g";
pub const DISCRIMINATOR_PREFIX: &str = "d";

/// Rebuild a generator from checkpoint records (its config plus `g/*`).
pub fn generator_from_records<T: Scalar>(records: &[Record<T>]) -> Result<Generator<T>> {
    let text = std::str::from_utf8(find_bytes(records, GENERATOR_CONFIG_RECORD)?)
        .map_err(|_| Error::Checkpoint("generator config is not UTF-8".into()))?;
    let cfg: GeneratorConfig = toml::from_str(text)
        .map_err(|e| Error::Checkpoint(format!("generator config: {e}")))?;
    let mut gen = Generator::new(cfg)?;
    params_from_records(GENERATOR_PREFIX, records, &mut gen.params)?;
    Ok(gen)
}

pub fn generator_records<T: Scalar>(gen: &Generator<T>) -> Vec<Record<T>> {
    let mut out = vec![Record::bytes(
        GENERATOR_CONFIG_RECORD,
        toml::to_string(&gen.cfg).expect("config serializes"),
    )];
    out.extend(checkpoint::params_to_records(GENERATOR_PREFIX, &gen.params));
    out
}
