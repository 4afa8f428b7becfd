//! Full training state <-> checkpoint records.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::arch::checkpoint::{find_bytes, params_from_records, params_to_records, read_file, write_file, Payload, Record};
use crate::arch::{
    generator_records, Discriminator, Generator, DISCRIMINATOR_CONFIG_RECORD, DISCRIMINATOR_PREFIX,
};
use crate::error::{Error, Result};
use crate::loss::ContentExtractor;
use crate::scalar::Scalar;
use crate::tensorops::{Shape, Tensor};
use crate::train::{GanModels, OptimizerState, TrainConfig, TrainState};

const TRAIN_CONFIG_RECORD: &str = "meta/train";
const PROGRESS_RECORD: &str = "meta/progress";

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Progress {
    epoch: u64,
    batch: u64,
    step: u64,
    g_adam_step: u64,
    d_adam_step: u64,
}

fn utf8<T>(records: &[Record<T>], name: &str) -> Result<String> {
    String::from_utf8(find_bytes(records, name)?.to_vec())
        .map_err(|_| Error::Checkpoint(format!("{name} is not UTF-8")))
}

fn moments_to_records<T: Scalar>(prefix: &str, names: Vec<String>, opt: &OptimizerState<T>, out: &mut Vec<Record<T>>) {
    for (i, name) in names.iter().enumerate() {
        for (tag, moments) in [("m", &opt.m[i]), ("v", &opt.v[i])] {
            if moments.is_empty() {
                continue;
            }
            let t = Tensor::from_vec(Shape::new(1, 1, 1, moments.len()), moments.clone()).expect("flat shape");
            out.push(Record::tensor(format!("{prefix}/{tag}/{name}"), t));
        }
    }
}

fn moments_from_records<T: Scalar>(prefix: &str, names: Vec<String>, records: &[Record<T>], opt: &mut OptimizerState<T>) -> Result<()> {
    for (i, name) in names.iter().enumerate() {
        for (tag, moments) in [("m", &mut opt.m[i]), ("v", &mut opt.v[i])] {
            if moments.is_empty() {
                continue;
            }
            let key = format!("{prefix}/{tag}/{name}");
            let rec = records
                .iter()
                .find(|r| r.name == key)
                .ok_or_else(|| Error::Checkpoint(format!("missing optimizer record {key:?}")))?;
            let Payload::Tensor(t) = &rec.payload else {
                return Err(Error::Checkpoint(format!("{key:?} is not a tensor")));
            };
            if t.numel() != moments.len() {
                return Err(Error::Checkpoint(format!(
                    "{key:?} has {} values, expected {}",
                    t.numel(),
                    moments.len()
                )));
            }
            moments.copy_from_slice(t.data());
        }
    }
    Ok(())
}

fn names<T: Scalar>(p: &crate::arch::ModelParams<T>) -> Vec<String> {
    p.names().map(str::to_string).collect()
}

pub fn state_to_records<T: Scalar>(s: &TrainState<T>) -> Vec<Record<T>> {
    let m = &s.models;
    let mut out = generator_records(&m.gen);
    out.push(Record::bytes(
        DISCRIMINATOR_CONFIG_RECORD,
        toml::to_string(&m.disc.cfg).expect("config serializes"),
    ));
    out.push(Record::bytes(TRAIN_CONFIG_RECORD, s.cfg.to_toml()));
    let progress = Progress {
        epoch: s.epoch,
        batch: s.batch,
        step: s.step,
        g_adam_step: m.g_opt.step,
        d_adam_step: m.d_opt.step,
    };
    out.push(Record::bytes(PROGRESS_RECORD, toml::to_string(&progress).expect("progress serializes")));
    out.extend(params_to_records(DISCRIMINATOR_PREFIX, &m.disc.params));
    moments_to_records("opt_g", names(&m.gen.params), &m.g_opt, &mut out);
    moments_to_records("opt_d", names(&m.disc.params), &m.d_opt, &mut out);
    out
}

pub fn state_from_records<T: Scalar>(records: &[Record<T>]) -> Result<TrainState<T>> {
    let cfg: TrainConfig =
        toml::from_str(&utf8(records, TRAIN_CONFIG_RECORD)?).map_err(|e| Error::Checkpoint(format!("train config: {e}")))?;
    let progress: Progress =
        toml::from_str(&utf8(records, PROGRESS_RECORD)?).map_err(|e| Error::Checkpoint(format!("progress: {e}")))?;
    let gen = crate::arch::generator_from_records(records)?;
    let d_cfg = toml::from_str(&utf8(records, DISCRIMINATOR_CONFIG_RECORD)?)
        .map_err(|e| Error::Checkpoint(format!("discriminator config: {e}")))?;
    let mut disc = Discriminator::new(d_cfg)?;
    params_from_records(DISCRIMINATOR_PREFIX, records, &mut disc.params)?;
    let mut g_opt = OptimizerState::new(&gen.params, cfg.adam);
    let mut d_opt = OptimizerState::new(&disc.params, cfg.adam);
    moments_from_records("opt_g", names(&gen.params), records, &mut g_opt)?;
    moments_from_records("opt_d", names(&disc.params), records, &mut d_opt)?;
    g_opt.step = progress.g_adam_step;
    d_opt.step = progress.d_adam_step;
    Ok(TrainState {
        models: GanModels {
            gen,
            disc,
            g_opt,
            d_opt,
            extractor: ContentExtractor::fixed_random(cfg.extractor_seed),
        },
        cfg,
        epoch: progress.epoch,
        batch: progress.batch,
        step: progress.step,
    })
}

pub fn save_checkpoint<T: Scalar>(path: &Path, s: &TrainState<T>) -> Result<()> {
    write_file(path, &state_to_records(s))
}

pub fn load_checkpoint<T: Scalar>(path: &Path) -> Result<TrainState<T>> {
    state_from_records(&read_file(path)?)
}

/// Generator only, from either a training checkpoint or an exported model.
pub fn load_generator<T: Scalar>(path: &Path) -> Result<Generator<T>> {
    crate::arch::generator_from_records(&read_file(path)?)
}

/// Writes the generator weights and config alone.
pub fn export_generator<T: Scalar>(path: &Path, gen: &Generator<T>) -> Result<()> {
    write_file(path, &generator_records(gen))
}
