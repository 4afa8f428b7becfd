use std::fs;
use std::io::Write as _;
use std::path::Path;

use crate::arch::checkpoint::{write_file, Record};
use crate::data::{Batcher, BatcherConfig, ImagePair, PatchBatch};
use crate::error::{Error, Result};
use crate::loss::LossComponents;
use crate::scalar::Scalar;
use crate::train::checkpoint::{save_checkpoint, state_to_records};
use crate::train::{gan_step, lr_at, StepLosses, StepOptions, TrainState};

pub const LOG_FILE: &str = "train_log.tsv";
pub const LOG_HEADER: &str = "step\tepoch\tlr\tpixel\tgradient\tperceptual\tadv_g\tadv_d\ttotal";

/// One line of the training log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogRow {
    pub step: u64,
    pub epoch: u64,
    pub lr: f64,
    pub components: LossComponents<f64>,
    pub adv_d: f64,
    pub total: f64,
}

impl LogRow {
    fn new<T: Scalar>(step: u64, epoch: u64, lr: f64, l: &StepLosses<T>) -> Self {
        let c = &l.components;
        LogRow {
            step,
            epoch,
            lr,
            components: LossComponents {
                pixel: c.pixel.as_f64(),
                gradient: c.gradient.as_f64(),
                perceptual: c.perceptual.as_f64(),
                adversarial: c.adversarial.as_f64(),
            },
            adv_d: l.d_loss.as_f64(),
            total: l.total.as_f64(),
        }
    }

    /// Shortest round-trip formatting, so parsing a line gives the logged
    /// values back exactly.
    pub fn to_line(&self) -> String {
        let c = &self.components;
        format!(
            "{}\t{}\t{:?}\t{:?}\t{:?}\t{:?}\t{:?}\t{:?}\t{:?}",
            self.step, self.epoch, self.lr, c.pixel, c.gradient, c.perceptual, c.adversarial, self.adv_d, self.total
        )
    }

    pub fn parse(line: &str) -> Result<Self> {
        let f: Vec<&str> = line.split('\t').collect();
        let bad = || Error::invalid(format!("malformed log line {line:?}"));
        if f.len() != 9 {
            return Err(bad());
        }
        let x = |i: usize| f[i].parse::<f64>().map_err(|_| bad());
        Ok(LogRow {
            step: f[0].parse().map_err(|_| bad())?,
            epoch: f[1].parse().map_err(|_| bad())?,
            lr: x(2)?,
            components: LossComponents {
                pixel: x(3)?,
                gradient: x(4)?,
                perceptual: x(5)?,
                adversarial: x(6)?,
            },
            adv_d: x(7)?,
            total: x(8)?,
        })
    }
}

pub fn parse_log(text: &str) -> Result<Vec<LogRow>> {
    let mut lines = text.lines();
    if lines.next() != Some(LOG_HEADER) {
        return Err(Error::invalid("training log lacks the expected header"));
    }
    lines.filter(|l| !l.is_empty()).map(LogRow::parse).collect()
}

/// Keep the log consistent with a resumed state: drop rows past `step`.
fn prepare_log(path: &Path, step: u64) -> Result<fs::File> {
    let mut text = format!("{LOG_HEADER}\n");
    if step > 0 {
        if let Ok(existing) = fs::read_to_string(path) {
            for row in parse_log(&existing)?.into_iter().filter(|r| r.step <= step) {
                text.push_str(&row.to_line());
                text.push('\n');
            }
        }
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))?;
    fs::OpenOptions::new()
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))
}

fn snapshot<T: Scalar>(dir: &Path, state: &TrainState<T>, batch: &PatchBatch<T>) -> Result<()> {
    let mut records = state_to_records(state);
    records.push(Record::tensor("batch/corrupted", batch.corrupted.clone()));
    records.push(Record::tensor("batch/clean", batch.clean.clone()));
    records.push(Record::tensor("batch/medians", batch.medians.clone()));
    write_file(&dir.join(format!("nonfinite-step{}.frck", state.step + 1)), &records)
}

/// Run (or continue) training until the configured epochs or `max_steps`
/// are exhausted.
///
/// With an output directory, the log goes to `train_log.tsv`, checkpoints
/// to `epoch-NNNN.frck` every `checkpoint_every` epochs, and the final state
/// to `last.frck`. A step that produces a non-finite value aborts the run
/// after writing the offending batch and the pre-step state to
/// `nonfinite-stepN.frck`.
pub fn train<T: Scalar>(
    pairs: &[ImagePair<T>],
    state: &mut TrainState<T>,
    out_dir: Option<&Path>,
    mut on_step: impl FnMut(&LogRow),
) -> Result<Vec<LogRow>> {
    let cfg = state.cfg.clone();
    cfg.validate()?;
    let batcher = Batcher::new(
        pairs,
        BatcherConfig {
            batch_size: cfg.batch_size,
            patch_size: cfg.patch,
            patches_per_pair: cfg.patches_per_pair,
            median_k: cfg.median_k,
            augment: cfg.augment,
            seed: cfg.seeds.data,
        },
    )?;
    let per_epoch = batcher.batches_per_epoch() as u64;
    if per_epoch == 0 {
        return Err(Error::Dataset(format!(
            "{} pairs x {} patches do not fill one batch of {}",
            pairs.len(),
            cfg.patches_per_pair,
            cfg.batch_size
        )));
    }
    let mut log = match out_dir {
        Some(dir) => {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            Some(prepare_log(&dir.join(LOG_FILE), state.step)?)
        }
        None => None,
    };
    let mut rows = Vec::new();
    while !state.finished() {
        let lr = lr_at(state.epoch as usize, &cfg)?;
        let batches = batcher.epoch(state.epoch)?;
        while state.batch < per_epoch && !state.finished() {
            let batch = &batches[state.batch as usize];
            let losses = match gan_step(batch, &mut state.models, &cfg.weights, lr, StepOptions::default()) {
                Ok(l) => l,
                Err(e @ Error::NonFinite(_)) => {
                    if let Some(dir) = out_dir {
                        snapshot(dir, state, batch)?;
                    }
                    return Err(e);
                }
                Err(e) => return Err(e),
            };
            state.step += 1;
            state.batch += 1;
            let row = LogRow::new(state.step, state.epoch, lr, &losses);
            if let (Some(f), Some(dir)) = (log.as_mut(), out_dir) {
                writeln!(f, "{}", row.to_line()).map_err(|e| Error::io(dir.join(LOG_FILE), e))?;
            }
            on_step(&row);
            rows.push(row);
        }
        if state.batch == per_epoch {
            state.epoch += 1;
            state.batch = 0;
            if let Some(dir) = out_dir {
                if state.epoch as usize % cfg.checkpoint_every == 0 {
                    save_checkpoint(&dir.join(format!("epoch-{:04}.frck", state.epoch)), state)?;
                }
            }
        }
    }
    if let Some(dir) = out_dir {
        save_checkpoint(&dir.join("last.frck"), state)?;
    }
    Ok(rows)
}
