use std::fs;

use filmrestore::arch::{DiscStage, DiscriminatorConfig, EntryKind, GeneratorConfig, ModelParams};
use filmrestore::data::{Batcher, BatcherConfig, ImagePair, PatchBatch};
use filmrestore::degrade::{composite, sample_specs, synthetic_scene, Severity};
use filmrestore::infer::{restore_tiled, TileConfig};
use filmrestore::loss::LossWeights;
use filmrestore::train::{
    gan_step, load_checkpoint, load_generator, parse_log, save_checkpoint, train, StepOptions, TrainConfig,
    TrainState, LOG_FILE,
};
use filmrestore::Error;

fn pairs(n: u64, size: usize) -> Vec<ImagePair<f32>> {
    (0..n)
        .map(|s| {
            let clean = synthetic_scene::<f32>(s, size, size);
            composite(&clean, &sample_specs(s, size, size, Severity::Medium), format!("p{s}")).unwrap()
        })
        .collect()
}

fn tiny_config() -> TrainConfig {
    TrainConfig {
        epochs: 3,
        batch_size: 2,
        patch: 32,
        patches_per_pair: 2,
        checkpoint_every: 1,
        generator: GeneratorConfig {
            base_channels: 8,
            n_res_blocks: 2,
            dilations: vec![1, 2],
            ..GeneratorConfig::default()
        },
        discriminator: Some(DiscriminatorConfig {
            stages: vec![DiscStage { channels: 8, stride: 2 }, DiscStage { channels: 16, stride: 1 }],
            ..DiscriminatorConfig::default()
        }),
        ..TrainConfig::default()
    }
}

fn first_batch(cfg: &TrainConfig, pairs: &[ImagePair<f32>]) -> PatchBatch<f32> {
    Batcher::new(
        pairs,
        BatcherConfig {
            batch_size: cfg.batch_size,
            patch_size: cfg.patch,
            patches_per_pair: cfg.patches_per_pair,
            median_k: cfg.median_k,
            augment: cfg.augment,
            seed: cfg.seeds.data,
        },
    )
    .unwrap()
    .epoch(0)
    .unwrap()
    .remove(0)
}

fn trainable(p: &ModelParams<f32>) -> Vec<(String, Vec<f32>)> {
    p.entries()
        .iter()
        .filter(|e| e.kind == EntryKind::Param)
        .map(|e| (e.name.clone(), e.tensor.data().to_vec()))
        .collect()
}

#[test]
fn each_update_touches_only_its_own_network() {
    let cfg = tiny_config();
    let data = pairs(2, 40);
    let batch = first_batch(&cfg, &data);
    let start = TrainState::<f32>::new(cfg.clone()).unwrap();

    let mut d_only = start.models.clone();
    let opts = StepOptions { update_generator: false, update_discriminator: true };
    gan_step(&batch, &mut d_only, &cfg.weights, cfg.base_lr, opts).unwrap();
    assert_eq!(trainable(&d_only.gen.params), trainable(&start.models.gen.params));
    assert_ne!(trainable(&d_only.disc.params), trainable(&start.models.disc.params));

    let mut g_only = start.models.clone();
    let opts = StepOptions { update_generator: true, update_discriminator: false };
    gan_step(&batch, &mut g_only, &cfg.weights, cfg.base_lr, opts).unwrap();
    assert_ne!(trainable(&g_only.gen.params), trainable(&start.models.gen.params));
    assert_eq!(trainable(&g_only.disc.params), trainable(&start.models.disc.params));
    assert_eq!(g_only.d_opt.step, 0);
}

#[test]
fn zero_adversarial_weight_decouples_generator_from_discriminator() {
    let mut cfg = tiny_config();
    cfg.weights = LossWeights { adversarial: 0.0, ..LossWeights::default() };
    let data = pairs(2, 40);
    let batch = first_batch(&cfg, &data);
    let a = TrainState::<f32>::new(cfg.clone()).unwrap();
    cfg.seeds.init = 99;
    let b = TrainState::<f32>::new(cfg.clone()).unwrap();
    // same generator, different discriminator
    let mut ma = a.models.clone();
    let mut mb = a.models.clone();
    mb.disc = b.models.disc.clone();
    mb.d_opt = b.models.d_opt.clone();
    let opts = StepOptions { update_generator: true, update_discriminator: false };
    gan_step(&batch, &mut ma, &cfg.weights, cfg.base_lr, opts).unwrap();
    gan_step(&batch, &mut mb, &cfg.weights, cfg.base_lr, opts).unwrap();
    assert_eq!(ma.gen, mb.gen);
}

#[test]
fn checkpoint_round_trip_continues_bit_exactly() {
    let cfg = tiny_config();
    let data = pairs(2, 40);
    let batch = first_batch(&cfg, &data);
    let mut state = TrainState::<f32>::new(cfg.clone()).unwrap();
    gan_step(&batch, &mut state.models, &cfg.weights, cfg.base_lr, StepOptions::default()).unwrap();
    state.step = 1;
    state.batch = 1;
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s.frck");
    save_checkpoint(&path, &state).unwrap();
    let mut loaded = load_checkpoint::<f32>(&path).unwrap();
    assert_eq!(loaded, state);
    let la = gan_step(&batch, &mut state.models, &cfg.weights, 1e-4, StepOptions::default()).unwrap();
    let lb = gan_step(&batch, &mut loaded.models, &cfg.weights, 1e-4, StepOptions::default()).unwrap();
    assert_eq!(la, lb);
    assert_eq!(state.models, loaded.models);
}

#[test]
fn damaged_checkpoints_are_rejected() {
    let state = TrainState::<f32>::new(tiny_config()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s.frck");
    save_checkpoint(&path, &state).unwrap();
    let bytes = fs::read(&path).unwrap();

    let mut bad = bytes.clone();
    bad[0] = b'X';
    fs::write(&path, &bad).unwrap();
    assert!(matches!(load_checkpoint::<f32>(&path), Err(Error::Checkpoint(_))));

    fs::write(&path, &bytes[..bytes.len() / 2]).unwrap();
    assert!(matches!(load_checkpoint::<f32>(&path), Err(Error::Checkpoint(_))));
}

#[test]
fn generator_trained_on_small_patches_restores_larger_images() {
    let cfg = tiny_config();
    let state = TrainState::<f32>::new(cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s.frck");
    save_checkpoint(&path, &state).unwrap();
    let mut gen = load_generator::<f32>(&path).unwrap();
    let img = pairs(1, 128).remove(0).corrupted;
    let out = restore_tiled(&img, &mut gen, &TileConfig { tile: 128, overlap: 16, median_k: 5 }).unwrap();
    assert_eq!(out.shape(), img.shape());
}

#[test]
fn runs_are_deterministic_and_resume_matches_uninterrupted() {
    let cfg = tiny_config();
    let data = pairs(3, 40);
    let root = tempfile::tempdir().unwrap();

    let full_dir = root.path().join("full");
    let mut full = TrainState::<f32>::new(cfg.clone()).unwrap();
    let full_rows = train(&data, &mut full, Some(&full_dir), |_| {}).unwrap();
    assert_eq!(full_rows.len(), 9);

    let again_dir = root.path().join("again");
    let mut again = TrainState::<f32>::new(cfg.clone()).unwrap();
    train(&data, &mut again, Some(&again_dir), |_| {}).unwrap();
    assert_eq!(
        fs::read(full_dir.join("last.frck")).unwrap(),
        fs::read(again_dir.join("last.frck")).unwrap()
    );

    // interrupt mid-epoch, then resume from the saved state
    let part_dir = root.path().join("part");
    let mut part = TrainState::<f32>::new(TrainConfig { max_steps: Some(4), ..cfg.clone() }).unwrap();
    train(&data, &mut part, Some(&part_dir), |_| {}).unwrap();
    assert_eq!((part.epoch, part.batch, part.step), (1, 1, 4));
    let mut resumed = load_checkpoint::<f32>(&part_dir.join("last.frck")).unwrap();
    resumed.cfg.max_steps = None;
    train(&data, &mut resumed, Some(&part_dir), |_| {}).unwrap();
    assert_eq!(resumed.models, full.models);
    let log_full = parse_log(&fs::read_to_string(full_dir.join(LOG_FILE)).unwrap()).unwrap();
    let log_part = parse_log(&fs::read_to_string(part_dir.join(LOG_FILE)).unwrap()).unwrap();
    assert_eq!(log_full, log_part);
    assert!(full_dir.join("epoch-0001.frck").exists() && full_dir.join("epoch-0003.frck").exists());
}

#[test]
fn discriminator_loss_stays_in_band_after_warmup() {
    let cfg = TrainConfig { epochs: 40, augment: false, ..tiny_config() };
    let data = pairs(4, 32);
    let mut state = TrainState::<f32>::new(cfg).unwrap();
    let rows = train(&data, &mut state, None, |_| {}).unwrap();
    let ceiling = 2.0 * std::f64::consts::LN_2 + 1.0;
    for r in rows.iter().skip(20) {
        assert!(r.adv_d > 0.0 && r.adv_d < ceiling, "step {}: d_loss {}", r.step, r.adv_d);
    }
}
