use std::fs;
use std::path::{Path, PathBuf};

use filmrestore::data::{
    derive_seed, list_pngs, load_dir, load_png, read_dataset, save_png, write_dataset, ManifestRow,
};
use filmrestore::degrade::{composite, sample_specs, synthetic_scene};
use filmrestore::infer::{restore_tiled, TileConfig};
use filmrestore::metrics::{evaluate, MetricConfig};
use filmrestore::train::{load_checkpoint, load_generator, train as run_training, TrainConfig, TrainState};

use crate::{EvalArgs, InferArgs, ScenesArgs, SynthArgs, TrainArgs};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Run(#[from] filmrestore::Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) | CliError::Run(filmrestore::Error::Config(_)) => 2,
            CliError::Run(_) => 1,
        }
    }
}

type CliResult = std::result::Result<(), CliError>;

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    filmrestore::Error::io(path, e).into()
}

fn require_dir(path: &Path, what: &str) -> CliResult {
    if path.is_dir() {
        Ok(())
    } else {
        Err(CliError::Usage(format!("{what} {} is not a directory", path.display())))
    }
}

pub fn scenes(a: &ScenesArgs) -> CliResult {
    if a.count == 0 || a.height == 0 || a.width == 0 {
        return Err(CliError::Usage("count, height and width must be positive".into()));
    }
    fs::create_dir_all(&a.out_dir).map_err(|e| io_err(&a.out_dir, e))?;
    for i in 0..a.count {
        let img = synthetic_scene::<f32>(derive_seed(&[a.seed, i as u64]), a.height, a.width);
        save_png(&a.out_dir.join(format!("scene-{i:04}.png")), &img)?;
    }
    println!("wrote {} scenes to {}", a.count, a.out_dir.display());
    Ok(())
}

pub fn synth(a: &SynthArgs) -> CliResult {
    require_dir(&a.clean_dir, "--clean-dir")?;
    if a.count == 0 {
        return Err(CliError::Usage("--count must be positive".into()));
    }
    let sources = list_pngs(&a.clean_dir)?;
    if sources.is_empty() {
        return Err(CliError::Usage(format!("no input images in {}", a.clean_dir.display())));
    }
    let severity = format!("{:?}", a.severity).to_lowercase();
    let mut items = Vec::new();
    let mut rows = Vec::new();
    for (i, path) in sources.iter().enumerate() {
        let clean = load_png::<f32>(path)?;
        let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        let s = clean.shape();
        for j in 0..a.count {
            let seed = derive_seed(&[a.seed, i as u64, j as u64]);
            let id = if a.count == 1 { stem.clone() } else { format!("{stem}-{j}") };
            let specs = sample_specs(seed, s.h, s.w, a.severity);
            items.push((composite(&clean, &specs, id.clone())?, specs));
            rows.push(ManifestRow {
                id,
                source: path.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default(),
                seed,
                severity: severity.clone(),
            });
        }
    }
    write_dataset(&a.out_dir, &items, &rows)?;
    println!("wrote {} pairs to {}", items.len(), a.out_dir.display());
    Ok(())
}

pub fn train(a: &TrainArgs) -> CliResult {
    require_dir(&a.data, "--data")?;
    let mut state = match &a.resume {
        Some(ckpt) => load_checkpoint::<f32>(ckpt)?,
        None => {
            let cfg = match &a.config {
                Some(p) => TrainConfig::from_toml(&fs::read_to_string(p).map_err(|e| io_err(p, e))?)?,
                None => TrainConfig::default(),
            };
            TrainState::new(cfg)?
        }
    };
    let pairs = read_dataset::<f32>(&a.data)?;
    if pairs.is_empty() {
        return Err(CliError::Usage(format!("no pairs in {}", a.data.display())));
    }
    let every = a.report_every;
    let rows = run_training(&pairs, &mut state, Some(&a.out), |r| {
        if every > 0 && r.step % every == 0 {
            eprintln!(
                "step {:>6} epoch {:>4} lr {:.3e} pixel {:.4e} total {:.4e} d {:.4}",
                r.step, r.epoch, r.lr, r.components.pixel, r.total, r.adv_d
            );
        }
    })?;
    println!(
        "trained {} steps (total {}); checkpoint {}",
        rows.len(),
        state.step,
        a.out.join("last.frck").display()
    );
    Ok(())
}

pub fn infer(a: &InferArgs) -> CliResult {
    let mut gen = load_generator::<f32>(&a.checkpoint)?;
    let cfg = TileConfig {
        tile: a.tile,
        overlap: a.overlap,
        median_k: a.median_k,
    };
    let jobs: Vec<(PathBuf, PathBuf)> = if a.input.is_dir() {
        fs::create_dir_all(&a.out).map_err(|e| io_err(&a.out, e))?;
        let inputs = list_pngs(&a.input)?;
        if inputs.is_empty() {
            return Err(CliError::Usage(format!("no input images in {}", a.input.display())));
        }
        inputs
            .into_iter()
            .map(|p| {
                let out = a.out.join(p.file_name().expect("listed file has a name"));
                (p, out)
            })
            .collect()
    } else if a.input.is_file() {
        vec![(a.input.clone(), a.out.clone())]
    } else {
        return Err(CliError::Usage(format!("--in {} does not exist", a.input.display())));
    };
    for (src, dst) in &jobs {
        let img = load_png::<f32>(src)?;
        let restored = restore_tiled(&img, &mut gen, &cfg)?;
        save_png(dst, &restored)?;
    }
    println!("restored {} image(s)", jobs.len());
    Ok(())
}

pub fn eval(a: &EvalArgs) -> CliResult {
    require_dir(&a.restored, "--restored")?;
    require_dir(&a.reference, "--reference")?;
    let restored = load_dir::<f64>(&a.restored)?;
    let reference = load_dir::<f64>(&a.reference)?;
    if restored.is_empty() {
        return Err(CliError::Usage(format!("no input images in {}", a.restored.display())));
    }
    let report = evaluate(&restored, &reference, &MetricConfig::default())?;
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    fs::write(&a.out, report.to_tsv()).map_err(|e| io_err(&a.out, e))?;
    print!("{}", report.to_table());
    Ok(())
}
