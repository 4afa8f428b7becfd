//! On-disk dataset layout:
//!
//! ```text
//! <root>/clean/<id>.png
//! <root>/corrupted/<id>.png
//! <root>/masks/<id>.png      8-bit grayscale coverage
//! <root>/specs/<id>.txt      defect list
//! <root>/manifest.tsv        id, source, seed, severity
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use image::{GrayImage, ImageBuffer, Luma, Rgb, RgbImage};

use crate::data::ImagePair;
use crate::degrade::{format_specs, ArtifactMask, DegradationSpec};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensorops::{Shape, Tensor};

pub const MANIFEST: &str = "manifest.tsv";
const MANIFEST_HEADER: &str = "id\tsource\tseed\tseverity";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestRow {
    pub id: String,
    pub source: String,
    pub seed: u64,
    pub severity: String,
}

fn image_err(path: &Path, source: image::ImageError) -> Error {
    Error::Image {
        path: path.to_path_buf(),
        source,
    }
}

fn to_u8<T: Scalar>(v: T) -> u8 {
    (v.as_f64().clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Reads any 8-bit-convertible image as `(1, 3, h, w)` in `[0, 1]`.
pub fn load_png<T: Scalar>(path: &Path) -> Result<Tensor<T>> {
    let img = image::open(path).map_err(|e| image_err(path, e))?.to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    Ok(Tensor::from_fn(Shape::new(1, 3, h, w), |_, c, y, x| {
        T::lit(img.get_pixel(x as u32, y as u32)[c] as f64 / 255.0)
    }))
}

fn load_mask<T: Scalar>(path: &Path) -> Result<ArtifactMask<T>> {
    let img = image::open(path).map_err(|e| image_err(path, e))?.to_luma8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    Ok(ArtifactMask {
        alpha: Tensor::from_fn(Shape::new(1, 1, h, w), |_, _, y, x| {
            T::lit(img.get_pixel(x as u32, y as u32)[0] as f64 / 255.0)
        }),
    })
}

/// Writes a `(1, 3, h, w)` tensor as an 8-bit RGB PNG.
pub fn save_png<T: Scalar>(path: &Path, t: &Tensor<T>) -> Result<()> {
    let s = t.shape();
    if s.n != 1 || s.c != 3 {
        return Err(Error::shape(format!("save_png expects 1x3xHxW, got {s}")));
    }
    let img: RgbImage = ImageBuffer::from_fn(s.w as u32, s.h as u32, |x, y| {
        Rgb(std::array::from_fn(|c| to_u8(t.at(0, c, y as usize, x as usize))))
    });
    img.save(path).map_err(|e| image_err(path, e))
}

/// Any nonzero coverage is stored as at least 1, so the support survives
/// quantization.
pub fn save_mask_png<T: Scalar>(path: &Path, mask: &ArtifactMask<T>) -> Result<()> {
    let img: GrayImage = ImageBuffer::from_fn(mask.width() as u32, mask.height() as u32, |x, y| {
        let a = mask.at(y as usize, x as usize);
        let q = to_u8(a);
        Luma([if a > T::zero() { q.max(1) } else { 0 }])
    });
    img.save(path).map_err(|e| image_err(path, e))
}

fn subdirs(root: &Path) -> [PathBuf; 4] {
    ["clean", "corrupted", "masks", "specs"].map(|d| root.join(d))
}

/// Writes one pair and its defect list under `root`.
pub fn write_pair<T: Scalar>(root: &Path, pair: &ImagePair<T>, specs: &[DegradationSpec]) -> Result<()> {
    let [clean, corrupted, masks, spec_dir] = subdirs(root);
    for d in [&clean, &corrupted, &masks, &spec_dir] {
        fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
    }
    let file = format!("{}.png", pair.id);
    save_png(&clean.join(&file), &pair.clean)?;
    save_png(&corrupted.join(&file), &pair.corrupted)?;
    save_mask_png(&masks.join(&file), &pair.mask)?;
    let sp = spec_dir.join(format!("{}.txt", pair.id));
    fs::write(&sp, format_specs(specs)).map_err(|e| Error::io(sp, e))
}

pub fn write_manifest(root: &Path, rows: &[ManifestRow]) -> Result<()> {
    let mut text = String::from(MANIFEST_HEADER);
    text.push('\n');
    for r in rows {
        text.push_str(&format!("{}\t{}\t{}\t{}\n", r.id, r.source, r.seed, r.severity));
    }
    let path = root.join(MANIFEST);
    fs::write(&path, text).map_err(|e| Error::io(path, e))
}

/// Writes every pair plus the manifest.
pub fn write_dataset<T: Scalar>(
    root: &Path,
    items: &[(ImagePair<T>, Vec<DegradationSpec>)],
    rows: &[ManifestRow],
) -> Result<()> {
    for (pair, specs) in items {
        write_pair(root, pair, specs)?;
    }
    write_manifest(root, rows)
}

pub fn read_manifest(root: &Path) -> Result<Vec<ManifestRow>> {
    let path = root.join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 4 {
            return Err(Error::Dataset(format!("{}:{}: expected 4 columns", path.display(), i + 1)));
        }
        let seed = f[2]
            .parse()
            .map_err(|_| Error::Dataset(format!("{}:{}: bad seed {:?}", path.display(), i + 1, f[2])))?;
        rows.push(ManifestRow {
            id: f[0].into(),
            source: f[1].into(),
            seed,
            severity: f[3].into(),
        });
    }
    Ok(rows)
}

/// PNG files directly inside `dir`, sorted by name.
pub fn list_pngs(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let is_png = path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| e.eq_ignore_ascii_case("png"));
        if is_png && path.is_file() {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

/// Every PNG in `dir` keyed by file stem.
pub fn load_dir<T: Scalar>(dir: &Path) -> Result<Vec<(String, Tensor<T>)>> {
    list_pngs(dir)?
        .into_iter()
        .map(|p| {
            let id = p.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
            Ok((id, load_png(&p)?))
        })
        .collect()
}

/// Loads every pair listed in the manifest.
pub fn read_dataset<T: Scalar>(root: &Path) -> Result<Vec<ImagePair<T>>> {
    let [clean, corrupted, masks, _] = subdirs(root);
    let rows = read_manifest(root)?;
    if rows.is_empty() {
        return Err(Error::Dataset(format!("{}: manifest lists no pairs", root.display())));
    }
    rows.iter()
        .map(|r| {
            let file = format!("{}.png", r.id);
            ImagePair::new(
                load_png(&clean.join(&file))?,
                load_png(&corrupted.join(&file))?,
                load_mask(&masks.join(&file))?,
                r.id.clone(),
            )
        })
        .collect()
}
