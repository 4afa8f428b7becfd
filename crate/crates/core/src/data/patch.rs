use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{augment, ImagePair};
use crate::degrade::{median_filter, ArtifactMask};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensorops::{Shape, Tensor};

/// Mixes seed words into one well-spread 64-bit seed.
pub fn derive_seed(parts: &[u64]) -> u64 {
    let mut h = 0x9E37_79B9_7F4A_7C15u64;
    for &p in parts {
        h ^= p.wrapping_add(0x9E37_79B9_7F4A_7C15).wrapping_add(h << 6).wrapping_add(h >> 2);
        // splitmix64 finalizer
        h = (h ^ (h >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        h = (h ^ (h >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        h ^= h >> 31;
    }
    h
}

fn crop<T: Scalar>(t: &Tensor<T>, top: usize, left: usize, p: usize) -> Tensor<T> {
    let s = t.shape();
    Tensor::from_fn(Shape::new(s.n, s.c, p, p), |b, c, y, x| t.at(b, c, top + y, left + x))
}

/// Draws `n` square patches of side `p`.
///
/// When the mask is non-empty every even-indexed patch (so at least half,
/// rounded up) is placed to contain a covered pixel chosen uniformly from
/// the mask support; the rest are uniform over the image.
pub fn extract_patches<T: Scalar>(pair: &ImagePair<T>, p: usize, n: usize, seed: u64) -> Result<Vec<ImagePair<T>>> {
    let (h, w) = (pair.height(), pair.width());
    if p == 0 || p > h || p > w {
        return Err(Error::invalid(format!("patch size {p} does not fit a {h}x{w} image")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let covered: Vec<usize> = pair
        .mask
        .alpha
        .data()
        .iter()
        .enumerate()
        .filter(|(_, &a)| a > T::zero())
        .map(|(i, _)| i)
        .collect();
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let (top, left) = if i % 2 == 0 && !covered.is_empty() {
            let at = covered[rng.gen_range(0..covered.len())];
            let (my, mx) = (at / w, at % w);
            let top = rng.gen_range(my.saturating_sub(p - 1)..=my.min(h - p));
            let left = rng.gen_range(mx.saturating_sub(p - 1)..=mx.min(w - p));
            (top, left)
        } else {
            (rng.gen_range(0..=h - p), rng.gen_range(0..=w - p))
        };
        out.push(ImagePair {
            clean: crop(&pair.clean, top, left, p),
            corrupted: crop(&pair.corrupted, top, left, p),
            mask: ArtifactMask {
                alpha: crop(&pair.mask.alpha, top, left, p),
            },
            id: format!("{}@{top},{left}", pair.id),
        });
    }
    Ok(out)
}

/// Stacked training batch, each tensor `(b, 3, p, p)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchBatch<T> {
    pub corrupted: Tensor<T>,
    pub clean: Tensor<T>,
    /// Median-filtered corrupted patches, the baseline the generator corrects.
    pub medians: Tensor<T>,
}

impl<T: Scalar> PatchBatch<T> {
    pub fn len(&self) -> usize {
        self.clean.shape().n
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatcherConfig {
    pub batch_size: usize,
    pub patch_size: usize,
    pub patches_per_pair: usize,
    pub median_k: usize,
    pub augment: bool,
    pub seed: u64,
}

/// Turns a pair list into per-epoch batches. The same epoch index always
/// yields the same batches; different epochs reshuffle and redraw.
#[derive(Debug, Clone)]
pub struct Batcher<'a, T> {
    pairs: &'a [ImagePair<T>],
    cfg: BatcherConfig,
}

impl<'a, T: Scalar> Batcher<'a, T> {
    pub fn new(pairs: &'a [ImagePair<T>], cfg: BatcherConfig) -> Result<Self> {
        if cfg.batch_size < 2 {
            return Err(Error::invalid(format!(
                "batch size must be at least 2 for batch statistics, got {}",
                cfg.batch_size
            )));
        }
        if cfg.patches_per_pair == 0 {
            return Err(Error::invalid("patches_per_pair must be positive"));
        }
        if pairs.is_empty() {
            return Err(Error::Dataset("no training pairs".into()));
        }
        Ok(Batcher { pairs, cfg })
    }

    /// Full batches available per epoch; a trailing partial batch is dropped.
    pub fn batches_per_epoch(&self) -> usize {
        self.pairs.len() * self.cfg.patches_per_pair / self.cfg.batch_size
    }

    pub fn epoch(&self, epoch: u64) -> Result<Vec<PatchBatch<T>>> {
        let c = &self.cfg;
        let mut patches = Vec::with_capacity(self.pairs.len() * c.patches_per_pair);
        for (i, pair) in self.pairs.iter().enumerate() {
            let seed = derive_seed(&[c.seed, epoch, i as u64]);
            for (j, patch) in extract_patches(pair, c.patch_size, c.patches_per_pair, seed)?
                .into_iter()
                .enumerate()
            {
                let patch = if c.augment {
                    augment(&patch, derive_seed(&[c.seed, epoch, i as u64, j as u64 + 1]))?
                } else {
                    patch
                };
                patches.push(patch);
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[c.seed, epoch, u64::MAX]));
        patches.shuffle(&mut rng);
        patches
            .chunks_exact(c.batch_size)
            .map(|chunk| {
                let corrupted: Vec<_> = chunk.iter().map(|p| p.corrupted.clone()).collect();
                let clean: Vec<_> = chunk.iter().map(|p| p.clean.clone()).collect();
                let medians = chunk
                    .iter()
                    .map(|p| median_filter(&p.corrupted, c.median_k))
                    .collect::<Result<Vec<_>>>()?;
                Ok(PatchBatch {
                    corrupted: Tensor::stack(&corrupted)?,
                    clean: Tensor::stack(&clean)?,
                    medians: Tensor::stack(&medians)?,
                })
            })
            .collect()
    }
}
