//! Whole-image restoration in overlapping tiles.
//!
//! The median baseline is computed once on the full image; only the
//! generator runs per tile. Tile residuals are merged with weights that ramp
//! linearly across each overlap band, so neighbouring tiles cross-fade.

use crate::arch::{compose, predict_residual, residual_input, Generator};
use crate::degrade::median_filter;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensorops::{Shape, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TileConfig {
    /// Tile side; rounded down to even.
    pub tile: usize,
    pub overlap: usize,
    pub median_k: usize,
}

impl Default for TileConfig {
    fn default() -> Self {
        TileConfig {
            tile: 256,
            overlap: 16,
            median_k: crate::degrade::DEFAULT_MEDIAN_K,
        }
    }
}

/// Tile origins along one axis of length `n` (`n` and `tile` even).
fn origins(n: usize, tile: usize, overlap: usize) -> Vec<usize> {
    if n <= tile {
        return vec![0];
    }
    let stride = tile - overlap;
    let mut out: Vec<usize> = (0..).map(|i| i * stride).take_while(|&o| o + tile < n).collect();
    out.push(n - tile);
    out
}

/// Blend weight of position `i` in a tile starting at `o` along an axis of
/// length `n`. Ramps up over the first `overlap` pixels unless the tile
/// touches the image start, and likewise at the end.
fn ramp(i: usize, o: usize, tile: usize, n: usize, overlap: usize) -> f64 {
    let band = (overlap + 1) as f64;
    let mut w: f64 = 1.0;
    if o > 0 {
        w = w.min((i + 1) as f64 / band);
    }
    if o + tile < n {
        w = w.min((tile - i) as f64 / band);
    }
    w
}

fn pad_even<T: Scalar>(t: &Tensor<T>) -> Tensor<T> {
    let s = t.shape();
    let (h, w) = (s.h + s.h % 2, s.w + s.w % 2);
    Tensor::from_fn(Shape::new(s.n, s.c, h, w), |b, c, y, x| t.at(b, c, y.min(s.h - 1), x.min(s.w - 1)))
}

fn crop<T: Scalar>(t: &Tensor<T>, top: usize, left: usize, h: usize, w: usize) -> Tensor<T> {
    let s = t.shape();
    Tensor::from_fn(Shape::new(s.n, s.c, h, w), |b, c, y, x| t.at(b, c, top + y, left + x))
}

/// Restore a `(1, 3, h, w)` image of any size. Images no larger than one
/// tile go through the generator whole.
pub fn restore_tiled<T: Scalar>(corrupted: &Tensor<T>, gen: &mut Generator<T>, cfg: &TileConfig) -> Result<Tensor<T>> {
    let s = corrupted.shape();
    if s.n != 1 || s.c != 3 {
        return Err(Error::shape(format!("expected a 1x3xHxW image, got {s}")));
    }
    let tile = cfg.tile - cfg.tile % 2;
    if tile < 2 || cfg.overlap * 2 >= tile {
        return Err(Error::invalid(format!(
            "tile {} must be even, at least 2, and more than twice the overlap {}",
            cfg.tile, cfg.overlap
        )));
    }
    let median = median_filter(corrupted, cfg.median_k)?;
    let input = pad_even(&residual_input(corrupted, &median)?);
    let ps = input.shape();
    let (th, tw) = (tile.min(ps.h), tile.min(ps.w));
    let mut acc = vec![0.0f64; ps.numel()];
    let mut wsum = vec![0.0f64; ps.plane()];
    for &oy in &origins(ps.h, th, cfg.overlap) {
        for &ox in &origins(ps.w, tw, cfg.overlap) {
            let r = predict_residual(gen, &crop(&input, oy, ox, th, tw))?;
            for y in 0..th {
                let wy = ramp(y, oy, th, ps.h, cfg.overlap);
                for x in 0..tw {
                    let wgt = wy * ramp(x, ox, tw, ps.w, cfg.overlap);
                    let p = (oy + y) * ps.w + ox + x;
                    wsum[p] += wgt;
                    for c in 0..3 {
                        acc[c * ps.plane() + p] += wgt * r.at(0, c, y, x).as_f64();
                    }
                }
            }
        }
    }
    let residual = Tensor::from_fn(s, |_, c, y, x| {
        let p = y * ps.w + x;
        T::lit(acc[c * ps.plane() + p] / wsum[p])
    });
    compose(&median, &residual)
}
