use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::ImagePair;
use crate::degrade::ArtifactMask;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensorops::Tensor;

/// One geometric augmentation draw, applied identically to clean,
/// corrupted and mask.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentParams {
    /// Counter-clockwise quarter turns, `0..4`.
    pub quarter_turns: u8,
    pub flip_h: bool,
    pub flip_v: bool,
    /// Resize factor, then center-crop or edge-pad back to the patch size.
    pub scale: f64,
}

impl AugmentParams {
    pub const IDENTITY: AugmentParams = AugmentParams {
        quarter_turns: 0,
        flip_h: false,
        flip_v: false,
        scale: 1.0,
    };

    pub fn sample<R: Rng + ?Sized>(rng: &mut R) -> Self {
        AugmentParams {
            quarter_turns: rng.gen_range(0..4),
            flip_h: rng.gen_bool(0.5),
            flip_v: rng.gen_bool(0.5),
            scale: rng.gen_range(0.8..=1.2),
        }
    }
}

/// Random rotation by a right angle, flips, and rescale in `[0.8, 1.2]`.
pub fn augment<T: Scalar>(patch: &ImagePair<T>, seed: u64) -> Result<ImagePair<T>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    apply_augment(patch, &AugmentParams::sample(&mut rng))
}

pub fn apply_augment<T: Scalar>(patch: &ImagePair<T>, p: &AugmentParams) -> Result<ImagePair<T>> {
    if patch.height() != patch.width() {
        return Err(Error::shape(format!(
            "augment needs a square patch, got {}x{}",
            patch.height(),
            patch.width()
        )));
    }
    let f = |t: &Tensor<T>| transform(t, p);
    let out = ImagePair {
        clean: f(&patch.clean),
        corrupted: f(&patch.corrupted),
        mask: ArtifactMask {
            alpha: f(&patch.mask.alpha),
        },
        id: patch.id.clone(),
    };
    debug_assert!(out.validate().is_ok());
    Ok(out)
}

fn transform<T: Scalar>(t: &Tensor<T>, p: &AugmentParams) -> Tensor<T> {
    let mut out = t.clone();
    for _ in 0..p.quarter_turns % 4 {
        out = rot90(&out);
    }
    if p.flip_h {
        out = flip(&out, true);
    }
    if p.flip_v {
        out = flip(&out, false);
    }
    if p.scale != 1.0 {
        out = rescale_crop(&out, p.scale);
    }
    out
}

/// Counter-clockwise quarter turn of every plane of a square tensor.
pub fn rot90<T: Scalar>(t: &Tensor<T>) -> Tensor<T> {
    let s = t.shape();
    let n = s.h;
    debug_assert_eq!(s.h, s.w);
    Tensor::from_fn(s, |b, c, y, x| t.at(b, c, x, n - 1 - y))
}

fn flip<T: Scalar>(t: &Tensor<T>, horizontal: bool) -> Tensor<T> {
    let s = t.shape();
    Tensor::from_fn(s, |b, c, y, x| {
        if horizontal {
            t.at(b, c, y, s.w - 1 - x)
        } else {
            t.at(b, c, s.h - 1 - y, x)
        }
    })
}

/// Bilinear resize by `scale`, then center crop / edge-replicate pad back to
/// the original size. Every output sample is a convex combination of input
/// samples with fixed weights, so equal inputs map to equal outputs.
fn rescale_crop<T: Scalar>(t: &Tensor<T>, scale: f64) -> Tensor<T> {
    let s = t.shape();
    let size = s.h;
    let scaled = ((size as f64 * scale).round() as usize).max(1);
    let offset = scaled as isize / 2 - size as isize / 2;
    let taps = |i: usize| -> (usize, usize, T) {
        // coordinate in the resized image, clamped into it (edge padding)
        let j = (i as isize + offset).clamp(0, scaled as isize - 1) as f64;
        let src = ((j + 0.5) / scale - 0.5).clamp(0.0, (size - 1) as f64);
        let lo = src.floor() as usize;
        let hi = (lo + 1).min(size - 1);
        (lo, hi, T::lit(src - lo as f64))
    };
    let rows: Vec<_> = (0..size).map(taps).collect();
    let cols: Vec<_> = (0..size).map(taps).collect();
    Tensor::from_fn(s, |b, c, y, x| {
        let (y0, y1, fy) = rows[y];
        let (x0, x1, fx) = cols[x];
        let one = T::one();
        let top = t.at(b, c, y0, x0) * (one - fx) + t.at(b, c, y0, x1) * fx;
        let bot = t.at(b, c, y1, x0) * (one - fx) + t.at(b, c, y1, x1) * fx;
        (top * (one - fy) + bot * fy).max(T::zero()).min(one)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::degrade::{composite, sample_specs, synthetic_scene, Severity};

    fn patch(seed: u64) -> ImagePair<f64> {
        let clean = synthetic_scene::<f64>(seed, 24, 24);
        composite(&clean, &sample_specs(seed, 24, 24, Severity::Heavy), "p").unwrap()
    }

    #[test]
    fn identity_draw_is_a_no_op() {
        let p = patch(1);
        assert_eq!(apply_augment(&p, &AugmentParams::IDENTITY).unwrap(), p);
    }

    #[test]
    fn two_quarter_turns_equal_a_half_turn() {
        let p = patch(2);
        let q = AugmentParams {
            quarter_turns: 1,
            ..AugmentParams::IDENTITY
        };
        let twice = apply_augment(&apply_augment(&p, &q).unwrap(), &q).unwrap();
        let half = apply_augment(
            &p,
            &AugmentParams {
                quarter_turns: 2,
                ..AugmentParams::IDENTITY
            },
        )
        .unwrap();
        assert_eq!(twice, half);
        let four = (0..4).fold(p.clone(), |acc, _| apply_augment(&acc, &q).unwrap());
        assert_eq!(four, p);
    }

    #[test]
    fn non_square_rejected() {
        let clean = synthetic_scene::<f32>(0, 8, 10);
        let p = composite(&clean, &[], "r").unwrap();
        assert!(augment(&p, 0).is_err());
    }
}
