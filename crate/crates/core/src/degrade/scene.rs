//! Procedural stand-ins for clean film scans: smooth backgrounds, soft-edged
//! shapes, a little periodic texture and film grain. Used to synthesize
//! training and evaluation pairs when no photo collection is at hand.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::scalar::Scalar;
use crate::tensorops::{Shape, Tensor};

struct Blob {
    cx: f64,
    cy: f64,
    rx: f64,
    ry: f64,
    rot: f64,
    edge: f64,
    color: [f64; 3],
}

struct Grating {
    fx: f64,
    fy: f64,
    phase: f64,
    amp: f64,
    cx: f64,
    cy: f64,
    extent: f64,
}

/// A `(1, 3, h, w)` image in `[0, 1]`, deterministic per seed.
pub fn synthetic_scene<T: Scalar>(seed: u64, h: usize, w: usize) -> Tensor<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (hf, wf) = (h as f64, w as f64);
    let base: [f64; 3] = std::array::from_fn(|_| rng.gen_range(0.25..0.75));
    let grad: [[f64; 2]; 3] =
        std::array::from_fn(|_| [rng.gen_range(-0.25..0.25), rng.gen_range(-0.25..0.25)]);
    let blobs: Vec<Blob> = (0..rng.gen_range(3..7))
        .map(|_| Blob {
            cx: rng.gen_range(0.0..wf),
            cy: rng.gen_range(0.0..hf),
            rx: rng.gen_range(0.08..0.35) * wf,
            ry: rng.gen_range(0.08..0.35) * hf,
            rot: rng.gen_range(0.0..std::f64::consts::PI),
            edge: rng.gen_range(1.0..4.0),
            color: std::array::from_fn(|_| rng.gen_range(0.1..0.9)),
        })
        .collect();
    let gratings: Vec<Grating> = (0..rng.gen_range(1..3))
        .map(|_| {
            let period = rng.gen_range(6.0..14.0);
            let angle: f64 = rng.gen_range(0.0..std::f64::consts::PI);
            Grating {
                fx: angle.cos() / period,
                fy: angle.sin() / period,
                phase: rng.gen_range(0.0..1.0),
                amp: rng.gen_range(0.03..0.08),
                cx: rng.gen_range(0.0..wf),
                cy: rng.gen_range(0.0..hf),
                extent: rng.gen_range(0.2..0.5) * wf.max(hf),
            }
        })
        .collect();
    // grain: mostly luminance, slightly tinted per channel
    let grain_std = rng.gen_range(0.01..0.03);
    let unit = Normal::new(0.0, 1.0).expect("valid normal");
    let luma: Vec<f64> = (0..h * w).map(|_| unit.sample(&mut rng)).collect();
    let chroma: Vec<f64> = (0..3 * h * w).map(|_| unit.sample(&mut rng)).collect();

    Tensor::from_fn(Shape::new(1, 3, h, w), |_, c, y, x| {
        let (xf, yf) = (x as f64, y as f64);
        let (u, v) = (xf / wf - 0.5, yf / hf - 0.5);
        let mut val = base[c] + grad[c][0] * u + grad[c][1] * v;
        for b in &blobs {
            let (dx, dy) = (xf - b.cx, yf - b.cy);
            let (cs, sn) = (b.rot.cos(), b.rot.sin());
            let (px, py) = ((dx * cs + dy * sn) / b.rx, (-dx * sn + dy * cs) / b.ry);
            let r = (px * px + py * py).sqrt();
            // signed distance in px (approx.) mapped through a soft edge
            let sd = (1.0 - r) * b.rx.min(b.ry);
            let cover = 0.5 * (1.0 + (sd / b.edge).tanh());
            val = val * (1.0 - cover) + b.color[c] * cover;
        }
        for g in &gratings {
            let d2 = (xf - g.cx).powi(2) + (yf - g.cy).powi(2);
            let env = (-d2 / (2.0 * g.extent * g.extent)).exp();
            let s = (std::f64::consts::TAU * (g.fx * xf + g.fy * yf + g.phase)).sin();
            val += g.amp * env * s;
        }
        let i = y * w + x;
        val += grain_std * (0.85 * luma[i] + 0.35 * chroma[c * h * w + i]);
        T::lit(val.clamp(0.0, 1.0))
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scenes_are_valid_and_seeded() {
        let a = synthetic_scene::<f32>(5, 40, 48);
        assert_eq!(a.shape(), Shape::new(1, 3, 40, 48));
        assert!(a.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        assert_eq!(a, synthetic_scene::<f32>(5, 40, 48));
        assert_ne!(a, synthetic_scene::<f32>(6, 40, 48));
    }
}
