//! Pixel, gradient, perceptual and adversarial losses.
//!
//! Each term has a recorded form (`*_var`, taking tape handles, used in
//! training) and a value form returning a plain scalar.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensorops::{ConvGeometry, Shape, Tape, Tensor, Var};

/// Weights of the combined generator objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub pixel: f64,
    pub gradient: f64,
    pub perceptual: f64,
    pub adversarial: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            pixel: 1.0,
            gradient: 2.0,
            perceptual: 1.0,
            adversarial: 0.01,
        }
    }
}

impl LossWeights {
    pub fn as_array(&self) -> [f64; 4] {
        [self.pixel, self.gradient, self.perceptual, self.adversarial]
    }

    pub fn validate(&self) -> Vec<String> {
        let names = ["pixel", "gradient", "perceptual", "adversarial"];
        names
            .iter()
            .zip(self.as_array())
            .filter(|(_, w)| !(w.is_finite() && *w >= 0.0))
            .map(|(n, w)| format!("weights.{n} = {w}: must be a finite non-negative number"))
            .collect()
    }
}

/// The four generator loss components of one step.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossComponents<T> {
    pub pixel: T,
    pub gradient: T,
    pub perceptual: T,
    pub adversarial: T,
}

impl<T: Scalar> LossComponents<T> {
    pub fn as_array(&self) -> [T; 4] {
        [self.pixel, self.gradient, self.perceptual, self.adversarial]
    }
}

/// `Σ w_k · c_k`, accumulated in the same order as the recorded sum.
pub fn total_loss<T: Scalar>(c: &LossComponents<T>, w: &LossWeights) -> T {
    c.as_array()
        .iter()
        .zip(w.as_array())
        .fold(T::zero(), |acc, (&c, w)| acc + T::lit(w) * c)
}

pub fn total_loss_var<T: Scalar>(tape: &mut Tape<T>, c: &LossComponents<Var>, w: &LossWeights) -> Result<Var> {
    tape.weighted_sum(&[
        (c.pixel, w.pixel),
        (c.gradient, w.gradient),
        (c.perceptual, w.perceptual),
        (c.adversarial, w.adversarial),
    ])
}

/// Mean squared error.
pub fn pixel_loss_var<T: Scalar>(tape: &mut Tape<T>, t_hat: Var, t: Var) -> Result<Var> {
    let d = tape.sub(t_hat, t)?;
    let sq = tape.square(d)?;
    tape.mean(sq)
}

/// MSE of horizontal forward differences plus MSE of vertical ones.
pub fn gradient_loss_var<T: Scalar>(tape: &mut Tape<T>, t_hat: Var, t: Var) -> Result<Var> {
    let s = tape.shape(t_hat);
    if s.h < 2 || s.w < 2 {
        return Err(Error::shape(format!("gradient loss needs h, w >= 2, got {s}")));
    }
    let d = tape.sub(t_hat, t)?;
    let dx = tape.diff_x(d)?;
    let dx = tape.square(dx)?;
    let mx = tape.mean(dx)?;
    let dy = tape.diff_y(d)?;
    let dy = tape.square(dy)?;
    let my = tape.mean(dy)?;
    tape.add(mx, my)
}

/// Discriminator loss `−mean log σ(real) − mean log(1 − σ(fake))`, written
/// with softplus so large scores stay finite.
pub fn d_loss_var<T: Scalar>(tape: &mut Tape<T>, real: Var, fake: Var) -> Result<Var> {
    let neg = tape.affine(real, -1.0, 0.0)?;
    let r = tape.softplus(neg)?;
    let r = tape.mean(r)?;
    let f = tape.softplus(fake)?;
    let f = tape.mean(f)?;
    tape.add(r, f)
}

/// Non-saturating generator loss `−mean log σ(fake)`.
pub fn g_loss_var<T: Scalar>(tape: &mut Tape<T>, fake: Var) -> Result<Var> {
    let neg = tape.affine(fake, -1.0, 0.0)?;
    let f = tape.softplus(neg)?;
    tape.mean(f)
}

fn eval2<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, f: impl FnOnce(&mut Tape<T>, Var, Var) -> Result<Var>) -> Result<T> {
    let mut tape = Tape::new();
    let (va, vb) = (tape.constant(a.clone()), tape.constant(b.clone()));
    if tape.shape(va) != tape.shape(vb) {
        return Err(Error::shape(format!("loss operands differ: {} vs {}", a.shape(), b.shape())));
    }
    let out = f(&mut tape, va, vb)?;
    Ok(tape.value(out).item())
}

pub fn pixel_loss<T: Scalar>(t_hat: &Tensor<T>, t: &Tensor<T>) -> Result<T> {
    eval2(t_hat, t, pixel_loss_var)
}

pub fn gradient_loss<T: Scalar>(t_hat: &Tensor<T>, t: &Tensor<T>) -> Result<T> {
    eval2(t_hat, t, gradient_loss_var)
}

pub fn perceptual_loss<T: Scalar>(t_hat: &Tensor<T>, t: &Tensor<T>, ex: &ContentExtractor<T>) -> Result<T> {
    eval2(t_hat, t, |tape, a, b| perceptual_loss_var(tape, a, b, ex))
}

/// `(d_loss, g_loss)` for raw discriminator scores.
pub fn adversarial_losses<T: Scalar>(real: &Tensor<T>, fake: &Tensor<T>) -> Result<(T, T)> {
    let mut tape = Tape::new();
    let (r, f) = (tape.constant(real.clone()), tape.constant(fake.clone()));
    let d = d_loss_var(&mut tape, r, f)?;
    let g = g_loss_var(&mut tape, f)?;
    Ok((tape.value(d).item(), tape.value(g).item()))
}

/// Where the extractor weights came from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ExtractorSource {
    FixedRandom { seed: u64 },
    External,
}

/// One conv + ReLU stage of a content extractor.
#[derive(Debug, Clone, PartialEq)]
pub struct ExtractorLayer<T> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
    pub geometry: ConvGeometry,
}

/// Frozen feature network for the perceptual loss. Features are the ReLU
/// outputs of every layer.
#[derive(Debug, Clone, PartialEq)]
pub struct ContentExtractor<T> {
    layers: Vec<ExtractorLayer<T>>,
    source: ExtractorSource,
}

pub const MIN_FEATURE_LEVELS: usize = 3;
pub const DEFAULT_EXTRACTOR_SEED: u64 = 0x00C0_FFEE;

impl<T: Scalar> ContentExtractor<T> {
    /// Five 3×3 layers, 3→16→32→32→64→64, stride 2 at layers 2 and 4,
    /// He-uniform weights drawn from `seed`.
    pub fn fixed_random(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let plan = [(3, 16, 1), (16, 32, 2), (32, 32, 1), (32, 64, 2), (64, 64, 1)];
        let layers = plan
            .iter()
            .map(|&(ci, co, stride)| {
                let bound = (6.0 / (ci * 9) as f64).sqrt();
                ExtractorLayer {
                    weight: Tensor::uniform(Shape::new(co, ci, 3, 3), -bound, bound, &mut rng),
                    bias: Tensor::zeros(Shape::new(1, co, 1, 1)),
                    geometry: ConvGeometry::new(stride, 1, 1),
                }
            })
            .collect();
        ContentExtractor {
            layers,
            source: ExtractorSource::FixedRandom { seed },
        }
    }

    /// Extractor with caller-supplied weights, e.g. converted from a
    /// pretrained classifier.
    pub fn external(layers: Vec<ExtractorLayer<T>>) -> Result<Self> {
        if layers.len() < MIN_FEATURE_LEVELS {
            return Err(Error::invalid(format!(
                "content extractor needs at least {MIN_FEATURE_LEVELS} feature levels, got {}",
                layers.len()
            )));
        }
        let mut c = 3;
        for (i, l) in layers.iter().enumerate() {
            let ws = l.weight.shape();
            if ws.c != c || l.bias.numel() != ws.n {
                return Err(Error::shape(format!(
                    "extractor layer {i}: weight {ws} / bias {} do not chain from {c} channels",
                    l.bias.numel()
                )));
            }
            c = ws.n;
        }
        Ok(ContentExtractor {
            layers,
            source: ExtractorSource::External,
        })
    }

    pub fn source(&self) -> &ExtractorSource {
        &self.source
    }

    pub fn levels(&self) -> usize {
        self.layers.len()
    }

    pub fn layers(&self) -> &[ExtractorLayer<T>] {
        &self.layers
    }

    /// Record the feature maps of `x`; weights enter the tape as constants.
    pub fn features(&self, tape: &mut Tape<T>, x: Var) -> Result<Vec<Var>> {
        let mut out = Vec::with_capacity(self.layers.len());
        let mut h = x;
        for l in &self.layers {
            let w = tape.constant(l.weight.clone());
            let b = tape.constant(l.bias.clone());
            let y = tape.conv2d(h, w, Some(b), l.geometry)?;
            h = tape.relu(y)?;
            out.push(h);
        }
        Ok(out)
    }
}

impl<T: Scalar> Default for ContentExtractor<T> {
    fn default() -> Self {
        Self::fixed_random(DEFAULT_EXTRACTOR_SEED)
    }
}

/// `Σ_levels mean |Φ(t_hat) − Φ(t)|`.
pub fn perceptual_loss_var<T: Scalar>(tape: &mut Tape<T>, t_hat: Var, t: Var, ex: &ContentExtractor<T>) -> Result<Var> {
    let fa = ex.features(tape, t_hat)?;
    let fb = ex.features(tape, t)?;
    let mut terms = Vec::with_capacity(fa.len());
    for (a, b) in fa.into_iter().zip(fb) {
        let d = tape.sub(a, b)?;
        let d = tape.abs(d)?;
        terms.push((tape.mean(d)?, 1.0));
    }
    tape.weighted_sum(&terms)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rand_img(seed: u64, s: Shape) -> Tensor<f64> {
        Tensor::uniform(s, 0.0, 1.0, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    #[test]
    fn pixel_loss_constant_offset() {
        let t = rand_img(1, Shape::new(2, 3, 4, 5));
        let u = t.map(|v| v + 0.5);
        assert!((pixel_loss(&u, &t).unwrap() - 0.25).abs() < 1e-12);
        assert_eq!(pixel_loss(&t, &t).unwrap(), 0.0);
        assert!(pixel_loss(&t, &rand_img(1, Shape::new(1, 3, 4, 5))).is_err());
    }

    #[test]
    fn gradient_loss_ignores_offsets() {
        let t = rand_img(2, Shape::new(1, 3, 6, 6));
        assert!(gradient_loss(&t.map(|v| v + 0.3), &t).unwrap().abs() < 1e-12);
    }

    #[test]
    fn gradient_loss_two_by_two_by_hand() {
        let a = Tensor::from_vec(Shape::new(1, 1, 2, 2), vec![0.1, 0.4, 0.3, 0.9]).unwrap();
        let b = Tensor::from_vec(Shape::new(1, 1, 2, 2), vec![0.2, 0.2, 0.5, 0.6]).unwrap();
        // x-diffs: a (0.3, 0.6), b (0.0, 0.1); y-diffs: a (0.2, 0.5), b (0.3, 0.4)
        let want = ((0.3f64).powi(2) + (0.5f64).powi(2)) / 2.0 + ((-0.1f64).powi(2) + (0.1f64).powi(2)) / 2.0;
        assert!((gradient_loss(&a, &b).unwrap() - want).abs() < 1e-12);
    }

    #[test]
    fn adversarial_at_zero_scores() {
        let z = Tensor::<f64>::zeros(Shape::new(2, 1, 3, 3));
        let (d, g) = adversarial_losses(&z, &z).unwrap();
        let ln2 = std::f64::consts::LN_2;
        assert!((d - 2.0 * ln2).abs() < 1e-12);
        assert!((g - ln2).abs() < 1e-12);
    }

    #[test]
    fn adversarial_extremes_stay_finite() {
        let s = Shape::new(1, 1, 1, 1);
        let (d, g) = adversarial_losses(&Tensor::<f32>::full(s, 40.0), &Tensor::full(s, -40.0)).unwrap();
        assert!(d.is_finite() && d < 1e-12);
        assert!(g.is_finite() && (g - 40.0).abs() < 1e-4);
        let (d, g) = adversarial_losses(&Tensor::<f32>::full(s, -40.0), &Tensor::full(s, 40.0)).unwrap();
        assert!(d.is_finite() && g.is_finite());
    }

    #[test]
    fn g_loss_decreases_with_fake_score() {
        let s = Shape::new(1, 1, 1, 1);
        let real = Tensor::<f64>::zeros(s);
        let mut prev = f64::INFINITY;
        for k in -20..=20 {
            let (_, g) = adversarial_losses(&real, &Tensor::full(s, k as f64 * 0.5)).unwrap();
            assert!(g < prev);
            prev = g;
        }
    }

    #[test]
    fn total_of_unit_components_is_four_point_oh_one() {
        let c = LossComponents {
            pixel: 1.0,
            gradient: 1.0,
            perceptual: 1.0,
            adversarial: 1.0,
        };
        assert!((total_loss(&c, &LossWeights::default()) - 4.01f64).abs() < 1e-12);
        assert_eq!(total_loss(&LossComponents::<f64>::default(), &LossWeights::default()), 0.0);
    }

    #[test]
    fn perceptual_zero_for_equal_and_positive_otherwise() {
        let ex = ContentExtractor::<f64>::default();
        assert_eq!(ex.levels(), 5);
        let t = rand_img(3, Shape::new(1, 3, 8, 8));
        assert_eq!(perceptual_loss(&t, &t, &ex).unwrap(), 0.0);
        assert!(perceptual_loss(&t.map(|v| 1.0 - v), &t, &ex).unwrap() > 0.0);
    }

    #[test]
    fn extractor_needs_three_levels() {
        let id = ExtractorLayer {
            weight: Tensor::<f64>::zeros(Shape::new(3, 3, 1, 1)),
            bias: Tensor::zeros(Shape::new(1, 3, 1, 1)),
            geometry: ConvGeometry::new(1, 1, 0),
        };
        assert!(ContentExtractor::external(vec![id.clone(), id.clone()]).is_err());
        assert!(ContentExtractor::external(vec![id.clone(), id.clone(), id]).is_ok());
    }

    #[test]
    fn weights_validation_lists_bad_entries() {
        let w = LossWeights {
            pixel: -1.0,
            adversarial: f64::NAN,
            ..LossWeights::default()
        };
        assert_eq!(w.validate().len(), 2);
    }
}
