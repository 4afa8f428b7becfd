use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::ImagePair;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensorops::{Shape, Tensor};

/// Shape of one synthetic defect, in pixel coordinates (`x` = column,
/// `y` = row, pixel centers on integers).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Geometry {
    Dust {
        x: f64,
        y: f64,
        radius: f64,
        /// Fraction of the radius over which coverage falls off to zero.
        softness: f64,
    },
    Scratch {
        x0: f64,
        y0: f64,
        x1: f64,
        y1: f64,
        width: f64,
    },
}

/// One synthetic dust speck or scratch.
///
/// `intensity > 0` renders toward white, `< 0` toward black, with the blend
/// strength scaled by `|intensity|`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DegradationSpec {
    pub geometry: Geometry,
    pub intensity: f64,
    pub opacity: f64,
    pub seed: u64,
}

impl DegradationSpec {
    pub fn kind(&self) -> &'static str {
        match self.geometry {
            Geometry::Dust { .. } => "dust",
            Geometry::Scratch { .. } => "scratch",
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::invalid(m));
        if !(self.opacity > 0.0 && self.opacity <= 1.0) {
            return bad(format!("opacity {} outside (0, 1]", self.opacity));
        }
        if !(self.intensity.abs() <= 1.0 && self.intensity != 0.0) {
            return bad(format!("intensity {} outside [-1, 0) ∪ (0, 1]", self.intensity));
        }
        match self.geometry {
            Geometry::Dust {
                x,
                y,
                radius,
                softness,
            } => {
                if !(x.is_finite() && y.is_finite()) {
                    return bad("dust center is not finite".into());
                }
                if !(radius >= 0.5 && radius.is_finite()) {
                    return bad(format!("dust radius {radius} below 0.5 px"));
                }
                if !(0.0..=1.0).contains(&softness) {
                    return bad(format!("dust softness {softness} outside [0, 1]"));
                }
            }
            Geometry::Scratch {
                x0,
                y0,
                x1,
                y1,
                width,
            } => {
                if ![x0, y0, x1, y1].iter().all(|v| v.is_finite()) {
                    return bad("scratch endpoints are not finite".into());
                }
                if !(width >= 1.0 && width.is_finite()) {
                    return bad(format!("scratch width {width} below 1 px"));
                }
                if (x1 - x0).hypot(y1 - y0) < 1e-9 {
                    return bad("degenerate scratch: zero length".into());
                }
            }
        }
        Ok(())
    }

    /// Target color of the overlay.
    pub fn color(&self) -> f64 {
        if self.intensity > 0.0 {
            1.0
        } else {
            0.0
        }
    }
}

/// Per-pixel coverage in `[0, 1]`, shape `(1, 1, h, w)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ArtifactMask<T> {
    pub alpha: Tensor<T>,
}

impl<T: Scalar> ArtifactMask<T> {
    pub fn empty(h: usize, w: usize) -> Self {
        ArtifactMask {
            alpha: Tensor::zeros(Shape::new(1, 1, h, w)),
        }
    }

    pub fn height(&self) -> usize {
        self.alpha.shape().h
    }

    pub fn width(&self) -> usize {
        self.alpha.shape().w
    }

    pub fn at(&self, y: usize, x: usize) -> T {
        self.alpha.at(0, 0, y, x)
    }

    pub fn is_empty(&self) -> bool {
        self.alpha.data().iter().all(|&a| a == T::zero())
    }

    pub fn covered_pixels(&self) -> usize {
        self.alpha.data().iter().filter(|&&a| a > T::zero()).count()
    }
}

fn smoothstep(t: f64) -> f64 {
    let t = t.clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

/// Opacity variation along a scratch, drawn from the defect's own seed.
struct Wear {
    depth: f64,
    freq: f64,
    phase: f64,
}

impl Wear {
    fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Wear {
            depth: rng.gen_range(0.0..0.4),
            freq: rng.gen_range(0.5..3.0),
            phase: rng.gen_range(0.0..1.0),
        }
    }

    fn factor(&self, t: f64) -> f64 {
        let s = (std::f64::consts::TAU * (self.freq * t + self.phase)).sin();
        1.0 - self.depth * 0.5 * (1.0 + s)
    }
}

/// Coverage of a single defect on an `h × w` grid.
pub fn render_artifact<T: Scalar>(spec: &DegradationSpec, h: usize, w: usize) -> Result<ArtifactMask<T>> {
    spec.validate()?;
    if h == 0 || w == 0 {
        return Err(Error::invalid(format!("cannot render onto a {h}x{w} image")));
    }
    let mut alpha = vec![T::zero(); h * w];
    match spec.geometry {
        Geometry::Dust {
            x,
            y,
            radius,
            softness,
        } => {
            let core = radius * (1.0 - softness);
            let (ylo, yhi) = span(y, radius, h);
            let (xlo, xhi) = span(x, radius, w);
            for r in ylo..yhi {
                for c in xlo..xhi {
                    let d = (c as f64 - x).hypot(r as f64 - y);
                    let a = if d <= core {
                        1.0
                    } else if d < radius {
                        smoothstep((radius - d) / (radius - core))
                    } else {
                        0.0
                    };
                    alpha[r * w + c] = T::lit(a * spec.opacity);
                }
            }
        }
        Geometry::Scratch {
            x0,
            y0,
            x1,
            y1,
            width,
        } => {
            let half = width / 2.0;
            let reach = half + 0.5;
            let wear = Wear::new(spec.seed);
            let (dx, dy) = (x1 - x0, y1 - y0);
            let len2 = dx * dx + dy * dy;
            let (ylo, yhi) = span_range(y0.min(y1) - reach, y0.max(y1) + reach, h);
            let (xlo, xhi) = span_range(x0.min(x1) - reach, x0.max(x1) + reach, w);
            for r in ylo..yhi {
                for c in xlo..xhi {
                    let (px, py) = (c as f64 - x0, r as f64 - y0);
                    let t = ((px * dx + py * dy) / len2).clamp(0.0, 1.0);
                    let d = (px - t * dx).hypot(py - t * dy);
                    let edge = (reach - d).clamp(0.0, 1.0);
                    if edge > 0.0 {
                        alpha[r * w + c] = T::lit(edge * spec.opacity * wear.factor(t));
                    }
                }
            }
        }
    }
    Ok(ArtifactMask {
        alpha: Tensor::from_vec(Shape::new(1, 1, h, w), alpha)?,
    })
}

fn span(center: f64, radius: f64, n: usize) -> (usize, usize) {
    span_range(center - radius, center + radius, n)
}

fn span_range(lo: f64, hi: f64, n: usize) -> (usize, usize) {
    let lo = lo.floor().max(0.0).min(n as f64) as usize;
    let hi = (hi.ceil() + 1.0).max(0.0).min(n as f64) as usize;
    (lo, hi.max(lo))
}

/// Overlay `specs` in order onto `clean` (`(1, c, h, w)`, values in
/// `[0, 1]`). Pixels no spec touches are left bit-identical.
pub fn composite<T: Scalar>(clean: &Tensor<T>, specs: &[DegradationSpec], id: impl Into<String>) -> Result<ImagePair<T>> {
    let s = clean.shape();
    if s.n != 1 {
        return Err(Error::shape(format!("composite expects a single image, got {s}")));
    }
    let mut corrupted = clean.clone();
    let mut mask = ArtifactMask::<T>::empty(s.h, s.w);
    for spec in specs {
        let a = render_artifact::<T>(spec, s.h, s.w)?;
        let color = T::lit(spec.color());
        let strength = T::lit(spec.intensity.abs());
        let data = corrupted.data_mut();
        for (i, &cov) in a.alpha.data().iter().enumerate() {
            if cov == T::zero() {
                continue;
            }
            let m = &mut mask.alpha.data_mut()[i];
            *m = m.max(cov);
            let eff = cov * strength;
            for c in 0..s.c {
                let p = &mut data[c * s.plane() + i];
                let v = *p * (T::one() - eff) + color * eff;
                *p = v.max(T::zero()).min(T::one());
            }
        }
    }
    ImagePair::new(clean.clone(), corrupted, mask, id)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Light,
    Medium,
    Heavy,
}

impl std::str::FromStr for Severity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "light" => Ok(Severity::Light),
            "medium" => Ok(Severity::Medium),
            "heavy" => Ok(Severity::Heavy),
            other => Err(Error::invalid(format!(
                "unknown severity {other:?} (light, medium, heavy)"
            ))),
        }
    }
}

/// Parameter ranges of one severity preset, defined for a 128×128 image.
#[derive(Debug, Clone, Copy)]
pub struct Preset {
    pub count: (usize, usize),
    pub dust_radius: (f64, f64),
    pub scratch_width: (f64, f64),
    pub opacity: (f64, f64),
    pub strength: (f64, f64),
    pub scratch_prob: f64,
    pub vertical_prob: f64,
}

impl Severity {
    pub fn preset(self) -> Preset {
        match self {
            Severity::Light => Preset {
                count: (1, 5),
                dust_radius: (0.5, 2.0),
                scratch_width: (1.0, 1.5),
                opacity: (0.4, 0.8),
                strength: (0.3, 0.8),
                scratch_prob: 0.3,
                vertical_prob: 0.6,
            },
            Severity::Medium => Preset {
                count: (4, 12),
                dust_radius: (0.5, 3.0),
                scratch_width: (1.0, 2.0),
                opacity: (0.5, 0.9),
                strength: (0.4, 0.9),
                scratch_prob: 0.35,
                vertical_prob: 0.6,
            },
            Severity::Heavy => Preset {
                count: (10, 30),
                dust_radius: (0.5, 4.5),
                scratch_width: (1.0, 3.0),
                opacity: (0.6, 1.0),
                strength: (0.5, 1.0),
                scratch_prob: 0.4,
                vertical_prob: 0.6,
            },
        }
    }
}

/// Count range of `preset` scaled to an `h × w` image by area.
pub fn count_range(preset: &Preset, h: usize, w: usize) -> (usize, usize) {
    let area = (h * w) as f64 / (128.0 * 128.0);
    let lo = ((preset.count.0 as f64 * area).round() as usize).max(1);
    let hi = ((preset.count.1 as f64 * area).round() as usize).max(lo);
    (lo, hi)
}

/// Draw a random defect list for an `h × w` image. Deterministic per seed.
pub fn sample_specs(seed: u64, h: usize, w: usize, severity: Severity) -> Vec<DegradationSpec> {
    let p = severity.preset();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (lo, hi) = count_range(&p, h, w);
    let count = rng.gen_range(lo..=hi);
    let (wmax, hmax) = ((w - 1) as f64, (h - 1) as f64);
    let mut specs = Vec::with_capacity(count);
    while specs.len() < count {
        let light = rng.gen_bool(0.6);
        let strength = rng.gen_range(p.strength.0..=p.strength.1);
        let intensity = if light { strength } else { -strength };
        let opacity = rng.gen_range(p.opacity.0..=p.opacity.1);
        let geometry = if rng.gen_bool(p.scratch_prob) && h > 1 && w > 1 {
            let width = rng.gen_range(p.scratch_width.0..=p.scratch_width.1);
            if rng.gen_bool(p.vertical_prob) {
                let x = rng.gen_range(0.0..=wmax);
                let len = rng.gen_range(0.3..=1.0) * hmax;
                let y0 = rng.gen_range(0.0..=(hmax - len).max(0.0));
                Geometry::Scratch {
                    x0: x,
                    y0,
                    x1: x,
                    y1: y0 + len,
                    width,
                }
            } else {
                let diag = wmax.hypot(hmax);
                let len = rng.gen_range(0.1..=0.5) * diag;
                let angle = rng.gen_range(0.0..std::f64::consts::PI);
                let x0 = rng.gen_range(0.0..=wmax);
                let y0 = rng.gen_range(0.0..=hmax);
                Geometry::Scratch {
                    x0,
                    y0,
                    x1: (x0 + len * angle.cos()).clamp(0.0, wmax),
                    y1: (y0 + len * angle.sin()).clamp(0.0, hmax),
                    width,
                }
            }
        } else {
            Geometry::Dust {
                x: rng.gen_range(0.0..=wmax),
                y: rng.gen_range(0.0..=hmax),
                radius: rng.gen_range(p.dust_radius.0..=p.dust_radius.1),
                softness: rng.gen_range(0.0..=0.6),
            }
        };
        let spec = DegradationSpec {
            geometry,
            intensity,
            opacity,
            seed: rng.gen(),
        };
        // Clamping can collapse a short scratch onto a point; redraw it.
        if spec.validate().is_ok() {
            specs.push(spec);
        }
    }
    specs
}
