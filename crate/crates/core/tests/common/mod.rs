//! Shared oracles for the integration and acceptance suites.

#![allow(dead_code)]

use filmrestore::arch::{DiscStage, Discriminator, DiscriminatorConfig, Generator, GeneratorConfig};
use filmrestore::loss::{
    d_loss_var, g_loss_var, gradient_loss_var, perceptual_loss_var, pixel_loss_var, total_loss_var,
    ContentExtractor, ExtractorLayer, LossComponents, LossWeights,
};
use filmrestore::tensorops::{BatchNormConfig, ConvGeometry, Mode, Shape, Tape, Tensor, Var};
use filmrestore::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Rng64 = ChaCha8Rng;

pub fn rng(seed: u64) -> Rng64 {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Uniform values in `[lo, hi]` kept at least `gap` away from zero, so
/// kinks of ReLU / abs are never straddled by a finite difference.
pub fn away_from_zero(s: Shape, lo: f64, hi: f64, gap: f64, r: &mut Rng64) -> Tensor<f64> {
    Tensor::from_fn(s, |_, _, _, _| loop {
        let v: f64 = r.gen_range(lo..hi);
        if v.abs() >= gap {
            break v;
        }
    })
}

pub fn uniform(s: Shape, lo: f64, hi: f64, r: &mut Rng64) -> Tensor<f64> {
    Tensor::uniform(s, lo, hi, r)
}

/// `|a − n| / max(|a|, |n|, floor)`.
pub fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-4)
}

pub type Recorder<'a> = dyn Fn(&mut Tape<f64>, &[Var]) -> Result<Var> + 'a;

/// Scalar probe `Σ out ⊙ R` for a fixed random `R`, or the output itself
/// when it is already a scalar.
fn probe(tape: &mut Tape<f64>, out: Var, proj: &Option<Tensor<f64>>) -> Result<Var> {
    match proj {
        None => Ok(out),
        Some(r) => {
            let rv = tape.constant(r.clone());
            let m = tape.mul(out, rv)?;
            tape.sum(m)
        }
    }
}

fn evaluate(inputs: &[Tensor<f64>], f: &Recorder<'_>, proj: &Option<Tensor<f64>>) -> f64 {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
    let out = f(&mut tape, &vars).expect("forward");
    let p = probe(&mut tape, out, proj).expect("probe");
    tape.value(p).item()
}

/// Largest relative error between the tape gradient and central finite
/// differences over every element of every input.
pub fn max_grad_error(inputs: &[Tensor<f64>], f: &Recorder<'_>, seed: u64) -> f64 {
    let proj = {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
        let out = f(&mut tape, &vars).expect("forward");
        let s = tape.shape(out);
        (s.numel() > 1).then(|| Tensor::uniform(s, -1.0, 1.0, &mut rng(seed ^ 0xA5A5)))
    };
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone(), true)).collect();
    let out = f(&mut tape, &vars).expect("forward");
    let p = probe(&mut tape, out, &proj).expect("probe");
    let grads = tape.backward(p).expect("backward");

    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for (k, v) in vars.iter().enumerate() {
        let analytic = grads.tensor(*v);
        for i in 0..inputs[k].numel() {
            let mut plus = inputs.to_vec();
            plus[k].data_mut()[i] += h;
            let mut minus = inputs.to_vec();
            minus[k].data_mut()[i] -= h;
            let num = (evaluate(&plus, f, &proj) - evaluate(&minus, f, &proj)) / (2.0 * h);
            worst = worst.max(rel_err(analytic.data()[i], num));
        }
    }
    worst
}

fn rec(f: impl Fn(&mut Tape<f64>, &[Var]) -> Result<Var> + 'static) -> Box<Recorder<'static>> {
    Box::new(f)
}

pub type Builder = fn(&mut Rng64) -> (Vec<Tensor<f64>>, Box<Recorder<'static>>);

/// One named gradient case built from a seed.
pub struct GradCase {
    pub name: &'static str,
    pub build: Builder,
}

fn dims(r: &mut Rng64) -> (usize, usize, usize, usize) {
    (r.gen_range(1..=3), r.gen_range(1..=4), r.gen_range(2..=5), r.gen_range(2..=5))
}

fn shape(r: &mut Rng64) -> Shape {
    let (n, c, h, w) = dims(r);
    Shape::new(n, c, h, w)
}

fn unary(r: &mut Rng64, f: fn(&mut Tape<f64>, Var) -> Result<Var>) -> (Vec<Tensor<f64>>, Box<Recorder<'static>>) {
    let s = shape(r);
    (vec![away_from_zero(s, -2.0, 2.0, 0.05, r)], rec(move |t, v| f(t, v[0])))
}

fn binary(r: &mut Rng64, f: fn(&mut Tape<f64>, Var, Var) -> Result<Var>) -> (Vec<Tensor<f64>>, Box<Recorder<'static>>) {
    let s = shape(r);
    (vec![uniform(s, -1.0, 1.0, r), uniform(s, -1.0, 1.0, r)], rec(move |t, v| f(t, v[0], v[1])))
}

fn small_extractor(r: &mut Rng64) -> ContentExtractor<f64> {
    let chans = [(3usize, 4usize, 1usize), (4, 4, 2), (4, 5, 1)];
    let layers = chans
        .iter()
        .map(|&(ci, co, s)| ExtractorLayer {
            weight: uniform(Shape::new(co, ci, 3, 3), -0.5, 0.5, r),
            bias: uniform(Shape::new(1, co, 1, 1), -0.1, 0.1, r),
            geometry: ConvGeometry::new(s, 1, 1),
        })
        .collect();
    ContentExtractor::external(layers).unwrap()
}

pub fn grad_cases() -> Vec<GradCase> {
    vec![
        GradCase {
            name: "conv2d",
            build: |r| {
                let (n, ci, h, w) = dims(r);
                let co = r.gen_range(1..=3);
                let k = [1usize, 2, 3][r.gen_range(0..3)];
                let d = if k == 1 { 1 } else { r.gen_range(1..=2) };
                let stride = r.gen_range(1..=2);
                let span = d * (k - 1) + 1;
                let pad = r.gen_range(0..=k / 2 * d);
                let (h, w) = (h.max(span), w.max(span));
                let g = ConvGeometry::new(stride, d, pad);
                (
                    vec![
                        uniform(Shape::new(n, ci, h, w), -1.0, 1.0, r),
                        uniform(Shape::new(co, ci, k, k), -1.0, 1.0, r),
                        uniform(Shape::new(1, co, 1, 1), -1.0, 1.0, r),
                    ],
                    rec(move |t, v| t.conv2d(v[0], v[1], Some(v[2]), g)),
                )
            },
        },
        GradCase {
            name: "conv2d_transpose",
            build: |r| {
                let (n, ci, h, w) = dims(r);
                let co = r.gen_range(1..=3);
                let k = [1usize, 3][r.gen_range(0..2)];
                let stride = r.gen_range(1..=2);
                let pad = r.gen_range(0..=k / 2);
                let op = r.gen_range(0..stride);
                let g = ConvGeometry::new(stride, 1, pad).with_output_padding(op);
                (
                    vec![
                        uniform(Shape::new(n, ci, h, w), -1.0, 1.0, r),
                        uniform(Shape::new(ci, co, k, k), -1.0, 1.0, r),
                        uniform(Shape::new(1, co, 1, 1), -1.0, 1.0, r),
                    ],
                    rec(move |t, v| t.conv2d_transpose(v[0], v[1], Some(v[2]), g)),
                )
            },
        },
        GradCase {
            name: "batch_norm_train",
            build: |r| {
                let (n, c, h, w) = dims(r);
                let n = n.max(2);
                (
                    vec![
                        uniform(Shape::new(n, c, h, w), -2.0, 2.0, r),
                        uniform(Shape::new(1, c, 1, 1), 0.5, 1.5, r),
                        uniform(Shape::new(1, c, 1, 1), -0.5, 0.5, r),
                    ],
                    rec(move |t, v| {
                        let (mut m, mut var) = (vec![0.0; c], vec![1.0; c]);
                        t.batch_norm(v[0], v[1], v[2], &mut m, &mut var, Mode::Train, BatchNormConfig::default())
                    }),
                )
            },
        },
        GradCase {
            name: "batch_norm_eval",
            build: |r| {
                let (n, c, h, w) = dims(r);
                let mean: Vec<f64> = (0..c).map(|_| r.gen_range(-0.5..0.5)).collect();
                let var: Vec<f64> = (0..c).map(|_| r.gen_range(0.5..2.0)).collect();
                (
                    vec![
                        uniform(Shape::new(n, c, h, w), -2.0, 2.0, r),
                        uniform(Shape::new(1, c, 1, 1), 0.5, 1.5, r),
                        uniform(Shape::new(1, c, 1, 1), -0.5, 0.5, r),
                    ],
                    rec(move |t, v| {
                        let (mut m, mut vv) = (mean.clone(), var.clone());
                        t.batch_norm(v[0], v[1], v[2], &mut m, &mut vv, Mode::Eval, BatchNormConfig::default())
                    }),
                )
            },
        },
        GradCase {
            name: "relu",
            build: |r| unary(r, |t, x| t.relu(x)),
        },
        GradCase {
            name: "leaky_relu",
            build: |r| unary(r, |t, x| t.leaky_relu(x, 0.2)),
        },
        GradCase {
            name: "sigmoid",
            build: |r| unary(r, |t, x| t.sigmoid(x)),
        },
        GradCase {
            name: "softplus",
            build: |r| unary(r, |t, x| t.softplus(x)),
        },
        GradCase {
            name: "abs",
            build: |r| unary(r, |t, x| t.abs(x)),
        },
        GradCase {
            name: "square",
            build: |r| unary(r, |t, x| t.square(x)),
        },
        GradCase {
            name: "affine",
            build: |r| unary(r, |t, x| t.affine(x, -1.7, 0.3)),
        },
        GradCase {
            name: "add",
            build: |r| binary(r, |t, a, b| t.add(a, b)),
        },
        GradCase {
            name: "sub",
            build: |r| binary(r, |t, a, b| t.sub(a, b)),
        },
        GradCase {
            name: "mul",
            build: |r| binary(r, |t, a, b| t.mul(a, b)),
        },
        GradCase {
            name: "channel_scale",
            build: |r| {
                let (n, c, h, w) = dims(r);
                (
                    vec![
                        uniform(Shape::new(n, c, h, w), -1.0, 1.0, r),
                        uniform(Shape::new(n, c, 1, 1), -1.0, 1.0, r),
                    ],
                    rec(|t, v| t.channel_scale(v[0], v[1])),
                )
            },
        },
        GradCase {
            name: "global_avg_pool",
            build: |r| unary(r, |t, x| t.global_avg_pool(x)),
        },
        GradCase {
            name: "diff_x",
            build: |r| unary(r, |t, x| t.diff_x(x)),
        },
        GradCase {
            name: "diff_y",
            build: |r| unary(r, |t, x| t.diff_y(x)),
        },
        GradCase {
            name: "mean",
            build: |r| unary(r, |t, x| t.mean(x)),
        },
        GradCase {
            name: "sum",
            build: |r| unary(r, |t, x| t.sum(x)),
        },
        GradCase {
            name: "weighted_sum",
            build: |r| {
                let s = shape(r);
                let w: [f64; 3] = std::array::from_fn(|_| r.gen_range(-2.0..2.0));
                (
                    vec![uniform(s, -1.0, 1.0, r), uniform(s, -1.0, 1.0, r), uniform(s, -1.0, 1.0, r)],
                    rec(move |t, v| t.weighted_sum(&[(v[0], w[0]), (v[1], w[1]), (v[2], w[2])])),
                )
            },
        },
        GradCase {
            name: "pixel_loss",
            build: |r| binary(r, pixel_loss_var),
        },
        GradCase {
            name: "gradient_loss",
            build: |r| binary(r, gradient_loss_var),
        },
        GradCase {
            name: "perceptual_loss",
            build: |r| {
                let (n, _, h, w) = dims(r);
                let s = Shape::new(n, 3, h.max(3), w.max(3));
                let ex = small_extractor(r);
                let a = uniform(s, 0.0, 1.0, r);
                let b = uniform(s, 0.0, 1.0, r);
                (vec![a, b], rec(move |t, v| perceptual_loss_var(t, v[0], v[1], &ex)))
            },
        },
        GradCase {
            name: "d_loss",
            build: |r| {
                let s = shape(r);
                (
                    vec![uniform(s, -4.0, 4.0, r), uniform(s, -4.0, 4.0, r)],
                    rec(|t, v| d_loss_var(t, v[0], v[1])),
                )
            },
        },
        GradCase {
            name: "g_loss",
            build: |r| {
                let s = shape(r);
                (vec![uniform(s, -4.0, 4.0, r)], rec(|t, v| g_loss_var(t, v[0])))
            },
        },
        GradCase {
            name: "total_loss",
            build: |r| {
                let s = Shape::new(1, 1, 1, 1);
                let comps = (0..4).map(|_| uniform(s, 0.0, 2.0, r)).collect();
                (
                    comps,
                    rec(|t, v| {
                        let c = LossComponents {
                            pixel: v[0],
                            gradient: v[1],
                            perceptual: v[2],
                            adversarial: v[3],
                        };
                        total_loss_var(t, &c, &LossWeights::default())
                    }),
                )
            },
        },
        GradCase {
            name: "generator",
            build: |r| {
                let cfg = GeneratorConfig {
                    base_channels: 8,
                    n_res_blocks: 2,
                    dilations: vec![1, 2],
                    zero_init_output: false,
                    seed: r.gen(),
                    ..GeneratorConfig::default()
                };
                let s = Shape::new(2, 3, 4, 4);
                let x = uniform(s, -1.0, 1.0, r);
                (
                    vec![x],
                    rec(move |t, v| {
                        let mut g = Generator::<f64>::new(cfg.clone())?;
                        Ok(g.forward(t, v[0], Mode::Eval, false)?.output)
                    }),
                )
            },
        },
        GradCase {
            name: "discriminator",
            build: |r| {
                let cfg = DiscriminatorConfig {
                    stages: vec![DiscStage { channels: 4, stride: 1 }],
                    kernel: 2,
                    leaky_slope: 0.2,
                    seed: r.gen(),
                };
                let s = Shape::new(2, 3, 4, 5);
                let x = uniform(s, -1.0, 1.0, r);
                (
                    vec![x],
                    rec(move |t, v| {
                        let mut d = Discriminator::<f64>::new(cfg.clone())?;
                        Ok(d.forward(t, v[0], Mode::Eval, false)?.scores)
                    }),
                )
            },
        },
    ]
}

/// Worst relative error of `case` over `seeds` random instances.
pub fn run_grad_case(case: &GradCase, seeds: std::ops::Range<u64>) -> f64 {
    seeds
        .map(|seed| {
            let mut r = rng(seed.wrapping_mul(0x9E37_79B9).wrapping_add(case.name.len() as u64));
            let (inputs, f) = (case.build)(&mut r);
            max_grad_error(&inputs, f.as_ref(), seed)
        })
        .fold(0.0, f64::max)
}

/// Median by sorting the reflected window: the slow, obvious reference.
pub fn brute_median(img: &Tensor<f64>, k: usize) -> Tensor<f64> {
    let s = img.shape();
    let r = (k / 2) as isize;
    let reflect = |i: isize, n: usize| -> usize {
        let n = n as isize;
        let mut i = i;
        while i < 0 || i >= n {
            i = if i < 0 { -i } else { 2 * (n - 1) - i };
        }
        i as usize
    };
    Tensor::from_fn(s, |b, c, y, x| {
        let mut win = Vec::with_capacity(k * k);
        for dy in -r..=r {
            for dx in -r..=r {
                win.push(img.at(b, c, reflect(y as isize + dy, s.h), reflect(x as isize + dx, s.w)));
            }
        }
        win.sort_by(|a, b| a.partial_cmp(b).unwrap());
        win[win.len() / 2]
    })
}

/// Double-loop MSE.
pub fn naive_mse(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    let s = a.shape();
    let mut acc = 0.0;
    for n in 0..s.n {
        for c in 0..s.c {
            for y in 0..s.h {
                for x in 0..s.w {
                    let d = a.at(n, c, y, x) - b.at(n, c, y, x);
                    acc += d * d;
                }
            }
        }
    }
    acc / s.numel() as f64
}

/// Double-loop forward-difference MSE along both axes.
pub fn naive_gradient_loss(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    let s = a.shape();
    let (mut gx, mut gy) = (0.0, 0.0);
    for n in 0..s.n {
        for c in 0..s.c {
            for y in 0..s.h {
                for x in 0..s.w {
                    if x + 1 < s.w {
                        let da = a.at(n, c, y, x + 1) - a.at(n, c, y, x);
                        let db = b.at(n, c, y, x + 1) - b.at(n, c, y, x);
                        gx += (da - db) * (da - db);
                    }
                    if y + 1 < s.h {
                        let da = a.at(n, c, y + 1, x) - a.at(n, c, y, x);
                        let db = b.at(n, c, y + 1, x) - b.at(n, c, y, x);
                        gy += (da - db) * (da - db);
                    }
                }
            }
        }
    }
    gx / (s.n * s.c * s.h * (s.w - 1)) as f64 + gy / (s.n * s.c * (s.h - 1) * s.w) as f64
}
