mod common;

use filmrestore::arch::{Generator, GeneratorConfig};
use filmrestore::data::{apply_augment, AugmentParams, ImagePair};
use filmrestore::degrade::{median_filter, ArtifactMask};
use filmrestore::loss::{adversarial_losses, gradient_loss, pixel_loss};
use filmrestore::metrics::{psnr, ssim, MetricConfig};
use filmrestore::tensorops::{conv2d, conv2d_transpose, ConvGeometry, ConvParams, Mode, Tape};
use filmrestore::{Shape, Tensor};
use proptest::prelude::*;
use rand::seq::SliceRandom;

fn image(seed: u64, s: Shape) -> Tensor<f64> {
    common::uniform(s, 0.0, 1.0, &mut common::rng(seed))
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
}

fn small_shape() -> impl Strategy<Value = Shape> {
    (1usize..3, 1usize..4, 2usize..9, 2usize..9).prop_map(|(n, c, h, w)| Shape::new(n, c, h, w))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn pixel_loss_ignores_a_shared_permutation(seed in any::<u64>(), s in small_shape()) {
        let a = image(seed, s);
        let b = image(seed ^ 1, s);
        let mut idx: Vec<usize> = (0..s.numel()).collect();
        idx.shuffle(&mut common::rng(seed ^ 2));
        let pa = Tensor::from_vec(s, idx.iter().map(|&i| a.data()[i]).collect()).unwrap();
        let pb = Tensor::from_vec(s, idx.iter().map(|&i| b.data()[i]).collect()).unwrap();
        prop_assert!(close(pixel_loss(&a, &b).unwrap(), pixel_loss(&pa, &pb).unwrap(), 1e-12));
        prop_assert_eq!(pixel_loss(&a, &b).unwrap(), pixel_loss(&b, &a).unwrap());
    }

    #[test]
    fn gradient_loss_ignores_constant_offsets(seed in any::<u64>(), s in small_shape(), k in -0.5f64..0.5) {
        let a = image(seed, s);
        let b = image(seed ^ 1, s);
        let shifted = a.map(|v| v + k);
        prop_assert!(close(gradient_loss(&a, &b).unwrap(), gradient_loss(&shifted, &b).unwrap(), 1e-9));
        prop_assert!(gradient_loss(&a, &b).unwrap() >= 0.0);
    }

    #[test]
    fn adversarial_losses_positive(seed in any::<u64>(), s in small_shape()) {
        let mut r = common::rng(seed);
        let real = common::uniform(s, -30.0, 30.0, &mut r);
        let fake = common::uniform(s, -30.0, 30.0, &mut r);
        let (d, g) = adversarial_losses(&real, &fake).unwrap();
        prop_assert!(d > 0.0 && g > 0.0 && d.is_finite() && g.is_finite());
    }

    #[test]
    fn metrics_are_symmetric_and_bounded(seed in any::<u64>(), h in 8usize..20, w in 8usize..20) {
        let s = Shape::new(1, 3, h, w);
        let a = image(seed, s);
        let b = image(seed ^ 7, s);
        let cfg = MetricConfig::default();
        prop_assert_eq!(psnr(&a, &b, 8).unwrap(), psnr(&b, &a, 8).unwrap());
        let (ab, ba) = (ssim(&a, &b, &cfg).unwrap(), ssim(&b, &a, &cfg).unwrap());
        prop_assert!((ab - ba).abs() < 1e-12);
        prop_assert!((-1.0..=1.0).contains(&ab));
        prop_assert_eq!(ssim(&a, &a, &cfg).unwrap(), 1.0);
        prop_assert_eq!(psnr(&a, &a, 8).unwrap(), f64::INFINITY);
    }

    #[test]
    fn median_stays_in_range_and_commutes_with_flips(seed in any::<u64>(), h in 5usize..12, w in 5usize..12, k in prop::sample::select(vec![1usize, 3, 5])) {
        let s = Shape::new(1, 2, h, w);
        let img = image(seed, s);
        let m = median_filter(&img, k).unwrap();
        let (lo, hi) = img.data().iter().fold((f64::MAX, f64::MIN), |(l, u), &v| (l.min(v), u.max(v)));
        prop_assert!(m.data().iter().all(|&v| v >= lo && v <= hi));
        let flip = |t: &Tensor<f64>| Tensor::from_fn(s, |n, c, y, x| t.at(n, c, y, w - 1 - x));
        prop_assert_eq!(median_filter(&flip(&img), k).unwrap(), flip(&m));
        if k == 1 {
            prop_assert_eq!(m, img);
        }
    }

    #[test]
    fn transposed_conv_is_the_adjoint(seed in any::<u64>(), k in prop::sample::select(vec![1usize, 3]), stride in 1usize..3, dil in 1usize..3, pad in 0usize..2) {
        let mut r = common::rng(seed);
        let (h, w) = (7, 6);
        let x = common::uniform(Shape::new(2, 3, h, w), -1.0, 1.0, &mut r);
        let kernel = common::uniform(Shape::new(4, 3, k, k), -1.0, 1.0, &mut r);
        let span = dil * (k - 1) + 1;
        let op = |n: usize| (n + 2 * pad - span) % stride;
        prop_assume!(op(h) == op(w));
        let g = ConvGeometry::new(stride, dil, pad);
        let y = conv2d(&x, &ConvParams { kernel: kernel.clone(), bias: None, geometry: g }).unwrap();
        let v = common::uniform(y.shape(), -1.0, 1.0, &mut r);
        let back = conv2d_transpose(&v, &ConvParams { kernel, bias: None, geometry: g.with_output_padding(op(h)) }).unwrap();
        prop_assert_eq!(back.shape(), x.shape());
        prop_assert!(close(y.dot(&v).unwrap(), x.dot(&back).unwrap(), 1e-12));
    }

    #[test]
    fn rotations_and_flips_only_move_pixels(seed in any::<u64>(), q in 0u8..4, fh in any::<bool>(), fv in any::<bool>()) {
        let s = Shape::new(1, 3, 8, 8);
        let clean = image(seed, s);
        let pair = ImagePair::new(clean.clone(), clean.clone(), ArtifactMask::empty(8, 8), "p").unwrap();
        let p = AugmentParams { quarter_turns: q, flip_h: fh, flip_v: fv, scale: 1.0 };
        let out = apply_augment(&pair, &p).unwrap();
        let sorted = |t: &Tensor<f64>| {
            let mut v = t.data().to_vec();
            v.sort_by(f64::total_cmp);
            v
        };
        prop_assert_eq!(sorted(&out.clean), sorted(&clean));
        prop_assert_eq!(&out.clean, &out.corrupted);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn generator_output_is_a_bounded_residual(seed in any::<u64>()) {
        let mut g = Generator::<f64>::new(GeneratorConfig {
            base_channels: 8,
            n_res_blocks: 2,
            dilations: vec![3, 1],
            zero_init_output: false,
            seed,
            ..GeneratorConfig::default()
        })
        .unwrap();
        let x = common::uniform(Shape::new(2, 3, 12, 10), -1.0, 1.0, &mut common::rng(seed));
        let mut tape = Tape::new();
        let v = tape.constant(x);
        let out = g.forward(&mut tape, v, Mode::Eval, false).unwrap().output;
        let y = tape.value(out);
        prop_assert_eq!(y.shape(), Shape::new(2, 3, 12, 10));
        prop_assert!(y.data().iter().all(|&v| v > -1.0 && v < 1.0));
    }
}
