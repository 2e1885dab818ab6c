mod common;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rfq::imaging::{degrade, render_face, DegradationKind, DegradationSpec, FaceImage, FaceParams, Image};
use rfq::metrics::{mse, ssim, ssim_loss, SsimParams};
use rfq::model::{
    build_discriminator, build_generator, clip_weights, discriminator_forward, generator_forward, LayerParams,
    LayerSpec, Loss, Mode, Network, NetworkSpec, Parameters, Role, Tensor,
};
use rfq::training::{discriminator_step, Adam, AdamConfig};
use rfq::Scalar;

use common::*;

fn natural_face<T: Scalar>(seed: u64) -> FaceImage<T> {
    render_face(&FaceParams::sample(&mut ChaCha8Rng::seed_from_u64(seed)))
}

#[test]
fn mse_matches_elementwise_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let a = random_image(&mut rng, 32, 32, 0.0, 1.0);
    let b = random_image(&mut rng, 32, 32, 0.0, 1.0);
    let mut sum = 0.0;
    for y in 0..32 {
        for x in 0..32 {
            for c in 0..3 {
                let d = a.get(y, x, c) - b.get(y, x, c);
                sum += d * d;
            }
        }
    }
    assert!((mse(&a, &b).unwrap() - sum / 3072.0).abs() < 1e-12);
    assert_eq!(mse(&Image::filled(4, 4, 3, 0.0f64), &Image::filled(4, 4, 3, 1.0)).unwrap(), 1.0);
}

#[test]
fn windowed_ssim_matches_loop_on_natural_blurred_pair() {
    let face = natural_face::<f64>(5);
    let blurred = degrade(&face, &DegradationSpec::new(DegradationKind::Blur, 0.6, 1).unwrap()).unwrap();
    let fast = ssim(&face, &blurred, &SsimParams::windowed()).unwrap();
    let slow = ssim_window_loop(face.image(), blurred.image(), 0.01, 0.03, 1.0);
    assert!((fast - slow).abs() < 1e-6, "{fast} vs {slow}");
    assert!(fast < 0.99);
}

#[test]
fn stronger_blur_lowers_ssim() {
    let face = natural_face::<f64>(8);
    let at = |s: f64| {
        let out = degrade(&face, &DegradationSpec::new(DegradationKind::Blur, s, 3).unwrap()).unwrap();
        ssim(&face, &out, &SsimParams::windowed()).unwrap()
    };
    assert!(at(0.8) < at(0.2));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn ssim_loss_within_range(seed in any::<u64>(), global in any::<bool>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_image(&mut rng, 12, 12, 0.0, 1.0);
        let b = random_image(&mut rng, 12, 12, 0.0, 1.0);
        let p = if global { SsimParams::global() } else { SsimParams::windowed() };
        let l = ssim_loss(&a, &b, &p).unwrap();
        prop_assert!((0.0..=2.0).contains(&l));
        prop_assert!(ssim_loss(&a, &a, &p).unwrap().abs() < 1e-12);
    }

    #[test]
    fn clipping_bounds_and_is_idempotent(values in proptest::collection::vec(-1.0f64..1.0, 1..40), c in 0.001f64..0.5) {
        let n = values.len();
        let params = Parameters {
            layers: vec![LayerParams::Affine { weight: values.clone(), bias: vec![0.9; n] }],
        };
        let once = clip_weights(&params, c).unwrap();
        let twice = clip_weights(&once, c).unwrap();
        prop_assert_eq!(&once, &twice);
        let LayerParams::Affine { weight, bias } = &once.layers[0] else { unreachable!() };
        for (w, v) in weight.iter().zip(&values) {
            prop_assert!(w.abs() <= c);
            if v.abs() <= c {
                prop_assert_eq!(w, v);
            }
        }
        prop_assert_eq!(bias, &vec![0.9; n]);
    }
}

#[test]
fn clip_examples() {
    let params = Parameters {
        layers: vec![LayerParams::Affine {
            weight: vec![0.07f64, -0.2, 0.01],
            bias: vec![0.0; 3],
        }],
    };
    let LayerParams::Affine { weight, .. } = &clip_weights(&params, 0.05).unwrap().layers[0] else {
        unreachable!()
    };
    assert_eq!(weight, &vec![0.05, -0.05, 0.01]);
    assert!(clip_weights(&params, 0.0).is_err());
}

#[test]
fn generator_shape_range_and_determinism() {
    let g = build_generator::<f32>(NetworkSpec::default_generator(), 7).unwrap();
    assert_eq!(g, build_generator::<f32>(NetworkSpec::default_generator(), 7).unwrap());
    let faces: Vec<FaceImage<f32>> = (0..3).map(|s| natural_face(s)).collect();
    let out = generator_forward(&g, &faces, Mode::Eval).unwrap();
    assert_eq!(out.len(), 3);
    for f in &out {
        assert_eq!(f.image().shape(), (32, 32, 3));
        assert!(f.values().iter().all(|v| (0.0..=1.0).contains(v)));
    }
    assert_eq!(out, generator_forward(&g, &faces, Mode::Eval).unwrap());
    let single = generator_forward(&g, &faces[2..], Mode::Eval).unwrap();
    assert_eq!(single[0], out[2]);
    assert!(generator_forward(&g, &[], Mode::Eval).is_err());
}

#[test]
fn discriminator_scores_and_stride_rule() {
    let d = build_discriminator::<f32>(NetworkSpec::default_discriminator(), 3).unwrap();
    assert_eq!(d, build_discriminator::<f32>(NetworkSpec::default_discriminator(), 3).unwrap());
    let faces: Vec<FaceImage<f32>> = (0..4).map(|s| natural_face(s + 10)).collect();
    let scores = discriminator_forward(&d, &faces, Mode::Eval).unwrap();
    assert_eq!(scores.len(), 4);
    assert!(scores.iter().all(|s| (0.0..=1.0).contains(s)));
    let mut spec = NetworkSpec::default_discriminator();
    spec.layers[0] = LayerSpec::conv(64, 4, 2);
    assert!(build_discriminator::<f32>(spec, 3).is_err());
    assert!(discriminator_forward(&d, &[], Mode::Eval).is_err());
}

#[test]
fn bce_gradient_vanishes_at_target() {
    let d = build_discriminator::<f64>(NetworkSpec::default_discriminator(), 5).unwrap();
    let faces: Vec<FaceImage<f64>> = (0..3).map(natural_face).collect();
    let input = Tensor::from_faces(&faces).unwrap();
    let own = d.forward(&input, Mode::Train, false).unwrap().output.data;
    let (_, grads, _) = d.loss_backward(&input, Mode::Train, &Loss::Bce(&own)).unwrap();
    let largest = grads.trainable().iter().flat_map(|b| b.iter()).fold(0.0f64, |m, g| m.max(g.abs()));
    assert!(largest < 1e-12, "{largest}");
}

/// Tiny stride-2 generator on 8x8 inputs for reconstruction-loss checks.
fn tiny_generator() -> Network<f64> {
    let spec = NetworkSpec {
        role: Role::Generator,
        input_shape: (8, 8, 3),
        layers: vec![
            LayerSpec::conv(2, 3, 2),
            LayerSpec::leaky_relu(),
            LayerSpec::transposed_conv(3, 3, 2),
            LayerSpec::Sigmoid,
        ],
    };
    build_generator(spec, 21).unwrap()
}

#[test]
fn ssim_reconstruction_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let inputs: Vec<Image<f64>> = (0..2).map(|_| random_image(&mut rng, 8, 8, 0.1, 0.9)).collect();
    let targets: Vec<Image<f64>> = inputs.iter().map(|i| perturbed(&mut rng, i, 0.1)).collect();
    let refs: Vec<&Image<f64>> = inputs.iter().collect();
    let input = Tensor::from_images(&refs).unwrap();
    for params in [SsimParams::global(), SsimParams::windowed()] {
        let mut g = tiny_generator();
        let loss = Loss::SsimRecon { targets: &targets, params };
        let value = |g: &Network<f64>| g.loss_backward(&input, Mode::Train, &loss).unwrap().0;
        let (_, grads, _) = g.loss_backward(&input, Mode::Train, &loss).unwrap();
        let analytic: Vec<f64> = grads.trainable().iter().flat_map(|b| b.iter().copied()).collect();
        let h = 1e-4;
        let mut numeric = Vec::new();
        for bi in 0..g.params().trainable().len() {
            for j in 0..g.params().trainable()[bi].len() {
                let orig = g.params().trainable()[bi][j];
                g.params_mut().trainable_mut()[bi][j] = orig + h;
                let up = value(&g);
                g.params_mut().trainable_mut()[bi][j] = orig - h;
                let down = value(&g);
                g.params_mut().trainable_mut()[bi][j] = orig;
                numeric.push((up - down) / (2.0 * h));
            }
        }
        let err = max_rel_err(&analytic, &numeric, 1e-8);
        assert!(err < 1e-4, "{params:?}: {err}");
    }
}

#[test]
fn discriminator_separates_white_from_black() {
    let mut d = build_discriminator::<f32>(NetworkSpec::default_discriminator(), 2).unwrap();
    let white = Image::filled(32, 32, 3, 1.0f32);
    let black = Image::filled(32, 32, 3, 0.0f32);
    let reals = vec![&white; 8];
    let fakes = vec![&black; 8];
    let mut opt = Adam::new(AdamConfig::default());
    for _ in 0..200 {
        discriminator_step(&mut d, &mut opt, &reals, &fakes, 0.05).unwrap();
    }
    let faces = [
        FaceImage::constant(1.0f32, rfq::imaging::Provenance::Original).unwrap(),
        FaceImage::constant(0.0f32, rfq::imaging::Provenance::Restored).unwrap(),
    ];
    let s = discriminator_forward(&d, &faces, Mode::Eval).unwrap();
    assert!(s[0] >= 0.9 && s[1] <= 0.1, "{s:?}");
    assert!(d.params().max_abs_weight() <= 0.05);
}
