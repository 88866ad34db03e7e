mod common;

use common::*;
use nusr_core::degrade::{
    augment, bilinear_resize, denormalize, downsample, make_pair, normalize, sample_rng, warp_affine,
    AugmentSpec, DegradeSpec,
};
use nusr_core::Tensor;
use proptest::prelude::*;

fn spec_for(size: usize) -> DegradeSpec {
    DegradeSpec {
        output_dims: (size, size),
        ..DegradeSpec::default()
    }
}

#[test]
fn normalize_maps_8bit_extremes() {
    let img = Tensor::<f64>::image(1, 2, vec![0.0, 255.0]).unwrap();
    let (n, p) = normalize(&img, -0.5, 0.5).unwrap();
    assert_eq!(n.data(), &[-0.5, 0.5]);
    assert_eq!((p.min, p.max), (0.0, 255.0));
}

#[test]
fn normalize_is_a_fixed_point_on_normalized_images() {
    let img = ellipse_phantom(16, 1);
    let (once, _) = normalize(&img, -0.5, 0.5).unwrap();
    let (twice, _) = normalize(&once, -0.5, 0.5).unwrap();
    for (a, b) in once.data().iter().zip(twice.data()) {
        assert!((a - b).abs() <= 1e-6);
    }
}

proptest! {
    #[test]
    fn denormalize_inverts_normalize(values in prop::collection::vec(-1000.0f64..1000.0, 16), seed in 0u64..4) {
        let mut v = values;
        v[0] = -1000.5 - seed as f64; // guarantee a non-degenerate range
        let img = Tensor::<f64>::image(4, 4, v).unwrap();
        let (n, p) = normalize(&img, -0.5, 0.5).unwrap();
        let back = denormalize(&n, &p);
        for (a, b) in img.data().iter().zip(back.data()) {
            prop_assert!((a - b).abs() <= 1e-6 * a.abs().max(1.0));
        }
    }
}

#[test]
fn default_downsample_is_172_wide_52_high() {
    let img = ellipse_phantom(256, 2);
    let small = downsample(&img, &spec_for(256)).unwrap();
    assert_eq!(small.shape(), &[1, 1, 52, 172]);
}

#[test]
fn downsample_preserves_constants() {
    let img = Tensor::<f64>::full(&[1, 1, 64, 64], 0.3);
    let small = downsample(&img, &spec_for(64)).unwrap();
    assert_eq!(small.shape(), &[1, 1, 14, 44]);
    assert!(small.data().iter().all(|&v| (v - 0.3).abs() <= 1e-6));
}

#[test]
fn downsample_by_two_matches_scalar_oracle() {
    let img = ellipse_phantom(64, 3);
    let spec = DegradeSpec {
        factor_horizontal: 2.0,
        factor_vertical: 2.0,
        output_dims: (64, 64),
        ..DegradeSpec::default()
    };
    let small = downsample(&img, &spec).unwrap();
    assert_eq!(small.shape(), &[1, 1, 32, 32]);
    for y in 0..32 {
        for x in 0..32 {
            let want = bilinear_oracle(img.data(), 64, 64, 32, 32, x, y);
            assert!((small.data()[y * 32 + x] - want).abs() < 1e-12);
        }
    }
}

#[test]
fn resize_preserves_constants() {
    let img = Tensor::<f64>::full(&[1, 1, 7, 5], -0.25);
    for target in [(3, 3), (17, 9), (256, 256)] {
        let out = bilinear_resize(&img, target).unwrap();
        assert_eq!(out.shape(), &[1, 1, target.1, target.0]);
        assert!(out.data().iter().all(|&v| v == -0.25));
    }
}

#[test]
fn resize_2x2_to_4x4_half_pixel_values() {
    let img = Tensor::<f64>::image(2, 2, vec![0.0, 1.0, 2.0, 3.0]).unwrap();
    let out = bilinear_resize(&img, (4, 4)).unwrap();
    // value(x, y) = x + 2y sampled at clamped coordinates {0, 0.25, 0.75, 1}
    let frozen = [
        0.0, 0.25, 0.75, 1.0, //
        0.5, 0.75, 1.25, 1.5, //
        1.5, 1.75, 2.25, 2.5, //
        2.0, 2.25, 2.75, 3.0,
    ];
    for y in 0..4 {
        for x in 0..4 {
            let oracle = bilinear_oracle(img.data(), 2, 2, 4, 4, x, y);
            assert!((oracle - frozen[y * 4 + x]).abs() < 1e-15);
            assert!((out.data()[y * 4 + x] - oracle).abs() < 1e-12);
        }
    }
}

#[test]
fn resize_reproduces_horizontal_ramp() {
    let (w, h) = (9, 4);
    let ramp: Vec<f64> = (0..h).flat_map(|_| (0..w).map(|x| x as f64 / (w - 1) as f64)).collect();
    let img = Tensor::<f64>::image(h, w, ramp).unwrap();
    let out = bilinear_resize(&img, (2 * w, 2 * h)).unwrap();
    for y in 0..2 * h {
        for x in 0..2 * w {
            let src_x = ((x as f64 + 0.5) / 2.0 - 0.5).clamp(0.0, (w - 1) as f64);
            let want = src_x / (w - 1) as f64;
            assert!((out.data()[y * 2 * w + x] - want).abs() <= 1e-5);
        }
    }
}

#[test]
fn resize_rejects_zero_target() {
    let img = Tensor::<f64>::zeros(&[1, 1, 4, 4]);
    assert!(bilinear_resize(&img, (0, 4)).is_err());
}

#[test]
fn identity_augmentation_is_exact() {
    let img = ellipse_phantom(32, 4);
    let mut r = sample_rng(1, 0);
    let out = augment(&img, &AugmentSpec::identity(), &mut r).unwrap();
    assert_eq!(out.data(), img.data());
}

#[test]
fn full_turn_rotation_returns_original() {
    let img = ellipse_phantom(32, 5);
    let out = warp_affine(&img, 360.0, 1.0, (0.0, 0.0)).unwrap();
    let mae: f64 = img.data().iter().zip(out.data()).map(|(a, b)| (a - b).abs()).sum::<f64>()
        / img.len() as f64;
    assert!(mae <= 1e-3, "mean abs error {mae}");
}

#[test]
fn augmentation_replays_for_a_fixed_seed() {
    let img = ellipse_phantom(32, 6);
    let spec = AugmentSpec::default();
    let a = augment(&img, &spec, &mut sample_rng(9, 3)).unwrap();
    let b = augment(&img, &spec, &mut sample_rng(9, 3)).unwrap();
    assert_eq!(a.data(), b.data());
    let c = augment(&img, &spec, &mut sample_rng(9, 4)).unwrap();
    assert_ne!(a.data(), c.data());
}

#[test]
fn augmentation_clamps_invalid_magnitudes() {
    let img = ellipse_phantom(16, 7);
    let spec = AugmentSpec {
        rotation_max_deg: -5.0,
        crop_frac: 3.0,
        blur_sigma_max: f64::NAN,
        ..AugmentSpec::default()
    };
    let out = augment(&img, &spec, &mut sample_rng(0, 0)).unwrap();
    assert!(out.all_finite());
}

#[test]
fn constant_input_gives_zero_residual() {
    let img = Tensor::<f32>::full(&[1, 1, 32, 32], 0.7);
    let pair = make_pair(&img, &spec_for(32), &mut sample_rng(0, 0)).unwrap();
    assert!(pair.residual_target.data().iter().all(|&v| v == 0.0));
}

#[test]
fn default_pair_on_256_phantom() {
    let img = ellipse_phantom(256, 8).cast::<f32>();
    let pair = make_pair(&img, &spec_for(256), &mut sample_rng(0, 0)).unwrap();
    assert_eq!(pair.intermediate_dims, (172, 52));
    for t in [&pair.hf, &pair.lf_bilinear, &pair.residual_target] {
        assert_eq!(t.shape(), &[1, 1, 256, 256]);
    }
    let (lo, hi) = pair.hf.min_max();
    assert!(lo >= -0.5 - 1e-6 && hi <= 0.5 + 1e-6);
}

#[test]
fn pairs_reconstruct_bit_exactly_and_replay() {
    for seed in 0..20 {
        let img = ellipse_phantom(64, 100 + seed).cast::<f32>();
        let spec = DegradeSpec {
            augment: Some(AugmentSpec::default()),
            ..spec_for(64)
        };
        let pair = make_pair(&img, &spec, &mut sample_rng(seed, 0)).unwrap();
        for ((h, l), r) in pair.hf.data().iter().zip(pair.lf_bilinear.data()).zip(pair.residual_target.data()) {
            assert_eq!(*h, l + r);
        }
        let again = make_pair(&img, &spec, &mut sample_rng(seed, 0)).unwrap();
        assert_eq!(pair, again);
    }
}

#[test]
fn every_stage_preserves_constants() {
    let img = Tensor::<f64>::full(&[1, 1, 64, 64], -0.1);
    let spec = spec_for(64);
    let small = downsample(&img, &spec).unwrap();
    let back = bilinear_resize(&small, (64, 64)).unwrap();
    let aug = augment(&img, &AugmentSpec::default(), &mut sample_rng(3, 3)).unwrap();
    for t in [&small, &back, &aug] {
        assert!(t.data().iter().all(|&v| (v + 0.1).abs() <= 1e-6));
    }
}

#[test]
fn wrong_input_dims_are_rejected() {
    let img = ellipse_phantom(32, 9);
    assert!(make_pair(&img, &spec_for(64), &mut sample_rng(0, 0)).is_err());
}
