use super::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_image(h: usize, w: usize, c: usize, seed: u64) -> ImagePlane {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ImagePlane::from_fn(h, w, c, |_, _, _| rng.random::<f64>())
}

fn index_image(h: usize, w: usize) -> ImagePlane {
    ImagePlane::from_fn(h, w, 1, |y, x, _| (y * w + x) as f64 / (h * w) as f64)
}

#[test]
fn center_crop_sizes_and_offsets() {
    let img = index_image(256, 256);
    let c = center_crop(&img, 4.0).unwrap();
    assert_eq!(c.dims(), (64, 64));
    assert_eq!(c.get(0, 0, 0), img.get(96, 96, 0));

    let img = index_image(48, 48);
    let c = center_crop(&img, 4.0).unwrap();
    assert_eq!(c.dims(), (12, 12));
    assert_eq!(c.get(0, 0, 0), img.get(18, 18, 0));

    assert_eq!(center_crop(&img, 1.0).unwrap(), img);
}

#[test]
fn center_crop_odd_remainder_biases_up_left() {
    let img = index_image(7, 9);
    let c = center_crop(&img, 2.0).unwrap();
    assert_eq!(c.dims(), (3, 4));
    // (7-3)/2 = 2, (9-4)/2 = 2 (floored)
    assert_eq!(c.get(0, 0, 0), img.get(2, 2, 0));
}

#[test]
fn center_crop_rejects_bad_ratios() {
    let img = index_image(8, 8);
    assert!(center_crop(&img, 0.5).is_err());
    assert!(center_crop(&img, 9.0).is_err());
}

#[test]
fn center_crop_composes() {
    let img = random_image(64, 96, 3, 1);
    for (a, b) in [(2.0, 2.0), (2.0, 4.0), (4.0, 2.0)] {
        let twice = center_crop(&center_crop(&img, a).unwrap(), b).unwrap();
        let once = center_crop(&img, a * b).unwrap();
        assert_eq!(twice, once, "a={a} b={b}");
    }
}

#[test]
fn resize_reproduces_constants() {
    let img = ImagePlane::filled(10, 12, 3, 0.5);
    let up = resize_bicubic(&img, 4.0).unwrap();
    assert_eq!(up.dims(), (40, 48));
    assert!(up.data().iter().all(|v| (v - 0.5).abs() < 1e-12));
    let down = resize_bicubic(&img, 0.25).unwrap();
    assert_eq!(down.dims(), (3, 3));
    assert!(down.data().iter().all(|v| (v - 0.5).abs() < 1e-12));
}

#[test]
fn resize_identity_scale() {
    let img = random_image(13, 17, 3, 2);
    let same = resize_bicubic(&img, 1.0).unwrap();
    let dev = img
        .data()
        .iter()
        .zip(same.data())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    assert!(dev < 1e-6);
    assert!(resize_bicubic(&img, 0.0).is_err());
    assert!(resize_bicubic(&img, -2.0).is_err());
}

#[test]
fn resize_matches_direct_kernel_evaluation() {
    // Direct 2-D evaluation of the cubic kernel with clamped taps.
    let img = ImagePlane::from_fn(8, 8, 1, |y, x, _| (x as f64 + 2.0 * y as f64) / 21.0);
    let up = resize_bicubic(&img, 2.0).unwrap();
    for oy in 0..16 {
        for ox in 0..16 {
            let sy = (oy as f64 + 0.5) / 2.0 - 0.5;
            let sx = (ox as f64 + 0.5) / 2.0 - 0.5;
            let mut acc = 0.0;
            let mut wsum = 0.0;
            for iy in -3..=10_i32 {
                for ix in -3..=10_i32 {
                    let wgt = cubic_kernel(iy as f64 - sy) * cubic_kernel(ix as f64 - sx);
                    acc += wgt * img.get_clamped(iy as isize, ix as isize, 0);
                    wsum += wgt;
                }
            }
            let expected = (acc / wsum).clamp(0.0, 1.0);
            assert!(
                (up.get(oy, ox, 0) - expected).abs() < 1e-12,
                "({oy},{ox}) {} vs {expected}",
                up.get(oy, ox, 0)
            );
        }
    }
}

#[test]
fn unshuffle_shape_and_order() {
    let f = FeatureMap::zeros(3, 64, 64);
    assert_eq!(pixel_unshuffle(&f, 4).unwrap().shape(), (48, 16, 16));
    let f = FeatureMap::zeros(48, 16, 16);
    assert_eq!(pixel_shuffle(&f, 4).unwrap().shape(), (3, 64, 64));

    let (a, b, c, d) = (1.0, 2.0, 3.0, 4.0);
    let f = FeatureMap::new(1, 2, 2, vec![a, b, c, d]).unwrap();
    let u = pixel_unshuffle(&f, 2).unwrap();
    assert_eq!(u.shape(), (4, 1, 1));
    assert_eq!(u.data(), &[a, b, c, d]);

    let s = pixel_shuffle(&u, 2).unwrap();
    assert_eq!(s.shape(), (1, 2, 2));
    assert_eq!(s.data(), &[a, b, c, d]);
}

#[test]
fn shuffle_rejects_indivisible() {
    assert!(pixel_unshuffle(&FeatureMap::zeros(1, 6, 8), 4).is_err());
    assert!(pixel_shuffle(&FeatureMap::zeros(6, 2, 2), 2).is_err());
}

proptest! {
    #[test]
    fn shuffle_roundtrip(c in 1usize..4, h in 1usize..4, w in 1usize..4, r in 1usize..4, seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let f = FeatureMap::from_fn(c, h * r, w * r, |_, _, _| rng.random::<f64>());
        let back = pixel_shuffle(&pixel_unshuffle(&f, r).unwrap(), r).unwrap();
        prop_assert_eq!(&back, &f);
        let g = FeatureMap::from_fn(c * r * r, h, w, |_, _, _| rng.random::<f64>());
        let back = pixel_unshuffle(&pixel_shuffle(&g, r).unwrap(), r).unwrap();
        prop_assert_eq!(&back, &g);
    }
}

#[test]
fn warp_zero_flow_is_identity() {
    let img = random_image(9, 11, 3, 3);
    let out = backward_warp(&img, &FlowField::zeros(9, 11)).unwrap();
    assert_eq!(out, img);
}

#[test]
fn warp_unit_shift_duplicates_last_column() {
    let img = index_image(5, 6);
    let out = backward_warp(&img, &FlowField::constant(5, 6, 1.0, 0.0)).unwrap();
    for y in 0..5 {
        for x in 0..6 {
            let sx = (x + 1).min(5);
            assert_eq!(out.get(y, x, 0), img.get(y, sx, 0));
        }
    }
}

#[test]
fn warp_half_pixel_on_ramp_gives_midpoints() {
    let img = ImagePlane::from_fn(4, 8, 1, |_, x, _| x as f64 / 10.0);
    let out = backward_warp(&img, &FlowField::constant(4, 8, 0.5, 0.0)).unwrap();
    for x in 0..7 {
        let mid = (img.get(0, x, 0) + img.get(0, x + 1, 0)) / 2.0;
        assert!((out.get(2, x, 0) - mid).abs() < 1e-12);
    }
    assert_eq!(out.get(2, 7, 0), img.get(2, 7, 0));
}

#[test]
fn warp_integer_flows_equal_clamped_index_shift() {
    let img = random_image(8, 8, 2, 4);
    for dy in -9..=9_i32 {
        for dx in -9..=9_i32 {
            let flow = FlowField::constant(8, 8, dx as f64, dy as f64);
            let out = backward_warp(&img, &flow).unwrap();
            for y in 0..8 {
                for x in 0..8 {
                    for c in 0..2 {
                        let expected =
                            img.get_clamped(y as isize + dy as isize, x as isize + dx as isize, c);
                        assert_eq!(out.get(y, x, c), expected);
                    }
                }
            }
        }
    }
}

#[test]
fn warp_rejects_mismatched_flow() {
    let img = random_image(4, 4, 1, 5);
    assert!(backward_warp(&img, &FlowField::zeros(4, 5)).is_err());
}

#[test]
fn psnr_closed_forms() {
    let zero = ImagePlane::filled(8, 8, 3, 0.0);
    let half = ImagePlane::filled(8, 8, 3, 0.5);
    let one = ImagePlane::filled(8, 8, 3, 1.0);
    assert_eq!(psnr(&zero, &zero).unwrap(), f64::INFINITY);
    assert!((psnr(&zero, &half).unwrap() - 6.020599913279624).abs() < 1e-9);
    assert!(psnr(&zero, &one).unwrap().abs() < 1e-12);
    assert!(psnr(&zero, &ImagePlane::filled(8, 7, 3, 0.0)).is_err());
}

#[test]
fn ssim_identity_and_inversion() {
    let a = random_image(32, 32, 3, 6);
    assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
    let inv = a.map(|v| 1.0 - v);
    assert!(ssim(&a, &inv).unwrap() < 0.5);
}

#[test]
fn ssim_of_constants_is_luminance_term() {
    let (la, lb) = (0.2, 0.7);
    let a = ImagePlane::filled(16, 16, 1, la);
    let b = ImagePlane::filled(16, 16, 1, lb);
    let c1 = 0.01f64.powi(2);
    let expected = (2.0 * la * lb + c1) / (la * la + lb * lb + c1);
    assert!((ssim(&a, &b).unwrap() - expected).abs() < 1e-12);
}

#[test]
fn ssim_rejects_small_images() {
    let a = random_image(10, 20, 1, 7);
    assert!(ssim(&a, &a).is_err());
}

#[test]
fn metrics_symmetric_and_flip_invariant() {
    for seed in 0..4 {
        let a = random_image(24, 20, 3, 10 + seed);
        let b = random_image(24, 20, 3, 20 + seed);
        let (fa, fb) = (a.flip_horizontal(), b.flip_horizontal());
        assert_eq!(psnr(&a, &b).unwrap(), psnr(&b, &a).unwrap());
        assert!((psnr(&a, &b).unwrap() - psnr(&fa, &fb).unwrap()).abs() < 1e-12);
        assert!((ssim(&a, &b).unwrap() - ssim(&b, &a).unwrap()).abs() < 1e-12);
        assert!((ssim(&a, &b).unwrap() - ssim(&fa, &fb).unwrap()).abs() < 1e-12);
        // Even flooring remainder, so the window is mirror-symmetric.
        let corner = Region::Corner { ratio: 2.0 };
        assert!(
            (psnr_region(&a, &b, corner).unwrap() - psnr_region(&fa, &fb, corner).unwrap()).abs()
                < 1e-12
        );
    }
}

#[test]
fn corner_region_area() {
    let r = Region::Corner { ratio: 4.0 };
    assert_eq!(r.area(64, 64).unwrap(), 64 * 64 - 16 * 16);
    assert_eq!(Region::Full.area(64, 48).unwrap(), 64 * 48);
}

#[test]
fn dihedral_group_laws() {
    let img = random_image(5, 7, 2, 8);
    for i in 0..8 {
        let t = Dihedral::from_index(i);
        let once = t.apply_image(&img);
        if !t.transpose {
            // pure flips are involutions
            assert_eq!(t.apply_image(&once), img);
        }
    }
    let h = Dihedral {
        flip_h: true,
        ..Dihedral::IDENTITY
    };
    assert_eq!(h.apply_image(&img), img.flip_horizontal());
}

#[test]
fn dihedral_keeps_warp_consistent() {
    // warp(T(img), T(flow)) == T(warp(img, flow)) for integer flows
    let img = random_image(6, 6, 1, 9);
    let flow = FlowField::from_fn(6, 6, |y, x| (((x + y) % 3) as f64 - 1.0, ((x * y) % 3) as f64 - 1.0));
    for i in 0..8 {
        let t = Dihedral::from_index(i);
        let lhs = backward_warp(&t.apply_image(&img), &t.apply_flow(&flow)).unwrap();
        let mut inner = backward_warp(&img, &flow).unwrap();
        inner = t.apply_image(&inner);
        // clamping commutes with the square's symmetries
        assert_eq!(lhs, inner, "transform {i}");
    }
}

#[test]
fn flow_inversion_undoes_smooth_field() {
    let flow = FlowField::from_fn(24, 24, |y, x| {
        (1.5 * (x as f64 / 7.0).sin(), 1.2 * (y as f64 / 9.0).cos())
    });
    let inv = flow.invert(8);
    // composing: f(q + g(q)) + g(q) ≈ 0
    let mut worst = 0.0f64;
    for y in 4..20 {
        for x in 4..20 {
            let (gx, gy) = inv.at(y, x);
            let (fx, fy) = flow.sample(y as f64 + gy, x as f64 + gx);
            worst = worst.max((fx + gx).abs()).max((fy + gy).abs());
        }
    }
    assert!(worst < 1e-6, "{worst}");
}
