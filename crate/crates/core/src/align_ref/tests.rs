use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::imaging::{center_crop, resize_bicubic_to};
use crate::sim::synth_scene;
use crate::Error;

fn rand_map(seed: u64, c: usize, h: usize, w: usize) -> FeatureMap {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    FeatureMap::from_fn(c, h, w, |_, _, _| r.random_range(-1.0..1.0))
}

/// Exhaustive argmax written independently of the implementation.
fn brute_force(ref_feat: &FeatureMap, lr: &FeatureMap) -> Vec<(usize, f64)> {
    let cos = |a: &[f64], b: &[f64]| {
        let na = a.iter().map(|v| v * v).sum::<f64>().sqrt();
        let nb = b.iter().map(|v| v * v).sum::<f64>().sqrt();
        if na == 0.0 || nb == 0.0 {
            0.0
        } else {
            a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / (na * nb)
        }
    };
    let mut out = Vec::new();
    for y in 0..lr.height() {
        for x in 0..lr.width() {
            let a = lr.vector_at(y, x);
            let mut best = (0, f64::NEG_INFINITY);
            for ry in 0..ref_feat.height() {
                for rx in 0..ref_feat.width() {
                    let s = cos(&a, &ref_feat.vector_at(ry, rx));
                    if s > best.1 + 1e-12 {
                        best = (ry * ref_feat.width() + rx, s);
                    }
                }
            }
            out.push(best);
        }
    }
    out
}

#[test]
fn identical_features_give_the_identity_map() {
    let f = rand_map(1, 8, 5, 6);
    let idx = match_index_map(&f, &f).unwrap();
    assert_eq!(idx.index, IndexMap::identity(5, 6).index);
    assert!(idx.score.iter().all(|s| (s - 1.0).abs() < 1e-12));
}

#[test]
fn hand_built_two_by_two_grids() {
    // Reference vectors along the axes; anchor vectors closest to a known one.
    let r = FeatureMap::new(2, 2, 2, vec![1.0, 0.0, -1.0, 0.0, 0.0, 1.0, 0.0, -1.0]).unwrap();
    // ref(0,0)=(1,0) ref(0,1)=(0,1) ref(1,0)=(-1,0) ref(1,1)=(0,-1)
    let a = FeatureMap::new(2, 2, 2, vec![0.1, -3.0, 2.0, 0.2, 2.0, 0.0, 0.1, -1.0]).unwrap();
    // anchor (0,0)=(0.1,2) → ref 1; (0,1)=(-3,0) → ref 2; (1,0)=(2,0.1) → ref 0; (1,1)=(0.2,-1) → ref 3
    let idx = match_index_map(&r, &a).unwrap();
    assert_eq!(idx.index, vec![1, 2, 0, 3]);
    let expected = brute_force(&r, &a);
    assert_eq!(idx.index, expected.iter().map(|e| e.0).collect::<Vec<_>>());
    for (s, e) in idx.score.iter().zip(&expected) {
        assert!((s - e.1).abs() < 1e-12);
    }
    assert_eq!(idx.pairs, 16);
}

#[test]
fn ties_and_zero_vectors_follow_the_conventions() {
    // Two identical reference vectors: the smaller raster index wins.
    let r = FeatureMap::new(2, 1, 3, vec![0.0, 1.0, 1.0, 0.0, 0.0, 0.0]).unwrap();
    let a = FeatureMap::new(2, 1, 2, vec![1.0, 0.0, 0.0, 0.0]).unwrap();
    let idx = match_index_map(&r, &a).unwrap();
    assert_eq!(idx.index[0], 1);
    assert_eq!(idx.score[0], 1.0);
    // A zero anchor vector scores 0 everywhere and takes index 0.
    assert_eq!((idx.index[1], idx.score[1]), (0, 0.0));
}

#[test]
fn channel_mismatch_is_rejected() {
    let r = rand_map(2, 4, 3, 3);
    let a = rand_map(3, 5, 3, 3);
    assert!(matches!(match_index_map(&r, &a), Err(Error::ShapeMismatch(_))));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn matching_equals_brute_force_on_small_grids(
        seed in any::<u64>(), rh in 1usize..=4, rw in 1usize..=4, h in 1usize..=4, w in 1usize..=4,
    ) {
        let r = rand_map(seed, 6, rh, rw);
        let a = rand_map(seed ^ 0xabcdef, 6, h, w);
        let idx = match_index_map(&r, &a).unwrap();
        let bf = brute_force(&r, &a);
        prop_assert_eq!(idx.index.clone(), bf.iter().map(|e| e.0).collect::<Vec<_>>());
        for (s, e) in idx.score.iter().zip(&bf) {
            prop_assert!((s - e.1).abs() < 1e-12);
        }
        prop_assert!(idx.index.iter().all(|&i| i < rh * rw));
    }

    #[test]
    fn matching_is_invariant_to_positive_vector_scaling(seed in any::<u64>(), which in any::<bool>()) {
        let r = rand_map(seed, 6, 4, 4);
        let a = rand_map(seed.wrapping_add(1), 6, 3, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scale = |f: &FeatureMap, rng: &mut ChaCha8Rng| {
            let (c, h, w) = f.shape();
            let s: Vec<f64> = (0..h * w).map(|_| rng.random_range(0.1..10.0)).collect();
            FeatureMap::from_fn(c, h, w, |ch, y, x| f.get(ch, y, x) * s[y * w + x])
        };
        let base = match_index_map(&r, &a).unwrap();
        let scaled = if which {
            match_index_map(&scale(&r, &mut rng), &a).unwrap()
        } else {
            match_index_map(&r, &scale(&a, &mut rng)).unwrap()
        };
        prop_assert_eq!(base.index, scaled.index);
    }

    #[test]
    fn warp_outputs_are_reference_vectors(seed in any::<u64>()) {
        let r = rand_map(seed, 3, 3, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut idx = IndexMap::identity(5, 2);
        idx.ref_height = 3;
        idx.ref_width = 4;
        idx.index = (0..10).map(|_| rng.random_range(0..12)).collect();
        let out = warp_ref(&r, &idx).unwrap();
        let refs: Vec<Vec<f64>> = (0..12).map(|i| r.vector_at(i / 4, i % 4)).collect();
        for y in 0..5 {
            for x in 0..2 {
                prop_assert!(refs.contains(&out.vector_at(y, x)));
            }
        }
    }
}

#[test]
fn scaling_every_reference_vector_by_five_keeps_the_map() {
    let r = rand_map(4, 6, 4, 4);
    let a = rand_map(5, 6, 4, 4);
    let r5 = FeatureMap::from_fn(6, 4, 4, |c, y, x| 5.0 * r.get(c, y, x));
    assert_eq!(match_index_map(&r, &a).unwrap().index, match_index_map(&r5, &a).unwrap().index);
}

#[test]
fn warp_ref_examples() {
    let r = rand_map(6, 4, 3, 3);
    assert_eq!(warp_ref(&r, &IndexMap::identity(3, 3)).unwrap(), r);
    let mut constant = IndexMap::identity(3, 3);
    constant.index = vec![0; 9];
    let out = warp_ref(&r, &constant).unwrap();
    for y in 0..3 {
        for x in 0..3 {
            assert_eq!(out.vector_at(y, x), r.vector_at(0, 0));
        }
    }
    let mut random = IndexMap::identity(3, 3);
    random.index = vec![8, 3, 3, 0, 7, 1, 5, 2, 6];
    let out = warp_ref(&r, &random).unwrap();
    for (p, &i) in random.index.iter().enumerate() {
        for c in 0..4 {
            assert_eq!(out.get(c, p / 3, p % 3), r.data()[c * 9 + i]);
        }
    }
    let mut bad = IndexMap::identity(3, 3);
    bad.index[4] = 9;
    assert!(warp_ref(&r, &bad).is_err());
    assert!(warp_ref(&rand_map(7, 4, 2, 2), &IndexMap::identity(3, 3)).is_err());
}

#[test]
fn center_paste_geometry_and_locality() {
    let warped = rand_map(8, 48, 16, 16);
    let ref_img = ImagePlane::from_fn(16, 16, 3, |y, x, c| ((y * 16 + x) * 3 + c) as f64 / 768.0);
    let out = center_paste(&warped, &ref_img, 4).unwrap();
    let patch = pixel_unshuffle(&FeatureMap::from_image(&ref_img), 4).unwrap();
    for c in 0..48 {
        for y in 0..16 {
            for x in 0..16 {
                let inside = (6..10).contains(&y) && (6..10).contains(&x);
                let expected = if inside { patch.get(c, y - 6, x - 6) } else { warped.get(c, y, x) };
                assert_eq!(out.get(c, y, x).to_bits(), expected.to_bits());
            }
        }
    }
    assert_eq!(center_paste(&out, &ref_img, 4).unwrap(), out);
    let big = ImagePlane::filled(80, 80, 3, 0.5);
    assert!(matches!(center_paste(&warped, &big, 4), Err(Error::ShapeMismatch(_))));
    assert!(center_paste(&rand_map(9, 12, 16, 16), &ref_img, 4).is_err());
}

fn scene(seed: u64) -> ImagePlane {
    synth_scene(seed, 256, 256).unwrap()
}

#[test]
fn full_footprint_reference_matches_its_own_content() {
    let ex = MatchExtractor::new(7, 32, 4).unwrap();
    let sharp = resize_bicubic_to(&scene(20), 64, 64).unwrap();
    let anchor = resize_bicubic_to(&sharp, 16, 16).unwrap();
    let out = align_ref_features(&sharp, 4.0, &anchor, &ex).unwrap();
    assert!(!out.pasted);
    assert_eq!(out.features.shape(), (48, 16, 16));
    let near = (0..16 * 16)
        .filter(|&p| {
            let (ry, rx) = out.index.at(p / 16, p % 16);
            (ry as isize - (p / 16) as isize).abs() <= 1 && (rx as isize - (p % 16) as isize).abs() <= 1
        })
        .count();
    assert!(out.index.mean_score() > 0.9, "mean score {}", out.index.mean_score());
    assert!(near as f64 / 256.0 > 0.9, "{near}/256 indices land on corresponding content");
}

#[test]
fn central_reference_is_pasted_and_matched() {
    let ex = MatchExtractor::new(7, 32, 4).unwrap();
    let (mut hits, mut score) = (0, 0.0);
    for seed in 20..24 {
        let sharp = resize_bicubic_to(&scene(seed), 64, 64).unwrap();
        let anchor = resize_bicubic_to(&sharp, 16, 16).unwrap();
        let tele = center_crop(&sharp, 4.0).unwrap();
        let out = align_ref_features(&tele, 4.0, &anchor, &ex).unwrap();
        assert!(out.pasted);
        let patch = pixel_unshuffle(&FeatureMap::from_image(&tele), 4).unwrap();
        for c in 0..48 {
            for y in 0..4 {
                for x in 0..4 {
                    assert_eq!(out.features.get(c, 6 + y, 6 + x), patch.get(c, y, x));
                }
            }
        }
        for y in 0..4 {
            for x in 0..4 {
                hits += (out.index.at(6 + y, 6 + x) == (y, x)) as usize;
                score += out.index.score[(6 + y) * 16 + 6 + x] / 64.0;
            }
        }
    }
    // Inside the footprint the matches point at the corresponding reference
    // cell; the 4×4 reference grid is all border, so some cells miss.
    assert!(hits >= 40, "{hits}/64 footprint matches");
    assert!(score > 0.75, "footprint score {score}");
}

#[test]
fn wide_reference_is_resampled_before_matching() {
    let ex = MatchExtractor::new(7, 32, 4).unwrap();
    let sharp = resize_bicubic_to(&scene(22), 64, 64).unwrap();
    let anchor = resize_bicubic_to(&sharp, 16, 16).unwrap();
    let wide = resize_bicubic_to(&sharp, 32, 32).unwrap();
    let out = align_ref_features(&wide, 2.0, &anchor, &ex).unwrap();
    assert!(!out.pasted);
    assert_eq!((out.index.ref_height, out.index.ref_width), (16, 16));
    // Half the field of view at 2x density: a strict sub-window, pasted.
    let half = center_crop(&wide, 2.0).unwrap();
    let out = align_ref_features(&half, 2.0, &anchor, &ex).unwrap();
    assert!(out.pasted);
    assert_eq!((out.index.ref_height, out.index.ref_width), (8, 8));
}

#[test]
fn noise_reference_scores_low_but_stays_well_formed() {
    let ex = MatchExtractor::new(7, 32, 4).unwrap();
    let sharp = resize_bicubic_to(&scene(23), 64, 64).unwrap();
    let anchor = resize_bicubic_to(&sharp, 16, 16).unwrap();
    let mut r = ChaCha8Rng::seed_from_u64(3);
    let noise = ImagePlane::from_fn(64, 64, 3, |_, _, _| r.random_range(0.0..1.0));
    let clean = align_ref_features(&sharp, 4.0, &anchor, &ex).unwrap();
    let out = align_ref_features(&noise, 4.0, &anchor, &ex).unwrap();
    assert!(out.features.data().iter().all(|v| v.is_finite()));
    assert_eq!(out.features.shape(), (48, 16, 16));
    let s = out.index.mean_score();
    // The argmax over many candidates keeps the best noise score well above 0.
    assert!(s < clean.index.mean_score() - 0.15, "noise score {s} vs clean {}", clean.index.mean_score());
}

#[test]
fn downsampled_matching_costs_one_256th() {
    let ex = MatchExtractor::new(7, 8, 4).unwrap();
    let sharp = resize_bicubic_to(&scene(24), 64, 64).unwrap();
    let anchor = resize_bicubic_to(&sharp, 16, 16).unwrap();
    let out = align_ref_features(&sharp, 4.0, &anchor, &ex).unwrap();
    // Full-resolution matching compares every 64×64 anchor pixel with every 64×64 reference pixel.
    let full = (64u64 * 64) * (64 * 64);
    assert_eq!(out.index.pairs * 256, full);
}

#[test]
fn extractor_is_deterministic_and_checks_dims() {
    let a = MatchExtractor::new(1, 16, 4).unwrap();
    let b = MatchExtractor::new(1, 16, 4).unwrap();
    let img = resize_bicubic_to(&scene(25), 32, 32).unwrap();
    assert_eq!(a.features(&img).unwrap(), b.features(&img).unwrap());
    assert_eq!(a.features(&img).unwrap().shape(), (16, 8, 8));
    assert!(a.features(&ImagePlane::filled(30, 32, 3, 0.5)).is_err());
    assert!(MatchExtractor::new(1, 16, 3).is_err());
}

