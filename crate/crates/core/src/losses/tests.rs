#![allow(clippy::needless_range_loop)]

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

fn fmap(c: usize, h: usize, w: usize, vals: Vec<f64>) -> FeatureMap {
    FeatureMap::new(c, h, w, vals).unwrap()
}

fn random_map(rng: &mut ChaCha8Rng, c: usize, h: usize, w: usize) -> FeatureMap {
    fmap(c, h, w, (0..c * h * w).map(|_| rng.random_range(-1.0..1.0)).collect())
}

fn unit_row(c: usize) -> ProjectionMatrix {
    let mut r = vec![0.0; c];
    r[0] = 1.0;
    ProjectionMatrix::from_rows(&[r]).unwrap()
}

/// Mean-form 1-D W1 by exhaustive assignment search.
fn w1_brute_force(a: &[f64], b: &[f64]) -> f64 {
    fn permute(k: usize, idx: &mut Vec<usize>, a: &[f64], b: &[f64], best: &mut f64) {
        if k == idx.len() {
            let cost: f64 = idx.iter().enumerate().map(|(i, &j)| (a[i] - b[j]).abs()).sum();
            *best = best.min(cost / a.len() as f64);
            return;
        }
        for i in k..idx.len() {
            idx.swap(k, i);
            permute(k + 1, idx, a, b, best);
            idx.swap(k, i);
        }
    }
    let mut best = f64::INFINITY;
    permute(0, &mut (0..a.len()).collect(), a, b, &mut best);
    best
}

#[test]
fn l1_closed_forms() {
    let a = ImagePlane::filled(4, 4, 3, 0.25);
    let b = ImagePlane::filled(4, 4, 3, 0.5);
    assert_eq!(l1_loss(&a, &a).unwrap(), 0.0);
    assert!((l1_loss(&a, &b).unwrap() - 0.25).abs() < 1e-15);
    assert_eq!(l1_loss(&a, &b).unwrap(), l1_loss(&b, &a).unwrap());
    assert!(l1_loss(&a, &ImagePlane::filled(4, 5, 3, 0.0)).is_err());
}

#[test]
fn losw_hand_examples() {
    let m = unit_row(1);
    let u = fmap(1, 1, 3, vec![1.0, 3.0, 2.0]);
    let v = fmap(1, 1, 3, vec![2.0, 1.0, 3.0]);
    assert_eq!(sw_loss(&u, &v, &m).unwrap(), 0.0);
    let z = fmap(1, 4, 4, vec![0.0; 16]);
    let o = fmap(1, 4, 4, vec![1.0; 16]);
    assert_eq!(sw_loss(&z, &o, &m).unwrap(), 1.0);
    assert_eq!(losw_loss(&z, &o, &m, 4, 2).unwrap(), 1.0);
    assert_eq!(losw_loss(&z, &z, &m, 2, 1).unwrap(), 0.0);
}

#[test]
fn losw_rejects_bad_geometry() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let u = random_map(&mut rng, 2, 6, 6);
    let m = ProjectionMatrix::random(&mut rng, 2, 2);
    assert!(losw_loss(&u, &u, &m, 4, 4).is_err());
    assert!(losw_loss(&u, &u, &m, 7, 2).is_err());
    assert!(losw_loss(&u, &u, &m, 0, 0).is_err());
    assert!(losw_loss(&u, &random_map(&mut rng, 2, 6, 5), &m, 4, 2).is_err());
    assert!(losw_loss(&u, &u, &ProjectionMatrix::random(&mut rng, 2, 3), 4, 2).is_err());
}

#[test]
fn single_patch_single_projection_is_exact_w1() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for n in 1..=8 {
        for _ in 0..5 {
            let c = rng.random_range(1..4);
            let u = random_map(&mut rng, c, 1, n);
            let v = random_map(&mut rng, c, 1, n);
            let m = ProjectionMatrix::random(&mut rng, 1, c);
            let proj = |f: &FeatureMap| -> Vec<f64> {
                (0..n).map(|x| (0..c).map(|ch| m.row(0)[ch] * f.get(ch, 0, x)).sum()).collect()
            };
            let oracle = w1_brute_force(&proj(&u), &proj(&v));
            assert!((sw_loss(&u, &v, &m).unwrap() - oracle).abs() < 1e-9);
        }
    }
}

#[test]
fn permutation_within_patch_is_invisible_exhaustively() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let u = random_map(&mut rng, 2, 2, 2);
    let v = random_map(&mut rng, 2, 2, 2);
    let m = ProjectionMatrix::random(&mut rng, 3, 2);
    let base = sw_loss(&u, &v, &m).unwrap();
    let perms = permutations(4);
    assert_eq!(perms.len(), 24);
    for p in &perms {
        for q in &perms {
            let pu = permute_pixels(&u, p);
            let qv = permute_pixels(&v, q);
            assert!((sw_loss(&pu, &qv, &m).unwrap() - base).abs() < 1e-12);
        }
    }
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for i in 0..=p.len() {
            let mut q = p.clone();
            q.insert(i, n - 1);
            out.push(q);
        }
    }
    out
}

fn permute_pixels(f: &FeatureMap, perm: &[usize]) -> FeatureMap {
    let (c, h, w) = f.shape();
    let hw = h * w;
    let mut out = f.clone();
    for ch in 0..c {
        for (dst, &src) in perm.iter().enumerate() {
            out.data_mut()[ch * hw + dst] = f.data()[ch * hw + src];
        }
    }
    out
}

#[test]
fn global_absorbs_cross_patch_permutation_but_local_does_not() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let v = random_map(&mut rng, 1, 8, 8);
    // Swap the left and right halves: a permutation that crosses patches.
    let u = FeatureMap::from_fn(1, 8, 8, |c, y, x| v.get(c, y, (x + 4) % 8));
    let m = unit_row(1);
    assert!(sw_loss(&u, &v, &m).unwrap().abs() < 1e-15);
    assert!(losw_loss(&u, &v, &m, 2, 1).unwrap() > 0.01);
}

#[test]
fn losw_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let (c, h, w) = (3, 6, 6);
    let u = random_map(&mut rng, c, h, w);
    let v = random_map(&mut rng, c, h, w);
    let m = ProjectionMatrix::random(&mut rng, 2, c);
    let layout = PatchLayout::local(4, 2, h, w).unwrap();
    let (_, grad) = sliced_w1(u.data(), v.data(), (c, h, w), &m, layout, true);
    let grad = grad.unwrap();
    let eps = 1e-7;
    for i in 0..u.data().len() {
        let mut p = u.clone();
        p.data_mut()[i] += eps;
        let mut q = u.clone();
        q.data_mut()[i] -= eps;
        let fd = (sliced_w1(p.data(), v.data(), (c, h, w), &m, layout, false).0
            - sliced_w1(q.data(), v.data(), (c, h, w), &m, layout, false).0)
            / (2.0 * eps);
        assert!((fd - grad[i]).abs() <= 1e-3 * fd.abs().max(1e-3), "{i}: {fd} vs {}", grad[i]);
    }
}

#[test]
fn projection_average_is_stable() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let u = random_map(&mut rng, 4, 8, 8);
    let v = random_map(&mut rng, 4, 8, 8);
    let mut avg = || {
        (0..64)
            .map(|_| {
                let m = ProjectionMatrix::random(&mut rng, 4, 4);
                losw_loss(&u, &v, &m, 4, 2).unwrap()
            })
            .sum::<f64>()
            / 64.0
    };
    let (a, b) = (avg(), avg());
    assert!((a - b).abs() / a.max(b) < 0.05, "{a} vs {b}");
}

#[test]
fn projection_rows_are_unit_norm() {
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    let m = ProjectionMatrix::random(&mut rng, 7, 5);
    for r in 0..7 {
        assert!((norm(m.row(r)) - 1.0).abs() < 1e-12);
    }
    assert!(ProjectionMatrix::from_rows(&[vec![0.0, 0.0]]).is_err());
}

#[test]
fn patch_layout_counts() {
    let l = PatchLayout::local(8, 4, 32, 32).unwrap();
    assert_eq!(l.patch_count(32, 32), 49);
    assert_eq!(PatchLayout::global(5, 7).patch_count(5, 7), 1);
}

fn test_phi() -> PerceptualExtractor {
    PerceptualExtractor::random(&mut ChaCha8Rng::seed_from_u64(3), 3, &[(4, 2), (6, 2)]).unwrap()
}

fn random_image(seed: u64, h: usize, w: usize) -> ImagePlane {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ImagePlane::from_fn(h, w, 3, |_, _, _| rng.random_range(0.0..1.0))
}

#[test]
fn total_loss_zero_on_identical_and_l1_when_lambda_zero() {
    let phi = test_phi();
    let y = random_image(1, 16, 16);
    let t = random_image(2, 16, 16);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let cfg = LossConfig {
        stages: vec![0, 1],
        patch: 4,
        stride: 2,
        ..LossConfig::default()
    };
    assert_eq!(total_loss_value(&y, &y, &phi, &cfg, &mut rng).unwrap(), 0.0);
    let off = LossConfig { lambda: 0.0, ..cfg.clone() };
    let l1 = l1_loss(&y, &t).unwrap();
    assert!((total_loss_value(&y, &t, &phi, &off, &mut rng).unwrap() - l1).abs() < 1e-14);
    let l1_only = LossConfig { arm: LossArm::L1, ..cfg.clone() };
    assert!((total_loss_value(&y, &t, &phi, &l1_only, &mut rng).unwrap() - l1).abs() < 1e-14);
    for arm in [LossArm::L1Sw, LossArm::L1Losw] {
        let c = LossConfig { arm, ..cfg.clone() };
        assert!(total_loss_value(&y, &t, &phi, &c, &mut rng).unwrap() > l1_loss(&y, &t).unwrap());
    }
    let bad = LossConfig { stages: vec![5], ..cfg };
    assert!(total_loss_value(&y, &t, &phi, &bad, &mut rng).is_err());
}

#[test]
fn total_loss_gradient_through_phi() {
    let phi = test_phi();
    let t = random_image(4, 8, 8);
    let y0 = random_image(5, 8, 8);
    let cfg = LossConfig {
        stages: vec![0, 1],
        patch: 2,
        stride: 1,
        lambda: 0.5,
        ..LossConfig::default()
    };
    let mut store = ParamStore::new();
    let id = store.add("y", ParamGroup::Restoration, Tensor::from_image(&y0));
    let eval = |s: &ParamStore, want: bool| {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let mut g = Graph::new();
        let y = g.param(s, id);
        let root = total_loss(&mut g, y, &Tensor::from_image(&t), &phi, &cfg, &mut rng).unwrap();
        let v = g.value(root).item();
        (v, want.then(|| g.backward(root).params()))
    };
    let (_, grads) = eval(&store, true);
    let grad = &grads.unwrap()[0].1;
    let eps = 1e-7;
    for i in (0..grad.len()).step_by(7) {
        let mut p = store.clone();
        p.value_mut(id).data_mut()[i] += eps;
        let mut q = store.clone();
        q.value_mut(id).data_mut()[i] -= eps;
        let fd = (eval(&p, false).0 - eval(&q, false).0) / (2.0 * eps);
        assert!((fd - grad.data()[i]).abs() < 1e-3 * fd.abs().max(1e-2), "{i}: {fd} vs {}", grad.data()[i]);
    }
}

#[test]
fn loss_arm_names_round_trip() {
    for a in [LossArm::L1, LossArm::L1Sw, LossArm::L1Losw] {
        assert_eq!(LossArm::parse(a.name()).unwrap(), a);
    }
    assert!(LossArm::parse("gan").is_err());
}

proptest! {
    #[test]
    fn losw_nonnegative_and_zero_on_self(vals in prop::collection::vec(-2.0f64..2.0, 2 * 6 * 6), seed in 0u64..1000) {
        let u = fmap(2, 6, 6, vals);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let v = random_map(&mut rng, 2, 6, 6);
        let m = ProjectionMatrix::random(&mut rng, 3, 2);
        prop_assert!(losw_loss(&u, &v, &m, 3, 2).unwrap() >= 0.0);
        prop_assert_eq!(losw_loss(&u, &u, &m, 3, 2).unwrap(), 0.0);
    }

    #[test]
    fn sw_is_symmetric(seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let u = random_map(&mut rng, 3, 4, 5);
        let v = random_map(&mut rng, 3, 4, 5);
        let m = ProjectionMatrix::random(&mut rng, 2, 3);
        prop_assert!((sw_loss(&u, &v, &m).unwrap() - sw_loss(&v, &u, &m).unwrap()).abs() < 1e-12);
    }
}
