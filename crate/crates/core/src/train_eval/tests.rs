use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::Arc;

use proptest::prelude::*;

use super::report::{bar_chart_svg, block_means, crop_montage, loss_curve_svg, moving_average, upscale_nearest};
use super::*;
use crate::align_lr::{AlignArm, FlowProvider, FlowRequest, OracleFlow, Offsets};
use crate::error::{Error, Result};
use crate::imaging::{resize_bicubic, FlowField, ImagePlane, Region};
use crate::nn::{Graph, ParamGroup, Tensor};
use crate::restoration::RefMode;
use crate::sim::{make_training_pair, CaptureParams, SimConfig, TrainingPair};

fn tiny(align: AlignArm, mode: RefMode) -> TrainConfig {
    let mut c = TrainConfig::desk();
    c.steps = Some(4);
    c.batch_size = 2;
    c.lr_patch = 8;
    c.align = align;
    c.aux_width = 4;
    c.perceptual = vec![(4, 1), (4, 2), (4, 2)];
    c.match_channels = 8;
    c.restoration.channels = 8;
    c.restoration.blocks = 2;
    c.restoration.split = 1;
    c.restoration.encoder_width = 8;
    c.restoration.ref_mode = mode;
    c
}

fn small_pairs(seeds: std::ops::Range<u64>) -> Vec<TrainingPair> {
    let sim = SimConfig {
        scene_size: 128,
        ..SimConfig::default()
    };
    seeds
        .map(|s| make_training_pair(&sim.capture(s).unwrap()).unwrap())
        .collect()
}

fn bits(img: &ImagePlane) -> Vec<u64> {
    img.data().iter().map(|v| v.to_bits()).collect()
}

struct PanickingFlow;

impl FlowProvider for PanickingFlow {
    fn name(&self) -> &str {
        "panicking"
    }

    fn estimate(&self, _: &FlowRequest) -> Result<FlowField> {
        panic!("flow provider evaluated at inference")
    }
}

struct FailingFlow;

impl FlowProvider for FailingFlow {
    fn name(&self) -> &str {
        "failing"
    }

    fn estimate(&self, req: &FlowRequest) -> Result<FlowField> {
        if req.key.starts_with("scene_00001") {
            Err(Error::Flow("synthetic failure".into()))
        } else {
            OracleFlow.estimate(req)
        }
    }
}

#[test]
fn paper_preset_matches_published_schedule() {
    let c = TrainConfig::paper();
    assert_eq!(c.batch_size, 16);
    assert_eq!(c.lr_patch, 48);
    assert_eq!(c.epochs, 400);
    assert_eq!((c.beta1, c.beta2), (0.9, 0.999));
    assert_eq!((c.learning_rate, c.learning_rate_decayed), (1e-4, 5e-5));
    // 400 epochs over 32 pairs at batch 16 is 800 steps; the decay lands at epoch 200.
    let total = c.total_steps(32);
    assert_eq!(total, 800);
    assert_eq!(c.learning_rate_at(399, total), 1e-4);
    assert_eq!(c.learning_rate_at(400, total), 5e-5);
    assert_eq!(c.lambda_p, 100.0);
    assert_eq!(c.adastn_stages, 3);
    assert_eq!(c.zero_prob, 0.3);
    assert_eq!(c.loss.lambda, 0.08);
}

#[test]
fn desk_preset_scales_the_schedule() {
    let c = TrainConfig::desk();
    assert_eq!((c.batch_size, c.lr_patch, c.steps), (8, 16, Some(3000)));
    assert_eq!(c.total_steps(20), 3000);
}

#[test]
fn config_round_trips_through_key_values() {
    let mut c = tiny(AlignArm::Flow, RefMode::Both);
    c.seed = 99;
    c.loss.projections = Some(5);
    c.noise.sigma = (0.01, 0.02);
    let back = TrainConfig::from_kv(&c.to_kv()).unwrap();
    assert_eq!(back, c);
    let paper = TrainConfig::from_kv(&TrainConfig::paper().to_kv()).unwrap();
    assert_eq!(paper, TrainConfig::paper());
}

#[test]
fn config_rejects_unknown_keys_and_bad_values() {
    let mut kv = crate::config::KeyValues::new();
    kv.set("no_such_key", "1");
    assert!(matches!(TrainConfig::from_kv(&kv), Err(Error::Config(_))));
    let mut kv = crate::config::KeyValues::new();
    kv.set("r_w", "4");
    assert!(TrainConfig::from_kv(&kv).is_err());
    let mut kv = crate::config::KeyValues::new();
    kv.set("preset", "huge");
    assert!(TrainConfig::from_kv(&kv).is_err());
}

#[test]
fn flags_override_the_preset() {
    let mut kv = crate::config::KeyValues::new();
    kv.set("preset", "paper");
    kv.set("batch_size", "4");
    kv.set("mode", "tzsr");
    let c = TrainConfig::from_kv(&kv).unwrap();
    assert_eq!(c.preset, Preset::Paper);
    assert_eq!(c.batch_size, 4);
    assert_eq!(c.lr_patch, 48);
    assert_eq!(c.restoration.ref_mode, RefMode::Both);
}

#[test]
fn training_is_deterministic_in_the_seed() {
    let pairs = small_pairs(0..3);
    let cfg = tiny(AlignArm::TwoStage, RefMode::Tele);
    let a = train(&pairs, cfg.clone(), |_| {}).unwrap();
    let b = train(&pairs, cfg.clone(), |_| {}).unwrap();
    assert_eq!(trace_csv(&a.trace), trace_csv(&b.trace));
    assert!(a.trace.iter().all(|l| l.aux_loss.is_some()));
    let test = small_pairs(50..52);
    let ea = evaluate(&a.model, &test, &OracleFlow).unwrap();
    let eb = evaluate(&b.model, &test, &OracleFlow).unwrap();
    assert_eq!(ea.to_csv(), eb.to_csv());

    let mut other = cfg;
    other.seed = 1;
    let c = train(&pairs, other, |_| {}).unwrap();
    assert_ne!(trace_csv(&a.trace), trace_csv(&c.trace));
}

#[test]
fn trace_csv_round_trips() {
    let trace = vec![
        StepLog {
            step: 0,
            loss: 0.125,
            aux_loss: Some(3.5),
            learning_rate: 5e-4,
        },
        StepLog {
            step: 1,
            loss: 0.1 + 0.2,
            aux_loss: None,
            learning_rate: 2.5e-4,
        },
    ];
    let text = trace_csv(&trace);
    assert!(text.starts_with("step,loss,aux_loss,learning_rate\n"));
    assert_eq!(parse_trace_csv(&text).unwrap(), trace);
    assert!(parse_trace_csv("step,loss\n1,2\n").is_err());
}

#[test]
fn train_rejects_mismatched_datasets() {
    let mut pairs = small_pairs(0..2);
    let cfg = tiny(AlignArm::None, RefMode::Tele);
    assert!(matches!(train(&[], cfg.clone(), |_| {}), Err(Error::InvalidArgument(_))));
    pairs[1].gt = pairs[1].gt.crop(0, 0, 16, 16).unwrap();
    assert!(matches!(train(&pairs, cfg.clone(), |_| {}), Err(Error::InvalidArgument(_))));
    let mut pairs = small_pairs(0..1);
    pairs[0].ref_w = None;
    assert!(train(&pairs, tiny(AlignArm::None, RefMode::Both), |_| {}).is_err());
    let mut big = cfg;
    big.lr_patch = 64;
    assert!(train(&small_pairs(0..1), big, |_| {}).is_err());
}

#[test]
fn non_finite_loss_aborts_with_the_step() {
    let mut pairs = small_pairs(0..1);
    pairs[0].gt = pairs[0].gt.map(|_| f64::NAN);
    let err = train(&pairs, tiny(AlignArm::None, RefMode::Tele), |_| {}).unwrap_err();
    match err {
        Error::NonFiniteLoss { step, .. } => assert_eq!(step, 0),
        e => panic!("unexpected error {e}"),
    }
}

#[test]
fn inference_output_is_r_t_times_the_input() {
    let pairs = small_pairs(0..1);
    let model = Model::new(tiny(AlignArm::Flow, RefMode::Tele)).unwrap();
    let p = &pairs[0];
    let y = infer(&model, &p.lr, &p.ref_t, None).unwrap();
    assert_eq!(y.dims(), (4 * p.lr.height(), 4 * p.lr.width()));
    assert!(y.data().iter().all(|v| (0.0..=1.0).contains(v)));

    let both = Model::new(tiny(AlignArm::Flow, RefMode::Both)).unwrap();
    assert!(matches!(infer(&both, &p.lr, &p.ref_t, None), Err(Error::InvalidArgument(_))));
    let y = infer(&both, &p.lr, &p.ref_t, p.ref_w.as_ref()).unwrap();
    assert_eq!(y.dims(), p.gt.dims());
}

#[test]
fn inference_never_touches_train_only_machinery() {
    let pairs = small_pairs(0..2);
    let trained = train(&pairs, tiny(AlignArm::TwoStage, RefMode::Both), |_| {}).unwrap();
    let mut model = trained.model;
    let p = &pairs[0];
    let before = infer(&model, &p.lr, &p.ref_t, p.ref_w.as_ref()).unwrap();
    model.detach();
    model.flow = Arc::new(PanickingFlow);
    let after = infer(&model, &p.lr, &p.ref_t, p.ref_w.as_ref()).unwrap();
    assert_eq!(bits(&before), bits(&after));
    // The stubs do abort when they are reached.
    let aux_id = model
        .store
        .iter()
        .find(|(_, q)| q.group == ParamGroup::AuxGenerator)
        .map(|(id, _)| id)
        .unwrap();
    assert!(catch_unwind(AssertUnwindSafe(|| model.store.value(aux_id).shape())).is_err());
    let req = FlowRequest {
        moving: &p.gt,
        fixed: &p.gt,
        truth: None,
        key: "x",
    };
    assert!(catch_unwind(AssertUnwindSafe(|| model.flow.estimate(&req))).is_err());
}

#[test]
fn all_zeroing_draws_reproduce_inference_bit_for_bit() {
    let pairs = small_pairs(0..1);
    let model = Model::new(tiny(AlignArm::TwoStage, RefMode::Tele)).unwrap();
    let p = &pairs[0];
    let prepared = model.prepare(&p.lr, &p.ref_t, None).unwrap();
    let keep = vec![vec![false]; model.cfg.adastn_stages];
    let mut g = Graph::new();
    let aux = g.input(Tensor::from_image(&p.lr));
    let y = model
        .forward(&mut g, &[&prepared], Offsets::Guided { aux, keep: &keep })
        .unwrap();
    let train_path = g.value(y).to_image(0);
    let infer_path = infer(&model, &p.lr, &p.ref_t, None).unwrap();
    assert_eq!(bits(&train_path), bits(&infer_path));
}

#[test]
fn checkpoint_round_trip_is_bitwise() {
    let dir = tempfile::tempdir().unwrap();
    let pairs = small_pairs(0..2);
    let model = train(&pairs, tiny(AlignArm::TwoStage, RefMode::Both), |_| {}).unwrap().model;
    let p = &pairs[1];
    let y = infer(&model, &p.lr, &p.ref_t, p.ref_w.as_ref()).unwrap();

    let full = dir.path().join("full.ckpt");
    save_checkpoint(&full, &model, true).unwrap();
    let loaded = load_checkpoint(&full).unwrap();
    assert_eq!(loaded.cfg, model.cfg);
    for ((_, a), (_, b)) in model.store.iter().zip(loaded.store.iter()) {
        assert_eq!(a.name, b.name);
        assert_eq!(a.value, b.value, "{}", a.name);
    }
    assert_eq!(bits(&y), bits(&infer(&loaded, &p.lr, &p.ref_t, p.ref_w.as_ref()).unwrap()));

    let slim = dir.path().join("slim.ckpt");
    save_checkpoint(&slim, &model, false).unwrap();
    let info = read_checkpoint_info(&slim).unwrap();
    assert_eq!(info.version, CHECKPOINT_VERSION);
    assert!(info.groups.iter().any(|&(g, t)| g == ParamGroup::OffsetEstimator && t));
    assert!(info.params.iter().all(|(_, g)| !g.train_only()));
    let slim_model = load_checkpoint(&slim).unwrap();
    assert_eq!(bits(&y), bits(&infer(&slim_model, &p.lr, &p.ref_t, p.ref_w.as_ref()).unwrap()));
}

#[test]
fn corrupt_checkpoints_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let model = Model::new(tiny(AlignArm::None, RefMode::Tele)).unwrap();
    let path = dir.path().join("m.ckpt");
    save_checkpoint(&path, &model, true).unwrap();
    let bytes = std::fs::read(&path).unwrap();
    assert_eq!(&bytes[..8], CHECKPOINT_MAGIC);

    let bad = dir.path().join("bad.ckpt");
    std::fs::write(&bad, &bytes[..bytes.len() - 3]).unwrap();
    assert!(matches!(load_checkpoint(&bad), Err(Error::Format(_))));
    let mut wrong = bytes.clone();
    wrong[0] = b'X';
    std::fs::write(&bad, &wrong).unwrap();
    assert!(matches!(load_checkpoint(&bad), Err(Error::Format(_))));
    let mut version = bytes.clone();
    version[8] = 9;
    std::fs::write(&bad, &version).unwrap();
    assert!(matches!(load_checkpoint(&bad), Err(Error::Format(_))));
    assert!(matches!(load_checkpoint(&dir.path().join("none")), Err(Error::Io { .. })));
}

#[test]
fn corner_region_excludes_exactly_the_center_window() {
    for (h, w) in [(64, 64), (128, 96), (32, 48)] {
        let area = Region::Corner { ratio: 4.0 }.area(h, w).unwrap();
        assert_eq!(area, h * w - (h / 4) * (w / 4));
    }
}

#[test]
fn bicubic_identity_model_has_consistent_full_and_corner_scores() {
    let sim = SimConfig {
        scene_size: 256,
        base: CaptureParams::clean(2, 4),
        gain_jitter: 0.0,
    };
    let mut full = 0.0;
    let mut corner = 0.0;
    let n = 4;
    for s in 0..n {
        let p = make_training_pair(&sim.capture(s).unwrap()).unwrap();
        let y = resize_bicubic(&p.lr, 4.0).unwrap();
        let m = image_metrics(&p.id, &y, &p.gt, 4).unwrap();
        for v in [m.psnr_full, m.ssim_full, m.psnr_corner, m.ssim_corner] {
            assert!(v.is_finite());
        }
        full += m.psnr_full / n as f64;
        corner += m.psnr_corner / n as f64;
    }
    assert!((full - corner).abs() < 0.5, "full {full:.3} corner {corner:.3}");
}

#[test]
fn evaluate_reports_rows_baseline_and_exclusions() {
    let pairs = small_pairs(0..3);
    let model = Model::new(tiny(AlignArm::Flow, RefMode::Tele)).unwrap();
    let rep = evaluate(&model, &pairs, &FailingFlow).unwrap();
    assert_eq!(rep.rows.len(), 2);
    assert_eq!(rep.baseline.len(), 2);
    assert_eq!(rep.excluded.len(), 1);
    assert_eq!(rep.excluded[0].0, "scene_00001");
    let csv = rep.to_csv();
    assert!(csv.contains("\nid,psnr_full,ssim_full,psnr_corner,ssim_corner,lpips\n"));
    assert!(csv.contains("# excluded = 1\n"));
    assert!(csv.contains("# mode = tele\n") || csv.contains("# restoration.ref_mode = tele\n"));
    let data: Vec<&str> = csv.lines().filter(|l| !l.starts_with('#')).skip(1).collect();
    assert_eq!(data.len(), 3);
    assert!(data[2].starts_with("mean,"));
    assert!(data.iter().all(|l| l.ends_with(',') && l.split(',').count() == 6));
    // The zero-initialized tail makes a fresh model exactly the bicubic baseline.
    let (m, b) = (rep.mean().unwrap(), rep.baseline_mean().unwrap());
    assert!((m.psnr_full - b.psnr_full).abs() < 1e-6);
}

#[test]
fn metric_errors_other_than_flow_propagate() {
    let pairs = small_pairs(0..1);
    let model = Model::new(tiny(AlignArm::Flow, RefMode::Tele)).unwrap();
    let mut p = pairs[0].clone();
    p.eval_flow = Some(FlowField::zeros(3, 3));
    assert!(matches!(evaluate(&model, &[p], &OracleFlow), Err(Error::ShapeMismatch(_))));
}

#[test]
fn moving_average_and_block_means_match_direct_sums() {
    let v = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
    assert_eq!(moving_average(&v, 3), vec![2.0, 3.0, 4.0, 5.0]);
    assert_eq!(block_means(&v, 4), vec![2.5]);
    assert!(moving_average(&v, 7).is_empty());
}

#[test]
fn loss_curve_and_bar_chart_are_valid_svg() {
    let trace: Vec<StepLog> = (0..30)
        .map(|i| StepLog {
            step: i,
            loss: 1.0 / (1.0 + i as f64),
            aux_loss: None,
            learning_rate: 1e-3,
        })
        .collect();
    let svg = loss_curve_svg(&trace, 5).unwrap();
    assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
    assert_eq!(svg.matches("<polyline").count(), 2);
    assert!(loss_curve_svg(&[], 5).is_err());

    let bars = vec![("none".to_string(), 25.0), ("flow".to_string(), 26.5), ("two_stage".to_string(), 26.0)];
    let svg = bar_chart_svg("align", &bars, "corner PSNR (dB)").unwrap();
    let pos = |s: &str| svg.find(&format!(">{s}<")).unwrap();
    assert!(pos("none") < pos("flow") && pos("flow") < pos("two_stage"));
    assert_eq!(svg.matches("<rect").count(), 1 + bars.len());
}

#[test]
fn montage_panels_share_coordinates() {
    let lr = ImagePlane::from_fn(8, 8, 3, |y, x, c| (y * 8 + x) as f64 / 64.0 + c as f64 * 0.0);
    let up = upscale_nearest(&lr, 4);
    let gt = ImagePlane::from_fn(32, 32, 3, |y, x, _| (y * 32 + x) as f64 / 1024.0);
    let m = crop_montage(&[&up, &gt], 8, 12, 10, 2).unwrap();
    assert_eq!(m.dims(), (10, 22));
    for y in 0..10 {
        for x in 0..10 {
            assert_eq!(m.get(y, x, 0), lr.get((8 + y) / 4, (12 + x) / 4, 0));
            assert_eq!(m.get(y, 12 + x, 0), gt.get(8 + y, 12 + x, 0));
        }
        assert_eq!(m.get(y, 10, 1), 1.0);
    }
    assert!(crop_montage(&[&up, &lr], 0, 0, 4, 1).is_err());
}

fn random_image(h: usize, w: usize) -> impl Strategy<Value = ImagePlane> {
    proptest::collection::vec(0.0f64..1.0, h * w * 3).prop_map(move |d| ImagePlane::new(h, w, 3, d).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn metrics_are_invariant_to_joint_horizontal_flip(a in random_image(32, 32), b in random_image(32, 32)) {
        let m = image_metrics("x", &a, &b, 4).unwrap();
        let f = image_metrics("x", &a.flip_horizontal(), &b.flip_horizontal(), 4).unwrap();
        prop_assert!((m.psnr_full - f.psnr_full).abs() < 1e-9);
        prop_assert!((m.psnr_corner - f.psnr_corner).abs() < 1e-9);
        prop_assert!((m.ssim_full - f.ssim_full).abs() < 1e-9);
        prop_assert!((m.ssim_corner - f.ssim_corner).abs() < 1e-9);
    }

    #[test]
    fn moving_average_is_bounded_by_its_window(v in proptest::collection::vec(-5.0f64..5.0, 1..40), w in 1usize..10) {
        let ma = moving_average(&v, w);
        prop_assert_eq!(ma.len(), (v.len() + 1).saturating_sub(w));
        for (i, m) in ma.iter().enumerate() {
            let win = &v[i..i + w];
            let lo = win.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = win.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(*m >= lo - 1e-9 && *m <= hi + 1e-9);
        }
    }
}
