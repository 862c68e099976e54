//! The self-supervised training loop.

use std::collections::hash_map::Entry;
use std::collections::HashMap;

use log::{info, warn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::TrainConfig;
use super::model::{Model, Prepared};
use crate::align_lr::{inject_noise, patch_flow_align, Offsets};
use crate::error::{ensure, Error, Result};
use crate::imaging::{Dihedral, ImagePlane};
use crate::losses::{total_loss, PerceptualExtractor};
use crate::nn::{Adam, Graph, ParamId, Tensor};
use crate::sim::TrainingPair;

/// One optimizer step of the log.
#[derive(Clone, Debug, PartialEq)]
pub struct StepLog {
    pub step: usize,
    pub loss: f64,
    /// Auxiliary-generator objective, when the generator is trained.
    pub aux_loss: Option<f64>,
    pub learning_rate: f64,
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub model: Model,
    pub trace: Vec<StepLog>,
    /// Pairs whose flow alignment failed and were used unwarped.
    pub flow_warnings: Vec<String>,
}

/// Rejects datasets whose geometry does not fit the configuration.
pub fn check_pairs(pairs: &[TrainingPair], cfg: &TrainConfig) -> Result<()> {
    ensure!(!pairs.is_empty(), InvalidArgument, "training set is empty");
    let r_t = cfg.r_t();
    let dims = pairs[0].lr.dims();
    for p in pairs {
        ensure!(
            p.r_t as usize == r_t && p.r_w == cfg.r_w,
            InvalidArgument,
            "pair {} has r_w={} r_t={}, config has r_w={} r_t={r_t}",
            p.id,
            p.r_w,
            p.r_t,
            cfg.r_w
        );
        let (h, w) = p.lr.dims();
        ensure!(
            (h, w) == dims,
            InvalidArgument,
            "pair {} is {h}x{w}, the first pair is {}x{}",
            p.id,
            dims.0,
            dims.1
        );
        ensure!(
            p.gt.dims() == (h * r_t, w * r_t),
            InvalidArgument,
            "pair {}: GT {:?} is not {r_t}x the LR {h}x{w}",
            p.id,
            p.gt.dims()
        );
        ensure!(
            h >= cfg.lr_patch && w >= cfg.lr_patch,
            InvalidArgument,
            "pair {}: LR {h}x{w} smaller than lr_patch {}",
            p.id,
            cfg.lr_patch
        );
        ensure!(
            !cfg.restoration.ref_mode.uses_wide() || p.ref_w.is_some(),
            InvalidArgument,
            "pair {} has no wide-angle reference",
            p.id
        );
    }
    Ok(())
}

/// A flow-aligned, augmented pair with its network inputs.
struct View {
    prepared: Prepared,
    gt: ImagePlane,
}

fn build_view(model: &Model, pair: &TrainingPair, warped: &ImagePlane, d: u8) -> Result<View> {
    let t = Dihedral::from_index(d);
    let anchor = t.apply_image(warped);
    let ref_t = t.apply_image(&pair.ref_t);
    let ref_w = pair.ref_w.as_ref().map(|r| t.apply_image(r));
    Ok(View {
        prepared: model.prepare(&anchor, &ref_t, ref_w.as_ref())?,
        gt: t.apply_image(&pair.gt),
    })
}

fn non_finite(step: usize, what: &str) -> Error {
    Error::NonFiniteLoss {
        step,
        detail: what.to_string(),
    }
}

fn grads_finite(grads: &[(ParamId, Tensor)]) -> bool {
    grads.iter().all(|(_, g)| g.all_finite())
}

/// Trains a freshly initialized model.
pub fn train(pairs: &[TrainingPair], cfg: TrainConfig, on_step: impl FnMut(&StepLog)) -> Result<TrainOutcome> {
    train_model(Model::new(cfg)?, pairs, on_step)
}

/// Per step: augment, flow-align (cached per pair; warping commutes with
/// the dihedral transforms), generator step on its own objective, noise
/// injection, guided AdaSTN with zeroing draws, reference alignment,
/// restoration, total loss and an Adam update. Deterministic in `cfg.seed`.
pub fn train_model(mut model: Model, pairs: &[TrainingPair], mut on_step: impl FnMut(&StepLog)) -> Result<TrainOutcome> {
    let cfg = model.cfg.clone();
    check_pairs(pairs, &cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let phi = PerceptualExtractor::random(&mut ChaCha8Rng::seed_from_u64(cfg.perceptual_seed), 3, &cfg.perceptual)?;

    let mut flow_warnings = Vec::new();
    let mut warped = Vec::with_capacity(pairs.len());
    for p in pairs {
        if cfg.align.uses_flow() {
            let w = patch_flow_align(&p.lr, &p.gt, model.flow.as_ref(), p.align_flow.as_ref(), &p.id)?;
            if let Some(msg) = w.warning {
                flow_warnings.push(format!("{}: {msg}", p.id));
            }
            warped.push(w.image);
        } else {
            warped.push(p.lr.clone());
        }
    }

    let r_t = cfg.r_t();
    let patch = cfg.lr_patch;
    let (lh, lw) = pairs[0].lr.dims();
    let total = cfg.total_steps(pairs.len());
    let mut views: HashMap<(usize, u8), View> = HashMap::new();
    let mut opt = Adam::new(cfg.beta1, cfg.beta2);
    let mut aux_opt = Adam::new(cfg.beta1, cfg.beta2);
    let mut trace = Vec::with_capacity(total);
    info!("training {total} steps on {} pairs", pairs.len());

    for step in 0..total {
        let learning_rate = cfg.learning_rate_at(step, total);
        let mut samples = Vec::with_capacity(cfg.batch_size);
        let mut gts = Vec::with_capacity(cfg.batch_size);
        for _ in 0..cfg.batch_size {
            let i = rng.random_range(0..pairs.len());
            let d: u8 = rng.random_range(0..8);
            let top = rng.random_range(0..=lh - patch);
            let left = rng.random_range(0..=lw - patch);
            let v = match views.entry((i, d)) {
                Entry::Occupied(e) => e.into_mut(),
                Entry::Vacant(e) => e.insert(build_view(&model, &pairs[i], &warped[i], d)?),
            };
            samples.push(v.prepared.crop(top, left, patch, patch)?);
            gts.push(v.gt.crop(top * r_t, left * r_t, patch * r_t, patch * r_t)?);
        }
        let target = Tensor::from_images(&gts.iter().collect::<Vec<_>>())?;

        let mut aux_loss = None;
        let aux_imgs = if cfg.align.uses_aux() {
            let lr_t = Tensor::from_images(&samples.iter().map(|s| &s.lr).collect::<Vec<_>>())?;
            let mut ga = Graph::new();
            let gt_v = ga.input(target.clone());
            let lr_v = ga.input(lr_t.clone());
            let fwd = model.aux.forward(&mut ga, &model.store, gt_v, lr_v)?;
            let obj = model.aux.objective(&mut ga, &fwd, &lr_t, cfg.lambda_p)?;
            let value = ga.value(obj).item();
            if !value.is_finite() {
                return Err(non_finite(step, "auxiliary generator objective"));
            }
            let out = ga.value(fwd.out).clone();
            let grads = ga.backward(obj).params();
            if !grads_finite(&grads) {
                return Err(non_finite(step, "auxiliary generator gradient"));
            }
            aux_opt.step(&mut model.store, &grads, cfg.aux_learning_rate);
            aux_loss = Some(value);
            let noisy = (0..out.n())
                .map(|n| inject_noise(&out.to_image(n), &cfg.noise, &mut rng))
                .collect::<Result<Vec<_>>>()?;
            Some(Tensor::from_images(&noisy.iter().collect::<Vec<_>>())?)
        } else {
            None
        };

        let mut g = Graph::new();
        let keep = model.adastn.draw_keep(cfg.batch_size, &mut rng);
        let offsets = match aux_imgs {
            Some(a) => Offsets::Guided {
                aux: g.input(a),
                keep: &keep,
            },
            None => Offsets::Zero,
        };
        let refs: Vec<&Prepared> = samples.iter().collect();
        let y = model.forward(&mut g, &refs, offsets)?;
        let root = total_loss(&mut g, y, &target, &phi, &cfg.loss, &mut rng)?;
        let loss = g.value(root).item();
        if !loss.is_finite() {
            return Err(non_finite(step, "restoration loss"));
        }
        let grads = g.backward(root).params();
        if !grads_finite(&grads) {
            return Err(non_finite(step, "restoration gradient"));
        }
        opt.step(&mut model.store, &grads, learning_rate);

        let log = StepLog {
            step,
            loss,
            aux_loss,
            learning_rate,
        };
        on_step(&log);
        trace.push(log);
    }
    for w in &flow_warnings {
        warn!("{w}");
    }
    model.store.quantize_f32();
    Ok(TrainOutcome {
        model,
        trace,
        flow_warnings,
    })
}

/// Loss log as CSV: `step,loss,aux_loss,learning_rate`.
pub fn trace_csv(trace: &[StepLog]) -> String {
    let mut s = String::from("step,loss,aux_loss,learning_rate\n");
    for l in trace {
        let aux = l.aux_loss.map_or(String::new(), |a| a.to_string());
        s.push_str(&format!("{},{},{},{}\n", l.step, l.loss, aux, l.learning_rate));
    }
    s
}

/// Parses [`trace_csv`] output.
pub fn parse_trace_csv(text: &str) -> Result<Vec<StepLog>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        let bad = || Error::Format(format!("loss log line {}: {line:?}", n + 1));
        if f.len() != 4 {
            return Err(bad());
        }
        out.push(StepLog {
            step: f[0].parse().map_err(|_| bad())?,
            loss: f[1].parse().map_err(|_| bad())?,
            aux_loss: if f[2].is_empty() {
                None
            } else {
                Some(f[2].parse().map_err(|_| bad())?)
            },
            learning_rate: f[3].parse().map_err(|_| bad())?,
        });
    }
    Ok(out)
}
