//! The full trainable model, its per-sample inputs and the detached inference path.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::TrainConfig;
use crate::align_lr::{flow_provider, AdaStn, AuxGenerator, FlowProvider, Offsets};
use crate::align_ref::{align_ref_features, MatchExtractor};
use crate::error::{ensure, Error, Result};
use crate::imaging::{center_crop, FeatureMap, ImagePlane};
use crate::nn::{Graph, ParamGroup, ParamStore, Tensor, Var};
use crate::restoration::{RestorationNet, RestoreInputs};

/// Every network of the method plus the fixed matching extractor and the
/// training-time flow provider.
pub struct Model {
    pub cfg: TrainConfig,
    pub store: ParamStore,
    pub adastn: AdaStn,
    pub aux: AuxGenerator,
    pub restore: RestorationNet,
    pub matcher: MatchExtractor,
    /// Used only by the training loop.
    pub flow: Arc<dyn FlowProvider + Send + Sync>,
}

impl std::fmt::Debug for Model {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Model")
            .field("params", &self.store.len())
            .field("flow", &self.flow.name())
            .finish()
    }
}

impl Model {
    /// Fresh initialization, deterministic in `cfg.seed`.
    pub fn new(cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x1417_a11c);
        let mut store = ParamStore::new();
        let c = cfg.restoration.channels;
        let adastn = AdaStn::new(&mut store, &mut rng, c, cfg.adastn_stages, cfg.zero_prob)?;
        let aux = AuxGenerator::new(&mut store, &mut rng, cfg.aux_width, cfg.r_t() as u32, cfg.aux_init_noise)?;
        let restore = RestorationNet::new(&mut store, &mut rng, cfg.restoration.clone())?;
        store.quantize_f32();
        let matcher = MatchExtractor::new(cfg.match_seed, cfg.match_channels, cfg.r_t() as u32)?;
        let flow = Arc::from(flow_provider(&cfg.flow)?);
        Ok(Self {
            cfg,
            store,
            adastn,
            aux,
            restore,
            matcher,
            flow,
        })
    }

    /// Makes any read of the train-only parameter groups panic.
    pub fn detach(&mut self) {
        for g in ParamGroup::ALL {
            if g.train_only() {
                self.store.poison(g);
            }
        }
    }

    /// Reference alignment and encoder inputs for one LR anchor.
    ///
    /// `t` has `r_t` and `w` has `r_w` pixels per anchor pixel.
    pub fn prepare(&self, anchor: &ImagePlane, t: &ImagePlane, w: Option<&ImagePlane>) -> Result<Prepared> {
        let mode = self.cfg.restoration.ref_mode;
        let r_t = self.cfg.r_t();
        ensure!(anchor.channels() == 3, InvalidArgument, "LR input must be RGB");
        let (ref_t, ref_t_img) = if mode.uses_tele() {
            let a = align_ref_features(t, r_t as f64, anchor, &self.matcher)?;
            (Some(a.features), Some(t.clone()))
        } else {
            (None, None)
        };
        let (ref_w, ref_w_img) = if mode.uses_wide() {
            let w = w.ok_or_else(|| {
                Error::InvalidArgument(format!("mode {} needs the wide-angle image", mode.name()))
            })?;
            let a = align_ref_features(w, self.cfg.r_w as f64, anchor, &self.matcher)?;
            (Some(a.features), Some(w.clone()))
        } else {
            (None, None)
        };
        Ok(Prepared {
            lr: anchor.clone(),
            ref_t,
            ref_w,
            ref_t_img,
            ref_w_img,
            center: center_crop(anchor, r_t as f64)?,
        })
    }

    /// Restoration output `[N, 3, r_t·h, r_t·w]` for a batch of prepared
    /// samples. `lr` may differ from the samples' anchors (the train-time
    /// AdaSTN input); `offsets` selects the guided or the `P = 0` path.
    pub fn forward(&self, g: &mut Graph, batch: &[&Prepared], offsets: Offsets) -> Result<Var> {
        ensure!(!batch.is_empty(), InvalidArgument, "empty batch");
        let lr_t = Tensor::from_images(&batch.iter().map(|p| &p.lr).collect::<Vec<_>>())?;
        let lr = g.input(lr_t.clone());
        let feats = self.adastn.forward(g, &self.store, lr, offsets)?;
        let stack_feats = |g: &mut Graph, f: fn(&Prepared) -> Option<&FeatureMap>| -> Result<Option<Var>> {
            let maps: Option<Vec<&FeatureMap>> = batch.iter().map(|p| f(p)).collect();
            maps.map(|m| Tensor::from_features(&m).map(|t| g.input(t))).transpose()
        };
        let stack_imgs = |f: fn(&Prepared) -> Option<&ImagePlane>| -> Result<Option<Tensor>> {
            let imgs: Option<Vec<&ImagePlane>> = batch.iter().map(|p| f(p)).collect();
            imgs.map(|i| Tensor::from_images(&i)).transpose()
        };
        let ref_t = stack_feats(g, |p| p.ref_t.as_ref())?;
        let ref_w = stack_feats(g, |p| p.ref_w.as_ref())?;
        let ref_t_img = stack_imgs(|p| p.ref_t_img.as_ref())?;
        let ref_w_img = stack_imgs(|p| p.ref_w_img.as_ref())?;
        let center = Tensor::from_images(&batch.iter().map(|p| &p.center).collect::<Vec<_>>())?;
        let inputs = RestoreInputs {
            lr_feats: feats,
            ref_t,
            ref_w,
            ref_t_img: ref_t_img.as_ref(),
            ref_w_img: ref_w_img.as_ref(),
            center: &center,
            lr_img: &lr_t,
        };
        self.restore.forward(g, &self.store, &inputs)
    }
}

/// One sample's network inputs on the LR grid.
#[derive(Clone, Debug, PartialEq)]
pub struct Prepared {
    /// LR image: AdaSTN input, matching anchor and bicubic base.
    pub lr: ImagePlane,
    pub ref_t: Option<FeatureMap>,
    pub ref_w: Option<FeatureMap>,
    pub ref_t_img: Option<ImagePlane>,
    pub ref_w_img: Option<ImagePlane>,
    /// Central `1/r_t` window of the anchor.
    pub center: ImagePlane,
}

fn crop_feature(f: &FeatureMap, top: usize, left: usize, h: usize, w: usize) -> FeatureMap {
    FeatureMap::from_fn(f.channels(), h, w, |c, y, x| f.get(c, top + y, left + x))
}

impl Prepared {
    /// LR-grid window; reference images and the centre stay whole.
    pub fn crop(&self, top: usize, left: usize, h: usize, w: usize) -> Result<Prepared> {
        Ok(Prepared {
            lr: self.lr.crop(top, left, h, w)?,
            ref_t: self.ref_t.as_ref().map(|f| crop_feature(f, top, left, h, w)),
            ref_w: self.ref_w.as_ref().map(|f| crop_feature(f, top, left, h, w)),
            ref_t_img: self.ref_t_img.clone(),
            ref_w_img: self.ref_w_img.clone(),
            center: self.center.clone(),
        })
    }
}

/// Super-resolves `u` with telephoto reference `t` (and wide-angle `w` when
/// the model uses it). Runs AdaSTN with `P = 0`; never reads the flow
/// provider, the auxiliary generator or the offset estimators.
pub fn infer(model: &Model, u: &ImagePlane, t: &ImagePlane, w: Option<&ImagePlane>) -> Result<ImagePlane> {
    let p = model.prepare(u, t, w)?;
    let mut g = Graph::new();
    let y = model.forward(&mut g, &[&p], Offsets::Zero)?;
    Ok(g.value(y).to_image(0).clamp01())
}
