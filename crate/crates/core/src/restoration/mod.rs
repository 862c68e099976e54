//! The super-resolution network: fuses aligned LR and reference features,
//! modulates residual blocks with channel vectors, and upsamples to `r_t×`
//! on top of a bicubic base.

use rand::Rng;

use crate::config::parse_value;
use crate::error::{ensure, Error, Result};
use crate::nn::{he_normal, zeros_bias, zeros_weight, Graph, ParamGroup, ParamId, ParamStore, Tensor, Var};

const SLOPE: f64 = 0.2;
const ENCODER_LAYERS: usize = 4;
/// Per-image colour statistics: channel means then channel standard deviations.
pub const STAT_LEN: usize = 6;

/// Which references feed the network.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RefMode {
    /// Telephoto only (DZSR).
    Tele,
    /// Wide-angle only.
    Wide,
    /// Both references (TZSR).
    Both,
}

impl RefMode {
    pub fn name(self) -> &'static str {
        match self {
            RefMode::Tele => "tele",
            RefMode::Wide => "wide",
            RefMode::Both => "both",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "tele" | "dzsr" => Ok(RefMode::Tele),
            "wide" => Ok(RefMode::Wide),
            "both" | "tzsr" => Ok(RefMode::Both),
            _ => Err(Error::Config(format!("unknown reference mode {s:?} (tele, wide, both)"))),
        }
    }

    pub fn uses_tele(self) -> bool {
        self != RefMode::Wide
    }

    pub fn uses_wide(self) -> bool {
        self != RefMode::Tele
    }
}

/// How the two references are merged when both are used.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FusionOrder {
    WideThenTele,
    TeleThenWide,
    ConcatAll,
}

impl FusionOrder {
    pub fn name(self) -> &'static str {
        match self {
            FusionOrder::WideThenTele => "w-then-t",
            FusionOrder::TeleThenWide => "t-then-w",
            FusionOrder::ConcatAll => "concat-all",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        [FusionOrder::WideThenTele, FusionOrder::TeleThenWide, FusionOrder::ConcatAll]
            .into_iter()
            .find(|o| o.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown fusion order {s:?} (w-then-t, t-then-w, concat-all)")))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RestorationConfig {
    pub channels: usize,
    pub blocks: usize,
    /// Blocks run before the second reference is merged (progressive fusion).
    pub split: usize,
    pub encoder_width: usize,
    pub r_t: usize,
    pub ref_mode: RefMode,
    pub fusion: FusionOrder,
}

impl Default for RestorationConfig {
    fn default() -> Self {
        Self {
            channels: 64,
            blocks: 16,
            split: 8,
            encoder_width: 64,
            r_t: 4,
            ref_mode: RefMode::Tele,
            fusion: FusionOrder::WideThenTele,
        }
    }
}

impl RestorationConfig {
    /// Reduced width and depth for CPU-scale runs.
    pub fn desk() -> Self {
        Self {
            channels: 16,
            blocks: 8,
            split: 4,
            encoder_width: 16,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(self.channels > 0 && self.encoder_width > 0, Config, "channel counts must be positive");
        ensure!(self.blocks > 0, Config, "need at least one residual block");
        ensure!(
            self.split <= self.blocks,
            Config,
            "fusion split {} exceeds block count {}",
            self.split,
            self.blocks
        );
        ensure!(
            self.r_t >= 2 && self.r_t.is_power_of_two(),
            Config,
            "r_t must be a power of two >= 2, got {}",
            self.r_t
        );
        Ok(())
    }

    /// Applies `key = value`; returns `false` for keys it does not own.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        match key {
            "channels" => self.channels = parse_value(key, value)?,
            "blocks" => self.blocks = parse_value(key, value)?,
            "split" => self.split = parse_value(key, value)?,
            "encoder_width" => self.encoder_width = parse_value(key, value)?,
            "r_t" => self.r_t = parse_value(key, value)?,
            "ref_mode" => self.ref_mode = RefMode::parse(value)?,
            "fusion" => self.fusion = FusionOrder::parse(value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    pub fn entries(&self) -> Vec<(&'static str, String)> {
        vec![
            ("channels", self.channels.to_string()),
            ("blocks", self.blocks.to_string()),
            ("split", self.split.to_string()),
            ("encoder_width", self.encoder_width.to_string()),
            ("r_t", self.r_t.to_string()),
            ("ref_mode", self.ref_mode.name().to_string()),
            ("fusion", self.fusion.name().to_string()),
        ]
    }

    /// Channels of a gathered reference feature map (`3·r_t²`).
    pub fn ref_channels(&self) -> usize {
        3 * self.r_t * self.r_t
    }

    fn stat_images(&self) -> usize {
        1 + usize::from(self.ref_mode.uses_tele()) + usize::from(self.ref_mode.uses_wide())
    }

    /// Whether a second reference is merged mid-backbone.
    fn progressive(&self) -> bool {
        self.ref_mode == RefMode::Both && self.fusion != FusionOrder::ConcatAll
    }
}

type Conv = (ParamId, ParamId);

#[derive(Clone, Debug)]
struct Block {
    c1: Conv,
    c2: Conv,
}

/// Inputs of one forward pass; every tensor carries the same batch size.
#[derive(Clone, Copy, Debug)]
pub struct RestoreInputs<'a> {
    /// Aligned LR features `[N, C, H, W]`.
    pub lr_feats: Var,
    /// Gathered telephoto reference `[N, 3·r_t², H, W]`.
    pub ref_t: Option<Var>,
    /// Gathered wide-angle reference `[N, 3·r_t², H, W]`.
    pub ref_w: Option<Var>,
    pub ref_t_img: Option<&'a Tensor>,
    pub ref_w_img: Option<&'a Tensor>,
    /// Central area of the (warped) LR image.
    pub center: &'a Tensor,
    /// LR image whose bicubic upscale is the output base `[N, 3, H, W]`.
    pub lr_img: &'a Tensor,
}

#[derive(Clone, Debug)]
pub struct RestorationNet {
    cfg: RestorationConfig,
    adapt_t: Option<Conv>,
    adapt_w: Option<Conv>,
    head: Conv,
    merge: Option<Conv>,
    blocks: Vec<Block>,
    body: Conv,
    encoder: Vec<Conv>,
    fc1: Conv,
    fc2: Conv,
    up: Vec<Conv>,
}

fn add_conv(
    store: &mut ParamStore,
    name: &str,
    weight: Tensor,
) -> Conv {
    let cout = weight.shape()[0];
    (
        store.add(format!("{name}.w"), ParamGroup::Restoration, weight),
        store.add(format!("{name}.b"), ParamGroup::Restoration, zeros_bias(cout)),
    )
}

fn conv(g: &mut Graph, store: &ParamStore, c: Conv, x: Var, stride: usize, pad: usize) -> Var {
    let w = g.param(store, c.0);
    let b = g.param(store, c.1);
    g.conv2d(x, w, Some(b), stride, pad)
}

/// Per-sample channel means and standard deviations of `[N, 3, H, W]`.
pub fn color_stats(t: &Tensor) -> Vec<[f64; STAT_LEN]> {
    let [n, c, h, w] = t.shape();
    assert_eq!(c, 3, "colour statistics need RGB");
    let hw = (h * w) as f64;
    (0..n)
        .map(|i| {
            let mut s = [0.0; STAT_LEN];
            for (ch, plane) in t.sample(i).chunks_exact(h * w).enumerate() {
                let mean = plane.iter().sum::<f64>() / hw;
                let var = plane.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / hw;
                s[ch] = mean;
                s[3 + ch] = var.sqrt();
            }
            s
        })
        .collect()
}

/// Bicubic `×r` upscale of every sample.
pub fn bicubic_base(lr: &Tensor, r: usize) -> Result<Tensor> {
    let n = lr.n();
    let ups = (0..n)
        .map(|i| crate::imaging::resize_bicubic(&lr.to_image(i), r as f64))
        .collect::<Result<Vec<_>>>()?;
    Tensor::from_images(&ups.iter().collect::<Vec<_>>())
}

impl RestorationNet {
    pub fn new(store: &mut ParamStore, rng: &mut impl Rng, cfg: RestorationConfig) -> Result<Self> {
        cfg.validate()?;
        let c = cfg.channels;
        let rc = cfg.ref_channels();
        let adapt_t = cfg
            .ref_mode
            .uses_tele()
            .then(|| add_conv(store, "restore.adapt_t", he_normal(rng, c, rc, 1, 1.0)));
        let adapt_w = cfg
            .ref_mode
            .uses_wide()
            .then(|| add_conv(store, "restore.adapt_w", he_normal(rng, c, rc, 1, 1.0)));
        let head_in = if cfg.ref_mode == RefMode::Both && cfg.fusion == FusionOrder::ConcatAll {
            3 * c
        } else {
            2 * c
        };
        let head = add_conv(store, "restore.head", he_normal(rng, c, head_in, 3, 1.0));
        let merge = cfg
            .progressive()
            .then(|| add_conv(store, "restore.merge", he_normal(rng, c, 2 * c, 1, 1.0)));
        let blocks = (0..cfg.blocks)
            .map(|b| Block {
                c1: add_conv(store, &format!("restore.rb{b}.c1"), he_normal(rng, c, c, 3, 1.0)),
                c2: add_conv(store, &format!("restore.rb{b}.c2"), he_normal(rng, c, c, 3, 0.1)),
            })
            .collect();
        let body = add_conv(store, "restore.body", he_normal(rng, c, c, 3, 1.0));
        let e = cfg.encoder_width;
        let encoder = (0..ENCODER_LAYERS)
            .map(|l| {
                let cin = if l == 0 { c } else { e };
                add_conv(store, &format!("restore.enc{l}"), he_normal(rng, e, cin, 3, 1.0))
            })
            .collect();
        let stats = STAT_LEN * cfg.stat_images();
        let fc1 = add_conv(store, "restore.fc1", he_normal(rng, e, e + stats, 1, 1.0));
        let fc2 = add_conv(store, "restore.fc2", he_normal(rng, c * cfg.blocks, e, 1, 0.1));
        let stages = cfg.r_t.trailing_zeros() as usize;
        let up = (0..stages)
            .map(|s| {
                if s + 1 == stages {
                    add_conv(store, &format!("restore.up{s}"), zeros_weight(12, c, 3))
                } else {
                    add_conv(store, &format!("restore.up{s}"), he_normal(rng, 4 * c, c, 3, 1.0))
                }
            })
            .collect();
        Ok(Self {
            cfg,
            adapt_t,
            adapt_w,
            head,
            merge,
            blocks,
            body,
            encoder,
            fc1,
            fc2,
            up,
        })
    }

    pub fn config(&self) -> &RestorationConfig {
        &self.cfg
    }

    fn check(&self, g: &Graph, inp: &RestoreInputs) -> Result<()> {
        let [n, c, h, w] = g.value(inp.lr_feats).shape();
        ensure!(
            c == self.cfg.channels,
            ShapeMismatch,
            "LR features have {c} channels, network expects {}",
            self.cfg.channels
        );
        let want = [n, self.cfg.ref_channels(), h, w];
        for (used, v, img, name) in [
            (self.cfg.ref_mode.uses_tele(), inp.ref_t, inp.ref_t_img, "tele"),
            (self.cfg.ref_mode.uses_wide(), inp.ref_w, inp.ref_w_img, "wide"),
        ] {
            if !used {
                continue;
            }
            let v = v.ok_or_else(|| Error::InvalidArgument(format!("{name} reference features missing")))?;
            ensure!(
                g.value(v).shape() == want,
                ShapeMismatch,
                "{name} reference features {:?}, expected {want:?}",
                g.value(v).shape()
            );
            let img = img.ok_or_else(|| Error::InvalidArgument(format!("{name} reference image missing")))?;
            ensure!(
                img.n() == n && img.c() == 3,
                ShapeMismatch,
                "{name} reference image {:?}",
                img.shape()
            );
        }
        ensure!(
            inp.center.n() == n && inp.center.c() == 3,
            ShapeMismatch,
            "centre image {:?}",
            inp.center.shape()
        );
        ensure!(
            inp.lr_img.shape() == [n, 3, h, w],
            ShapeMismatch,
            "LR image {:?} vs features on a {h}x{w} grid",
            inp.lr_img.shape()
        );
        Ok(())
    }

    fn stats_input(&self, inp: &RestoreInputs) -> Tensor {
        let mut sources = Vec::new();
        if self.cfg.ref_mode.uses_tele() {
            sources.push(color_stats(inp.ref_t_img.expect("checked")));
        }
        if self.cfg.ref_mode.uses_wide() {
            sources.push(color_stats(inp.ref_w_img.expect("checked")));
        }
        sources.push(color_stats(inp.center));
        let n = inp.center.n();
        let len = STAT_LEN * sources.len();
        let data = (0..n).flat_map(|i| sources.iter().flat_map(move |s| s[i])).collect();
        Tensor::from_vec([n, len, 1, 1], data).expect("shape")
    }

    /// Channel vectors `[N, C, 1, 1]`, one per block, each entry in `(0, 2)`.
    pub fn modulation_vectors(&self, g: &mut Graph, store: &ParamStore, fused: Var, inp: &RestoreInputs) -> Vec<Var> {
        let mut h = fused;
        for &e in &self.encoder {
            h = conv(g, store, e, h, 2, 1);
            h = g.leaky_relu(h, SLOPE);
        }
        let pooled = g.global_avg_pool(h);
        let stats = g.input(self.stats_input(inp));
        let z = g.concat(&[pooled, stats]);
        let z = conv(g, store, self.fc1, z, 1, 0);
        let z = g.leaky_relu(z, SLOPE);
        let z = conv(g, store, self.fc2, z, 1, 0);
        let s = g.sigmoid(z);
        let m = g.scale(s, 2.0);
        let c = self.cfg.channels;
        (0..self.cfg.blocks).map(|b| g.slice_channels(m, b * c, c)).collect()
    }

    /// `x + m ⊙ conv(lrelu(conv(x)))` over blocks `range`.
    fn run_blocks(&self, g: &mut Graph, store: &ParamStore, mut x: Var, mods: &[Var], range: std::ops::Range<usize>) -> Var {
        for b in range {
            let blk = &self.blocks[b];
            let h = conv(g, store, blk.c1, x, 1, 1);
            let h = g.leaky_relu(h, SLOPE);
            let h = conv(g, store, blk.c2, h, 1, 1);
            let h = g.mul_channels(h, mods[b]);
            x = g.add(x, h);
        }
        x
    }

    /// Head fusion, backbone and long skip; returns LR-grid features.
    fn trunk(&self, g: &mut Graph, store: &ParamStore, inp: &RestoreInputs) -> Var {
        let t = self.adapt_t.map(|a| conv(g, store, a, inp.ref_t.expect("checked"), 1, 0));
        let w = self.adapt_w.map(|a| conv(g, store, a, inp.ref_w.expect("checked"), 1, 0));
        let (first, second) = match (t, w) {
            (Some(t), None) => (vec![t], None),
            (None, Some(w)) => (vec![w], None),
            (Some(t), Some(w)) => match self.cfg.fusion {
                FusionOrder::WideThenTele => (vec![w], Some(t)),
                FusionOrder::TeleThenWide => (vec![t], Some(w)),
                FusionOrder::ConcatAll => (vec![w, t], None),
            },
            (None, None) => unreachable!("every mode uses a reference"),
        };
        let mut parts = vec![inp.lr_feats];
        parts.extend(first);
        let cat = g.concat(&parts);
        let h0 = conv(g, store, self.head, cat, 1, 1);
        let h0 = g.leaky_relu(h0, SLOPE);
        let mods = self.modulation_vectors(g, store, h0, inp);
        let x = match (second, self.merge) {
            (Some(r2), Some(merge)) => {
                let x = self.run_blocks(g, store, h0, &mods, 0..self.cfg.split);
                let cat = g.concat(&[x, r2]);
                let x = conv(g, store, merge, cat, 1, 0);
                self.run_blocks(g, store, x, &mods, self.cfg.split..self.cfg.blocks)
            }
            _ => self.run_blocks(g, store, h0, &mods, 0..self.cfg.blocks),
        };
        let x = conv(g, store, self.body, x, 1, 1);
        g.add(x, h0)
    }

    /// Output `[N, 3, r_t·H, r_t·W]`: bicubic base of the LR image plus the learned residual.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, inp: &RestoreInputs) -> Result<Var> {
        self.check(g, inp)?;
        let mut x = self.trunk(g, store, inp);
        let last = self.up.len() - 1;
        for (s, &u) in self.up.iter().enumerate() {
            x = conv(g, store, u, x, 1, 1);
            x = g.pixel_shuffle(x, 2);
            if s != last {
                x = g.leaky_relu(x, SLOPE);
            }
        }
        let base = g.input(bicubic_base(inp.lr_img, self.cfg.r_t)?);
        Ok(g.add(base, x))
    }
}
