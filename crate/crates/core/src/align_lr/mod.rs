//! Training-time alignment of the LR input toward the GT: flow warping, the
//! auxiliary-LR generator, noise injection and AdaSTN feature deformation.

mod adastn;
mod aux;
mod flow;
mod noise;

pub use adastn::{align_lr_features, AdaStn, AlignMode, Offsets};
pub use aux::{position_preserving_loss, AuxForward, AuxGenerator};
pub use flow::{patch_flow_align, ClassicalFlow, ExternalFlow, FlowProvider, FlowRequest, OracleFlow, WarpedLr};
pub use noise::{add_gaussian, inject_noise, jpeg_roundtrip, NoiseConfig, NoiseMode};

use crate::error::{Error, Result};

/// Which LR-to-GT alignment the training loop applies.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AlignArm {
    /// Raw LR, AdaSTN with zero offsets.
    None,
    /// Flow-warped LR, AdaSTN with zero offsets.
    Flow,
    /// Flow-warped LR plus AdaSTN guided by the auxiliary LR.
    TwoStage,
}

impl AlignArm {
    pub fn name(self) -> &'static str {
        match self {
            AlignArm::None => "none",
            AlignArm::Flow => "flow",
            AlignArm::TwoStage => "two_stage",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        [AlignArm::None, AlignArm::Flow, AlignArm::TwoStage]
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown alignment arm {s:?}")))
    }

    pub fn uses_flow(self) -> bool {
        self != AlignArm::None
    }

    pub fn uses_aux(self) -> bool {
        self == AlignArm::TwoStage
    }
}

/// Flow provider selected by name: `oracle`, `classical` or `external:<dir>`.
pub fn flow_provider(spec: &str) -> Result<Box<dyn FlowProvider + Send + Sync>> {
    match spec {
        "oracle" => Ok(Box::new(OracleFlow)),
        "classical" => Ok(Box::new(ClassicalFlow::default())),
        s => match s.strip_prefix("external:") {
            Some(dir) if !dir.is_empty() => Ok(Box::new(ExternalFlow { dir: dir.into() })),
            _ => Err(Error::Config(format!(
                "unknown flow provider {s:?} (expected oracle, classical or external:<dir>)"
            ))),
        },
    }
}
