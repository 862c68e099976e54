//! Pixel- and feature-level primitives shared by every other module.

mod geometry;
pub mod io;
pub mod metrics;
mod plane;

pub use geometry::{
    backward_warp, center_crop, center_window, cubic_kernel, gaussian_blur, pixel_shuffle,
    pixel_unshuffle, resize_bicubic, resize_bicubic_to, Dihedral,
};
pub use metrics::{psnr, psnr_region, ssim, ssim_region, Region};
pub use plane::{FeatureMap, FlowField, ImagePlane};

#[cfg(test)]
mod tests;
