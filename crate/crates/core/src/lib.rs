//! Self-supervised reference-based super-resolution from dual and triple
//! zoomed observations.

pub mod align_lr;
pub mod align_ref;
pub mod config;
pub mod error;
pub mod imaging;
pub mod losses;
pub mod nn;
pub mod restoration;
pub mod sim;
pub mod train_eval;

pub use error::{Error, Result};
