//! Prostate zonal segmentation on T2-weighted MRI slices.
//!
//! The crate bundles a small reverse-mode autodiff engine, the
//! encoder/pyramid-attention/decoder network and a U-Net baseline, the
//! training recipe, Dice-based stratified evaluation, and Wilcoxon tests
//! for comparing DSC populations.

pub mod autodiff;
pub mod data;
pub mod error;
pub mod metrics;
pub mod net;
pub mod parallel;
pub mod seeding;
pub mod stats;
pub mod tensor;
pub mod train;

pub use autodiff::{Tape, Var};
pub use error::{Error, Result};
pub use tensor::{Tensor, TensorError};
