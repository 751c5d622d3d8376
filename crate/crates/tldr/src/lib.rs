//! Desk-scale texture-learning domain randomization (TLDR) for semantic
//! segmentation.
//!
//! The crate trains a small convolutional segmentation model on procedurally
//! generated multi-domain data. Training combines four losses: cross-entropy
//! on original and stylized source images, a texture regularization loss that
//! keeps the task model's Gram-matrix statistics close to a frozen reference
//! encoder, and a texture generalization loss that aligns stylized-image
//! Grams with random-style Grams under Random Style Masking. Everything runs
//! on a from-scratch reverse-mode tensor engine so gradients can be audited
//! with finite differences.

pub mod analyze;
pub mod autodiff;
pub mod cli;
pub mod imgio;
pub mod nets;
pub mod numeric;
pub mod stylize;
pub mod synthdata;
pub mod texture;
pub mod train;

mod error;

pub use error::Error;

pub type Result<T> = std::result::Result<T, Error>;
