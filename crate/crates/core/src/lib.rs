//! Point-cloud classification with DualNorm.
//!
//! Layers, bottom-up: [`tensor`] holds the autodiff engine, [`geometry`]
//! does sampling and grouping, [`dualnorm`] the two normalizations, and
//! [`network`] assembles the classifier. [`train`], [`data`] and [`cli`]
//! sit on top.

pub mod cli;
pub mod data;
pub mod dualnorm;
pub mod error;
pub mod geometry;
pub mod gradsuite;
pub mod network;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
