//! Siamese metric learning for visual style compatibility between furniture
//! items, sized to run on a laptop.
//!
//! The crate covers a small reverse-mode autodiff engine, the Siamese and
//! visual-text models built on it, their losses, pair sampling, training,
//! evaluation, dataset curation, retrieval and a synthetic data generator
//! with planted style structure.

// `!(x > 0.0)` is used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autodiff;
pub mod cli;
pub mod curation;
pub mod dataset;
pub mod error;
pub mod evaluation;
pub mod io;
pub mod losses;
pub mod models;
pub mod retrieval;
pub mod rng;
pub mod sampling;
pub mod synthetic;
pub mod training;

pub use error::{Error, Result};
