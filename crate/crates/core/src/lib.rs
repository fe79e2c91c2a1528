//! Automatic labeling of tabletop RGB-D scenes: objectness proposals from
//! point clouds, a sparse variational GP teacher trained on a few hand labels,
//! and a small student distilled from the teacher's soft labels.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod camera;
pub mod cloud;
pub mod distill;
pub mod error;
pub mod eval;
pub mod image;
pub mod linalg;
pub mod objectness;
pub mod optim;
pub mod pipeline;
pub mod scale;
pub mod spatial;
pub mod synth;
pub mod teacher;

pub use error::{Error, Result};
