//! Embodied test-time adaptation for robotic grasp detection.
//!
//! A robot that fails to find a good grasp from one viewpoint moves to
//! another, assesses the new candidates against its own embodiment and,
//! once it finds a confident grasp, turns that grasp into a pseudo-label
//! for adapting the detector. Past explorations are kept in a knowledge
//! pool that suggests where to look first on similar objects.

// Range checks are written `!(x > 0.0)` so that NaN fails them.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod adaptation;
pub mod assessment;
pub mod detector;
pub mod error;
pub mod exploration;
pub mod geometry;
pub mod grid;
pub mod harness;
pub mod knowledge;
pub mod scene;

pub use error::{EtaError, Result};
