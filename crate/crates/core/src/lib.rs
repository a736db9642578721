//! Batched Gaussian-splat rendering coupled to a vectorized legged-robot
//! simulation: scene assets, a tiled rasterizer with an f64 oracle, camera
//! scheduling and motion blur, simplified floating-base physics, task rewards
//! and labels, and an engine that ties them into a vector environment.

// `!(x > 0.0)` style checks are deliberate: they reject NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod api;
pub mod assets;
pub mod bench;
pub mod config;
pub mod engine;
pub mod error;
pub mod geometry;
pub mod physics;
pub mod raster;
pub mod rollout;
pub mod sensor;
pub mod synth;
pub mod tasks;

pub use error::{Error, Result};
