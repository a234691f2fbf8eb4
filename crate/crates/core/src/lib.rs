//! Few-view tri-plane radiance fields with spatial annealing.
//!
//! A mipmapped tri-plane feature field is queried with cone-cast sample
//! spheres: each sphere radius selects a continuous mip level. Spatial
//! annealing inflates that radius early in training and shrinks it
//! exponentially, which steers optimization from coarse to fine detail.
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below name the common concrete instantiations.

pub mod anneal;
pub mod checkpoint;
pub mod config;
pub mod dataio;
pub mod encoding;
mod error;
pub mod field;
pub mod geometry;
pub mod metrics;
pub mod render;
pub mod rng;
mod scalar;
pub mod sh;
pub mod train;
mod vec3;

pub use anneal::{AnnealSchedule, AnnealedFootprint, BaseFootprint, FootprintPolicy};
pub use error::{Error, Result};
pub use field::{FieldConfig, RadianceModel, TriPlaneField};
pub use geometry::{Camera, ConeSample, Ray};
pub use render::{RenderConfig, RenderOutput};
pub use scalar::{sigmoid, silu, silu_grad, softplus, Scalar};
pub use train::{TrainConfig, TrainState};
pub use vec3::Vec3;

pub type Camera32 = Camera<f32>;
pub type Camera64 = Camera<f64>;
pub type Model32 = RadianceModel<f32>;
pub type Model64 = RadianceModel<f64>;
pub type Field32 = TriPlaneField<f32>;
pub type Field64 = TriPlaneField<f64>;
pub type Image32 = dataio::Image<f32>;
pub type Image64 = dataio::Image<f64>;
pub type TrainState32 = TrainState<f32>;
pub type TrainState64 = TrainState<f64>;
