//! Streaming free-viewpoint video codec for 3D Gaussian-splat scenes.
//!
//! Each time-step is represented as the previous time-step plus a learned
//! residual. Residuals of rotation, scale, opacity and color are carried by
//! integer latents and a small shared linear decoder per attribute; position
//! residuals are sparsified with hard concrete gates. A CPU differentiable
//! rasterizer drives all training, and a synthetic scene generator provides
//! ground truth for verification.
//!
//! All numerical code is generic over [`Scalar`] (`f32` or `f64`); the type
//! aliases below pin the common instantiations.

pub mod codec;
pub mod dynamics;
pub mod error;
pub mod gating;
pub mod image;
pub mod kv;
pub mod losses;
pub mod quantizer;
pub mod raster;
pub mod scalar;
pub mod scene;
pub mod synth;
pub mod trainer;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type GaussianCloudF32 = scene::GaussianCloud<f32>;
pub type GaussianCloudF64 = scene::GaussianCloud<f64>;
pub type CameraF32 = scene::Camera<f32>;
pub type CameraF64 = scene::Camera<f64>;
pub type ImageF32 = image::Image<f32>;
pub type ImageF64 = image::Image<f64>;
pub type RenderOutputF64 = raster::RenderOutput<f64>;
pub type AttributeGradsF64 = raster::AttributeGrads<f64>;
pub type ScoreVectorF64 = dynamics::ScoreVector<f64>;
