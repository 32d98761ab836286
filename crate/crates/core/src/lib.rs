//! Target-guided diffusion inpainting.
//!
//! Inserts a target image into the hole of a scene by running a reverse
//! diffusion chain in which, at every step, the hole is a blend of the
//! denoiser's output and a forward-noised copy of the target, while known
//! scene pixels come from a forward-noised copy of the scene.
//!
//! The denoiser is pluggable: closed-form backends ([`denoise::OracleDenoiser`],
//! [`denoise::AnalyticGaussianDenoiser`]) make the sampler exactly testable,
//! and [`denoise::ExternalDenoiser`] drives a real model in a worker process.

pub mod denoise;
pub mod error;
pub mod grid;
pub mod imgio;
pub mod masks;
pub mod noise;
pub mod pipeline;
pub mod rng;
pub mod schedules;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{ImageTensor, Shape};
