//! Depth-image enhancement by graph-regularized MAP estimation.
//!
//! The crate models a depth sensor as signal-dependent noise followed by
//! non-uniform log quantization ([`forward`]), estimates the noise law from
//! quantized observations ([`estimate`]), and jointly denoises and
//! dequantizes rectified stereo rows ([`enhance`]). Enhanced images are scored
//! as point clouds ([`cloud`]).
//!
//! Numeric code is generic over [`Real`] (`f32` or `f64`); the aliases at the
//! crate root fix the scalar to `f64`.

// `!(x > 0.0)` rejects NaN along with non-positive values
#![allow(clippy::neg_cmp_op_on_partial_ord)]
#![allow(clippy::needless_range_loop)]

pub mod baseline;
pub mod benchmark;
pub mod cloud;
pub mod config;
pub mod enhance;
pub mod error;
pub mod estimate;
pub mod forward;
pub mod graph;
pub mod image;
pub mod io;
pub mod kdtree;
pub mod layering;
pub mod linalg;
pub mod scalar;
pub mod scene;
pub mod solver;
pub mod sparse;
pub mod warp;

pub use error::{Error, Result};
pub use forward::{corrupt, corrupt_with, derive_seed, CorruptOptions, NoiseFamily, PhiSource};
pub use scalar::Real;

pub type QuantizerParamsF64 = forward::QuantizerParams<f64>;
pub type NoiseModelF64 = forward::NoiseModel<f64>;
pub type DepthImageF64 = image::DepthImage<f64>;
pub type IntrinsicsF64 = image::Intrinsics<f64>;
