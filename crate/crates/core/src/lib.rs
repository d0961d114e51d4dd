//! Single-image x-ray tomography.
//!
//! Synthesizes Beer-Lambert x-rays from density volumes, learns the inverse
//! image-to-volume mapping with a convolutional encoder-decoder, and fuses the
//! coarse learned volume with the full-resolution input so that re-projecting
//! the fused volume reproduces the input x-ray.
//!
//! The crate is `no_std` (with `alloc`) when built without the default `std`
//! feature. All file formats and the command line live in the `xray2vol`
//! companion crate.
#![cfg_attr(not(feature = "std"), no_std)]
#![deny(unsafe_code)]

extern crate alloc;

mod error;
mod math;

pub mod baselines;
pub mod fusion;
pub mod geometry;
pub mod image;
pub mod metrics;
pub mod net;
pub mod dataset;
pub mod projector;
pub mod render;
pub mod volume;

pub use error::{Error, Result};
pub use geometry::{Vec3, ViewFrame, ViewPose};
pub use image::{Image, XRayImage};
pub use projector::ProjectorConfig;
pub use volume::Volume;
