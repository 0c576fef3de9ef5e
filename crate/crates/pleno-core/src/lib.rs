//! Projection model, synthetic data generation, and calibration algorithms
//! for multi-focus plenoptic cameras.
//!
//! A multi-focus plenoptic camera places a hexagonal micro-lens array (MLA)
//! with interleaved focal types between the main lens and the sensor. Each
//! scene point appears in several micro-images, defocused by an amount that
//! depends on the micro-lens type. This crate models that optical chain and
//! calibrates it:
//!
//! - [`model`] — camera parameter types and the deterministic forward
//!   projection producing blur-aware features `(u, v, ρ)`.
//! - [`simulate`] — synthetic white images and checkerboard observations
//!   with ground truth, for testing without hardware.
//! - [`mia`] — micro-image center detection and hexagonal grid fitting.
//! - [`precalib`] — per-type micro-image radii from white images and the
//!   radius-vs-inverse-f-number line fit.
//! - [`features`] — clustering of corner observations, virtual depth from
//!   pairwise disparity, and blur-radius synthesis.
//! - [`calib`] — intrinsics initialization, checkerboard pose estimation,
//!   and the joint Levenberg–Marquardt refinement of all parameters.
//!
//! Geometry conventions, used consistently everywhere: the camera frame has
//! its origin at the main lens center with `z` toward the scene and `y`
//! down; the MLA plane sits at `z = -D` and the sensor at `z = -(D + d)`;
//! pixel coordinates grow right/down with `u = u0 - X/s`, so images are
//! upright. All internal geometry is in millimeters; pixel conversions
//! happen only at the sensor boundary through the pixel size `s`.
//!
//! The crate is `no_std` (with `alloc`) and generic over a small scalar
//! abstraction so the forward model can be evaluated with dual numbers for
//! exact derivatives.

#![no_std]
#![deny(unsafe_code)]

extern crate alloc;

pub mod calib;
pub mod error;
#[cfg(test)]
pub(crate) mod fixtures;
pub mod features;
pub mod linalg;
pub mod mia;
pub mod model;
pub mod precalib;
pub mod raster;
pub mod rng;
pub mod scalar;
pub mod simulate;

pub use error::Error;
