//! Core algorithms for a sparse close-range photogrammetry pipeline.
//!
//! The crate covers the in-memory half of the pipeline: grayscale rasters and
//! their derivative/smoothing kernels, a nonlinear (diffusion) scale space with
//! Hessian keypoint detection, the local intensity order pattern descriptor,
//! descriptor matching with essential-matrix verification, robust L1 rotation
//! averaging over the pose graph, camera position recovery, multi-view
//! triangulation, point-splat rendering and SSIM quality scoring.
//!
//! Everything here is pure computation over owned buffers. File formats,
//! image decoding and the command-line driver live in `parallax-pipeline`.
//! The crate is `no_std`-compatible (with `alloc`); the `std` feature (on by
//! default) only adds `std::error::Error` impls for the error types.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod camera;
pub mod filters;
pub mod geom;
pub mod image;
pub mod liop;
pub mod matching;
pub mod reconstruct;
pub mod rotation;
pub mod scalespace;
pub mod ssim;

pub use camera::CameraIntrinsics;
pub use image::GrayImage;
pub use liop::{LiopDescriptor, LiopParams};
pub use matching::{Match, PoseGraphEdge};
pub use reconstruct::{CameraPose, SparseCloud};
pub use rotation::{PoseGraph, RotationSet};
pub use scalespace::{Keypoint, ScaleLevel};
pub use ssim::SsimResult;
