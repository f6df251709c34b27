//! Self-supervised human detection and 2D pose estimation from a planar LiDAR.
//!
//! A narrow field-of-view camera detector labels people; a dilated circular
//! 1D convolutional network learns to find them in 360° range scans, and
//! generalizes outside the camera wedge because the ring convolution is
//! rotation-equivariant.
//!
//! Pipeline, module by module:
//!
//! - [`geometry`]: SE(2) poses and angle arithmetic.
//! - [`lidar`]: front + back scanners fused into a 360-bin virtual scan.
//! - [`history`]: past scans reprojected into the current frame through odometry.
//! - [`supervision`]: per-ray labels and the camera-wedge mask.
//! - [`model`]: the network, forward and exact backward.
//! - [`training`]: masked loss, Adam, augmentation and the epoch loop.
//! - [`detection`]: thresholding and angular non-maximum suppression.
//! - [`evaluation`]: matching against ground truth, precision-recall and pose errors.
//! - [`simulator`]: deterministic world standing in for the robot and its sensors.
//! - [`dataset`]: episodes, sample building and the train/val/test split.
//!
//! The crate is `no_std` (with `alloc`); enable the `std` feature for
//! runtime SIMD dispatch in the matrix kernels.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod dataset;
pub mod detection;
pub mod error;
pub mod evaluation;
pub mod geometry;
pub mod history;
pub mod lidar;
pub mod model;
pub mod rng;
pub mod simulator;
pub mod supervision;
pub mod training;

pub use error::{Error, Result};
pub use geometry::{Point2D, Pose2D};
