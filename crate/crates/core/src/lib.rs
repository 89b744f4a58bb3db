//! Reflector mapping from a circular microphone array and a LiDAR.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod acoustic;
pub mod error;
pub mod experiments;
pub mod geometry;
pub mod kernel;
pub mod lidar;
pub mod pipeline;
pub mod plane_detect;
pub mod solver;

pub use error::{Error, Result};
