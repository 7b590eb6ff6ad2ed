//! Distributed invariant unscented Kalman filtering on matrix Lie groups with
//! inverse-covariance-intersection fusion, plus a UWB/IMU target-tracking
//! simulator and Monte-Carlo harness.

pub mod dise;
pub mod error;
pub mod fusion;
pub mod harness;
pub mod iekf;
pub mod liegroup;
pub mod linalg;
pub mod models;
pub mod simworld;
pub mod unscented;

pub use error::{Error, Result};
