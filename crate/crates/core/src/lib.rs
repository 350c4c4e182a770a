//! Wearable arm-pose estimation with a differentiable ensemble Kalman filter.
//!
//! Sensor streams from a wrist-worn watch and a pocketed phone are mapped to
//! a 27-dimensional upper-body pose state with ensemble uncertainty, and the
//! filtered pose drives a sagittal-plane teleoperation target.

pub mod control;
pub mod datamodel;
pub mod denkf;
pub mod error;
pub mod eval;
pub mod neural;
pub mod rotkit;
pub mod synthgen;

pub use error::{Error, Result};
