//! Automatic calibration of a fixed wide-angle traffic camera from vehicle
//! motion.
//!
//! The pipeline has two stages:
//!
//! * [`intrinsics`]: keypoint tracks of vehicles are straight lines seen
//!   through an equidistant fisheye lens. Searching the focal length that
//!   straightens them gives the intrinsic matrix, and a radial polynomial is
//!   fitted to the resulting undistortion.
//! * [`extrinsics`]: matched keypoints in the undistorted image vote for two
//!   orthogonal vanishing points, which fix the rotation; the camera height
//!   fixes the translation.
//!
//! [`oracle`] generates synthetic scenes with known calibration and scores
//! recovered calibrations; [`topview`] renders the rectified ground plane.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod extrinsics;
pub mod geometry;
pub mod intrinsics;
pub mod io;
pub mod oracle;
pub mod topview;
pub mod tracks;

pub use error::{Error, Result};
pub use extrinsics::{calibrate_extrinsics, ExtrinsicConfig, ExtrinsicResult, KeypointMatch};
pub use geometry::{DistortionCoefficients, GroundPoint, Intrinsics, PixelPoint, Pose};
pub use intrinsics::{calibrate_intrinsics, IntrinsicConfig, IntrinsicResult};
pub use oracle::{evaluate_recovery, generate_scene, RecoveryReport, SceneSpec};
pub use topview::{topview_grid, CameraCalibration, TopviewSpec};
pub use tracks::{load_tracks, Track};
