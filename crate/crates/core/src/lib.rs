//! Targetless LiDAR-camera extrinsic calibration from semantic labels.
//!
//! A labeled point cloud and a label image of the same scene are aligned by
//! minimizing a range-weighted distance between each projected point and the
//! nearest pixel of its class. Initialization comes from a planar PnP on
//! per-class centroids; refinement uses Powell's method.

pub mod costfield;
pub mod geometry;
pub mod optimizer;
pub mod pnp_init;
pub mod scene;
pub mod synth;
