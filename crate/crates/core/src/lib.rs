//! Open-set point cloud learning.
//!
//! The crate simulates unknown points by cutting a local neighborhood out of a
//! known cloud, moving it with a random rigid transform and mixing it back in
//! ([`ups`]). A small point network ([`network`]) then learns per-point unknown
//! scores by fusing predictions from several encoder levels with weights
//! derived from the raw coordinates. [`metrics`] implements the closed-set and
//! open-set evaluation, and [`train`] ties everything into a training and
//! evaluation pipeline.

pub mod autodiff;
pub mod data;
pub mod error;
pub mod geometry;
pub mod metrics;
pub mod network;
pub mod plot;
pub mod train;
pub mod ups;

pub use error::{Error, Result};
pub use geometry::{Aabb, Point3, PointCloud, RigidTransform, Rotation};
