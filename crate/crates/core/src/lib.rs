//! Translation averaging for global structure-from-motion.
//!
//! The main solver minimizes a bilinear angle-based objective with
//! rotation-assisted IRLS and block coordinate descent ([`bata`]). The
//! [`baselines`] module provides LUD, the ShapeFit-equivalent RevisedLUD and
//! the 1DSfM chordal objective; [`synthetic`] and [`metrics`] reproduce the
//! usual synthetic evaluation protocol.

pub mod baselines;
pub mod bata;
pub mod error;
pub mod graph;
pub mod io;
pub mod irls;
pub mod lls;
pub mod loss;
pub mod metrics;
pub mod synthetic;

pub use error::{Error, Result};
pub use graph::{
    centralize_normalize, is_connected, rotation_residual, world_direction, CameraId, Edge,
    Locations, Rotation, UnitDirection, Vec3, ViewGraph,
};
pub use loss::{combined_residual, rho, weight, LossKind, RotationAssist};
