//! Planar landmark localization with unknown data associations.
//!
//! The crate builds a lifted quadratic program whose semidefinite relaxation,
//! tightened with redundant constraints, certifies global optimality of the
//! joint pose/association estimate. A Max-Mixture Gauss-Newton solver, a
//! simulation generator, a range-bearing log ingester and a Monte Carlo
//! harness sit around that core.
//!
//! Layers that only manipulate poses and quadratic forms ([`geometry`],
//! [`problem`], [`lifting`], [`local`]) are generic over [`Real`]. The
//! semidefinite solver, constraint catalog, data pipeline and harness work in
//! `f64`.

pub mod constraints;
pub mod error;
pub mod geometry;
pub mod harness;
pub mod io;
pub mod lifting;
pub mod local;
pub mod pipeline;
pub mod problem;
pub mod scalar;
pub mod sdp;

pub use error::{Error, Result};
pub use scalar::Real;

pub type Rotation2d = geometry::Rotation2<f64>;
pub type Rotation2f = geometry::Rotation2<f32>;
pub type Pose2d = geometry::Pose2<f64>;
pub type Pose2f = geometry::Pose2<f32>;
pub type Tangent2d = geometry::Tangent2<f64>;
pub type Tangent2f = geometry::Tangent2<f32>;
pub type Trajectoryd = geometry::Trajectory<f64>;
pub type Trajectoryf = geometry::Trajectory<f32>;
pub type Instance = problem::ProblemInstance<f64>;
pub type Instancef = problem::ProblemInstance<f32>;
