//! Task-driven navigation on a hierarchical, language-embedded Gaussian map.
//!
//! The crate is organized bottom-up:
//!
//! * [`codec`] compresses high-dimensional language features with incremental PCA.
//! * [`splat`] stores isotropic Gaussians, back-projects RGB-D frames and renders
//!   them by front-to-back alpha compositing.
//! * [`submap`] partitions the map into anchor-posed submaps that are loaded and
//!   unloaded by proximity and persisted to disk.
//! * [`hierarchy`] clusters each submap into an object/region/submap tree and
//!   propagates task utilities up the tree.
//! * [`discrete`] plans budgeted vantage-point tours over the hierarchy.
//! * [`collision`] and [`motion`] implement the chance-constrained motion
//!   primitive planner.
//! * [`mission`] ties everything into a deterministic simulation harness.

pub mod binio;
pub mod codec;
pub mod collision;
pub mod discrete;
pub mod geometry;
pub mod hierarchy;
pub mod mission;
pub mod motion;
pub mod splat;
pub mod submap;

pub use codec::{
    CompressedFeature, FeatureRef, FeatureVector, Normalization, PcaBasis, RelevancyKernel,
};
pub use collision::{CollisionChecker, CollisionConfig};
pub use discrete::{BudgetedPath, SparseGraph};
pub use geometry::Pose;
pub use hierarchy::{ClusterNode, Level, TaskQuery};
pub use motion::{ControlInput, MotionPrimitive, RobotState};
pub use splat::{CameraModel, Frame, GaussianPoint};
pub use submap::{Submap, SubmapStore};
