//! Fitting splat scenes to posed images and turning them into meshes.

pub mod init;
pub mod marching_cubes;
pub mod mesh;
pub mod objective;
pub mod optimize;
mod tables;
pub mod tsdf;

pub use init::{axes_focus, random_init};
pub use marching_cubes::extract_mesh;
pub use mesh::{MeshError, TriangleMesh};
pub use objective::{
    objective_with_gradient, photometric_objective, render_views, ImageRgb, LossBreakdown, ObjectiveConfig,
    PrimitiveGradient, View,
};
pub use optimize::{optimize_scene, DensifyConfig, OptimizeResult, ReconConfig, StepSizes};
pub use tsdf::{fuse_tsdf, fuse_tsdf_with, FusionConfig, TsdfVolume};

use crate::splat::{CameraError, PrimitiveError};

#[derive(Debug, thiserror::Error)]
pub enum ReconError {
    #[error("no input views")]
    NoViews,
    #[error("camera {0}: {1}")]
    InvalidCamera(usize, CameraError),
    #[error("view {view}: image is {image:?} but camera is {camera:?}")]
    DimensionMismatch {
        view: usize,
        image: (u32, u32),
        camera: (u32, u32),
    },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("primitive {0}: {1}")]
    InvalidPrimitive(usize, PrimitiveError),
    #[error("objective became non-finite at iteration {iteration}")]
    NonFiniteLoss { iteration: usize },
    #[error("invalid volume: {0}")]
    InvalidVolume(String),
}
