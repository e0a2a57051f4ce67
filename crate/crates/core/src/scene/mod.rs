//! Evaluation scenes: assets, placements, predicates, and rubrics.

mod asset;
mod compose;
mod descriptor;
mod predicate;
mod rubric;

pub use asset::{
    content_hash, file_sha256, list_assets, load_asset, load_background, sha256_hex, write_asset, write_background,
    Background, ObjectAsset, CENTROID_TOLERANCE,
};
pub use compose::{
    compose, sample_initial_state, ComposedScene, NamedCamera, ObjectStates, Placement, Randomization, RobotPlacement,
    SceneParts, ToolFrame, WristCamera,
};
pub use descriptor::{
    directory_hash, load_scene, save_descriptor, AssetSpec, CameraSpec, LoadedScene, PathSpec, PlacementSpec, PoseSpec,
    RobotSpec, Roots, SceneDescriptor, WristSpec,
};
pub use predicate::{
    default_gap, default_overlap, eval_predicate, Predicate, Shape, Shapes, Subject, WorldSnapshot, GRASP_DISTANCE,
    GRASP_WIDTH, RELEASE_WIDTH, TOOL_INSTANCE,
};
pub use rubric::{score_rubric, Rubric, RubricStep, RubricTracker};

use crate::articulation::ArticulationError;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum SceneError {
    #[error("scene is invalid:\n  {}", .0.join("\n  "))]
    Compose(Vec<String>),
    #[error("unknown instance `{0}`")]
    UnknownInstance(String),
    #[error("instance `{0}` has no support surface beneath it")]
    NoSupport(String),
    #[error("asset `{id}`: {reason}")]
    Asset { id: String, reason: String },
    #[error("descriptor: {0}")]
    Descriptor(String),
    #[error("{path}: content hash {actual} does not match {expected}")]
    HashMismatch { path: String, expected: String, actual: String },
    #[error("{0}")]
    Io(String),
    #[error(transparent)]
    Articulation(#[from] ArticulationError),
}
