//! Robot kinematics and articulated splats.

mod assign;
mod bundle;
mod model;

pub use assign::{
    assign_splats_to_links, distance_to_link, link_point, pose_articulated_splat, pose_articulated_splat_at,
    ArticulatedSplat, DEFAULT_CUTOFF,
};
pub use bundle::{read_bundle, write_bundle};
pub use model::{
    forward_kinematics, parse_robot_model, Collision, Geometry, Joint, JointConfig, JointKind, KinematicModel, Limits,
    Link,
};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ArticulationError {
    #[error("{path}: {reason}")]
    Parse { path: String, reason: String },
    #[error("{path}: duplicate name `{name}`")]
    DuplicateName { path: String, name: String },
    #[error("{path}: unknown link `{name}`")]
    UnknownLink { path: String, name: String },
    #[error("{path}: axis is not unit length (norm {norm})")]
    NonUnitAxis { path: String, norm: f64 },
    #[error("joint cycle through {}", joints.join(", "))]
    Cycle { joints: Vec<String> },
    #[error("link `{link}` is the child of several joints: {}", joints.join(", "))]
    MultipleParents { link: String, joints: Vec<String> },
    #[error("no root link")]
    MissingRoot,
    #[error("several root links: {}", .0.join(", "))]
    MultipleRoots(Vec<String>),
    #[error("expected {expected} joint values, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("no robot splats to assign")]
    EmptySplats,
    #[error("link `{0}` has no collision geometry or mesh")]
    NoGeometry(String),
    #[error("bundle: {0}")]
    Bundle(String),
}
