//! Closed-loop policy evaluation in composed scenes.

mod episode;
mod policy;
mod replay;
mod world;

pub use episode::{
    initial_state, proprio, render_observation, run_episode, run_suite, run_suite_with, write_record, EpisodeConfig, EpisodeRecord,
    StepRecord, SuiteResult, SuiteScene, Termination,
};
pub use policy::{
    solve_ik, ActRequest, ActResponse, ActionChunk, HttpPolicy, Observation, Policy, PolicyError, PolicyInput,
    PolicyReply, ReplayPolicy, ScriptedPolicy, Skill, WireImage, ZeroPolicy,
};
pub use replay::{replay_error_analysis, ErrorCurve, Recording, ReplayMode};
pub use world::{
    command_to_width, max_gripper_width, step_world, step_world_disturbed, Attachment, ServoConfig, WorldState,
    ACTION_DIM, ARM_DOF,
};

use crate::scene::SceneError;
use crate::splat::RenderError;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum EvalError {
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error("render: {0}")]
    Render(String),
    #[error("{0}")]
    Config(String),
    #[error("length mismatch: {0}")]
    LengthMismatch(String),
    #[error("{0}")]
    Io(String),
}

impl From<RenderError> for EvalError {
    fn from(e: RenderError) -> Self {
        EvalError::Render(e.to_string())
    }
}
