//! Kinematic world model: rate-limited joint servos and a sticky gripper.

use crate::math::Pose;
use crate::scene::{ComposedScene, ObjectStates, SceneError, WorldSnapshot, GRASP_DISTANCE, GRASP_WIDTH, RELEASE_WIDTH};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Arm joints per action row; the last column is the gripper command.
pub const ARM_DOF: usize = 7;
pub const ACTION_DIM: usize = ARM_DOF + 1;

/// Servo parameters. `v_max` is not a measured robot value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ServoConfig {
    /// Joint speed limit (rad/s, or m/s for prismatic arm joints).
    pub v_max: f64,
    /// Control period (s).
    pub dt: f64,
    /// Finger speed (m/s).
    pub gripper_speed: f64,
}

impl Default for ServoConfig {
    fn default() -> Self {
        Self {
            v_max: 1.5,
            dt: 1.0 / 15.0,
            gripper_speed: 0.15,
        }
    }
}

/// An object held rigidly by the gripper.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Attachment {
    pub instance: String,
    /// Object pose in the tool frame.
    pub grip: Pose,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldState {
    /// Full joint configuration of the robot model.
    pub q: Vec<f64>,
    pub gripper_width: f64,
    pub objects: ObjectStates,
    pub attachment: Option<Attachment>,
    pub time: f64,
    /// Object bottoms at episode start, for `lifted`.
    pub rest_bottom: BTreeMap<String, f64>,
}

impl WorldState {
    /// State at `q` with objects at rest where given.
    pub fn new(scene: &ComposedScene, q: Vec<f64>, objects: ObjectStates) -> Self {
        let rest_bottom = scene.bottoms(&objects);
        Self {
            gripper_width: scene.gripper_width(&q),
            q,
            objects,
            attachment: None,
            time: 0.0,
            rest_bottom,
        }
    }

    pub fn snapshot(&self, scene: &ComposedScene) -> Result<WorldSnapshot, SceneError> {
        scene.snapshot(&self.q, &self.objects, &self.rest_bottom)
    }
}

/// Largest finger opening of the scene's gripper, zero without one.
pub fn max_gripper_width(scene: &ComposedScene) -> f64 {
    scene
        .gripper_dof()
        .map_or(0.0, |d| scene.robot.art.model.limits()[d].upper)
}

/// Gripper command in [0, 1] (1 closed) to finger opening.
pub fn command_to_width(scene: &ComposedScene, command: f64) -> f64 {
    (1.0 - command.clamp(0.0, 1.0)) * max_gripper_width(scene)
}

fn rate_limit(current: f64, target: f64, step: f64) -> f64 {
    current + (target - current).clamp(-step, step)
}

/// Advances the world by one control period toward `target`
/// (7 arm joint targets, then a gripper command).
pub fn step_world(scene: &ComposedScene, state: &WorldState, target: &[f64; ACTION_DIM], servo: &ServoConfig) -> WorldState {
    step_world_disturbed(scene, state, target, servo, &[0.0; ARM_DOF])
}

/// As [`step_world`], with `disturbance` added to the arm joints after the
/// servo update (tracking error of a real controller).
pub fn step_world_disturbed(
    scene: &ComposedScene,
    state: &WorldState,
    target: &[f64; ACTION_DIM],
    servo: &ServoConfig,
    disturbance: &[f64; ARM_DOF],
) -> WorldState {
    let model = &scene.robot.art.model;
    let limits = model.limits();
    let mut next = state.clone();
    next.time = state.time + servo.dt;
    let step = servo.v_max * servo.dt;
    for (col, &d) in scene.arm_dofs().iter().take(ARM_DOF).enumerate() {
        let v = rate_limit(state.q[d], target[col], step) + disturbance[col];
        next.q[d] = v.clamp(limits[d].lower, limits[d].upper);
    }
    if let Some(g) = scene.gripper_dof() {
        let w = rate_limit(state.q[g], command_to_width(scene, target[ARM_DOF]), servo.gripper_speed * servo.dt);
        next.q[g] = w.clamp(limits[g].lower, limits[g].upper);
    }
    next.gripper_width = scene.gripper_width(&next.q);
    if next.q == state.q {
        return next;
    }

    let Ok(tool) = scene.tool_pose(&next.q) else {
        return next;
    };
    match &state.attachment {
        Some(a) if next.gripper_width > RELEASE_WIDTH => {
            next.attachment = None;
            next.objects.insert(a.instance.clone(), tool * a.grip);
            match scene.settle(&next.objects, &a.instance) {
                Ok(p) => {
                    next.objects.insert(a.instance.clone(), p);
                }
                Err(e) => log::warn!("released object stays in place: {e}"),
            }
        }
        Some(a) => {
            next.objects.insert(a.instance.clone(), tool * a.grip);
        }
        None if next.gripper_width < GRASP_WIDTH && state.gripper_width >= GRASP_WIDTH => {
            let p = tool.translation.vector;
            let nearest = next
                .objects
                .iter()
                .filter_map(|(id, pose)| Some((scene.shapes().get(id)?.world_bounds(pose).distance_to(&p), id)))
                .filter(|(d, _)| *d <= GRASP_DISTANCE)
                .min_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.cmp(b.1)));
            if let Some((_, id)) = nearest {
                next.attachment = Some(Attachment {
                    instance: id.clone(),
                    grip: tool.inverse() * next.objects[id],
                });
            }
        }
        None => {}
    }
    next
}
