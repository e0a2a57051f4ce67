//! Scene assembly, flattening, and initial-state sampling.

use super::asset::{Background, ObjectAsset};
use super::predicate::{Shape, Shapes, WorldSnapshot, TOOL_INSTANCE};
use super::rubric::Rubric;
use super::SceneError;
use crate::articulation::{pose_articulated_splat_at, ArticulatedSplat};
use crate::math::{yaw_rotation, Pose, Vec3};
use crate::splat::{Camera, SplatScene, CANONICAL_FRAME};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Instance id to pose in F0.
pub type ObjectStates = BTreeMap<String, Pose>;

/// Uniform offsets added to a nominal placement, per axis (m) and yaw (rad).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct Randomization {
    pub x: [f64; 2],
    pub y: [f64; 2],
    pub z: [f64; 2],
    pub yaw: [f64; 2],
}

impl Randomization {
    fn ranges(&self) -> [[f64; 2]; 4] {
        [self.x, self.y, self.z, self.yaw]
    }

    pub fn errors(&self) -> Vec<String> {
        let names = ["x", "y", "z", "yaw"];
        self.ranges()
            .iter()
            .zip(names)
            .filter(|(r, _)| !(r[0].is_finite() && r[1].is_finite() && r[0] <= r[1]))
            .map(|(r, n)| format!("randomization {n} range [{}, {}] is not finite with low <= high", r[0], r[1]))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Placement {
    pub instance: String,
    pub asset: String,
    pub pose: Pose,
    pub randomization: Randomization,
}

impl Placement {
    pub fn new(instance: impl Into<String>, asset: impl Into<String>, pose: Pose) -> Self {
        Self {
            instance: instance.into(),
            asset: asset.into(),
            pose,
            randomization: Randomization::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedCamera {
    pub name: String,
    pub camera: Camera,
}

/// Camera rigidly attached to a link; `camera.pose` is the link-local offset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WristCamera {
    pub name: String,
    pub link: String,
    pub camera: Camera,
}

/// Where the gripper acts, and which joint sets its opening.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolFrame {
    pub link: String,
    pub offset: Pose,
    /// Prismatic joint whose value is the finger opening (m).
    pub gripper_joint: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RobotPlacement {
    pub art: ArticulatedSplat,
    pub base: Pose,
    pub tool: ToolFrame,
}

/// Inputs to [`compose`], also the editable draft of a session.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneParts {
    pub background: Background,
    pub robot: RobotPlacement,
    pub assets: Vec<ObjectAsset>,
    pub placements: Vec<Placement>,
    pub cameras: Vec<NamedCamera>,
    pub wrist: Option<WristCamera>,
    pub rubric: Rubric,
    pub seed: u64,
}

/// Validated, immutable evaluation scene.
#[derive(Debug, Clone, PartialEq)]
pub struct ComposedScene {
    pub background: Background,
    pub robot: RobotPlacement,
    pub assets: BTreeMap<String, ObjectAsset>,
    pub placements: Vec<Placement>,
    pub cameras: Vec<NamedCamera>,
    pub wrist: WristCamera,
    pub rubric: Rubric,
    pub seed: u64,
    shapes: Shapes,
    arm_dofs: Vec<usize>,
    gripper_dof: Option<usize>,
}

impl SceneParts {
    /// Every problem that would stop [`compose`], empty when valid.
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        let model = &self.robot.art.model;
        if self.background.splats.frame_label != CANONICAL_FRAME {
            out.push(format!("background splats are in frame `{}`, expected {CANONICAL_FRAME}", self.background.splats.frame_label));
        }
        if self.robot.art.frame_label != CANONICAL_FRAME {
            out.push(format!("robot splats are in frame `{}`, expected {CANONICAL_FRAME}", self.robot.art.frame_label));
        }
        let mut asset_ids = BTreeMap::new();
        for a in &self.assets {
            if asset_ids.insert(a.id.as_str(), a).is_some() {
                out.push(format!("duplicate asset id `{}`", a.id));
            }
        }
        let mut instances = std::collections::BTreeSet::new();
        for p in &self.placements {
            if !asset_ids.contains_key(p.asset.as_str()) {
                out.push(format!("placement `{}` references unknown asset `{}`", p.instance, p.asset));
            }
            if p.instance == TOOL_INSTANCE {
                out.push(format!("instance id `{TOOL_INSTANCE}` is reserved for the tool point"));
            }
            if !instances.insert(p.instance.as_str()) {
                out.push(format!("duplicate instance id `{}`", p.instance));
            }
            if !crate::math::is_finite_pose(&p.pose) {
                out.push(format!("placement `{}` pose is not finite", p.instance));
            }
            for e in p.randomization.errors() {
                out.push(format!("placement `{}`: {e}", p.instance));
            }
        }
        if self.cameras.is_empty() {
            out.push("no external camera".into());
        }
        let mut names = std::collections::BTreeSet::new();
        for c in &self.cameras {
            if !names.insert(c.name.as_str()) {
                out.push(format!("duplicate camera name `{}`", c.name));
            }
            if let Err(e) = c.camera.validate() {
                out.push(format!("camera `{}`: {e}", c.name));
            }
        }
        match &self.wrist {
            None => out.push("no wrist camera bound".into()),
            Some(w) => {
                if model.link_index(&w.link).is_none() {
                    out.push(format!("wrist camera `{}` bound to unknown link `{}`", w.name, w.link));
                }
                if !names.insert(w.name.as_str()) {
                    out.push(format!("duplicate camera name `{}`", w.name));
                }
                if let Err(e) = w.camera.validate() {
                    out.push(format!("wrist camera `{}`: {e}", w.name));
                }
            }
        }
        if model.link_index(&self.robot.tool.link).is_none() {
            out.push(format!("tool frame on unknown link `{}`", self.robot.tool.link));
        }
        if let Some(j) = &self.robot.tool.gripper_joint {
            if model.dof_index(j).is_none() {
                out.push(format!("gripper joint `{j}` is not a movable joint"));
            }
        }
        if self.robot.art.q_scan.len() != model.dof() {
            out.push(format!("q_scan has {} values for {} joints", self.robot.art.q_scan.len(), model.dof()));
        }
        if self.rubric.steps.is_empty() {
            out.push(format!("rubric `{}` has no steps", self.rubric.task));
        }
        for (k, step) in self.rubric.steps.iter().enumerate() {
            for e in step.predicate.parameter_errors() {
                out.push(format!("rubric step {} ({}): {e}", k + 1, step.description));
            }
            for id in step.predicate.instances() {
                if !instances.contains(id) && id != TOOL_INSTANCE {
                    out.push(format!("rubric step {} references unknown instance `{id}`", k + 1));
                }
            }
        }
        out
    }
}

pub fn compose(parts: SceneParts) -> Result<ComposedScene, SceneError> {
    let violations = parts.violations();
    if !violations.is_empty() {
        return Err(SceneError::Compose(violations));
    }
    let assets: BTreeMap<String, ObjectAsset> = parts.assets.into_iter().map(|a| (a.id.clone(), a)).collect();
    let shapes = parts
        .placements
        .iter()
        .map(|p| (p.instance.clone(), Shape { mesh: assets[&p.asset].mesh.clone() }))
        .collect();
    let model = &parts.robot.art.model;
    let gripper_dof = parts.robot.tool.gripper_joint.as_deref().and_then(|j| model.dof_index(j));
    let arm_dofs = (0..model.dof()).filter(|d| Some(*d) != gripper_dof).collect();
    Ok(ComposedScene {
        background: parts.background,
        robot: parts.robot,
        assets,
        placements: parts.placements,
        cameras: parts.cameras,
        wrist: parts.wrist.expect("checked above"),
        rubric: parts.rubric,
        seed: parts.seed,
        shapes,
        arm_dofs,
        gripper_dof,
    })
}

impl ComposedScene {
    pub fn shapes(&self) -> &Shapes {
        &self.shapes
    }

    pub fn dof(&self) -> usize {
        self.robot.art.model.dof()
    }

    /// Joint indices driven by arm action columns, in order.
    pub fn arm_dofs(&self) -> &[usize] {
        &self.arm_dofs
    }

    pub fn gripper_dof(&self) -> Option<usize> {
        self.gripper_dof
    }

    pub fn q_scan(&self) -> &[f64] {
        &self.robot.art.q_scan
    }

    pub fn nominal_states(&self) -> ObjectStates {
        self.placements.iter().map(|p| (p.instance.clone(), p.pose)).collect()
    }

    pub fn asset_of(&self, instance: &str) -> Option<&ObjectAsset> {
        let p = self.placements.iter().find(|p| p.instance == instance)?;
        self.assets.get(&p.asset)
    }

    /// Number of primitives in every flattened render set.
    pub fn flattened_len(&self) -> usize {
        self.background.splats.len()
            + self.robot.art.len()
            + self.placements.iter().map(|p| self.assets[&p.asset].splats.len()).sum::<usize>()
    }

    /// Background, then robot at `q`, then objects in placement order.
    pub fn flatten(&self, q: &[f64], objects: &ObjectStates) -> Result<SplatScene, SceneError> {
        let mut out = self.background.splats.clone();
        out.frame_label = CANONICAL_FRAME.into();
        out.extend(&pose_articulated_splat_at(&self.robot.art, q, &self.robot.base)?);
        for p in &self.placements {
            let pose = objects.get(&p.instance).ok_or_else(|| SceneError::UnknownInstance(p.instance.clone()))?;
            out.extend(&self.assets[&p.asset].splats.transformed(pose));
        }
        Ok(out)
    }

    fn link_pose(&self, q: &[f64], link: &str) -> Result<Pose, SceneError> {
        let model = &self.robot.art.model;
        let l = model.link_index(link).ok_or_else(|| SceneError::UnknownInstance(link.into()))?;
        Ok(self.robot.base * model.link_poses(q)?[l])
    }

    pub fn tool_pose(&self, q: &[f64]) -> Result<Pose, SceneError> {
        Ok(self.link_pose(q, &self.robot.tool.link)? * self.robot.tool.offset)
    }

    /// Wrist camera posed by forward kinematics.
    pub fn wrist_camera(&self, q: &[f64]) -> Result<Camera, SceneError> {
        let mut cam = self.wrist.camera;
        cam.pose = self.link_pose(q, &self.wrist.link)? * self.wrist.camera.pose;
        Ok(cam)
    }

    /// Finger opening at `q`, zero without a gripper joint.
    pub fn gripper_width(&self, q: &[f64]) -> f64 {
        self.gripper_dof.map_or(0.0, |d| q[d])
    }

    pub fn bottoms(&self, objects: &ObjectStates) -> BTreeMap<String, f64> {
        objects
            .iter()
            .filter_map(|(id, pose)| Some((id.clone(), self.shapes.get(id)?.world_bounds(pose).min.z)))
            .collect()
    }

    pub fn snapshot(&self, q: &[f64], objects: &ObjectStates, rest_bottom: &BTreeMap<String, f64>) -> Result<WorldSnapshot, SceneError> {
        Ok(WorldSnapshot {
            objects: objects.clone(),
            tool: self.tool_pose(q)?,
            gripper_width: self.gripper_width(q),
            rest_bottom: rest_bottom.clone(),
        })
    }

    /// Drops `id` straight down onto the highest surface below its center:
    /// the background mesh or any other instance. Poses already resting
    /// within 1e-9 m are returned unchanged.
    pub fn settle(&self, objects: &ObjectStates, id: &str) -> Result<Pose, SceneError> {
        let shape = self.shapes.get(id).ok_or_else(|| SceneError::UnknownInstance(id.into()))?;
        let pose = *objects.get(id).ok_or_else(|| SceneError::UnknownInstance(id.into()))?;
        let b = shape.world_bounds(&pose);
        let others: Vec<_> = objects
            .iter()
            .filter(|(other, _)| other.as_str() != id)
            .filter_map(|(other, p)| Some(self.shapes.get(other)?.mesh.transformed(p)))
            .collect();
        let ext = b.extent();
        let mut support = f64::NEG_INFINITY;
        for i in 0..3 {
            for j in 0..3 {
                let x = b.min.x + ext.x * (0.1 + 0.4 * i as f64);
                let y = b.min.y + ext.y * (0.1 + 0.4 * j as f64);
                let hits = self
                    .background
                    .mesh
                    .vertical_hits(x, y)
                    .into_iter()
                    .chain(others.iter().flat_map(|m| m.vertical_hits(x, y)));
                for h in hits {
                    if h <= b.center().z && h > support {
                        support = h;
                    }
                }
            }
        }
        if !support.is_finite() {
            return Err(SceneError::NoSupport(id.into()));
        }
        let dz = support - b.min.z;
        if dz.abs() <= 1e-9 {
            return Ok(pose);
        }
        let mut out = pose;
        out.translation.vector.z += dz;
        Ok(out)
    }
}

fn uniform(rng: &mut ChaCha8Rng, r: [f64; 2]) -> f64 {
    let u: f64 = rng.gen();
    if r[0] == r[1] {
        r[0]
    } else {
        r[0] + (r[1] - r[0]) * u
    }
}

/// Initial object poses for one episode, a pure function of the scene seed
/// and `episode_seed`. Offsets are drawn per placement in order, then
/// objects settle from the lowest up.
pub fn sample_initial_state(scene: &ComposedScene, episode_seed: u64) -> Result<ObjectStates, SceneError> {
    let mut rng = ChaCha8Rng::seed_from_u64(scene.seed);
    rng.set_stream(episode_seed);
    let mut states = ObjectStates::new();
    for p in &scene.placements {
        let [dx, dy, dz, dyaw] = p.randomization.ranges().map(|r| uniform(&mut rng, r));
        let mut pose = p.pose;
        if dyaw != 0.0 {
            pose.rotation = yaw_rotation(dyaw) * pose.rotation;
        }
        pose.translation.vector += Vec3::new(dx, dy, dz);
        states.insert(p.instance.clone(), pose);
    }
    let mut order: Vec<(f64, String)> = scene
        .bottoms(&states)
        .into_iter()
        .map(|(id, z)| (z, id))
        .collect();
    order.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.cmp(&b.1)));
    for (_, id) in order {
        let settled = scene.settle(&states, &id)?;
        states.insert(id, settled);
    }
    Ok(states)
}
