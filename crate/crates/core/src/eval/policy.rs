//! Policies: the HTTP wire protocol and in-process reference policies.

use super::world::{max_gripper_width, WorldState, ACTION_DIM, ARM_DOF};
use crate::math::{pose, Pose, Rotation, Vec3};
use crate::scene::ComposedScene;
use base64::Engine as _;
use image::RgbImage;
use nalgebra::{DMatrix, DVector, Vector6};
use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::time::Duration;

/// What a policy sees each query.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub images: BTreeMap<String, RgbImage>,
    pub wrist: Option<RgbImage>,
    /// Seven arm joint values, then gripper closure in [0, 1].
    pub proprio: [f64; ACTION_DIM],
    pub instruction: String,
    pub step: usize,
}

/// H rows of seven joint targets (rad) and a gripper command in [0, 1].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionChunk {
    pub actions: Vec<[f64; ACTION_DIM]>,
}

impl ActionChunk {
    pub fn new(actions: Vec<[f64; ACTION_DIM]>) -> Result<Self, PolicyError> {
        if actions.is_empty() {
            return Err(PolicyError::Protocol("empty action chunk".into()));
        }
        if actions.iter().flatten().any(|v| !v.is_finite()) {
            return Err(PolicyError::Protocol("non-finite action".into()));
        }
        Ok(Self { actions })
    }

    pub fn horizon(&self) -> usize {
        self.actions.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyReply {
    pub chunk: ActionChunk,
    pub done: bool,
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum PolicyError {
    #[error("policy timed out after {0:?}")]
    Timeout(Duration),
    #[error("policy protocol error: {0}")]
    Protocol(String),
    #[error("policy transport error: {0}")]
    Transport(String),
}

/// Privileged context handed to in-process policies alongside the observation.
pub struct PolicyInput<'a> {
    pub observation: &'a Observation,
    pub scene: &'a ComposedScene,
    pub state: &'a WorldState,
}

pub trait Policy: Send {
    fn name(&self) -> &str;

    /// Whether observations need rendered images.
    fn needs_images(&self) -> bool {
        true
    }

    /// Called before each episode.
    fn reset(&mut self, _episode_seed: u64) {}

    fn act(&mut self, input: &PolicyInput<'_>) -> Result<PolicyReply, PolicyError>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireImage {
    pub width: u32,
    pub height: u32,
    /// Base64 of packed RGB8 rows.
    pub data: String,
}

impl WireImage {
    pub fn encode(img: &RgbImage) -> Self {
        Self {
            width: img.width(),
            height: img.height(),
            data: base64::engine::general_purpose::STANDARD.encode(img.as_raw()),
        }
    }

    pub fn decode(&self) -> Result<RgbImage, PolicyError> {
        let raw = base64::engine::general_purpose::STANDARD
            .decode(&self.data)
            .map_err(|e| PolicyError::Protocol(format!("image data: {e}")))?;
        RgbImage::from_raw(self.width, self.height, raw)
            .ok_or_else(|| PolicyError::Protocol(format!("image data does not fill {}x{}", self.width, self.height)))
    }
}

/// Body of `POST /act`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActRequest {
    pub instruction: String,
    pub images: BTreeMap<String, WireImage>,
    pub proprio: Vec<f64>,
    pub step: usize,
}

impl ActRequest {
    pub fn from_observation(obs: &Observation) -> Self {
        let mut images: BTreeMap<String, WireImage> = obs.images.iter().map(|(k, v)| (k.clone(), WireImage::encode(v))).collect();
        if let Some(w) = &obs.wrist {
            images.insert("wrist".into(), WireImage::encode(w));
        }
        Self {
            instruction: obs.instruction.clone(),
            images,
            proprio: obs.proprio.to_vec(),
            step: obs.step,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActResponse {
    pub actions: Vec<Vec<f64>>,
    #[serde(default)]
    pub done: bool,
}

impl ActResponse {
    pub fn from_reply(r: &PolicyReply) -> Self {
        Self {
            actions: r.chunk.actions.iter().map(|a| a.to_vec()).collect(),
            done: r.done,
        }
    }

    pub fn into_reply(self) -> Result<PolicyReply, PolicyError> {
        let rows = self
            .actions
            .into_iter()
            .enumerate()
            .map(|(i, row)| {
                <[f64; ACTION_DIM]>::try_from(row.as_slice())
                    .map_err(|_| PolicyError::Protocol(format!("action row {i} has {} values, expected {ACTION_DIM}", row.len())))
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(PolicyReply {
            chunk: ActionChunk::new(rows)?,
            done: self.done,
        })
    }
}

/// Remote policy speaking the `/act` protocol.
pub struct HttpPolicy {
    name: String,
    url: String,
    timeout: Duration,
    client: reqwest::blocking::Client,
}

impl HttpPolicy {
    /// `base` is the server root; requests go to `<base>/act`.
    pub fn new(base: &str, timeout: Duration) -> Result<Self, PolicyError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| PolicyError::Transport(e.to_string()))?;
        Ok(Self {
            name: base.to_string(),
            url: format!("{}/act", base.trim_end_matches('/')),
            timeout,
            client,
        })
    }
}

impl Policy for HttpPolicy {
    fn name(&self) -> &str {
        &self.name
    }

    fn act(&mut self, input: &PolicyInput<'_>) -> Result<PolicyReply, PolicyError> {
        let body = ActRequest::from_observation(input.observation);
        let resp = self.client.post(&self.url).json(&body).send().map_err(|e| {
            if e.is_timeout() {
                PolicyError::Timeout(self.timeout)
            } else {
                PolicyError::Transport(e.to_string())
            }
        })?;
        if !resp.status().is_success() {
            return Err(PolicyError::Protocol(format!("status {}", resp.status())));
        }
        let parsed: ActResponse = resp.json().map_err(|e| {
            if e.is_timeout() {
                PolicyError::Timeout(self.timeout)
            } else {
                PolicyError::Protocol(e.to_string())
            }
        })?;
        parsed.into_reply()
    }
}

/// Always commands every joint to zero with the gripper open.
pub struct ZeroPolicy;

impl Policy for ZeroPolicy {
    fn name(&self) -> &str {
        "zero"
    }

    fn needs_images(&self) -> bool {
        false
    }

    fn act(&mut self, _input: &PolicyInput<'_>) -> Result<PolicyReply, PolicyError> {
        Ok(PolicyReply {
            chunk: ActionChunk::new(vec![[0.0; ACTION_DIM]; 10])?,
            done: false,
        })
    }
}

/// Plays back a fixed action sequence in chunks of `horizon`, then declares done.
pub struct ReplayPolicy {
    name: String,
    actions: Vec<[f64; ACTION_DIM]>,
    horizon: usize,
    cursor: usize,
}

impl ReplayPolicy {
    pub fn new(name: impl Into<String>, actions: Vec<[f64; ACTION_DIM]>, horizon: usize) -> Self {
        Self {
            name: name.into(),
            actions,
            horizon: horizon.max(1),
            cursor: 0,
        }
    }

    /// Reads rows of eight comma-separated numbers; a non-numeric first row is a header.
    pub fn from_csv(name: impl Into<String>, text: &str, horizon: usize) -> Result<Self, PolicyError> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(false).from_reader(text.as_bytes());
        let mut actions = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|e| PolicyError::Protocol(e.to_string()))?;
            let vals: Result<Vec<f64>, _> = rec.iter().map(|f| f.trim().parse::<f64>()).collect();
            match vals {
                Ok(v) => actions.push(
                    <[f64; ACTION_DIM]>::try_from(v.as_slice())
                        .map_err(|_| PolicyError::Protocol(format!("row {}: expected {ACTION_DIM} values", i + 1)))?,
                ),
                Err(_) if i == 0 => continue,
                Err(e) => return Err(PolicyError::Protocol(format!("row {}: {e}", i + 1))),
            }
        }
        if actions.is_empty() {
            return Err(PolicyError::Protocol("no actions to replay".into()));
        }
        Ok(Self::new(name, actions, horizon))
    }

    pub fn next_reply(&mut self) -> Result<PolicyReply, PolicyError> {
        let end = (self.cursor + self.horizon).min(self.actions.len());
        let rows = if self.cursor < end {
            self.actions[self.cursor..end].to_vec()
        } else {
            vec![*self.actions.last().expect("nonempty")]
        };
        self.cursor = end;
        Ok(PolicyReply {
            chunk: ActionChunk::new(rows)?,
            done: self.cursor >= self.actions.len(),
        })
    }
}

impl Policy for ReplayPolicy {
    fn name(&self) -> &str {
        &self.name
    }

    fn needs_images(&self) -> bool {
        false
    }

    fn reset(&mut self, _episode_seed: u64) {
        self.cursor = 0;
    }

    fn act(&mut self, _input: &PolicyInput<'_>) -> Result<PolicyReply, PolicyError> {
        self.next_reply()
    }
}

/// Damped least-squares inverse kinematics on the arm joints for a full
/// tool pose. Starts from `q`; returns the best configuration found.
pub fn solve_ik(scene: &ComposedScene, q: &[f64], target: &Pose, iterations: usize) -> Vec<f64> {
    let model = &scene.robot.art.model;
    let limits = model.limits();
    let arm: Vec<usize> = scene.arm_dofs().iter().copied().take(ARM_DOF).collect();
    let mut q = q.to_vec();
    let err = |q: &[f64]| -> Vector6<f64> {
        let tool = scene.tool_pose(q).expect("q matches the model");
        let dp = target.translation.vector - tool.translation.vector;
        let dr = (target.rotation * tool.rotation.inverse()).scaled_axis();
        // orientation weighted down: a 10 cm lever
        Vector6::new(dp.x, dp.y, dp.z, 0.1 * dr.x, 0.1 * dr.y, 0.1 * dr.z)
    };
    let lambda = 0.02;
    let h = 1e-6;
    let mut e = err(&q);
    for _ in 0..iterations {
        if e.norm() < 1e-7 {
            break;
        }
        let mut j = DMatrix::zeros(6, arm.len());
        for (c, &d) in arm.iter().enumerate() {
            let mut qp = q.clone();
            qp[d] += h;
            let col = (e - err(&qp)) / h;
            j.set_column(c, &col);
        }
        let jt = j.transpose();
        let a = &j * &jt + DMatrix::identity(6, 6) * (lambda * lambda);
        let Some(chol) = a.cholesky() else { break };
        let dq = &jt * chol.solve(&DVector::from_column_slice(e.as_slice()));
        let mut trial = q.clone();
        for (c, &d) in arm.iter().enumerate() {
            trial[d] = (q[d] + dq[c]).clamp(limits[d].lower, limits[d].upper);
        }
        let et = err(&trial);
        if et.norm() >= e.norm() {
            break;
        }
        q = trial;
        e = et;
    }
    q
}

/// Skill settings of a [`ScriptedPolicy`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Skill {
    /// How many items to carry to the target.
    pub items: usize,
    /// Stop after lifting the first item instead of carrying it.
    pub lift_only: bool,
    /// Stop after touching the first item.
    pub reach_only: bool,
    /// Standard deviation of the horizontal grasp-point error (m).
    pub grasp_noise: f64,
    pub horizon: usize,
}

impl Skill {
    pub fn oracle() -> Self {
        Self {
            items: usize::MAX,
            lift_only: false,
            reach_only: false,
            grasp_noise: 0.0,
            horizon: 5,
        }
    }

    /// Graded presets: `oracle`, `one_item`, `noisy`, `lift_only`,
    /// `reach_only`, `idle`.
    pub fn named(name: &str) -> Option<Self> {
        let o = Self::oracle();
        Some(match name {
            "oracle" => o,
            "one_item" => Self { items: 1, ..o },
            "noisy" => Self { grasp_noise: 0.02, ..o },
            "lift_only" => Self { lift_only: true, ..o },
            "reach_only" => Self { reach_only: true, ..o },
            "idle" => Self { items: 0, ..o },
            _ => return None,
        })
    }

    pub const NAMES: [&'static str; 6] = ["oracle", "one_item", "noisy", "lift_only", "reach_only", "idle"];
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Phase {
    Above,
    Descend,
    Close(usize),
    Lift,
    Carry,
    Lower,
    Open(usize),
    Retreat,
    Idle,
}

/// Pick-and-place script using privileged object poses: carries each item
/// named in `items`, in order, to `drop_points` (tool positions above the
/// target). Image-free; deterministic per episode seed.
pub struct ScriptedPolicy {
    name: String,
    skill: Skill,
    items: Vec<String>,
    drop_points: Vec<Vec3>,
    seed: u64,
    rng: ChaCha8Rng,
    phase: Phase,
    item: usize,
    grasp_offset: Vec3,
    anchor: Vec3,
    target: Option<Vec<f64>>,
}

const HOVER: f64 = 0.12;
const CARRY_HEIGHT: f64 = 0.16;
/// Joint error (rad) at which a waypoint counts as reached. Loose enough for
/// servo noise.
const SETTLE_TOLERANCE: f64 = 1e-3;

impl ScriptedPolicy {
    pub fn new(name: impl Into<String>, skill: Skill, items: Vec<String>, drop_points: Vec<Vec3>, seed: u64) -> Self {
        Self {
            name: name.into(),
            skill,
            items,
            drop_points,
            seed,
            rng: ChaCha8Rng::seed_from_u64(seed),
            phase: Phase::Above,
            item: 0,
            grasp_offset: Vec3::zeros(),
            anchor: Vec3::zeros(),
            target: None,
        }
    }

    /// Script for any scene whose rubric names the items to move and a
    /// destination: the first `inside_region` region, else the support of
    /// the first `on_top_of` or the other instance of the first `near`.
    /// Items are the rubric's subject instances in order of appearance.
    pub fn for_rubric(name: impl Into<String>, skill: Skill, scene: &ComposedScene, seed: u64) -> Result<Self, super::EvalError> {
        use crate::scene::{Predicate, TOOL_INSTANCE};
        let mut items: Vec<String> = Vec::new();
        for step in &scene.rubric.steps {
            for id in &step.predicate.subject().ids {
                if id != TOOL_INSTANCE && !items.contains(id) {
                    items.push(id.clone());
                }
            }
        }
        if items.is_empty() {
            return Err(super::EvalError::Config("rubric names no items to move".into()));
        }
        let nominal = scene.nominal_states();
        let target = scene.rubric.steps.iter().find_map(|s| match &s.predicate {
            Predicate::InsideRegion { min, max, .. } => Some((
                Vec3::new(0.5 * (min[0] + max[0]), 0.5 * (min[1] + max[1]), min[2] + 0.08),
                0.45 * 0.5 * (max[1] - min[1]),
            )),
            _ => None,
        });
        let target = match target {
            Some(t) => t,
            None => {
                let support = scene.rubric.steps.iter().find_map(|s| match &s.predicate {
                    Predicate::OnTopOf { support, .. } => Some(support.clone()),
                    Predicate::Near { other, .. } => Some(other.clone()),
                    _ => None,
                });
                let support = support.ok_or_else(|| super::EvalError::Config("rubric has no destination for the items".into()))?;
                let pose = nominal
                    .get(&support)
                    .ok_or_else(|| super::EvalError::Config(format!("destination `{support}` is not an object instance")))?;
                let b = scene.shapes()[&support].world_bounds(pose);
                (
                    Vec3::new(0.5 * (b.min.x + b.max.x), 0.5 * (b.min.y + b.max.y), b.max.z + 0.06),
                    0.0,
                )
            }
        };
        let (center, spread) = target;
        let drops = (0..items.len())
            .map(|k| center + Vec3::new(0.0, if k % 2 == 0 { spread } else { -spread }, 0.0))
            .collect();
        Ok(Self::new(name, skill, items, drops, seed))
    }

    fn tool_down() -> Rotation {
        Rotation::from_axis_angle(&Vec3::x_axis(), std::f64::consts::PI)
    }

    fn waypoint(&self, input: &PolicyInput<'_>) -> Option<Vec3> {
        let obj = input.state.objects.get(self.items.get(self.item)?)?.translation.vector;
        let drop = self.drop_points[self.item.min(self.drop_points.len() - 1)];
        let grasp = obj + self.grasp_offset;
        Some(match self.phase {
            Phase::Above => grasp + Vec3::new(0.0, 0.0, HOVER),
            Phase::Descend | Phase::Close(_) => grasp,
            Phase::Lift => Vec3::new(self.anchor.x, self.anchor.y, CARRY_HEIGHT),
            Phase::Carry | Phase::Retreat => Vec3::new(drop.x, drop.y, CARRY_HEIGHT),
            Phase::Lower | Phase::Open(_) => drop,
            Phase::Idle => return None,
        })
    }

    fn gripper(&self) -> f64 {
        match self.phase {
            Phase::Close(_) | Phase::Lift | Phase::Carry | Phase::Lower => 1.0,
            _ => 0.0,
        }
    }

    fn advance(&mut self, input: &PolicyInput<'_>) {
        let next = match self.phase {
            Phase::Above => Phase::Descend,
            Phase::Descend if self.skill.reach_only => Phase::Idle,
            Phase::Descend => {
                self.anchor = input.state.objects[&self.items[self.item]].translation.vector;
                Phase::Close(0)
            }
            Phase::Close(n) if n < 3 => Phase::Close(n + 1),
            Phase::Close(_) => Phase::Lift,
            Phase::Lift if self.skill.lift_only => Phase::Idle,
            Phase::Lift => Phase::Carry,
            Phase::Carry => Phase::Lower,
            Phase::Lower => Phase::Open(0),
            Phase::Open(n) if n < 3 => Phase::Open(n + 1),
            Phase::Open(_) => Phase::Retreat,
            Phase::Retreat => {
                self.item += 1;
                self.start_item();
                if self.item >= self.items.len().min(self.skill.items) {
                    Phase::Idle
                } else {
                    Phase::Above
                }
            }
            Phase::Idle => Phase::Idle,
        };
        self.phase = next;
        self.target = None;
    }

    fn start_item(&mut self) {
        let s = self.skill.grasp_noise;
        self.grasp_offset = if s > 0.0 {
            let (nx, ny): (f64, f64) = (self.rng.sample(StandardNormal), self.rng.sample(StandardNormal));
            Vec3::new(s * nx, s * ny, 0.0)
        } else {
            Vec3::zeros()
        };
    }
}

impl Policy for ScriptedPolicy {
    fn name(&self) -> &str {
        &self.name
    }

    fn needs_images(&self) -> bool {
        false
    }

    fn reset(&mut self, episode_seed: u64) {
        self.rng = ChaCha8Rng::seed_from_u64(self.seed);
        self.rng.set_stream(episode_seed);
        self.phase = if self.skill.items == 0 { Phase::Idle } else { Phase::Above };
        self.item = 0;
        self.target = None;
        self.start_item();
    }

    fn act(&mut self, input: &PolicyInput<'_>) -> Result<PolicyReply, PolicyError> {
        let arm: Vec<usize> = input.scene.arm_dofs().iter().copied().take(ARM_DOF).collect();
        let q = &input.state.q;
        // a phase ends once the servos have reached its target
        let settled = |t: &[f64]| arm.iter().all(|&d| (t[d] - q[d]).abs() < SETTLE_TOLERANCE);
        let width_target = (1.0 - self.gripper()) * max_gripper_width(input.scene);
        if let Some(t) = &self.target {
            let gripper_done = input.scene.gripper_dof().map_or(true, |g| (q[g] - width_target).abs() < 1e-9);
            if settled(t) && gripper_done {
                self.advance(input);
            }
        }
        let done = self.phase == Phase::Idle;
        if self.target.is_none() {
            let goal = match self.waypoint(input) {
                Some(p) => solve_ik(input.scene, q, &pose(p, Self::tool_down()), 100),
                None => q.clone(),
            };
            self.target = Some(goal);
        }
        let t = self.target.as_ref().expect("set above");
        let mut row = [0.0; ACTION_DIM];
        for (c, &d) in arm.iter().enumerate() {
            row[c] = t[d];
        }
        row[ARM_DOF] = self.gripper();
        Ok(PolicyReply {
            chunk: ActionChunk::new(vec![row; self.skill.horizon.max(1)])?,
            done,
        })
    }
}
