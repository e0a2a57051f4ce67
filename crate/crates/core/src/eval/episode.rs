//! Closed-loop episodes and suites.

use super::policy::{Observation, Policy, PolicyInput};
use super::world::{max_gripper_width, step_world_disturbed, ServoConfig, WorldState, ACTION_DIM, ARM_DOF};
use super::EvalError;
use crate::math::Pose;
use crate::scene::{sample_initial_state, ComposedScene, RubricTracker, WorldSnapshot};
use crate::splat::render;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeConfig {
    /// World steps at `servo.dt`; not a value taken from real evaluations.
    pub max_steps: usize,
    pub servo: ServoConfig,
    /// Re-query after this many rows; `None` runs each chunk to the end.
    pub replan_interval: Option<usize>,
    /// Standard deviation of per-step arm tracking noise (rad).
    pub joint_noise: f64,
    /// Keep a PNG of every external camera at each query.
    pub save_renders: bool,
    /// Starting joints; the scan configuration when `None`.
    pub q_init: Option<Vec<f64>>,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        Self {
            max_steps: 400,
            servo: ServoConfig::default(),
            replan_interval: None,
            joint_noise: 0.0,
            save_renders: false,
            q_init: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Termination {
    /// Every rubric step achieved.
    Success,
    PolicyDone,
    MaxSteps,
    /// Endpoint failure; excluded from scores.
    Infrastructure(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub action: [f64; ACTION_DIM],
    pub state: WorldState,
    pub progress: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub scene_hash: String,
    pub policy: String,
    pub seed: u64,
    pub initial: WorldState,
    pub steps: Vec<StepRecord>,
    pub score: f64,
    pub termination: Termination,
    /// (actions taken so far, camera, PNG bytes) when renders are saved,
    /// wrist view included.
    #[serde(skip)]
    pub frames: Vec<(usize, String, Vec<u8>)>,
}

impl EpisodeRecord {
    pub fn is_infrastructure_failure(&self) -> bool {
        matches!(self.termination, Termination::Infrastructure(_))
    }

    /// Snapshots from the initial state through every step.
    pub fn snapshots(&self, scene: &ComposedScene) -> Result<Vec<WorldSnapshot>, EvalError> {
        std::iter::once(&self.initial)
            .chain(self.steps.iter().map(|s| &s.state))
            .map(|s| s.snapshot(scene).map_err(EvalError::from))
            .collect()
    }
}

/// Seven arm joints and gripper closure in [0, 1].
pub fn proprio(scene: &ComposedScene, state: &WorldState) -> [f64; ACTION_DIM] {
    let mut out = [0.0; ACTION_DIM];
    for (c, &d) in scene.arm_dofs().iter().take(ARM_DOF).enumerate() {
        out[c] = state.q[d];
    }
    let wmax = max_gripper_width(scene);
    out[ARM_DOF] = if wmax > 0.0 { 1.0 - state.gripper_width / wmax } else { 0.0 };
    out
}

/// Renders every external camera and the wrist camera for `state`.
pub fn render_observation(scene: &ComposedScene, state: &WorldState, step: usize) -> Result<Observation, EvalError> {
    let flat = scene.flatten(&state.q, &state.objects)?;
    let mut images = BTreeMap::new();
    for c in &scene.cameras {
        images.insert(c.name.clone(), render(&flat, &c.camera)?.to_rgb8());
    }
    let wrist = render(&flat, &scene.wrist_camera(&state.q)?)?.to_rgb8();
    Ok(Observation {
        images,
        wrist: Some(wrist),
        proprio: proprio(scene, state),
        instruction: scene.rubric.instruction.clone(),
        step,
    })
}

fn blind_observation(scene: &ComposedScene, state: &WorldState, step: usize) -> Observation {
    Observation {
        images: BTreeMap::new(),
        wrist: None,
        proprio: proprio(scene, state),
        instruction: scene.rubric.instruction.clone(),
        step,
    }
}

/// Initial world for an episode: sampled objects, robot at `q_init` or the scan pose.
pub fn initial_state(scene: &ComposedScene, seed: u64, cfg: &EpisodeConfig) -> Result<WorldState, EvalError> {
    let q = cfg.q_init.clone().unwrap_or_else(|| scene.q_scan().to_vec());
    if q.len() != scene.dof() {
        return Err(EvalError::Config(format!("q_init has {} values for {} joints", q.len(), scene.dof())));
    }
    Ok(WorldState::new(scene, q, sample_initial_state(scene, seed)?))
}

/// Runs one episode. Deterministic for a deterministic policy.
pub fn run_episode(
    scene: &ComposedScene,
    scene_hash: &str,
    policy: &mut dyn Policy,
    seed: u64,
    cfg: &EpisodeConfig,
) -> Result<EpisodeRecord, EvalError> {
    if scene.arm_dofs().len() != ARM_DOF {
        return Err(EvalError::Config(format!(
            "robot has {} arm joints; actions drive exactly {ARM_DOF}",
            scene.arm_dofs().len()
        )));
    }
    policy.reset(seed);
    let mut noise_rng = ChaCha8Rng::seed_from_u64(seed);
    noise_rng.set_stream(1);
    let initial = initial_state(scene, seed, cfg)?;
    let mut state = initial.clone();
    let mut tracker = RubricTracker::new(&scene.rubric);
    tracker.observe(scene.shapes(), &scene.rubric, &state.snapshot(scene)?)?;
    let mut steps = Vec::new();
    let mut frames = Vec::new();
    let mut step = 0;
    let termination = loop {
        if tracker.complete() {
            break Termination::Success;
        }
        if step >= cfg.max_steps {
            break Termination::MaxSteps;
        }
        let obs = if policy.needs_images() || cfg.save_renders {
            render_observation(scene, &state, step)?
        } else {
            blind_observation(scene, &state, step)
        };
        if cfg.save_renders {
            save_frames(&mut frames, step, scene, &obs)?;
        }
        let reply = match policy.act(&PolicyInput {
            observation: &obs,
            scene,
            state: &state,
        }) {
            Ok(r) => r,
            Err(e) => break Termination::Infrastructure(e.to_string()),
        };
        let h = reply.chunk.horizon();
        let n = cfg.replan_interval.map_or(h, |k| k.clamp(1, h));
        for (k, row) in reply.chunk.actions[..n].iter().enumerate() {
            if cfg.save_renders && k > 0 {
                save_frames(&mut frames, step, scene, &render_observation(scene, &state, step)?)?;
            }
            let mut dist = [0.0; ARM_DOF];
            if cfg.joint_noise > 0.0 {
                for d in &mut dist {
                    *d = cfg.joint_noise * noise_rng.sample::<f64, _>(StandardNormal);
                }
            }
            state = step_world_disturbed(scene, &state, row, &cfg.servo, &dist);
            step += 1;
            let progress = tracker.observe(scene.shapes(), &scene.rubric, &state.snapshot(scene)?)?;
            steps.push(StepRecord {
                step,
                action: *row,
                state: state.clone(),
                progress,
            });
            if tracker.complete() || step >= cfg.max_steps {
                break;
            }
        }
        if reply.done && !tracker.complete() {
            break Termination::PolicyDone;
        }
    };
    Ok(EpisodeRecord {
        scene_hash: scene_hash.to_string(),
        policy: policy.name().to_string(),
        seed,
        initial,
        score: tracker.progress(),
        steps,
        termination,
        frames,
    })
}

/// Frames are keyed by the number of actions taken before they were seen.
fn save_frames(frames: &mut Vec<(usize, String, Vec<u8>)>, step: usize, scene: &ComposedScene, obs: &Observation) -> Result<(), EvalError> {
    let wrist = obs.wrist.as_ref().map(|w| (scene.wrist.name.as_str(), w));
    let all = obs.images.iter().map(|(k, v)| (k.as_str(), v)).chain(wrist);
    for (name, img) in all {
        let mut png = Vec::new();
        image::DynamicImage::ImageRgb8(img.clone())
            .write_to(&mut std::io::Cursor::new(&mut png), image::ImageFormat::Png)
            .map_err(|e| EvalError::Io(e.to_string()))?;
        frames.push((step, name.to_string(), png));
    }
    Ok(())
}

fn pose_fields(p: &Pose) -> [f64; 7] {
    let t = p.translation.vector;
    let q = crate::math::quat_components(&p.rotation);
    [t.x, t.y, t.z, q[0], q[1], q[2], q[3]]
}

#[derive(Serialize)]
struct RecordManifest<'a> {
    scene_hash: &'a str,
    policy: &'a str,
    seed: u64,
    score: f64,
    termination: &'a Termination,
    steps: usize,
    progress: Vec<f64>,
}

/// Writes `manifest.json`, `steps.csv`, and any saved frames under `dir`.
pub fn write_record(dir: &Path, rec: &EpisodeRecord) -> Result<(), EvalError> {
    let io = |e: std::io::Error| EvalError::Io(format!("{}: {e}", dir.display()));
    std::fs::create_dir_all(dir).map_err(io)?;
    let manifest = RecordManifest {
        scene_hash: &rec.scene_hash,
        policy: &rec.policy,
        seed: rec.seed,
        score: rec.score,
        termination: &rec.termination,
        steps: rec.steps.len(),
        progress: rec.steps.iter().map(|s| s.progress).collect(),
    };
    let json = serde_json::to_string_pretty(&manifest).map_err(|e| EvalError::Io(e.to_string()))?;
    std::fs::write(dir.join("manifest.json"), json).map_err(io)?;

    let mut csv = String::new();
    let dof = rec.initial.q.len();
    let ids: Vec<&String> = rec.initial.objects.keys().collect();
    csv.push_str("step,time");
    (0..ACTION_DIM).for_each(|i| write!(csv, ",a{i}").unwrap());
    (0..dof).for_each(|i| write!(csv, ",q{i}").unwrap());
    csv.push_str(",gripper_width,attached,progress");
    for id in &ids {
        for f in ["x", "y", "z", "qw", "qx", "qy", "qz"] {
            write!(csv, ",{id}.{f}").unwrap();
        }
    }
    csv.push('\n');
    for s in &rec.steps {
        write!(csv, "{},{}", s.step, s.state.time).unwrap();
        s.action.iter().for_each(|v| write!(csv, ",{v}").unwrap());
        s.state.q.iter().for_each(|v| write!(csv, ",{v}").unwrap());
        let attached = s.state.attachment.as_ref().map_or("", |a| a.instance.as_str());
        write!(csv, ",{},{attached},{}", s.state.gripper_width, s.progress).unwrap();
        for id in &ids {
            pose_fields(&s.state.objects[*id]).iter().for_each(|v| write!(csv, ",{v}").unwrap());
        }
        csv.push('\n');
    }
    std::fs::write(dir.join("steps.csv"), csv).map_err(io)?;
    if !rec.frames.is_empty() {
        let fdir = dir.join("frames");
        std::fs::create_dir_all(&fdir).map_err(io)?;
        for (step, cam, png) in &rec.frames {
            std::fs::write(fdir.join(format!("{step:05}_{cam}.png")), png).map_err(io)?;
        }
    }
    Ok(())
}

/// One scene entry of a suite.
pub struct SuiteScene<'a> {
    pub name: String,
    pub scene: &'a ComposedScene,
    pub hash: String,
}

/// Mean progress per (policy, scene) over episodes with shared seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteResult {
    pub policies: Vec<String>,
    pub scenes: Vec<String>,
    /// `scores[p][s]`; `None` when every episode failed for infrastructure reasons.
    pub scores: Vec<Vec<Option<f64>>>,
    /// Scored episodes per cell.
    pub episodes: Vec<Vec<usize>>,
    pub infrastructure_failures: Vec<Vec<usize>>,
    /// Per-episode scores, `None` for infrastructure failures.
    pub episode_scores: Vec<Vec<Vec<Option<f64>>>>,
}

/// Runs every policy on every scene for episode seeds `0..episodes`.
pub fn run_suite(
    scenes: &[SuiteScene<'_>],
    policies: &mut [Box<dyn Policy>],
    episodes: usize,
    cfg: &EpisodeConfig,
) -> Result<SuiteResult, EvalError> {
    run_suite_with(scenes, policies, episodes, cfg, &mut |_, _, _| Ok(()))
}

/// [`run_suite`] calling `on_episode(policy, scene, record)` after every episode.
pub fn run_suite_with(
    scenes: &[SuiteScene<'_>],
    policies: &mut [Box<dyn Policy>],
    episodes: usize,
    cfg: &EpisodeConfig,
    on_episode: &mut dyn FnMut(usize, usize, &EpisodeRecord) -> Result<(), EvalError>,
) -> Result<SuiteResult, EvalError> {
    if scenes.is_empty() || policies.is_empty() {
        return Err(EvalError::Config("a suite needs at least one scene and one policy".into()));
    }
    let mut result = SuiteResult {
        policies: policies.iter().map(|p| p.name().to_string()).collect(),
        scenes: scenes.iter().map(|s| s.name.clone()).collect(),
        scores: Vec::new(),
        episodes: Vec::new(),
        infrastructure_failures: Vec::new(),
        episode_scores: Vec::new(),
    };
    for (pi, policy) in policies.iter_mut().enumerate() {
        let (mut row, mut counts, mut fails, mut per) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
        for (si, s) in scenes.iter().enumerate() {
            let mut eps = Vec::with_capacity(episodes);
            for seed in 0..episodes as u64 {
                let rec = run_episode(s.scene, &s.hash, policy.as_mut(), seed, cfg)?;
                on_episode(pi, si, &rec)?;
                eps.push((!rec.is_infrastructure_failure()).then_some(rec.score));
            }
            let scored: Vec<f64> = eps.iter().flatten().copied().collect();
            row.push((!scored.is_empty()).then(|| scored.iter().sum::<f64>() / scored.len() as f64));
            counts.push(scored.len());
            fails.push(eps.len() - scored.len());
            per.push(eps);
        }
        result.scores.push(row);
        result.episodes.push(counts);
        result.infrastructure_failures.push(fails);
        result.episode_scores.push(per);
    }
    Ok(result)
}
