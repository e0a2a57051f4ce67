//! TOML scene descriptor with content hashes.
//!
//! Paths are relative to the descriptor's directory unless absolute.

use super::asset::{content_hash, load_asset, load_background, read, sha256_hex, write};
use super::compose::{compose, ComposedScene, NamedCamera, Placement, Randomization, RobotPlacement, SceneParts, ToolFrame, WristCamera};
use super::rubric::Rubric;
use super::SceneError;
use crate::articulation::read_bundle;
use crate::math::{pose, quat_components, quat_from_components, Pose, Vec3};
use crate::splat::Camera;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseSpec {
    pub translation: [f64; 3],
    /// Quaternion as `[w, x, y, z]`.
    #[serde(default = "identity_quat")]
    pub rotation: [f64; 4],
}

fn identity_quat() -> [f64; 4] {
    [1.0, 0.0, 0.0, 0.0]
}

impl From<&Pose> for PoseSpec {
    fn from(p: &Pose) -> Self {
        let v = p.translation.vector;
        Self {
            translation: [v.x, v.y, v.z],
            rotation: quat_components(&p.rotation),
        }
    }
}

impl PoseSpec {
    pub fn to_pose(&self) -> Pose {
        pose(Vec3::from(self.translation), quat_from_components(self.rotation))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathSpec {
    pub path: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sha256: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobotSpec {
    pub bundle: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sha256: Option<String>,
    pub base: PoseSpec,
    pub tool_link: String,
    pub tool_offset: PoseSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gripper_joint: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssetSpec {
    pub id: String,
    pub path: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sha256: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlacementSpec {
    pub instance: String,
    pub asset: String,
    pub pose: PoseSpec,
    #[serde(default, skip_serializing_if = "is_default")]
    pub randomization: Randomization,
}

fn is_default(r: &Randomization) -> bool {
    *r == Randomization::default()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraSpec {
    pub name: String,
    pub pose: PoseSpec,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl CameraSpec {
    pub fn new(name: impl Into<String>, cam: &Camera) -> Self {
        Self {
            name: name.into(),
            pose: PoseSpec::from(&cam.pose),
            fx: cam.fx,
            fy: cam.fy,
            cx: cam.cx,
            cy: cam.cy,
            width: cam.width,
            height: cam.height,
        }
    }

    pub fn camera(&self) -> Camera {
        Camera::new(self.pose.to_pose(), self.fx, self.fy, self.cx, self.cy, self.width, self.height)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WristSpec {
    pub link: String,
    /// Link-local camera pose and intrinsics.
    #[serde(flatten)]
    pub camera: CameraSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneDescriptor {
    pub seed: u64,
    pub background: PathSpec,
    pub robot: RobotSpec,
    #[serde(default)]
    pub assets: Vec<AssetSpec>,
    #[serde(default)]
    pub placements: Vec<PlacementSpec>,
    #[serde(default)]
    pub cameras: Vec<CameraSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wrist: Option<WristSpec>,
    pub rubric: Rubric,
}

/// Directory overrides for the background, robot bundle, and object assets.
#[derive(Debug, Clone, Default)]
pub struct Roots {
    pub background: Option<PathBuf>,
    pub robot: Option<PathBuf>,
    /// Asset `id` resolves to `<objects>/<id>`.
    pub objects: Option<PathBuf>,
}

/// Hash over every file in a directory tree, keyed by relative path.
pub fn directory_hash(dir: &Path) -> Result<String, SceneError> {
    fn walk(dir: &Path, out: &mut Vec<PathBuf>) -> Result<(), SceneError> {
        let rd = std::fs::read_dir(dir).map_err(|e| SceneError::Io(format!("{}: {e}", dir.display())))?;
        for e in rd {
            let p = e.map_err(|e| SceneError::Io(e.to_string()))?.path();
            if p.is_dir() {
                walk(&p, out)?;
            } else {
                out.push(p);
            }
        }
        Ok(())
    }
    let mut files = Vec::new();
    walk(dir, &mut files)?;
    files.sort();
    let mut h = Sha256::new();
    for f in files {
        let rel = f.strip_prefix(dir).unwrap_or(&f).to_string_lossy().replace('\\', "/");
        h.update(rel.as_bytes());
        h.update([0u8]);
        h.update(read(&f)?);
    }
    Ok(hex::encode(h.finalize()))
}

fn resolve(base: &Path, p: &str) -> PathBuf {
    let p = Path::new(p);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn check_hash(path: &Path, expected: &Option<String>, actual: impl FnOnce() -> Result<String, SceneError>) -> Result<(), SceneError> {
    if let Some(expected) = expected {
        let actual = actual()?;
        if &actual != expected {
            return Err(SceneError::HashMismatch {
                path: path.display().to_string(),
                expected: expected.clone(),
                actual,
            });
        }
    }
    Ok(())
}

impl SceneDescriptor {
    pub fn from_toml(text: &str) -> Result<Self, SceneError> {
        toml::from_str(text).map_err(|e| SceneError::Descriptor(e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String, SceneError> {
        toml::to_string_pretty(self).map_err(|e| SceneError::Descriptor(e.to_string()))
    }

    /// Loads every referenced file, checking hashes where given.
    pub fn resolve(&self, base: &Path, roots: &Roots) -> Result<SceneParts, SceneError> {
        let bg_dir = roots.background.clone().unwrap_or_else(|| resolve(base, &self.background.path));
        check_hash(&bg_dir, &self.background.sha256, || content_hash(&bg_dir))?;
        let background = load_background(&bg_dir)?;

        let robot_dir = roots.robot.clone().unwrap_or_else(|| resolve(base, &self.robot.bundle));
        check_hash(&robot_dir, &self.robot.sha256, || directory_hash(&robot_dir))?;
        let art = read_bundle(&robot_dir)?;

        let mut assets = Vec::new();
        for a in &self.assets {
            let dir = match &roots.objects {
                Some(root) => root.join(&a.id),
                None => resolve(base, &a.path),
            };
            check_hash(&dir, &a.sha256, || content_hash(&dir))?;
            let mut asset = load_asset(&dir)?;
            asset.id = a.id.clone();
            assets.push(asset);
        }
        Ok(SceneParts {
            background,
            robot: RobotPlacement {
                art,
                base: self.robot.base.to_pose(),
                tool: ToolFrame {
                    link: self.robot.tool_link.clone(),
                    offset: self.robot.tool_offset.to_pose(),
                    gripper_joint: self.robot.gripper_joint.clone(),
                },
            },
            assets,
            placements: self
                .placements
                .iter()
                .map(|p| Placement {
                    instance: p.instance.clone(),
                    asset: p.asset.clone(),
                    pose: p.pose.to_pose(),
                    randomization: p.randomization,
                })
                .collect(),
            cameras: self
                .cameras
                .iter()
                .map(|c| NamedCamera {
                    name: c.name.clone(),
                    camera: c.camera(),
                })
                .collect(),
            wrist: self.wrist.as_ref().map(|w| WristCamera {
                name: w.camera.name.clone(),
                link: w.link.clone(),
                camera: w.camera.camera(),
            }),
            rubric: self.rubric.clone(),
            seed: self.seed,
        })
    }

    /// Descriptor for `parts` whose files live at the given paths, with fresh hashes.
    pub fn describe(
        parts: &SceneParts,
        background: &Path,
        robot_bundle: &Path,
        asset_dirs: &BTreeMap<String, PathBuf>,
    ) -> Result<Self, SceneError> {
        let mut assets = Vec::new();
        for a in &parts.assets {
            let dir = asset_dirs
                .get(&a.id)
                .ok_or_else(|| SceneError::Descriptor(format!("no directory known for asset `{}`", a.id)))?;
            assets.push(AssetSpec {
                id: a.id.clone(),
                path: dir.to_string_lossy().into_owned(),
                sha256: Some(content_hash(dir)?),
            });
        }
        Ok(Self {
            seed: parts.seed,
            background: PathSpec {
                path: background.to_string_lossy().into_owned(),
                sha256: Some(content_hash(background)?),
            },
            robot: RobotSpec {
                bundle: robot_bundle.to_string_lossy().into_owned(),
                sha256: Some(directory_hash(robot_bundle)?),
                base: PoseSpec::from(&parts.robot.base),
                tool_link: parts.robot.tool.link.clone(),
                tool_offset: PoseSpec::from(&parts.robot.tool.offset),
                gripper_joint: parts.robot.tool.gripper_joint.clone(),
            },
            assets,
            placements: parts
                .placements
                .iter()
                .map(|p| PlacementSpec {
                    instance: p.instance.clone(),
                    asset: p.asset.clone(),
                    pose: PoseSpec::from(&p.pose),
                    randomization: p.randomization,
                })
                .collect(),
            cameras: parts.cameras.iter().map(|c| CameraSpec::new(&c.name, &c.camera)).collect(),
            wrist: parts.wrist.as_ref().map(|w| WristSpec {
                link: w.link.clone(),
                camera: CameraSpec::new(&w.name, &w.camera),
            }),
            rubric: parts.rubric.clone(),
        })
    }
}

/// A composed scene plus the hash of the descriptor text it came from.
#[derive(Debug, Clone)]
pub struct LoadedScene {
    pub scene: ComposedScene,
    pub descriptor: SceneDescriptor,
    pub hash: String,
}

pub fn load_scene(path: &Path, roots: &Roots) -> Result<LoadedScene, SceneError> {
    let bytes = read(path)?;
    let text = String::from_utf8(bytes).map_err(|e| SceneError::Descriptor(format!("{}: {e}", path.display())))?;
    let descriptor = SceneDescriptor::from_toml(&text)?;
    let base = path.parent().unwrap_or(Path::new("."));
    let scene = compose(descriptor.resolve(base, roots)?)?;
    Ok(LoadedScene {
        scene,
        descriptor,
        hash: sha256_hex(text.as_bytes()),
    })
}

pub fn save_descriptor(path: &Path, d: &SceneDescriptor) -> Result<(), SceneError> {
    write(path, d.to_toml()?.as_bytes())
}
