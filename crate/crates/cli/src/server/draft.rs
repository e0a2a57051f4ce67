//! Session drafts and the asset library they draw from.

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use simeval_core::articulation::pose_articulated_splat_at;
use simeval_core::math::Vec3;
use simeval_core::scene::{
    content_hash, directory_hash, list_assets, CameraSpec, AssetSpec, NamedCamera, ObjectAsset, Placement, PlacementSpec,
    Rubric, SceneDescriptor, SceneParts, WristCamera, WristSpec,
};
use simeval_core::splat::{render, Camera, SplatScene, CANONICAL_FRAME};
use std::collections::{BTreeMap, VecDeque};
use std::path::{Path, PathBuf};

pub const UNDO_DEPTH: usize = 100;

/// Everything a session can place, plus the fixed parts of the template.
pub struct Library {
    pub template: SceneDescriptor,
    /// Template resolved once; sessions replace its editable fields.
    pub base: SceneParts,
    pub background_dir: PathBuf,
    pub robot_dir: PathBuf,
    pub assets: BTreeMap<String, (PathBuf, ObjectAsset)>,
}

fn absolute(p: &Path) -> PathBuf {
    std::fs::canonicalize(p).unwrap_or_else(|_| p.to_path_buf())
}

fn rel(base: &Path, p: &str) -> PathBuf {
    let p = Path::new(p);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

impl Library {
    /// Template assets first; assets under `root` are added, replacing
    /// template entries with the same id.
    pub fn load(template: &Path, root: Option<&Path>) -> Result<Self> {
        let text = std::fs::read_to_string(template).with_context(|| template.display().to_string())?;
        let desc = SceneDescriptor::from_toml(&text)?;
        let base_dir = template.parent().unwrap_or(Path::new("."));
        let base = desc.resolve(base_dir, &Default::default())?;
        let mut assets = BTreeMap::new();
        for (spec, asset) in desc.assets.iter().zip(&base.assets) {
            assets.insert(spec.id.clone(), (absolute(&rel(base_dir, &spec.path)), asset.clone()));
        }
        if let Some(root) = root {
            for a in list_assets(root)? {
                assets.insert(a.id.clone(), (absolute(&root.join(&a.id)), a));
            }
        }
        Ok(Self {
            background_dir: absolute(&rel(base_dir, &desc.background.path)),
            robot_dir: absolute(&rel(base_dir, &desc.robot.bundle)),
            template: desc,
            base,
            assets,
        })
    }

    pub fn has_link(&self, link: &str) -> bool {
        self.base.robot.art.model.link_index(link).is_some()
    }

    /// Small render of an asset from above and to the side.
    pub fn thumbnail(&self, id: &str, size: u32) -> Option<Vec<u8>> {
        let (_, asset) = self.assets.get(id)?;
        let bb = asset.bounds();
        let center = bb.center();
        let radius = 0.5 * bb.extent().norm().max(1e-3);
        let dir = Vec3::new(1.0, -0.8, 0.7).normalize();
        let cam = Camera::looking_at(center + dir * radius * 3.2, center, Vec3::z(), 40f64.to_radians(), size, size);
        Some(render(&asset.splats, &cam).ok()?.to_png())
    }
}

/// Editable part of a scene, kept in descriptor form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Draft {
    pub placements: Vec<PlacementSpec>,
    pub cameras: Vec<CameraSpec>,
    pub wrist: Option<WristSpec>,
    pub rubric: Rubric,
}

impl Draft {
    pub fn from_template(d: &SceneDescriptor) -> Self {
        Self {
            placements: d.placements.clone(),
            cameras: d.cameras.clone(),
            wrist: d.wrist.clone(),
            rubric: d.rubric.clone(),
        }
    }

    /// Assets the placements name, in first-use order, skipping unknown ids.
    fn used_assets<'a>(&self, lib: &'a Library) -> Vec<(&'a PathBuf, &'a ObjectAsset)> {
        let mut seen = Vec::new();
        let mut out = Vec::new();
        for p in &self.placements {
            if seen.contains(&p.asset) {
                continue;
            }
            seen.push(p.asset.clone());
            if let Some((dir, a)) = lib.assets.get(&p.asset) {
                out.push((dir, a));
            }
        }
        out
    }

    pub fn to_parts(&self, lib: &Library) -> SceneParts {
        let mut parts = lib.base.clone();
        parts.assets = self.used_assets(lib).into_iter().map(|(_, a)| a.clone()).collect();
        parts.placements = self
            .placements
            .iter()
            .map(|p| Placement {
                instance: p.instance.clone(),
                asset: p.asset.clone(),
                pose: p.pose.to_pose(),
                randomization: p.randomization,
            })
            .collect();
        parts.cameras = self
            .cameras
            .iter()
            .map(|c| NamedCamera {
                name: c.name.clone(),
                camera: c.camera(),
            })
            .collect();
        parts.wrist = self.wrist.as_ref().map(|w| WristCamera {
            name: w.camera.name.clone(),
            link: w.link.clone(),
            camera: w.camera.camera(),
        });
        parts.rubric = self.rubric.clone();
        parts
    }

    /// Problems that block saving. Dangling references are listed here,
    /// never rejected while editing.
    pub fn violations(&self, lib: &Library) -> Vec<String> {
        self.to_parts(lib).violations()
    }

    /// Descriptor with absolute paths; content hashes when `hashed`.
    pub fn to_descriptor(&self, lib: &Library, hashed: bool) -> Result<SceneDescriptor> {
        let mut d = lib.template.clone();
        d.background.path = lib.background_dir.to_string_lossy().into_owned();
        d.robot.bundle = lib.robot_dir.to_string_lossy().into_owned();
        d.background.sha256 = None;
        d.robot.sha256 = None;
        if hashed {
            d.background.sha256 = Some(content_hash(&lib.background_dir)?);
            d.robot.sha256 = Some(directory_hash(&lib.robot_dir)?);
        }
        d.assets = self
            .used_assets(lib)
            .into_iter()
            .map(|(dir, a)| {
                Ok(AssetSpec {
                    id: a.id.clone(),
                    path: dir.to_string_lossy().into_owned(),
                    sha256: if hashed { Some(content_hash(dir)?) } else { None },
                })
            })
            .collect::<Result<_>>()?;
        d.placements = self.placements.clone();
        d.cameras = self.cameras.clone();
        d.wrist = self.wrist.clone();
        d.rubric = self.rubric.clone();
        Ok(d)
    }

    /// Splats at the scan pose in the same order as `ComposedScene::flatten`,
    /// so previews of a valid draft match evaluation renders exactly.
    /// Placements with unknown assets are left out.
    pub fn flatten(&self, lib: &Library) -> Result<SplatScene> {
        let robot = &lib.base.robot;
        let mut out = lib.base.background.splats.clone();
        out.frame_label = CANONICAL_FRAME.into();
        out.extend(&pose_articulated_splat_at(&robot.art, &robot.art.q_scan, &robot.base)?);
        for p in &self.placements {
            if let Some((_, a)) = lib.assets.get(&p.asset) {
                out.extend(&a.splats.transformed(&p.pose.to_pose()));
            }
        }
        Ok(out)
    }

    /// Named external camera, or the wrist camera posed at the scan pose.
    pub fn camera(&self, lib: &Library, name: &str) -> Option<Camera> {
        if let Some(c) = self.cameras.iter().find(|c| c.name == name) {
            return Some(c.camera());
        }
        let w = self.wrist.as_ref().filter(|w| w.camera.name == name)?;
        let robot = &lib.base.robot;
        let model = &robot.art.model;
        let l = model.link_index(&w.link)?;
        let poses = model.link_poses(&robot.art.q_scan).ok()?;
        let mut cam = w.camera.camera();
        cam.pose = robot.base * poses[l] * cam.pose;
        Some(cam)
    }
}

/// Resizes a camera to `width` x `height`, scaling the intrinsics.
pub fn resized(cam: &Camera, width: u32, height: u32) -> Camera {
    let (sx, sy) = (width as f64 / cam.width as f64, height as f64 / cam.height as f64);
    Camera::new(cam.pose, cam.fx * sx, cam.fy * sy, cam.cx * sx, cam.cy * sy, width, height)
}

pub struct Session {
    pub id: String,
    pub draft: Draft,
    pub version: u64,
    pub undo: VecDeque<Draft>,
    pub dirty: bool,
}

impl Session {
    pub fn new(id: String, draft: Draft) -> Self {
        Self {
            id,
            draft,
            version: 0,
            undo: VecDeque::new(),
            dirty: false,
        }
    }

    /// Applies `f` to a copy of the draft; on success the old draft goes on
    /// the undo stack and the version moves on.
    pub fn mutate<E>(&mut self, f: impl FnOnce(&mut Draft) -> Result<(), E>) -> Result<(), E> {
        let mut next = self.draft.clone();
        f(&mut next)?;
        let prev = std::mem::replace(&mut self.draft, next);
        self.undo.push_back(prev);
        if self.undo.len() > UNDO_DEPTH {
            self.undo.pop_front();
        }
        self.version += 1;
        self.dirty = true;
        Ok(())
    }

    pub fn undo(&mut self) -> bool {
        match self.undo.pop_back() {
            Some(d) => {
                self.draft = d;
                self.version += 1;
                self.dirty = true;
                true
            }
            None => false,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use simeval_core::synthetic;

    fn draft() -> Draft {
        let rubric = synthetic::food_bussing_rubric();
        Draft {
            placements: Vec::new(),
            cameras: Vec::new(),
            wrist: None,
            rubric,
        }
    }

    #[test]
    fn undo_stack_is_bounded() {
        let mut s = Session::new("s".into(), draft());
        for k in 0..(UNDO_DEPTH + 20) {
            s.mutate::<()>(|d| {
                d.rubric.task = format!("t{k}");
                Ok(())
            })
            .unwrap();
        }
        assert_eq!(s.undo.len(), UNDO_DEPTH);
        assert_eq!(s.version, (UNDO_DEPTH + 20) as u64);
        assert!(s.undo());
        assert_eq!(s.draft.rubric.task, format!("t{}", UNDO_DEPTH + 18));
    }

    #[test]
    fn failed_mutation_leaves_no_trace() {
        let mut s = Session::new("s".into(), draft());
        let r = s.mutate(|d| {
            d.rubric.task = "changed".into();
            Err("nope")
        });
        assert!(r.is_err());
        assert_eq!(s.version, 0);
        assert!(s.undo.is_empty());
        assert_eq!(s.draft, draft());
        assert!(!s.undo());
    }

    #[test]
    fn resizing_keeps_the_field_of_view() {
        let c = Camera::looking_at(Vec3::new(1.0, 0.0, 1.0), Vec3::zeros(), Vec3::z(), 1.0, 64, 48);
        let r = resized(&c, 32, 24);
        assert!((r.fx / r.width as f64 - c.fx / c.width as f64).abs() < 1e-15);
        assert_eq!((r.width, r.height), (32, 24));
    }
}
