//! Object and background assets on disk.
//!
//! ```text
//! <asset>/splats.pspl   object-local splats
//! <asset>/mesh.obj      object-local collision mesh
//! <asset>/asset.toml    mass = <kg>
//! ```

use super::SceneError;
use crate::math::Aabb;
use crate::recon::TriangleMesh;
use crate::splat::io::{load_splats, save_splats};
use crate::splat::SplatScene;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::fs;
use std::path::{Path, PathBuf};

/// Largest allowed gap between splat and mesh centroids of one asset (m).
pub const CENTROID_TOLERANCE: f64 = 0.05;

pub const SPLATS_FILE: &str = "splats.pspl";
pub const MESH_FILE: &str = "mesh.obj";
pub const META_FILE: &str = "asset.toml";

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectAsset {
    pub id: String,
    pub splats: SplatScene,
    pub mesh: TriangleMesh,
    /// Metadata only; no dynamics use it.
    pub mass: f64,
}

impl ObjectAsset {
    pub fn new(id: impl Into<String>, splats: SplatScene, mesh: TriangleMesh, mass: f64) -> Result<Self, SceneError> {
        let id = id.into();
        let bad = |reason: String| SceneError::Asset { id: id.clone(), reason };
        if splats.is_empty() {
            return Err(bad("no splats".into()));
        }
        if mesh.triangles.is_empty() {
            return Err(bad("empty mesh".into()));
        }
        mesh.validate().map_err(|e| bad(e.to_string()))?;
        if !(mass >= 0.0) || !mass.is_finite() {
            return Err(bad(format!("mass must be nonnegative, got {mass}")));
        }
        let (Some(sc), Some(mc)) = (splats.centroid(), mesh.surface_centroid()) else {
            return Err(bad("degenerate geometry".into()));
        };
        let gap = (sc - mc).norm();
        if gap > CENTROID_TOLERANCE {
            return Err(bad(format!("splat and mesh centroids are {gap:.3} m apart")));
        }
        Ok(Self { id, splats, mesh, mass })
    }

    pub fn bounds(&self) -> Aabb {
        self.mesh.bounding_box()
    }
}

/// Static environment: splats and collision mesh, both in F0.
#[derive(Debug, Clone, PartialEq)]
pub struct Background {
    pub splats: SplatScene,
    pub mesh: TriangleMesh,
}

#[derive(Serialize, Deserialize)]
struct AssetMeta {
    mass: f64,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn file_sha256(path: &Path) -> Result<String, SceneError> {
    Ok(sha256_hex(&read(path)?))
}

pub(crate) fn read(path: &Path) -> Result<Vec<u8>, SceneError> {
    fs::read(path).map_err(|e| SceneError::Io(format!("{}: {e}", path.display())))
}

pub(crate) fn write(path: &Path, bytes: &[u8]) -> Result<(), SceneError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| SceneError::Io(format!("{}: {e}", parent.display())))?;
    }
    fs::write(path, bytes).map_err(|e| SceneError::Io(format!("{}: {e}", path.display())))
}

fn read_splats_mesh(dir: &Path) -> Result<(SplatScene, TriangleMesh), SceneError> {
    let sp = dir.join(SPLATS_FILE);
    let splats = load_splats(&read(&sp)?).map_err(|e| SceneError::Io(format!("{}: {e}", sp.display())))?;
    let mp = dir.join(MESH_FILE);
    let text = String::from_utf8(read(&mp)?).map_err(|e| SceneError::Io(format!("{}: {e}", mp.display())))?;
    let mesh = TriangleMesh::from_obj(&text).map_err(|e| SceneError::Io(format!("{}: {e}", mp.display())))?;
    Ok((splats, mesh))
}

/// Loads `<dir>` as an asset whose id is the directory name.
pub fn load_asset(dir: &Path) -> Result<ObjectAsset, SceneError> {
    let id = dir
        .file_name()
        .and_then(|s| s.to_str())
        .ok_or_else(|| SceneError::Io(format!("{}: not a named directory", dir.display())))?
        .to_string();
    let (splats, mesh) = read_splats_mesh(dir)?;
    let meta_path = dir.join(META_FILE);
    let mass = if meta_path.exists() {
        let text = String::from_utf8_lossy(&read(&meta_path)?).into_owned();
        toml::from_str::<AssetMeta>(&text)
            .map_err(|e| SceneError::Io(format!("{}: {e}", meta_path.display())))?
            .mass
    } else {
        0.0
    };
    ObjectAsset::new(id, splats, mesh, mass)
}

pub fn write_asset(root: &Path, asset: &ObjectAsset) -> Result<PathBuf, SceneError> {
    let dir = root.join(&asset.id);
    write(&dir.join(SPLATS_FILE), &save_splats(&asset.splats))?;
    write(&dir.join(MESH_FILE), asset.mesh.to_obj().as_bytes())?;
    let meta = toml::to_string(&AssetMeta { mass: asset.mass }).map_err(|e| SceneError::Descriptor(e.to_string()))?;
    write(&dir.join(META_FILE), meta.as_bytes())?;
    Ok(dir)
}

/// Every asset directory directly under `root`, sorted by id.
pub fn list_assets(root: &Path) -> Result<Vec<ObjectAsset>, SceneError> {
    let entries = fs::read_dir(root).map_err(|e| SceneError::Io(format!("{}: {e}", root.display())))?;
    let mut dirs: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join(SPLATS_FILE).is_file())
        .collect();
    dirs.sort();
    dirs.iter().map(|d| load_asset(d)).collect()
}

pub fn load_background(dir: &Path) -> Result<Background, SceneError> {
    let (splats, mesh) = read_splats_mesh(dir)?;
    Ok(Background { splats, mesh })
}

pub fn write_background(dir: &Path, bg: &Background) -> Result<(), SceneError> {
    write(&dir.join(SPLATS_FILE), &save_splats(&bg.splats))?;
    write(&dir.join(MESH_FILE), bg.mesh.to_obj().as_bytes())
}

/// Sha256 of an asset or background directory: its splat file, then its mesh file.
pub fn content_hash(dir: &Path) -> Result<String, SceneError> {
    let mut h = Sha256::new();
    h.update(read(&dir.join(SPLATS_FILE))?);
    h.update(read(&dir.join(MESH_FILE))?);
    Ok(hex::encode(h.finalize()))
}
