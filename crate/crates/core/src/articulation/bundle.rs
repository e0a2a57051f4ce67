//! On-disk articulated-splat bundle.
//!
//! ```text
//! bundle/
//!   manifest.json      q_scan, cutoff, drop count, per-link file names
//!   model.json         kinematic model
//!   links/<link>.pspl  link-local splats
//!   links/<link>.obj   link-local mesh (optional)
//! ```

use super::assign::ArticulatedSplat;
use super::model::KinematicModel;
use super::ArticulationError;
use crate::recon::TriangleMesh;
use crate::splat::io::{load_splats, save_splats};
use crate::splat::SplatScene;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct LinkEntry {
    name: String,
    splats: String,
    mesh: Option<String>,
    source_indices: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Manifest {
    q_scan: Vec<f64>,
    cutoff: f64,
    dropped: usize,
    frame_label: String,
    links: Vec<LinkEntry>,
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> ArticulationError {
    ArticulationError::Bundle(format!("{}: {e}", path.display()))
}

pub fn write_bundle(dir: &Path, art: &ArticulatedSplat) -> Result<(), ArticulationError> {
    let links_dir = dir.join("links");
    fs::create_dir_all(&links_dir).map_err(|e| io_err(&links_dir, e))?;
    let mut entries = Vec::new();
    for (l, link) in art.model.links.iter().enumerate() {
        let splat_name = format!("links/{}.pspl", link.name);
        let scene = SplatScene::from_primitives(format!("link:{}", link.name), art.link_splats[l].clone());
        let p = dir.join(&splat_name);
        fs::write(&p, save_splats(&scene)).map_err(|e| io_err(&p, e))?;
        let mesh = match art.link_meshes.get(&link.name) {
            Some(m) => {
                let mesh_name = format!("links/{}.obj", link.name);
                let p = dir.join(&mesh_name);
                fs::write(&p, m.to_obj()).map_err(|e| io_err(&p, e))?;
                Some(mesh_name)
            }
            None => None,
        };
        entries.push(LinkEntry {
            name: link.name.clone(),
            splats: splat_name,
            mesh,
            source_indices: art.source_indices[l].clone(),
        });
    }
    let manifest = Manifest {
        q_scan: art.q_scan.clone(),
        cutoff: art.cutoff,
        dropped: art.dropped,
        frame_label: art.frame_label.clone(),
        links: entries,
    };
    let p = dir.join("model.json");
    fs::write(&p, serde_json::to_vec_pretty(&art.model).expect("model serializes")).map_err(|e| io_err(&p, e))?;
    let p = dir.join("manifest.json");
    fs::write(&p, serde_json::to_vec_pretty(&manifest).expect("manifest serializes")).map_err(|e| io_err(&p, e))?;
    Ok(())
}

pub fn read_bundle(dir: &Path) -> Result<ArticulatedSplat, ArticulationError> {
    let p = dir.join("manifest.json");
    let manifest: Manifest =
        serde_json::from_slice(&fs::read(&p).map_err(|e| io_err(&p, e))?).map_err(|e| io_err(&p, e))?;
    let p = dir.join("model.json");
    let model: KinematicModel =
        serde_json::from_slice(&fs::read(&p).map_err(|e| io_err(&p, e))?).map_err(|e| io_err(&p, e))?;
    if manifest.links.len() != model.links.len() {
        return Err(ArticulationError::Bundle("manifest and model disagree on links".into()));
    }
    let mut link_splats = Vec::new();
    let mut source_indices = Vec::new();
    let mut link_meshes = BTreeMap::new();
    for (entry, link) in manifest.links.iter().zip(&model.links) {
        if entry.name != link.name {
            return Err(ArticulationError::Bundle(format!("link `{}` out of order", entry.name)));
        }
        let p = dir.join(&entry.splats);
        let scene = load_splats(&fs::read(&p).map_err(|e| io_err(&p, e))?).map_err(|e| io_err(&p, e))?;
        if scene.len() != entry.source_indices.len() {
            return Err(io_err(&p, "splat count does not match manifest"));
        }
        link_splats.push(scene.primitives);
        source_indices.push(entry.source_indices.clone());
        if let Some(m) = &entry.mesh {
            let p = dir.join(m);
            let text = fs::read_to_string(&p).map_err(|e| io_err(&p, e))?;
            link_meshes.insert(link.name.clone(), TriangleMesh::from_obj(&text).map_err(|e| io_err(&p, e))?);
        }
    }
    Ok(ArticulatedSplat {
        model,
        q_scan: manifest.q_scan,
        link_splats,
        source_indices,
        link_meshes,
        cutoff: manifest.cutoff,
        dropped: manifest.dropped,
        frame_label: manifest.frame_label,
    })
}
