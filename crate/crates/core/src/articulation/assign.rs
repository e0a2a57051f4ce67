//! Anchoring robot splats to links and reposing them.

use super::model::{Geometry, KinematicModel};
use super::ArticulationError;
use crate::math::{transform_point, Pose, Vec3};
use crate::recon::TriangleMesh;
use crate::splat::{GaussianPrimitive, SplatScene};
use std::collections::BTreeMap;

/// Default distance beyond which a splat is not attributed to any link.
pub const DEFAULT_CUTOFF: f64 = 0.05;

/// Robot splats partitioned by link, stored in link-local frames.
#[derive(Debug, Clone, PartialEq)]
pub struct ArticulatedSplat {
    pub model: KinematicModel,
    pub q_scan: Vec<f64>,
    /// One entry per link, indexed like `model.links`.
    pub link_splats: Vec<Vec<GaussianPrimitive>>,
    /// Original position of each local primitive in the input scene.
    pub source_indices: Vec<Vec<usize>>,
    /// Link-local meshes keyed by link name.
    pub link_meshes: BTreeMap<String, TriangleMesh>,
    pub cutoff: f64,
    pub dropped: usize,
    pub frame_label: String,
}

fn geometry_distance(model: &KinematicModel, link: usize, link_pose: &Pose, meshes: &BTreeMap<String, TriangleMesh>, p: &Vec3) -> Option<f64> {
    let local = link_pose.inverse_transform_point(&nalgebra::Point3::from(*p)).coords;
    let mut best: Option<f64> = None;
    for c in &model.links[link].collisions {
        let in_geom = c.origin.inverse_transform_point(&nalgebra::Point3::from(local)).coords;
        if let Some(d) = c.geometry.signed_distance(&in_geom) {
            best = Some(best.map_or(d.abs(), |b: f64| b.min(d.abs())));
        }
    }
    if let Some(mesh) = meshes.get(&model.links[link].name) {
        let d = mesh.distance_to(&local);
        best = Some(best.map_or(d, |b| b.min(d)));
    }
    best
}

fn link_has_geometry(model: &KinematicModel, link: usize, meshes: &BTreeMap<String, TriangleMesh>) -> bool {
    model.links[link]
        .collisions
        .iter()
        .any(|c| !matches!(c.geometry, Geometry::Mesh { .. }))
        || meshes.contains_key(&model.links[link].name)
}

/// Assigns each primitive to the link whose posed geometry at `q_scan` is
/// nearest its center. `link_meshes` are in link-local frames.
pub fn assign_splats_to_links(
    robot_splats: &SplatScene,
    model: &KinematicModel,
    q_scan: &[f64],
    link_meshes: &BTreeMap<String, TriangleMesh>,
    cutoff: f64,
) -> Result<ArticulatedSplat, ArticulationError> {
    if robot_splats.is_empty() {
        return Err(ArticulationError::EmptySplats);
    }
    for (l, link) in model.links.iter().enumerate() {
        if !link_has_geometry(model, l, link_meshes) {
            return Err(ArticulationError::NoGeometry(link.name.clone()));
        }
    }
    let q_scan = model.clamp(q_scan);
    let poses = model.link_poses(&q_scan)?;
    let mut link_splats = vec![Vec::new(); model.links.len()];
    let mut source_indices = vec![Vec::new(); model.links.len()];
    let mut dropped = 0;
    for (i, prim) in robot_splats.primitives.iter().enumerate() {
        let mut best: Option<(usize, f64)> = None;
        for l in 0..model.links.len() {
            if let Some(d) = geometry_distance(model, l, &poses[l], link_meshes, &prim.center) {
                if best.map_or(true, |(_, bd)| d < bd) {
                    best = Some((l, d));
                }
            }
        }
        match best {
            Some((l, d)) if d <= cutoff => {
                link_splats[l].push(prim.transformed(&poses[l].inverse()));
                source_indices[l].push(i);
            }
            _ => dropped += 1,
        }
    }
    if dropped > 0 {
        log::info!("dropped {dropped} of {} robot splats beyond {cutoff} m of every link", robot_splats.len());
    }
    Ok(ArticulatedSplat {
        model: model.clone(),
        q_scan,
        link_splats,
        source_indices,
        link_meshes: link_meshes.clone(),
        cutoff,
        dropped,
        frame_label: robot_splats.frame_label.clone(),
    })
}

impl ArticulatedSplat {
    pub fn len(&self) -> usize {
        self.link_splats.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Splats per link name, for reporting.
    pub fn counts(&self) -> BTreeMap<String, usize> {
        self.model
            .links
            .iter()
            .zip(&self.link_splats)
            .map(|(l, s)| (l.name.clone(), s.len()))
            .collect()
    }

    /// Link meshes posed at `q` and placed by `base`, merged.
    pub fn posed_mesh(&self, q: &[f64], base: &Pose) -> Result<TriangleMesh, ArticulationError> {
        let poses = self.model.link_poses(q)?;
        let mut out = TriangleMesh::default();
        for (l, link) in self.model.links.iter().enumerate() {
            if let Some(m) = self.link_meshes.get(&link.name) {
                out.merge(&m.transformed(&(base * poses[l])));
            }
        }
        Ok(out)
    }
}

/// Robot splats at configuration `q`, ordered by original index.
pub fn pose_articulated_splat(art: &ArticulatedSplat, q: &[f64]) -> Result<SplatScene, ArticulationError> {
    pose_articulated_splat_at(art, q, &Pose::identity())
}

/// As [`pose_articulated_splat`], with the robot base placed at `base`.
pub fn pose_articulated_splat_at(art: &ArticulatedSplat, q: &[f64], base: &Pose) -> Result<SplatScene, ArticulationError> {
    let poses = art.model.link_poses(q)?;
    let mut tagged: Vec<(usize, GaussianPrimitive)> = Vec::with_capacity(art.len());
    for (l, (prims, idx)) in art.link_splats.iter().zip(&art.source_indices).enumerate() {
        let world = base * poses[l];
        tagged.extend(idx.iter().copied().zip(prims.iter().map(|p| p.transformed(&world))));
    }
    tagged.sort_by_key(|(i, _)| *i);
    Ok(SplatScene::from_primitives(
        art.frame_label.clone(),
        tagged.into_iter().map(|(_, p)| p).collect(),
    ))
}

/// Distance from a point to a link's posed geometry (for tests and reports).
pub fn distance_to_link(art: &ArticulatedSplat, q: &[f64], link: usize, p: &Vec3) -> Result<Option<f64>, ArticulationError> {
    let poses = art.model.link_poses(q)?;
    Ok(geometry_distance(&art.model, link, &poses[link], &art.link_meshes, p))
}

/// World position of a point given in a link frame.
pub fn link_point(model: &KinematicModel, q: &[f64], link: usize, local: &Vec3) -> Result<Vec3, ArticulationError> {
    Ok(transform_point(&model.link_poses(q)?[link], local))
}
