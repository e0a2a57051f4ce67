//! Similarity alignment of a reconstruction into the canonical frame.

use crate::math::{Pose, Rotation, Vec3, Mat3};
use crate::recon::TriangleMesh;
use crate::splat::{Camera, SplatScene, CANONICAL_FRAME};
use nalgebra::{Translation3, Isometry3};
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum AlignError {
    #[error("need at least 3 correspondences, got {0}")]
    TooFewPairs(usize),
    #[error("degenerate correspondences: {0}")]
    Degenerate(&'static str),
    #[error("non-finite coordinate in pair {0}")]
    NonFinite(usize),
    #[error("frame `{0}` has a board coordinate but no camera pose")]
    UnknownFrame(String),
}

/// `p ↦ s R p + t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sim3 {
    pub scale: f64,
    pub rotation: Rotation,
    pub translation: Vec3,
}

impl Default for Sim3 {
    fn default() -> Self {
        Self::identity()
    }
}

impl Sim3 {
    pub fn new(scale: f64, rotation: Rotation, translation: Vec3) -> Self {
        Self {
            scale,
            rotation,
            translation,
        }
    }

    pub fn identity() -> Self {
        Self::new(1.0, Rotation::identity(), Vec3::zeros())
    }

    pub fn apply_point(&self, p: &Vec3) -> Vec3 {
        self.rotation * p * self.scale + self.translation
    }

    pub fn inverse(&self) -> Self {
        let inv_r = self.rotation.inverse();
        let inv_s = 1.0 / self.scale;
        Self::new(inv_s, inv_r, -(inv_r * self.translation) * inv_s)
    }

    /// `self ∘ other`: apply `other` first.
    pub fn compose(&self, other: &Sim3) -> Self {
        Self::new(
            self.scale * other.scale,
            self.rotation * other.rotation,
            self.apply_point(&other.translation),
        )
    }

    /// Maps a camera-to-world pose so images rendered through it are unchanged.
    pub fn apply_pose(&self, pose: &Pose) -> Pose {
        Isometry3::from_parts(
            Translation3::from(self.apply_point(&pose.translation.vector)),
            self.rotation * pose.rotation,
        )
    }

    pub fn apply_camera(&self, cam: &Camera) -> Camera {
        Camera {
            pose: self.apply_pose(&cam.pose),
            ..cam.clone()
        }
    }

    pub fn apply_scene(&self, scene: &SplatScene) -> SplatScene {
        let mut out = scene.clone();
        for p in &mut out.primitives {
            p.center = self.apply_point(&p.center);
            p.rotation = self.rotation * p.rotation;
            p.scale = p.scale.map(|s| s * self.scale);
        }
        out.frame_label = CANONICAL_FRAME.to_string();
        out
    }

    pub fn apply_mesh(&self, mesh: &TriangleMesh) -> TriangleMesh {
        mesh.map_vertices(|v| self.apply_point(v))
    }
}

/// Paired points: `p` in the reconstruction frame, `q` in the board frame.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CorrespondenceSet {
    pub pairs: Vec<(Vec3, Vec3)>,
}

impl CorrespondenceSet {
    pub fn new(pairs: Vec<(Vec3, Vec3)>) -> Self {
        Self { pairs }
    }

    /// Pairs camera centers with measured board coordinates by frame id.
    pub fn from_cameras(cams: &[(String, Camera)], board: &[(String, Vec3)]) -> Result<Self, AlignError> {
        let mut pairs = Vec::with_capacity(board.len());
        for (id, q) in board {
            let cam = cams
                .iter()
                .find(|(cid, _)| cid == id)
                .ok_or_else(|| AlignError::UnknownFrame(id.clone()))?;
            pairs.push((cam.1.center(), *q));
        }
        Ok(Self { pairs })
    }
}

/// Least-squares similarity from `p` to `q` (Umeyama). Returns the
/// transform and the RMS residual `‖sRp + t − q‖`.
pub fn estimate_sim3(corr: &CorrespondenceSet) -> Result<(Sim3, f64), AlignError> {
    let n = corr.pairs.len();
    if n < 3 {
        return Err(AlignError::TooFewPairs(n));
    }
    for (i, (p, q)) in corr.pairs.iter().enumerate() {
        if !(p.iter().all(|v| v.is_finite()) && q.iter().all(|v| v.is_finite())) {
            return Err(AlignError::NonFinite(i));
        }
    }
    let nf = n as f64;
    let mu_p = corr.pairs.iter().map(|(p, _)| p).sum::<Vec3>() / nf;
    let mu_q = corr.pairs.iter().map(|(_, q)| q).sum::<Vec3>() / nf;
    let mut cov = Mat3::zeros();
    let mut scatter_p = Mat3::zeros();
    let mut scatter_q = Mat3::zeros();
    for (p, q) in &corr.pairs {
        let dp = p - mu_p;
        let dq = q - mu_q;
        cov += dq * dp.transpose();
        scatter_p += dp * dp.transpose();
        scatter_q += dq * dq.transpose();
    }
    cov /= nf;
    scatter_p /= nf;
    scatter_q /= nf;
    let var_p = scatter_p.trace();
    let extent = var_p.max(scatter_q.trace());
    if var_p <= 1e-24 || scatter_q.trace() <= 1e-24 {
        return Err(AlignError::Degenerate("points are coincident"));
    }
    // Collinear sets have a single nonzero scatter eigenvalue.
    for s in [scatter_p, scatter_q] {
        let mut ev: Vec<f64> = s.symmetric_eigenvalues().iter().copied().collect();
        ev.sort_by(|a, b| b.total_cmp(a));
        if ev[1] <= 1e-12 * extent {
            return Err(AlignError::Degenerate("points are collinear"));
        }
    }
    let svd = cov.svd(true, true);
    let (u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
    let mut d = Mat3::identity();
    if (u.determinant() * v_t.determinant()) < 0.0 {
        d[(2, 2)] = -1.0;
    }
    let r = u * d * v_t;
    let scale = (Mat3::from_diagonal(&svd.singular_values) * d).trace() / var_p;
    if !(scale > 0.0) {
        return Err(AlignError::Degenerate("non-positive scale"));
    }
    let rotation = Rotation::from_matrix_eps(&r, 1e-12, 100, Rotation::identity());
    let translation = mu_q - rotation * mu_p * scale;
    let sim = Sim3::new(scale, rotation, translation);
    let rms = (corr
        .pairs
        .iter()
        .map(|(p, q)| (sim.apply_point(p) - q).norm_squared())
        .sum::<f64>()
        / nf)
        .sqrt();
    Ok((sim, rms))
}
