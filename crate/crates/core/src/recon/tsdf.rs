//! Truncated signed distance volume fused from rendered depth.

use super::ReconError;
use crate::math::{Aabb, Vec3};
use crate::splat::{render_with, Camera, RenderConfig, SplatScene};
use rayon::prelude::*;
use std::fmt::Write as _;

/// Regular grid of truncated signed distances. Samples sit on grid points
/// `origin + voxel_size * (i, j, k)`, x varying fastest.
///
/// Unobserved voxels have weight 0 and read as `-truncation`.
#[derive(Debug, Clone, PartialEq)]
pub struct TsdfVolume {
    pub origin: Vec3,
    pub voxel_size: f64,
    pub dims: [usize; 3],
    pub truncation: f64,
    pub sdf: Vec<f64>,
    pub weight: Vec<f64>,
    /// Running-average color, present when fused from renders.
    pub color: Option<Vec<[f64; 3]>>,
}

/// Fusion parameters beyond the grid itself.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FusionConfig {
    pub render: RenderConfig,
    /// Pixels with alpha at or below this carry no depth.
    pub min_alpha: f64,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            render: RenderConfig::default(),
            min_alpha: 0.5,
        }
    }
}

impl TsdfVolume {
    pub fn new(origin: Vec3, voxel_size: f64, dims: [usize; 3], truncation: f64) -> Result<Self, ReconError> {
        if !(voxel_size > 0.0) || !voxel_size.is_finite() {
            return Err(ReconError::InvalidVolume("voxel size must be positive".into()));
        }
        if !(truncation > 0.0) {
            return Err(ReconError::InvalidVolume("truncation must be positive".into()));
        }
        if dims.iter().any(|&d| d < 2) {
            return Err(ReconError::InvalidVolume("need at least 2 samples per axis".into()));
        }
        let n = dims[0] * dims[1] * dims[2];
        Ok(Self {
            origin,
            voxel_size,
            dims,
            truncation,
            sdf: vec![-truncation; n],
            weight: vec![0.0; n],
            color: None,
        })
    }

    /// Grid covering `bounds` at the given spacing.
    pub fn covering(bounds: &Aabb, voxel_size: f64, truncation: f64) -> Result<Self, ReconError> {
        if !(voxel_size > 0.0) {
            return Err(ReconError::InvalidVolume("voxel size must be positive".into()));
        }
        let ext = bounds.extent();
        if bounds.is_empty() || ext.iter().any(|e| !(*e > 0.0)) {
            return Err(ReconError::InvalidVolume("bounds must have positive extent".into()));
        }
        let dims = [0, 1, 2].map(|k| (ext[k] / voxel_size).ceil() as usize + 1);
        Self::new(bounds.min, voxel_size, dims, truncation)
    }

    /// Fills every sample from a signed distance function, weight 1.
    pub fn from_sdf(
        origin: Vec3,
        voxel_size: f64,
        dims: [usize; 3],
        truncation: f64,
        f: impl Fn(&Vec3) -> f64 + Sync,
    ) -> Result<Self, ReconError> {
        let mut vol = Self::new(origin, voxel_size, dims, truncation)?;
        let pts: Vec<f64> = (0..vol.len())
            .into_par_iter()
            .map(|i| f(&vol.position(i)).clamp(-truncation, truncation))
            .collect();
        vol.sdf = pts;
        vol.weight.iter_mut().for_each(|w| *w = 1.0);
        Ok(vol)
    }

    pub fn len(&self) -> usize {
        self.sdf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sdf.is_empty()
    }

    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        (k * self.dims[1] + j) * self.dims[0] + i
    }

    pub fn coords(&self, idx: usize) -> [usize; 3] {
        let i = idx % self.dims[0];
        let j = (idx / self.dims[0]) % self.dims[1];
        let k = idx / (self.dims[0] * self.dims[1]);
        [i, j, k]
    }

    pub fn position(&self, idx: usize) -> Vec3 {
        let [i, j, k] = self.coords(idx);
        self.grid_point(i, j, k)
    }

    pub fn grid_point(&self, i: usize, j: usize, k: usize) -> Vec3 {
        self.origin + Vec3::new(i as f64, j as f64, k as f64) * self.voxel_size
    }

    /// Nearest-sample lookup; `None` outside the grid.
    pub fn sample_nearest(&self, p: &Vec3) -> Option<(f64, f64)> {
        let g = (p - self.origin) / self.voxel_size;
        let idx: Vec<usize> = (0..3)
            .map(|a| g[a].round())
            .enumerate()
            .filter(|(a, v)| *v >= 0.0 && (*v as usize) < self.dims[*a])
            .map(|(_, v)| v as usize)
            .collect();
        if idx.len() != 3 {
            return None;
        }
        let n = self.index(idx[0], idx[1], idx[2]);
        Some((self.sdf[n], self.weight[n]))
    }

    /// Integrates one depth/color observation.
    fn integrate(&mut self, camera: &Camera, depth: &[f64], alpha: &[f64], color: &[[f64; 3]], min_alpha: f64) {
        let tau = self.truncation;
        let inv = camera.pose.inverse();
        let (w, h) = (camera.width as i64, camera.height as i64);
        let positions: Vec<Vec3> = (0..self.len()).map(|i| self.position(i)).collect();
        let colors = self.color.get_or_insert_with(|| vec![[0.0; 3]; positions.len()]);
        self.sdf
            .par_iter_mut()
            .zip(self.weight.par_iter_mut())
            .zip(colors.par_iter_mut())
            .zip(positions.par_iter())
            .for_each(|(((sdf, wt), col), p)| {
                let pc = (inv * nalgebra::Point3::from(*p)).coords;
                let Some((u, v)) = camera.project_camera_point(&pc) else {
                    return;
                };
                let (px, py) = (u.floor() as i64, v.floor() as i64);
                if px < 0 || py < 0 || px >= w || py >= h {
                    return;
                }
                let idx = (py * w + px) as usize;
                if alpha[idx] <= min_alpha {
                    return;
                }
                let diff = depth[idx] - pc.z;
                if diff < -tau {
                    return;
                }
                let obs = diff.min(tau);
                let nw = *wt + 1.0;
                *sdf = (*sdf * *wt + obs) / nw;
                let c = color[idx];
                for k in 0..3 {
                    col[k] = (col[k] * *wt + c[k]) / nw;
                }
                *wt = nw;
            });
    }

    /// Raw little-endian f32 SDF grid plus a text header describing it.
    pub fn debug_dump(&self) -> (Vec<u8>, String) {
        let mut raw = Vec::with_capacity(self.len() * 4);
        for v in &self.sdf {
            raw.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        let mut header = String::new();
        let _ = writeln!(header, "origin {} {} {}", self.origin.x, self.origin.y, self.origin.z);
        let _ = writeln!(header, "voxel_size {}", self.voxel_size);
        let _ = writeln!(header, "dims {} {} {}", self.dims[0], self.dims[1], self.dims[2]);
        let _ = writeln!(header, "tau {}", self.truncation);
        header.push_str("layout float32 little-endian, x fastest\n");
        (raw, header)
    }
}

/// Renders depth from every camera and fuses it into a volume covering `bounds`.
pub fn fuse_tsdf(
    scene: &SplatScene,
    cameras: &[Camera],
    truncation: f64,
    voxel_size: f64,
    bounds: &Aabb,
) -> Result<TsdfVolume, ReconError> {
    fuse_tsdf_with(scene, cameras, truncation, voxel_size, bounds, &FusionConfig::default())
}

pub fn fuse_tsdf_with(
    scene: &SplatScene,
    cameras: &[Camera],
    truncation: f64,
    voxel_size: f64,
    bounds: &Aabb,
    cfg: &FusionConfig,
) -> Result<TsdfVolume, ReconError> {
    let mut vol = TsdfVolume::covering(bounds, voxel_size, truncation)?;
    for (i, cam) in cameras.iter().enumerate() {
        let buf = render_with(scene, cam, &cfg.render).map_err(|e| match e {
            crate::splat::RenderError::Camera(c) => ReconError::InvalidCamera(i, c),
        })?;
        vol.integrate(cam, &buf.depth, &buf.alpha, &buf.color, cfg.min_alpha);
    }
    Ok(vol)
}
