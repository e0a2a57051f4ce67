//! Ray-splat rasterizer.
//!
//! Every pixel casts one ray through its center, intersects it with the
//! supporting plane of each candidate disk, evaluates the in-plane Gaussian,
//! and alpha-blends the hits front to back. Candidates come from a tile
//! binning of each disk's image-space footprint at the kernel cutoff.

use super::{Camera, CameraError, GaussianPrimitive, SplatScene};
use crate::math::Vec3;
use rayon::prelude::*;
use std::cmp::Ordering;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum RenderError {
    #[error("invalid camera: {0}")]
    Camera(#[from] CameraError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RenderConfig {
    /// Kernel support in standard deviations; `None` evaluates the Gaussian
    /// everywhere on the plane.
    pub cutoff_sigma: Option<f64>,
    /// Compositing stops once transmittance falls below this value.
    pub min_transmittance: f64,
    /// Upper clamp on effective alpha.
    pub alpha_clamp: f64,
    pub tile_size: u32,
}

impl Default for RenderConfig {
    fn default() -> Self {
        Self {
            cutoff_sigma: Some(3.0),
            min_transmittance: 1e-4,
            alpha_clamp: 0.999,
            tile_size: 16,
        }
    }
}

impl RenderConfig {
    /// No kernel truncation and no early termination.
    pub fn exact() -> Self {
        Self {
            cutoff_sigma: None,
            min_transmittance: 0.0,
            ..Self::default()
        }
    }
}

/// Result of intersecting a ray with a disk.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RayHit {
    pub u: f64,
    pub v: f64,
    /// Distance along the (normalized) ray.
    pub depth: f64,
    pub weight: f64,
}

/// Perspective-correct intersection of a ray with a disk's supporting plane.
///
/// Returns `None` when the ray is parallel to the plane or the hit lies at or
/// behind the origin.
pub fn ray_splat_intersect(origin: &Vec3, dir: &Vec3, prim: &GaussianPrimitive) -> Option<RayHit> {
    let r = prim.rotation_matrix();
    let n = r.column(2).into_owned();
    let denom = n.dot(dir);
    if denom.abs() < 1e-9 {
        return None;
    }
    let t = n.dot(&(prim.center - origin)) / denom;
    if t <= 0.0 {
        return None;
    }
    let rel = origin + dir * t - prim.center;
    let u = r.column(0).dot(&rel);
    let v = r.column(1).dot(&rel);
    let q = (u / prim.scale[0]).powi(2) + (v / prim.scale[1]).powi(2);
    Some(RayHit {
        u,
        v,
        depth: t,
        weight: (-0.5 * q).exp(),
    })
}

/// One depth-sorted compositing input.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sample {
    pub color: [f64; 3],
    /// Effective alpha, already clamped.
    pub alpha: f64,
    pub depth: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CompositeResult {
    pub color: [f64; 3],
    pub alpha: f64,
    pub depth: f64,
}

/// Front-to-back alpha compositing of depth-sorted samples.
pub fn composite(samples: &[Sample], min_transmittance: f64) -> CompositeResult {
    let mut color = [0.0; 3];
    let mut depth_acc = 0.0;
    let mut transmittance = 1.0;
    for s in samples {
        let w = s.alpha * transmittance;
        for k in 0..3 {
            color[k] += w * s.color[k];
        }
        depth_acc += w * s.depth;
        transmittance *= 1.0 - s.alpha;
        if transmittance < min_transmittance {
            break;
        }
    }
    let alpha = 1.0 - transmittance;
    CompositeResult {
        color,
        alpha,
        depth: if alpha > 0.0 { depth_acc / alpha } else { 0.0 },
    }
}

/// Rendered image planes, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderBuffers {
    pub width: u32,
    pub height: u32,
    pub color: Vec<[f64; 3]>,
    pub alpha: Vec<f64>,
    /// Camera z-depth, alpha-normalized; zero where nothing was hit.
    pub depth: Vec<f64>,
    /// Blended camera-facing unit normal, `None` where alpha is negligible.
    pub normal: Vec<Option<Vec3>>,
}

impl RenderBuffers {
    pub fn blank(width: u32, height: u32) -> Self {
        let n = width as usize * height as usize;
        Self {
            width,
            height,
            color: vec![[0.0; 3]; n],
            alpha: vec![0.0; n],
            depth: vec![0.0; n],
            normal: vec![None; n],
        }
    }

    pub fn index(&self, x: u32, y: u32) -> usize {
        y as usize * self.width as usize + x as usize
    }

    pub fn to_rgb8(&self) -> image::RgbImage {
        let mut img = image::RgbImage::new(self.width, self.height);
        for (i, px) in img.pixels_mut().enumerate() {
            let c = self.color[i];
            *px = image::Rgb([quantize(c[0]), quantize(c[1]), quantize(c[2])]);
        }
        img
    }

    pub fn to_png(&self) -> Vec<u8> {
        let mut out = std::io::Cursor::new(Vec::new());
        self.to_rgb8()
            .write_to(&mut out, image::ImageFormat::Png)
            .expect("png encoding into memory");
        out.into_inner()
    }

    /// Mean absolute per-channel color difference.
    pub fn mean_abs_color_diff(&self, other: &RenderBuffers) -> f64 {
        let n = self.color.len().max(1) as f64 * 3.0;
        self.color
            .iter()
            .zip(&other.color)
            .map(|(a, b)| (0..3).map(|k| (a[k] - b[k]).abs()).sum::<f64>())
            .sum::<f64>()
            / n
    }

    pub fn max_abs_color_diff(&self, other: &RenderBuffers) -> f64 {
        self.color
            .iter()
            .zip(&other.color)
            .flat_map(|(a, b)| (0..3).map(move |k| (a[k] - b[k]).abs()))
            .fold(0.0, f64::max)
    }
}

pub(crate) fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// A ray-disk hit with the intermediates the loss gradient needs.
#[derive(Debug, Clone, Copy)]
pub(crate) struct PixelHit {
    pub index: usize,
    /// Distance along the normalized ray.
    pub t: f64,
    /// Camera z-depth of the hit.
    pub z: f64,
    pub u: f64,
    pub v: f64,
    pub weight: f64,
    pub alpha: f64,
    pub clamped: bool,
    /// `±1` so that `sign * normal` faces the camera.
    pub facing: f64,
}

/// Deterministic ordering of hits: depth first, then primitive content so
/// the result does not depend on the order of the primitive list.
fn hit_order(prims: &[GaussianPrimitive], a: &PixelHit, b: &PixelHit) -> Ordering {
    a.t.total_cmp(&b.t).then_with(|| {
        let pa = &prims[a.index];
        let pb = &prims[b.index];
        let ka = [pa.opacity, pa.color[0], pa.color[1], pa.color[2], pa.center.x, pa.center.y, pa.center.z];
        let kb = [pb.opacity, pb.color[0], pb.color[1], pb.color[2], pb.center.x, pb.center.y, pb.center.z];
        ka.iter()
            .zip(&kb)
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| *o != Ordering::Equal)
            .unwrap_or(Ordering::Equal)
    })
}

/// Intersects one pixel ray with the candidate primitives and returns the
/// hits sorted front to back.
pub(crate) fn pixel_hits(
    prims: &[GaussianPrimitive],
    candidates: &[usize],
    origin: &Vec3,
    dir: &Vec3,
    depth_scale: f64,
    cfg: &RenderConfig,
) -> Vec<PixelHit> {
    let cutoff_sq = cfg.cutoff_sigma.map(|k| k * k);
    let mut hits = Vec::new();
    for &index in candidates {
        let prim = &prims[index];
        let Some(hit) = ray_splat_intersect(origin, dir, prim) else {
            continue;
        };
        if let Some(c2) = cutoff_sq {
            let q = (hit.u / prim.scale[0]).powi(2) + (hit.v / prim.scale[1]).powi(2);
            if q > c2 {
                continue;
            }
        }
        let raw = prim.opacity * hit.weight;
        let clamped = raw > cfg.alpha_clamp;
        let facing = if prim.normal().dot(dir) > 0.0 { -1.0 } else { 1.0 };
        hits.push(PixelHit {
            index,
            t: hit.depth,
            z: hit.depth * depth_scale,
            u: hit.u,
            v: hit.v,
            weight: hit.weight,
            alpha: raw.clamp(0.0, cfg.alpha_clamp),
            clamped,
            facing,
        });
    }
    hits.sort_by(|a, b| hit_order(prims, a, b));
    hits
}

/// Number of hits the compositor consumes before early termination.
pub(crate) fn consumed_hits(hits: &[PixelHit], min_transmittance: f64) -> usize {
    let mut transmittance = 1.0;
    for (i, h) in hits.iter().enumerate() {
        transmittance *= 1.0 - h.alpha;
        if transmittance < min_transmittance {
            return i + 1;
        }
    }
    hits.len()
}

/// Candidate primitive lists per image tile.
pub(crate) struct TileBins {
    pub tile_size: u32,
    pub tiles_x: u32,
    pub tiles_y: u32,
    pub bins: Vec<Vec<usize>>,
}

impl TileBins {
    pub fn tile_of(&self, x: u32, y: u32) -> &[usize] {
        let tx = x / self.tile_size;
        let ty = y / self.tile_size;
        &self.bins[(ty * self.tiles_x + tx) as usize]
    }
}

/// Inclusive pixel rectangle that may contain hits of `prim`, or `None` when
/// the disk cannot be seen.
fn footprint_rect(prim: &GaussianPrimitive, camera: &Camera, cutoff: Option<f64>) -> Option<[i64; 4]> {
    let full = [0, camera.width as i64 - 1, 0, camera.height as i64 - 1];
    let Some(k) = cutoff else {
        return Some(full);
    };
    let tu = prim.tangent_u() * (k * prim.scale[0]);
    let tv = prim.tangent_v() * (k * prim.scale[1]);
    let corners = [
        prim.center + tu + tv,
        prim.center + tu - tv,
        prim.center - tu + tv,
        prim.center - tu - tv,
    ];
    let cam_pts: Vec<Vec3> = corners.iter().map(|c| camera.to_camera(c)).collect();
    let near = 1e-6;
    if cam_pts.iter().all(|p| p.z <= near) {
        return None;
    }
    if cam_pts.iter().any(|p| p.z <= near) {
        return Some(full);
    }
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for p in &cam_pts {
        let (x, y) = camera.project_camera_point(p)?;
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    // pixel centers sit at i + 0.5; one pixel of slack covers rounding
    let rect = [
        (x0 - 0.5).floor() as i64 - 1,
        (x1 - 0.5).ceil() as i64 + 1,
        (y0 - 0.5).floor() as i64 - 1,
        (y1 - 0.5).ceil() as i64 + 1,
    ];
    if rect[1] < 0 || rect[3] < 0 || rect[0] > full[1] || rect[2] > full[3] {
        return None;
    }
    Some([
        rect[0].max(0),
        rect[1].min(full[1]),
        rect[2].max(0),
        rect[3].min(full[3]),
    ])
}

pub(crate) fn bin_primitives(prims: &[GaussianPrimitive], camera: &Camera, cfg: &RenderConfig) -> TileBins {
    let ts = cfg.tile_size.max(1);
    let tiles_x = camera.width.div_ceil(ts);
    let tiles_y = camera.height.div_ceil(ts);
    let mut bins = vec![Vec::new(); (tiles_x * tiles_y) as usize];
    for (i, prim) in prims.iter().enumerate() {
        let Some([x0, x1, y0, y1]) = footprint_rect(prim, camera, cfg.cutoff_sigma) else {
            continue;
        };
        let (tx0, tx1) = (x0 as u32 / ts, x1 as u32 / ts);
        let (ty0, ty1) = (y0 as u32 / ts, y1 as u32 / ts);
        for ty in ty0..=ty1 {
            for tx in tx0..=tx1 {
                bins[(ty * tiles_x + tx) as usize].push(i);
            }
        }
    }
    TileBins {
        tile_size: ts,
        tiles_x,
        tiles_y,
        bins,
    }
}

struct PixelOut {
    color: [f64; 3],
    alpha: f64,
    depth: f64,
    normal: Option<Vec3>,
}

fn shade_pixel(prims: &[GaussianPrimitive], candidates: &[usize], camera: &Camera, x: u32, y: u32, cfg: &RenderConfig) -> PixelOut {
    let e = camera.pixel_direction_unit_depth(x, y);
    let dir = e.normalize();
    let depth_scale = 1.0 / e.norm();
    let hits = pixel_hits(prims, candidates, &camera.center(), &dir, depth_scale, cfg);
    let used = consumed_hits(&hits, cfg.min_transmittance);
    let samples: Vec<Sample> = hits[..used]
        .iter()
        .map(|h| Sample {
            color: prims[h.index].color,
            alpha: h.alpha,
            depth: h.z,
        })
        .collect();
    let res = composite(&samples, cfg.min_transmittance);
    let mut n = Vec3::zeros();
    let mut transmittance = 1.0;
    for h in &hits[..used] {
        n += prims[h.index].normal() * (h.facing * h.alpha * transmittance);
        transmittance *= 1.0 - h.alpha;
    }
    let normal = if res.alpha > 1e-6 && n.norm() > 1e-12 {
        Some(n.normalize())
    } else {
        None
    };
    PixelOut {
        color: res.color,
        alpha: res.alpha,
        depth: res.depth,
        normal,
    }
}

/// Renders with [`RenderConfig::default`].
pub fn render(scene: &SplatScene, camera: &Camera) -> Result<RenderBuffers, RenderError> {
    render_with(scene, camera, &RenderConfig::default())
}

pub fn render_with(scene: &SplatScene, camera: &Camera, cfg: &RenderConfig) -> Result<RenderBuffers, RenderError> {
    camera.validate()?;
    let prims = &scene.primitives;
    let bins = bin_primitives(prims, camera, cfg);
    let ts = bins.tile_size;
    let tiles: Vec<(u32, u32)> = (0..bins.tiles_y)
        .flat_map(|ty| (0..bins.tiles_x).map(move |tx| (tx, ty)))
        .collect();
    let shaded: Vec<Vec<(usize, PixelOut)>> = tiles
        .par_iter()
        .map(|&(tx, ty)| {
            let candidates = &bins.bins[(ty * bins.tiles_x + tx) as usize];
            let mut out = Vec::new();
            for y in ty * ts..((ty + 1) * ts).min(camera.height) {
                for x in tx * ts..((tx + 1) * ts).min(camera.width) {
                    let idx = y as usize * camera.width as usize + x as usize;
                    if candidates.is_empty() {
                        continue;
                    }
                    out.push((idx, shade_pixel(prims, candidates, camera, x, y, cfg)));
                }
            }
            out
        })
        .collect();
    let mut buffers = RenderBuffers::blank(camera.width, camera.height);
    for tile in shaded {
        for (idx, px) in tile {
            buffers.color[idx] = px.color;
            buffers.alpha[idx] = px.alpha;
            buffers.depth[idx] = px.depth;
            buffers.normal[idx] = px.normal;
        }
    }
    Ok(buffers)
}
