//! Reconstruction objective and its analytic gradient.
//!
//! For a set of posed views the objective is
//!
//! ```text
//! L = Σ_views mean_pixels |C − I|²
//!   + λ_dist Σ_rays Σ_{i,j} ω_i ω_j |z_i − z_j|
//!   + λ_norm Σ_pixels Σ_j ω_j (1 − ñ_j · n_depth)
//! ```
//!
//! where `ω` are the compositing weights along a ray, `z` camera depths,
//! `ñ_j` camera-facing disk normals and `n_depth` the normal of the rendered
//! depth map from central differences of back-projected neighbours.

use super::ReconError;
use crate::math::{quat_components, quat_gradient_from_matrix_gradient, Mat3, Vec3};
use crate::splat::raster::{bin_primitives, consumed_hits, pixel_hits, PixelHit};
use crate::splat::{Camera, GaussianPrimitive, RenderConfig, SplatScene};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Linear RGB image with channels in `[0, 1]`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageRgb {
    pub width: u32,
    pub height: u32,
    pub data: Vec<[f64; 3]>,
}

impl ImageRgb {
    pub fn new(width: u32, height: u32, data: Vec<[f64; 3]>) -> Self {
        assert_eq!(data.len(), width as usize * height as usize);
        Self { width, height, data }
    }

    pub fn from_rgb8(img: &image::RgbImage) -> Self {
        let data = img
            .pixels()
            .map(|p| [p[0] as f64 / 255.0, p[1] as f64 / 255.0, p[2] as f64 / 255.0])
            .collect();
        Self::new(img.width(), img.height(), data)
    }
}

/// One training view: a target image and the camera that took it.
#[derive(Debug, Clone)]
pub struct View {
    pub image: ImageRgb,
    pub camera: Camera,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub photometric: f64,
    pub distortion: f64,
    pub normal: f64,
    pub total: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectiveConfig {
    pub lambda_dist: f64,
    pub lambda_norm: f64,
    pub render: RenderConfig,
    /// Pixels whose alpha is at or below this value have no usable depth.
    pub depth_alpha_threshold: f64,
}

impl Default for ObjectiveConfig {
    fn default() -> Self {
        Self {
            lambda_dist: 1e-3,
            lambda_norm: 1e-4,
            render: RenderConfig::default(),
            depth_alpha_threshold: 1e-3,
        }
    }
}

/// Gradient of the objective with respect to one primitive's fields.
///
/// `rotation` is the gradient with respect to the raw `(w, x, y, z)`
/// quaternion components, taken through normalization.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PrimitiveGradient {
    pub center: [f64; 3],
    pub rotation: [f64; 4],
    pub scale: [f64; 2],
    pub color: [f64; 3],
    pub opacity: f64,
}

impl PrimitiveGradient {
    fn add(&mut self, o: &PrimitiveGradient) {
        for k in 0..3 {
            self.center[k] += o.center[k];
            self.color[k] += o.color[k];
        }
        for k in 0..4 {
            self.rotation[k] += o.rotation[k];
        }
        self.scale[0] += o.scale[0];
        self.scale[1] += o.scale[1];
        self.opacity += o.opacity;
    }

    /// All 13 components in a fixed order: center, rotation, scale, color, opacity.
    pub fn as_array(&self) -> [f64; 13] {
        let mut a = [0.0; 13];
        a[..3].copy_from_slice(&self.center);
        a[3..7].copy_from_slice(&self.rotation);
        a[7..9].copy_from_slice(&self.scale);
        a[9..12].copy_from_slice(&self.color);
        a[12] = self.opacity;
        a
    }
}

/// Intermediate gradient with respect to the rotation matrix columns.
#[derive(Clone, Copy, Default)]
struct RawGrad {
    center: Vec3,
    tu: Vec3,
    tv: Vec3,
    normal: Vec3,
    scale: [f64; 2],
    color: [f64; 3],
    opacity: f64,
}

struct PixelState {
    hits: Vec<PixelHit>,
    color: [f64; 3],
    alpha: f64,
    depth: f64,
}

struct ViewForward {
    pixels: Vec<PixelState>,
    /// Back-projection direction with unit camera depth, per pixel.
    rays: Vec<Vec3>,
}

fn validate_views(views: &[View]) -> Result<(), ReconError> {
    if views.is_empty() {
        return Err(ReconError::NoViews);
    }
    for (i, v) in views.iter().enumerate() {
        v.camera.validate().map_err(|e| ReconError::InvalidCamera(i, e))?;
        if v.image.width != v.camera.width || v.image.height != v.camera.height {
            return Err(ReconError::DimensionMismatch {
                view: i,
                image: (v.image.width, v.image.height),
                camera: (v.camera.width, v.camera.height),
            });
        }
    }
    Ok(())
}

fn forward_view(prims: &[GaussianPrimitive], cam: &Camera, rcfg: &RenderConfig) -> ViewForward {
    let bins = bin_primitives(prims, cam, rcfg);
    let origin = cam.center();
    let (w, h) = (cam.width, cam.height);
    let rows: Vec<Vec<(PixelState, Vec3)>> = (0..h)
        .into_par_iter()
        .map(|y| {
            (0..w)
                .map(|x| {
                    let e = cam.pixel_direction_unit_depth(x, y);
                    let dir = e.normalize();
                    let mut hits = pixel_hits(prims, bins.tile_of(x, y), &origin, &dir, 1.0 / e.norm(), rcfg);
                    hits.truncate(consumed_hits(&hits, rcfg.min_transmittance));
                    let mut color = [0.0; 3];
                    let mut zsum = 0.0;
                    let mut trans = 1.0;
                    for hit in &hits {
                        let wgt = hit.alpha * trans;
                        let c = prims[hit.index].color;
                        for k in 0..3 {
                            color[k] += wgt * c[k];
                        }
                        zsum += wgt * hit.z;
                        trans *= 1.0 - hit.alpha;
                    }
                    let alpha = 1.0 - trans;
                    let depth = if alpha > 0.0 { zsum / alpha } else { 0.0 };
                    (
                        PixelState {
                            hits,
                            color,
                            alpha,
                            depth,
                        },
                        e,
                    )
                })
                .collect()
        })
        .collect();
    let mut pixels = Vec::with_capacity((w * h) as usize);
    let mut rays = Vec::with_capacity((w * h) as usize);
    for row in rows {
        for (p, e) in row {
            pixels.push(p);
            rays.push(e);
        }
    }
    ViewForward { pixels, rays }
}

/// Depth-map normal at an interior pixel, with the pieces its gradient needs.
struct DepthNormal {
    normal: Vec3,
    /// `a × b` before normalization, and the two difference vectors.
    cross: Vec3,
    a: Vec3,
    b: Vec3,
    sign: f64,
}

fn depth_normal(fw: &ViewForward, cam: &Camera, x: u32, y: u32, thresh: f64) -> Option<DepthNormal> {
    let (w, h) = (cam.width, cam.height);
    if x == 0 || y == 0 || x + 1 >= w || y + 1 >= h {
        return None;
    }
    let idx = |xx: u32, yy: u32| (yy * w + xx) as usize;
    let c = idx(x, y);
    let nbrs = [idx(x - 1, y), idx(x + 1, y), idx(x, y - 1), idx(x, y + 1)];
    if fw.pixels[c].alpha <= thresh || nbrs.iter().any(|&i| fw.pixels[i].alpha <= thresh) {
        return None;
    }
    let origin = cam.center();
    let point = |i: usize| origin + fw.rays[i] * fw.pixels[i].depth;
    let a = point(nbrs[1]) - point(nbrs[0]);
    let b = point(nbrs[3]) - point(nbrs[2]);
    let cross = a.cross(&b);
    let len = cross.norm();
    if len < 1e-18 {
        return None;
    }
    let unit = cross / len;
    let sign = if unit.dot(&fw.rays[c]) > 0.0 { -1.0 } else { 1.0 };
    Some(DepthNormal {
        normal: unit * sign,
        cross,
        a,
        b,
        sign,
    })
}

struct ViewResult {
    loss: LossBreakdown,
    grads: Option<Vec<PrimitiveGradient>>,
}

fn evaluate_view(scene: &SplatScene, view: &View, cfg: &ObjectiveConfig, want_grad: bool) -> ViewResult {
    let prims = &scene.primitives;
    let cam = &view.camera;
    let fw = forward_view(prims, cam, &cfg.render);
    let (w, h) = (cam.width, cam.height);
    let npix = (w * h) as usize;
    let inv_count = 1.0 / (3.0 * npix as f64);

    let normals: Vec<Option<DepthNormal>> = (0..npix)
        .map(|i| depth_normal(&fw, cam, i as u32 % w, i as u32 / w, cfg.depth_alpha_threshold))
        .collect();

    // Per-pixel loss terms, summed in pixel order.
    let mut photometric = 0.0;
    let mut distortion = 0.0;
    let mut normal_term = 0.0;
    for i in 0..npix {
        let px = &fw.pixels[i];
        let target = view.image.data[i];
        photometric += (0..3).map(|k| (px.color[k] - target[k]).powi(2)).sum::<f64>() * inv_count;
        let mut trans = 1.0;
        let (mut wsum, mut zwsum) = (0.0, 0.0);
        for hit in &px.hits {
            let wgt = hit.alpha * trans;
            distortion += 2.0 * wgt * (hit.z * wsum - zwsum);
            wsum += wgt;
            zwsum += wgt * hit.z;
            trans *= 1.0 - hit.alpha;
        }
        if let Some(dn) = &normals[i] {
            let mut trans = 1.0;
            for hit in &px.hits {
                let wgt = hit.alpha * trans;
                let nt = prims[hit.index].normal() * hit.facing;
                normal_term += wgt * (1.0 - nt.dot(&dn.normal));
                trans *= 1.0 - hit.alpha;
            }
        }
    }
    let loss = LossBreakdown {
        photometric,
        distortion,
        normal: normal_term,
        total: photometric + cfg.lambda_dist * distortion + cfg.lambda_norm * normal_term,
    };
    if !want_grad {
        return ViewResult { loss, grads: None };
    }

    // Depth gradients induced by the normal term through neighbouring depths.
    let mut g_depth = vec![0.0; npix];
    if cfg.lambda_norm != 0.0 {
        let origin_free = |i: usize| fw.rays[i];
        for i in 0..npix {
            let Some(dn) = &normals[i] else { continue };
            let px = &fw.pixels[i];
            let mut blended = Vec3::zeros();
            let mut trans = 1.0;
            for hit in &px.hits {
                let wgt = hit.alpha * trans;
                blended += prims[hit.index].normal() * (hit.facing * wgt);
                trans *= 1.0 - hit.alpha;
            }
            // L = -λ_n blended · n_depth
            let g_n = -cfg.lambda_norm * blended;
            let len = dn.cross.norm();
            let unit = dn.cross / len;
            let g_m = (g_n - unit * unit.dot(&g_n)) * (dn.sign / len);
            let g_a = dn.b.cross(&g_m);
            let g_b = g_m.cross(&dn.a);
            let (x, y) = (i as u32 % w, i as u32 / w);
            let idx = |xx: u32, yy: u32| (yy * w + xx) as usize;
            let (l, r, u, d) = (idx(x - 1, y), idx(x + 1, y), idx(x, y - 1), idx(x, y + 1));
            g_depth[r] += origin_free(r).dot(&g_a);
            g_depth[l] -= origin_free(l).dot(&g_a);
            g_depth[d] += origin_free(d).dot(&g_b);
            g_depth[u] -= origin_free(u).dot(&g_b);
        }
    }

    let origin = cam.center();
    let row_grads: Vec<Vec<RawGrad>> = (0..h)
        .into_par_iter()
        .map(|y| {
            let mut acc = vec![RawGrad::default(); prims.len()];
            for x in 0..w {
                let i = (y * w + x) as usize;
                let px = &fw.pixels[i];
                if px.hits.is_empty() {
                    continue;
                }
                let target = view.image.data[i];
                let g_c: [f64; 3] = [0, 1, 2].map(|k| 2.0 * (px.color[k] - target[k]) * inv_count);
                backward_pixel(
                    prims,
                    px,
                    &origin,
                    &fw.rays[i],
                    g_c,
                    g_depth[i],
                    normals[i].as_ref().map(|d| d.normal),
                    cfg,
                    &mut acc,
                );
            }
            acc
        })
        .collect();

    let mut raw = vec![RawGrad::default(); prims.len()];
    for row in &row_grads {
        for (dst, src) in raw.iter_mut().zip(row) {
            dst.center += src.center;
            dst.tu += src.tu;
            dst.tv += src.tv;
            dst.normal += src.normal;
            for k in 0..3 {
                dst.color[k] += src.color[k];
            }
            dst.scale[0] += src.scale[0];
            dst.scale[1] += src.scale[1];
            dst.opacity += src.opacity;
        }
    }
    let grads = raw
        .iter()
        .zip(prims)
        .map(|(g, p)| {
            let g_r = Mat3::from_columns(&[g.tu, g.tv, g.normal]);
            PrimitiveGradient {
                center: [g.center.x, g.center.y, g.center.z],
                rotation: quat_gradient_from_matrix_gradient(quat_components(&p.rotation), &g_r),
                scale: g.scale,
                color: g.color,
                opacity: g.opacity,
            }
        })
        .collect();
    ViewResult {
        loss,
        grads: Some(grads),
    }
}

#[allow(clippy::too_many_arguments)]
fn backward_pixel(
    prims: &[GaussianPrimitive],
    px: &PixelState,
    origin: &Vec3,
    ray_unit_depth: &Vec3,
    g_color: [f64; 3],
    g_depth: f64,
    depth_normal: Option<Vec3>,
    cfg: &ObjectiveConfig,
    acc: &mut [RawGrad],
) {
    let hits = &px.hits;
    let k = hits.len();
    let dir = ray_unit_depth.normalize();
    let depth_scale = 1.0 / ray_unit_depth.norm();

    let mut weights = Vec::with_capacity(k);
    let mut trans_before = Vec::with_capacity(k);
    let mut trans = 1.0;
    for hit in hits {
        trans_before.push(trans);
        weights.push(hit.alpha * trans);
        trans *= 1.0 - hit.alpha;
    }
    let w_total: f64 = weights.iter().sum();
    let zw_total: f64 = weights.iter().zip(hits).map(|(w, h)| w * h.z).sum();

    // Upstream gradients with respect to weights and depths.
    let mut g_w = vec![0.0; k];
    let mut g_z = vec![0.0; k];
    let (mut w_before, mut zw_before) = (0.0, 0.0);
    for j in 0..k {
        let hit = &hits[j];
        let prim = &prims[hit.index];
        let w_after = w_total - w_before - weights[j];
        let zw_after = zw_total - zw_before - weights[j] * hit.z;
        let mut g = (0..3).map(|c| g_color[c] * prim.color[c]).sum::<f64>();
        if g_depth != 0.0 && px.alpha > 0.0 {
            g += g_depth * (hit.z - px.depth) / px.alpha;
            g_z[j] += g_depth * weights[j] / px.alpha;
        }
        g += 2.0 * cfg.lambda_dist * (hit.z * w_before - zw_before + zw_after - hit.z * w_after);
        g_z[j] += 2.0 * cfg.lambda_dist * weights[j] * (w_before - w_after);
        if let Some(nd) = depth_normal {
            let nt = prim.normal() * hit.facing;
            g += cfg.lambda_norm * (1.0 - nt.dot(&nd));
        }
        g_w[j] = g;
        w_before += weights[j];
        zw_before += weights[j] * hit.z;
    }

    // ω_j = a_j T_j  ⇒  ∂L/∂a_j = g_w_j T_j − Σ_{i>j} g_w_i ω_i / (1 − a_j)
    let mut suffix = 0.0;
    for j in (0..k).rev() {
        let hit = &hits[j];
        let prim = &prims[hit.index];
        let g_a = g_w[j] * trans_before[j] - suffix / (1.0 - hit.alpha);
        suffix += g_w[j] * weights[j];

        let out = &mut acc[hit.index];
        for c in 0..3 {
            out.color[c] += g_color[c] * weights[j];
        }
        let r = prim.rotation_matrix();
        let tu = r.column(0).into_owned();
        let tv = r.column(1).into_owned();
        let n = r.column(2).into_owned();
        let denom = n.dot(&dir);
        let rel = origin + dir * hit.t - prim.center;

        if let Some(nd) = depth_normal {
            out.normal += nd * (-cfg.lambda_norm * weights[j] * hit.facing);
        }

        let mut g_t = g_z[j] * depth_scale;
        if !hit.clamped {
            out.opacity += g_a * hit.weight;
            let g_q = g_a * prim.opacity * (-0.5 * hit.weight);
            let (su, sv) = (prim.scale[0], prim.scale[1]);
            let g_u = g_q * 2.0 * hit.u / (su * su);
            let g_v = g_q * 2.0 * hit.v / (sv * sv);
            out.scale[0] += g_q * (-2.0 * hit.u * hit.u / (su * su * su));
            out.scale[1] += g_q * (-2.0 * hit.v * hit.v / (sv * sv * sv));
            out.tu += rel * g_u;
            out.tv += rel * g_v;
            let g_rel = tu * g_u + tv * g_v;
            g_t += g_rel.dot(&dir);
            out.center -= g_rel;
        }
        out.center += n * (g_t / denom);
        out.normal += rel * (-g_t / denom);
    }
}

fn run(scene: &SplatScene, views: &[View], cfg: &ObjectiveConfig, want_grad: bool) -> Result<(LossBreakdown, Option<Vec<PrimitiveGradient>>), ReconError> {
    validate_views(views)?;
    let mut loss = LossBreakdown {
        photometric: 0.0,
        distortion: 0.0,
        normal: 0.0,
        total: 0.0,
    };
    let mut grads = want_grad.then(|| vec![PrimitiveGradient::default(); scene.len()]);
    for view in views {
        let res = evaluate_view(scene, view, cfg, want_grad);
        loss.photometric += res.loss.photometric;
        loss.distortion += res.loss.distortion;
        loss.normal += res.loss.normal;
        if let (Some(total), Some(vg)) = (grads.as_mut(), res.grads) {
            for (t, g) in total.iter_mut().zip(&vg) {
                t.add(g);
            }
        }
    }
    loss.total = loss.photometric + cfg.lambda_dist * loss.distortion + cfg.lambda_norm * loss.normal;
    Ok((loss, grads))
}

/// Evaluates the objective without gradients.
pub fn photometric_objective(scene: &SplatScene, views: &[View], cfg: &ObjectiveConfig) -> Result<LossBreakdown, ReconError> {
    Ok(run(scene, views, cfg, false)?.0)
}

/// Evaluates the objective and its gradient with respect to every primitive.
pub fn objective_with_gradient(
    scene: &SplatScene,
    views: &[View],
    cfg: &ObjectiveConfig,
) -> Result<(LossBreakdown, Vec<PrimitiveGradient>), ReconError> {
    let (loss, grads) = run(scene, views, cfg, true)?;
    Ok((loss, grads.expect("gradients requested")))
}

/// Renders the views' images from a scene; used to build self-consistent
/// training sets.
pub fn render_views(scene: &SplatScene, cameras: &[Camera], cfg: &RenderConfig) -> Result<Vec<View>, ReconError> {
    cameras
        .iter()
        .enumerate()
        .map(|(i, cam)| {
            let buf = crate::splat::render_with(scene, cam, cfg).map_err(|e| match e {
                crate::splat::RenderError::Camera(c) => ReconError::InvalidCamera(i, c),
            })?;
            Ok(View {
                image: ImageRgb::new(cam.width, cam.height, buf.color),
                camera: *cam,
            })
        })
        .collect()
}
