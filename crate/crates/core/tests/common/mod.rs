//! Oracles shared by the integration and acceptance tests.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use simeval_core::eval::Recording;
use simeval_core::math::{pose, quat_components, quat_from_components, Rotation, Vec3};
use simeval_core::recon::{render_views, TriangleMesh, View};
use simeval_core::scene::{ObjectStates, WorldSnapshot};
use simeval_core::splat::{Camera, GaussianPrimitive, RenderConfig, SplatScene};
use statrs::statistics::Statistics;
use std::collections::BTreeMap;

/// Pearson r from sample covariance and standard deviations.
pub fn pearson_oracle(r: &[f64], s: &[f64]) -> f64 {
    let cov = r.to_vec().covariance(s.to_vec());
    cov / (r.std_dev() * s.std_dev())
}

/// Double loop over every ordered pair, keeping the row maximum.
pub fn mmrv_oracle(r: &[f64], s: &[f64]) -> f64 {
    let n = r.len();
    let mut total = 0.0;
    for i in 0..n {
        let mut worst = 0.0f64;
        for j in 0..n {
            let sim_says = s[i] < s[j];
            let real_says = r[i] < r[j];
            if sim_says != real_says {
                let gap = if r[i] > r[j] { r[i] - r[j] } else { r[j] - r[i] };
                if gap > worst {
                    worst = gap;
                }
            }
        }
        total += worst;
    }
    total / n as f64
}

/// Every weak order of `n` items as level vectors using levels `0..k` for some k.
pub fn weak_orders(n: usize) -> Vec<Vec<u8>> {
    let mut out = Vec::new();
    let mut cur = vec![0u8; n];
    fn rec(i: usize, cur: &mut Vec<u8>, out: &mut Vec<Vec<u8>>) {
        let n = cur.len();
        if i == n {
            let max = *cur.iter().max().unwrap_or(&0);
            if (0..=max).all(|l| cur.contains(&l)) {
                out.push(cur.clone());
            }
            return;
        }
        for l in 0..n as u8 {
            cur[i] = l;
            rec(i + 1, cur, out);
        }
    }
    rec(0, &mut cur, &mut out);
    out
}

/// Nondecreasing grid indices in `0..=10` of length `n` starting at 0.
pub fn anchored_multisets(n: usize) -> Vec<Vec<u8>> {
    let mut out = Vec::new();
    let mut cur = vec![0u8; n];
    fn rec(i: usize, cur: &mut Vec<u8>, out: &mut Vec<Vec<u8>>) {
        if i == cur.len() {
            out.push(cur.clone());
            return;
        }
        for v in cur[i - 1]..=10 {
            cur[i] = v;
            rec(i + 1, cur, out);
        }
    }
    rec(1, &mut cur, &mut out);
    out
}

/// Compares `f` with the MMRV oracle on every length-`n` grid instance up to
/// exact symmetries: a joint permutation of policies (R sorted), a shift of
/// R (min R = 0), a strictly increasing map of R_S (weak orders), and
/// reordering R_S inside ties of R. Float reassociation from these moves is
/// far below the 1e-12 tolerance. Returns (instances, max abs difference).
pub fn exhaustive_mmrv(n: usize, f: impl Fn(&[f64], &[f64]) -> f64 + Sync) -> (usize, f64) {
    use rayon::prelude::*;
    // bit i marks a descent of the order at i, or a tie of R at i
    let mask = |v: &[u8], tie: bool| {
        (1..n).filter(|&i| if tie { v[i] == v[i - 1] } else { v[i] < v[i - 1] }).fold(0u32, |m, i| m | 1 << i)
    };
    let orders: Vec<(u32, Vec<f64>)> = weak_orders(n)
        .iter()
        .map(|o| (mask(o, false), o.iter().map(|l| *l as f64 * 0.1).collect()))
        .collect();
    anchored_multisets(n)
        .par_iter()
        .map(|m| {
            let ties = mask(m, true);
            let r: Vec<f64> = m.iter().map(|k| *k as f64 * 0.1).collect();
            let (mut count, mut worst) = (0usize, 0.0f64);
            for (descents, s) in &orders {
                if descents & ties != 0 {
                    continue;
                }
                worst = worst.max((f(&r, s) - mmrv_oracle(&r, s)).abs());
                count += 1;
            }
            (count, worst)
        })
        .reduce(|| (0, 0.0), |a, b| (a.0 + b.0, a.1.max(b.1)))
}

/// Three depth-separated, mildly tilted disks seen by two cameras. Plane
/// intersections fall outside the frustum, so the per-ray sort order is
/// constant under small perturbations and the objective is smooth.
pub fn smooth_instance(seed: u64) -> (SplatScene, Vec<View>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let prim = |rng: &mut ChaCha8Rng, level: usize| {
        let q = quat_from_components([
            1.0,
            rng.gen_range(-0.04..0.04),
            rng.gen_range(-0.04..0.04),
            rng.gen_range(-0.5..0.5),
        ]);
        GaussianPrimitive::new(
            Vec3::new(
                rng.gen_range(-0.1..0.1),
                rng.gen_range(-0.1..0.1),
                0.06 * (level as f64 - 1.0) + rng.gen_range(-0.005..0.005),
            ),
            q,
            [rng.gen_range(0.06..0.12), rng.gen_range(0.06..0.12)],
            [rng.gen_range(0.1..0.9), rng.gen_range(0.1..0.9), rng.gen_range(0.1..0.9)],
            rng.gen_range(0.3..0.8),
        )
    };
    let prims: Vec<_> = (0..3).map(|l| prim(&mut rng, l)).collect();
    let target: Vec<_> = (0..3).map(|l| prim(&mut rng, l)).collect();
    let cams: Vec<Camera> = (0..2)
        .map(|k| {
            let eye = Vec3::new(0.15 * (k as f64 - 0.5), 0.1, 0.6);
            Camera::looking_at(eye, Vec3::zeros(), Vec3::y(), 0.7, 16, 12)
        })
        .collect();
    let views = render_views(&SplatScene::from_primitives("F0", target), &cams, &RenderConfig::exact()).unwrap();
    (SplatScene::from_primitives("F0", prims), views)
}

pub fn params(p: &GaussianPrimitive) -> [f64; 13] {
    let q = quat_components(&p.rotation);
    [
        p.center.x, p.center.y, p.center.z, q[0], q[1], q[2], q[3], p.scale[0], p.scale[1], p.color[0], p.color[1],
        p.color[2], p.opacity,
    ]
}

pub fn with_param(p: &GaussianPrimitive, k: usize, v: f64) -> GaussianPrimitive {
    let mut a = params(p);
    a[k] = v;
    GaussianPrimitive::new(
        Vec3::new(a[0], a[1], a[2]),
        quat_from_components([a[3], a[4], a[5], a[6]]),
        [a[7], a[8]],
        [a[9], a[10], a[11]],
        a[12],
    )
}

/// Area-weighted uniform samples on a mesh surface.
pub fn surface_samples(mesh: &TriangleMesh, n: usize, rng: &mut ChaCha8Rng) -> Vec<Vec3> {
    let areas: Vec<f64> = mesh.triangles.iter().map(|t| mesh.triangle_area(t)).collect();
    let total: f64 = areas.iter().sum();
    (0..n)
        .map(|_| {
            let mut r = rng.gen::<f64>() * total;
            let mut k = 0;
            while k + 1 < areas.len() && r > areas[k] {
                r -= areas[k];
                k += 1;
            }
            let [a, b, c] = mesh.triangles[k].map(|i| mesh.vertices[i]);
            let (mut u, mut v): (f64, f64) = (rng.gen(), rng.gen());
            if u + v > 1.0 {
                u = 1.0 - u;
                v = 1.0 - v;
            }
            a + (b - a) * u + (c - a) * v
        })
        .collect()
}

pub fn snapshot(objects: ObjectStates, tool: Vec3, width: f64, rest: &BTreeMap<String, f64>) -> WorldSnapshot {
    WorldSnapshot {
        objects,
        tool: pose(tool, Rotation::identity()),
        gripper_width: width,
        rest_bottom: rest.clone(),
    }
}

pub fn ramp(n: usize, dof: usize, dt: f64) -> Vec<Vec<f64>> {
    (0..n).map(|t| (0..dof).map(|j| 0.5 * (0.3 * t as f64 * dt + j as f64).sin()).collect()).collect()
}

/// A real robot under position control: servo plus bounded per-step noise.
pub fn noisy_recording(rng: &mut ChaCha8Rng, steps: usize, bound: f64) -> Recording {
    let dt = 1.0 / 15.0;
    let cmd = ramp(steps, 7, dt);
    let mut achieved = vec![cmd[0].clone()];
    for t in 1..steps {
        achieved.push(cmd[t].iter().map(|c| c + rng.gen_range(-bound..bound)).collect());
    }
    Recording {
        time: (0..steps).map(|t| t as f64 * dt).collect(),
        commanded: cmd,
        achieved,
    }
}

/// Per-pixel reference renderer: every splat is intersected with every pixel
/// ray, hits are sorted by ray distance and composited with no early exit.
/// Shares only the kernel definition with the rasterizer (Gaussian weight,
/// zero beyond 3σ, alpha clamp 0.999).
pub fn brute_render(scene: &SplatScene, cam: &Camera) -> Vec<([f64; 3], f64)> {
    let rot = cam.pose.rotation.to_rotation_matrix();
    let origin = cam.pose.translation.vector;
    let mut out = Vec::with_capacity(cam.pixel_count());
    for y in 0..cam.height {
        for x in 0..cam.width {
            let local = Vec3::new((x as f64 + 0.5 - cam.cx) / cam.fx, (y as f64 + 0.5 - cam.cy) / cam.fy, 1.0);
            let d = (rot * local).normalize();
            let mut hits: Vec<(f64, [f64; 3], f64)> = Vec::new();
            for p in &scene.primitives {
                let m = p.rotation.to_rotation_matrix();
                let (tu, tv, n) = (m * Vec3::x(), m * Vec3::y(), m * Vec3::z());
                let nd = n.dot(&d);
                if nd.abs() < 1e-9 {
                    continue;
                }
                let t = n.dot(&(p.center - origin)) / nd;
                if t <= 0.0 {
                    continue;
                }
                let off = origin + d * t - p.center;
                let q = (tu.dot(&off) / p.scale[0]).powi(2) + (tv.dot(&off) / p.scale[1]).powi(2);
                if q > 9.0 {
                    continue;
                }
                hits.push((t, p.color, (p.opacity * (-0.5 * q).exp()).min(0.999)));
            }
            hits.sort_by(|a, b| a.0.total_cmp(&b.0));
            let mut c = [0.0; 3];
            let mut trans = 1.0;
            for (_, col, a) in hits {
                for k in 0..3 {
                    c[k] += trans * a * col[k];
                }
                trans *= 1.0 - a;
            }
            out.push((c, 1.0 - trans));
        }
    }
    out
}

pub fn random_rotation(rng: &mut ChaCha8Rng) -> Rotation {
    let q: [f64; 4] = std::array::from_fn(|_| rng.gen_range(-1.0..1.0));
    quat_from_components(q)
}

/// `n` random disks in a unit cube around the origin.
pub fn random_splats(rng: &mut ChaCha8Rng, n: usize) -> SplatScene {
    let prims = (0..n)
        .map(|_| {
            GaussianPrimitive::new(
                Vec3::new(rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5)),
                random_rotation(rng),
                [rng.gen_range(0.05..0.3), rng.gen_range(0.05..0.3)],
                [rng.gen(), rng.gen(), rng.gen()],
                rng.gen_range(0.1..1.0),
            )
        })
        .collect();
    SplatScene::from_primitives("F0", prims)
}

/// Camera on a sphere of radius `dist` looking at the origin.
pub fn random_camera(rng: &mut ChaCha8Rng, dist: f64, width: u32, height: u32) -> Camera {
    let dir = loop {
        let v = Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        if v.norm() > 0.2 && v.norm() <= 1.0 && v.normalize().z.abs() < 0.95 {
            break v.normalize();
        }
    };
    Camera::looking_at(dir * dist, Vec3::zeros(), Vec3::z(), 0.9, width, height)
}
