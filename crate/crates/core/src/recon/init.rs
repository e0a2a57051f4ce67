//! Starting scenes for reconstruction when no initialization is supplied.

use super::ReconError;
use crate::math::{Mat3, Vec3};
use crate::splat::{Camera, GaussianPrimitive, SplatScene};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Point closest (least squares) to every camera's optical axis.
pub fn axes_focus(cameras: &[Camera]) -> Option<Vec3> {
    let mut a = Mat3::zeros();
    let mut b = Vec3::zeros();
    for c in cameras {
        let d = c.forward().normalize();
        let p = Mat3::identity() - d * d.transpose();
        a += p;
        b += p * c.center();
    }
    a.try_inverse().map(|inv| inv * b)
}

/// `count` randomly oriented gray disks filling a ball around the point the
/// cameras look at, sized so the ball is roughly covered.
pub fn random_init(cameras: &[Camera], count: usize, frame_label: &str, seed: u64) -> Result<SplatScene, ReconError> {
    if cameras.is_empty() {
        return Err(ReconError::NoViews);
    }
    if count == 0 {
        return Err(ReconError::InvalidConfig("initial splat count must be at least 1".into()));
    }
    let focus = axes_focus(cameras)
        .ok_or_else(|| ReconError::InvalidConfig("camera axes are parallel; pass an initial scene".into()))?;
    let mean_dist = cameras.iter().map(|c| (c.center() - focus).norm()).sum::<f64>() / cameras.len() as f64;
    let radius = 0.3 * mean_dist;
    let scale = radius / (count as f64).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let prims = (0..count)
        .map(|_| {
            let p = loop {
                let v = Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
                if v.norm_squared() <= 1.0 {
                    break v;
                }
            };
            let rot = crate::math::Rotation::from_euler_angles(
                rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI),
                rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI),
                rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI),
            );
            GaussianPrimitive::new(focus + p * radius, rot, [scale, scale], [0.5, 0.5, 0.5], 0.5)
        })
        .collect();
    Ok(SplatScene::from_primitives(frame_label, prims))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn focus_of_orbit_is_its_target() {
        let target = Vec3::new(0.3, -0.2, 0.1);
        let cams = crate::synthetic::orbit_cameras(target, 1.5, 6, 32, 24, 1.0);
        assert!((axes_focus(&cams).unwrap() - target).norm() < 1e-9);
        let s = random_init(&cams, 50, "f", 1).unwrap();
        assert_eq!(s.primitives.len(), 50);
        assert!(s.primitives.iter().all(|p| (p.center - target).norm() <= 0.45 + 1e-12));
        assert_eq!(s, random_init(&cams, 50, "f", 1).unwrap());
    }
}
