use crate::math::{is_finite_pose, look_at, transform_point, Pose, Vec3};
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum CameraError {
    #[error("camera pose is not finite")]
    NonFinitePose,
    #[error("focal lengths must be positive (fx={0}, fy={1})")]
    BadFocal(f64, f64),
    #[error("principal point ({0}, {1}) outside the image")]
    BadPrincipalPoint(f64, f64),
    #[error("resolution must be nonzero")]
    EmptyResolution,
    #[error("rotation is not orthonormal")]
    NonOrthonormal,
}

/// Pinhole camera without distortion. `pose` maps camera coordinates into
/// the world; the camera looks down +z with +y pointing down the image.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub pose: Pose,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl Camera {
    pub fn new(pose: Pose, fx: f64, fy: f64, cx: f64, cy: f64, width: u32, height: u32) -> Self {
        Self {
            pose,
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        }
    }

    /// Camera at `eye` looking at `target` with a horizontal field of view in radians.
    pub fn looking_at(eye: Vec3, target: Vec3, up: Vec3, hfov: f64, width: u32, height: u32) -> Self {
        let fx = 0.5 * width as f64 / (0.5 * hfov).tan();
        Self::new(
            look_at(eye, target, up),
            fx,
            fx,
            0.5 * width as f64,
            0.5 * height as f64,
            width,
            height,
        )
    }

    pub fn validate(&self) -> Result<(), CameraError> {
        if !is_finite_pose(&self.pose) {
            return Err(CameraError::NonFinitePose);
        }
        let q = self.pose.rotation.quaternion();
        if (q.norm() - 1.0).abs() > 1e-6 {
            return Err(CameraError::NonOrthonormal);
        }
        if self.width == 0 || self.height == 0 {
            return Err(CameraError::EmptyResolution);
        }
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(CameraError::BadFocal(self.fx, self.fy));
        }
        if !(self.cx > 0.0 && self.cx < self.width as f64 && self.cy > 0.0 && self.cy < self.height as f64) {
            return Err(CameraError::BadPrincipalPoint(self.cx, self.cy));
        }
        Ok(())
    }

    pub fn center(&self) -> Vec3 {
        self.pose.translation.vector
    }

    /// Optical axis in world coordinates.
    pub fn forward(&self) -> Vec3 {
        self.pose.rotation * Vec3::z()
    }

    pub fn pixel_count(&self) -> usize {
        self.width as usize * self.height as usize
    }

    /// World-space ray direction through pixel center `(x, y)` scaled so its
    /// camera-space z component is 1.
    pub fn pixel_direction_unit_depth(&self, x: u32, y: u32) -> Vec3 {
        let dc = Vec3::new(
            (x as f64 + 0.5 - self.cx) / self.fx,
            (y as f64 + 0.5 - self.cy) / self.fy,
            1.0,
        );
        self.pose.rotation * dc
    }

    /// Ray origin and normalized direction through pixel center `(x, y)`.
    pub fn pixel_ray(&self, x: u32, y: u32) -> (Vec3, Vec3) {
        (self.center(), self.pixel_direction_unit_depth(x, y).normalize())
    }

    /// World point into camera coordinates.
    pub fn to_camera(&self, p: &Vec3) -> Vec3 {
        transform_point(&self.pose.inverse(), p)
    }

    /// Projects a camera-space point to continuous pixel coordinates.
    pub fn project_camera_point(&self, pc: &Vec3) -> Option<(f64, f64)> {
        if pc.z <= 1e-9 {
            return None;
        }
        Some((self.fx * pc.x / pc.z + self.cx, self.fy * pc.y / pc.z + self.cy))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn center_ray_follows_optical_axis() {
        let cam = Camera::looking_at(Vec3::new(0.0, 0.0, 2.0), Vec3::zeros(), Vec3::y(), 1.0, 64, 64);
        let d = cam.pixel_direction_unit_depth(31, 31);
        let expect = cam.forward();
        assert!((d.normalize() - expect).norm() < 0.02);
        let (x, y) = cam.project_camera_point(&cam.to_camera(&Vec3::zeros())).unwrap();
        assert!((x - 32.0).abs() < 1e-9 && (y - 32.0).abs() < 1e-9);
    }

    #[test]
    fn validation() {
        let mut cam = Camera::looking_at(Vec3::new(0.0, 0.0, 2.0), Vec3::zeros(), Vec3::y(), 1.0, 64, 48);
        assert!(cam.validate().is_ok());
        cam.cx = 70.0;
        assert!(matches!(cam.validate(), Err(CameraError::BadPrincipalPoint(..))));
        cam.cx = 32.0;
        cam.pose.translation.vector.x = f64::INFINITY;
        assert_eq!(cam.validate(), Err(CameraError::NonFinitePose));
    }
}
