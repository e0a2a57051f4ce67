//! Planar Gaussian splat primitives, the pinhole camera, and the ray-splat
//! rasterizer.

mod camera;
pub mod io;
pub mod raster;

pub use camera::{Camera, CameraError};
pub use raster::{
    composite, ray_splat_intersect, render, render_with, CompositeResult, RayHit, RenderBuffers,
    RenderConfig, RenderError, Sample,
};

use crate::math::{quat_components, transform_point, Mat3, Pose, Rotation, Vec3};
use serde::{Deserialize, Serialize};

/// Name of the canonical board frame every composed scene lives in.
pub const CANONICAL_FRAME: &str = "F0";

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum PrimitiveError {
    #[error("quaternion norm {0} is not unit")]
    NonUnitQuaternion(f64),
    #[error("scales must be positive, got ({0}, {1})")]
    NonPositiveScale(f64, f64),
    #[error("opacity {0} outside [0, 1]")]
    OpacityOutOfRange(f64),
    #[error("color channel {0} outside [0, 1]")]
    ColorOutOfRange(f64),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
}

/// An oriented planar Gaussian disk.
///
/// The rotation's first two columns are the disk tangents `t_u`, `t_v`; the
/// third column is the disk normal. Variance along the normal is zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianPrimitive {
    pub center: Vec3,
    pub rotation: Rotation,
    /// In-plane standard deviations `(s_u, s_v)`, meters.
    pub scale: [f64; 2],
    pub color: [f64; 3],
    pub opacity: f64,
}

impl GaussianPrimitive {
    pub fn new(center: Vec3, rotation: Rotation, scale: [f64; 2], color: [f64; 3], opacity: f64) -> Self {
        Self {
            center,
            rotation,
            scale,
            color,
            opacity,
        }
    }

    pub fn rotation_matrix(&self) -> Mat3 {
        self.rotation.to_rotation_matrix().into_inner()
    }

    pub fn tangent_u(&self) -> Vec3 {
        self.rotation * Vec3::x()
    }

    pub fn tangent_v(&self) -> Vec3 {
        self.rotation * Vec3::y()
    }

    pub fn normal(&self) -> Vec3 {
        self.rotation * Vec3::z()
    }

    /// World-space covariance `R diag(s_u², s_v², 0) Rᵀ`.
    pub fn covariance(&self) -> Mat3 {
        let r = self.rotation_matrix();
        let s = Mat3::from_diagonal(&Vec3::new(self.scale[0].powi(2), self.scale[1].powi(2), 0.0));
        r * s * r.transpose()
    }

    pub fn validate(&self) -> Result<(), PrimitiveError> {
        let q = quat_components(&self.rotation);
        if !self.center.iter().all(|v| v.is_finite()) {
            return Err(PrimitiveError::NonFinite("center"));
        }
        if !q.iter().all(|v| v.is_finite()) {
            return Err(PrimitiveError::NonFinite("rotation"));
        }
        if !self.scale.iter().chain(&self.color).all(|v| v.is_finite()) || !self.opacity.is_finite() {
            return Err(PrimitiveError::NonFinite("scale/color/opacity"));
        }
        let norm = q.iter().map(|v| v * v).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > 1e-6 {
            return Err(PrimitiveError::NonUnitQuaternion(norm));
        }
        if self.scale[0] <= 0.0 || self.scale[1] <= 0.0 {
            return Err(PrimitiveError::NonPositiveScale(self.scale[0], self.scale[1]));
        }
        if !(0.0..=1.0).contains(&self.opacity) {
            return Err(PrimitiveError::OpacityOutOfRange(self.opacity));
        }
        if let Some(c) = self.color.iter().find(|c| !(0.0..=1.0).contains(*c)) {
            return Err(PrimitiveError::ColorOutOfRange(*c));
        }
        Ok(())
    }

    /// Applies a rigid transform: `μ' = Rμ + t`, orientation pre-multiplied by `R`.
    pub fn transformed(&self, pose: &Pose) -> Self {
        Self {
            center: transform_point(pose, &self.center),
            rotation: pose.rotation * self.rotation,
            ..*self
        }
    }
}

/// A collection of primitives expressed in one coordinate frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplatScene {
    pub primitives: Vec<GaussianPrimitive>,
    pub frame_label: String,
}

impl SplatScene {
    pub fn new(frame_label: impl Into<String>) -> Self {
        Self {
            primitives: Vec::new(),
            frame_label: frame_label.into(),
        }
    }

    pub fn from_primitives(frame_label: impl Into<String>, primitives: Vec<GaussianPrimitive>) -> Self {
        Self {
            primitives,
            frame_label: frame_label.into(),
        }
    }

    pub fn len(&self) -> usize {
        self.primitives.len()
    }

    pub fn is_empty(&self) -> bool {
        self.primitives.is_empty()
    }

    pub fn transformed(&self, pose: &Pose) -> Self {
        Self {
            primitives: self.primitives.iter().map(|p| p.transformed(pose)).collect(),
            frame_label: self.frame_label.clone(),
        }
    }

    pub fn centroid(&self) -> Option<Vec3> {
        if self.primitives.is_empty() {
            return None;
        }
        let sum: Vec3 = self.primitives.iter().map(|p| p.center).sum();
        Some(sum / self.primitives.len() as f64)
    }

    pub fn extend(&mut self, other: &SplatScene) {
        self.primitives.extend_from_slice(&other.primitives);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::quat_from_components;

    fn prim() -> GaussianPrimitive {
        GaussianPrimitive::new(
            Vec3::new(0.1, 0.2, 0.3),
            quat_from_components([0.9, 0.1, -0.3, 0.2]),
            [0.02, 0.05],
            [0.2, 0.4, 0.6],
            0.7,
        )
    }

    #[test]
    fn validation_catches_bad_fields() {
        assert!(prim().validate().is_ok());
        let mut p = prim();
        p.opacity = 1.5;
        assert_eq!(p.validate(), Err(PrimitiveError::OpacityOutOfRange(1.5)));
        let mut p = prim();
        p.scale[1] = 0.0;
        assert!(matches!(p.validate(), Err(PrimitiveError::NonPositiveScale(..))));
        let mut p = prim();
        p.center.x = f64::NAN;
        assert!(matches!(p.validate(), Err(PrimitiveError::NonFinite(_))));
    }

    #[test]
    fn covariance_has_zero_normal_variance() {
        let p = prim();
        let n = p.normal();
        assert!((p.covariance() * n).norm() < 1e-12);
        let tu = p.tangent_u();
        assert!((tu.dot(&(p.covariance() * tu)) - 0.02f64.powi(2)).abs() < 1e-12);
    }
}
