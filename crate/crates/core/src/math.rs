//! Small geometry helpers shared across modules.

use nalgebra::{Isometry3, Matrix3, Quaternion, Translation3, UnitQuaternion, Vector3};

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;
pub type Pose = Isometry3<f64>;
pub type Rotation = UnitQuaternion<f64>;

/// Builds a pose from a translation and a rotation.
pub fn pose(translation: Vec3, rotation: Rotation) -> Pose {
    Isometry3::from_parts(Translation3::from(translation), rotation)
}

/// Roll-pitch-yaw (fixed-axis XYZ, i.e. `Rz(yaw) * Ry(pitch) * Rx(roll)`).
pub fn rotation_from_rpy(roll: f64, pitch: f64, yaw: f64) -> Rotation {
    UnitQuaternion::from_euler_angles(roll, pitch, yaw)
}

pub fn yaw_rotation(yaw: f64) -> Rotation {
    UnitQuaternion::from_axis_angle(&Vector3::z_axis(), yaw)
}

/// A pose whose +z axis looks from `eye` toward `target`, with image-down (+y)
/// roughly aligned to `-up`. Camera convention: x right, y down, z forward.
pub fn look_at(eye: Vec3, target: Vec3, up: Vec3) -> Pose {
    let forward = (target - eye).normalize();
    let mut right = forward.cross(&up);
    if right.norm() < 1e-9 {
        right = forward.cross(&Vec3::x()).normalize();
        if right.norm() < 1e-9 {
            right = forward.cross(&Vec3::y());
        }
    }
    let right = right.normalize();
    let down = forward.cross(&right);
    let m = Mat3::from_columns(&[right, down, forward]);
    let rot = UnitQuaternion::from_matrix(&m);
    pose(eye, rot)
}

/// Rotation matrix of the normalized quaternion `(w, x, y, z)`.
pub fn quat_to_matrix(q: [f64; 4]) -> Mat3 {
    let [w, x, y, z] = q;
    Mat3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    )
}

/// Partial derivatives of [`quat_to_matrix`] with respect to `w, x, y, z`,
/// evaluated at a unit quaternion (the normalization is not differentiated).
pub fn quat_matrix_partials(q: [f64; 4]) -> [Mat3; 4] {
    let [w, x, y, z] = q;
    let dw = Mat3::new(0.0, -z, y, z, 0.0, -x, -y, x, 0.0) * 2.0;
    let dx = Mat3::new(0.0, y, z, y, -2.0 * x, -w, z, w, -2.0 * x) * 2.0;
    let dy = Mat3::new(-2.0 * y, x, w, x, 0.0, z, -w, z, -2.0 * y) * 2.0;
    let dz = Mat3::new(-2.0 * z, -w, x, w, -2.0 * z, y, x, y, 0.0) * 2.0;
    [dw, dx, dy, dz]
}

/// Gradient of a scalar with respect to a raw quaternion `q` that is
/// normalized before use, given the gradient `g_r` with respect to the
/// rotation matrix of `q / |q|`.
pub fn quat_gradient_from_matrix_gradient(q: [f64; 4], g_r: &Mat3) -> [f64; 4] {
    let n = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt();
    let qh = [q[0] / n, q[1] / n, q[2] / n, q[3] / n];
    let partials = quat_matrix_partials(qh);
    let mut g = [0.0; 4];
    for k in 0..4 {
        g[k] = partials[k].component_mul(g_r).sum();
    }
    let dot: f64 = (0..4).map(|k| g[k] * qh[k]).sum();
    let mut out = [0.0; 4];
    for k in 0..4 {
        out[k] = (g[k] - qh[k] * dot) / n;
    }
    out
}

pub fn quat_components(q: &Rotation) -> [f64; 4] {
    [q.w, q.i, q.j, q.k]
}

/// Normalizes raw `(w, x, y, z)` components into a unit quaternion.
pub fn quat_from_components(q: [f64; 4]) -> Rotation {
    UnitQuaternion::from_quaternion(Quaternion::new(q[0], q[1], q[2], q[3]))
}

/// Angle in radians between two rotations.
pub fn rotation_angle_between(a: &Rotation, b: &Rotation) -> f64 {
    a.angle_to(b)
}

pub fn is_finite_pose(p: &Pose) -> bool {
    p.translation.vector.iter().all(|v| v.is_finite())
        && quat_components(&p.rotation).iter().all(|v| v.is_finite())
}

/// Axis-aligned bounding box.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Aabb {
    pub min: Vec3,
    pub max: Vec3,
}

impl Aabb {
    pub fn new(min: Vec3, max: Vec3) -> Self {
        Self { min, max }
    }

    pub fn empty() -> Self {
        Self {
            min: Vec3::repeat(f64::INFINITY),
            max: Vec3::repeat(f64::NEG_INFINITY),
        }
    }

    pub fn from_points<'a>(points: impl IntoIterator<Item = &'a Vec3>) -> Self {
        let mut b = Self::empty();
        for p in points {
            b.grow(p);
        }
        b
    }

    pub fn is_empty(&self) -> bool {
        (0..3).any(|k| self.min[k] > self.max[k])
    }

    pub fn grow(&mut self, p: &Vec3) {
        self.min = self.min.inf(p);
        self.max = self.max.sup(p);
    }

    pub fn center(&self) -> Vec3 {
        (self.min + self.max) * 0.5
    }

    pub fn extent(&self) -> Vec3 {
        self.max - self.min
    }

    pub fn contains(&self, p: &Vec3) -> bool {
        (0..3).all(|k| p[k] >= self.min[k] && p[k] <= self.max[k])
    }

    /// Bounding box of this box after a rigid transform.
    pub fn transformed(&self, pose: &Pose) -> Self {
        let mut out = Self::empty();
        for i in 0..8 {
            let c = Vec3::new(
                if i & 1 == 0 { self.min.x } else { self.max.x },
                if i & 2 == 0 { self.min.y } else { self.max.y },
                if i & 4 == 0 { self.min.z } else { self.max.z },
            );
            out.grow(&(pose * nalgebra::Point3::from(c)).coords);
        }
        out
    }

    /// Euclidean distance from a point to the box (zero inside).
    pub fn distance_to(&self, p: &Vec3) -> f64 {
        let mut d2 = 0.0;
        for k in 0..3 {
            let e = if p[k] < self.min[k] {
                self.min[k] - p[k]
            } else if p[k] > self.max[k] {
                p[k] - self.max[k]
            } else {
                0.0
            };
            d2 += e * e;
        }
        d2.sqrt()
    }
}

pub fn transform_point(pose: &Pose, p: &Vec3) -> Vec3 {
    (pose * nalgebra::Point3::from(*p)).coords
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quat_partials_match_finite_differences() {
        let q = quat_components(&quat_from_components([0.7, -0.2, 0.4, 0.3]));
        let partials = quat_matrix_partials(q);
        let h = 1e-6;
        for k in 0..4 {
            let mut qp = q;
            let mut qm = q;
            qp[k] += h;
            qm[k] -= h;
            let fd = (quat_to_matrix(qp) - quat_to_matrix(qm)) / (2.0 * h);
            assert!((fd - partials[k]).amax() < 1e-8);
        }
    }

    #[test]
    fn quat_matrix_agrees_with_nalgebra() {
        let r = quat_from_components([0.3, 0.5, -0.1, 0.8]);
        let m = quat_to_matrix(quat_components(&r));
        assert!((m - r.to_rotation_matrix().into_inner()).amax() < 1e-12);
    }

    #[test]
    fn look_at_points_z_toward_target() {
        let p = look_at(Vec3::new(1.0, 2.0, 3.0), Vec3::zeros(), Vec3::z());
        let fwd = p.rotation * Vec3::z();
        let expect = -Vec3::new(1.0, 2.0, 3.0).normalize();
        assert!((fwd - expect).norm() < 1e-12);
    }
}
