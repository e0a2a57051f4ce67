//! Indexed triangle meshes and their file formats.

use crate::math::{transform_point, Aabb, Pose, Vec3};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::fmt::Write as _;

#[derive(Debug, thiserror::Error)]
pub enum MeshError {
    #[error("triangle {0} references a vertex out of range")]
    IndexOutOfRange(usize),
    #[error("obj line {line}: {reason}")]
    Obj { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TriangleMesh {
    pub vertices: Vec<Vec3>,
    pub triangles: Vec<[usize; 3]>,
    pub colors: Option<Vec<[f64; 3]>>,
}

impl TriangleMesh {
    pub fn new(vertices: Vec<Vec3>, triangles: Vec<[usize; 3]>) -> Self {
        Self {
            vertices,
            triangles,
            colors: None,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    pub fn validate(&self) -> Result<(), MeshError> {
        for (i, t) in self.triangles.iter().enumerate() {
            if t.iter().any(|&v| v >= self.vertices.len()) {
                return Err(MeshError::IndexOutOfRange(i));
            }
        }
        Ok(())
    }

    pub fn triangle_area(&self, t: &[usize; 3]) -> f64 {
        let [a, b, c] = t.map(|i| self.vertices[i]);
        0.5 * (b - a).cross(&(c - a)).norm()
    }

    pub fn area(&self) -> f64 {
        self.triangles.iter().map(|t| self.triangle_area(t)).sum()
    }

    pub fn bounding_box(&self) -> Aabb {
        Aabb::from_points(self.vertices.iter())
    }

    /// Area-weighted centroid of the surface.
    pub fn surface_centroid(&self) -> Option<Vec3> {
        let mut sum = Vec3::zeros();
        let mut total = 0.0;
        for t in &self.triangles {
            let a = self.triangle_area(t);
            let c = (self.vertices[t[0]] + self.vertices[t[1]] + self.vertices[t[2]]) / 3.0;
            sum += c * a;
            total += a;
        }
        (total > 0.0).then(|| sum / total)
    }

    /// Drops triangles with area ≤ 1e-12 m² and vertices no triangle uses.
    pub fn cleanup(&mut self) {
        let keep: Vec<[usize; 3]> = self
            .triangles
            .iter()
            .copied()
            .filter(|t| t[0] != t[1] && t[1] != t[2] && t[0] != t[2] && self.triangle_area(t) > 1e-12)
            .collect();
        let mut remap = vec![usize::MAX; self.vertices.len()];
        let mut verts = Vec::new();
        let mut colors = self.colors.as_ref().map(|_| Vec::new());
        for t in &keep {
            for &v in t {
                if remap[v] == usize::MAX {
                    remap[v] = verts.len();
                    verts.push(self.vertices[v]);
                    if let (Some(out), Some(src)) = (colors.as_mut(), self.colors.as_ref()) {
                        out.push(src[v]);
                    }
                }
            }
        }
        self.triangles = keep.iter().map(|t| t.map(|v| remap[v])).collect();
        self.vertices = verts;
        self.colors = colors;
    }

    pub fn transformed(&self, pose: &Pose) -> Self {
        Self {
            vertices: self.vertices.iter().map(|v| transform_point(pose, v)).collect(),
            triangles: self.triangles.clone(),
            colors: self.colors.clone(),
        }
    }

    /// Applies `p ↦ s·p` before the rigid part; used by similarity transforms.
    pub fn map_vertices(&self, f: impl Fn(&Vec3) -> Vec3) -> Self {
        Self {
            vertices: self.vertices.iter().map(f).collect(),
            triangles: self.triangles.clone(),
            colors: self.colors.clone(),
        }
    }

    pub fn merge(&mut self, other: &TriangleMesh) {
        let base = self.vertices.len();
        self.vertices.extend_from_slice(&other.vertices);
        self.triangles.extend(other.triangles.iter().map(|t| t.map(|v| v + base)));
        self.colors = None;
    }

    /// Undirected edges used by a number of triangles other than two.
    pub fn non_manifold_edges(&self) -> Vec<(usize, usize, usize)> {
        let mut counts: HashMap<(usize, usize), usize> = HashMap::new();
        for t in &self.triangles {
            for k in 0..3 {
                let (a, b) = (t[k], t[(k + 1) % 3]);
                *counts.entry((a.min(b), a.max(b))).or_default() += 1;
            }
        }
        let mut out: Vec<_> = counts
            .into_iter()
            .filter(|(_, c)| *c != 2)
            .map(|((a, b), c)| (a, b, c))
            .collect();
        out.sort_unstable();
        out
    }

    /// Unsigned distance from a point to the closest triangle.
    pub fn distance_to(&self, p: &Vec3) -> f64 {
        self.triangles
            .iter()
            .map(|t| point_triangle_distance(p, &self.vertices[t[0]], &self.vertices[t[1]], &self.vertices[t[2]]))
            .fold(f64::INFINITY, f64::min)
    }

    /// Heights of every triangle crossed by the vertical line through `(x, y)`.
    pub fn vertical_hits(&self, x: f64, y: f64) -> Vec<f64> {
        let mut out = Vec::new();
        for t in &self.triangles {
            let [a, b, c] = t.map(|i| self.vertices[i]);
            let d = (b.x - a.x) * (c.y - a.y) - (c.x - a.x) * (b.y - a.y);
            if d.abs() < 1e-18 {
                continue;
            }
            let l1 = ((x - a.x) * (c.y - a.y) - (c.x - a.x) * (y - a.y)) / d;
            let l2 = ((b.x - a.x) * (y - a.y) - (x - a.x) * (b.y - a.y)) / d;
            let l0 = 1.0 - l1 - l2;
            let eps = -1e-12;
            if l0 >= eps && l1 >= eps && l2 >= eps {
                out.push(l0 * a.z + l1 * b.z + l2 * c.z);
            }
        }
        out
    }

    pub fn to_obj(&self) -> String {
        let mut s = String::new();
        if self.colors.is_some() {
            s.push_str("# vertex colors follow positions: v x y z r g b\n");
        }
        for (i, v) in self.vertices.iter().enumerate() {
            match &self.colors {
                Some(c) => {
                    let c = c[i];
                    let _ = writeln!(s, "v {} {} {} {} {} {}", v.x, v.y, v.z, c[0], c[1], c[2]);
                }
                None => {
                    let _ = writeln!(s, "v {} {} {}", v.x, v.y, v.z);
                }
            }
        }
        for t in &self.triangles {
            let _ = writeln!(s, "f {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1);
        }
        s
    }

    /// Reads vertices (optionally with colors) and faces; polygons are fanned.
    pub fn from_obj(text: &str) -> Result<Self, MeshError> {
        let mut vertices = Vec::new();
        let mut colors = Vec::new();
        let mut triangles = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let bad = |reason: &str| MeshError::Obj {
                line: i + 1,
                reason: reason.into(),
            };
            let toks: Vec<&str> = line.split_whitespace().collect();
            match toks.first() {
                Some(&"v") => {
                    let nums: Result<Vec<f64>, _> = toks[1..].iter().map(|t| t.parse::<f64>()).collect();
                    let nums = nums.map_err(|_| bad("bad vertex"))?;
                    if nums.len() < 3 {
                        return Err(bad("vertex needs 3 coordinates"));
                    }
                    vertices.push(Vec3::new(nums[0], nums[1], nums[2]));
                    if nums.len() >= 6 {
                        colors.push([nums[3], nums[4], nums[5]]);
                    }
                }
                Some(&"f") => {
                    let idx: Result<Vec<usize>, _> = toks[1..]
                        .iter()
                        .map(|t| t.split('/').next().unwrap().parse::<usize>())
                        .collect();
                    let idx = idx.map_err(|_| bad("bad face index"))?;
                    if idx.len() < 3 || idx.contains(&0) {
                        return Err(bad("face needs 3 one-based indices"));
                    }
                    for k in 1..idx.len() - 1 {
                        triangles.push([idx[0] - 1, idx[k] - 1, idx[k + 1] - 1]);
                    }
                }
                _ => {}
            }
        }
        let colors = (colors.len() == vertices.len() && !colors.is_empty()).then_some(colors);
        let mesh = Self {
            vertices,
            triangles,
            colors,
        };
        mesh.validate()?;
        Ok(mesh)
    }

    /// Binary little-endian PLY with float positions, optional uchar colors.
    pub fn to_ply(&self) -> Vec<u8> {
        let mut header = String::from("ply\nformat binary_little_endian 1.0\n");
        let _ = writeln!(header, "element vertex {}", self.vertices.len());
        header.push_str("property float x\nproperty float y\nproperty float z\n");
        if self.colors.is_some() {
            header.push_str("property uchar red\nproperty uchar green\nproperty uchar blue\n");
        }
        let _ = writeln!(header, "element face {}", self.triangles.len());
        header.push_str("property list uchar int vertex_indices\nend_header\n");
        let mut out = header.into_bytes();
        for (i, v) in self.vertices.iter().enumerate() {
            for c in [v.x, v.y, v.z] {
                out.extend_from_slice(&(c as f32).to_le_bytes());
            }
            if let Some(cols) = &self.colors {
                out.extend(cols[i].iter().map(|c| crate::splat::raster::quantize(*c)));
            }
        }
        for t in &self.triangles {
            out.push(3);
            for &v in t {
                out.extend_from_slice(&(v as i32).to_le_bytes());
            }
        }
        out
    }

    /// Axis-aligned box mesh, outward winding.
    pub fn cuboid(min: Vec3, max: Vec3) -> Self {
        let c = |i: usize| {
            Vec3::new(
                if i & 1 == 0 { min.x } else { max.x },
                if i & 2 == 0 { min.y } else { max.y },
                if i & 4 == 0 { min.z } else { max.z },
            )
        };
        let vertices = (0..8).map(c).collect();
        let triangles = vec![
            [0, 2, 1],
            [1, 2, 3],
            [4, 5, 6],
            [5, 7, 6],
            [0, 1, 4],
            [1, 5, 4],
            [2, 6, 3],
            [3, 6, 7],
            [0, 4, 2],
            [2, 4, 6],
            [1, 3, 5],
            [3, 7, 5],
        ];
        Self::new(vertices, triangles)
    }

    /// Open-top box (a tray or bin): floor plus four walls.
    pub fn open_box(min: Vec3, max: Vec3) -> Self {
        let mut mesh = Self::cuboid(min, max);
        // drop the two top-face triangles (z = max)
        mesh.triangles.retain(|t| !t.iter().all(|&v| v & 4 != 0));
        mesh
    }
}

pub fn point_triangle_distance(p: &Vec3, a: &Vec3, b: &Vec3, c: &Vec3) -> f64 {
    (p - closest_point_on_triangle(p, a, b, c)).norm()
}

/// Closest point on triangle `abc` to `p` (Ericson, Real-Time Collision Detection).
pub fn closest_point_on_triangle(p: &Vec3, a: &Vec3, b: &Vec3, c: &Vec3) -> Vec3 {
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(&ap);
    let d2 = ac.dot(&ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return *a;
    }
    let bp = p - b;
    let d3 = ab.dot(&bp);
    let d4 = ac.dot(&bp);
    if d3 >= 0.0 && d4 <= d3 {
        return *b;
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        return a + ab * (d1 / (d1 - d3));
    }
    let cp = p - c;
    let d5 = ab.dot(&cp);
    let d6 = ac.dot(&cp);
    if d6 >= 0.0 && d5 <= d6 {
        return *c;
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        return a + ac * (d2 / (d2 - d6));
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        return b + (c - b) * ((d4 - d3) / ((d4 - d3) + (d5 - d6)));
    }
    let denom = 1.0 / (va + vb + vc);
    let v = vb * denom;
    let w = vc * denom;
    a + ab * v + ac * w
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cuboid_is_closed_and_outward() {
        let m = TriangleMesh::cuboid(Vec3::zeros(), Vec3::new(1.0, 2.0, 3.0));
        assert!(m.non_manifold_edges().is_empty());
        assert!((m.area() - 2.0 * (2.0 + 3.0 + 6.0)).abs() < 1e-12);
        let center = Vec3::new(0.5, 1.0, 1.5);
        for t in &m.triangles {
            let [a, b, c] = t.map(|i| m.vertices[i]);
            let n = (b - a).cross(&(c - a));
            assert!(n.dot(&((a + b + c) / 3.0 - center)) > 0.0);
        }
    }

    #[test]
    fn obj_round_trip_and_cleanup() {
        let mut m = TriangleMesh::cuboid(Vec3::zeros(), Vec3::repeat(1.0));
        m.vertices.push(Vec3::repeat(9.0));
        m.triangles.push([0, 0, 1]);
        m.cleanup();
        assert_eq!(m.vertices.len(), 8);
        assert_eq!(m.triangles.len(), 12);
        let back = TriangleMesh::from_obj(&m.to_obj()).unwrap();
        assert_eq!(back, m);
        assert!(TriangleMesh::from_obj("v 0 0 0\nf 1 2 3\n").is_err());
    }

    #[test]
    fn vertical_hits_on_open_box() {
        let m = TriangleMesh::open_box(Vec3::zeros(), Vec3::new(1.0, 1.0, 0.5));
        let hits = m.vertical_hits(0.3, 0.6);
        assert_eq!(hits.len(), 1);
        assert!(hits[0].abs() < 1e-12);
    }

    #[test]
    fn triangle_distance() {
        let (a, b, c) = (Vec3::zeros(), Vec3::x(), Vec3::y());
        assert!((point_triangle_distance(&Vec3::new(0.2, 0.2, 0.5), &a, &b, &c) - 0.5).abs() < 1e-12);
        assert!((point_triangle_distance(&Vec3::new(2.0, 0.0, 0.0), &a, &b, &c) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ply_header_counts() {
        let m = TriangleMesh::cuboid(Vec3::zeros(), Vec3::repeat(1.0));
        let bytes = m.to_ply();
        let text = String::from_utf8_lossy(&bytes[..200]);
        assert!(text.contains("element vertex 8"));
        assert!(text.contains("element face 12"));
    }
}
