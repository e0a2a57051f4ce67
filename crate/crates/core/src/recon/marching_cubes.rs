//! Isosurface extraction from a TSDF volume.

use super::mesh::TriangleMesh;
use super::tables::{EDGE_TABLE, TRIANGLE_TABLE};
use super::tsdf::TsdfVolume;
use crate::math::Vec3;
use std::collections::HashMap;

const CORNERS: [[usize; 3]; 8] = [
    [0, 0, 0],
    [1, 0, 0],
    [1, 1, 0],
    [0, 1, 0],
    [0, 0, 1],
    [1, 0, 1],
    [1, 1, 1],
    [0, 1, 1],
];

const EDGES: [[usize; 2]; 12] = [
    [0, 1],
    [1, 2],
    [2, 3],
    [3, 0],
    [4, 5],
    [5, 6],
    [6, 7],
    [7, 4],
    [0, 4],
    [1, 5],
    [2, 6],
    [3, 7],
];

/// Extracts the zero level set as a watertight mesh.
///
/// Cells touching an unobserved sample (weight 0) are skipped. Vertices on a
/// grid edge are shared between the cells meeting there, and faces are wound
/// so their normals point toward positive distance (free space). When the
/// volume carries colors they are interpolated onto the vertices.
pub fn extract_mesh(vol: &TsdfVolume) -> TriangleMesh {
    let [nx, ny, nz] = vol.dims;
    let mut vertices: Vec<Vec3> = Vec::new();
    let mut colors: Vec<[f64; 3]> = Vec::new();
    let mut triangles = Vec::new();
    // key: (linear index of lower endpoint, axis), axis 3 for on-level samples
    let mut edge_vertex: HashMap<(usize, u8), usize> = HashMap::new();

    for k in 0..nz - 1 {
        for j in 0..ny - 1 {
            for i in 0..nx - 1 {
                let idx: [usize; 8] = CORNERS.map(|c| vol.index(i + c[0], j + c[1], k + c[2]));
                if idx.iter().any(|&n| vol.weight[n] <= 0.0) {
                    continue;
                }
                let vals = idx.map(|n| vol.sdf[n]);
                let mut case = 0usize;
                for (b, v) in vals.iter().enumerate() {
                    if *v < 0.0 {
                        case |= 1 << b;
                    }
                }
                if EDGE_TABLE[case] == 0 {
                    continue;
                }
                let mut local = [usize::MAX; 12];
                for (e, [a, b]) in EDGES.iter().enumerate() {
                    if EDGE_TABLE[case] & (1 << e) == 0 {
                        continue;
                    }
                    let (lo, hi) = if idx[*a] < idx[*b] { (*a, *b) } else { (*b, *a) };
                    let ca = CORNERS[lo];
                    let cb = CORNERS[hi];
                    let axis = (0..3).find(|&d| ca[d] != cb[d]).unwrap() as u8;
                    // A sample exactly on the isolevel is itself the vertex;
                    // keying it by the sample keeps neighbouring cells consistent.
                    let key = if vals[lo] == 0.0 {
                        (idx[lo], 3)
                    } else if vals[hi] == 0.0 {
                        (idx[hi], 3)
                    } else {
                        (idx[lo], axis)
                    };
                    local[e] = *edge_vertex.entry(key).or_insert_with(|| {
                        let (va, vb) = (vals[lo], vals[hi]);
                        let t = va / (va - vb);
                        let pa = vol.grid_point(i + ca[0], j + ca[1], k + ca[2]);
                        let pb = vol.grid_point(i + cb[0], j + cb[1], k + cb[2]);
                        vertices.push(pa + (pb - pa) * t);
                        if let Some(c) = &vol.color {
                            let (x, y) = (c[idx[lo]], c[idx[hi]]);
                            colors.push([0, 1, 2].map(|d| x[d] + (y[d] - x[d]) * t));
                        }
                        vertices.len() - 1
                    });
                }
                for tri in TRIANGLE_TABLE[case].chunks(3) {
                    if tri[0] < 0 {
                        break;
                    }
                    let [a, b, c] = [tri[0], tri[1], tri[2]].map(|e| local[e as usize]);
                    triangles.push([a, c, b]);
                }
            }
        }
    }

    let mut mesh = TriangleMesh {
        vertices,
        triangles,
        colors: vol.color.as_ref().map(|_| colors),
    };
    mesh.cleanup();
    mesh
}
