//! Splat and camera file formats.
//!
//! Native splat file (`PSPL1`), little-endian:
//!
//! ```text
//! magic      5 bytes  "PSPL1"
//! count      u64
//! label_len  u32, followed by label_len bytes of UTF-8 frame label
//! records    count x 14 f32:
//!            center(3) quaternion wxyz(4) s_u s_v color(3) opacity pad(=0)
//! ```

use super::{Camera, GaussianPrimitive, SplatScene};
use crate::math::{pose, Mat3, Rotation, Vec3};
use nalgebra::{Quaternion, UnitQuaternion};
use std::io::{BufRead, Read};

pub const MAGIC: &[u8; 5] = b"PSPL1";
const RECORD_FLOATS: usize = 14;

#[derive(Debug, thiserror::Error)]
pub enum SplatIoError {
    #[error("bad magic; not a PSPL1 file")]
    BadMagic,
    #[error("malformed header: {0}")]
    Header(String),
    #[error("record {index}: truncated")]
    Truncated { index: usize },
    #[error("record {index}: {reason}")]
    InvalidRecord { index: usize, reason: String },
    #[error("ply: {0}")]
    Ply(String),
    #[error("pose file line {line}: {reason}")]
    PoseLine { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub fn save_splats(scene: &SplatScene) -> Vec<u8> {
    let label = scene.frame_label.as_bytes();
    let mut out = Vec::with_capacity(17 + label.len() + scene.len() * RECORD_FLOATS * 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(scene.len() as u64).to_le_bytes());
    out.extend_from_slice(&(label.len() as u32).to_le_bytes());
    out.extend_from_slice(label);
    for p in &scene.primitives {
        let q = p.rotation.quaternion();
        let rec = [
            p.center.x, p.center.y, p.center.z, q.w, q.i, q.j, q.k, p.scale[0], p.scale[1], p.color[0], p.color[1],
            p.color[2], p.opacity, 0.0,
        ];
        for v in rec {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out
}

pub fn load_splats(bytes: &[u8]) -> Result<SplatScene, SplatIoError> {
    if bytes.len() < 5 || &bytes[..5] != MAGIC {
        return Err(SplatIoError::BadMagic);
    }
    let mut cur = &bytes[5..];
    let mut u64buf = [0u8; 8];
    cur.read_exact(&mut u64buf)
        .map_err(|_| SplatIoError::Header("missing record count".into()))?;
    let count = u64::from_le_bytes(u64buf) as usize;
    let mut u32buf = [0u8; 4];
    cur.read_exact(&mut u32buf)
        .map_err(|_| SplatIoError::Header("missing label length".into()))?;
    let label_len = u32::from_le_bytes(u32buf) as usize;
    if cur.len() < label_len {
        return Err(SplatIoError::Header("label truncated".into()));
    }
    let label = std::str::from_utf8(&cur[..label_len])
        .map_err(|_| SplatIoError::Header("label is not UTF-8".into()))?
        .to_string();
    cur = &cur[label_len..];
    let record_bytes = RECORD_FLOATS * 4;
    let available = cur.len() / record_bytes;
    if available < count {
        return Err(SplatIoError::Truncated { index: available });
    }
    let mut prims = Vec::with_capacity(count);
    for index in 0..count {
        let chunk = &cur[index * record_bytes..(index + 1) * record_bytes];
        let mut f = [0.0f64; RECORD_FLOATS];
        for (k, slot) in f.iter_mut().enumerate() {
            let v = f32::from_le_bytes(chunk[k * 4..k * 4 + 4].try_into().unwrap());
            if !v.is_finite() {
                return Err(SplatIoError::InvalidRecord {
                    index,
                    reason: format!("non-finite value in field {k}"),
                });
            }
            *slot = v as f64;
        }
        let quat = Quaternion::new(f[3], f[4], f[5], f[6]);
        if (quat.norm() - 1.0).abs() > 1e-6 {
            return Err(SplatIoError::InvalidRecord {
                index,
                reason: format!("quaternion norm {}", quat.norm()),
            });
        }
        let prim = GaussianPrimitive::new(
            Vec3::new(f[0], f[1], f[2]),
            UnitQuaternion::new_unchecked(quat),
            [f[7], f[8]],
            [f[9], f[10], f[11]],
            f[12],
        );
        prim.validate().map_err(|e| SplatIoError::InvalidRecord {
            index,
            reason: e.to_string(),
        })?;
        prims.push(prim);
    }
    Ok(SplatScene::from_primitives(label, prims))
}

pub fn read_splat_file(path: &std::path::Path) -> Result<SplatScene, SplatIoError> {
    load_splats(&std::fs::read(path)?)
}

pub fn write_splat_file(path: &std::path::Path, scene: &SplatScene) -> Result<(), SplatIoError> {
    std::fs::write(path, save_splats(scene))?;
    Ok(())
}

const SH_C0: f64 = 0.282_094_791_773_878_14;

#[derive(Debug, Clone, Copy, PartialEq)]
enum PlyScalar {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl PlyScalar {
    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "char" | "int8" => Self::I8,
            "uchar" | "uint8" => Self::U8,
            "short" | "int16" => Self::I16,
            "ushort" | "uint16" => Self::U16,
            "int" | "int32" => Self::I32,
            "uint" | "uint32" => Self::U32,
            "float" | "float32" => Self::F32,
            "double" | "float64" => Self::F64,
            _ => return None,
        })
    }

    fn size(self) -> usize {
        match self {
            Self::I8 | Self::U8 => 1,
            Self::I16 | Self::U16 => 2,
            Self::I32 | Self::U32 | Self::F32 => 4,
            Self::F64 => 8,
        }
    }

    fn read_le(self, b: &[u8]) -> f64 {
        match self {
            Self::I8 => b[0] as i8 as f64,
            Self::U8 => b[0] as f64,
            Self::I16 => i16::from_le_bytes([b[0], b[1]]) as f64,
            Self::U16 => u16::from_le_bytes([b[0], b[1]]) as f64,
            Self::I32 => i32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Self::U32 => u32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Self::F32 => f32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Self::F64 => f64::from_le_bytes(b[..8].try_into().unwrap()),
        }
    }
}

/// Imports the common point-cloud splat PLY layout (ASCII or binary
/// little-endian): `x y z`, `rot_0..3` (wxyz), log-space `scale_0/1`, logit
/// `opacity`, and either `f_dc_0..2` spherical-harmonic DC color or
/// `red green blue`. A third scale, if present, must be at most 1e-4 m.
pub fn import_ply(bytes: &[u8], frame_label: &str) -> Result<SplatScene, SplatIoError> {
    let err = |m: &str| SplatIoError::Ply(m.to_string());
    let header_end = find_subslice(bytes, b"end_header\n").ok_or_else(|| err("missing end_header"))?;
    let header = std::str::from_utf8(&bytes[..header_end]).map_err(|_| err("header is not UTF-8"))?;
    let body = &bytes[header_end + b"end_header\n".len()..];
    let mut lines = header.lines();
    if lines.next().map(str::trim) != Some("ply") {
        return Err(err("missing ply signature"));
    }
    let mut ascii = None;
    let mut vertex_count = None;
    let mut in_vertex = false;
    let mut props: Vec<(String, PlyScalar)> = Vec::new();
    for line in lines {
        let toks: Vec<&str> = line.split_whitespace().collect();
        match toks.as_slice() {
            ["format", "ascii", _] => ascii = Some(true),
            ["format", "binary_little_endian", _] => ascii = Some(false),
            ["format", other, _] => return Err(err(&format!("unsupported format {other}"))),
            ["element", "vertex", n] => {
                vertex_count = Some(n.parse::<usize>().map_err(|_| err("bad vertex count"))?);
                in_vertex = true;
            }
            ["element", ..] => {
                if vertex_count.is_none() {
                    return Err(err("vertex element must come first"));
                }
                in_vertex = false;
            }
            ["property", "list", ..] if in_vertex => return Err(err("list properties on vertices unsupported")),
            ["property", ty, name] if in_vertex => {
                let ty = PlyScalar::parse(ty).ok_or_else(|| err(&format!("unknown type {ty}")))?;
                props.push((name.to_string(), ty));
            }
            _ => {}
        }
    }
    let ascii = ascii.ok_or_else(|| err("missing format line"))?;
    let n = vertex_count.ok_or_else(|| err("missing vertex element"))?;
    let col = |name: &str| props.iter().position(|(p, _)| p == name);
    let need = |name: &str| col(name).ok_or_else(|| err(&format!("missing property {name}")));
    let (ix, iy, iz) = (need("x")?, need("y")?, need("z")?);
    let rot = [need("rot_0")?, need("rot_1")?, need("rot_2")?, need("rot_3")?];
    let scales = [need("scale_0")?, need("scale_1")?];
    let scale_2 = col("scale_2");
    let iop = need("opacity")?;
    let dc = match (col("f_dc_0"), col("f_dc_1"), col("f_dc_2")) {
        (Some(a), Some(b), Some(c)) => Some([a, b, c]),
        _ => None,
    };
    let rgb = match (col("red"), col("green"), col("blue")) {
        (Some(a), Some(b), Some(c)) => Some([a, b, c]),
        _ => None,
    };
    if dc.is_none() && rgb.is_none() {
        return Err(err("no color properties"));
    }

    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(n);
    if ascii {
        let text = std::str::from_utf8(body).map_err(|_| err("body is not UTF-8"))?;
        let mut it = text.lines().filter(|l| !l.trim().is_empty());
        for index in 0..n {
            let line = it.next().ok_or(SplatIoError::Truncated { index })?;
            let vals: Result<Vec<f64>, _> = line.split_whitespace().map(str::parse::<f64>).collect();
            let vals = vals.map_err(|_| SplatIoError::InvalidRecord {
                index,
                reason: "unparseable number".into(),
            })?;
            if vals.len() < props.len() {
                return Err(SplatIoError::Truncated { index });
            }
            rows.push(vals);
        }
    } else {
        let stride: usize = props.iter().map(|(_, t)| t.size()).sum();
        for index in 0..n {
            let start = index * stride;
            if body.len() < start + stride {
                return Err(SplatIoError::Truncated { index });
            }
            let mut off = start;
            let mut vals = Vec::with_capacity(props.len());
            for (_, ty) in &props {
                vals.push(ty.read_le(&body[off..]));
                off += ty.size();
            }
            rows.push(vals);
        }
    }

    let sigmoid = |x: f64| 1.0 / (1.0 + (-x).exp());
    let mut prims = Vec::with_capacity(n);
    for (index, r) in rows.iter().enumerate() {
        let bad = |reason: String| SplatIoError::InvalidRecord { index, reason };
        if r.iter().any(|v| !v.is_finite()) {
            return Err(bad("non-finite value".into()));
        }
        if let Some(i2) = scale_2 {
            let s2 = r[i2].exp();
            if s2 > 1e-4 {
                return Err(bad(format!("third scale {s2} exceeds 1e-4 m; not a planar splat")));
            }
        }
        let q = Quaternion::new(r[rot[0]], r[rot[1]], r[rot[2]], r[rot[3]]);
        if q.norm() < 1e-12 {
            return Err(bad("zero quaternion".into()));
        }
        let color = if let Some(dc) = dc {
            [0, 1, 2].map(|k| (0.5 + SH_C0 * r[dc[k]]).clamp(0.0, 1.0))
        } else {
            let rgb = rgb.unwrap();
            let scale = if props[rgb[0]].1 == PlyScalar::U8 { 255.0 } else { 1.0 };
            [0, 1, 2].map(|k| (r[rgb[k]] / scale).clamp(0.0, 1.0))
        };
        let prim = GaussianPrimitive::new(
            Vec3::new(r[ix], r[iy], r[iz]),
            UnitQuaternion::from_quaternion(q),
            [r[scales[0]].exp(), r[scales[1]].exp()],
            color,
            sigmoid(r[iop]),
        );
        prim.validate().map_err(|e| bad(e.to_string()))?;
        prims.push(prim);
    }
    Ok(SplatScene::from_primitives(frame_label, prims))
}

fn find_subslice(hay: &[u8], needle: &[u8]) -> Option<usize> {
    hay.windows(needle.len()).position(|w| w == needle)
}

/// Parses a camera pose file: one camera per line,
/// `id  16 × row-major pose  fx fy cx cy  W H`. `#` starts a comment.
pub fn parse_pose_file(text: &str) -> Result<Vec<(String, Camera)>, SplatIoError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.split('#').next().unwrap().trim();
        if line.is_empty() {
            continue;
        }
        let toks: Vec<&str> = line.split_whitespace().collect();
        let bad = |reason: String| SplatIoError::PoseLine { line: line_no, reason };
        if toks.len() != 23 {
            return Err(bad(format!("expected 23 fields, found {}", toks.len())));
        }
        let nums: Result<Vec<f64>, _> = toks[1..21].iter().map(|t| t.parse::<f64>()).collect();
        let nums = nums.map_err(|_| bad("unparseable number".into()))?;
        let w: u32 = toks[21].parse().map_err(|_| bad("bad width".into()))?;
        let h: u32 = toks[22].parse().map_err(|_| bad("bad height".into()))?;
        let m = Mat3::new(nums[0], nums[1], nums[2], nums[4], nums[5], nums[6], nums[8], nums[9], nums[10]);
        let t = Vec3::new(nums[3], nums[7], nums[11]);
        if (m.transpose() * m - Mat3::identity()).amax() > 1e-6 || m.determinant() < 0.0 {
            return Err(bad("rotation block is not orthonormal".into()));
        }
        let rot = Rotation::from_matrix(&m);
        let cam = Camera::new(pose(t, rot), nums[16], nums[17], nums[18], nums[19], w, h);
        cam.validate().map_err(|e| bad(e.to_string()))?;
        out.push((toks[0].to_string(), cam));
    }
    Ok(out)
}

pub fn format_pose_file(cams: &[(String, Camera)]) -> String {
    let mut s = String::from("# id  pose(4x4 row-major, world<-camera)  fx fy cx cy  W H\n");
    for (id, cam) in cams {
        let m = cam.pose.to_homogeneous();
        s.push_str(id);
        for r in 0..4 {
            for c in 0..4 {
                s.push_str(&format!(" {:.17e}", m[(r, c)]));
            }
        }
        s.push_str(&format!(
            " {:.17e} {:.17e} {:.17e} {:.17e} {} {}\n",
            cam.fx, cam.fy, cam.cx, cam.cy, cam.width, cam.height
        ));
    }
    s
}

/// Reads `frame_id x y z` lines (board-frame camera centers).
pub fn parse_point_file(reader: impl BufRead) -> Result<Vec<(String, Vec3)>, SplatIoError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let line = line.split('#').next().unwrap().trim().to_string();
        if line.is_empty() {
            continue;
        }
        let toks: Vec<&str> = line.split_whitespace().collect();
        let bad = |reason: &str| SplatIoError::PoseLine {
            line: i + 1,
            reason: reason.to_string(),
        };
        if toks.len() != 4 {
            return Err(bad("expected `frame_id x y z`"));
        }
        let v: Result<Vec<f64>, _> = toks[1..].iter().map(|t| t.parse::<f64>()).collect();
        let v = v.map_err(|_| bad("unparseable coordinate"))?;
        out.push((toks[0].to_string(), Vec3::new(v[0], v[1], v[2])));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::quat_from_components;

    fn sample_scene() -> SplatScene {
        let prims = (0..5)
            .map(|i| {
                let f = i as f64;
                let q = quat_from_components([1.0, 0.1 * f, -0.2, 0.05 * f]);
                // round to f32 so the round trip is exact
                let q = UnitQuaternion::new_unchecked(Quaternion::new(
                    q.w as f32 as f64,
                    q.i as f32 as f64,
                    q.j as f32 as f64,
                    q.k as f32 as f64,
                ));
                GaussianPrimitive::new(Vec3::new(f, -f, 0.5), q, [0.25, 0.5], [0.25, 0.5, 0.75], 0.5)
            })
            .collect();
        SplatScene::from_primitives("F0", prims)
    }

    #[test]
    fn empty_scene_round_trip() {
        let scene = SplatScene::new("recon");
        let bytes = save_splats(&scene);
        assert_eq!(&bytes[5..13], &0u64.to_le_bytes());
        assert_eq!(load_splats(&bytes).unwrap(), scene);
    }

    #[test]
    fn rejects_out_of_range_opacity_with_index() {
        let mut scene = sample_scene();
        scene.primitives[3].opacity = 1.5;
        let err = load_splats(&save_splats(&scene)).unwrap_err();
        assert!(matches!(err, SplatIoError::InvalidRecord { index: 3, .. }), "{err}");
        assert!(err.to_string().contains("record 3"));
    }

    #[test]
    fn rejects_truncation_and_bad_magic() {
        let bytes = save_splats(&sample_scene());
        let err = load_splats(&bytes[..bytes.len() - 10]).unwrap_err();
        assert!(matches!(err, SplatIoError::Truncated { index: 4 }));
        assert!(matches!(load_splats(b"PSPL2xxxx"), Err(SplatIoError::BadMagic)));
        assert!(matches!(load_splats(&bytes[..9]), Err(SplatIoError::Header(_))));
    }

    #[test]
    fn rejects_nonfinite() {
        let mut bytes = save_splats(&sample_scene());
        let header = 5 + 8 + 4 + 2;
        let off = header + 14 * 4 + 4;
        bytes[off..off + 4].copy_from_slice(&f32::NAN.to_le_bytes());
        let err = load_splats(&bytes).unwrap_err();
        assert!(matches!(err, SplatIoError::InvalidRecord { index: 1, .. }));
    }

    #[test]
    fn ply_ascii_import() {
        let ply = "ply\nformat ascii 1.0\nelement vertex 2\nproperty float x\nproperty float y\nproperty float z\n\
property float f_dc_0\nproperty float f_dc_1\nproperty float f_dc_2\nproperty float opacity\n\
property float scale_0\nproperty float scale_1\nproperty float scale_2\nproperty float rot_0\nproperty float rot_1\n\
property float rot_2\nproperty float rot_3\nend_header\n\
0 0 1 0 0 0 0 -3 -4 -12 1 0 0 0\n1 2 3 1 -1 0 2 -2 -2 -10 0 0 0 2\n";
        let scene = import_ply(ply.as_bytes(), "recon").unwrap();
        assert_eq!(scene.len(), 2);
        let p = &scene.primitives[0];
        assert!((p.opacity - 0.5).abs() < 1e-12);
        assert!((p.color[0] - 0.5).abs() < 1e-12);
        assert!((p.scale[0] - (-3.0f64).exp()).abs() < 1e-12);
        let q = &scene.primitives[1];
        assert!((q.rotation.angle() - std::f64::consts::PI).abs() < 1e-9);

        let thick = ply.replace("-12 1 0 0 0", "-2 1 0 0 0");
        let err = import_ply(thick.as_bytes(), "recon").unwrap_err();
        assert!(matches!(err, SplatIoError::InvalidRecord { index: 0, .. }));
    }

    #[test]
    fn ply_binary_import() {
        let mut bytes = b"ply\nformat binary_little_endian 1.0\nelement vertex 1\nproperty float x\nproperty float y\n\
property float z\nproperty uchar red\nproperty uchar green\nproperty uchar blue\nproperty float opacity\n\
property float scale_0\nproperty float scale_1\nproperty float rot_0\nproperty float rot_1\nproperty float rot_2\n\
property float rot_3\nend_header\n"
            .to_vec();
        for v in [1.0f32, 2.0, 3.0] {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        bytes.extend_from_slice(&[255, 0, 51]);
        for v in [0.0f32, -3.0, -3.0, 1.0, 0.0, 0.0, 0.0] {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        let scene = import_ply(&bytes, "recon").unwrap();
        assert_eq!(scene.primitives[0].color, [1.0, 0.0, 0.2]);
        let err = import_ply(&bytes[..bytes.len() - 3], "recon").unwrap_err();
        assert!(matches!(err, SplatIoError::Truncated { index: 0 }));
    }

    #[test]
    fn pose_file_round_trip() {
        let cam = Camera::looking_at(Vec3::new(0.3, 0.2, 1.0), Vec3::zeros(), Vec3::z(), 1.0, 64, 48);
        let text = format_pose_file(&[("c0".into(), cam)]);
        let parsed = parse_pose_file(&text).unwrap();
        assert_eq!(parsed[0].0, "c0");
        let back = parsed[0].1;
        assert!((back.pose.translation.vector - cam.pose.translation.vector).norm() < 1e-12);
        assert!(back.pose.rotation.angle_to(&cam.pose.rotation) < 1e-9);
        assert!(parse_pose_file("c0 1 2 3").is_err());
    }

    #[test]
    fn point_file() {
        let pts = parse_point_file("# header\nf1 0 1 2\nf2 3 4 5\n".as_bytes()).unwrap();
        assert_eq!(pts.len(), 2);
        assert_eq!(pts[1].1, Vec3::new(3.0, 4.0, 5.0));
        assert!(parse_point_file("f1 0 1\n".as_bytes()).is_err());
    }
}
