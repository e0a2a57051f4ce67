//! Kinematic tree parsed from a robot-description XML subset.
//!
//! Supported elements: `robot`, `link` (with `collision` → `origin`,
//! `geometry` → `box | sphere | cylinder | capsule | mesh`), and `joint`
//! (`parent`, `child`, `origin`, `axis`, `limit`). Joint types are
//! `revolute`, `continuous`, `prismatic` and `fixed`.

use super::ArticulationError;
use crate::math::{pose, rotation_from_rpy, Pose, Rotation, Vec3};
use nalgebra::{Translation3, Unit};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashMap};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JointKind {
    Revolute,
    /// Revolute without limits.
    Continuous,
    Prismatic,
    Fixed,
}

impl JointKind {
    pub fn is_movable(self) -> bool {
        self != JointKind::Fixed
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Limits {
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Geometry {
    Sphere { radius: f64 },
    /// Full edge lengths.
    Box { size: Vec3 },
    /// Along the local z axis, centered at the origin.
    Cylinder { radius: f64, length: f64 },
    Capsule { radius: f64, length: f64 },
    /// Relative path of a mesh file; distances use the loaded mesh.
    Mesh { filename: String },
}

impl Geometry {
    /// Signed distance in the geometry's own frame; `None` for meshes.
    pub fn signed_distance(&self, p: &Vec3) -> Option<f64> {
        Some(match self {
            Geometry::Sphere { radius } => p.norm() - radius,
            Geometry::Box { size } => {
                let q = p.abs() - size / 2.0;
                q.map(|c| c.max(0.0)).norm() + q.max().min(0.0)
            }
            Geometry::Cylinder { radius, length } => {
                let dr = (p.x * p.x + p.y * p.y).sqrt() - radius;
                let dz = p.z.abs() - length / 2.0;
                let outside = (dr.max(0.0).powi(2) + dz.max(0.0).powi(2)).sqrt();
                outside + dr.max(dz).min(0.0)
            }
            Geometry::Capsule { radius, length } => {
                let z = p.z.clamp(-length / 2.0, length / 2.0);
                (p - Vec3::new(0.0, 0.0, z)).norm() - radius
            }
            Geometry::Mesh { .. } => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Collision {
    pub origin: Pose,
    pub geometry: Geometry,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Link {
    pub name: String,
    pub collisions: Vec<Collision>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Joint {
    pub name: String,
    pub kind: JointKind,
    pub parent: usize,
    pub child: usize,
    pub origin: Pose,
    pub axis: Vec3,
    pub limits: Option<Limits>,
}

impl Joint {
    /// Motion of the child relative to the joint frame for value `v`.
    pub fn motion(&self, v: f64) -> Pose {
        match self.kind {
            JointKind::Revolute | JointKind::Continuous => {
                Pose::from_parts(Translation3::identity(), Rotation::from_axis_angle(&Unit::new_unchecked(self.axis), v))
            }
            JointKind::Prismatic => Pose::from_parts(Translation3::from(self.axis * v), Rotation::identity()),
            JointKind::Fixed => Pose::identity(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KinematicModel {
    pub name: String,
    pub links: Vec<Link>,
    pub joints: Vec<Joint>,
    pub root: usize,
    /// Joint indices in parent-before-child order.
    order: Vec<usize>,
    /// Indices of movable joints in document order; position `i` holds the
    /// joint driven by `q[i]`.
    movable: Vec<usize>,
}

const AXIS_TOLERANCE: f64 = 1e-6;

fn attr<'a>(node: roxmltree::Node<'a, '_>, name: &str, path: &str) -> Result<&'a str, ArticulationError> {
    node.attribute(name).ok_or_else(|| ArticulationError::Parse {
        path: path.to_string(),
        reason: format!("missing attribute `{name}`"),
    })
}

fn parse_floats(s: &str, n: usize, path: &str) -> Result<Vec<f64>, ArticulationError> {
    let vals: Result<Vec<f64>, _> = s.split_whitespace().map(str::parse).collect();
    match vals {
        Ok(v) if v.len() == n && v.iter().all(|x: &f64| x.is_finite()) => Ok(v),
        _ => Err(ArticulationError::Parse {
            path: path.to_string(),
            reason: format!("expected {n} finite numbers, found `{s}`"),
        }),
    }
}

fn parse_float(s: &str, path: &str) -> Result<f64, ArticulationError> {
    Ok(parse_floats(s, 1, path)?[0])
}

fn parse_origin(node: roxmltree::Node, path: &str) -> Result<Pose, ArticulationError> {
    let Some(o) = node.children().find(|c| c.has_tag_name("origin")) else {
        return Ok(Pose::identity());
    };
    let path = format!("{path}/origin");
    let xyz = match o.attribute("xyz") {
        Some(s) => parse_floats(s, 3, &path)?,
        None => vec![0.0; 3],
    };
    let rpy = match o.attribute("rpy") {
        Some(s) => parse_floats(s, 3, &path)?,
        None => vec![0.0; 3],
    };
    Ok(pose(Vec3::new(xyz[0], xyz[1], xyz[2]), rotation_from_rpy(rpy[0], rpy[1], rpy[2])))
}

fn parse_geometry(node: roxmltree::Node, path: &str) -> Result<Geometry, ArticulationError> {
    let bad = |reason: &str| ArticulationError::Parse {
        path: path.to_string(),
        reason: reason.to_string(),
    };
    let g = node
        .children()
        .find(|c| c.is_element())
        .ok_or_else(|| bad("empty geometry"))?;
    let gpath = format!("{path}/{}", g.tag_name().name());
    let positive = |v: f64| if v > 0.0 { Ok(v) } else { Err(bad("dimensions must be positive")) };
    Ok(match g.tag_name().name() {
        "sphere" => Geometry::Sphere {
            radius: positive(parse_float(attr(g, "radius", &gpath)?, &gpath)?)?,
        },
        "box" => {
            let s = parse_floats(attr(g, "size", &gpath)?, 3, &gpath)?;
            for v in &s {
                positive(*v)?;
            }
            Geometry::Box {
                size: Vec3::new(s[0], s[1], s[2]),
            }
        }
        kind @ ("cylinder" | "capsule") => {
            let radius = positive(parse_float(attr(g, "radius", &gpath)?, &gpath)?)?;
            let length = positive(parse_float(attr(g, "length", &gpath)?, &gpath)?)?;
            if kind == "cylinder" {
                Geometry::Cylinder { radius, length }
            } else {
                Geometry::Capsule { radius, length }
            }
        }
        "mesh" => Geometry::Mesh {
            filename: attr(g, "filename", &gpath)?.to_string(),
        },
        other => return Err(bad(&format!("unsupported geometry `{other}`"))),
    })
}

/// Parses and validates a robot description.
pub fn parse_robot_model(descriptor: &[u8]) -> Result<KinematicModel, ArticulationError> {
    let text = std::str::from_utf8(descriptor).map_err(|_| ArticulationError::Parse {
        path: "/".into(),
        reason: "not UTF-8".into(),
    })?;
    let doc = roxmltree::Document::parse(text).map_err(|e| ArticulationError::Parse {
        path: "/".into(),
        reason: e.to_string(),
    })?;
    let robot = doc.root_element();
    if !robot.has_tag_name("robot") {
        return Err(ArticulationError::Parse {
            path: format!("/{}", robot.tag_name().name()),
            reason: "root element must be <robot>".into(),
        });
    }
    let name = robot.attribute("name").unwrap_or("robot").to_string();

    let mut links = Vec::new();
    let mut link_index: HashMap<String, usize> = HashMap::new();
    for node in robot.children().filter(|c| c.has_tag_name("link")) {
        let lname = attr(node, "name", "/robot/link")?;
        let path = format!("/robot/link[@name='{lname}']");
        if link_index.insert(lname.to_string(), links.len()).is_some() {
            return Err(ArticulationError::DuplicateName {
                path,
                name: lname.into(),
            });
        }
        let mut collisions = Vec::new();
        for (ci, c) in node.children().filter(|c| c.has_tag_name("collision")).enumerate() {
            let cpath = format!("{path}/collision[{ci}]");
            let geom = c.children().find(|g| g.has_tag_name("geometry")).ok_or_else(|| ArticulationError::Parse {
                path: cpath.clone(),
                reason: "missing <geometry>".into(),
            })?;
            collisions.push(Collision {
                origin: parse_origin(c, &cpath)?,
                geometry: parse_geometry(geom, &format!("{cpath}/geometry"))?,
            });
        }
        links.push(Link {
            name: lname.to_string(),
            collisions,
        });
    }

    let mut joints = Vec::new();
    let mut joint_names: HashMap<String, ()> = HashMap::new();
    for node in robot.children().filter(|c| c.has_tag_name("joint")) {
        let jname = attr(node, "name", "/robot/joint")?;
        let path = format!("/robot/joint[@name='{jname}']");
        if joint_names.insert(jname.to_string(), ()).is_some() {
            return Err(ArticulationError::DuplicateName {
                path,
                name: jname.into(),
            });
        }
        let kind = match attr(node, "type", &path)? {
            "revolute" => JointKind::Revolute,
            "continuous" => JointKind::Continuous,
            "prismatic" => JointKind::Prismatic,
            "fixed" => JointKind::Fixed,
            other => {
                return Err(ArticulationError::Parse {
                    path,
                    reason: format!("unsupported joint type `{other}`"),
                })
            }
        };
        let link_ref = |tag: &str| -> Result<usize, ArticulationError> {
            let p = format!("{path}/{tag}");
            let n = node.children().find(|c| c.has_tag_name(tag)).ok_or_else(|| ArticulationError::Parse {
                path: p.clone(),
                reason: "missing element".into(),
            })?;
            let l = attr(n, "link", &p)?;
            link_index.get(l).copied().ok_or_else(|| ArticulationError::UnknownLink {
                path: p,
                name: l.into(),
            })
        };
        let parent = link_ref("parent")?;
        let child = link_ref("child")?;
        let axis = match node.children().find(|c| c.has_tag_name("axis")) {
            Some(a) => {
                let apath = format!("{path}/axis");
                let v = parse_floats(attr(a, "xyz", &apath)?, 3, &apath)?;
                let v = Vec3::new(v[0], v[1], v[2]);
                if kind.is_movable() && (v.norm() - 1.0).abs() > AXIS_TOLERANCE {
                    return Err(ArticulationError::NonUnitAxis { path: apath, norm: v.norm() });
                }
                if kind.is_movable() {
                    v.normalize()
                } else {
                    v
                }
            }
            None => Vec3::x(),
        };
        let limits = match node.children().find(|c| c.has_tag_name("limit")) {
            Some(l) if kind != JointKind::Continuous && kind != JointKind::Fixed => {
                let lpath = format!("{path}/limit");
                let lower = parse_float(attr(l, "lower", &lpath)?, &lpath)?;
                let upper = parse_float(attr(l, "upper", &lpath)?, &lpath)?;
                if lower > upper {
                    return Err(ArticulationError::Parse {
                        path: lpath,
                        reason: "lower limit exceeds upper".into(),
                    });
                }
                Some(Limits { lower, upper })
            }
            _ => None,
        };
        if matches!(kind, JointKind::Revolute | JointKind::Prismatic) && limits.is_none() {
            return Err(ArticulationError::Parse {
                path: format!("{path}/limit"),
                reason: "revolute and prismatic joints need limits".into(),
            });
        }
        joints.push(Joint {
            name: jname.to_string(),
            kind,
            parent,
            child,
            origin: parse_origin(node, &path)?,
            axis,
            limits,
        });
    }

    validate_tree(&links, &joints).map(|(root, order)| {
        let movable = (0..joints.len()).filter(|&j| joints[j].kind.is_movable()).collect();
        KinematicModel {
            name,
            links,
            joints,
            root,
            order,
            movable,
        }
    })
}

/// Checks the joint graph is a tree and returns its root and a
/// parent-before-child joint order.
fn validate_tree(links: &[Link], joints: &[Joint]) -> Result<(usize, Vec<usize>), ArticulationError> {
    if links.is_empty() {
        return Err(ArticulationError::MissingRoot);
    }
    let mut parent_joint: Vec<Option<usize>> = vec![None; links.len()];
    for (j, joint) in joints.iter().enumerate() {
        if let Some(prev) = parent_joint[joint.child] {
            return Err(ArticulationError::MultipleParents {
                link: links[joint.child].name.clone(),
                joints: vec![joints[prev].name.clone(), joint.name.clone()],
            });
        }
        parent_joint[joint.child] = Some(j);
    }
    // Walking parent pointers from every link either reaches a root or loops.
    for start in 0..links.len() {
        let mut seen = vec![false; links.len()];
        let mut chain = Vec::new();
        let mut cur = start;
        while let Some(j) = parent_joint[cur] {
            if seen[cur] {
                let pos = chain.iter().position(|&(l, _)| l == cur).unwrap_or(0);
                let mut names: Vec<String> = chain[pos..].iter().map(|&(_, j): &(usize, usize)| joints[j].name.clone()).collect();
                names.sort();
                return Err(ArticulationError::Cycle { joints: names });
            }
            seen[cur] = true;
            chain.push((cur, j));
            cur = joints[j].parent;
        }
    }
    let roots: Vec<usize> = (0..links.len()).filter(|&l| parent_joint[l].is_none()).collect();
    let root = match roots.as_slice() {
        [] => return Err(ArticulationError::MissingRoot),
        [r] => *r,
        many => {
            return Err(ArticulationError::MultipleRoots(
                many.iter().map(|&l| links[l].name.clone()).collect(),
            ))
        }
    };
    let mut order = Vec::with_capacity(joints.len());
    let mut frontier = vec![root];
    while let Some(l) = frontier.pop() {
        for (j, joint) in joints.iter().enumerate().filter(|(_, jt)| jt.parent == l) {
            order.push(j);
            frontier.push(joint.child);
        }
    }
    Ok((root, order))
}

/// Joint values `q`, one per movable joint in document order.
pub type JointConfig = Vec<f64>;

impl KinematicModel {
    /// Number of movable joints.
    pub fn dof(&self) -> usize {
        self.movable.len()
    }

    pub fn link_index(&self, name: &str) -> Option<usize> {
        self.links.iter().position(|l| l.name == name)
    }

    pub fn joint_index(&self, name: &str) -> Option<usize> {
        self.joints.iter().position(|j| j.name == name)
    }

    /// Position of a movable joint within `q`.
    pub fn dof_index(&self, joint_name: &str) -> Option<usize> {
        self.movable.iter().position(|&j| self.joints[j].name == joint_name)
    }

    pub fn movable_joints(&self) -> impl Iterator<Item = &Joint> {
        self.movable.iter().map(|&j| &self.joints[j])
    }

    /// Limits per movable joint; unbounded joints report ±∞.
    pub fn limits(&self) -> Vec<Limits> {
        self.movable_joints()
            .map(|j| {
                j.limits.unwrap_or(Limits {
                    lower: f64::NEG_INFINITY,
                    upper: f64::INFINITY,
                })
            })
            .collect()
    }

    /// Clamps `q` to the joint limits, logging each violation.
    pub fn clamp(&self, q: &[f64]) -> JointConfig {
        q.iter()
            .zip(self.movable_joints())
            .map(|(&v, j)| match j.limits {
                Some(l) if v < l.lower || v > l.upper => {
                    log::warn!("joint `{}` value {v} outside [{}, {}], clamped", j.name, l.lower, l.upper);
                    v.clamp(l.lower, l.upper)
                }
                _ => v,
            })
            .collect()
    }

    /// Link transforms in the model frame, indexed like `links`.
    pub fn link_poses(&self, q: &[f64]) -> Result<Vec<Pose>, ArticulationError> {
        if q.len() != self.dof() {
            return Err(ArticulationError::LengthMismatch {
                expected: self.dof(),
                got: q.len(),
            });
        }
        let q = self.clamp(q);
        let mut value = vec![0.0; self.joints.len()];
        for (i, &j) in self.movable.iter().enumerate() {
            value[j] = q[i];
        }
        let mut poses = vec![Pose::identity(); self.links.len()];
        for &j in &self.order {
            let joint = &self.joints[j];
            poses[joint.child] = poses[joint.parent] * joint.origin * joint.motion(value[j]);
        }
        Ok(poses)
    }
}

/// Link name → transform in the model frame.
pub fn forward_kinematics(model: &KinematicModel, q: &[f64]) -> Result<BTreeMap<String, Pose>, ArticulationError> {
    let poses = model.link_poses(q)?;
    Ok(model.links.iter().map(|l| l.name.clone()).zip(poses).collect())
}
