//! Geometric success predicates over a world snapshot.

use super::SceneError;
use crate::math::{Aabb, Pose, Vec3};
use crate::recon::TriangleMesh;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Gripper width below which the gripper counts as closed (m).
pub const GRASP_WIDTH: f64 = 0.035;
/// Largest tool-to-object distance at which a closing gripper takes hold (m).
pub const GRASP_DISTANCE: f64 = 0.02;
/// Gripper width above which a held object is released (m).
pub const RELEASE_WIDTH: f64 = 0.038;

/// One or more instances; the predicate holds when at least `min_count` of
/// them satisfy it. A single id reads as `{ ids = [id], min_count = 1 }`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "SubjectRepr", into = "SubjectRepr")]
pub struct Subject {
    pub ids: Vec<String>,
    pub min_count: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum SubjectRepr {
    One(String),
    Many {
        ids: Vec<String>,
        #[serde(default = "one")]
        min_count: usize,
    },
}

fn one() -> usize {
    1
}

impl From<SubjectRepr> for Subject {
    fn from(r: SubjectRepr) -> Self {
        match r {
            SubjectRepr::One(id) => Subject::one(id),
            SubjectRepr::Many { ids, min_count } => Subject { ids, min_count },
        }
    }
}

impl From<Subject> for SubjectRepr {
    fn from(s: Subject) -> Self {
        if s.ids.len() == 1 && s.min_count == 1 {
            SubjectRepr::One(s.ids.into_iter().next().unwrap_or_default())
        } else {
            SubjectRepr::Many {
                ids: s.ids,
                min_count: s.min_count,
            }
        }
    }
}

impl Subject {
    pub fn one(id: impl Into<String>) -> Self {
        Self {
            ids: vec![id.into()],
            min_count: 1,
        }
    }

    /// Any one of `ids`.
    pub fn any<S: Into<String>>(ids: impl IntoIterator<Item = S>) -> Self {
        Self {
            ids: ids.into_iter().map(Into::into).collect(),
            min_count: 1,
        }
    }

    pub fn all<S: Into<String>>(ids: impl IntoIterator<Item = S>) -> Self {
        let ids: Vec<String> = ids.into_iter().map(Into::into).collect();
        let n = ids.len();
        Self { ids, min_count: n }
    }
}

/// Success predicate. Distances in meters, `overlap` a fraction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Predicate {
    /// Instance center inside an axis-aligned region of F0.
    InsideRegion { subject: Subject, min: [f64; 3], max: [f64; 3] },
    /// Bottom of `subject` within `gap` of the top of `support`, with at
    /// least `overlap` of its footprint over the support's footprint.
    OnTopOf {
        subject: Subject,
        support: String,
        #[serde(default = "default_overlap")]
        overlap: f64,
        #[serde(default = "default_gap")]
        gap: f64,
    },
    /// Centers within `distance`.
    Near { subject: Subject, other: String, distance: f64 },
    /// Bottom raised at least `height` above where it rested at episode start.
    Lifted { subject: Subject, height: f64 },
    /// Tool point within `distance` of the instance's bounding box.
    Reached { subject: Subject, distance: f64 },
    /// Gripper closed below [`GRASP_WIDTH`] with the tool point within
    /// [`GRASP_DISTANCE`] of the instance.
    Grasped { subject: Subject },
}

pub fn default_overlap() -> f64 {
    0.5
}

pub fn default_gap() -> f64 {
    0.02
}

fn positive(name: &str, v: f64, out: &mut Vec<String>) {
    if !(v > 0.0) || !v.is_finite() {
        out.push(format!("{name} must be positive, got {v}"));
    }
}

impl Predicate {
    pub fn subject(&self) -> &Subject {
        match self {
            Predicate::InsideRegion { subject, .. }
            | Predicate::OnTopOf { subject, .. }
            | Predicate::Near { subject, .. }
            | Predicate::Lifted { subject, .. }
            | Predicate::Reached { subject, .. }
            | Predicate::Grasped { subject } => subject,
        }
    }

    /// Every instance id the predicate refers to.
    pub fn instances(&self) -> Vec<&str> {
        let mut out: Vec<&str> = self.subject().ids.iter().map(String::as_str).collect();
        match self {
            Predicate::OnTopOf { support, .. } => out.push(support),
            Predicate::Near { other, .. } => out.push(other),
            _ => {}
        }
        out
    }

    /// Parameter problems, empty when valid.
    pub fn parameter_errors(&self) -> Vec<String> {
        let mut out = Vec::new();
        let s = self.subject();
        if s.ids.is_empty() {
            out.push("subject lists no instances".into());
        }
        if s.min_count == 0 || s.min_count > s.ids.len() {
            out.push(format!("min_count {} outside 1..={}", s.min_count, s.ids.len()));
        }
        match self {
            Predicate::InsideRegion { min, max, .. } => {
                if (0..3).any(|k| !(min[k] < max[k])) {
                    out.push("region min must be below max on every axis".into());
                }
            }
            Predicate::OnTopOf { overlap, gap, .. } => {
                if !(*overlap > 0.0 && *overlap <= 1.0) {
                    out.push(format!("overlap must be in (0, 1], got {overlap}"));
                }
                positive("gap", *gap, &mut out);
            }
            Predicate::Near { distance, .. } | Predicate::Reached { distance, .. } => {
                positive("distance", *distance, &mut out)
            }
            Predicate::Lifted { height, .. } => positive("height", *height, &mut out),
            Predicate::Grasped { .. } => {}
        }
        out
    }
}

/// Object-local collision shape of one instance.
#[derive(Debug, Clone, PartialEq)]
pub struct Shape {
    pub mesh: TriangleMesh,
}

impl Shape {
    pub fn world_bounds(&self, pose: &Pose) -> Aabb {
        let mut b = Aabb::empty();
        for v in &self.mesh.vertices {
            b.grow(&crate::math::transform_point(pose, v));
        }
        b
    }
}

/// Instance id to shape.
pub type Shapes = BTreeMap<String, Shape>;

/// Everything a predicate may look at.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldSnapshot {
    pub objects: BTreeMap<String, Pose>,
    /// Tool frame in F0.
    pub tool: Pose,
    pub gripper_width: f64,
    /// Bottom height of each instance at episode start.
    pub rest_bottom: BTreeMap<String, f64>,
}

impl WorldSnapshot {
    pub fn tool_point(&self) -> Vec3 {
        self.tool.translation.vector
    }
}

/// Reserved instance id naming the tool point, for robot-only rubrics.
pub const TOOL_INSTANCE: &str = "tool";

fn bounds(shapes: &Shapes, s: &WorldSnapshot, id: &str) -> Result<Aabb, SceneError> {
    if id == TOOL_INSTANCE {
        let p = s.tool_point();
        return Ok(Aabb::new(p, p));
    }
    let shape = shapes.get(id).ok_or_else(|| SceneError::UnknownInstance(id.into()))?;
    let pose = s.objects.get(id).ok_or_else(|| SceneError::UnknownInstance(id.into()))?;
    Ok(shape.world_bounds(pose))
}

fn xy_overlap(a: &Aabb, b: &Aabb) -> f64 {
    let w = (a.max.x.min(b.max.x) - a.min.x.max(b.min.x)).max(0.0);
    let h = (a.max.y.min(b.max.y) - a.min.y.max(b.min.y)).max(0.0);
    w * h
}

/// Evaluates `p` against a snapshot. Pure.
pub fn eval_predicate(shapes: &Shapes, s: &WorldSnapshot, p: &Predicate) -> Result<bool, SceneError> {
    let subject = p.subject();
    let mut hits = 0;
    for id in &subject.ids {
        let a = bounds(shapes, s, id)?;
        let ok = match p {
            Predicate::InsideRegion { min, max, .. } => {
                Aabb::new(Vec3::from(*min), Vec3::from(*max)).contains(&a.center())
            }
            Predicate::OnTopOf { support, overlap, gap, .. } => {
                let b = bounds(shapes, s, support)?;
                let area = (a.max.x - a.min.x) * (a.max.y - a.min.y);
                id != support && area > 0.0 && xy_overlap(&a, &b) / area >= *overlap && (a.min.z - b.max.z).abs() <= *gap
            }
            Predicate::Near { other, distance, .. } => {
                let b = bounds(shapes, s, other)?;
                (a.center() - b.center()).norm() <= *distance
            }
            Predicate::Lifted { height, .. } => {
                if id == TOOL_INSTANCE {
                    return Err(SceneError::UnknownInstance(format!("{id} has no rest height")));
                }
                let rest = s.rest_bottom.get(id).ok_or_else(|| SceneError::UnknownInstance(id.clone()))?;
                a.min.z - rest >= *height
            }
            Predicate::Reached { distance, .. } => a.distance_to(&s.tool_point()) <= *distance,
            Predicate::Grasped { .. } => s.gripper_width < GRASP_WIDTH && a.distance_to(&s.tool_point()) <= GRASP_DISTANCE,
        };
        hits += ok as usize;
    }
    Ok(hits >= subject.min_count)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::pose;

    fn world(z: f64) -> (Shapes, WorldSnapshot) {
        let cube = Shape {
            mesh: TriangleMesh::cuboid(Vec3::repeat(-0.02), Vec3::repeat(0.02)),
        };
        let plate = Shape {
            mesh: TriangleMesh::cuboid(Vec3::new(-0.1, -0.1, -0.01), Vec3::new(0.1, 0.1, 0.01)),
        };
        let shapes: Shapes = [("cube".to_string(), cube), ("plate".to_string(), plate)].into();
        let objects = [
            ("cube".to_string(), pose(Vec3::new(0.0, 0.0, z), Default::default())),
            ("plate".to_string(), pose(Vec3::new(0.0, 0.0, 0.01), Default::default())),
        ]
        .into();
        let snap = WorldSnapshot {
            objects,
            tool: pose(Vec3::new(0.0, 0.0, 0.5), Default::default()),
            gripper_width: 0.04,
            rest_bottom: [("cube".to_string(), 0.02), ("plate".to_string(), 0.0)].into(),
        };
        (shapes, snap)
    }

    #[test]
    fn stacking_respects_gap() {
        let p = Predicate::OnTopOf {
            subject: Subject::one("cube"),
            support: "plate".into(),
            overlap: 0.5,
            gap: 0.02,
        };
        let (shapes, resting) = world(0.04);
        assert!(eval_predicate(&shapes, &resting, &p).unwrap());
        let (shapes, hovering) = world(0.14);
        assert!(!eval_predicate(&shapes, &hovering, &p).unwrap());
        let lifted = Predicate::Lifted {
            subject: Subject::one("cube"),
            height: 0.05,
        };
        assert!(eval_predicate(&shapes, &hovering, &lifted).unwrap());
    }

    #[test]
    fn region_and_unknown_ids() {
        let (shapes, s) = world(0.04);
        let inside = Predicate::InsideRegion {
            subject: Subject::one("cube"),
            min: [-0.1, -0.1, 0.0],
            max: [0.1, 0.1, 0.1],
        };
        assert!(eval_predicate(&shapes, &s, &inside).unwrap());
        let ghost = Predicate::Grasped {
            subject: Subject::one("ghost"),
        };
        assert!(matches!(eval_predicate(&shapes, &s, &ghost), Err(SceneError::UnknownInstance(id)) if id == "ghost"));
    }

    #[test]
    fn subject_forms_round_trip() {
        let p = Predicate::Reached {
            subject: Subject::any(["a", "b"]),
            distance: 0.05,
        };
        let text = toml::to_string(&p).unwrap();
        assert_eq!(toml::from_str::<Predicate>(&text).unwrap(), p);
        let single: Predicate = toml::from_str("kind = \"grasped\"\nsubject = \"cube\"\n").unwrap();
        assert_eq!(single.subject(), &Subject::one("cube"));
        let bad = Predicate::Near {
            subject: Subject { ids: vec!["a".into()], min_count: 2 },
            other: "b".into(),
            distance: -1.0,
        };
        assert_eq!(bad.parameter_errors().len(), 2);
    }
}
