//! Deterministic synthetic fixtures used by tests, examples and the CLI demo.

use crate::articulation::{assign_splats_to_links, parse_robot_model, Geometry, KinematicModel, DEFAULT_CUTOFF};
use crate::math::{pose, Rotation, Vec3};
use crate::recon::{render_views, TriangleMesh, View};
use crate::scene::{
    compose, Background, ComposedScene, NamedCamera, ObjectAsset, Placement, Predicate, Randomization, RobotPlacement,
    Rubric, RubricStep, SceneParts, Subject, ToolFrame, WristCamera,
};
use crate::splat::{Camera, GaussianPrimitive, RenderConfig, SplatScene, CANONICAL_FRAME};
use nalgebra::Unit;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;

/// Rotation taking the local z axis onto `normal`.
pub fn rotation_with_normal(normal: &Vec3) -> Rotation {
    let n = normal.normalize();
    Rotation::rotation_between(&Vec3::z(), &n).unwrap_or_else(|| {
        // antiparallel: flip about x
        Rotation::from_axis_angle(&Unit::new_normalize(Vec3::x()), std::f64::consts::PI)
    })
}

/// A 4×5 checkerboard of splats near the `z = 0` plane, 0.1 m pitch.
///
/// Each disk sits on its own 1 mm relief level so overlapping disks never
/// share a depth; otherwise their compositing order would hinge on ties.
pub fn textured_plane() -> SplatScene {
    let mut prims = Vec::with_capacity(20);
    for j in 0..4 {
        for i in 0..5 {
            let x = (i as f64 - 2.0) * 0.1;
            let y = (j as f64 - 1.5) * 0.1;
            let hue = (i + 2 * j) % 3;
            let mut color = [0.15; 3];
            color[hue] = 0.85;
            if (i + j) % 2 == 0 {
                color = color.map(|c| c * 0.6);
            }
            prims.push(GaussianPrimitive::new(
                Vec3::new(x, y, 0.001 * ((i % 4) + 4 * j) as f64),
                Rotation::identity(),
                [0.045, 0.045],
                color,
                0.95,
            ));
        }
    }
    SplatScene::from_primitives(CANONICAL_FRAME, prims)
}

/// Eight cameras on a ring above the plane fixture.
pub fn plane_cameras(width: u32, height: u32) -> Vec<Camera> {
    (0..8)
        .map(|k| {
            let a = k as f64 * std::f64::consts::TAU / 8.0;
            let eye = Vec3::new(0.35 * a.cos(), 0.35 * a.sin(), 0.7);
            Camera::looking_at(eye, Vec3::zeros(), Vec3::z(), 60f64.to_radians(), width, height)
        })
        .collect()
}

/// Textured-plane reconstruction problem: target views rendered from
/// [`textured_plane`] and a perturbed starting scene with the same count.
pub struct PlaneFixture {
    pub truth: SplatScene,
    pub init: SplatScene,
    pub views: Vec<View>,
}

pub fn plane_fixture(seed: u64) -> PlaneFixture {
    let truth = textured_plane();
    let cams = plane_cameras(48, 36);
    let views = render_views(&truth, &cams, &RenderConfig::default()).expect("fixture cameras are valid");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let init = truth
        .primitives
        .iter()
        .map(|p| {
            let jitter = Vec3::new(rng.gen_range(-0.02..0.02), rng.gen_range(-0.02..0.02), rng.gen_range(-0.01..0.01));
            let tilt = Rotation::from_euler_angles(rng.gen_range(-0.2..0.2), rng.gen_range(-0.2..0.2), 0.0);
            GaussianPrimitive::new(p.center + jitter, tilt, [0.035, 0.035], [0.5, 0.5, 0.5], 0.6)
        })
        .collect();
    PlaneFixture {
        init: SplatScene::from_primitives(CANONICAL_FRAME, init),
        truth,
        views,
    }
}

/// Splats tangent to a sphere, on a Fibonacci lattice.
pub fn splat_sphere(center: Vec3, radius: f64, count: usize, color: [f64; 3]) -> SplatScene {
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    // disk spacing on the lattice is about sqrt(4πr²/n)
    let spacing = (4.0 * std::f64::consts::PI * radius * radius / count as f64).sqrt();
    let prims = (0..count)
        .map(|i| {
            let z = 1.0 - 2.0 * (i as f64 + 0.5) / count as f64;
            let r = (1.0 - z * z).sqrt();
            let phi = golden * i as f64;
            let n = Vec3::new(r * phi.cos(), r * phi.sin(), z);
            GaussianPrimitive::new(
                center + n * radius,
                rotation_with_normal(&n),
                [0.6 * spacing, 0.6 * spacing],
                color,
                0.98,
            )
        })
        .collect();
    SplatScene::from_primitives(CANONICAL_FRAME, prims)
}

/// Cameras on a ring around `target`, alternating above and below it.
pub fn orbit_cameras(target: Vec3, distance: f64, count: usize, width: u32, height: u32, hfov: f64) -> Vec<Camera> {
    (0..count)
        .map(|k| {
            let a = k as f64 * std::f64::consts::TAU / count as f64;
            let elev: f64 = if k % 2 == 0 { 0.5 } else { -0.4 };
            let dir = Vec3::new(a.cos() * elev.cos(), a.sin() * elev.cos(), elev.sin());
            Camera::looking_at(target + dir * distance, target, Vec3::z(), hfov, width, height)
        })
        .collect()
}

/// A 7-DoF arm with a one-finger parallel gripper (8 movable joints).
///
/// The gripper opening equals the `finger_joint` value in meters.
pub const ROBOT_URDF: &str = r#"<?xml version="1.0"?>
<robot name="synthetic_arm">
  <link name="base_link">
    <collision><origin xyz="0 0 0.05"/><geometry><box size="0.14 0.14 0.1"/></geometry></collision>
  </link>
  <link name="link1">
    <collision><origin xyz="0 0 0.06"/><geometry><cylinder radius="0.045" length="0.1"/></geometry></collision>
  </link>
  <link name="link2">
    <collision><origin xyz="0 0 0.16"/><geometry><box size="0.06 0.06 0.24"/></geometry></collision>
  </link>
  <link name="link3">
    <collision><origin xyz="0 0 0.05"/><geometry><cylinder radius="0.04" length="0.07"/></geometry></collision>
  </link>
  <link name="link4">
    <collision><origin xyz="0 0 0.13"/><geometry><box size="0.05 0.05 0.19"/></geometry></collision>
  </link>
  <link name="link5">
    <collision><origin xyz="0 0 0.04"/><geometry><cylinder radius="0.03" length="0.05"/></geometry></collision>
  </link>
  <link name="link6">
    <collision><origin xyz="0 0 0.035"/><geometry><box size="0.05 0.05 0.035"/></geometry></collision>
  </link>
  <link name="hand">
    <collision><origin xyz="0 0 0.015"/><geometry><box size="0.04 0.12 0.02"/></geometry></collision>
  </link>
  <link name="finger_left">
    <collision><origin xyz="0 0.005 0.03"/><geometry><box size="0.02 0.01 0.05"/></geometry></collision>
  </link>
  <link name="finger_right">
    <collision><origin xyz="0 -0.005 0.03"/><geometry><box size="0.02 0.01 0.05"/></geometry></collision>
  </link>
  <joint name="joint1" type="revolute">
    <parent link="base_link"/><child link="link1"/>
    <origin xyz="0 0 0.1"/><axis xyz="0 0 1"/><limit lower="-2.9" upper="2.9"/>
  </joint>
  <joint name="joint2" type="revolute">
    <parent link="link1"/><child link="link2"/>
    <origin xyz="0 0 0.12"/><axis xyz="0 1 0"/><limit lower="-1.8" upper="1.8"/>
  </joint>
  <joint name="joint3" type="revolute">
    <parent link="link2"/><child link="link3"/>
    <origin xyz="0 0 0.3"/><axis xyz="0 0 1"/><limit lower="-2.9" upper="2.9"/>
  </joint>
  <joint name="joint4" type="revolute">
    <parent link="link3"/><child link="link4"/>
    <origin xyz="0 0 0.1"/><axis xyz="0 1 0"/><limit lower="-0.1" upper="2.6"/>
  </joint>
  <joint name="joint5" type="revolute">
    <parent link="link4"/><child link="link5"/>
    <origin xyz="0 0 0.25"/><axis xyz="0 0 1"/><limit lower="-2.9" upper="2.9"/>
  </joint>
  <joint name="joint6" type="revolute">
    <parent link="link5"/><child link="link6"/>
    <origin xyz="0 0 0.08"/><axis xyz="0 1 0"/><limit lower="-0.5" upper="2.6"/>
  </joint>
  <joint name="joint7" type="revolute">
    <parent link="link6"/><child link="hand"/>
    <origin xyz="0 0 0.06"/><axis xyz="0 0 1"/><limit lower="-2.9" upper="2.9"/>
  </joint>
  <joint name="finger_joint" type="prismatic">
    <parent link="hand"/><child link="finger_left"/>
    <origin xyz="0 0.0 0.025"/><axis xyz="0 1 0"/><limit lower="0" upper="0.04"/>
  </joint>
  <joint name="finger_fixed" type="fixed">
    <parent link="hand"/><child link="finger_right"/>
    <origin xyz="0 0.0 0.025"/>
  </joint>
</robot>
"#;

pub fn robot_model() -> KinematicModel {
    parse_robot_model(ROBOT_URDF.as_bytes()).expect("bundled robot description is valid")
}

/// Joint values at scan time: arm folded over the table, gripper open.
pub fn robot_q_scan() -> Vec<f64> {
    vec![0.0, 0.45, 0.0, 1.3, 0.0, 1.39, 0.0, 0.04]
}

/// Tool point in the hand frame, midway along the fingers.
pub const TOOL_OFFSET: [f64; 3] = [0.0, 0.015, 0.06];

fn link_color(l: usize) -> [f64; 3] {
    const PALETTE: [[f64; 3]; 5] = [
        [0.85, 0.85, 0.82],
        [0.25, 0.28, 0.32],
        [0.9, 0.55, 0.1],
        [0.2, 0.45, 0.8],
        [0.6, 0.6, 0.62],
    ];
    PALETTE[l % PALETTE.len()]
}

/// Surface samples (point, outward normal) of one collision geometry in
/// its own frame, on a regular grid with the given spacing.
fn geometry_samples(g: &Geometry, spacing: f64) -> Vec<(Vec3, Vec3)> {
    let mut out = Vec::new();
    match g {
        Geometry::Box { size } => {
            let h = size / 2.0;
            for axis in 0..3 {
                let (a, b) = ((axis + 1) % 3, (axis + 2) % 3);
                let na = ((size[a] / spacing).round() as usize).max(1);
                let nb = ((size[b] / spacing).round() as usize).max(1);
                for sign in [-1.0, 1.0] {
                    for i in 0..na {
                        for j in 0..nb {
                            let mut p = Vec3::zeros();
                            p[axis] = sign * h[axis];
                            p[a] = -h[a] + size[a] * (i as f64 + 0.5) / na as f64;
                            p[b] = -h[b] + size[b] * (j as f64 + 0.5) / nb as f64;
                            let mut n = Vec3::zeros();
                            n[axis] = sign;
                            out.push((p, n));
                        }
                    }
                }
            }
        }
        Geometry::Cylinder { radius, length } | Geometry::Capsule { radius, length } => {
            let nr = ((std::f64::consts::TAU * radius / spacing).round() as usize).max(6);
            let nz = ((length / spacing).round() as usize).max(1);
            for i in 0..nr {
                let a = std::f64::consts::TAU * i as f64 / nr as f64;
                let n = Vec3::new(a.cos(), a.sin(), 0.0);
                for j in 0..nz {
                    let z = -length / 2.0 + length * (j as f64 + 0.5) / nz as f64;
                    out.push((n * *radius + Vec3::new(0.0, 0.0, z), n));
                }
            }
            for sign in [-1.0, 1.0] {
                out.push((Vec3::new(0.0, 0.0, sign * length / 2.0), Vec3::z() * sign));
            }
        }
        Geometry::Sphere { radius } => {
            let n = ((4.0 * std::f64::consts::PI * radius * radius) / (spacing * spacing)).round() as usize;
            for p in splat_sphere(Vec3::zeros(), *radius, n.max(8), [0.0; 3]).primitives {
                out.push((p.center, p.center.normalize()));
            }
        }
        Geometry::Mesh { .. } => {}
    }
    out
}

/// Robot splats sampled on the collision surfaces at `q`, with each sample
/// labelled by its link. Samples closer than `clearance` to another link's
/// geometry are skipped, so labels are unambiguous.
pub fn robot_splats_labelled(model: &KinematicModel, q: &[f64], spacing: f64, clearance: f64) -> (SplatScene, Vec<usize>) {
    let poses = model.link_poses(q).expect("q matches the model");
    let mut prims = Vec::new();
    let mut labels = Vec::new();
    for (l, link) in model.links.iter().enumerate() {
        for c in &link.collisions {
            for (p, n) in geometry_samples(&c.geometry, spacing) {
                let world_pose = poses[l] * c.origin;
                let pw = crate::math::transform_point(&world_pose, &p);
                let nw = world_pose.rotation * n;
                let other_close = model.links.iter().enumerate().any(|(o, ol)| {
                    o != l
                        && ol.collisions.iter().any(|oc| {
                            let local = (poses[o] * oc.origin).inverse_transform_point(&nalgebra::Point3::from(pw)).coords;
                            oc.geometry.signed_distance(&local).is_some_and(|d| d.abs() < clearance)
                        })
                });
                if other_close {
                    continue;
                }
                prims.push(GaussianPrimitive::new(
                    pw,
                    rotation_with_normal(&nw),
                    [0.55 * spacing, 0.55 * spacing],
                    link_color(l),
                    0.97,
                ));
                labels.push(l);
            }
        }
    }
    (SplatScene::from_primitives(CANONICAL_FRAME, prims), labels)
}

/// Link-local meshes built from the collision primitives.
pub fn robot_link_meshes(model: &KinematicModel) -> BTreeMap<String, TriangleMesh> {
    let mut out = BTreeMap::new();
    for link in &model.links {
        let mut mesh = TriangleMesh::default();
        for c in &link.collisions {
            let m = match &c.geometry {
                Geometry::Box { size } => TriangleMesh::cuboid(-size / 2.0, size / 2.0),
                Geometry::Cylinder { radius, length } | Geometry::Capsule { radius, length } => {
                    prism_mesh(*radius, *length, 16)
                }
                Geometry::Sphere { radius } => TriangleMesh::cuboid(Vec3::repeat(-radius), Vec3::repeat(*radius)),
                Geometry::Mesh { .. } => continue,
            };
            mesh.merge(&m.transformed(&c.origin));
        }
        out.insert(link.name.clone(), mesh);
    }
    out
}

/// Closed n-gon prism along z, centered at the origin.
pub fn prism_mesh(radius: f64, length: f64, sides: usize) -> TriangleMesh {
    let h = length / 2.0;
    let mut v = Vec::new();
    for i in 0..sides {
        let a = std::f64::consts::TAU * i as f64 / sides as f64;
        v.push(Vec3::new(radius * a.cos(), radius * a.sin(), -h));
        v.push(Vec3::new(radius * a.cos(), radius * a.sin(), h));
    }
    let bottom = v.len();
    v.push(Vec3::new(0.0, 0.0, -h));
    v.push(Vec3::new(0.0, 0.0, h));
    let mut t = Vec::new();
    for i in 0..sides {
        let j = (i + 1) % sides;
        let (b0, t0, b1, t1) = (2 * i, 2 * i + 1, 2 * j, 2 * j + 1);
        t.push([b0, b1, t1]);
        t.push([b0, t1, t0]);
        t.push([bottom, b1, b0]);
        t.push([bottom + 1, t0, t1]);
    }
    TriangleMesh::new(v, t)
}

/// Top of the synthetic table.
pub const TABLE_TOP: f64 = 0.0;
/// Edge length of the synthetic food cubes.
pub const CUBE_SIZE: f64 = 0.03;
/// Nominal bin center on the table.
pub const BIN_CENTER: [f64; 2] = [0.45, -0.25];
pub const BIN_HALF: f64 = 0.08;

/// Table slab with a checkered top, spanning x in [0.2, 0.95].
pub fn table_background() -> Background {
    let (min, max) = (Vec3::new(0.2, -0.45, TABLE_TOP - 0.04), Vec3::new(0.95, 0.45, TABLE_TOP));
    let spacing = 0.04;
    let (nx, ny) = (((max.x - min.x) / spacing) as usize, ((max.y - min.y) / spacing) as usize);
    let mut prims = Vec::new();
    for i in 0..nx {
        for j in 0..ny {
            let c = if (i + j) % 2 == 0 { [0.55, 0.42, 0.3] } else { [0.7, 0.58, 0.42] };
            // sub-millimeter relief so overlapping disks never tie in depth
            let z = TABLE_TOP - 2e-4 * ((i % 3) + 3 * (j % 3)) as f64;
            prims.push(GaussianPrimitive::new(
                Vec3::new(min.x + spacing * (i as f64 + 0.5), min.y + spacing * (j as f64 + 0.5), z),
                Rotation::identity(),
                [0.6 * spacing, 0.6 * spacing],
                c,
                0.99,
            ));
        }
    }
    Background {
        splats: SplatScene::from_primitives(CANONICAL_FRAME, prims),
        mesh: TriangleMesh::cuboid(min, max),
    }
}

fn box_splats(min: Vec3, max: Vec3, spacing: f64, color: [f64; 3], open_top: bool) -> SplatScene {
    let size = max - min;
    let center = (min + max) / 2.0;
    let prims = geometry_samples(&Geometry::Box { size }, spacing)
        .into_iter()
        .filter(|(p, n)| !(open_top && n.z > 0.5 && p.z > 0.0))
        .map(|(p, n)| {
            GaussianPrimitive::new(p + center, rotation_with_normal(&n), [0.55 * spacing, 0.55 * spacing], color, 0.98)
        })
        .collect();
    SplatScene::from_primitives("object", prims)
}

/// Cube of edge [`CUBE_SIZE`] centered at its origin.
pub fn cube_asset(id: &str, color: [f64; 3]) -> ObjectAsset {
    let h = CUBE_SIZE / 2.0;
    let (min, max) = (Vec3::repeat(-h), Vec3::repeat(h));
    ObjectAsset::new(id, box_splats(min, max, 0.01, color, false), TriangleMesh::cuboid(min, max), 0.05)
        .expect("cube asset is consistent")
}

/// Open bin with its floor on the local z = 0 plane.
pub fn bin_asset(id: &str) -> ObjectAsset {
    let (min, max) = (Vec3::new(-BIN_HALF, -BIN_HALF, 0.0), Vec3::new(BIN_HALF, BIN_HALF, 0.05));
    ObjectAsset::new(id, box_splats(min, max, 0.02, [0.15, 0.35, 0.2], true), TriangleMesh::open_box(min, max), 0.3)
        .expect("bin asset is consistent")
}

/// Region a food item's center must enter to count as in the bin.
pub fn bin_region() -> ([f64; 3], [f64; 3]) {
    let [x, y] = BIN_CENTER;
    (
        [x - BIN_HALF, y - BIN_HALF, TABLE_TOP - 0.01],
        [x + BIN_HALF, y + BIN_HALF, TABLE_TOP + 0.06],
    )
}

/// Four-step food bussing rubric over instances `food_a`, `food_b`, `bin`.
pub fn food_bussing_rubric() -> Rubric {
    let food = || Subject::any(["food_a", "food_b"]);
    let (min, max) = bin_region();
    let step = |d: &str, p: Predicate| RubricStep {
        description: d.into(),
        predicate: p,
    };
    Rubric {
        task: "food_bussing".into(),
        instruction: "put all the food items in the bin".into(),
        steps: vec![
            step("Reach for any food item", Predicate::Reached { subject: food(), distance: 0.02 }),
            step("Lift the food item", Predicate::Lifted { subject: food(), height: 0.05 }),
            step("Place the first food item in the bin", Predicate::InsideRegion { subject: food(), min, max }),
            step(
                "Place the second food item in the bin",
                Predicate::InsideRegion {
                    subject: Subject::all(["food_a", "food_b"]),
                    min,
                    max,
                },
            ),
        ],
    }
}

/// Articulated robot sampled at [`robot_q_scan`] with the given splat spacing.
pub fn robot_placement(spacing: f64) -> RobotPlacement {
    let model = robot_model();
    let q = robot_q_scan();
    let (splats, _) = robot_splats_labelled(&model, &q, spacing, 0.005);
    let meshes = robot_link_meshes(&model);
    let art = assign_splats_to_links(&splats, &model, &q, &meshes, DEFAULT_CUTOFF).expect("robot fixture assigns");
    RobotPlacement {
        art,
        base: crate::math::Pose::identity(),
        tool: ToolFrame {
            link: "hand".into(),
            offset: pose(Vec3::from(TOOL_OFFSET), Rotation::identity()),
            gripper_joint: Some("finger_joint".into()),
        },
    }
}

/// Scene parts for the synthetic pick-and-place task. `width` x `height`
/// is the external camera resolution; the wrist camera uses half of it.
pub fn pick_place_parts(width: u32, height: u32) -> SceneParts {
    let cube_pose = |x: f64, y: f64| pose(Vec3::new(x, y, TABLE_TOP + CUBE_SIZE / 2.0), Rotation::identity());
    let jitter = Randomization {
        x: [-0.03, 0.03],
        y: [-0.03, 0.03],
        z: [0.0, 0.0],
        yaw: [-0.3, 0.3],
    };
    let mut a = Placement::new("food_a", "red_cube", cube_pose(0.55, 0.12));
    a.randomization = jitter;
    let mut b = Placement::new("food_b", "yellow_cube", cube_pose(0.42, 0.22));
    b.randomization = jitter;
    let bin = Placement::new(
        "bin",
        "bin",
        pose(Vec3::new(BIN_CENTER[0], BIN_CENTER[1], TABLE_TOP), Rotation::identity()),
    );
    let front = Camera::looking_at(
        Vec3::new(1.35, 0.0, 0.65),
        Vec3::new(0.5, 0.0, 0.05),
        Vec3::z(),
        60f64.to_radians(),
        width,
        height,
    );
    let side = Camera::looking_at(
        Vec3::new(0.5, 0.9, 0.55),
        Vec3::new(0.5, 0.0, 0.05),
        Vec3::z(),
        60f64.to_radians(),
        width,
        height,
    );
    let (ww, wh) = ((width / 2).max(8), (height / 2).max(6));
    let wf = 0.5 * ww as f64 / 40f64.to_radians().tan();
    let wrist = WristCamera {
        name: "wrist".into(),
        link: "hand".into(),
        camera: Camera::new(
            pose(Vec3::new(0.05, 0.0, 0.0), Rotation::identity()),
            wf,
            wf,
            ww as f64 / 2.0,
            wh as f64 / 2.0,
            ww,
            wh,
        ),
    };
    SceneParts {
        background: table_background(),
        robot: robot_placement(0.02),
        assets: vec![
            cube_asset("red_cube", [0.85, 0.15, 0.1]),
            cube_asset("yellow_cube", [0.95, 0.85, 0.15]),
            bin_asset("bin"),
        ],
        placements: vec![a, b, bin],
        cameras: vec![
            NamedCamera { name: "front".into(), camera: front },
            NamedCamera { name: "side".into(), camera: side },
        ],
        wrist: Some(wrist),
        rubric: food_bussing_rubric(),
        seed: 7,
    }
}

pub fn pick_place_scene(width: u32, height: u32) -> ComposedScene {
    compose(pick_place_parts(width, height)).expect("synthetic scene is valid")
}

/// Tool positions above the bin where carried items are released.
pub fn bin_drop_points() -> Vec<Vec3> {
    let [x, y] = BIN_CENTER;
    vec![
        Vec3::new(x, y + 0.035, TABLE_TOP + 0.07),
        Vec3::new(x, y - 0.035, TABLE_TOP + 0.07),
    ]
}

/// Scripted food-bussing policy with the given skill.
pub fn food_bussing_policy(name: &str, skill: crate::eval::Skill, seed: u64) -> crate::eval::ScriptedPolicy {
    crate::eval::ScriptedPolicy::new(name, skill, vec!["food_a".into(), "food_b".into()], bin_drop_points(), seed)
}
