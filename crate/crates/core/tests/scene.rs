mod common;

use common::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use simeval_core::articulation::{pose_articulated_splat_at, write_bundle};
use simeval_core::math::{pose, yaw_rotation, Pose, Rotation, Vec3};
use simeval_core::recon::TriangleMesh;
use simeval_core::scene::*;
use simeval_core::splat::render;
use simeval_core::synthetic::{self, CUBE_SIZE};
use std::collections::BTreeMap;

fn robot_only_parts() -> SceneParts {
    let mut parts = synthetic::pick_place_parts(48, 36);
    parts.assets.clear();
    parts.placements.clear();
    parts.rubric.steps = vec![RubricStep {
        description: "Move the gripper over the table".into(),
        predicate: Predicate::InsideRegion {
            subject: Subject::one(TOOL_INSTANCE),
            min: [0.2, -0.45, 0.0],
            max: [0.95, 0.45, 1.0],
        },
    }];
    parts
}

#[test]
fn robot_only_scene_renders_as_overlay() {
    let parts = robot_only_parts();
    let scene = compose(parts.clone()).unwrap();
    let q = scene.q_scan().to_vec();
    let flat = scene.flatten(&q, &ObjectStates::new()).unwrap();
    let mut overlay = parts.background.splats.clone();
    overlay.extend(&pose_articulated_splat_at(&parts.robot.art, &q, &parts.robot.base).unwrap());
    for c in &scene.cameras {
        let a = render(&flat, &c.camera).unwrap();
        let b = render(&overlay, &c.camera).unwrap();
        assert!(a.max_abs_color_diff(&b) <= 1e-6);
    }
    let snap = scene.snapshot(&q, &ObjectStates::new(), &BTreeMap::new()).unwrap();
    assert!(eval_predicate(scene.shapes(), &snap, &scene.rubric.steps[0].predicate).unwrap());
}

#[test]
fn compose_lists_every_violation() {
    let mut parts = synthetic::pick_place_parts(48, 36);
    parts.placements[0].asset = "teapot".into();
    parts.wrist.as_mut().unwrap().link = "elbow".into();
    parts.background.splats.frame_label = "F1".into();
    let Err(SceneError::Compose(v)) = compose(parts) else {
        panic!("expected a compose error")
    };
    assert_eq!(v.len(), 3, "{v:?}");
    assert!(v.iter().any(|m| m.contains("`teapot`")));
    assert!(v.iter().any(|m| m.contains("`elbow`")));
    assert!(v.iter().any(|m| m.contains("F1")));
}

#[test]
fn repeated_asset_gives_independent_instances() {
    let mut parts = synthetic::pick_place_parts(48, 36);
    let mut extra = parts.placements[0].clone();
    extra.instance = "food_c".into();
    extra.pose.translation.vector.y -= 0.1;
    parts.placements.push(extra);
    let scene = compose(parts.clone()).unwrap();
    let states = scene.nominal_states();
    let flat = scene.flatten(scene.q_scan(), &states).unwrap();
    let cube = parts.assets[0].splats.len();
    assert_eq!(flat.len(), scene.flattened_len());
    assert_eq!(
        flat.len(),
        parts.background.splats.len() + parts.robot.art.len() + 3 * cube + parts.assets[2].splats.len()
    );
    let tail = &flat.primitives[flat.len() - cube..];
    let first = &flat.primitives[flat.len() - 3 * cube - parts.assets[2].splats.len()..][..cube];
    assert!((tail[0].center - first[0].center - Vec3::new(0.0, -0.1, 0.0)).norm() < 1e-12);
}

#[test]
fn initial_states_are_seeded_and_settled() {
    let scene = synthetic::pick_place_scene(48, 36);
    let a = sample_initial_state(&scene, 3).unwrap();
    assert_eq!(a, sample_initial_state(&scene, 3).unwrap());
    assert_ne!(a, sample_initial_state(&scene, 4).unwrap());
    for (id, z) in scene.bottoms(&a) {
        assert!(z.abs() < 1e-9, "{id} rests at {z}");
    }

    let mut parts = synthetic::pick_place_parts(48, 36);
    for p in &mut parts.placements {
        p.randomization = Randomization::default();
    }
    let fixed = compose(parts).unwrap();
    assert_eq!(sample_initial_state(&fixed, 11).unwrap(), fixed.nominal_states());
}

#[test]
fn x_offsets_are_uniform() {
    let mut parts = synthetic::pick_place_parts(48, 36);
    parts.placements[0].randomization = Randomization {
        x: [-0.05, 0.05],
        ..Default::default()
    };
    parts.placements[1].randomization = Randomization::default();
    let scene = compose(parts).unwrap();
    let x0 = scene.placements[0].pose.translation.vector.x;
    let mut u: Vec<f64> = (0..1000)
        .map(|e| {
            let s = sample_initial_state(&scene, e).unwrap();
            (s["food_a"].translation.vector.x - x0 + 0.05) / 0.1
        })
        .collect();
    u.sort_by(f64::total_cmp);
    let n = u.len() as f64;
    let d = u
        .iter()
        .enumerate()
        .map(|(i, &v)| ((i + 1) as f64 / n - v).max(v - i as f64 / n))
        .fold(0.0, f64::max);
    // Kolmogorov-Smirnov critical value at alpha = 0.01
    assert!(d < 1.628 / n.sqrt(), "D = {d}");
}

#[test]
fn settling_finds_the_highest_support() {
    let scene = synthetic::pick_place_scene(48, 36);
    let mut states = scene.nominal_states();
    let bin = states["bin"].translation.vector;
    states.insert("food_a".into(), pose(bin + Vec3::new(0.0, 0.0, 0.2), yaw_rotation(0.4)));
    let p = scene.settle(&states, "food_a").unwrap();
    assert!((p.translation.vector.z - CUBE_SIZE / 2.0).abs() < 1e-12);
    states.insert("food_a".into(), p);

    let top = p.translation.vector + Vec3::new(0.005, 0.0, 0.3);
    states.insert("food_b".into(), pose(top, Rotation::identity()));
    let stacked = scene.settle(&states, "food_b").unwrap();
    assert!((stacked.translation.vector.z - 1.5 * CUBE_SIZE).abs() < 1e-9);

    states.insert("food_b".into(), pose(Vec3::new(3.0, 0.0, 0.5), Rotation::identity()));
    assert_eq!(scene.settle(&states, "food_b"), Err(SceneError::NoSupport("food_b".into())));
}

#[test]
fn food_bussing_rubric_scores_by_prefix() {
    let scene = synthetic::pick_place_scene(48, 36);
    let rubric = &scene.rubric;
    let start = scene.nominal_states();
    let rest = scene.bottoms(&start);
    let a0 = start["food_a"].translation.vector;
    let b0 = start["food_b"].translation.vector;
    let bin = start["bin"].translation.vector + Vec3::new(0.0, 0.0, CUBE_SIZE / 2.0);
    let moved = |a: Vec3, b: Vec3| {
        let mut s = start.clone();
        s.insert("food_a".into(), pose(a, Rotation::identity()));
        s.insert("food_b".into(), pose(b, Rotation::identity()));
        s
    };
    let up = Vec3::new(0.0, 0.0, 0.1);
    let far = Vec3::new(0.0, 0.0, 0.5);
    let full = vec![
        snapshot(start.clone(), a0 + far, 0.04, &rest),
        snapshot(start.clone(), a0, 0.0, &rest),
        snapshot(moved(a0 + up, b0), a0 + up, 0.0, &rest),
        snapshot(moved(bin, b0), bin + far, 0.04, &rest),
        snapshot(moved(bin, b0), b0, 0.0, &rest),
        snapshot(moved(bin, bin + Vec3::new(0.04, 0.0, 0.0)), bin + far, 0.04, &rest),
    ];
    let shapes = scene.shapes();
    assert_eq!(score_rubric(shapes, &full, rubric).unwrap(), 1.0);
    assert_eq!(score_rubric(shapes, &full[..3], rubric).unwrap(), 0.5);
    assert_eq!(score_rubric(shapes, &full[..1], rubric).unwrap(), 0.0);
    assert_eq!(score_rubric(shapes, &[], rubric).unwrap(), 0.0);
    // placing without ever reaching earns nothing: order matters
    let skipped = vec![full[0].clone(), full[5].clone()];
    assert_eq!(score_rubric(shapes, &skipped, rubric).unwrap(), 0.0);
    let mut prev = 0.0;
    for k in 0..=full.len() {
        let s = score_rubric(shapes, &full[..k], rubric).unwrap();
        assert!(s >= prev);
        prev = s;
    }
}

#[test]
fn inside_region_agrees_with_surface_sampling() {
    let scene = synthetic::pick_place_scene(48, 36);
    let shapes = scene.shapes();
    let (min, max) = synthetic::bin_region();
    let p = Predicate::InsideRegion {
        subject: Subject::one("food_a"),
        min,
        max,
    };
    let eps = 0.005;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut agree = 0;
    let trials = 1000;
    for _ in 0..trials {
        let c = Vec3::new(
            rng.gen_range(min[0] - 0.1..max[0] + 0.1),
            rng.gen_range(min[1] - 0.1..max[1] + 0.1),
            rng.gen_range(-0.05..0.15),
        );
        let rot = Rotation::from_euler_angles(rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0));
        let pose: Pose = pose(c, rot);
        let mut objects = scene.nominal_states();
        objects.insert("food_a".into(), pose);
        let snap = snapshot(objects, Vec3::zeros(), 0.04, &BTreeMap::new());
        let fast = eval_predicate(shapes, &snap, &p).unwrap();
        let world = shapes["food_a"].mesh.transformed(&pose);
        let pts = surface_samples(&world, 400, &mut rng);
        let mean = pts.iter().sum::<Vec3>() / pts.len() as f64;
        let oracle = (0..3).all(|k| mean[k] >= min[k] && mean[k] <= max[k]);
        if fast == oracle {
            agree += 1;
        } else {
            let margin = (0..3).map(|k| (c[k] - min[k]).abs().min((c[k] - max[k]).abs())).fold(f64::INFINITY, f64::min);
            assert!(margin <= eps, "disagreement {margin} m from the boundary");
        }
    }
    assert!(agree as f64 >= 0.99 * trials as f64, "{agree}/{trials}");
}

#[test]
fn descriptor_round_trip_and_hash_check() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let parts = synthetic::pick_place_parts(48, 36);
    write_background(&root.join("bg"), &parts.background).unwrap();
    write_bundle(&root.join("robot"), &parts.robot.art).unwrap();
    let mut asset_dirs = BTreeMap::new();
    for a in &parts.assets {
        asset_dirs.insert(a.id.clone(), write_asset(&root.join("objects"), a).unwrap());
    }
    assert_eq!(list_assets(&root.join("objects")).unwrap().len(), 3);
    let d = SceneDescriptor::describe(&parts, &root.join("bg"), &root.join("robot"), &asset_dirs).unwrap();
    let path = root.join("scene.psd");
    save_descriptor(&path, &d).unwrap();
    let loaded = load_scene(&path, &Roots::default()).unwrap();
    assert_eq!(loaded.descriptor, d);
    let direct = compose(parts.clone()).unwrap();
    assert_eq!(loaded.scene.placements, direct.placements);
    assert_eq!(loaded.scene.rubric, direct.rubric);
    assert_eq!(loaded.scene.flattened_len(), direct.flattened_len());
    let q = direct.q_scan().to_vec();
    let a = render(&loaded.scene.flatten(&q, &loaded.scene.nominal_states()).unwrap(), &direct.cameras[0].camera).unwrap();
    let b = render(&direct.flatten(&q, &direct.nominal_states()).unwrap(), &direct.cameras[0].camera).unwrap();
    let diff = a.max_abs_color_diff(&b);
    // splat files store f32, so allow rounding at kernel cutoff edges
    assert!(diff < 1e-3, "{diff}");

    std::fs::write(root.join("objects/bin/mesh.obj"), TriangleMesh::cuboid(Vec3::zeros(), Vec3::repeat(0.1)).to_obj()).unwrap();
    assert!(matches!(load_scene(&path, &Roots::default()), Err(SceneError::HashMismatch { .. })));
}

proptest! {
    #[test]
    fn renaming_uninvolved_instances_is_harmless(x in 0.3f64..0.7, y in -0.3f64..0.3, z in 0.0f64..0.2, name in "[a-z]{3,8}") {
        let scene = synthetic::pick_place_scene(48, 36);
        let mut objects = scene.nominal_states();
        objects.insert("food_a".into(), pose(Vec3::new(x, y, z), Rotation::identity()));
        let rest = scene.bottoms(&objects);
        let snap = snapshot(objects.clone(), Vec3::new(x, y, z + 0.02), 0.01, &rest);
        let mut shapes2 = scene.shapes().clone();
        let mut snap2 = snap.clone();
        let shape = shapes2.remove("food_b").unwrap();
        let pose_b = snap2.objects.remove("food_b").unwrap();
        let fresh = format!("other_{name}");
        shapes2.insert(fresh.clone(), shape);
        snap2.objects.insert(fresh.clone(), pose_b);
        if let Some(r) = snap2.rest_bottom.remove("food_b") { snap2.rest_bottom.insert(fresh, r); }
        let preds = [
            Predicate::Reached { subject: Subject::one("food_a"), distance: 0.03 },
            Predicate::Grasped { subject: Subject::one("food_a") },
            Predicate::OnTopOf { subject: Subject::one("food_a"), support: "bin".into(), overlap: 0.5, gap: 0.02 },
            Predicate::Near { subject: Subject::one("food_a"), other: "bin".into(), distance: 0.2 },
        ];
        for p in &preds {
            prop_assert_eq!(eval_predicate(scene.shapes(), &snap, p).unwrap(), eval_predicate(&shapes2, &snap2, p).unwrap());
        }
    }

    #[test]
    fn rubric_progress_is_monotone_in_prefix(seed in 0u64..1000) {
        let scene = synthetic::pick_place_scene(48, 36);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let start = scene.nominal_states();
        let rest = scene.bottoms(&start);
        let trace: Vec<WorldSnapshot> = (0..12).map(|_| {
            let mut s = start.clone();
            for id in ["food_a", "food_b"] {
                let c = Vec3::new(rng.gen_range(0.3..0.6), rng.gen_range(-0.35..0.3), rng.gen_range(0.015..0.12));
                s.insert(id.into(), pose(c, Rotation::identity()));
            }
            let tool = s["food_a"].translation.vector + Vec3::new(0.0, 0.0, rng.gen_range(0.0..0.05));
            snapshot(s, tool, rng.gen_range(0.0..0.04), &rest)
        }).collect();
        let mut prev = 0.0;
        for k in 0..=trace.len() {
            let p = score_rubric(scene.shapes(), &trace[..k], &scene.rubric).unwrap();
            prop_assert!(p >= prev && (0.0..=1.0).contains(&p));
            prev = p;
        }
    }
}
