mod common;

use common::*;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use simeval_core::eval::*;
use simeval_core::math::{transform_point, Vec3};
use simeval_core::scene::{sample_initial_state, score_rubric, ComposedScene};
use simeval_core::splat::{render, Camera};
use simeval_core::synthetic;
use std::time::Duration;

fn scene() -> ComposedScene {
    synthetic::pick_place_scene(48, 36)
}

fn arm_row(scene: &ComposedScene, q: &[f64], gripper: f64) -> [f64; ACTION_DIM] {
    let mut row = [0.0; ACTION_DIM];
    for (c, &d) in scene.arm_dofs().iter().enumerate() {
        row[c] = q[d];
    }
    row[ARM_DOF] = gripper;
    row
}

fn start(scene: &ComposedScene) -> WorldState {
    initial_state(scene, 0, &EpisodeConfig::default()).unwrap()
}

#[test]
fn holding_position_only_advances_time() {
    let scene = scene();
    let s = start(&scene);
    let row = arm_row(&scene, &s.q, 0.0);
    let next = step_world(&scene, &s, &row, &ServoConfig::default());
    assert_eq!(next.q, s.q);
    assert_eq!(next.objects, s.objects);
    assert_eq!(next.attachment, s.attachment);
    assert_eq!(next.time, ServoConfig::default().dt);
}

#[test]
fn rate_limit_moves_exactly_one_step() {
    let scene = scene();
    let mut s = start(&scene);
    let d = scene.arm_dofs()[0];
    s.q[d] = 0.0;
    let mut row = arm_row(&scene, &s.q, 0.0);
    row[0] = 0.5;
    let servo = ServoConfig {
        v_max: 1.0,
        dt: 1.0 / 15.0,
        ..Default::default()
    };
    let next = step_world(&scene, &s, &row, &servo);
    assert_eq!(next.q[d], 1.0 / 15.0);
    for (i, (a, b)) in next.q.iter().zip(&s.q).enumerate() {
        if i != d {
            assert_eq!(a, b);
        }
    }
}

#[test]
fn grasped_object_follows_the_gripper_rigidly() {
    let scene = scene();
    let mut s = start(&scene);
    let servo = ServoConfig::default();
    let food = s.objects["food_a"].translation.vector;
    let down = simeval_core::math::pose(food, simeval_core::math::Rotation::from_axis_angle(&Vec3::x_axis(), std::f64::consts::PI));
    let above = simeval_core::math::pose(food + Vec3::new(0.0, 0.0, 0.1), down.rotation);
    let q = solve_ik(&scene, &s.q, &above, 200);
    let q = solve_ik(&scene, &q, &down, 200);
    let tool = scene.tool_pose(&q).unwrap().translation.vector;
    assert!((tool - food).norm() < 1e-3, "ik error {}", (tool - food).norm());
    s.q = q.clone();
    s.gripper_width = scene.gripper_width(&q);
    let mut row = arm_row(&scene, &q, 1.0);
    for _ in 0..10 {
        s = step_world(&scene, &s, &row, &servo);
    }
    let grip = s.attachment.clone().expect("closing next to the cube attaches it");
    assert_eq!(grip.instance, "food_a");
    row[1] -= 0.3;
    row[3] += 0.2;
    for _ in 0..8 {
        s = step_world(&scene, &s, &row, &servo);
        let rel = scene.tool_pose(&s.q).unwrap().inverse() * s.objects["food_a"];
        assert!((rel.translation.vector - grip.grip.translation.vector).norm() < 1e-12);
        assert!(rel.rotation.angle_to(&grip.grip.rotation) < 1e-12);
    }
    let lifted = s.objects["food_a"].translation.vector.z;
    assert!(lifted > food.z + 0.02);
    // opening drops it back onto the table
    row[ARM_DOF] = 0.0;
    for _ in 0..10 {
        s = step_world(&scene, &s, &row, &servo);
    }
    assert!(s.attachment.is_none());
    assert!((scene.bottoms(&s.objects)["food_a"]).abs() < 1e-6);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]
    #[test]
    fn joint_limits_hold_at_every_step(targets in proptest::collection::vec(proptest::array::uniform8(-6.0f64..6.0), 1..30)) {
        let scene = scene();
        let limits = scene.robot.art.model.limits();
        let mut s = start(&scene);
        for t in &targets {
            s = step_world(&scene, &s, t, &ServoConfig::default());
            for (v, l) in s.q.iter().zip(&limits) {
                prop_assert!(*v >= l.lower && *v <= l.upper);
            }
        }
    }
}

#[test]
fn observation_matches_composition_render() {
    let scene = scene();
    let state = WorldState::new(&scene, scene.q_scan().to_vec(), scene.nominal_states());
    let obs = render_observation(&scene, &state, 0).unwrap();
    let flat = scene.flatten(scene.q_scan(), &scene.nominal_states()).unwrap();
    for c in &scene.cameras {
        let direct = render(&flat, &c.camera).unwrap().to_rgb8();
        assert_eq!(obs.images[&c.name], direct);
    }
    assert_eq!(obs.proprio[ARM_DOF], 0.0);
    assert_eq!(obs.instruction, scene.rubric.instruction);
}

#[test]
fn joints_outside_the_frustum_do_not_change_external_images() {
    let mut parts = synthetic::pick_place_parts(48, 36);
    // narrow camera looking straight down at the far table corner
    parts.cameras[0].camera = Camera::looking_at(
        Vec3::new(0.85, 0.38, 0.4),
        Vec3::new(0.85, 0.38, 0.0),
        Vec3::x(),
        20f64.to_radians(),
        32,
        24,
    );
    let scene = simeval_core::scene::compose(parts).unwrap();
    let a = WorldState::new(&scene, scene.q_scan().to_vec(), scene.nominal_states());
    let mut b = a.clone();
    b.q[6] += 0.8;
    let oa = render_observation(&scene, &a, 0).unwrap();
    let ob = render_observation(&scene, &b, 0).unwrap();
    assert_eq!(oa.images["front"], ob.images["front"]);
    let wa = oa.wrist.unwrap();
    let wb = ob.wrist.unwrap();
    let diff: f64 = wa.as_raw().iter().zip(wb.as_raw()).map(|(x, y)| (*x as f64 - *y as f64).abs()).sum::<f64>() / wa.as_raw().len() as f64;
    assert!(diff > 0.0);
}

#[test]
fn wrist_camera_rides_on_its_link() {
    let scene = scene();
    let mut q = scene.q_scan().to_vec();
    let c0 = scene.wrist_camera(&q).unwrap();
    q[0] += 0.2;
    let c1 = scene.wrist_camera(&q).unwrap();
    assert!((c0.center() - c1.center()).norm() > 0.01);
    let hand = scene.robot.art.model.link_index("hand").unwrap();
    let link = scene.robot.art.model.link_poses(&q).unwrap()[hand];
    let expect = transform_point(&link, &scene.wrist.camera.pose.translation.vector);
    assert!((c1.center() - expect).norm() < 1e-12);
}

#[test]
fn oracle_scores_one_and_is_deterministic() {
    let scene = scene();
    let cfg = EpisodeConfig::default();
    for seed in [0, 5, 9] {
        let mut p = synthetic::food_bussing_policy("oracle", Skill::oracle(), 1);
        let a = run_episode(&scene, "h", &mut p, seed, &cfg).unwrap();
        assert_eq!(a.score, 1.0, "seed {seed}");
        assert_eq!(a.termination, Termination::Success);
        let snaps = a.snapshots(&scene).unwrap();
        assert_eq!(score_rubric(scene.shapes(), &snaps, &scene.rubric).unwrap(), a.score);
        let mut p = synthetic::food_bussing_policy("oracle", Skill::oracle(), 1);
        let b = run_episode(&scene, "h", &mut p, seed, &cfg).unwrap();
        assert_eq!(a, b);
    }
}

#[test]
fn oracle_closes_the_loop_with_noise_and_replans() {
    let scene = scene();
    let cfg = EpisodeConfig {
        joint_noise: 2e-4,
        replan_interval: Some(2),
        ..Default::default()
    };
    let mut p = synthetic::food_bussing_policy("oracle", Skill::oracle(), 1);
    let rec = run_episode(&scene, "h", &mut p, 3, &cfg).unwrap();
    assert_eq!(rec.score, 1.0);
}

#[test]
fn zero_policy_scores_nothing() {
    let scene = scene();
    let rec = run_episode(&scene, "h", &mut ZeroPolicy, 0, &EpisodeConfig { max_steps: 60, ..Default::default() }).unwrap();
    assert_eq!(rec.score, 0.0);
    assert_eq!(rec.termination, Termination::MaxSteps);
    assert_eq!(rec.steps.len(), 60);
}

#[test]
fn unreachable_endpoint_is_an_infrastructure_failure() {
    let scene = scene();
    let port = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let mut p = HttpPolicy::new(&format!("http://127.0.0.1:{port}"), Duration::from_millis(500)).unwrap();
    let rec = run_episode(&scene, "h", &mut p, 0, &EpisodeConfig::default()).unwrap();
    assert!(rec.is_infrastructure_failure());
    assert!(rec.steps.is_empty());
}

/// Zero, lift-only, or oracle depending on the episode seed.
struct ByEpisode {
    inner: Box<dyn Policy>,
}

impl Policy for ByEpisode {
    fn name(&self) -> &str {
        "by_episode"
    }
    fn needs_images(&self) -> bool {
        false
    }
    fn reset(&mut self, seed: u64) {
        let skill = match seed % 3 {
            0 => Skill { items: 0, ..Skill::oracle() },
            1 => Skill { lift_only: true, ..Skill::oracle() },
            _ => Skill::oracle(),
        };
        self.inner = Box::new(synthetic::food_bussing_policy("x", skill, 0));
        self.inner.reset(seed);
    }
    fn act(&mut self, input: &PolicyInput<'_>) -> Result<PolicyReply, PolicyError> {
        self.inner.act(input)
    }
}

#[test]
fn suites_average_paired_episodes() {
    let scene = scene();
    let suite = [SuiteScene {
        name: "food".into(),
        scene: &scene,
        hash: "h".into(),
    }];
    let mut policies: Vec<Box<dyn Policy>> = vec![
        Box::new(ByEpisode { inner: Box::new(ZeroPolicy) }),
        Box::new(synthetic::food_bussing_policy("oracle", Skill::oracle(), 1)),
        Box::new(ZeroPolicy),
    ];
    let cfg = EpisodeConfig {
        max_steps: 250,
        ..Default::default()
    };
    let r = run_suite(&suite, &mut policies, 3, &cfg).unwrap();
    assert_eq!(r.episode_scores[0][0], vec![Some(0.0), Some(0.5), Some(1.0)]);
    assert_eq!(r.scores[0][0], Some(0.5));
    assert!(r.scores[1][0].unwrap() > r.scores[2][0].unwrap());
    assert_eq!(r.infrastructure_failures, vec![vec![0], vec![0], vec![0]]);
    // paired initial conditions
    for seed in 0..3 {
        let a = initial_state(&scene, seed, &cfg).unwrap();
        let b = initial_state(&scene, seed, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.objects, sample_initial_state(&scene, seed).unwrap());
    }
}

#[test]
fn episode_records_are_written() {
    let scene = scene();
    let cfg = EpisodeConfig {
        max_steps: 5,
        save_renders: true,
        ..Default::default()
    };
    let rec = run_episode(&scene, "abc", &mut ZeroPolicy, 0, &cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_record(dir.path(), &rec).unwrap();
    let csv = std::fs::read_to_string(dir.path().join("steps.csv")).unwrap();
    assert_eq!(csv.lines().count(), 6);
    assert!(csv.starts_with("step,time,a0"));
    let manifest: serde_json::Value = serde_json::from_slice(&std::fs::read(dir.path().join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["scene_hash"], "abc");
    assert!(dir.path().join("frames/00000_front.png").exists());
}

#[test]
fn replay_of_a_perfect_recording_has_no_error() {
    let dt = 1.0 / 15.0;
    let cmd = ramp(200, 7, dt);
    let rec = Recording {
        time: (0..200).map(|t| t as f64 * dt).collect(),
        commanded: cmd.clone(),
        achieved: cmd,
    };
    for mode in [ReplayMode::Position, ReplayMode::Velocity] {
        let c = replay_error_analysis(&rec, mode, 1.5).unwrap();
        assert!(c.errors.iter().flatten().all(|e| *e < 1e-12));
    }
    let back = Recording::from_csv(&rec.to_csv()).unwrap();
    assert_eq!(back.commanded.len(), 200);
    let mut short = rec.clone();
    short.achieved.pop();
    assert!(matches!(replay_error_analysis(&short, ReplayMode::Position, 1.5), Err(EvalError::LengthMismatch(_))));
}

#[test]
fn constant_offset_bounds_position_error() {
    let dt = 1.0 / 15.0;
    let delta = 0.01;
    let cmd = ramp(150, 7, dt);
    let rec = Recording {
        time: (0..150).map(|t| t as f64 * dt).collect(),
        achieved: cmd.iter().map(|r| r.iter().map(|v| v + delta).collect()).collect(),
        commanded: cmd,
    };
    let c = replay_error_analysis(&rec, ReplayMode::Position, 1.5).unwrap();
    assert!(c.errors.iter().flatten().all(|e| *e <= delta + 1e-12));
}

#[test]
fn velocity_replay_drifts_while_position_replay_stays_bounded() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let bound = 2e-3;
    let steps = 150;
    let (mut pos_final, mut vel_final) = (0.0, 0.0);
    let mut vel_envelope = vec![0.0; steps];
    for _ in 0..100 {
        let rec = noisy_recording(&mut rng, steps, bound);
        let p = replay_error_analysis(&rec, ReplayMode::Position, 1.5).unwrap();
        let v = replay_error_analysis(&rec, ReplayMode::Velocity, 1.5).unwrap();
        assert!(p.errors.iter().flatten().all(|e| *e <= bound));
        pos_final += p.mean_error(steps - 1) / 100.0;
        vel_final += v.mean_error(steps - 1) / 100.0;
        for t in 0..steps {
            vel_envelope[t] += v.mean_error(t) / 100.0;
        }
    }
    assert!(vel_final >= 3.0 * pos_final, "{vel_final} vs {pos_final}");
    // mean drift grows: compare decade averages
    let avg = |a: usize, b: usize| vel_envelope[a..b].iter().sum::<f64>() / (b - a) as f64;
    assert!(avg(10, 30) < avg(60, 80) && avg(60, 80) < avg(120, 140));
}

#[test]
fn rubric_derived_script_also_solves_the_task() {
    let scene = scene();
    let mut p = ScriptedPolicy::for_rubric("generic", Skill::oracle(), &scene, 0).unwrap();
    let rec = run_episode(&scene, "h", &mut p, 2, &EpisodeConfig::default()).unwrap();
    assert_eq!(rec.score, 1.0);
}
