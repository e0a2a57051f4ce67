//! Bundled synthetic inputs for every pipeline stage.
//!
//! ```text
//! plane/images/<id>.png  plane/poses.txt  plane/init.pspl  plane/board.txt
//! robot/robot.xml  robot/robot.pspl  robot/qscan.txt  robot/link_meshes/<link>.obj
//! bg/  objs/<asset>/  robot_bundle/  scene.psd  traj.csv
//! ```
//!
//! The plane poses and starting splats are given in a scaled, rotated
//! reconstruction frame; `board.txt` holds the true camera centers, so
//! `align` has a nontrivial similarity to recover.

use anyhow::{Context, Result};
use simeval_core::align::Sim3;
use simeval_core::articulation::write_bundle;
use simeval_core::eval::Recording;
use simeval_core::math::{Rotation, Vec3};
use simeval_core::scene::{save_descriptor, write_asset, write_background, SceneDescriptor};
use simeval_core::splat::io::{format_pose_file, write_splat_file};
use simeval_core::splat::{render, Camera};
use simeval_core::synthetic;
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

/// Similarity taking F0 into the fixture's reconstruction frame.
pub fn recon_frame() -> Sim3 {
    Sim3::new(0.8, Rotation::from_euler_angles(0.1, -0.05, 0.7), Vec3::new(0.3, -0.2, 0.1))
}

fn put(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).with_context(|| dir.display().to_string())?;
    }
    std::fs::write(path, bytes).with_context(|| path.display().to_string())
}

pub fn write_fixture(out: &Path, width: u32, height: u32) -> Result<()> {
    std::fs::create_dir_all(out).with_context(|| out.display().to_string())?;
    write_plane(&out.join("plane"))?;
    write_robot(&out.join("robot"))?;

    let parts = synthetic::pick_place_parts(width, height);
    let bg = out.join("bg");
    write_background(&bg, &parts.background)?;
    let objs = out.join("objs");
    let mut dirs = BTreeMap::new();
    for a in &parts.assets {
        dirs.insert(a.id.clone(), write_asset(&objs, a)?);
    }
    let bundle = out.join("robot_bundle");
    write_bundle(&bundle, &parts.robot.art)?;

    // relative paths and no hashes, so the directory can move and be edited
    let mut desc = SceneDescriptor::describe(&parts, &bg, &bundle, &dirs)?;
    desc.background.path = "bg".into();
    desc.background.sha256 = None;
    desc.robot.bundle = "robot_bundle".into();
    desc.robot.sha256 = None;
    for a in &mut desc.assets {
        a.path = format!("objs/{}", a.id);
        a.sha256 = None;
    }
    save_descriptor(&out.join("scene.psd"), &desc)?;
    put(&out.join("traj.csv"), recording().to_csv())?;
    crate::progress::emit("fixture.done", serde_json::json!({ "out": out }));
    Ok(())
}

fn write_plane(dir: &Path) -> Result<()> {
    let fx = synthetic::plane_fixture(0);
    let t = recon_frame();
    let mut cams: Vec<(String, Camera)> = Vec::new();
    let mut board = String::from("# frame_id x y z (board frame, m)\n");
    for (i, v) in fx.views.iter().enumerate() {
        let id = format!("view_{i:02}");
        let png = render(&fx.truth, &v.camera)?.to_png();
        put(&dir.join("images").join(format!("{id}.png")), png)?;
        let c = v.camera.center();
        writeln!(board, "{id} {:.17e} {:.17e} {:.17e}", c.x, c.y, c.z)?;
        cams.push((id, t.apply_camera(&v.camera)));
    }
    put(&dir.join("poses.txt"), format_pose_file(&cams))?;
    put(&dir.join("board.txt"), board)?;
    let mut init = t.apply_scene(&fx.init);
    init.frame_label = "recon".into();
    write_splat_file(&dir.join("init.pspl"), &init).context("plane/init.pspl")?;
    Ok(())
}

fn write_robot(dir: &Path) -> Result<()> {
    let model = synthetic::robot_model();
    let q = synthetic::robot_q_scan();
    put(&dir.join("robot.xml"), synthetic::ROBOT_URDF)?;
    let (splats, _) = synthetic::robot_splats_labelled(&model, &q, 0.02, 0.005);
    write_splat_file(&dir.join("robot.pspl"), &splats).context("robot/robot.pspl")?;
    let qs: Vec<String> = q.iter().map(|v| format!("{v:.17e}")).collect();
    put(&dir.join("qscan.txt"), qs.join(" ") + "\n")?;
    for (name, mesh) in synthetic::robot_link_meshes(&model) {
        put(&dir.join("link_meshes").join(format!("{name}.obj")), mesh.to_obj())?;
    }
    Ok(())
}

/// Seven-joint trajectory tracked with a small lag and a deterministic ripple.
fn recording() -> Recording {
    let dt = 1.0 / 15.0;
    let n = 120;
    let mut rec = Recording {
        time: Vec::with_capacity(n),
        commanded: Vec::with_capacity(n),
        achieved: Vec::with_capacity(n),
    };
    for i in 0..n {
        let t = i as f64 * dt;
        let cmd: Vec<f64> = (0..7).map(|j| 0.4 * (0.8 * t + j as f64).sin()).collect();
        let ach: Vec<f64> = (0..7)
            .map(|j| 0.4 * (0.8 * (t - dt) + j as f64).sin() + 1e-3 * (37.0 * t + 3.0 * j as f64).sin())
            .collect();
        rec.time.push(t);
        rec.commanded.push(cmd);
        rec.achieved.push(ach);
    }
    rec
}

/// Paths of the files [`write_fixture`] produces, for tests and docs.
pub fn layout(out: &Path) -> Vec<PathBuf> {
    [
        "plane/poses.txt",
        "plane/init.pspl",
        "plane/board.txt",
        "robot/robot.xml",
        "robot/robot.pspl",
        "robot/qscan.txt",
        "scene.psd",
        "traj.csv",
    ]
    .iter()
    .map(|p| out.join(p))
    .collect()
}
