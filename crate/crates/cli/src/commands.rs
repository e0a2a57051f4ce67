//! Subcommand implementations. Each returns an error for exit code 1.

use crate::cli::*;
use crate::progress::emit;
use anyhow::{anyhow, bail, Context, Result};
use serde_json::json;
use simeval_core::align::{estimate_sim3, CorrespondenceSet};
use simeval_core::articulation::{assign_splats_to_links, parse_robot_model, write_bundle};
use simeval_core::dataset::{episode_from_record, mixture_stats, EpisodeDataset, MixedSampler, MixtureSpec, SourceTag};
use simeval_core::eval::{
    replay_error_analysis, run_episode, run_suite_with, write_record, EpisodeConfig, Policy, Recording, ServoConfig,
    SuiteScene,
};
use simeval_core::math::{Aabb, Vec3};
use simeval_core::metrics::{build_report, ingest_scores, suite_rows, write_report, ScoreTable, Source};
use simeval_core::recon::{
    extract_mesh, fuse_tsdf, optimize_scene, random_init, ImageRgb, ObjectiveConfig, ReconConfig, TriangleMesh, View,
};
use simeval_core::scene::{load_scene, save_descriptor, LoadedScene, Roots, SceneDescriptor};
use simeval_core::splat::io::{format_pose_file, parse_point_file, parse_pose_file, read_splat_file, write_splat_file};
use simeval_core::splat::{render, Camera};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Duration;

pub fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Reconstruct(a) => reconstruct(a),
        Command::ExtractMesh(a) => extract(a),
        Command::Align(a) => align(a),
        Command::Articulate(a) => articulate(a),
        Command::Compose(a) => compose(a),
        Command::Evaluate(a) => evaluate(a),
        Command::ReplayAnalyze(a) => replay(a),
        Command::Metrics(a) => metrics(a),
        Command::Dataset { command } => dataset(command),
        Command::Serve(a) => crate::server::serve(a),
        Command::ServePolicy(a) => crate::policy_server::serve(a),
        Command::Fixture(a) => crate::fixture::write_fixture(&a.out, a.width, a.height),
    }
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    std::fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn write_splats(path: &Path, scene: &simeval_core::splat::SplatScene) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    write_splat_file(path, scene).with_context(|| path.display().to_string())
}

fn read_poses(path: &Path) -> Result<Vec<(String, Camera)>> {
    let cams = parse_pose_file(&read_text(path)?).with_context(|| path.display().to_string())?;
    if cams.is_empty() {
        bail!("{}: no cameras", path.display());
    }
    Ok(cams)
}

fn reconstruct(a: ReconstructArgs) -> Result<()> {
    let cams = read_poses(&a.poses)?;
    let mut views = Vec::with_capacity(cams.len());
    for (id, cam) in &cams {
        let path = a.images.join(format!("{id}.png"));
        let img = image::open(&path).with_context(|| path.display().to_string())?.to_rgb8();
        if (img.width(), img.height()) != (cam.width, cam.height) {
            bail!(
                "{}: image is {}x{} but camera `{id}` is {}x{}",
                path.display(),
                img.width(),
                img.height(),
                cam.width,
                cam.height
            );
        }
        views.push(View {
            image: ImageRgb::from_rgb8(&img),
            camera: cam.clone(),
        });
    }
    let init = match &a.init {
        Some(p) => read_splat_file(p).with_context(|| p.display().to_string())?,
        None => {
            let only: Vec<Camera> = cams.iter().map(|c| c.1.clone()).collect();
            random_init(&only, a.count, &a.frame, a.seed)?
        }
    };
    emit("reconstruct.start", json!({ "views": views.len(), "splats": init.len(), "iterations": a.iters }));
    let cfg = ReconConfig {
        iterations: a.iters,
        objective: ObjectiveConfig {
            lambda_dist: a.lambda_dist,
            lambda_norm: a.lambda_norm,
            ..ObjectiveConfig::default()
        },
        seed: a.seed,
        ..ReconConfig::default()
    };
    let result = optimize_scene(&views, &init, &cfg)?;
    let mut scene = result.scene;
    scene.frame_label = a.frame.clone();
    write_splats(&a.out, &scene)?;
    let first = result.history.first().map(|l| l.photometric);
    emit(
        "reconstruct.done",
        json!({ "initial_photometric": first, "final_photometric": result.final_loss.photometric, "out": a.out }),
    );
    Ok(())
}

fn extract(a: ExtractMeshArgs) -> Result<()> {
    let scene = read_splat_file(&a.scene).with_context(|| a.scene.display().to_string())?;
    let cams: Vec<Camera> = read_poses(&a.poses)?.into_iter().map(|c| c.1).collect();
    let bounds = match &a.bounds {
        Some(b) => Aabb::new([b[0], b[1], b[2]].into(), [b[3], b[4], b[5]].into()),
        None => {
            let mut bb = Aabb::empty();
            for p in &scene.primitives {
                let r = p.scale[0].max(p.scale[1]);
                bb.grow(&(p.center - Vec3::repeat(r)));
                bb.grow(&(p.center + Vec3::repeat(r)));
            }
            if bb.is_empty() {
                bail!("{}: scene has no splats", a.scene.display());
            }
            let pad = Vec3::repeat(2.0 * a.tau);
            Aabb::new(bb.min - pad, bb.max + pad)
        }
    };
    let vol = fuse_tsdf(&scene, &cams, a.tau, a.voxel, &bounds)?;
    if let Some(dump) = &a.tsdf_dump {
        let (raw, header) = vol.debug_dump();
        write_file(dump, raw)?;
        write_file(&dump.with_extension("txt"), header)?;
    }
    let mut mesh = extract_mesh(&vol);
    mesh.cleanup();
    write_mesh(&a.out, &mesh)?;
    emit(
        "extract_mesh.done",
        json!({ "vertices": mesh.vertices.len(), "triangles": mesh.triangles.len(), "dims": vol.dims, "out": a.out }),
    );
    Ok(())
}

fn write_mesh(path: &Path, mesh: &TriangleMesh) -> Result<()> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("ply") => write_file(path, mesh.to_ply()),
        Some("obj") => write_file(path, mesh.to_obj()),
        _ => bail!("{}: mesh output must end in .obj or .ply", path.display()),
    }
}

fn align(a: AlignArgs) -> Result<()> {
    let cams = read_poses(&a.poses)?;
    let file = std::fs::File::open(&a.board_coords).with_context(|| a.board_coords.display().to_string())?;
    let board = parse_point_file(std::io::BufReader::new(file)).with_context(|| a.board_coords.display().to_string())?;
    let corr = CorrespondenceSet::from_cameras(&cams, &board)?;
    let (t, rms) = estimate_sim3(&corr)?;
    let scene = read_splat_file(&a.scene).with_context(|| a.scene.display().to_string())?;
    write_splats(&a.out, &t.apply_scene(&scene))?;
    if let Some(p) = &a.poses_out {
        let moved: Vec<(String, Camera)> = cams.iter().map(|(id, c)| (id.clone(), t.apply_camera(c))).collect();
        write_file(p, format_pose_file(&moved))?;
    }
    if let (Some(src), Some(dst)) = (&a.mesh, &a.mesh_out) {
        let mesh = TriangleMesh::from_obj(&read_text(src)?).with_context(|| src.display().to_string())?;
        write_mesh(dst, &t.apply_mesh(&mesh))?;
    }
    let (axis, angle) = t.rotation.axis_angle().map_or(([0.0; 3], 0.0), |(ax, an)| ([ax.x, ax.y, ax.z], an));
    emit(
        "align.done",
        json!({
            "pairs": corr.pairs.len(),
            "rms": rms,
            "scale": t.scale,
            "axis": axis,
            "angle_rad": angle,
            "translation": [t.translation.x, t.translation.y, t.translation.z],
        }),
    );
    Ok(())
}

fn parse_numbers(text: &str) -> Result<Vec<f64>> {
    text.split(|c: char| c.is_whitespace() || c == ',')
        .filter(|t| !t.is_empty())
        .map(|t| t.parse::<f64>().map_err(|_| anyhow!("not a number: `{t}`")))
        .collect()
}

fn articulate(a: ArticulateArgs) -> Result<()> {
    let bytes = std::fs::read(&a.robot).with_context(|| a.robot.display().to_string())?;
    let model = parse_robot_model(&bytes)?;
    let splats = read_splat_file(&a.splats).with_context(|| a.splats.display().to_string())?;
    let q = parse_numbers(&read_text(&a.qscan)?).with_context(|| a.qscan.display().to_string())?;
    if q.len() != model.dof() {
        bail!("{}: {} joint values for a robot with {} joints", a.qscan.display(), q.len(), model.dof());
    }
    let mut meshes = BTreeMap::new();
    if let Some(dir) = &a.link_meshes {
        for link in &model.links {
            let path = dir.join(format!("{}.obj", link.name));
            if path.exists() {
                let m = TriangleMesh::from_obj(&read_text(&path)?).with_context(|| path.display().to_string())?;
                meshes.insert(link.name.clone(), m);
            }
        }
    }
    let art = assign_splats_to_links(&splats, &model, &q, &meshes, a.cutoff)?;
    write_bundle(&a.out, &art)?;
    emit("articulate.done", json!({ "splats": art.len(), "dropped": splats.len() - art.len(), "per_link": art.counts() }));
    Ok(())
}

fn roots(background: Option<PathBuf>, robot: Option<PathBuf>, objects: Option<PathBuf>) -> Roots {
    Roots {
        background,
        robot,
        objects,
    }
}

fn rel(base: &Path, p: &str) -> PathBuf {
    let p = Path::new(p);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn absolute(p: &Path) -> PathBuf {
    std::fs::canonicalize(p).unwrap_or_else(|_| p.to_path_buf())
}

fn compose(a: ComposeArgs) -> Result<()> {
    let text = read_text(&a.spec)?;
    let desc = SceneDescriptor::from_toml(&text)?;
    let base = a.spec.parent().unwrap_or(Path::new(".")).to_path_buf();
    let r = roots(a.background.clone(), a.robot.clone(), a.objects.clone());
    let parts = desc.resolve(&base, &r)?;
    let violations = parts.violations();
    if !violations.is_empty() {
        emit("compose.invalid", json!({ "violations": violations }));
        bail!("scene is invalid:\n  {}", violations.join("\n  "));
    }
    let scene = simeval_core::scene::compose(parts.clone())?;
    emit(
        "compose.valid",
        json!({
            "placements": scene.placements.len(),
            "cameras": scene.cameras.len(),
            "rubric_steps": scene.rubric.len(),
            "splats": scene.flattened_len(),
        }),
    );
    if a.validate {
        return Ok(());
    }
    if let Some(out) = &a.out {
        let bg = absolute(&a.background.clone().unwrap_or_else(|| rel(&base, &desc.background.path)));
        let robot = absolute(&a.robot.clone().unwrap_or_else(|| rel(&base, &desc.robot.bundle)));
        let dirs: BTreeMap<String, PathBuf> = desc
            .assets
            .iter()
            .map(|s| {
                let d = match &a.objects {
                    Some(root) => root.join(&s.id),
                    None => rel(&base, &s.path),
                };
                (s.id.clone(), absolute(&d))
            })
            .collect();
        let fresh = SceneDescriptor::describe(&parts, &bg, &robot, &dirs)?;
        save_descriptor(out, &fresh)?;
        emit("compose.saved", json!({ "out": out }));
    }
    if let Some(dir) = &a.preview {
        std::fs::create_dir_all(dir).with_context(|| dir.display().to_string())?;
        let flat = scene.flatten(scene.q_scan(), &scene.nominal_states())?;
        for c in &scene.cameras {
            write_file(&dir.join(format!("{}.png", c.name)), render(&flat, &c.camera)?.to_png())?;
        }
        let wrist = scene.wrist_camera(scene.q_scan())?;
        write_file(&dir.join(format!("{}.png", scene.wrist.name)), render(&flat, &wrist)?.to_png())?;
    }
    Ok(())
}

fn parse_source(s: &str) -> Result<Source> {
    match s {
        "sim" => Ok(Source::Sim),
        "real" => Ok(Source::Real),
        other => bail!("source must be `real` or `sim`, got `{other}`"),
    }
}

fn slug(s: &str) -> String {
    s.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' }).collect()
}

/// Environment names from descriptor stems, made unique.
fn scene_names(paths: &[PathBuf]) -> Vec<String> {
    let mut seen: BTreeMap<String, usize> = BTreeMap::new();
    paths
        .iter()
        .map(|p| {
            let stem = p.file_stem().map_or("scene".into(), |s| s.to_string_lossy().into_owned());
            let n = seen.entry(stem.clone()).or_insert(0);
            *n += 1;
            if *n == 1 {
                stem
            } else {
                format!("{stem}_{n}")
            }
        })
        .collect()
}

pub fn load_scenes(paths: &[PathBuf]) -> Result<Vec<LoadedScene>> {
    paths
        .iter()
        .map(|p| load_scene(p, &Roots::default()).with_context(|| p.display().to_string()))
        .collect()
}

fn evaluate(a: EvaluateArgs) -> Result<()> {
    let source = parse_source(&a.source)?;
    let loaded = load_scenes(&a.scene)?;
    let names = scene_names(&a.scene);
    let timeout = Duration::from_secs_f64(a.timeout);
    let cfg = EpisodeConfig {
        max_steps: a.max_steps,
        servo: ServoConfig {
            v_max: a.v_max,
            ..ServoConfig::default()
        },
        replan_interval: a.replan,
        joint_noise: a.joint_noise,
        save_renders: a.save_renders,
        q_init: None,
    };
    std::fs::create_dir_all(&a.out).with_context(|| a.out.display().to_string())?;
    let policy_names: Vec<String> = a.policy.iter().map(|p| p.to_string()).collect();
    let episodes_dir = a.out.join("episodes");

    // one suite per scene so rubric-driven policies see their own scene
    let mut result: Option<simeval_core::eval::SuiteResult> = None;
    for (ls, name) in loaded.iter().zip(&names) {
        let mut policies: Vec<Box<dyn Policy>> = a.policy.iter().map(|p| p.build(&ls.scene, timeout)).collect::<Result<_>>()?;
        let suite = [SuiteScene {
            name: name.clone(),
            scene: &ls.scene,
            hash: ls.hash.clone(),
        }];
        let mut on_episode = |pi: usize, _: usize, rec: &simeval_core::eval::EpisodeRecord| {
            let dir = episodes_dir
                .join(slug(name))
                .join(format!("{pi:02}_{}", slug(&policy_names[pi])))
                .join(format!("seed_{:04}", rec.seed));
            write_record(&dir, rec)?;
            emit(
                "evaluate.episode",
                json!({
                    "scene": name,
                    "policy": policy_names[pi],
                    "seed": rec.seed,
                    "score": rec.score,
                    "steps": rec.steps.len(),
                    "termination": rec.termination,
                }),
            );
            Ok(())
        };
        let r = run_suite_with(&suite, &mut policies, a.episodes, &cfg, &mut on_episode)?;
        result = Some(match result {
            None => r,
            Some(mut acc) => {
                acc.scenes.extend(r.scenes);
                for p in 0..acc.policies.len() {
                    acc.scores[p].extend(r.scores[p].iter().copied());
                    acc.episodes[p].extend(r.episodes[p].iter().copied());
                    acc.infrastructure_failures[p].extend(r.infrastructure_failures[p].iter().copied());
                    acc.episode_scores[p].extend(r.episode_scores[p].iter().cloned());
                }
                acc
            }
        });
    }
    let mut result = result.expect("at least one scene");
    result.policies = policy_names;
    let rows = suite_rows(&result, source);
    let table = ScoreTable::from_rows("scores.csv", &rows)?;
    write_file(&a.out.join("scores.csv"), table.to_csv())?;
    let summary = json!({
        "scenes": names,
        "scene_hashes": loaded.iter().map(|l| l.hash.clone()).collect::<Vec<_>>(),
        "config": cfg,
        "episodes_per_cell": a.episodes,
        "result": result,
    });
    write_file(&a.out.join("summary.json"), serde_json::to_string_pretty(&summary)?)?;
    let failures: usize = result.infrastructure_failures.iter().flatten().sum();
    emit("evaluate.done", json!({ "out": a.out, "infrastructure_failures": failures }));
    if result.scores.iter().flatten().any(|s| s.is_none()) {
        bail!("some (policy, scene) cells have no scored episodes; see summary.json");
    }
    Ok(())
}

fn replay(a: ReplayArgs) -> Result<()> {
    let rec = Recording::from_csv(&read_text(&a.recording)?).with_context(|| a.recording.display().to_string())?;
    let curve = replay_error_analysis(&rec, a.mode, a.v_max)?;
    write_file(&a.out, curve.to_csv())?;
    let last = curve.time.len().saturating_sub(1);
    emit(
        "replay.done",
        json!({ "mode": format!("{:?}", a.mode).to_lowercase(), "steps": curve.time.len(), "final_mean_error": curve.mean_error(last) }),
    );
    Ok(())
}

fn metrics(a: MetricsArgs) -> Result<()> {
    let table = ingest_scores(&a.scores)?;
    let report = build_report(&table, a.bootstrap)?;
    if report.aggregate.policies.is_empty() {
        bail!("no policy has both real and sim scores in every environment");
    }
    if !report.missing.is_empty() {
        emit("metrics.incomplete", json!({ "missing": report.missing }));
    }
    match &a.out {
        Some(dir) => {
            write_report(dir, &report)?;
            emit(
                "metrics.done",
                json!({ "out": dir, "pearson": report.aggregate.pearson, "mmrv": report.aggregate.mmrv }),
            );
        }
        None => print!("{}", report.to_text()),
    }
    Ok(())
}

fn dataset(cmd: DatasetCommand) -> Result<()> {
    match cmd {
        DatasetCommand::Write(a) => {
            let tag: SourceTag = a.source.parse()?;
            let ls = load_scene(&a.scene, &Roots::default()).with_context(|| a.scene.display().to_string())?;
            let mut policy = a.policy.build(&ls.scene, Duration::from_secs(10))?;
            let ds = EpisodeDataset::create(&a.root)?;
            let cfg = EpisodeConfig {
                max_steps: a.max_steps,
                save_renders: true,
                ..EpisodeConfig::default()
            };
            for seed in a.first_seed..a.first_seed + a.episodes as u64 {
                let rec = run_episode(&ls.scene, &ls.hash, policy.as_mut(), seed, &cfg)?;
                if rec.is_infrastructure_failure() {
                    bail!("episode {seed}: {:?}", rec.termination);
                }
                let steps = episode_from_record(&ds, &ls.scene, &rec)?;
                let id = ds.write_episode(&ls.scene.rubric.instruction, tag, &steps)?;
                emit("dataset.episode", json!({ "id": id, "seed": seed, "steps": steps.len(), "score": rec.score }));
            }
            Ok(())
        }
        DatasetCommand::Inspect { root } => {
            let ds = EpisodeDataset::open(&root)?;
            let eps = ds.episodes()?;
            let mut by_source: BTreeMap<String, (usize, usize)> = BTreeMap::new();
            for e in &eps {
                let c = by_source.entry(e.source.to_string()).or_default();
                c.0 += 1;
                c.1 += e.steps;
            }
            let summary = json!({
                "episodes": eps.len(),
                "steps": eps.iter().map(|e| e.steps).sum::<usize>(),
                "by_source": by_source.iter().map(|(k, (n, s))| (k.clone(), json!({ "episodes": n, "steps": s }))).collect::<serde_json::Map<_, _>>(),
                "manifest": eps,
            });
            println!("{}", serde_json::to_string_pretty(&summary)?);
            Ok(())
        }
        DatasetCommand::Sample(a) => {
            let open = |p: &Option<PathBuf>| -> Result<Vec<simeval_core::dataset::EpisodeMeta>> {
                match p {
                    Some(p) => Ok(EpisodeDataset::open(p)?.episodes()?),
                    None => Ok(Vec::new()),
                }
            };
            let (pre, sim) = (open(&a.pre)?, open(&a.sim)?);
            let spec = MixtureSpec {
                lambda: a.lambda,
                batch_size: a.batch_size,
                seed: a.seed,
            };
            let mut sampler = MixedSampler::from_manifests(&pre, &sim, spec)?;
            if let Some(out) = &a.out {
                let mut w = csv::Writer::from_writer(Vec::new());
                w.write_record(["batch", "source", "episode", "step"])?;
                let mut preview = MixedSampler::from_manifests(&pre, &sim, spec)?;
                for b in 0..4 {
                    for s in preview.next_batch() {
                        w.write_record([b.to_string(), s.source.to_string(), s.episode, s.step.to_string()])?;
                    }
                }
                write_file(out, w.into_inner()?)?;
            }
            let stats = mixture_stats(&mut sampler, a.n)?;
            let sigma = (a.lambda * (1.0 - a.lambda) / a.n as f64).sqrt();
            println!(
                "{}",
                serde_json::to_string_pretty(&json!({
                    "n": stats.n,
                    "lambda": a.lambda,
                    "seed": a.seed,
                    "pretrain": stats.pretrain,
                    "sim": stats.sim,
                    "sim_fraction": stats.sim_fraction,
                    "binomial_sigma": sigma,
                    "within_3_sigma": (stats.sim_fraction - a.lambda).abs() <= 3.0 * sigma,
                }))?
            );
            Ok(())
        }
    }
}
