use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_simeval"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn simeval")
}

fn ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(
        out.status.success(),
        "simeval {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn fixture_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Every stderr line parses as a JSON object with an `event`.
fn events(stderr: &[u8]) -> Vec<serde_json::Value> {
    String::from_utf8_lossy(stderr)
        .lines()
        .map(|l| serde_json::from_str::<serde_json::Value>(l).unwrap_or_else(|_| panic!("not JSON: {l}")))
        .inspect(|v| assert!(v["event"].is_string()))
        .collect()
}

#[test]
fn metrics_on_perfect_scores_reports_r_one() {
    let out = ok(&["metrics", "--scores", s(&fixture_dir().join("perfect.csv")), "--bootstrap", "200"]);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.starts_with("[aggregate]\npolicies = 4\npearson_r = 1.0000\n"), "{text}");
    assert!(text.contains("mmrv = 0.0000"));
}

#[test]
fn unknown_subcommand_and_flag_exit_2() {
    assert_eq!(run(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(run(&["metrics", "--scores", "x.csv", "--colour"]).status.code(), Some(2));
    assert_eq!(run(&["evaluate", "--scene", "a.psd", "--policy", "scripted:wizard", "--out", "x"]).status.code(), Some(2));
}

#[test]
fn module_errors_exit_1_with_a_structured_message() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["metrics", "--scores", s(&dir.path().join("missing.csv"))]);
    assert_eq!(out.status.code(), Some(1));
    let ev = events(&out.stderr);
    let last = ev.last().unwrap();
    assert_eq!(last["event"], "error");
    assert!(last["message"].as_str().unwrap().contains("missing.csv"));

    // only sim rows: nothing to compare
    let sim_only = dir.path().join("sim.csv");
    std::fs::write(&sim_only, "policy,environment,source,score,episodes\na,e,sim,0.5,3\nb,e,sim,0.2,3\n").unwrap();
    assert_eq!(run(&["metrics", "--scores", s(&sim_only)]).status.code(), Some(1));
}

fn wait_for_addr(child: &mut std::process::Child) -> (String, std::thread::JoinHandle<()>) {
    let stderr = child.stderr.take().unwrap();
    let mut lines = BufReader::new(stderr).lines();
    let addr = loop {
        let line = lines.next().expect("server exited before listening").unwrap();
        let v: serde_json::Value = serde_json::from_str(&line).unwrap();
        if v["event"] == "serve_policy.listening" {
            break v["addr"].as_str().unwrap().to_string();
        }
    };
    // keep draining so the server never blocks on a full pipe
    let drain = std::thread::spawn(move || for _ in lines {});
    (addr, drain)
}

#[test]
fn full_pipeline_on_the_synthetic_fixture() {
    let dir = tempfile::tempdir().unwrap();
    let fx = dir.path().join("fx");
    let out = dir.path().join("out");
    let p = |rel: &str| fx.join(rel);
    let o = |rel: &str| out.join(rel);
    ok(&["fixture", "--out", s(&fx)]);

    let r = ok(&[
        "reconstruct", "--images", s(&p("plane/images")), "--poses", s(&p("plane/poses.txt")),
        "--init", s(&p("plane/init.pspl")), "--out", s(&o("recon.pspl")), "--iters", "120",
    ]);
    let done = events(&r.stderr).into_iter().find(|e| e["event"] == "reconstruct.done").unwrap();
    assert!(done["final_photometric"].as_f64().unwrap() < 0.2 * done["initial_photometric"].as_f64().unwrap());

    let r = ok(&[
        "align", "--poses", s(&p("plane/poses.txt")), "--board-coords", s(&p("plane/board.txt")),
        "--scene", s(&o("recon.pspl")), "--out", s(&o("f0.pspl")), "--poses-out", s(&o("poses_f0.txt")),
    ]);
    let done = events(&r.stderr).into_iter().find(|e| e["event"] == "align.done").unwrap();
    assert!((done["scale"].as_f64().unwrap() - 1.25).abs() < 1e-9, "{done}");

    ok(&[
        "extract-mesh", "--scene", s(&o("f0.pspl")), "--poses", s(&o("poses_f0.txt")),
        "--voxel", "0.01", "--tau", "0.03", "--out", s(&o("plane.obj")),
    ]);
    assert!(std::fs::read_to_string(o("plane.obj")).unwrap().lines().any(|l| l.starts_with("f ")));

    ok(&[
        "articulate", "--robot", s(&p("robot/robot.xml")), "--splats", s(&p("robot/robot.pspl")),
        "--qscan", s(&p("robot/qscan.txt")), "--link-meshes", s(&p("robot/link_meshes")), "--out", s(&o("bundle")),
    ]);
    ok(&["compose", "--spec", s(&p("scene.psd")), "--robot", s(&o("bundle")), "--validate"]);
    ok(&["compose", "--spec", s(&p("scene.psd")), "--robot", s(&o("bundle")), "--out", s(&o("scene.psd"))]);
    // the written descriptor is hashed and composes on its own
    assert!(std::fs::read_to_string(o("scene.psd")).unwrap().contains("sha256"));
    ok(&["compose", "--spec", s(&o("scene.psd")), "--validate"]);

    let policies = ["scripted:oracle", "scripted:one_item", "scripted:lift_only", "zero"];
    let (scene_out, sim_dir, real_dir) = (o("scene.psd"), o("sim"), o("real"));
    let mut args = vec!["evaluate", "--scene", s(&scene_out), "--episodes", "2", "--max-steps", "300"];
    for pol in &policies {
        args.extend(["--policy", pol]);
    }
    let mut sim = args.clone();
    sim.extend(["--out", s(&sim_dir)]);
    ok(&sim);
    let mut real = args.clone();
    real.extend(["--out", s(&real_dir), "--source", "real", "--joint-noise", "2e-4"]);
    ok(&real);
    let scores = std::fs::read_to_string(o("sim/scores.csv")).unwrap();
    assert!(scores.contains("scripted:oracle,scene,sim,1.0,2"), "{scores}");
    let manifest = o("sim/episodes/scene/00_scripted_oracle/seed_0000/manifest.json");
    assert!(manifest.exists());

    ok(&[
        "metrics", "--scores", s(&o("sim/scores.csv")), s(&o("real/scores.csv")),
        "--out", s(&o("report")), "--bootstrap", "500",
    ]);
    for f in ["report.txt", "report.json", "plot.csv"] {
        assert!(o("report").join(f).exists(), "{f}");
    }
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(o("report/report.json")).unwrap()).unwrap();
    assert!(report["aggregate"]["pearson"].as_f64().unwrap() > 0.9, "{report}");

    ok(&["replay-analyze", "--recording", s(&p("traj.csv")), "--mode", "velocity", "--out", s(&o("err.csv"))]);
    assert!(std::fs::read_to_string(o("err.csv")).unwrap().lines().count() > 100);
}

#[test]
fn dataset_commands_write_inspect_and_sample() {
    let dir = tempfile::tempdir().unwrap();
    let fx = dir.path().join("fx");
    ok(&["fixture", "--out", s(&fx), "--width", "32", "--height", "24"]);
    let scene = fx.join("scene.psd");
    let (sim, pre) = (dir.path().join("sim"), dir.path().join("pre"));
    ok(&["dataset", "write", "--root", s(&sim), "--scene", s(&scene), "--policy", "scripted:oracle", "--max-steps", "40"]);
    ok(&[
        "dataset", "write", "--root", s(&pre), "--scene", s(&scene), "--policy", "zero",
        "--max-steps", "20", "--source", "pretrain",
    ]);
    let inspect: serde_json::Value = serde_json::from_slice(&ok(&["dataset", "inspect", "--root", s(&sim)]).stdout).unwrap();
    assert_eq!(inspect["episodes"], 1);
    assert_eq!(inspect["steps"], 40);

    let sample = |seed: &str| {
        let out = ok(&[
            "dataset", "sample", "--pre", s(&pre), "--sim", s(&sim), "--lambda", "0.1", "--n", "100000", "--seed", seed,
        ]);
        serde_json::from_slice::<serde_json::Value>(&out.stdout).unwrap()
    };
    let a = sample("7");
    assert_eq!(a["within_3_sigma"], true);
    assert_eq!(a, sample("7"));
    assert_ne!(a["sim"], sample("8")["sim"]);

    // a sim-tagged dataset cannot stand in for pretraining data
    let out = run(&["dataset", "sample", "--pre", s(&sim), "--sim", s(&sim), "--n", "10"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn remote_scripted_policy_solves_the_task_over_http() {
    let dir = tempfile::tempdir().unwrap();
    let fx = dir.path().join("fx");
    ok(&["fixture", "--out", s(&fx), "--width", "32", "--height", "24"]);
    let scene = fx.join("scene.psd");
    let mut server = bin()
        .args(["serve-policy", "--policy", "scripted:oracle", "--scene", s(&scene), "--port", "0"])
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    let (addr, _drain) = wait_for_addr(&mut server);
    let out = run(&[
        "evaluate", "--scene", s(&scene), "--policy", &format!("http://{addr}"),
        "--episodes", "1", "--out", s(&dir.path().join("runs")),
    ]);
    server.kill().unwrap();
    server.wait().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let scores = std::fs::read_to_string(dir.path().join("runs/scores.csv")).unwrap();
    assert!(scores.lines().nth(1).unwrap().ends_with(",sim,1.0,1"), "{scores}");
}

#[test]
fn unreachable_policy_is_reported_and_fails_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let fx = dir.path().join("fx");
    ok(&["fixture", "--out", s(&fx), "--width", "32", "--height", "24"]);
    let out = run(&[
        "evaluate", "--scene", s(&fx.join("scene.psd")), "--policy", "http://127.0.0.1:9",
        "--episodes", "1", "--timeout", "1", "--out", s(&dir.path().join("runs")),
    ]);
    assert_eq!(out.status.code(), Some(1));
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("runs/summary.json")).unwrap()).unwrap();
    assert_eq!(summary["result"]["infrastructure_failures"][0][0], 1);
}
