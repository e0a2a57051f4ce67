use reqwest::blocking::Client;
use reqwest::StatusCode;
use serde_json::{json, Value};
use simeval_cli::server::draft::Library;
use simeval_cli::server::{router, AppState};
use simeval_core::scene::{compose, load_scene, Roots, SceneDescriptor};
use simeval_core::splat::render;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant};

struct Server {
    base: String,
    state: Arc<AppState>,
    dir: tempfile::TempDir,
    client: Client,
}

impl Server {
    fn start() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let fx = dir.path().join("fx");
        simeval_cli::fixture::write_fixture(&fx, 32, 24).unwrap();
        let lib = Library::load(&fx.join("scene.psd"), Some(&fx.join("objs"))).unwrap();
        let state = Arc::new(AppState::new(lib, Some(dir.path().join("sessions"))));
        let app = router(state.clone());
        let (tx, rx) = std::sync::mpsc::channel();
        std::thread::spawn(move || {
            let rt = tokio::runtime::Runtime::new().unwrap();
            rt.block_on(async move {
                let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
                tx.send(listener.local_addr().unwrap()).unwrap();
                axum::serve(listener, app).await.unwrap();
            });
        });
        let addr = rx.recv().unwrap();
        Self {
            base: format!("http://{addr}"),
            state,
            dir,
            client: Client::builder().timeout(Duration::from_secs(120)).build().unwrap(),
        }
    }

    fn url(&self, path: &str) -> String {
        format!("{}{path}", self.base)
    }

    fn get(&self, path: &str) -> (StatusCode, Value) {
        let r = self.client.get(self.url(path)).send().unwrap();
        (r.status(), r.json().unwrap())
    }

    fn post(&self, path: &str, body: Value) -> (StatusCode, Value) {
        let r = self.client.post(self.url(path)).json(&body).send().unwrap();
        (r.status(), r.json().unwrap())
    }

    fn post_bytes(&self, path: &str, body: Value) -> (StatusCode, Vec<u8>) {
        let r = self.client.post(self.url(path)).json(&body).send().unwrap();
        (r.status(), r.bytes().unwrap().to_vec())
    }

    fn session(&self) -> String {
        let (st, v) = self.post("/session", json!({}));
        assert_eq!(st, StatusCode::OK);
        v["session"].as_str().unwrap().to_string()
    }

    fn fixture(&self) -> PathBuf {
        self.dir.path().join("fx")
    }
}

fn pose(x: f64, y: f64, z: f64) -> Value {
    json!({ "translation": [x, y, z], "rotation": [1.0, 0.0, 0.0, 0.0] })
}

#[test]
fn assets_are_listed_with_bounds_and_thumbnails() {
    let srv = Server::start();
    let (st, v) = srv.get("/assets");
    assert_eq!(st, StatusCode::OK);
    let assets = v["assets"].as_array().unwrap();
    let ids: Vec<&str> = assets.iter().map(|a| a["id"].as_str().unwrap()).collect();
    assert_eq!(ids, ["bin", "red_cube", "yellow_cube"]);
    for a in assets {
        assert_eq!(a["bounds"]["min"].as_array().unwrap().len(), 3);
        let r = srv.client.get(srv.url(a["thumbnail"].as_str().unwrap())).send().unwrap();
        assert_eq!(r.status(), StatusCode::OK);
        assert_eq!(r.headers()["content-type"], "image/png");
        let img = image::load_from_memory(&r.bytes().unwrap()).unwrap();
        assert_eq!((img.width(), img.height()), (96, 96));
    }
    let r = srv.client.get(srv.url("/assets/teapot/thumbnail")).send().unwrap();
    assert_eq!(r.status(), StatusCode::NOT_FOUND);
}

#[test]
fn placing_an_unknown_asset_is_a_structured_404() {
    let srv = Server::start();
    let s = srv.session();
    let (st, v) = srv.post(
        &format!("/scene/{s}/placements"),
        json!({ "op": "upsert", "instance": "cup", "asset": "teapot", "pose": pose(0.5, 0.0, 0.02) }),
    );
    assert_eq!(st, StatusCode::NOT_FOUND);
    assert_eq!(v["error"]["kind"], "unknown_asset");
    assert_eq!(v["error"]["asset"], "teapot");
    // nothing changed
    assert_eq!(srv.get(&format!("/scene/{s}")).1["version"], 0);
    assert_eq!(srv.get("/scene/nope").0, StatusCode::NOT_FOUND);
}

#[test]
fn previews_are_deterministic_and_match_engine_renders() {
    let srv = Server::start();
    let s = srv.session();
    let req = json!({ "session": s, "camera": "front" });
    let (st, a) = srv.post_bytes("/render/preview", req.clone());
    assert_eq!(st, StatusCode::OK);
    let (_, b) = srv.post_bytes("/render/preview", req);
    assert_eq!(a, b);

    let ls = load_scene(&srv.fixture().join("scene.psd"), &Roots::default()).unwrap();
    let flat = ls.scene.flatten(ls.scene.q_scan(), &ls.scene.nominal_states()).unwrap();
    let front = &ls.scene.cameras.iter().find(|c| c.name == "front").unwrap().camera;
    assert_eq!(a, render(&flat, front).unwrap().to_png());
    let wrist = ls.scene.wrist_camera(ls.scene.q_scan()).unwrap();
    let (_, w) = srv.post_bytes("/render/preview", json!({ "session": s, "camera": "wrist" }));
    assert_eq!(w, render(&flat, &wrist).unwrap().to_png());

    let (st, small) = srv.post_bytes("/render/preview", json!({ "session": s, "camera": "front", "resolution": [16, 12] }));
    assert_eq!(st, StatusCode::OK);
    let img = image::load_from_memory(&small).unwrap();
    assert_eq!((img.width(), img.height()), (16, 12));
    let (st, _) = srv.post_bytes("/render/preview", json!({ "session": s, "camera": "ceiling" }));
    assert_eq!(st, StatusCode::NOT_FOUND);
}

#[test]
fn moving_and_undoing_a_placement() {
    let srv = Server::start();
    let s = srv.session();
    let path = format!("/scene/{s}/placements");
    let (_, before) = srv.get(&path);
    let food_a = before["placements"].as_array().unwrap().iter().find(|p| p["instance"] == "food_a").unwrap().clone();
    let x0 = food_a["pose"]["translation"][0].as_f64().unwrap();

    let (st, v) = srv.post(
        &path,
        json!({ "op": "upsert", "instance": "food_a", "asset": "red_cube", "pose": pose(x0 + 0.1, 0.12, 0.015), "expected_version": 0 }),
    );
    assert_eq!(st, StatusCode::OK, "{v}");
    assert_eq!(v["version"], 1);
    let moved = v["draft"]["placements"].as_array().unwrap().iter().find(|p| p["instance"] == "food_a").unwrap().clone();
    assert!((moved["pose"]["translation"][0].as_f64().unwrap() - (x0 + 0.1)).abs() < 1e-12);

    // stale version
    let (st, v) = srv.post(&path, json!({ "op": "remove", "instance": "food_b", "expected_version": 0 }));
    assert_eq!(st, StatusCode::CONFLICT);
    assert_eq!(v["error"]["version"], 1);

    let (st, v) = srv.post(&format!("/scene/{s}/undo"), json!({}));
    assert_eq!(st, StatusCode::OK);
    assert_eq!(v["draft"]["placements"], before["placements"]);
    let (st, _) = srv.post(&format!("/scene/{s}/undo"), json!({}));
    assert_eq!(st, StatusCode::CONFLICT);
}

#[test]
fn idempotency_key_replays_the_first_response() {
    let srv = Server::start();
    let s = srv.session();
    let body = json!({ "op": "upsert", "instance": "food_c", "asset": "red_cube", "pose": pose(0.6, 0.3, 0.015) });
    let send = |key: &str| {
        let r = srv
            .client
            .post(srv.url(&format!("/scene/{s}/placements")))
            .header("Idempotency-Key", key)
            .json(&body)
            .send()
            .unwrap();
        r.json::<Value>().unwrap()
    };
    let first = send("k1");
    let again = send("k1");
    assert_eq!(first, again);
    assert_eq!(srv.get(&format!("/scene/{s}")).1["version"], 1);
    assert_eq!(send("k2")["version"], 2);

    // session creation too
    let mk = || {
        srv.client.post(srv.url("/session")).header("Idempotency-Key", "new").send().unwrap().json::<Value>().unwrap()
    };
    assert_eq!(mk()["session"], mk()["session"]);
}

#[test]
fn rubric_parameters_are_checked() {
    let srv = Server::start();
    let s = srv.session();
    let bad = json!({ "rubric": { "task": "t", "instruction": "i", "steps": [
        { "description": "near", "predicate": { "kind": "near", "subject": "food_a", "other": "bin", "distance": -0.1 } }
    ] } });
    let (st, v) = srv.post(&format!("/scene/{s}/rubric"), bad);
    assert_eq!(st, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(v["error"]["steps"][0]["step"], 0);

    // a reference to an instance that is not placed yet is accepted but flagged
    let dangling = json!({ "rubric": { "task": "t", "instruction": "i", "steps": [
        { "description": "lift", "predicate": { "kind": "lifted", "subject": "mug", "height": 0.05 } },
        { "description": "reach", "predicate": { "kind": "reached", "subject": "food_a", "distance": 0.02 } }
    ] } });
    let (st, v) = srv.post(&format!("/scene/{s}/rubric"), dangling);
    assert_eq!(st, StatusCode::OK);
    assert_eq!(v["draft"]["rubric"]["steps"].as_array().unwrap().len(), 2);
    let violations: Vec<String> = serde_json::from_value(v["violations"].clone()).unwrap();
    assert!(violations.iter().any(|m| m.contains("`mug`")), "{violations:?}");
    let (st, v) = srv.post(&format!("/scene/{s}/save"), json!({ "path": srv.dir.path().join("x.psd") }));
    assert_eq!(st, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(v["error"]["kind"], "invalid_scene");
}

#[test]
fn cameras_bind_to_links_and_saved_scenes_compose() {
    let srv = Server::start();
    let s = srv.session();
    let cam = |name: &str, link: Option<&str>| {
        let mut c = json!({ "name": name, "pose": pose(1.2, 0.4, 0.6), "fx": 30.0, "fy": 30.0, "cx": 16.0, "cy": 12.0, "width": 32, "height": 24 });
        if let Some(l) = link {
            c["wrist_link"] = json!(l);
            c["pose"] = pose(0.05, 0.0, 0.0);
        }
        c
    };
    let (st, v) = srv.post(&format!("/scene/{s}/camera"), cam("grip", Some("elbow_of_nowhere")));
    assert_eq!(st, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(v["error"]["kind"], "unknown_link");
    let mut bad = cam("top", None);
    bad["fx"] = json!(-1.0);
    assert_eq!(srv.post(&format!("/scene/{s}/camera"), bad).0, StatusCode::UNPROCESSABLE_ENTITY);

    let (st, v) = srv.post(&format!("/scene/{s}/camera"), cam("top", None));
    assert_eq!(st, StatusCode::OK);
    assert_eq!(v["draft"]["cameras"].as_array().unwrap().len(), 3);
    let (st, v) = srv.post(&format!("/scene/{s}/camera"), cam("grip", Some("hand")));
    assert_eq!(st, StatusCode::OK);
    assert_eq!(v["draft"]["wrist"]["link"], "hand");
    assert_eq!(v["draft"]["wrist"]["name"], "grip");

    let out = srv.dir.path().join("saved/scene.psd");
    std::fs::create_dir_all(out.parent().unwrap()).unwrap();
    let (st, v) = srv.post(&format!("/scene/{s}/save"), json!({ "path": out }));
    assert_eq!(st, StatusCode::OK, "{v}");
    let desc = SceneDescriptor::from_toml(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert!(desc.assets.iter().all(|a| a.sha256.is_some()));
    let parts = desc.resolve(Path::new("."), &Roots::default()).unwrap();
    assert!(parts.violations().is_empty());
    let scene = compose(parts).unwrap();
    assert_eq!(scene.wrist.name, "grip");
    assert_eq!(srv.get(&format!("/scene/{s}")).1["dirty"], false);

    // drafts are autosaved, and a flush writes them all
    assert!(srv.dir.path().join(format!("sessions/{s}.psd")).exists());
    let s2 = srv.session();
    std::fs::remove_file(srv.dir.path().join(format!("sessions/{s2}.psd"))).unwrap();
    let st8 = srv.state.clone();
    std::thread::spawn(move || st8.flush()).join().unwrap();
    assert!(srv.dir.path().join(format!("sessions/{s2}.psd")).exists());
}

#[test]
fn evaluation_jobs_run_in_the_background() {
    let srv = Server::start();
    let scene = srv.fixture().join("scene.psd");
    let real = srv.dir.path().join("real.csv");
    std::fs::write(
        &real,
        "policy,environment,source,score,episodes\nscripted:oracle,scene,real,0.9,10\nscripted:one_item,scene,real,0.6,10\nzero,scene,real,0.05,10\n",
    )
    .unwrap();
    let (st, v) = srv.post(
        "/eval/start",
        json!({ "scene": scene, "policy": ["scripted:oracle", "scripted:one_item", "zero"], "episodes": 1, "real_scores": real, "bootstrap": 100 }),
    );
    assert_eq!(st, StatusCode::ACCEPTED, "{v}");
    let job = v["job"].as_str().unwrap().to_string();
    let start = Instant::now();
    let status = loop {
        let (st, v) = srv.get(&format!("/eval/{job}/status"));
        assert_eq!(st, StatusCode::OK);
        if v["state"] == "done" || v["state"] == "failed" {
            break v;
        }
        assert!(start.elapsed() < Duration::from_secs(300), "job stuck: {v}");
        std::thread::sleep(Duration::from_millis(100));
    };
    assert_eq!(status["state"], "done", "{status}");
    assert_eq!(status["episodes_done"], 3);
    let (st, m) = srv.get(&format!("/metrics/{job}"));
    assert_eq!(st, StatusCode::OK);
    assert_eq!(m["suite"]["scores"][0][0], 1.0);
    assert!((m["report"]["aggregate"]["pearson"].as_f64().unwrap() - 1.0).abs() < 0.1);
    assert_eq!(m["report"]["aggregate"]["mmrv"], 0.0);

    assert_eq!(srv.get("/eval/job-9999/status").0, StatusCode::NOT_FOUND);
    let (st, _) = srv.post("/eval/start", json!({ "scene": scene, "policy": "scripted:wizard", "episodes": 1 }));
    assert_eq!(st, StatusCode::UNPROCESSABLE_ENTITY);

    let (_, v) = srv.post("/eval/start", json!({ "scene": "/nonexistent.psd", "policy": "zero", "episodes": 1 }));
    let job = v["job"].as_str().unwrap().to_string();
    let failed = loop {
        let (_, v) = srv.get(&format!("/eval/{job}/status"));
        if v["state"] == "failed" {
            break v;
        }
        std::thread::sleep(Duration::from_millis(50));
    };
    assert!(failed["error"].as_str().unwrap().contains("nonexistent"));
    assert_eq!(srv.get(&format!("/metrics/{job}")).0, StatusCode::CONFLICT);
}

#[test]
fn schema_describes_predicates() {
    let srv = Server::start();
    let (st, v) = srv.get("/schema");
    assert_eq!(st, StatusCode::OK);
    for k in ["inside_region", "on_top_of", "near", "lifted", "reached", "grasped"] {
        assert!(v["predicates"][k].is_object(), "{k}");
    }
    assert_eq!(v["undo_depth"], 100);
}
