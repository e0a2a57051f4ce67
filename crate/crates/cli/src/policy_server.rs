//! `/act` endpoint around an in-process policy.
//!
//! Scripted policies plan from privileged world state, which a remote client
//! does not send. The server keeps a shadow copy of the client's world: it
//! resets on `step == 0`, advances by the rows of the previous chunk the
//! client executed, and takes arm joints from the reported proprioception.
//! Episode seeds count up from `--first-seed`, matching a client that runs
//! seeds `0..n` in order.

use crate::cli::ServePolicyArgs;
use crate::policies::PolicySpec;
use crate::progress::emit;
use anyhow::{bail, Context, Result};
use axum::extract::State;
use axum::http::StatusCode;
use axum::routing::{get, post};
use axum::{Json, Router};
use serde_json::{json, Value};
use simeval_core::eval::{
    initial_state, step_world, ActRequest, ActResponse, EpisodeConfig, Observation, Policy, PolicyInput, WorldState,
    ACTION_DIM,
};
use simeval_core::scene::{load_scene, ComposedScene, Roots};
use std::collections::BTreeMap;
use std::sync::{Arc, Mutex};
use std::time::Duration;

pub struct Shadow {
    scene: ComposedScene,
    policy: Box<dyn Policy>,
    cfg: EpisodeConfig,
    state: Option<WorldState>,
    chunk: Vec<[f64; ACTION_DIM]>,
    last_step: usize,
    next_seed: u64,
}

type ApiError = (StatusCode, Json<Value>);

fn bad(status: StatusCode, kind: &str, message: impl Into<String>) -> ApiError {
    (status, Json(json!({ "error": { "kind": kind, "message": message.into() } })))
}

impl Shadow {
    pub fn new(scene: ComposedScene, policy: Box<dyn Policy>, first_seed: u64) -> Self {
        Self {
            scene,
            policy,
            cfg: EpisodeConfig::default(),
            state: None,
            chunk: Vec::new(),
            last_step: 0,
            next_seed: first_seed,
        }
    }

    pub fn act(&mut self, req: &ActRequest) -> Result<ActResponse, ApiError> {
        if req.proprio.len() != ACTION_DIM {
            return Err(bad(
                StatusCode::UNPROCESSABLE_ENTITY,
                "protocol",
                format!("proprio has {} values, expected {ACTION_DIM}", req.proprio.len()),
            ));
        }
        let mut state = match self.state.take() {
            Some(s) if req.step > 0 => {
                if req.step < self.last_step {
                    return Err(bad(
                        StatusCode::CONFLICT,
                        "protocol",
                        format!("step {} is before the previous request's {}", req.step, self.last_step),
                    ));
                }
                let mut s = s;
                let rows = req.step - self.last_step;
                for k in 0..rows {
                    let row = self.chunk.get(k).or(self.chunk.last()).copied().unwrap_or([0.0; ACTION_DIM]);
                    s = step_world(&self.scene, &s, &row, &self.cfg.servo);
                }
                s
            }
            _ => {
                let seed = self.next_seed;
                self.next_seed += 1;
                self.policy.reset(seed);
                initial_state(&self.scene, seed, &self.cfg)
                    .map_err(|e| bad(StatusCode::INTERNAL_SERVER_ERROR, "scene", e.to_string()))?
            }
        };
        for (c, &d) in self.scene.arm_dofs().iter().enumerate() {
            state.q[d] = req.proprio[c];
        }
        let obs = Observation {
            images: BTreeMap::new(),
            wrist: None,
            proprio: req.proprio.as_slice().try_into().expect("length checked"),
            instruction: req.instruction.clone(),
            step: req.step,
        };
        let reply = self
            .policy
            .act(&PolicyInput {
                observation: &obs,
                scene: &self.scene,
                state: &state,
            })
            .map_err(|e| bad(StatusCode::INTERNAL_SERVER_ERROR, "policy", e.to_string()))?;
        self.chunk = reply.chunk.actions.clone();
        self.last_step = req.step;
        self.state = Some(state);
        Ok(ActResponse::from_reply(&reply))
    }
}

pub fn router(shadow: Shadow) -> Router {
    let shared = Arc::new(Mutex::new(shadow));
    Router::new()
        .route("/act", post(act))
        .route("/health", get(|| async { Json(json!({ "ok": true })) }))
        .with_state(shared)
}

async fn act(State(shadow): State<Arc<Mutex<Shadow>>>, Json(req): Json<ActRequest>) -> Result<Json<ActResponse>, ApiError> {
    tokio::task::spawn_blocking(move || shadow.lock().expect("policy lock").act(&req))
        .await
        .map_err(|e| bad(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))?
        .map(Json)
}

pub fn serve(a: ServePolicyArgs) -> Result<()> {
    if matches!(a.policy, PolicySpec::Http(_)) {
        bail!("serve-policy wraps an in-process policy; got an http endpoint");
    }
    let loaded = load_scene(&a.scene, &Roots::default()).with_context(|| a.scene.display().to_string())?;
    let policy = a.policy.build(&loaded.scene, Duration::from_secs(10))?;
    let app = router(Shadow::new(loaded.scene, policy, a.first_seed));
    run_http(&a.host, a.port, app, "serve_policy", || {})
}

/// Binds, reports the address on stderr, and serves until Ctrl-C.
pub fn run_http(host: &str, port: u16, app: Router, name: &str, on_shutdown: impl FnOnce()) -> Result<()> {
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async {
        let listener = tokio::net::TcpListener::bind((host, port))
            .await
            .with_context(|| format!("binding {host}:{port}"))?;
        let addr = listener.local_addr()?;
        emit(&format!("{name}.listening"), json!({ "addr": addr.to_string() }));
        axum::serve(listener, app)
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await?;
        anyhow::Ok(())
    })?;
    on_shutdown();
    emit(&format!("{name}.stopped"), json!({}));
    Ok(())
}
