//! Background evaluation queue. One worker thread runs jobs in order.

use crate::policies::PolicySpec;
use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use simeval_core::eval::{run_suite_with, EpisodeConfig, Policy, SuiteResult, SuiteScene};
use simeval_core::metrics::{build_report, ingest_scores, suite_rows, ScoreTable, Source};
use simeval_core::scene::{load_scene, Roots};
use std::path::PathBuf;
use std::sync::mpsc::{channel, Sender};
use std::sync::{Arc, Mutex};
use std::time::Duration;

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum OneOrMany {
    One(String),
    Many(Vec<String>),
}

impl OneOrMany {
    pub fn to_vec(&self) -> Vec<String> {
        match self {
            Self::One(s) => vec![s.clone()],
            Self::Many(v) => v.clone(),
        }
    }
}

/// Body of `POST /eval/start`.
#[derive(Debug, Clone, Deserialize)]
pub struct JobRequest {
    /// Scene descriptor path(s).
    pub scene: OneOrMany,
    /// Policy spec(s): an endpoint URL, `scripted:<skill>`, `zero`, `replay:<file>`.
    pub policy: OneOrMany,
    pub episodes: usize,
    #[serde(default)]
    pub max_steps: Option<usize>,
    /// Real-world score CSV; when given the job also produces a faithfulness report.
    #[serde(default)]
    pub real_scores: Option<PathBuf>,
    #[serde(default = "default_timeout")]
    pub timeout_s: f64,
    #[serde(default)]
    pub bootstrap: Option<usize>,
}

fn default_timeout() -> f64 {
    10.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum JobState {
    Queued,
    Running,
    Done,
    Failed,
}

#[derive(Debug, Clone, Serialize)]
pub struct JobStatus {
    pub job: String,
    pub state: JobState,
    pub episodes_done: usize,
    pub episodes_total: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(skip)]
    pub result: Option<Value>,
}

pub struct JobQueue {
    jobs: Arc<Mutex<Vec<JobStatus>>>,
    tx: Mutex<Sender<(usize, JobRequest)>>,
}

impl JobQueue {
    pub fn start() -> Self {
        let jobs: Arc<Mutex<Vec<JobStatus>>> = Arc::default();
        let (tx, rx) = channel::<(usize, JobRequest)>();
        let worker_jobs = Arc::clone(&jobs);
        std::thread::spawn(move || {
            for (idx, req) in rx {
                worker_jobs.lock().expect("job lock")[idx].state = JobState::Running;
                let progress = |n: usize| worker_jobs.lock().expect("job lock")[idx].episodes_done = n;
                let outcome = run_job(&req, &progress);
                let mut jobs = worker_jobs.lock().expect("job lock");
                match outcome {
                    Ok(v) => {
                        jobs[idx].state = JobState::Done;
                        jobs[idx].result = Some(v);
                    }
                    Err(e) => {
                        jobs[idx].state = JobState::Failed;
                        jobs[idx].error = Some(format!("{e:#}"));
                    }
                }
            }
        });
        Self {
            jobs,
            tx: Mutex::new(tx),
        }
    }

    /// Checks the request shape and queues it.
    pub fn submit(&self, req: JobRequest) -> Result<String> {
        let scenes = req.scene.to_vec();
        let policies = req.policy.to_vec();
        if scenes.is_empty() || policies.is_empty() {
            bail!("need at least one scene and one policy");
        }
        if req.episodes == 0 {
            bail!("episodes must be at least 1");
        }
        for p in &policies {
            p.parse::<PolicySpec>().map_err(anyhow::Error::msg)?;
        }
        let mut jobs = self.jobs.lock().expect("job lock");
        let idx = jobs.len();
        let id = format!("job-{idx:04}");
        jobs.push(JobStatus {
            job: id.clone(),
            state: JobState::Queued,
            episodes_done: 0,
            episodes_total: scenes.len() * policies.len() * req.episodes,
            error: None,
            result: None,
        });
        drop(jobs);
        self.tx.lock().expect("queue lock").send((idx, req)).context("job worker stopped")?;
        Ok(id)
    }

    pub fn status(&self, id: &str) -> Option<JobStatus> {
        self.jobs.lock().expect("job lock").iter().find(|j| j.job == id).cloned()
    }
}

fn run_job(req: &JobRequest, progress: &dyn Fn(usize)) -> Result<Value> {
    let paths: Vec<PathBuf> = req.scene.to_vec().into_iter().map(PathBuf::from).collect();
    let specs: Vec<PolicySpec> = req
        .policy
        .to_vec()
        .iter()
        .map(|p| p.parse().map_err(anyhow::Error::msg))
        .collect::<Result<_>>()?;
    let mut cfg = EpisodeConfig::default();
    if let Some(m) = req.max_steps {
        cfg.max_steps = m;
    }
    let timeout = Duration::from_secs_f64(req.timeout_s);
    let mut done = 0;
    let mut merged: Option<SuiteResult> = None;
    for p in &paths {
        let ls = load_scene(p, &Roots::default()).with_context(|| p.display().to_string())?;
        let name = p.file_stem().map_or("scene".into(), |s| s.to_string_lossy().into_owned());
        let mut policies: Vec<Box<dyn Policy>> = specs.iter().map(|s| s.build(&ls.scene, timeout)).collect::<Result<_>>()?;
        let suite = [SuiteScene {
            name,
            scene: &ls.scene,
            hash: ls.hash.clone(),
        }];
        let r = run_suite_with(&suite, &mut policies, req.episodes, &cfg, &mut |_, _, _| {
            done += 1;
            progress(done);
            Ok(())
        })?;
        merged = Some(match merged {
            None => r,
            Some(mut acc) => {
                acc.scenes.extend(r.scenes);
                for (a, b) in acc.scores.iter_mut().zip(r.scores) {
                    a.extend(b);
                }
                for (a, b) in acc.episodes.iter_mut().zip(r.episodes) {
                    a.extend(b);
                }
                for (a, b) in acc.infrastructure_failures.iter_mut().zip(r.infrastructure_failures) {
                    a.extend(b);
                }
                for (a, b) in acc.episode_scores.iter_mut().zip(r.episode_scores) {
                    a.extend(b);
                }
                acc
            }
        });
    }
    let mut result = merged.expect("at least one scene");
    result.policies = specs.iter().map(|s| s.to_string()).collect();
    let mut rows = suite_rows(&result, Source::Sim);
    let sim_csv = ScoreTable::from_rows("sim", &rows)?.to_csv();
    let report = match &req.real_scores {
        Some(real) => {
            let real_table = ingest_scores(&[real])?;
            rows.extend(real_table.rows().into_iter().filter(|r| r.source == Source::Real));
            let table = ScoreTable::from_rows("combined", &rows)?;
            let b = req.bootstrap.unwrap_or(simeval_core::metrics::DEFAULT_BOOTSTRAP);
            Some(build_report(&table, b)?)
        }
        None => None,
    };
    Ok(json!({
        "suite": result,
        "scores_csv": sim_csv,
        "report": report,
        "report_text": report.as_ref().map(|r| r.to_text()),
    }))
}
