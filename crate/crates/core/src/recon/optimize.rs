//! Per-parameter adaptive gradient descent over splat scenes.

use super::objective::{objective_with_gradient, LossBreakdown, ObjectiveConfig, PrimitiveGradient, View};
use super::ReconError;
use crate::math::{quat_components, quat_from_components, Vec3};
use crate::splat::{GaussianPrimitive, SplatScene};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Step sizes per parameter group.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepSizes {
    pub center: f64,
    pub rotation: f64,
    /// Applied to log-scales.
    pub scale: f64,
    pub color: f64,
    /// Applied to the opacity logit.
    pub opacity: f64,
}

impl Default for StepSizes {
    fn default() -> Self {
        Self {
            center: 2e-3,
            rotation: 1e-2,
            scale: 1e-2,
            color: 2e-2,
            opacity: 5e-2,
        }
    }
}

/// Optional split/prune pass.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DensifyConfig {
    pub interval: usize,
    /// Mean center-gradient norm above which a primitive is split in two.
    pub grad_threshold: f64,
    /// Primitives with opacity below this are removed.
    pub prune_opacity: f64,
    pub max_primitives: usize,
}

impl Default for DensifyConfig {
    fn default() -> Self {
        Self {
            interval: 100,
            grad_threshold: 2e-4,
            prune_opacity: 0.01,
            max_primitives: 100_000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReconConfig {
    pub iterations: usize,
    pub steps: StepSizes,
    pub objective: ObjectiveConfig,
    /// Disabled (`None`) by default.
    pub densify: Option<DensifyConfig>,
    pub beta1: f64,
    pub beta2: f64,
    /// Added to the root second moment. Large enough that gradients from
    /// round-off at an exact fit do not turn into full-size steps.
    pub epsilon: f64,
    /// Step sizes decay exponentially to this fraction of their initial
    /// value over the run.
    pub final_step_ratio: f64,
    pub seed: u64,
}

impl Default for ReconConfig {
    fn default() -> Self {
        Self {
            iterations: 500,
            steps: StepSizes::default(),
            objective: ObjectiveConfig::default(),
            densify: None,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-4,
            final_step_ratio: 0.05,
            seed: 0,
        }
    }
}

impl ReconConfig {
    pub fn validate(&self) -> Result<(), ReconError> {
        let s = &self.steps;
        if self.iterations == 0 {
            return Err(ReconError::InvalidConfig("iterations must be at least 1".into()));
        }
        if [s.center, s.rotation, s.scale, s.color, s.opacity].iter().any(|v| !(*v > 0.0)) {
            return Err(ReconError::InvalidConfig("step sizes must be positive".into()));
        }
        if !(self.final_step_ratio > 0.0 && self.final_step_ratio <= 1.0) {
            return Err(ReconError::InvalidConfig("final_step_ratio must be in (0, 1]".into()));
        }
        if self.objective.lambda_dist < 0.0 || self.objective.lambda_norm < 0.0 {
            return Err(ReconError::InvalidConfig("regularizer weights must be nonnegative".into()));
        }
        Ok(())
    }
}

const PARAMS: usize = 13;
const OPACITY_EPS: f64 = 1e-4;

fn logit(p: f64) -> f64 {
    let p = p.clamp(OPACITY_EPS, 1.0 - OPACITY_EPS);
    (p / (1.0 - p)).ln()
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Unconstrained parameter vector of one primitive:
/// center(3) quaternion(4) log-scale(2) color(3) opacity-logit(1).
fn pack(p: &GaussianPrimitive) -> [f64; PARAMS] {
    let q = quat_components(&p.rotation);
    [
        p.center.x,
        p.center.y,
        p.center.z,
        q[0],
        q[1],
        q[2],
        q[3],
        p.scale[0].ln(),
        p.scale[1].ln(),
        p.color[0],
        p.color[1],
        p.color[2],
        logit(p.opacity),
    ]
}

fn unpack(v: &[f64; PARAMS]) -> GaussianPrimitive {
    GaussianPrimitive::new(
        Vec3::new(v[0], v[1], v[2]),
        quat_from_components([v[3], v[4], v[5], v[6]]),
        [v[7].exp(), v[8].exp()],
        [v[9], v[10], v[11]],
        sigmoid(v[12]),
    )
}

fn chain(g: &PrimitiveGradient, p: &GaussianPrimitive) -> [f64; PARAMS] {
    let mut out = g.as_array();
    out[7] *= p.scale[0];
    out[8] *= p.scale[1];
    out[12] *= p.opacity * (1.0 - p.opacity);
    out
}

struct Adam {
    m: Vec<[f64; PARAMS]>,
    v: Vec<[f64; PARAMS]>,
    t: i32,
}

impl Adam {
    fn new(n: usize) -> Self {
        Self {
            m: vec![[0.0; PARAMS]; n],
            v: vec![[0.0; PARAMS]; n],
            t: 0,
        }
    }
}

fn step_size(steps: &StepSizes, k: usize) -> f64 {
    match k {
        0..=2 => steps.center,
        3..=6 => steps.rotation,
        7..=8 => steps.scale,
        9..=11 => steps.color,
        _ => steps.opacity,
    }
}

/// Output of [`optimize_scene`].
#[derive(Debug, Clone)]
pub struct OptimizeResult {
    pub scene: SplatScene,
    /// Objective at the start of every iteration.
    pub history: Vec<LossBreakdown>,
    pub final_loss: LossBreakdown,
}

/// Fits `init` to the views.
pub fn optimize_scene(views: &[View], init: &SplatScene, cfg: &ReconConfig) -> Result<OptimizeResult, ReconError> {
    cfg.validate()?;
    for (i, p) in init.primitives.iter().enumerate() {
        p.validate().map_err(|e| ReconError::InvalidPrimitive(i, e))?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut params: Vec<[f64; PARAMS]> = init.primitives.iter().map(pack).collect();
    let mut adam = Adam::new(params.len());
    let mut grad_accum = vec![0.0; params.len()];
    let mut grad_count = 0usize;
    let mut history = Vec::with_capacity(cfg.iterations);
    let frame = init.frame_label.clone();

    for iteration in 0..cfg.iterations {
        let prims: Vec<GaussianPrimitive> = params.iter().map(unpack).collect();
        let scene = SplatScene::from_primitives(frame.clone(), prims);
        let (loss, grads) = objective_with_gradient(&scene, views, &cfg.objective)?;
        if !loss.total.is_finite() {
            return Err(ReconError::NonFiniteLoss { iteration });
        }
        history.push(loss);

        adam.t += 1;
        let bc1 = 1.0 - cfg.beta1.powi(adam.t);
        let bc2 = 1.0 - cfg.beta2.powi(adam.t);
        let decay = cfg.final_step_ratio.powf(iteration as f64 / cfg.iterations as f64);
        for (i, (p, g)) in params.iter_mut().zip(&grads).enumerate() {
            let g = chain(g, &scene.primitives[i]);
            if g.iter().any(|v| !v.is_finite()) {
                return Err(ReconError::NonFiniteLoss { iteration });
            }
            grad_accum[i] += (g[0] * g[0] + g[1] * g[1] + g[2] * g[2]).sqrt();
            for k in 0..PARAMS {
                let m = &mut adam.m[i][k];
                let v = &mut adam.v[i][k];
                *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g[k];
                *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g[k] * g[k];
                let mh = *m / bc1;
                let vh = *v / bc2;
                p[k] -= decay * step_size(&cfg.steps, k) * mh / (vh.sqrt() + cfg.epsilon);
            }
            let qn = (p[3] * p[3] + p[4] * p[4] + p[5] * p[5] + p[6] * p[6]).sqrt();
            for k in 3..7 {
                p[k] /= qn;
            }
            for k in 9..12 {
                p[k] = p[k].clamp(0.0, 1.0);
            }
        }
        grad_count += 1;

        if let Some(d) = &cfg.densify {
            if d.interval > 0 && (iteration + 1) % d.interval == 0 && iteration + 1 < cfg.iterations {
                densify(&mut params, &mut adam, &grad_accum, grad_count, d, &mut rng);
                grad_accum = vec![0.0; params.len()];
                grad_count = 0;
            }
        }
    }

    let scene = SplatScene::from_primitives(frame, params.iter().map(unpack).collect());
    let final_loss = super::objective::photometric_objective(&scene, views, &cfg.objective)?;
    Ok(OptimizeResult {
        scene,
        history,
        final_loss,
    })
}

fn densify(
    params: &mut Vec<[f64; PARAMS]>,
    adam: &mut Adam,
    grad_accum: &[f64],
    count: usize,
    cfg: &DensifyConfig,
    rng: &mut ChaCha8Rng,
) {
    let mut next = Vec::with_capacity(params.len());
    let mut m = Vec::with_capacity(params.len());
    let mut v = Vec::with_capacity(params.len());
    let budget = cfg.max_primitives;
    for (i, p) in params.iter().enumerate() {
        let prim = unpack(p);
        if prim.opacity < cfg.prune_opacity {
            continue;
        }
        let mean_grad = grad_accum[i] / count.max(1) as f64;
        if mean_grad > cfg.grad_threshold && next.len() + 2 <= budget {
            for _ in 0..2 {
                let du: f64 = rng.gen_range(-1.0..1.0) * prim.scale[0];
                let dv: f64 = rng.gen_range(-1.0..1.0) * prim.scale[1];
                let mut child = prim;
                child.center += prim.tangent_u() * du + prim.tangent_v() * dv;
                child.scale = [prim.scale[0] / 1.6, prim.scale[1] / 1.6];
                next.push(pack(&child));
                m.push([0.0; PARAMS]);
                v.push([0.0; PARAMS]);
            }
        } else if next.len() < budget {
            next.push(*p);
            m.push(adam.m[i]);
            v.push(adam.v[i]);
        }
    }
    *params = next;
    adam.m = m;
    adam.v = v;
}
