//! Recurrent diffusion policy pipeline: DDPM noise schedule, forward
//! noising, the reverse denoise step, chunk sampling with a pluggable noise
//! predictor, history GRU conditioning, stop-progress gating, and the
//! combined training loss with its analytic gradient.
//!
//! Action chunks are T x 3 arrays of (dx, dy, dyaw) body-frame waypoints;
//! the policy predicts a full chunk and executes a prefix of it.

use crate::control::{
    clipped_flash, speed_step, ControlConfig, ControlError, ControllerKind, VelocityCommand,
};
use crate::embodiment::{PoseState, RobotProfile};
use crate::geom::{angle_diff, normalize_angle, Point};
use crate::policy::{gru_step, scaled_dot_attention, GruWeights, Matrix, PolicyError};
use crate::rng::{derive_seed, rng_from_seed};
use crate::world::GridMap;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RdpError {
    #[error("invalid schedule range: {0}")]
    InvalidRange(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Control(#[from] ControlError),
}

/// Default chunk horizon (predicted waypoints per inference).
pub const DEFAULT_HORIZON: usize = 8;
/// Default number of waypoints executed per inference.
pub const DEFAULT_N_EXEC: usize = 4;
/// Stop gate: all-action magnitude threshold.
pub const STOP_ACTION_THRESHOLD: f64 = 0.1;
/// Stop gate: stop-progress threshold.
pub const STOP_PROGRESS_THRESHOLD: f64 = 0.8;

/// A T x 3 array of body-frame waypoint deltas (dx, dy, dyaw).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionChunk {
    pub steps: Vec<[f64; 3]>,
}

impl ActionChunk {
    pub fn zeros(horizon: usize) -> Self {
        Self { steps: vec![[0.0; 3]; horizon] }
    }

    pub fn horizon(&self) -> usize {
        self.steps.len()
    }

    pub fn same_shape(&self, other: &ActionChunk) -> bool {
        self.horizon() == other.horizon()
    }

    /// Largest |dx|, |dy|, or |dyaw| over all waypoints.
    pub fn max_abs(&self) -> f64 {
        self.steps
            .iter()
            .flat_map(|s| s.iter())
            .fold(0.0, |acc: f64, v| acc.max(v.abs()))
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> ActionChunk {
        ActionChunk {
            steps: self.steps.iter().map(|s| [f(s[0]), f(s[1]), f(s[2])]).collect(),
        }
    }

    fn zip(&self, other: &ActionChunk, f: impl Fn(f64, f64) -> f64) -> ActionChunk {
        ActionChunk {
            steps: self
                .steps
                .iter()
                .zip(&other.steps)
                .map(|(a, b)| [f(a[0], b[0]), f(a[1], b[1]), f(a[2], b[2])])
                .collect(),
        }
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.steps.iter().flat_map(|s| s.iter().copied()).collect()
    }

    /// Standard normal chunk for the given seed.
    pub fn standard_normal(horizon: usize, seed: u64) -> ActionChunk {
        let mut rng = rng_from_seed(seed);
        ActionChunk {
            steps: (0..horizon)
                .map(|_| {
                    [
                        StandardNormal.sample(&mut rng),
                        StandardNormal.sample(&mut rng),
                        StandardNormal.sample(&mut rng),
                    ]
                })
                .collect(),
        }
    }
}

/// DDPM noise schedule with the derived reverse-update coefficients.
///
/// For step k (1-based): alpha_k = 1 - beta_k, abar_k = prod alpha_j. The
/// reverse update is
///   a_{k-1} = (1/sqrt(alpha_k)) * (a_k - gamma_k * eps_hat + mu_k * z)
/// with gamma_k = beta_k / sqrt(1 - abar_k) and mu_k chosen so the injected
/// posterior noise has the standard DDPM variance; mu_1 = 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    pub betas: Vec<f64>,
    pub alphas: Vec<f64>,
    pub alpha_bars: Vec<f64>,
    /// Reverse scaling 1/sqrt(alpha_k).
    pub recip_sqrt_alphas: Vec<f64>,
    /// Noise-prediction coefficient beta_k / sqrt(1 - abar_k).
    pub gammas: Vec<f64>,
    /// Posterior standard deviation sigma_k (outside the scaling).
    pub sigmas: Vec<f64>,
    /// In-parenthesis noise scale mu_k = sigma_k * sqrt(alpha_k).
    pub mus: Vec<f64>,
}

impl NoiseSchedule {
    pub fn k_steps(&self) -> usize {
        self.betas.len()
    }
}

/// Build a linear-beta schedule with `k` steps.
pub fn make_schedule(k: usize, beta_min: f64, beta_max: f64) -> Result<NoiseSchedule, RdpError> {
    if k == 0 {
        return Err(RdpError::InvalidRange("need at least one step".into()));
    }
    if !(0.0 < beta_min && beta_min <= beta_max && beta_max < 1.0) {
        return Err(RdpError::InvalidRange(format!(
            "betas must satisfy 0 < {beta_min} <= {beta_max} < 1"
        )));
    }
    let betas: Vec<f64> = if k == 1 {
        vec![beta_min]
    } else {
        (0..k)
            .map(|i| beta_min + (beta_max - beta_min) * i as f64 / (k - 1) as f64)
            .collect()
    };
    let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
    let mut alpha_bars = Vec::with_capacity(k);
    let mut prod = 1.0;
    for a in &alphas {
        prod *= a;
        alpha_bars.push(prod);
    }
    let recip_sqrt_alphas: Vec<f64> = alphas.iter().map(|a| 1.0 / a.sqrt()).collect();
    let gammas: Vec<f64> = betas
        .iter()
        .zip(&alpha_bars)
        .map(|(b, ab)| b / (1.0 - ab).sqrt())
        .collect();
    let sigmas: Vec<f64> = (0..k)
        .map(|i| {
            let abar_prev = if i == 0 { 1.0 } else { alpha_bars[i - 1] };
            let var = (1.0 - abar_prev) / (1.0 - alpha_bars[i]) * betas[i];
            var.max(0.0).sqrt()
        })
        .collect();
    let mus: Vec<f64> = sigmas
        .iter()
        .zip(&alphas)
        .map(|(s, a)| s * a.sqrt())
        .collect();
    Ok(NoiseSchedule { betas, alphas, alpha_bars, recip_sqrt_alphas, gammas, sigmas, mus })
}

fn check_k(k: usize, sched: &NoiseSchedule) -> Result<(), RdpError> {
    if k == 0 || k > sched.k_steps() {
        return Err(RdpError::InvalidRange(format!(
            "step k={k} outside 1..={}",
            sched.k_steps()
        )));
    }
    Ok(())
}

/// Forward noising: a_k = sqrt(abar_k) a0 + sqrt(1 - abar_k) eps.
pub fn add_noise(
    a0: &ActionChunk,
    k: usize,
    eps: &ActionChunk,
    sched: &NoiseSchedule,
) -> Result<ActionChunk, RdpError> {
    check_k(k, sched)?;
    if !a0.same_shape(eps) {
        return Err(RdpError::ShapeMismatch(format!(
            "a0 horizon {} vs eps horizon {}",
            a0.horizon(),
            eps.horizon()
        )));
    }
    let ab = sched.alpha_bars[k - 1];
    let (signal, noise) = (ab.sqrt(), (1.0 - ab).sqrt());
    Ok(a0.zip(eps, |a, e| signal * a + noise * e))
}

/// One reverse denoise step. At k == 1 the stochastic term vanishes
/// (mu_1 = 0), which makes the single-step schedule an exact inverse of
/// [`add_noise`] when the predictor returns the true noise.
pub fn denoise_step(
    a_k: &ActionChunk,
    k: usize,
    eps_hat: &ActionChunk,
    sched: &NoiseSchedule,
    rng_seed: u64,
) -> Result<ActionChunk, RdpError> {
    check_k(k, sched)?;
    if !a_k.same_shape(eps_hat) {
        return Err(RdpError::ShapeMismatch(format!(
            "a_k horizon {} vs eps_hat horizon {}",
            a_k.horizon(),
            eps_hat.horizon()
        )));
    }
    let scale = sched.recip_sqrt_alphas[k - 1];
    let gamma = sched.gammas[k - 1];
    let mu = sched.mus[k - 1];
    let z = if mu > 0.0 {
        ActionChunk::standard_normal(a_k.horizon(), rng_seed)
    } else {
        ActionChunk::zeros(a_k.horizon())
    };
    let mut out = a_k.zip(eps_hat, |a, e| a - gamma * e);
    out = out.zip(&z, |v, n| scale * (v + mu * n));
    Ok(out)
}

/// A noise prediction network: maps (condition, noisy chunk, step) to a
/// predicted noise chunk of the same shape.
pub trait NoisePredictor {
    fn predict(&self, cond: &RdpCondition, a_k: &ActionChunk, k: usize) -> ActionChunk;
}

/// Diagnostic predictor that knows the clean chunk and returns the exact
/// noise consistent with the current sample:
/// eps = (a_k - sqrt(abar_k) a0) / sqrt(1 - abar_k).
pub struct OracleEpsPredictor {
    pub clean: ActionChunk,
    pub sched: NoiseSchedule,
}

impl NoisePredictor for OracleEpsPredictor {
    fn predict(&self, _cond: &RdpCondition, a_k: &ActionChunk, k: usize) -> ActionChunk {
        let ab = self.sched.alpha_bars[k - 1];
        let (signal, noise) = (ab.sqrt(), (1.0 - ab).sqrt());
        a_k.zip(&self.clean, |a, c| (a - signal * c) / noise)
    }
}

/// Shipped default predictor: a seeded two-layer perceptron over the
/// condition, the flattened noisy chunk, and the normalized step index.
/// Used for shape and determinism checks; it carries no navigation skill.
pub struct MlpPredictor {
    w1: Matrix,
    b1: Vec<f64>,
    w2: Matrix,
    b2: Vec<f64>,
    horizon: usize,
    k_steps: usize,
}

impl MlpPredictor {
    pub fn seeded(seed: u64, cond_dim: usize, horizon: usize, k_steps: usize) -> Self {
        let mut rng = rng_from_seed(seed);
        let input = cond_dim + horizon * 3 + 1;
        let hidden = 64;
        Self {
            w1: Matrix::seeded(&mut rng, hidden, input),
            b1: vec![0.0; hidden],
            w2: Matrix::seeded(&mut rng, horizon * 3, hidden),
            b2: vec![0.0; horizon * 3],
            horizon,
            k_steps,
        }
    }
}

impl NoisePredictor for MlpPredictor {
    fn predict(&self, cond: &RdpCondition, a_k: &ActionChunk, k: usize) -> ActionChunk {
        let mut x = cond.c.clone();
        x.extend(a_k.flatten());
        x.push(k as f64 / self.k_steps as f64);
        let mut hidden = self.w1.matvec(&x).expect("predictor input dim");
        for (h, b) in hidden.iter_mut().zip(&self.b1) {
            *h = (*h + b).tanh();
        }
        let mut out = self.w2.matvec(&hidden).expect("predictor hidden dim");
        for (o, b) in out.iter_mut().zip(&self.b2) {
            *o += b;
        }
        ActionChunk {
            steps: (0..self.horizon)
                .map(|t| [out[t * 3], out[t * 3 + 1], out[t * 3 + 2]])
                .collect(),
        }
    }
}

/// Iterative denoising from a unit Gaussian chunk down to a_0.
pub fn sample_chunk(
    cond: &RdpCondition,
    predictor: &dyn NoisePredictor,
    sched: &NoiseSchedule,
    horizon: usize,
    rng_seed: u64,
) -> Result<ActionChunk, RdpError> {
    let mut a = ActionChunk::standard_normal(horizon, derive_seed(rng_seed, 0));
    for k in (1..=sched.k_steps()).rev() {
        let eps_hat = predictor.predict(cond, &a, k);
        a = denoise_step(&a, k, &eps_hat, sched, derive_seed(rng_seed, k as u64))?;
    }
    Ok(a)
}

/// Condition vector for the diffusion decoder plus its raw ingredients.
///
/// c = concat(g1, g2, h, RC, PA) where g1 attends vision-to-language, g2
/// attends language-to-vision, h is the history GRU state, RC is the pose
/// relative to the episode start, and PA holds the last four actions
/// relative to the current pose.
#[derive(Debug, Clone, PartialEq)]
pub struct RdpCondition {
    pub c: Vec<f64>,
    pub h: Vec<f64>,
    pub rc: [f64; 3],
    pub pa: [[f64; 3]; 4],
}

/// Dimension of the condition vector built by [`RdpCondition::build`].
pub const CONDITION_DIM: usize = 32 * 3 + 3 + 12;

impl RdpCondition {
    /// Fuse visual and language features into the condition vector.
    ///
    /// `v_c` and `h` must share the instruction token dimension (32).
    pub fn build(
        v_c: &[f64],
        instruction_tokens: &Matrix,
        h: &[f64],
        rc: [f64; 3],
        pa: [[f64; 3]; 4],
    ) -> Result<RdpCondition, RdpError> {
        if v_c.len() != h.len() || v_c.len() != instruction_tokens.cols {
            return Err(RdpError::ShapeMismatch(format!(
                "condition dims: v_c {}, h {}, tokens {}",
                v_c.len(),
                h.len(),
                instruction_tokens.cols
            )));
        }
        // Vision-side query: mean of history state and current visual feature.
        let q: Vec<f64> = v_c.iter().zip(h).map(|(v, hh)| 0.5 * (v + hh)).collect();
        let g1 = scaled_dot_attention(&q, instruction_tokens, instruction_tokens)?;

        // Language-side query attends over the two vision rows.
        let mut pooled = vec![0.0; instruction_tokens.cols];
        for i in 0..instruction_tokens.rows {
            for (p, t) in pooled.iter_mut().zip(instruction_tokens.row(i)) {
                *p += t;
            }
        }
        for p in &mut pooled {
            *p /= instruction_tokens.rows as f64;
        }
        let vision_rows = Matrix::from_rows(vec![h.to_vec(), v_c.to_vec()]);
        let g2 = scaled_dot_attention(&pooled, &vision_rows, &vision_rows)?;

        let mut c = Vec::with_capacity(g1.len() + g2.len() + h.len() + 15);
        c.extend_from_slice(&g1);
        c.extend_from_slice(&g2);
        c.extend_from_slice(h);
        c.extend_from_slice(&rc);
        for step in &pa {
            c.extend_from_slice(step);
        }
        Ok(RdpCondition { c, h: h.to_vec(), rc, pa })
    }
}

/// Update the history GRU over [V_c, RC, PA].
pub fn update_history(
    h_prev: &[f64],
    v_c: &[f64],
    rc: [f64; 3],
    pa: [[f64; 3]; 4],
    weights: &GruWeights,
) -> Result<Vec<f64>, RdpError> {
    let mut x = Vec::with_capacity(v_c.len() + 15);
    x.extend_from_slice(v_c);
    x.extend_from_slice(&rc);
    for step in &pa {
        x.extend_from_slice(step);
    }
    Ok(gru_step(&x, h_prev, weights)?)
}

/// Sigmoid-bounded feed-forward head mapping the condition to a stop
/// progress estimate in [0, 1].
#[derive(Debug, Clone)]
pub struct StopHead {
    w1: Matrix,
    b1: Vec<f64>,
    w2: Matrix,
    b2: f64,
}

impl StopHead {
    pub fn seeded(seed: u64, cond_dim: usize) -> Self {
        let mut rng = rng_from_seed(seed);
        let hidden = 16;
        Self {
            w1: Matrix::seeded(&mut rng, hidden, cond_dim),
            b1: vec![0.0; hidden],
            w2: Matrix::seeded(&mut rng, 1, hidden),
            b2: 0.0,
        }
    }

    pub fn predict(&self, c: &[f64]) -> Result<f64, RdpError> {
        let mut hidden = self.w1.matvec(c)?;
        for (h, b) in hidden.iter_mut().zip(&self.b1) {
            *h = (*h + b).tanh();
        }
        let out = self.w2.matvec(&hidden)?[0] + self.b2;
        Ok(1.0 / (1.0 + (-out).exp()))
    }
}

/// Stop decision: all predicted actions below the action threshold, or the
/// stop progress output above the progress threshold.
pub fn stop_gate(chunk: &ActionChunk, stop_progress: f64) -> bool {
    chunk.max_abs() < STOP_ACTION_THRESHOLD || stop_progress > STOP_PROGRESS_THRESHOLD
}

/// Combined diffusion + stop loss:
/// MSE(eps, eps_hat) + lambda * MSE(stop_pred, stop_gt). Lambda defaults
/// to 10.
pub fn rdp_loss(
    eps: &ActionChunk,
    eps_hat: &ActionChunk,
    stop_pred: f64,
    stop_gt: f64,
    lambda: f64,
) -> Result<f64, RdpError> {
    if !eps.same_shape(eps_hat) {
        return Err(RdpError::ShapeMismatch(format!(
            "eps horizon {} vs eps_hat horizon {}",
            eps.horizon(),
            eps_hat.horizon()
        )));
    }
    let n = (eps.horizon() * 3) as f64;
    let mse: f64 = eps
        .steps
        .iter()
        .zip(&eps_hat.steps)
        .flat_map(|(a, b)| a.iter().zip(b).map(|(x, y)| (y - x) * (y - x)))
        .sum::<f64>()
        / n;
    let stop = (stop_pred - stop_gt) * (stop_pred - stop_gt);
    Ok(mse + lambda * stop)
}

/// Default loss weight on the stop branch.
pub const DEFAULT_LAMBDA: f64 = 10.0;

/// Analytic gradient of [`rdp_loss`] with respect to `eps_hat`:
/// 2 (eps_hat - eps) / N.
pub fn rdp_loss_grad_eps_hat(eps: &ActionChunk, eps_hat: &ActionChunk) -> Result<ActionChunk, RdpError> {
    if !eps.same_shape(eps_hat) {
        return Err(RdpError::ShapeMismatch("gradient shapes differ".into()));
    }
    let n = (eps.horizon() * 3) as f64;
    Ok(eps_hat.zip(eps, |y, x| 2.0 * (y - x) / n))
}

/// Ground-truth stop progress: fraction of the reference path arc length
/// covered by the closest projection of `pos` onto the path.
pub fn path_progress(path: &[Point], pos: Point) -> f64 {
    if path.len() < 2 {
        return if path.is_empty() { 0.0 } else { 1.0 };
    }
    let total: f64 = path.windows(2).map(|w| w[0].distance(w[1])).sum();
    if total <= 0.0 {
        return 1.0;
    }
    let mut best_d2 = f64::INFINITY;
    let mut best_arc = 0.0;
    let mut arc = 0.0;
    for w in path.windows(2) {
        let (a, b) = (w[0], w[1]);
        let seg = a.distance(b);
        if seg > 0.0 {
            let t = (((pos.x - a.x) * (b.x - a.x) + (pos.y - a.y) * (b.y - a.y)) / (seg * seg))
                .clamp(0.0, 1.0);
            let px = a.x + t * (b.x - a.x);
            let py = a.y + t * (b.y - a.y);
            let d2 = (pos.x - px).powi(2) + (pos.y - py).powi(2);
            if d2 < best_d2 {
                best_d2 = d2;
                best_arc = arc + t * seg;
            }
        }
        arc += seg;
    }
    best_arc / total
}

/// Running-max wrapper that makes stop progress non-decreasing over a
/// trajectory, as the training target requires.
#[derive(Debug, Clone, Copy, Default)]
pub struct StopProgressTracker {
    best: f64,
}

impl StopProgressTracker {
    pub fn update(&mut self, path: &[Point], pos: Point) -> f64 {
        self.best = self.best.max(path_progress(path, pos));
        self.best
    }
}

/// Result of executing a chunk prefix: the pose after each waypoint plus
/// collision/hole flags accumulated while executing it.
#[derive(Debug, Clone)]
pub struct ChunkExecution {
    pub poses: Vec<PoseState>,
    pub collided: Vec<bool>,
    pub on_hole: Vec<bool>,
}

impl ChunkExecution {
    pub fn final_pose(&self) -> Option<&PoseState> {
        self.poses.last()
    }
}

/// Execute the first `n_exec` waypoints of a chunk through a controller.
///
/// Each waypoint is taken in the body frame of the pose it starts from:
/// rotate to face the offset, translate, then settle on the commanded yaw
/// change. The flash controller composes the transforms kinematically
/// (clipped at obstacles); the speed controller drives velocity commands
/// with collision and disturbance.
#[allow(clippy::too_many_arguments)]
pub fn execute_chunk(
    chunk: &ActionChunk,
    n_exec: usize,
    pose: &PoseState,
    controller: ControllerKind,
    profile: &RobotProfile,
    map: &GridMap,
    ctrl: &ControlConfig,
    rng_seed: u64,
) -> Result<ChunkExecution, RdpError> {
    let n = n_exec.min(chunk.horizon());
    let mut out = ChunkExecution { poses: Vec::with_capacity(n), collided: Vec::new(), on_hole: Vec::new() };
    let mut current = *pose;
    for (i, wp) in chunk.steps.iter().take(n).enumerate() {
        let [dx, dy, dyaw] = *wp;
        // Body frame to world frame.
        let (sin, cos) = current.heading.sin_cos();
        let target = Point::new(current.x + dx * cos - dy * sin, current.y + dx * sin + dy * cos);
        let final_heading = normalize_angle(current.heading + dyaw);
        match controller {
            ControllerKind::Flash => {
                let target_pose = PoseState { x: target.x, y: target.y, heading: final_heading, ..current };
                current = clipped_flash(map, &current, &target_pose, profile.footprint_radius);
                out.collided.push(false);
                out.on_hole.push(false);
            }
            ControllerKind::Speed | ControllerKind::Path => {
                if current.fallen {
                    return Err(RdpError::Control(ControlError::Embodiment(
                        crate::embodiment::EmbodimentError::AlreadyFallen,
                    )));
                }
                let mut collided_any = false;
                let mut hole_any = false;
                let seed = derive_seed(rng_seed, i as u64);
                // Rotate toward the offset direction.
                let dist = current.position().distance(target);
                if dist > 1e-9 {
                    let aim = current.position().bearing_to(target);
                    rotate_to(&mut current, aim, profile, map, ctrl, seed, &mut collided_any, &mut hole_any)?;
                    // Translate.
                    let mut remaining = dist;
                    let mut ticks = 0;
                    while remaining > 1e-6 && ticks < 64 {
                        let v = (remaining / ctrl.dt).min(ctrl.v_max);
                        let cmd = VelocityCommand { v, omega: 0.0, duration: ctrl.dt };
                        let r = speed_step(&current, &cmd, profile, map, derive_seed(seed, 100 + ticks))?;
                        collided_any |= r.collided;
                        hole_any |= r.on_hole;
                        if r.collided {
                            current = r.pose;
                            break;
                        }
                        remaining -= current.position().distance(r.pose.position());
                        current = r.pose;
                        ticks += 1;
                    }
                }
                // Settle on the commanded final heading.
                rotate_to(&mut current, final_heading, profile, map, ctrl, derive_seed(seed, 500), &mut collided_any, &mut hole_any)?;
                out.collided.push(collided_any);
                out.on_hole.push(hole_any);
            }
        }
        out.poses.push(current);
    }
    Ok(out)
}

#[allow(clippy::too_many_arguments)]
fn rotate_to(
    pose: &mut PoseState,
    target_heading: f64,
    profile: &RobotProfile,
    map: &GridMap,
    ctrl: &ControlConfig,
    seed: u64,
    collided_any: &mut bool,
    hole_any: &mut bool,
) -> Result<(), RdpError> {
    let mut ticks = 0u64;
    loop {
        let err = angle_diff(target_heading, pose.heading);
        if err.abs() < 1e-6 || ticks >= 64 {
            return Ok(());
        }
        let omega = (err / ctrl.dt).clamp(-ctrl.omega_max, ctrl.omega_max);
        let cmd = VelocityCommand { v: 0.0, omega, duration: ctrl.dt };
        let r = speed_step(pose, &cmd, profile, map, derive_seed(seed, 1000 + ticks))?;
        *collided_any |= r.collided;
        *hole_any |= r.on_hole;
        *pose = r.pose;
        ticks += 1;
    }
}
