//! Episode datasets, the generation pipeline (freemap -> sample -> filter),
//! the episode runner with its termination rules, and the metric suite
//! (TL / NE / SR / OS / SPL / FR / StR).

use crate::control::{
    clipped_flash, discrete_to_commands, ControlConfig, ControllerKind, DiscreteAction,
    PathFollower,
};
use crate::embodiment::{check_fall, check_stuck, PoseState, RobotProfile, StuckThresholds, StuckWindow};
use crate::geom::{angle_diff, normalize_angle, polyline_length, Point};
use crate::plan::{astar, dilate_with_blocking, geodesic_distance, PlanCosts, PlanError};
use crate::policy::{
    cma_step, oracle_policy_step, random_policy_step, seq2seq_step, visual_features, CmaWeights,
    FeatureBundle, OracleConfig, Seq2SeqWeights,
};
use crate::rdp::{
    sample_chunk, stop_gate, update_history, ActionChunk, MlpPredictor, NoiseSchedule,
    RdpCondition, StopHead, CONDITION_DIM, DEFAULT_HORIZON, DEFAULT_N_EXEC,
};
use crate::rng::{derive_seed, rng_from_seed};
use crate::semnav::SubgoalProgram;
use crate::world::{observe, GridMap, LightingCondition, SensorConfig};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("map has fewer than two reachable free cells")]
    InsufficientFreeSpace,
    #[error("traces and episodes differ in length: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error(transparent)]
    Plan(#[from] PlanError),
}

/// Dataset split.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    ValSeen,
    ValUnseen,
}

/// One navigation task instance.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Episode {
    pub episode_id: u32,
    pub scene_id: String,
    pub start: StartPose,
    pub goal: Point,
    pub reference_path: Vec<Point>,
    pub instruction_text: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub subgoals: Option<SubgoalProgram>,
    pub split: Split,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct StartPose {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
}

impl Episode {
    pub fn start_pose(&self) -> PoseState {
        PoseState::new(self.start.x, self.start.y, self.start.heading)
    }
}

/// Events recorded in a trace. `Fall`, `Stuck`, `Stop`, `Timeout`, and
/// `Aborted` are terminal; `Collision` is not.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceEventKind {
    Collision,
    Fall,
    Stuck,
    Stop,
    Timeout,
    /// The navigator gave up (no path / exploration exhausted).
    Aborted,
}

impl TraceEventKind {
    pub fn is_terminal(&self) -> bool {
        !matches!(self, TraceEventKind::Collision)
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Collision => "collision",
            Self::Fall => "fall",
            Self::Stuck => "stuck",
            Self::Stop => "stop",
            Self::Timeout => "timeout",
            Self::Aborted => "aborted",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TraceEvent {
    pub kind: TraceEventKind,
    pub step: usize,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub reason: Option<String>,
}

/// Executed action log entry.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionRecord {
    Discrete(DiscreteAction),
    Waypoint([f64; 3]),
}

/// Full record of one episode run.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct EpisodeTrace {
    /// Pose sequence including the start pose.
    pub poses: Vec<PoseState>,
    pub events: Vec<TraceEvent>,
    pub actions: Vec<ActionRecord>,
}

impl EpisodeTrace {
    pub fn terminal_event(&self) -> Option<&TraceEvent> {
        self.events.iter().find(|e| e.kind.is_terminal())
    }

    /// Trajectory length: sum of per-step displacements. The explicit
    /// fold keeps the empty-trace result at positive zero.
    pub fn trajectory_length(&self) -> f64 {
        self.poses
            .windows(2)
            .map(|w| w[0].position().distance(w[1].position()))
            .fold(0.0, |acc, d| acc + d)
    }

    fn push_event(&mut self, kind: TraceEventKind, step: usize) {
        self.events.push(TraceEvent { kind, step, reason: None });
    }
}

/// Dataset generation parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GenConfig {
    /// Geodesic length bounds for accepted start-goal pairs, meters.
    pub min_len: f64,
    pub max_len: f64,
    /// Reject a pair whose start AND goal both fall within this radius of
    /// an already accepted pair, meters.
    pub similarity_radius: f64,
    /// Attempts per requested episode before giving up.
    pub max_attempts_per_episode: usize,
    /// Hard clearance used when planning reference paths, meters.
    pub clearance: f64,
    pub plan_costs: PlanCosts,
    /// Attach template subgoal programs to episodes.
    pub with_subgoals: bool,
    /// Fractions of train / val_seen / val_unseen episodes.
    pub split_weights: [f64; 3],
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            min_len: 3.0,
            max_len: 15.0,
            similarity_radius: 1.0,
            max_attempts_per_episode: 200,
            clearance: 0.2,
            plan_costs: PlanCosts::default(),
            with_subgoals: false,
            split_weights: [0.5, 0.25, 0.25],
        }
    }
}

/// Reduce a cell path to corner waypoints where the direction changes.
fn simplify_path(path: &[Point]) -> Vec<Point> {
    if path.len() <= 2 {
        return path.to_vec();
    }
    let mut out = vec![path[0]];
    for i in 1..path.len() - 1 {
        let prev = *out.last().unwrap();
        let a = prev.bearing_to(path[i]);
        let b = path[i].bearing_to(path[i + 1]);
        if angle_diff(b, a).abs() > 1e-9 {
            out.push(path[i]);
        }
    }
    out.push(*path.last().unwrap());
    out
}

/// Turn/forward segments of a reference path, as seen from the start
/// heading. Turns are in degrees (positive = left).
fn path_segments(path: &[Point], start_heading: f64) -> Vec<(f64, f64)> {
    let simplified = simplify_path(path);
    let mut heading = start_heading;
    let mut out = Vec::new();
    for w in simplified.windows(2) {
        let bearing = w[0].bearing_to(w[1]);
        let turn = angle_diff(bearing, heading).to_degrees();
        let dist = w[0].distance(w[1]);
        out.push((turn, dist));
        heading = bearing;
    }
    out
}

fn describe_meters(d: f64) -> String {
    if d < 0.75 {
        "a short distance".to_string()
    } else {
        let m = (d * 2.0).round() / 2.0;
        if (m - 1.0).abs() < 1e-9 {
            "1 meter".to_string()
        } else if m.fract() == 0.0 {
            format!("{} meters", m as i64)
        } else {
            format!("{m:.1} meters")
        }
    }
}

/// Template instruction from the reference path geometry, with an optional
/// landmark mention near the goal.
fn render_instruction(segments: &[(f64, f64)], landmark: Option<&str>) -> String {
    let mut parts: Vec<String> = Vec::new();
    for &(turn, dist) in segments.iter().take(4) {
        if turn.abs() >= 30.0 {
            if turn > 0.0 {
                parts.push("turn left".to_string());
            } else {
                parts.push("turn right".to_string());
            }
        }
        if dist >= 0.3 {
            parts.push(format!("walk {}", describe_meters(dist)));
        }
    }
    if parts.is_empty() {
        parts.push("stay where you are".to_string());
    }
    let body = parts.join(", then ");
    let tail = match landmark {
        Some(l) => format!(" and stop near the {l}."),
        None => " and stop.".to_string(),
    };
    let mut s = body + &tail;
    // Sentence case.
    if let Some(first) = s.get_mut(0..1) {
        first.make_ascii_uppercase();
    }
    s
}

/// Template subgoal program mirroring the instruction.
fn render_subgoals(
    segments: &[(f64, f64)],
    landmark: Option<&str>,
) -> SubgoalProgram {
    use crate::semnav::Subgoal;
    let mut steps = Vec::new();
    if let Some(l) = landmark {
        steps.push(Subgoal::MoveToObject(l.to_string()));
    } else {
        for &(turn, dist) in segments.iter().take(6) {
            if turn.abs() >= 10.0 {
                steps.push(Subgoal::Turn(turn));
            }
            if dist >= 0.2 {
                steps.push(Subgoal::MoveForward(dist));
            }
        }
    }
    steps.push(Subgoal::Stop);
    SubgoalProgram { steps }
}

/// Sample episodes: pick random free start/goal cells, keep pairs whose
/// geodesic length fits the bounds, drop near-duplicates, plan the
/// reference path on the dilated grid, and render instructions from it.
///
/// Returns fewer than `n` episodes (with a stderr warning) when the
/// attempt budget runs out.
pub fn sample_episodes(
    map: &GridMap,
    n: usize,
    scene_id: &str,
    config: &GenConfig,
    rng_seed: u64,
) -> Result<Vec<Episode>, BenchError> {
    let costs = dilate_with_blocking(map, config.clearance, config.clearance + 0.1, &config.plan_costs);
    let free: Vec<_> = map
        .free_cells()
        .into_iter()
        .filter(|c| !costs.is_blocked(*c))
        .collect();
    if free.len() < 2 {
        return Err(BenchError::InsufficientFreeSpace);
    }
    let cs = map.cell_size();
    let mut rng = rng_from_seed(rng_seed);
    let mut episodes: Vec<Episode> = Vec::with_capacity(n);
    let mut attempts = 0usize;
    let budget = n * config.max_attempts_per_episode;

    let landmarks = map.labeled_cells();

    while episodes.len() < n && attempts < budget {
        attempts += 1;
        let start_cell = free[rng.gen_range(0..free.len())];
        let goal_cell = free[rng.gen_range(0..free.len())];
        if start_cell == goal_cell {
            continue;
        }
        let start_p = start_cell.center(cs);
        let goal_p = goal_cell.center(cs);
        let len = match geodesic_distance(map, start_p, goal_p) {
            Ok(l) => l,
            Err(_) => continue,
        };
        if len < config.min_len || len > config.max_len {
            continue;
        }
        let similar = episodes.iter().any(|e| {
            Point::new(e.start.x, e.start.y).distance(start_p) < config.similarity_radius
                && e.goal.distance(goal_p) < config.similarity_radius
        });
        if similar {
            continue;
        }
        let Ok(path) = astar(&costs, start_cell, goal_cell) else {
            continue;
        };
        let reference_path: Vec<Point> = path.iter().map(|c| c.center(cs)).collect();
        let heading = normalize_angle(rng.gen_range(-std::f64::consts::PI..=std::f64::consts::PI));

        let landmark_near_goal = landmarks
            .iter()
            .filter(|(c, _)| c.center(cs).distance(goal_p) <= 1.5)
            .min_by(|(a, _), (b, _)| {
                a.center(cs)
                    .distance(goal_p)
                    .partial_cmp(&b.center(cs).distance(goal_p))
                    .unwrap()
            })
            .and_then(|(_, id)| map.label_name(*id));

        let segments = path_segments(&reference_path, heading);
        let instruction = render_instruction(&segments, landmark_near_goal);
        let subgoals = config
            .with_subgoals
            .then(|| render_subgoals(&segments, landmark_near_goal));

        let idx = episodes.len();
        let split = pick_split(&config.split_weights, idx, n);
        episodes.push(Episode {
            episode_id: idx as u32,
            scene_id: scene_id.to_string(),
            start: StartPose { x: start_p.x, y: start_p.y, heading },
            goal: goal_p,
            reference_path,
            instruction_text: instruction,
            subgoals,
            split,
        });
    }
    if episodes.len() < n {
        eprintln!(
            "warning: sampled {} of {} requested episodes after {} attempts",
            episodes.len(),
            n,
            attempts
        );
    }
    Ok(episodes)
}

fn pick_split(weights: &[f64; 3], idx: usize, total: usize) -> Split {
    let total = total.max(1) as f64;
    let w_sum: f64 = weights.iter().sum();
    let train_end = (weights[0] / w_sum * total).round() as usize;
    let seen_end = ((weights[0] + weights[1]) / w_sum * total).round() as usize;
    if idx < train_end {
        Split::Train
    } else if idx < seen_end {
        Split::ValSeen
    } else {
        Split::ValUnseen
    }
}

/// What a policy wants to do this step.
#[derive(Debug, Clone)]
pub enum PolicyDecision {
    Discrete(DiscreteAction),
    /// A sampled action chunk; the runner executes its prefix.
    Chunk(ActionChunk),
}

/// Everything a policy may look at when deciding.
pub struct StepContext<'a> {
    pub obs: &'a crate::world::Observation,
    pub pose: &'a PoseState,
    pub map: &'a GridMap,
    pub episode: &'a Episode,
    pub step: usize,
    pub seed: u64,
}

/// A navigation policy evaluated by the episode runner.
pub trait Policy {
    fn reset(&mut self, episode: &Episode, seed: u64);
    fn decide(&mut self, ctx: &StepContext) -> PolicyDecision;
    /// Called with the poses produced by executing the last decision.
    fn observe_transition(&mut self, _poses: &[PoseState]) {}
}

/// Uniform random baseline.
#[derive(Debug, Default)]
pub struct RandomPolicy;

impl Policy for RandomPolicy {
    fn reset(&mut self, _episode: &Episode, _seed: u64) {}

    fn decide(&mut self, ctx: &StepContext) -> PolicyDecision {
        PolicyDecision::Discrete(random_policy_step(ctx.seed))
    }
}

/// Privileged shortest-path follower.
#[derive(Debug)]
pub struct OraclePolicy {
    pub config: OracleConfig,
}

impl OraclePolicy {
    pub fn new(success_radius: f64) -> Self {
        Self { config: OracleConfig { success_radius, ..OracleConfig::default() } }
    }
}

impl Policy for OraclePolicy {
    fn reset(&mut self, _episode: &Episode, _seed: u64) {}

    fn decide(&mut self, ctx: &StepContext) -> PolicyDecision {
        match oracle_policy_step(ctx.episode.goal, ctx.pose, ctx.map, &self.config) {
            Ok(a) => PolicyDecision::Discrete(a),
            // Planning failure: stopping is the only honest move left.
            Err(_) => PolicyDecision::Discrete(DiscreteAction::Stop),
        }
    }
}

/// Single-GRU classifier baseline with frozen seeded weights.
pub struct Seq2SeqPolicy {
    weights: Seq2SeqWeights,
    hidden: Vec<f64>,
    prev_action: Option<DiscreteAction>,
}

impl Seq2SeqPolicy {
    pub fn seeded(seed: u64) -> Self {
        Self { weights: Seq2SeqWeights::seeded(seed), hidden: vec![0.0; 32], prev_action: None }
    }
}

impl Policy for Seq2SeqPolicy {
    fn reset(&mut self, _episode: &Episode, _seed: u64) {
        self.hidden = vec![0.0; 32];
        self.prev_action = None;
    }

    fn decide(&mut self, ctx: &StepContext) -> PolicyDecision {
        let features =
            FeatureBundle::build(ctx.obs, &ctx.episode.instruction_text, self.prev_action.as_ref());
        match seq2seq_step(&features, &self.hidden, &self.weights) {
            Ok((action, h, _)) => {
                self.hidden = h;
                self.prev_action = Some(action);
                PolicyDecision::Discrete(action)
            }
            Err(_) => PolicyDecision::Discrete(DiscreteAction::Stop),
        }
    }
}

/// Cross-modal attention baseline with frozen seeded weights.
pub struct CmaPolicy {
    weights: CmaWeights,
    h1: Vec<f64>,
    h2: Vec<f64>,
    prev_action: Option<DiscreteAction>,
}

impl CmaPolicy {
    pub fn seeded(seed: u64) -> Self {
        Self {
            weights: CmaWeights::seeded(seed),
            h1: vec![0.0; 32],
            h2: vec![0.0; 32],
            prev_action: None,
        }
    }
}

impl Policy for CmaPolicy {
    fn reset(&mut self, _episode: &Episode, _seed: u64) {
        self.h1 = vec![0.0; 32];
        self.h2 = vec![0.0; 32];
        self.prev_action = None;
    }

    fn decide(&mut self, ctx: &StepContext) -> PolicyDecision {
        let features =
            FeatureBundle::build(ctx.obs, &ctx.episode.instruction_text, self.prev_action.as_ref());
        match cma_step(&features, (&self.h1, &self.h2), &self.weights) {
            Ok((action, (h1, h2), _)) => {
                self.h1 = h1;
                self.h2 = h2;
                self.prev_action = Some(action);
                PolicyDecision::Discrete(action)
            }
            Err(_) => PolicyDecision::Discrete(DiscreteAction::Stop),
        }
    }
}

/// Recurrent diffusion policy: history GRU conditioning, chunk sampling
/// through the seeded noise predictor, and the stop gate.
pub struct RdpPolicy {
    predictor: MlpPredictor,
    stop_head: StopHead,
    history_weights: crate::policy::GruWeights,
    schedule: NoiseSchedule,
    horizon: usize,
    hidden: Vec<f64>,
    start: Option<PoseState>,
    recent_poses: Vec<PoseState>,
    instruction_tokens: crate::policy::Matrix,
}

impl RdpPolicy {
    pub fn seeded(seed: u64) -> Self {
        let schedule = crate::rdp::make_schedule(10, 1e-4, 0.2).expect("default schedule");
        let mut rng = rng_from_seed(derive_seed(seed, 1));
        Self {
            predictor: MlpPredictor::seeded(seed, CONDITION_DIM, DEFAULT_HORIZON, 10),
            stop_head: StopHead::seeded(derive_seed(seed, 2), CONDITION_DIM),
            history_weights: crate::policy::GruWeights::seeded(&mut rng, 32 + 15, 32),
            schedule,
            horizon: DEFAULT_HORIZON,
            hidden: vec![0.0; 32],
            start: None,
            recent_poses: Vec::new(),
            instruction_tokens: crate::policy::Matrix::zeros(1, 32),
        }
    }

    /// Pose of `past` expressed in the body frame of `current`.
    fn relative_to(current: &PoseState, past: &PoseState) -> [f64; 3] {
        let dx = past.x - current.x;
        let dy = past.y - current.y;
        let (sin, cos) = current.heading.sin_cos();
        [
            dx * cos + dy * sin,
            -dx * sin + dy * cos,
            angle_diff(past.heading, current.heading),
        ]
    }
}

impl Policy for RdpPolicy {
    fn reset(&mut self, episode: &Episode, _seed: u64) {
        self.hidden = vec![0.0; 32];
        let start = episode.start_pose();
        self.start = Some(start);
        self.recent_poses = vec![start; 4];
        self.instruction_tokens = crate::policy::embed_instruction(&episode.instruction_text);
    }

    fn decide(&mut self, ctx: &StepContext) -> PolicyDecision {
        let start = self.start.unwrap_or(*ctx.pose);
        let v_c = visual_features(ctx.obs);
        // Current pose relative to the start frame.
        let rc = Self::relative_to(&start, ctx.pose)
            .map(|v| -v); // start-relative: invert the past-relative transform
        // Last four poses relative to the current pose.
        let mut pa = [[0.0; 3]; 4];
        for (slot, past) in pa.iter_mut().zip(self.recent_poses.iter().rev()) {
            *slot = Self::relative_to(ctx.pose, past);
        }
        let Ok(h) = update_history(&self.hidden, &v_c, rc, pa, &self.history_weights) else {
            return PolicyDecision::Discrete(DiscreteAction::Stop);
        };
        self.hidden = h;
        let Ok(cond) = RdpCondition::build(&v_c, &self.instruction_tokens, &self.hidden, rc, pa)
        else {
            return PolicyDecision::Discrete(DiscreteAction::Stop);
        };
        let Ok(chunk) = sample_chunk(&cond, &self.predictor, &self.schedule, self.horizon, ctx.seed)
        else {
            return PolicyDecision::Discrete(DiscreteAction::Stop);
        };
        // Keep waypoints within one control step.
        let chunk = chunk.map(|v| v.clamp(-0.5, 0.5));
        let progress = self.stop_head.predict(&cond.c).unwrap_or(1.0);
        if stop_gate(&chunk, progress) {
            PolicyDecision::Discrete(DiscreteAction::Stop)
        } else {
            PolicyDecision::Chunk(chunk)
        }
    }

    fn observe_transition(&mut self, poses: &[PoseState]) {
        for p in poses {
            self.recent_poses.push(*p);
        }
        let overflow = self.recent_poses.len().saturating_sub(4);
        if overflow > 0 {
            self.recent_poses.drain(0..overflow);
        }
    }
}

/// Names accepted by [`build_policy`], plus the map-based "vlmaps" pipeline
/// handled separately by the CLI.
pub const POLICY_NAMES: [&str; 6] = ["random", "oracle", "seq2seq", "cma", "rdp", "vlmaps"];

/// Construct a trainable-family policy by name. `vlmaps` is not a step
/// policy and returns None here.
pub fn build_policy(name: &str, weight_seed: u64, success_radius: f64) -> Option<Box<dyn Policy>> {
    match name {
        "random" => Some(Box::new(RandomPolicy)),
        "oracle" => Some(Box::new(OraclePolicy::new(success_radius))),
        "seq2seq" => Some(Box::new(Seq2SeqPolicy::seeded(weight_seed))),
        "cma" => Some(Box::new(CmaPolicy::seeded(weight_seed))),
        "rdp" => Some(Box::new(RdpPolicy::seeded(weight_seed))),
        _ => None,
    }
}

/// Runner parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunParams {
    pub max_steps: usize,
    pub success_radius: f64,
    pub sensor: SensorConfig,
    pub control: ControlConfig,
    pub stuck: StuckThresholds,
    /// Waypoints executed per chunk decision.
    pub n_exec: usize,
}

impl Default for RunParams {
    fn default() -> Self {
        Self {
            max_steps: 200,
            success_radius: 3.0,
            sensor: SensorConfig::default(),
            control: ControlConfig::default(),
            stuck: StuckThresholds::default(),
            n_exec: DEFAULT_N_EXEC,
        }
    }
}

/// Run one episode: observe -> decide -> execute -> disturb -> check falls
/// and deadlocks, until Stop, Fall, Stuck, or the step budget runs out.
///
/// Under the flash controller execution is kinematic: no disturbance is
/// applied and fall/stuck checks are skipped, matching evaluation without
/// a locomotion controller.
#[allow(clippy::too_many_arguments)]
pub fn run_episode(
    map: &GridMap,
    episode: &Episode,
    policy: &mut dyn Policy,
    controller: ControllerKind,
    profile: &RobotProfile,
    lighting: LightingCondition,
    params: &RunParams,
    rng_seed: u64,
) -> EpisodeTrace {
    let mut trace = EpisodeTrace::default();
    let mut pose = episode.start_pose();
    trace.poses.push(pose);
    policy.reset(episode, rng_seed);

    let physical = controller != ControllerKind::Flash;
    let mut window = StuckWindow::new(params.stuck.window);
    window.push(&pose);
    let mut step = 0usize;

    'episode: while step < params.max_steps {
        let obs = match observe(
            map,
            &pose,
            profile,
            lighting,
            &params.sensor,
            derive_seed(rng_seed, 0x0b5e0000 + step as u64),
        ) {
            Ok(o) => o,
            Err(e) => {
                trace.events.push(TraceEvent {
                    kind: TraceEventKind::Aborted,
                    step,
                    reason: Some(e.to_string()),
                });
                break;
            }
        };
        let ctx = StepContext {
            obs: &obs,
            pose: &pose,
            map,
            episode,
            step,
            seed: derive_seed(rng_seed, 0x90110000 + step as u64),
        };
        let decision = policy.decide(&ctx);

        match decision {
            PolicyDecision::Discrete(DiscreteAction::Stop) => {
                trace.push_event(TraceEventKind::Stop, step);
                break;
            }
            PolicyDecision::Discrete(action) => {
                trace.actions.push(ActionRecord::Discrete(action));
                let exec_seed = derive_seed(rng_seed, 0xac710000 + step as u64);
                let mut new_poses = Vec::new();
                match execute_discrete(
                    map, &pose, &action, controller, profile, &params.control, exec_seed,
                ) {
                    Ok((next, collided)) => {
                        pose = next;
                        if collided {
                            trace.push_event(TraceEventKind::Collision, step);
                        }
                        step += 1;
                        pose.step_index = step as u32;
                        trace.poses.push(pose);
                        new_poses.push(pose);
                    }
                    Err(e) => {
                        trace.events.push(TraceEvent {
                            kind: TraceEventKind::Aborted,
                            step,
                            reason: Some(e.to_string()),
                        });
                        break;
                    }
                }
                policy.observe_transition(&new_poses);
                if physical {
                    if check_fall(&pose, profile) {
                        pose.fallen = true;
                        *trace.poses.last_mut().unwrap() = pose;
                        trace.push_event(TraceEventKind::Fall, step);
                        break;
                    }
                    window.push(&pose);
                    if check_stuck(&window, &params.stuck) {
                        trace.push_event(TraceEventKind::Stuck, step);
                        break;
                    }
                }
            }
            PolicyDecision::Chunk(chunk) => {
                let exec_seed = derive_seed(rng_seed, 0xac710000 + step as u64);
                let n_exec = params.n_exec.min(params.max_steps - step).max(1);
                let exec = match crate::rdp::execute_chunk(
                    &chunk,
                    n_exec,
                    &pose,
                    controller,
                    profile,
                    map,
                    &params.control,
                    exec_seed,
                ) {
                    Ok(e) => e,
                    Err(e) => {
                        trace.events.push(TraceEvent {
                            kind: TraceEventKind::Aborted,
                            step,
                            reason: Some(e.to_string()),
                        });
                        break;
                    }
                };
                for (i, wp_pose) in exec.poses.iter().enumerate() {
                    trace.actions.push(ActionRecord::Waypoint(chunk.steps[i]));
                    pose = *wp_pose;
                    if exec.collided[i] {
                        trace.push_event(TraceEventKind::Collision, step);
                    }
                    step += 1;
                    pose.step_index = step as u32;
                    trace.poses.push(pose);
                    if physical {
                        if check_fall(&pose, profile) {
                            pose.fallen = true;
                            *trace.poses.last_mut().unwrap() = pose;
                            trace.push_event(TraceEventKind::Fall, step - 1);
                            break 'episode;
                        }
                        window.push(&pose);
                        if check_stuck(&window, &params.stuck) {
                            trace.push_event(TraceEventKind::Stuck, step - 1);
                            break 'episode;
                        }
                    }
                }
                policy.observe_transition(&exec.poses);
            }
        }
    }

    if trace.terminal_event().is_none() {
        trace.push_event(TraceEventKind::Timeout, step);
    }
    trace
}

fn execute_discrete(
    map: &GridMap,
    pose: &PoseState,
    action: &DiscreteAction,
    controller: ControllerKind,
    profile: &RobotProfile,
    control: &ControlConfig,
    seed: u64,
) -> Result<(PoseState, bool), crate::control::ControlError> {
    match controller {
        ControllerKind::Flash => {
            let target = discrete_target(pose, action);
            Ok((clipped_flash(map, pose, &target, profile.footprint_radius), false))
        }
        ControllerKind::Speed => {
            let cmds = discrete_to_commands(action, control)?;
            let mut current = *pose;
            let mut collided = false;
            for (i, cmd) in cmds.iter().enumerate() {
                let out = crate::control::speed_step(
                    &current,
                    cmd,
                    profile,
                    map,
                    derive_seed(seed, i as u64),
                )?;
                current = out.pose;
                collided |= out.collided;
            }
            Ok((current, collided))
        }
        ControllerKind::Path => {
            // Follow a two-point path to the action target with the PID loop.
            let target = discrete_target(pose, action);
            let path = vec![target.position()];
            let mut follower = PathFollower::new();
            let mut current = *pose;
            let mut collided = false;
            for i in 0..24 {
                if follower.finished(&current, &path, control) {
                    break;
                }
                if matches!(action, DiscreteAction::TurnLeft(_) | DiscreteAction::TurnRight(_)) {
                    // Pure rotations do not translate; settle the heading.
                    let err = angle_diff(target.heading, current.heading);
                    if err.abs() < 1e-3 {
                        break;
                    }
                    let omega = (err / control.dt).clamp(-control.omega_max, control.omega_max);
                    let cmd = crate::control::VelocityCommand { v: 0.0, omega, duration: control.dt };
                    let out = crate::control::speed_step(
                        &current,
                        &cmd,
                        profile,
                        map,
                        derive_seed(seed, 100 + i),
                    )?;
                    current = out.pose;
                    collided |= out.collided;
                    continue;
                }
                let (cmd, _) = crate::control::pid_follow_step(
                    &mut follower,
                    &current,
                    &path,
                    &control.gains,
                    control,
                    control.dt,
                )?;
                let out =
                    crate::control::speed_step(&current, &cmd, profile, map, derive_seed(seed, i))?;
                collided |= out.collided;
                if out.collided {
                    current = out.pose;
                    break;
                }
                current = out.pose;
            }
            Ok((current, collided))
        }
    }
}

fn discrete_target(pose: &PoseState, action: &DiscreteAction) -> PoseState {
    let mut target = *pose;
    match *action {
        DiscreteAction::Forward(d) => {
            target.x += d * pose.heading.cos();
            target.y += d * pose.heading.sin();
        }
        DiscreteAction::TurnLeft(deg) => {
            target.heading = normalize_angle(pose.heading + deg.to_radians());
        }
        DiscreteAction::TurnRight(deg) => {
            target.heading = normalize_angle(pose.heading - deg.to_radians());
        }
        DiscreteAction::Stop => {}
    }
    target
}

/// Per-episode metric record.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpisodeMetrics {
    pub episode_id: u32,
    /// Trajectory length, meters.
    pub tl: f64,
    /// Navigation error: geodesic distance from the stop pose to the goal.
    pub ne: f64,
    pub success: bool,
    pub oracle_success: bool,
    pub spl: f64,
    pub fell: bool,
    pub stuck: bool,
    pub terminal: String,
}

/// Aggregate metrics over a batch, percentages in [0, 100].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AggregateMetrics {
    pub n: usize,
    pub tl: f64,
    pub ne: f64,
    pub fr: f64,
    #[serde(rename = "str")]
    pub stuck_rate: f64,
    pub os: f64,
    pub sr: f64,
    pub spl: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsReport {
    pub per_episode: Vec<EpisodeMetrics>,
    pub aggregate: AggregateMetrics,
}

/// Finite stand-in for an unreachable navigation error: longer than any
/// simple path the map can contain.
fn unreachable_ne(map: &GridMap) -> f64 {
    map.width() as f64 * map.height() as f64 * map.cell_size() * std::f64::consts::SQRT_2
}

/// Compute the metric suite for aligned episode/trace lists.
///
/// success  = stopped AND geodesic(stop, goal) <= radius
/// oracle   = any pose came within the radius
/// SPL      = success * l / max(l, TL) with l = geodesic(start, goal)
/// FR / StR = percent of episodes with a fall / stuck terminal.
pub fn compute_metrics(
    map: &GridMap,
    episodes: &[Episode],
    traces: &[EpisodeTrace],
    success_radius: f64,
) -> Result<MetricsReport, BenchError> {
    if episodes.len() != traces.len() {
        return Err(BenchError::LengthMismatch(traces.len(), episodes.len()));
    }
    let mut per_episode = Vec::with_capacity(episodes.len());
    for (ep, trace) in episodes.iter().zip(traces) {
        let tl = trace.trajectory_length();
        let stop_pose = trace.poses.last().expect("trace has at least the start pose");
        let ne = geodesic_distance(map, stop_pose.position(), ep.goal)
            .unwrap_or_else(|_| unreachable_ne(map));
        let terminal = trace
            .terminal_event()
            .map(|e| e.kind.clone())
            .unwrap_or(TraceEventKind::Timeout);
        let stopped = terminal == TraceEventKind::Stop;
        let success = stopped && ne <= success_radius;
        let oracle_success = trace.poses.iter().any(|p| {
            geodesic_distance(map, p.position(), ep.goal)
                .map(|d| d <= success_radius)
                .unwrap_or(false)
        });
        let optimal = geodesic_distance(
            map,
            Point::new(ep.start.x, ep.start.y),
            ep.goal,
        )
        .unwrap_or_else(|_| polyline_length(&ep.reference_path));
        let spl = if success {
            if optimal > 0.0 {
                optimal / optimal.max(tl)
            } else {
                1.0
            }
        } else {
            0.0
        };
        per_episode.push(EpisodeMetrics {
            episode_id: ep.episode_id,
            tl,
            ne,
            success,
            oracle_success,
            spl,
            fell: terminal == TraceEventKind::Fall,
            stuck: terminal == TraceEventKind::Stuck,
            terminal: terminal.name().to_string(),
        });
    }

    let n = per_episode.len();
    let denom = n.max(1) as f64;
    let mean = |f: &dyn Fn(&EpisodeMetrics) -> f64| -> f64 {
        per_episode.iter().map(f).sum::<f64>() / denom
    };
    let aggregate = AggregateMetrics {
        n,
        tl: mean(&|m| m.tl),
        ne: mean(&|m| m.ne),
        fr: 100.0 * mean(&|m| m.fell as u8 as f64),
        stuck_rate: 100.0 * mean(&|m| m.stuck as u8 as f64),
        os: 100.0 * mean(&|m| m.oracle_success as u8 as f64),
        sr: 100.0 * mean(&|m| m.success as u8 as f64),
        spl: 100.0 * mean(&|m| m.spl),
    };
    Ok(MetricsReport { per_episode, aggregate })
}

/// Render aggregates as a text table with the conventional column order.
pub fn format_table(rows: &[(String, &AggregateMetrics)]) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "{:<40} {:>8} {:>8} {:>8} {:>8} {:>8} {:>8} {:>8}\n",
        "run", "TL", "NE", "FR", "StR", "OS", "SR", "SPL"
    ));
    for (name, a) in rows {
        out.push_str(&format!(
            "{:<40} {:>8.2} {:>8.2} {:>8.2} {:>8.2} {:>8.2} {:>8.2} {:>8.2}\n",
            name, a.tl, a.ne, a.fr, a.stuck_rate, a.os, a.sr, a.spl
        ));
    }
    out
}
