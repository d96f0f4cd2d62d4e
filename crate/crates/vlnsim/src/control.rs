//! Controllers: flash (teleport), move-by-speed (unicycle with collision and
//! disturbance), move-along-path (PID waypoint follower), and the discrete
//! action translation used by classification policies.

use crate::embodiment::{apply_disturbance, EmbodimentError, PoseState, RobotProfile};
use crate::geom::{angle_diff, normalize_angle, Point};
use crate::rng::{derive_seed, rng_from_seed};
use crate::world::{CellKind, GridMap};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ControlError {
    #[error("flash target ({0:.3}, {1:.3}) is inside an obstacle")]
    TargetInObstacle(f64, f64),
    #[error("path is empty")]
    EmptyPath,
    #[error("stop is terminal and has no motion commands")]
    StopIsTerminal,
    #[error(transparent)]
    Embodiment(#[from] EmbodimentError),
}

/// Velocity command for the move-by-speed controller.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VelocityCommand {
    /// Linear speed, m/s.
    pub v: f64,
    /// Angular speed, rad/s.
    pub omega: f64,
    /// Command duration, seconds.
    pub duration: f64,
}

/// Discrete VLN action with its magnitude.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum DiscreteAction {
    /// Move forward by the given distance, meters.
    Forward(f64),
    /// Turn left by the given angle, degrees.
    TurnLeft(f64),
    /// Turn right by the given angle, degrees.
    TurnRight(f64),
    Stop,
}

/// Conventional VLN-CE step sizes: forward 0.25 m, turns 15 degrees.
pub const FORWARD_STEP_M: f64 = 0.25;
pub const TURN_STEP_DEG: f64 = 15.0;

impl DiscreteAction {
    pub fn forward() -> Self {
        Self::Forward(FORWARD_STEP_M)
    }

    pub fn turn_left() -> Self {
        Self::TurnLeft(TURN_STEP_DEG)
    }

    pub fn turn_right() -> Self {
        Self::TurnRight(TURN_STEP_DEG)
    }
}

/// PID gains for the waypoint follower's heading loop.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PidGains {
    pub kp: f64,
    pub ki: f64,
    pub kd: f64,
}

impl Default for PidGains {
    fn default() -> Self {
        Self { kp: 2.0, ki: 0.0, kd: 0.1 }
    }
}

/// Speed limits, control tick, and follower parameters.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ControlConfig {
    pub v_max: f64,
    pub omega_max: f64,
    /// Control tick, seconds.
    pub dt: f64,
    /// Waypoint capture radius for the path follower, meters.
    pub capture_radius: f64,
    pub gains: PidGains,
}

impl Default for ControlConfig {
    fn default() -> Self {
        Self {
            v_max: 1.0,
            omega_max: std::f64::consts::FRAC_PI_2,
            dt: 0.1,
            capture_radius: 0.2,
            gains: PidGains::default(),
        }
    }
}

/// Which controller family executes policy output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ControllerKind {
    /// Teleport execution, no physics.
    Flash,
    /// Velocity commands through the unicycle model with collision and
    /// disturbance.
    Speed,
    /// Waypoint following with the PID loop on top of velocity commands.
    Path,
}

impl ControllerKind {
    pub fn by_name(name: &str) -> Option<Self> {
        match name {
            "flash" => Some(Self::Flash),
            "speed" => Some(Self::Speed),
            "path" => Some(Self::Path),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Flash => "flash",
            Self::Speed => "speed",
            Self::Path => "path",
        }
    }
}

/// Teleport to the target pose, ignoring everything in between.
///
/// The only check is that the target itself is not inside an obstacle.
pub fn flash_step(pose: &PoseState, target: &PoseState, map: &GridMap) -> Result<PoseState, ControlError> {
    let cell = map
        .cell_at(target.position())
        .ok_or(ControlError::TargetInObstacle(target.x, target.y))?;
    if map.is_obstacle(cell) {
        return Err(ControlError::TargetInObstacle(target.x, target.y));
    }
    let mut out = *pose;
    out.x = target.x;
    out.y = target.y;
    out.heading = normalize_angle(target.heading);
    Ok(out)
}

/// Exact unicycle integration of a velocity command over `dt`.
pub fn diff_drive_step(pose: &PoseState, cmd: &VelocityCommand, dt: f64) -> PoseState {
    let mut out = *pose;
    if cmd.omega.abs() < 1e-12 {
        out.x += cmd.v * dt * pose.heading.cos();
        out.y += cmd.v * dt * pose.heading.sin();
    } else {
        let r = cmd.v / cmd.omega;
        let h1 = pose.heading + cmd.omega * dt;
        out.x += r * (h1.sin() - pose.heading.sin());
        out.y += r * (-h1.cos() + pose.heading.cos());
    }
    out.heading = normalize_angle(pose.heading + cmd.omega * dt);
    out
}

/// True if a circular footprint centered at (x, y) overlaps any obstacle
/// cell (or leaves the map). Boundary contact does not count as overlap.
pub fn footprint_collides(map: &GridMap, x: f64, y: f64, radius: f64) -> bool {
    let cs = map.cell_size();
    let min_x = ((x - radius) / cs).floor() as isize;
    let max_x = ((x + radius) / cs).floor() as isize;
    let min_y = ((y - radius) / cs).floor() as isize;
    let max_y = ((y + radius) / cs).floor() as isize;
    for cy in min_y..=max_y {
        for cx in min_x..=max_x {
            if cx < 0 || cy < 0 || cx as usize >= map.width() || cy as usize >= map.height() {
                return true;
            }
            let cell = crate::geom::Cell::new(cx as usize, cy as usize);
            if map.kind(cell) != CellKind::Obstacle {
                continue;
            }
            // Closest point of the cell rectangle to the footprint center.
            // The epsilon keeps exactly-flush contact from registering as
            // overlap under float rounding.
            let (x0, y0) = (cx as f64 * cs, cy as f64 * cs);
            let nx = x.clamp(x0, x0 + cs);
            let ny = y.clamp(y0, y0 + cs);
            let d2 = (x - nx).powi(2) + (y - ny).powi(2);
            if d2 < radius * radius - 1e-12 {
                return true;
            }
        }
    }
    false
}

/// Outcome of one speed-controlled step.
#[derive(Debug, Clone, Copy)]
pub struct SpeedStepOutcome {
    pub pose: PoseState,
    pub collided: bool,
    pub on_hole: bool,
}

/// Execute a velocity command through the physical motion model: speed
/// tracking error, unicycle integration, collision clipping against the
/// footprint, hole detection, then the attitude disturbance.
///
/// Hole impulses apply to legged profiles only; wheeled robots roll over
/// floor holes. Flash profiles have all-zero disturbance so the same code
/// path stays exact for them.
pub fn speed_step(
    pose: &PoseState,
    cmd: &VelocityCommand,
    profile: &RobotProfile,
    map: &GridMap,
    rng_seed: u64,
) -> Result<SpeedStepOutcome, ControlError> {
    if pose.fallen {
        return Err(ControlError::Embodiment(EmbodimentError::AlreadyFallen));
    }
    let mut rng = rng_from_seed(derive_seed(rng_seed, 0));
    let e = profile.speed_tracking_error;
    let v_eff = if e > 0.0 { cmd.v * (1.0 + rng.gen_range(-e..=e)) } else { cmd.v };
    let dt = cmd.duration;

    // Substep so collision clipping resolves at sub-cell resolution.
    let travel = (v_eff * dt).abs();
    let n_sub = ((travel / (map.cell_size() / 4.0)).ceil() as usize).max(1);
    let sub_dt = dt / n_sub as f64;
    let eff_cmd = VelocityCommand { v: v_eff, omega: cmd.omega, duration: dt };

    let mut current = *pose;
    let mut collided = false;
    for _ in 0..n_sub {
        let candidate = diff_drive_step(&current, &eff_cmd, sub_dt);
        if footprint_collides(map, candidate.x, candidate.y, profile.footprint_radius) {
            collided = true;
            break;
        }
        current = candidate;
    }

    let on_hole = profile.kind.is_legged()
        && map
            .cell_at(current.position())
            .map(|c| map.kind(c) == CellKind::Hole)
            .unwrap_or(false);

    let disturbed = apply_disturbance(
        &current,
        profile,
        cmd.v.abs(),
        collided,
        on_hole,
        derive_seed(rng_seed, 1),
    )?;
    Ok(SpeedStepOutcome { pose: disturbed, collided, on_hole })
}

/// Stateful PID waypoint follower for move-along-path control.
#[derive(Debug, Clone)]
pub struct PathFollower {
    target_index: usize,
    prev_heading_error: Option<f64>,
    integral: f64,
}

impl Default for PathFollower {
    fn default() -> Self {
        Self::new()
    }
}

impl PathFollower {
    pub fn new() -> Self {
        Self { target_index: 0, prev_heading_error: None, integral: 0.0 }
    }

    pub fn target_index(&self) -> usize {
        self.target_index
    }

    /// True once the follower has captured the final waypoint.
    pub fn finished(&self, pose: &PoseState, path: &[Point], config: &ControlConfig) -> bool {
        match path.last() {
            Some(last) => {
                self.target_index + 1 >= path.len()
                    && pose.position().distance(*last) <= config.capture_radius
            }
            None => true,
        }
    }
}

/// One PID follower step: emits a bounded velocity command steering toward
/// the current waypoint and advances the waypoint index on capture.
///
/// Returns the command and the (possibly advanced) waypoint index.
pub fn pid_follow_step(
    follower: &mut PathFollower,
    pose: &PoseState,
    path: &[Point],
    gains: &PidGains,
    config: &ControlConfig,
    dt: f64,
) -> Result<(VelocityCommand, usize), ControlError> {
    if path.is_empty() {
        return Err(ControlError::EmptyPath);
    }
    while follower.target_index + 1 < path.len()
        && pose.position().distance(path[follower.target_index]) <= config.capture_radius
    {
        follower.target_index += 1;
        follower.prev_heading_error = None;
        follower.integral = 0.0;
    }
    let target = path[follower.target_index];
    let dist = pose.position().distance(target);
    if follower.target_index + 1 >= path.len() && dist <= config.capture_radius {
        return Ok((VelocityCommand { v: 0.0, omega: 0.0, duration: dt }, follower.target_index));
    }

    let heading_error = angle_diff(pose.position().bearing_to(target), pose.heading);
    follower.integral += heading_error * dt;
    let derivative = match follower.prev_heading_error {
        Some(prev) => (heading_error - prev) / dt,
        None => 0.0,
    };
    follower.prev_heading_error = Some(heading_error);

    let omega = (gains.kp * heading_error + gains.ki * follower.integral + gains.kd * derivative)
        .clamp(-config.omega_max, config.omega_max);
    // Slow down when facing away from the waypoint or when close to it.
    let v = (config.v_max * heading_error.cos().max(0.0) * (dist / 0.5).min(1.0))
        .clamp(0.0, config.v_max);
    Ok((VelocityCommand { v, omega, duration: dt }, follower.target_index))
}

/// Expand a discrete action into velocity commands whose integral equals the
/// commanded magnitude exactly.
pub fn discrete_to_commands(
    action: &DiscreteAction,
    config: &ControlConfig,
) -> Result<Vec<VelocityCommand>, ControlError> {
    let mut out = Vec::new();
    match *action {
        DiscreteAction::Stop => return Err(ControlError::StopIsTerminal),
        DiscreteAction::Forward(dist) => {
            let per_tick = config.v_max * config.dt;
            let full = (dist / per_tick).floor() as usize;
            for _ in 0..full {
                out.push(VelocityCommand { v: config.v_max, omega: 0.0, duration: config.dt });
            }
            let rem = dist - full as f64 * per_tick;
            if rem > 1e-12 {
                out.push(VelocityCommand { v: rem / config.dt, omega: 0.0, duration: config.dt });
            }
        }
        DiscreteAction::TurnLeft(deg) | DiscreteAction::TurnRight(deg) => {
            let sign = if matches!(action, DiscreteAction::TurnLeft(_)) { 1.0 } else { -1.0 };
            let total = deg.to_radians();
            let per_tick = config.omega_max * config.dt;
            let full = (total / per_tick).floor() as usize;
            for _ in 0..full {
                out.push(VelocityCommand { v: 0.0, omega: sign * config.omega_max, duration: config.dt });
            }
            let rem = total - full as f64 * per_tick;
            if rem > 1e-12 {
                out.push(VelocityCommand { v: 0.0, omega: sign * rem / config.dt, duration: config.dt });
            }
        }
    }
    Ok(out)
}

/// Teleport toward `target`, clipped at the first footprint contact.
///
/// This is the runner-level execution model for the flash controller: motion
/// is kinematic (no disturbance, no attitude), but the agent cannot pass
/// through walls. The raw [`flash_step`] op stays unclipped.
pub fn clipped_flash(map: &GridMap, pose: &PoseState, target: &PoseState, footprint: f64) -> PoseState {
    let from = pose.position();
    let to = target.position();
    let dist = from.distance(to);
    let mut out = *pose;
    out.heading = normalize_angle(target.heading);
    if dist < 1e-12 {
        return out;
    }
    let steps = ((dist / (map.cell_size() / 4.0)).ceil() as usize).max(1);
    let (dx, dy) = ((to.x - from.x) / steps as f64, (to.y - from.y) / steps as f64);
    let (mut x, mut y) = (from.x, from.y);
    for _ in 0..steps {
        let (nx, ny) = (x + dx, y + dy);
        if footprint_collides(map, nx, ny, footprint) {
            break;
        }
        x = nx;
        y = ny;
    }
    out.x = x;
    out.y = y;
    out
}
