//! Robot embodiments: profiles, pose state, the attitude disturbance
//! process, and the fall / stuck detectors.
//!
//! Locomotion shake is modeled as an AR(1) process on roll and pitch, kicked
//! by collisions and floor holes. A robot falls when attitude exceeds the
//! profile thresholds (roll > 15 deg or pitch > 35 deg by default) and is
//! stuck when both position and heading barely change over a 50-step window.

use crate::geom::{angle_diff, normalize_angle, Point};
use crate::rng::rng_from_seed;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::collections::VecDeque;
use thiserror::Error;

/// AR(1) retention factor of the attitude disturbance process.
pub const ATTITUDE_RHO: f64 = 0.9;

#[derive(Debug, Error)]
pub enum EmbodimentError {
    #[error("robot has already fallen")]
    AlreadyFallen,
}

/// The embodiment families supported by the simulator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ProfileKind {
    Humanoid,
    Quadruped,
    Wheeled,
    /// Idealized agent: teleport-style motion, no physical disturbance.
    Flash,
}

impl ProfileKind {
    pub fn is_legged(&self) -> bool {
        matches!(self, ProfileKind::Humanoid | ProfileKind::Quadruped)
    }

    pub fn by_name(name: &str) -> Option<Self> {
        match name {
            "humanoid" => Some(Self::Humanoid),
            "quadruped" => Some(Self::Quadruped),
            "wheeled" => Some(Self::Wheeled),
            "flash" => Some(Self::Flash),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Humanoid => "humanoid",
            Self::Quadruped => "quadruped",
            Self::Wheeled => "wheeled",
            Self::Flash => "flash",
        }
    }
}

/// Per-embodiment physical parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RobotProfile {
    pub kind: ProfileKind,
    /// Camera height above the floor, meters.
    pub camera_height: f64,
    /// Collision footprint radius, meters.
    pub footprint_radius: f64,
    /// Attitude noise scale (std-dev of the AR(1) innovation), radians.
    pub disturbance_sigma: f64,
    /// Attitude kick applied on collision, radians.
    pub collision_impulse: f64,
    /// Attitude kick applied when standing on a hole cell, radians.
    pub hole_impulse: f64,
    /// Relative speed tracking error, fraction in [0, 1).
    pub speed_tracking_error: f64,
    /// Fall threshold on |roll|, degrees.
    pub fall_roll_deg: f64,
    /// Fall threshold on |pitch|, degrees.
    pub fall_pitch_deg: f64,
}

/// Default parameters for each embodiment.
///
/// Camera heights: humanoid 1.8 m, quadruped 0.5 m, flash 1.2 m, wheeled
/// 0.3 m. The flash profile is fully idealized: every disturbance term is
/// zero, so it can never fall.
pub fn default_profile(kind: ProfileKind) -> RobotProfile {
    match kind {
        ProfileKind::Humanoid => RobotProfile {
            kind,
            camera_height: 1.8,
            footprint_radius: 0.25,
            disturbance_sigma: 0.025,
            collision_impulse: 0.15,
            hole_impulse: 0.20,
            speed_tracking_error: 0.10,
            fall_roll_deg: 15.0,
            fall_pitch_deg: 35.0,
        },
        ProfileKind::Quadruped => RobotProfile {
            kind,
            camera_height: 0.5,
            footprint_radius: 0.25,
            disturbance_sigma: 0.020,
            collision_impulse: 0.13,
            hole_impulse: 0.25,
            speed_tracking_error: 0.15,
            fall_roll_deg: 15.0,
            fall_pitch_deg: 35.0,
        },
        ProfileKind::Wheeled => RobotProfile {
            kind,
            camera_height: 0.3,
            footprint_radius: 0.18,
            disturbance_sigma: 0.004,
            collision_impulse: 0.02,
            hole_impulse: 0.0,
            speed_tracking_error: 0.02,
            fall_roll_deg: 15.0,
            fall_pitch_deg: 35.0,
        },
        ProfileKind::Flash => RobotProfile {
            kind,
            camera_height: 1.2,
            footprint_radius: 0.20,
            disturbance_sigma: 0.0,
            collision_impulse: 0.0,
            hole_impulse: 0.0,
            speed_tracking_error: 0.0,
            fall_roll_deg: 15.0,
            fall_pitch_deg: 35.0,
        },
    }
}

impl RobotProfile {
    /// Apply one key-value override, as read from a profile config block.
    pub fn apply_override(&mut self, key: &str, value: &str) -> Result<(), String> {
        let parsed: f64 = value.parse().map_err(|_| format!("bad value for {key}: {value:?}"))?;
        match key {
            "camera_height" => self.camera_height = parsed,
            "footprint_radius" => self.footprint_radius = parsed,
            "disturbance_sigma" => self.disturbance_sigma = parsed,
            "collision_impulse" => self.collision_impulse = parsed,
            "hole_impulse" => self.hole_impulse = parsed,
            "speed_tracking_error" => self.speed_tracking_error = parsed,
            "fall_roll_deg" => self.fall_roll_deg = parsed,
            "fall_pitch_deg" => self.fall_pitch_deg = parsed,
            other => return Err(format!("unknown profile field {other:?}")),
        }
        Ok(())
    }

    /// Serialize as a key-value config block; `apply_override` accepts
    /// every line back.
    pub fn to_kv_block(&self) -> String {
        format!(
            "camera_height = {}\nfootprint_radius = {}\ndisturbance_sigma = {}\n\
             collision_impulse = {}\nhole_impulse = {}\nspeed_tracking_error = {}\n\
             fall_roll_deg = {}\nfall_pitch_deg = {}\n",
            self.camera_height,
            self.footprint_radius,
            self.disturbance_sigma,
            self.collision_impulse,
            self.hole_impulse,
            self.speed_tracking_error,
            self.fall_roll_deg,
            self.fall_pitch_deg
        )
    }
}

/// Planar pose plus attitude and fall status; the unit of physical
/// simulation. `fallen` is absorbing within an episode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseState {
    pub x: f64,
    pub y: f64,
    /// Heading, normalized to (-pi, pi].
    pub heading: f64,
    pub roll: f64,
    pub pitch: f64,
    pub fallen: bool,
    pub step_index: u32,
}

impl PoseState {
    pub fn new(x: f64, y: f64, heading: f64) -> Self {
        Self {
            x,
            y,
            heading: normalize_angle(heading),
            roll: 0.0,
            pitch: 0.0,
            fallen: false,
            step_index: 0,
        }
    }

    pub fn position(&self) -> Point {
        Point::new(self.x, self.y)
    }
}

/// Apply one step of the attitude disturbance process.
///
/// roll' = rho * roll + N(0, sigma * (1 + v)) + collided * collision_impulse
///       + on_hole * hole_impulse, and likewise for pitch with independent
/// noise. Position and heading are unchanged.
pub fn apply_disturbance(
    pose: &PoseState,
    profile: &RobotProfile,
    commanded_speed: f64,
    collided: bool,
    on_hole: bool,
    rng_seed: u64,
) -> Result<PoseState, EmbodimentError> {
    if pose.fallen {
        return Err(EmbodimentError::AlreadyFallen);
    }
    let sigma = profile.disturbance_sigma * (1.0 + commanded_speed.abs());
    let mut rng = rng_from_seed(rng_seed);
    let (noise_roll, noise_pitch) = if sigma > 0.0 {
        let normal = Normal::new(0.0, sigma).expect("sigma > 0");
        (normal.sample(&mut rng), normal.sample(&mut rng))
    } else {
        (0.0, 0.0)
    };
    let kick = if collided { profile.collision_impulse } else { 0.0 }
        + if on_hole { profile.hole_impulse } else { 0.0 };
    let mut out = *pose;
    out.roll = ATTITUDE_RHO * pose.roll + noise_roll + kick;
    out.pitch = ATTITUDE_RHO * pose.pitch + noise_pitch + kick;
    Ok(out)
}

/// True iff the attitude exceeds the fall thresholds:
/// |roll| > fall_roll_deg or |pitch| > fall_pitch_deg.
///
/// The comparison happens in radians with the threshold converted once, so
/// an attitude constructed as `deg.to_radians()` sits exactly on the
/// boundary and does not trip the strict inequality.
pub fn check_fall(pose: &PoseState, profile: &RobotProfile) -> bool {
    pose.roll.abs() > profile.fall_roll_deg.to_radians()
        || pose.pitch.abs() > profile.fall_pitch_deg.to_radians()
}

/// Thresholds for the stuck detector.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct StuckThresholds {
    /// Window length in steps.
    pub window: usize,
    /// Maximum pairwise displacement within the window, meters.
    pub position: f64,
    /// Maximum pairwise heading change within the window, degrees.
    pub heading_deg: f64,
}

impl Default for StuckThresholds {
    fn default() -> Self {
        Self { window: 50, position: 0.2, heading_deg: 15.0 }
    }
}

/// Ring buffer of recent poses for stuck detection.
#[derive(Debug, Clone)]
pub struct StuckWindow {
    capacity: usize,
    poses: VecDeque<(Point, f64)>,
}

impl StuckWindow {
    pub fn new(capacity: usize) -> Self {
        Self { capacity, poses: VecDeque::with_capacity(capacity) }
    }

    pub fn push(&mut self, pose: &PoseState) {
        if self.poses.len() == self.capacity {
            self.poses.pop_front();
        }
        self.poses.push_back((pose.position(), pose.heading));
    }

    pub fn is_full(&self) -> bool {
        self.poses.len() == self.capacity
    }

    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }

    pub fn clear(&mut self) {
        self.poses.clear();
    }
}

/// True iff the window is full and both the maximum pairwise displacement
/// and the maximum pairwise heading change stay under the thresholds.
///
/// Pairwise measures make the check invariant under rigid translation and
/// rotation of the whole window.
pub fn check_stuck(window: &StuckWindow, thresholds: &StuckThresholds) -> bool {
    if !window.is_full() {
        return false;
    }
    let heading_limit = thresholds.heading_deg.to_radians();
    let poses: Vec<_> = window.poses.iter().copied().collect();
    for i in 0..poses.len() {
        for j in (i + 1)..poses.len() {
            if poses[i].0.distance(poses[j].0) >= thresholds.position {
                return false;
            }
            if angle_diff(poses[i].1, poses[j].1).abs() >= heading_limit {
                return false;
            }
        }
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_camera_heights() {
        assert_eq!(default_profile(ProfileKind::Humanoid).camera_height, 1.8);
        assert_eq!(default_profile(ProfileKind::Quadruped).camera_height, 0.5);
        assert_eq!(default_profile(ProfileKind::Flash).camera_height, 1.2);
        assert_eq!(default_profile(ProfileKind::Wheeled).camera_height, 0.3);
    }

    #[test]
    fn flash_profile_has_no_disturbance() {
        let p = default_profile(ProfileKind::Flash);
        assert_eq!(p.disturbance_sigma, 0.0);
        assert_eq!(p.collision_impulse, 0.0);
        assert_eq!(p.hole_impulse, 0.0);
        assert_eq!(p.speed_tracking_error, 0.0);
    }

    #[test]
    fn flash_disturbance_is_pure_decay() {
        let profile = default_profile(ProfileKind::Flash);
        let mut pose = PoseState::new(0.0, 0.0, 0.0);
        pose.roll = 0.1;
        pose.pitch = -0.2;
        let out = apply_disturbance(&pose, &profile, 1.0, true, true, 3).unwrap();
        assert!((out.roll - ATTITUDE_RHO * 0.1).abs() < 1e-15);
        assert!((out.pitch - ATTITUDE_RHO * -0.2).abs() < 1e-15);
    }

    #[test]
    fn collision_shifts_mean_by_impulse() {
        // Compare sample means with and without the collision flag.
        let profile = default_profile(ProfileKind::Humanoid);
        let pose = PoseState::new(0.0, 0.0, 0.0);
        let n = 10_000;
        let (mut with, mut without) = (0.0, 0.0);
        for i in 0..n {
            with += apply_disturbance(&pose, &profile, 0.0, true, false, i).unwrap().roll;
            without += apply_disturbance(&pose, &profile, 0.0, false, false, i).unwrap().roll;
        }
        let delta = (with - without) / n as f64;
        assert!((delta - profile.collision_impulse).abs() < 1e-12);
    }

    #[test]
    fn disturbance_deterministic_per_seed() {
        let profile = default_profile(ProfileKind::Quadruped);
        let pose = PoseState::new(0.0, 0.0, 0.0);
        let a = apply_disturbance(&pose, &profile, 0.5, false, true, 77).unwrap();
        let b = apply_disturbance(&pose, &profile, 0.5, false, true, 77).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn fallen_pose_rejects_disturbance() {
        let profile = default_profile(ProfileKind::Humanoid);
        let mut pose = PoseState::new(0.0, 0.0, 0.0);
        pose.fallen = true;
        assert!(apply_disturbance(&pose, &profile, 0.0, false, false, 1).is_err());
    }

    #[test]
    fn fall_thresholds_roll_and_pitch() {
        let profile = default_profile(ProfileKind::Humanoid);
        let mut pose = PoseState::new(0.0, 0.0, 0.0);

        pose.roll = 16.0f64.to_radians();
        assert!(check_fall(&pose, &profile));

        pose.roll = 0.0;
        pose.pitch = 36.0f64.to_radians();
        assert!(check_fall(&pose, &profile));

        pose.roll = 10.0f64.to_radians();
        pose.pitch = 30.0f64.to_radians();
        assert!(!check_fall(&pose, &profile));
    }

    #[test]
    fn fall_is_monotone_in_attitude() {
        let profile = default_profile(ProfileKind::Humanoid);
        let mut prev = false;
        for i in 0..60 {
            let mut pose = PoseState::new(0.0, 0.0, 0.0);
            pose.roll = (i as f64 * 0.5).to_radians();
            let now = check_fall(&pose, &profile);
            assert!(!prev || now, "fall flipped back off at roll index {i}");
            prev = now;
        }
    }

    fn window_of(poses: &[(f64, f64, f64)]) -> StuckWindow {
        let mut w = StuckWindow::new(50);
        for &(x, y, h) in poses {
            w.push(&PoseState::new(x, y, h));
        }
        w
    }

    #[test]
    fn stuck_when_window_full_and_tight() {
        let poses: Vec<_> = (0..50)
            .map(|i| (0.01 * (i % 3) as f64, 0.01 * (i % 2) as f64, 0.02 * (i % 4) as f64))
            .collect();
        let w = window_of(&poses);
        assert!(check_stuck(&w, &StuckThresholds::default()));
    }

    #[test]
    fn not_stuck_when_window_short() {
        let poses: Vec<_> = (0..49).map(|_| (0.0, 0.0, 0.0)).collect();
        let w = window_of(&poses);
        assert!(!check_stuck(&w, &StuckThresholds::default()));
    }

    #[test]
    fn not_stuck_when_one_pose_escapes() {
        let mut poses: Vec<_> = (0..50).map(|_| (0.0, 0.0, 0.0)).collect();
        poses[25] = (0.5, 0.0, 0.0);
        let w = window_of(&poses);
        assert!(!check_stuck(&w, &StuckThresholds::default()));
    }

    #[test]
    fn stuck_invariant_under_rigid_motion() {
        let base: Vec<_> = (0..50)
            .map(|i| (0.03 * ((i * 7) % 5) as f64, 0.02 * ((i * 3) % 4) as f64, 0.03 * (i % 3) as f64))
            .collect();
        let thresholds = StuckThresholds::default();
        let plain = check_stuck(&window_of(&base), &thresholds);

        let (tx, ty, rot) = (12.0_f64, -3.0_f64, 2.1_f64);
        let moved: Vec<_> = base
            .iter()
            .map(|&(x, y, h)| {
                let (xr, yr) = (x * rot.cos() - y * rot.sin(), x * rot.sin() + y * rot.cos());
                (xr + tx, yr + ty, normalize_angle(h + rot))
            })
            .collect();
        assert_eq!(plain, check_stuck(&window_of(&moved), &thresholds));
    }

    #[test]
    fn profile_kv_block_round_trips() {
        let base = default_profile(ProfileKind::Quadruped);
        let mut rebuilt = default_profile(ProfileKind::Quadruped);
        rebuilt.camera_height = 0.0;
        rebuilt.fall_roll_deg = 0.0;
        for line in base.to_kv_block().lines() {
            let (k, v) = line.split_once('=').unwrap();
            rebuilt.apply_override(k.trim(), v.trim()).unwrap();
        }
        assert_eq!(base, rebuilt);
        assert!(rebuilt.apply_override("wingspan", "2.0").is_err());
        assert!(rebuilt.apply_override("camera_height", "tall").is_err());
    }

    #[test]
    fn derive_seed_helper_used_for_stream_splits() {
        use crate::rng::derive_seed;
        // Smoke check that two salts give different disturbance draws.
        let profile = default_profile(ProfileKind::Humanoid);
        let pose = PoseState::new(0.0, 0.0, 0.0);
        let a = apply_disturbance(&pose, &profile, 0.0, false, false, derive_seed(9, 0)).unwrap();
        let b = apply_disturbance(&pose, &profile, 0.0, false, false, derive_seed(9, 1)).unwrap();
        assert_ne!(a.roll, b.roll);
    }
}
