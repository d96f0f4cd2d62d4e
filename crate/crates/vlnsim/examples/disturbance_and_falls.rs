//! The attitude disturbance process and the fall/stuck detectors across
//! embodiments: drive each profile into a wall and watch the roll build up.
//!
//! Usage: cargo run --example disturbance_and_falls

use vlnsim::control::{speed_step, VelocityCommand};
use vlnsim::embodiment::{
    check_fall, check_stuck, default_profile, ProfileKind, StuckThresholds, StuckWindow,
};
use vlnsim::rng::derive_seed;
use vlnsim::world::GridMap;
use vlnsim::PoseState;

fn main() -> anyhow::Result<()> {
    let map = GridMap::generate_random(40, 40, 0.0, 3);

    for kind in [
        ProfileKind::Flash,
        ProfileKind::Wheeled,
        ProfileKind::Quadruped,
        ProfileKind::Humanoid,
    ] {
        let profile = default_profile(kind);
        let mut pose = PoseState::new(3.2, 2.0, 0.0);
        let mut window = StuckWindow::new(50);
        let mut fell_at = None;
        let mut stuck_at = None;
        // Push into the wall for 120 ticks; collisions kick the attitude.
        for tick in 0..120u64 {
            let cmd = VelocityCommand { v: 0.8, omega: 0.0, duration: 0.1 };
            let out = speed_step(&pose, &cmd, &profile, &map, derive_seed(7, tick))?;
            pose = out.pose;
            window.push(&pose);
            if fell_at.is_none() && check_fall(&pose, &profile) {
                fell_at = Some(tick);
                break;
            }
            if stuck_at.is_none() && check_stuck(&window, &StuckThresholds::default()) {
                stuck_at = Some(tick);
            }
        }
        println!(
            "{:<10} roll {:>6.1} deg, pitch {:>6.1} deg, fell: {:?}, stuck: {:?}",
            kind.name(),
            pose.roll.to_degrees(),
            pose.pitch.to_degrees(),
            fell_at,
            stuck_at
        );
    }
    println!("\nfall thresholds: roll > 15 deg or pitch > 35 deg");
    println!("stuck: position and heading change under 0.2 m / 15 deg for 50 steps");
    Ok(())
}
