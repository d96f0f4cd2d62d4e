//! The three controller families side by side: flash teleports, velocity
//! commands through the unicycle model, and PID waypoint following.
//!
//! Usage: cargo run --example drive_controllers

use std::f64::consts::FRAC_PI_2;
use vlnsim::control::{
    diff_drive_step, discrete_to_commands, flash_step, pid_follow_step, speed_step, DiscreteAction,
    PathFollower, VelocityCommand,
};
use vlnsim::embodiment::{default_profile, ProfileKind};
use vlnsim::geom::Point;
use vlnsim::world::GridMap;
use vlnsim::{ControlConfig, PoseState};

fn main() -> anyhow::Result<()> {
    let map = GridMap::generate_random(40, 40, 0.0, 1);
    let cfg = ControlConfig::default();

    // Flash: instant repositioning, geometry in between is ignored.
    let pose = PoseState::new(1.0, 1.0, 0.0);
    let target = PoseState::new(2.5, 2.0, FRAC_PI_2);
    let flashed = flash_step(&pose, &target, &map)?;
    println!("flash: ({:.1}, {:.1}) -> ({:.1}, {:.1})", pose.x, pose.y, flashed.x, flashed.y);

    // Exact unicycle integration: a quarter circle of radius 1.
    let arc = diff_drive_step(&pose, &VelocityCommand { v: 1.0, omega: 1.0, duration: 0.0 }, FRAC_PI_2);
    println!(
        "quarter arc: ({:.3}, {:.3}), heading {:.1} deg",
        arc.x,
        arc.y,
        arc.heading.to_degrees()
    );

    // Discrete actions expand into bounded velocity commands.
    for action in [DiscreteAction::forward(), DiscreteAction::turn_left()] {
        let cmds = discrete_to_commands(&action, &cfg)?;
        let dist: f64 = cmds.iter().map(|c| c.v * c.duration).sum();
        let turn: f64 = cmds.iter().map(|c| c.omega * c.duration).sum();
        println!(
            "{action:?} -> {} commands, {:.3} m, {:.1} deg",
            cmds.len(),
            dist,
            turn.to_degrees()
        );
    }

    // Speed control with the physical motion model: drive at a wall and
    // stop at the footprint boundary.
    let profile = default_profile(ProfileKind::Humanoid);
    let mut at_wall = PoseState::new(3.2, 2.0, 0.0);
    for step in 0..12 {
        let out = speed_step(
            &at_wall,
            &VelocityCommand { v: 1.0, omega: 0.0, duration: 0.1 },
            &profile,
            &map,
            step,
        )?;
        at_wall = out.pose;
        if out.collided {
            println!("collided at x = {:.2} m (wall face at 3.9, footprint 0.25)", at_wall.x);
            break;
        }
    }

    // PID waypoint following along a dogleg path.
    let path = vec![Point::new(2.0, 1.0), Point::new(2.0, 2.5), Point::new(1.0, 2.5)];
    let mut follower = PathFollower::new();
    let mut cruiser = PoseState::new(1.0, 1.0, 0.0);
    let mut ticks = 0;
    while !follower.finished(&cruiser, &path, &cfg) && ticks < 400 {
        let (cmd, _) = pid_follow_step(&mut follower, &cruiser, &path, &cfg.gains, &cfg, cfg.dt)?;
        cruiser = diff_drive_step(&cruiser, &cmd, cfg.dt);
        ticks += 1;
    }
    println!(
        "pid follower reached ({:.2}, {:.2}) in {ticks} ticks (target 1.0, 2.5)",
        cruiser.x, cruiser.y
    );
    Ok(())
}
