//! Load a map, cast depth rays, and take observations under the three
//! lighting regimes.
//!
//! Usage: cargo run --example observe_world

use vlnsim::embodiment::{default_profile, ProfileKind};
use vlnsim::geom::Point;
use vlnsim::world::{load_map, observe, ray_cast, LightingCondition, SensorConfig};
use vlnsim::PoseState;

fn main() -> anyhow::Result<()> {
    let text = "cellsize 0.1\n\
                label t table\n\
                label s sofa\n\
                ####################\n\
                #........#.........#\n\
                #..s.....#....t....#\n\
                #.........#........#\n\
                #..................#\n\
                #.....H............#\n\
                ####################\n";
    let map = load_map(text)?;
    println!("map {}x{} cells, {:.1} m per cell", map.width(), map.height(), map.cell_size());
    println!("vocabulary: {:?}", map.vocab().collect::<Vec<_>>());

    // A fan of single ray casts.
    let origin = Point::new(0.25, 0.35);
    for deg in [0.0, 30.0, 60.0, 90.0] {
        let d = ray_cast(&map, origin, f64::to_radians(deg), 10.0)?;
        println!("ray at {deg:>4.0} deg -> {d:.2} m");
    }

    // Full observations: depth is identical across lighting, semantic
    // scores degrade with noise.
    let profile = default_profile(ProfileKind::Humanoid);
    let pose = PoseState::new(0.25, 0.35, 0.0);
    let sensor = SensorConfig::default();
    for lighting in [LightingCondition::dl5000(), LightingCondition::dl300(), LightingCondition::cl()] {
        let obs = observe(&map, &pose, &profile, lighting, &sensor, 42)?;
        let mean_depth: f64 = obs.depth_rays.iter().sum::<f64>() / obs.depth_rays.len() as f64;
        println!(
            "{:?}: mean depth {:.2} m, {} landmarks visible",
            lighting.kind,
            mean_depth,
            obs.visible_labels.len()
        );
        for l in &obs.visible_labels {
            println!(
                "    label {} at {:.2} m, bearing {:>6.1} deg, score {:.3}",
                map.label_name(l.label_id).unwrap_or("?"),
                l.distance,
                l.bearing.to_degrees(),
                l.score
            );
        }
    }
    Ok(())
}
