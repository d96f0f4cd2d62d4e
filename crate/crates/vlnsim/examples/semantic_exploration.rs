//! Incremental semantic mapping: integrate observations, index landmarks,
//! classify rooms through the affinity table, and pick exploration
//! frontiers.
//!
//! Usage: cargo run --example semantic_exploration

use std::collections::HashSet;
use vlnsim::embodiment::{default_profile, ProfileKind};
use vlnsim::geom::normalize_angle;
use vlnsim::semnav::{
    classify_room, explore_step, index_landmark, integrate_observation, AffinityTable,
    SemanticMap, DEFAULT_ROOMS,
};
use vlnsim::world::{load_map, observe, LightingCondition, SensorConfig};
use vlnsim::PoseState;

fn main() -> anyhow::Result<()> {
    // Kitchen east, living room west.
    let text = "cellsize 0.4\n\
                label s sofa\n\
                label v tv\n\
                label o oven\n\
                label f fridge\n\
                ###############\n\
                #.....#.......#\n\
                #..s..#..o.f..#\n\
                #..v..#.......#\n\
                #.....#.......#\n\
                #.....#.......#\n\
                #.............#\n\
                #.............#\n\
                #.....#.......#\n\
                ###############\n";
    let map = load_map(text)?;
    let table = AffinityTable::default_table();
    println!(
        "affinity(table, dining room) = {:.2}, affinity(table, toilet) = {:.2}",
        table.get("table", "dining room").unwrap(),
        table.get("table", "toilet").unwrap()
    );

    let profile = default_profile(ProfileKind::Wheeled);
    let sensor = SensorConfig::default();
    let mut smap = SemanticMap::for_map(&map);
    let rooms: Vec<String> = DEFAULT_ROOMS.iter().map(|r| r.to_string()).collect();

    // Turn-around scan from the living room.
    let base = PoseState::new(1.0, 1.0, 0.0);
    for k in 0..8 {
        let mut pose = base;
        pose.heading = normalize_angle(k as f64 * std::f64::consts::FRAC_PI_4);
        let obs = observe(&map, &pose, &profile, LightingCondition::dl5000(), &sensor, k as u64)?;
        if k == 0 {
            let room = classify_room(&obs, &smap.vocab, &rooms, &table, 0.3);
            println!("room classified from the first view: {room}");
        }
        integrate_observation(&mut smap, &obs, &pose);
    }
    println!("explored fraction after one scan: {:.2}", smap.explored_fraction());

    for label in ["sofa", "tv", "oven"] {
        match index_landmark(&smap, label, 0.5)? {
            Some(cell) => println!("indexed {label:>5} at cell ({}, {})", cell.x, cell.y),
            None => println!("{label:>5} not seen yet"),
        }
    }

    // The oven is hidden in the east room: exploration proposes a frontier
    // scored by the affinity between visible labels and the target.
    let frontier = explore_step(&smap, &map, &base, "oven", &table, &HashSet::new(), sensor.max_range)?;
    println!(
        "next frontier toward the oven: cell ({}, {}) at ({:.1}, {:.1}) m",
        frontier.x,
        frontier.y,
        frontier.center(map.cell_size()).x,
        frontier.center(map.cell_size()).y
    );
    Ok(())
}
