//! Execute a structured subgoal program with the map-based navigator:
//! explore until landmarks are indexed, reorient, plan, and drive.
//!
//! Usage: cargo run --example subgoal_navigation

use vlnsim::control::ControllerKind;
use vlnsim::embodiment::{default_profile, ProfileKind};
use vlnsim::semnav::{execute_program, AffinityTable, SemNavConfig, Subgoal, SubgoalProgram};
use vlnsim::world::{load_map, LightingCondition, SensorConfig};
use vlnsim::{ControlConfig, PoseState};

fn main() -> anyhow::Result<()> {
    // Bedroom north-east, dining set south-east; the agent starts west.
    let text = "cellsize 0.4\n\
                label b bed\n\
                label w wardrobe\n\
                label t table\n\
                label c chair\n\
                ###############\n\
                #.....#.......#\n\
                #.....#..b.w..#\n\
                #.....#.......#\n\
                #.....###.#####\n\
                #.....#.......#\n\
                #.............#\n\
                #.....#...t...#\n\
                #.....#...c...#\n\
                #.....#.......#\n\
                ###############\n";
    let map = load_map(text)?;
    let program = SubgoalProgram {
        steps: vec![
            Subgoal::MoveToObject("table".into()),
            Subgoal::MoveInBetween("table".into(), "chair".into()),
            Subgoal::MoveToRoom("bedroom".into()),
            Subgoal::MoveToObject("bed".into()),
            Subgoal::Stop,
        ],
    };

    let run = execute_program(
        &program,
        &map,
        PoseState::new(0.8, 0.8, 0.0),
        &default_profile(ProfileKind::Flash),
        ControllerKind::Flash,
        LightingCondition::dl5000(),
        &AffinityTable::default_table(),
        &SemNavConfig::default(),
        &ControlConfig::default(),
        &SensorConfig::default(),
        7,
    );

    for outcome in &run.outcomes {
        match outcome.target {
            Some(t) => println!(
                "{:<40} target ({:>4.1}, {:>4.1})  reached: {}",
                format!("{:?}", outcome.subgoal),
                t.x,
                t.y,
                outcome.reached
            ),
            None => println!(
                "{:<40} {:>21}  reached: {}",
                format!("{:?}", outcome.subgoal),
                "",
                outcome.reached
            ),
        }
    }
    let last = run.trace.poses.last().unwrap();
    println!(
        "\nfinal pose ({:.2}, {:.2}), {} poses recorded, terminal {:?}",
        last.x,
        last.y,
        run.trace.poses.len(),
        run.trace.terminal_event().map(|e| e.kind.name())
    );
    println!("trajectory length {:.2} m", run.trace.trajectory_length());
    Ok(())
}
