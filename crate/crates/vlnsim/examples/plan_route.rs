//! Grid planning: obstacle dilation with soft costs, A* routing, geodesic
//! distances, and frontier detection, rendered as ASCII.
//!
//! Usage: cargo run --example plan_route

use vlnsim::geom::{Cell, Point};
use vlnsim::plan::{
    astar, detect_frontiers, dilate, geodesic_distance, path_cost, CellCost, PlanCosts, COST_SCALE,
};
use vlnsim::world::{CellKind, GridMap};

fn main() -> anyhow::Result<()> {
    let map = GridMap::generate_random(30, 18, 0.10, 21);
    let costs = dilate(&map, 0.2, &PlanCosts::default());

    let free = map.free_cells();
    let start = free[0];
    let goal = free[free.len() - 1];
    let path = astar(&costs, start, goal)?;
    let cost = path_cost(&costs, &path);
    println!(
        "path {} cells, cost {:.2} (units of base steps), length {:.2} m",
        path.len(),
        cost.value(),
        geodesic_distance(&map, start.center(0.1), goal.center(0.1))?
    );

    let on_path: std::collections::HashSet<Cell> = path.iter().copied().collect();
    for y in 0..map.height() {
        let mut row = String::new();
        for x in 0..map.width() {
            let c = Cell::new(x, y);
            row.push(if c == start {
                'S'
            } else if c == goal {
                'G'
            } else if on_path.contains(&c) {
                '*'
            } else {
                match (map.kind(c), costs.cost(c)) {
                    (CellKind::Obstacle, _) => '#',
                    (CellKind::Hole, _) => 'H',
                    (_, CellCost::Traversable(m)) if m > COST_SCALE => '+',
                    _ => '.',
                }
            });
        }
        println!("{row}");
    }
    println!("legend: * path, + dilated (cost 3x), H floor hole");

    // Frontier detection over a partially explored mask.
    let mut explored = vec![false; map.width() * map.height()];
    for y in 0..map.height() {
        for x in 0..map.width() / 2 {
            explored[y * map.width() + x] = true;
        }
    }
    let frontiers = detect_frontiers(&explored, &map);
    println!(
        "\nwith the west half explored: {} frontier cells on the boundary",
        frontiers.len()
    );

    // Unreachable pairs surface as an error, not a distance.
    let sealed = vlnsim::world::load_map("cellsize 0.1\n#####\n#.#.#\n#####\n")?;
    let err = geodesic_distance(&sealed, Point::new(0.15, 0.15), Point::new(0.35, 0.15));
    println!("sealed rooms: {err:?}");
    Ok(())
}
