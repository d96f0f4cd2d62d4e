//! Grid planning: geodesic distance, obstacle dilation with soft costs,
//! A* on cost grids, frontier detection, and reorientation-node selection.
//!
//! Path costs are represented exactly as `a + b*sqrt(2)` with integer `a`,
//! `b` (cost multipliers are quantized to 1/100). Comparisons between such
//! values are done in integer arithmetic, so two planners that agree on the
//! graph agree on optimal costs bit-for-bit, with no float-accumulation
//! ambiguity.

use crate::geom::{Cell, Point};
use crate::world::{CellKind, GridMap};
use serde::{Deserialize, Serialize};
use std::cmp::Ordering;
use std::collections::BinaryHeap;
use thiserror::Error;

/// Quantization scale for cell cost multipliers (1.0 -> 100 units).
pub const COST_SCALE: u32 = 100;

#[derive(Debug, Error)]
pub enum PlanError {
    #[error("no traversable path exists")]
    Unreachable,
    #[error("position ({0:.3}, {1:.3}) is outside the map or on an obstacle")]
    OutOfBounds(f64, f64),
    #[error("no path found")]
    NoPath,
    #[error("candidate list is empty")]
    EmptyCandidates,
}

/// Exact path cost `straight + diagonal * sqrt(2)` in quantized units.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct PathCost {
    pub straight: u64,
    pub diagonal: u64,
}

impl PathCost {
    pub const ZERO: PathCost = PathCost { straight: 0, diagonal: 0 };

    pub fn add_step(self, mult: u32, diagonal: bool) -> PathCost {
        if diagonal {
            PathCost { straight: self.straight, diagonal: self.diagonal + mult as u64 }
        } else {
            PathCost { straight: self.straight + mult as u64, diagonal: self.diagonal }
        }
    }

    /// Numeric value in multiplier units (1.0 = one base-cost cardinal step).
    pub fn value(&self) -> f64 {
        (self.straight as f64 + self.diagonal as f64 * std::f64::consts::SQRT_2) / COST_SCALE as f64
    }

    /// Geometric length in meters, valid when all multipliers are the base
    /// cost (as in geodesic distance).
    pub fn meters(&self, cell_size: f64) -> f64 {
        self.value() * cell_size
    }
}

impl Ord for PathCost {
    fn cmp(&self, other: &Self) -> Ordering {
        // Compare s + d*sqrt(2) exactly: the sign of (s1-s2) + (d1-d2)*sqrt(2)
        // is decided by integer arithmetic on the squares.
        let s = self.straight as i128 - other.straight as i128;
        let d = self.diagonal as i128 - other.diagonal as i128;
        match (s.signum(), d.signum()) {
            (0, 0) => Ordering::Equal,
            (s_sign, d_sign) if s_sign >= 0 && d_sign >= 0 => Ordering::Greater,
            (s_sign, d_sign) if s_sign <= 0 && d_sign <= 0 => Ordering::Less,
            (1, -1) => {
                // positive iff s^2 > 2 d^2
                if s * s > 2 * d * d {
                    Ordering::Greater
                } else {
                    Ordering::Less
                }
            }
            _ => {
                // s < 0, d > 0: positive iff 2 d^2 > s^2
                if 2 * d * d > s * s {
                    Ordering::Greater
                } else {
                    Ordering::Less
                }
            }
        }
    }
}

impl PartialOrd for PathCost {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Traversal cost of one cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CellCost {
    Blocked,
    /// Cost multiplier in units of [`COST_SCALE`] (base = 100).
    Traversable(u32),
}

/// Per-cell traversal costs derived from a [`GridMap`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CostGrid {
    width: usize,
    height: usize,
    cell_size: f64,
    cells: Vec<CellCost>,
}

/// Penalty multipliers for dilated and unexplored cells.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct PlanCosts {
    pub dilated: f64,
    pub unexplored: f64,
}

impl Default for PlanCosts {
    fn default() -> Self {
        Self { dilated: 3.0, unexplored: 2.0 }
    }
}

impl CostGrid {
    /// Build a cost grid directly from per-cell costs (row-major).
    pub fn from_cells(width: usize, height: usize, cell_size: f64, cells: Vec<CellCost>) -> CostGrid {
        assert_eq!(cells.len(), width * height, "cell count must match dimensions");
        CostGrid { width, height, cell_size, cells }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn cell_size(&self) -> f64 {
        self.cell_size
    }

    fn idx(&self, c: Cell) -> usize {
        c.y * self.width + c.x
    }

    pub fn cost(&self, c: Cell) -> CellCost {
        self.cells[self.idx(c)]
    }

    pub fn is_blocked(&self, c: Cell) -> bool {
        self.cost(c) == CellCost::Blocked
    }

    pub fn in_bounds(&self, c: Cell) -> bool {
        c.x < self.width && c.y < self.height
    }

    /// Raise the cost of unexplored traversable cells to at least the
    /// unexplored penalty. `explored` is row-major over the same dimensions.
    pub fn mark_unexplored(&mut self, explored: &[bool], costs: &PlanCosts) {
        assert_eq!(explored.len(), self.cells.len(), "mask dimensions differ");
        let unexplored = (costs.unexplored * COST_SCALE as f64).round() as u32;
        for (cell, &seen) in self.cells.iter_mut().zip(explored) {
            if !seen {
                if let CellCost::Traversable(m) = cell {
                    *m = (*m).max(unexplored);
                }
            }
        }
    }

    /// Nearest non-blocked cell to `c` (including itself), by BFS.
    pub fn nearest_unblocked(&self, c: Cell) -> Option<Cell> {
        if !self.in_bounds(c) {
            return None;
        }
        if !self.is_blocked(c) {
            return Some(c);
        }
        let mut seen = vec![false; self.cells.len()];
        let mut queue = std::collections::VecDeque::new();
        seen[self.idx(c)] = true;
        queue.push_back(c);
        while let Some(cur) = queue.pop_front() {
            for (nx, ny) in neighbors4(cur, self.width, self.height) {
                let n = Cell::new(nx, ny);
                if seen[self.idx(n)] {
                    continue;
                }
                seen[self.idx(n)] = true;
                if !self.is_blocked(n) {
                    return Some(n);
                }
                queue.push_back(n);
            }
        }
        None
    }
}

fn neighbors4(c: Cell, w: usize, h: usize) -> impl Iterator<Item = (usize, usize)> {
    let (x, y) = (c.x as isize, c.y as isize);
    [(x - 1, y), (x + 1, y), (x, y - 1), (x, y + 1)]
        .into_iter()
        .filter(move |&(nx, ny)| nx >= 0 && ny >= 0 && (nx as usize) < w && (ny as usize) < h)
        .map(|(nx, ny)| (nx as usize, ny as usize))
}

/// Build a cost grid: obstacle cells are blocked, cells whose Chebyshev
/// center distance to an obstacle is within `radius` get the dilated
/// penalty, everything else is base cost.
///
/// `hard_radius` additionally blocks cells that a footprint of that radius
/// could never occupy; pass 0.0 for pure soft dilation.
pub fn dilate_with_blocking(
    map: &GridMap,
    hard_radius: f64,
    soft_radius: f64,
    costs: &PlanCosts,
) -> CostGrid {
    assert!(
        costs.dilated >= 1.0 && costs.unexplored >= 1.0,
        "penalty multipliers must be at least the base cost"
    );
    let w = map.width();
    let h = map.height();
    let cs = map.cell_size();
    let dilated_mult = (costs.dilated * COST_SCALE as f64).round() as u32;
    let mut cells = vec![CellCost::Traversable(COST_SCALE); w * h];

    // A footprint of `hard_radius` fits on a cell iff the cell center is at
    // least that far from the obstacle face; the obstacle face sits half a
    // cell inside the center-to-center distance.
    let hard_cells = (hard_radius / cs + 0.5 - 1e-9).floor() as isize;
    let soft_cells = (soft_radius / cs + 1e-9).floor() as isize;
    let reach = hard_cells.max(soft_cells).max(0);

    for y in 0..h {
        for x in 0..w {
            if !map.is_obstacle(Cell::new(x, y)) {
                continue;
            }
            cells[y * w + x] = CellCost::Blocked;
            for dy in -reach..=reach {
                for dx in -reach..=reach {
                    if dx == 0 && dy == 0 {
                        continue;
                    }
                    let (nx, ny) = (x as isize + dx, y as isize + dy);
                    if nx < 0 || ny < 0 || nx as usize >= w || ny as usize >= h {
                        continue;
                    }
                    let i = ny as usize * w + nx as usize;
                    if map.is_obstacle(Cell::new(nx as usize, ny as usize)) {
                        continue;
                    }
                    let cheb = dx.abs().max(dy.abs());
                    if cheb <= hard_cells {
                        cells[i] = CellCost::Blocked;
                    } else if cheb <= soft_cells && cells[i] != CellCost::Blocked {
                        cells[i] = CellCost::Traversable(dilated_mult);
                    }
                }
            }
        }
    }
    CostGrid { width: w, height: h, cell_size: cs, cells }
}

/// Soft dilation only: cells within `radius` (Chebyshev, center-to-center)
/// of an obstacle get the dilated cost, obstacles are blocked.
pub fn dilate(map: &GridMap, radius: f64, costs: &PlanCosts) -> CostGrid {
    dilate_with_blocking(map, 0.0, radius, costs)
}

const DIRS8: [(isize, isize, bool); 8] = [
    (1, 0, false),
    (-1, 0, false),
    (0, 1, false),
    (0, -1, false),
    (1, 1, true),
    (1, -1, true),
    (-1, 1, true),
    (-1, -1, true),
];

/// Octile heuristic in exact cost units, using the base multiplier.
fn octile(a: Cell, b: Cell) -> PathCost {
    let dx = (a.x as i64 - b.x as i64).unsigned_abs();
    let dy = (a.y as i64 - b.y as i64).unsigned_abs();
    let diag = dx.min(dy);
    let straight = dx.max(dy) - diag;
    PathCost {
        straight: straight * COST_SCALE as u64,
        diagonal: diag * COST_SCALE as u64,
    }
}

#[derive(PartialEq, Eq)]
struct OpenNode {
    f: PathCost,
    index: usize,
    cell: Cell,
    g: PathCost,
}

impl Ord for OpenNode {
    fn cmp(&self, other: &Self) -> Ordering {
        // BinaryHeap is a max-heap; invert so the smallest (f, index) pops
        // first. Lower cell index wins ties deterministically.
        other
            .f
            .cmp(&self.f)
            .then_with(|| other.index.cmp(&self.index))
    }
}

impl PartialOrd for OpenNode {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// 8-connected A* over a cost grid. Entering a cell costs its multiplier
/// (times sqrt(2) diagonally); diagonal moves are disallowed when either
/// adjacent cardinal cell is blocked. Returns the cell path including both
/// endpoints; `start == goal` yields `[start]`.
pub fn astar(costs: &CostGrid, start: Cell, goal: Cell) -> Result<Vec<Cell>, PlanError> {
    if !costs.in_bounds(start) || !costs.in_bounds(goal) || costs.is_blocked(start) || costs.is_blocked(goal)
    {
        return Err(PlanError::NoPath);
    }
    if start == goal {
        return Ok(vec![start]);
    }
    let n = costs.width * costs.height;
    let mut g = vec![None::<PathCost>; n];
    let mut parent = vec![usize::MAX; n];
    let mut closed = vec![false; n];
    let mut open = BinaryHeap::new();
    let start_i = costs.idx(start);
    g[start_i] = Some(PathCost::ZERO);
    open.push(OpenNode { f: octile(start, goal), index: start_i, cell: start, g: PathCost::ZERO });

    while let Some(node) = open.pop() {
        let i = costs.idx(node.cell);
        if closed[i] {
            continue;
        }
        closed[i] = true;
        if node.cell == goal {
            let mut path = vec![goal];
            let mut cur = i;
            while parent[cur] != usize::MAX {
                cur = parent[cur];
                path.push(Cell::new(cur % costs.width, cur / costs.width));
            }
            path.reverse();
            return Ok(path);
        }
        for &(dx, dy, diagonal) in &DIRS8 {
            let (nx, ny) = (node.cell.x as isize + dx, node.cell.y as isize + dy);
            if nx < 0 || ny < 0 || nx as usize >= costs.width || ny as usize >= costs.height {
                continue;
            }
            let ncell = Cell::new(nx as usize, ny as usize);
            let ni = costs.idx(ncell);
            let mult = match costs.cost(ncell) {
                CellCost::Blocked => continue,
                CellCost::Traversable(m) => m,
            };
            if diagonal {
                // No corner cutting past blocked cells.
                let side_a = Cell::new(nx as usize, node.cell.y);
                let side_b = Cell::new(node.cell.x, ny as usize);
                if costs.is_blocked(side_a) || costs.is_blocked(side_b) {
                    continue;
                }
            }
            let ng = node.g.add_step(mult, diagonal);
            if g[ni].is_none_or(|old| ng < old) {
                g[ni] = Some(ng);
                parent[ni] = i;
                let mut f = ng;
                let hc = octile(ncell, goal);
                f.straight += hc.straight;
                f.diagonal += hc.diagonal;
                open.push(OpenNode { f, index: ni, cell: ncell, g: ng });
            }
        }
    }
    Err(PlanError::NoPath)
}

/// Exact accumulated cost of a cell path under a cost grid.
pub fn path_cost(costs: &CostGrid, path: &[Cell]) -> PathCost {
    let mut total = PathCost::ZERO;
    for w in path.windows(2) {
        let diagonal = w[0].x != w[1].x && w[0].y != w[1].y;
        let mult = match costs.cost(w[1]) {
            CellCost::Blocked => u32::MAX,
            CellCost::Traversable(m) => m,
        };
        total = total.add_step(mult, diagonal);
    }
    total
}

/// Shortest traversable path length between two points, in meters
/// (8-connected, diagonals sqrt(2), holes traversable).
pub fn geodesic_distance(map: &GridMap, a: Point, b: Point) -> Result<f64, PlanError> {
    let ca = map.cell_at(a).ok_or(PlanError::OutOfBounds(a.x, a.y))?;
    let cb = map.cell_at(b).ok_or(PlanError::OutOfBounds(b.x, b.y))?;
    if map.is_obstacle(ca) {
        return Err(PlanError::OutOfBounds(a.x, a.y));
    }
    if map.is_obstacle(cb) {
        return Err(PlanError::OutOfBounds(b.x, b.y));
    }
    if ca == cb {
        return Ok(0.0);
    }

    let w = map.width();
    let h = map.height();
    let blocked = |c: Cell| map.is_obstacle(c);
    let mut dist = vec![None::<PathCost>; w * h];
    let mut closed = vec![false; w * h];
    let mut open = BinaryHeap::new();
    let idx = |c: Cell| c.y * w + c.x;
    dist[idx(ca)] = Some(PathCost::ZERO);
    open.push(OpenNode { f: PathCost::ZERO, index: idx(ca), cell: ca, g: PathCost::ZERO });

    while let Some(node) = open.pop() {
        let i = idx(node.cell);
        if closed[i] {
            continue;
        }
        closed[i] = true;
        if node.cell == cb {
            return Ok(node.g.meters(map.cell_size()));
        }
        for &(dx, dy, diagonal) in &DIRS8 {
            let (nx, ny) = (node.cell.x as isize + dx, node.cell.y as isize + dy);
            if nx < 0 || ny < 0 || nx as usize >= w || ny as usize >= h {
                continue;
            }
            let ncell = Cell::new(nx as usize, ny as usize);
            if blocked(ncell) {
                continue;
            }
            if diagonal
                && (blocked(Cell::new(nx as usize, node.cell.y))
                    || blocked(Cell::new(node.cell.x, ny as usize)))
                {
                    continue;
                }
            let ng = node.g.add_step(COST_SCALE, diagonal);
            let ni = idx(ncell);
            if dist[ni].is_none_or(|old| ng < old) {
                dist[ni] = Some(ng);
                open.push(OpenNode { f: ng, index: ni, cell: ncell, g: ng });
            }
        }
    }
    Err(PlanError::Unreachable)
}

/// Frontier cells: explored, free, and 4-adjacent to at least one
/// unexplored cell. Returned in row-major order.
pub fn detect_frontiers(explored: &[bool], map: &GridMap) -> Vec<Cell> {
    assert_eq!(explored.len(), map.width() * map.height(), "mask dimensions differ");
    let w = map.width();
    let h = map.height();
    let mut out = Vec::new();
    for y in 0..h {
        for x in 0..w {
            let c = Cell::new(x, y);
            if !explored[y * w + x] || map.kind(c) != CellKind::Free {
                continue;
            }
            let boundary = neighbors4(c, w, h).any(|(nx, ny)| !explored[ny * w + nx]);
            if boundary {
                out.push(c);
            }
        }
    }
    out
}

/// A candidate node for pre-motion reorientation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReorientCandidate {
    pub cell: Cell,
    /// Absolute angle required to face the node from the current heading,
    /// radians in [0, pi].
    pub turn_angle_gamma: f64,
}

/// Pick the node minimizing `|dist(n, x0) - target_dist| + alpha * gamma`.
///
/// `dist` is Euclidean from `x0` to the candidate cell center. Ties go to
/// the smaller turn angle.
pub fn select_reorient_node(
    candidates: &[ReorientCandidate],
    x0: Point,
    target_dist: f64,
    alpha_weight: f64,
    cell_size: f64,
) -> Result<ReorientCandidate, PlanError> {
    let mut best: Option<(f64, ReorientCandidate)> = None;
    for &cand in candidates {
        let d = x0.distance(cand.cell.center(cell_size));
        let cost = (d - target_dist).abs() + alpha_weight * cand.turn_angle_gamma;
        best = match best {
            None => Some((cost, cand)),
            Some((bc, bcand)) => {
                if cost < bc || (cost == bc && cand.turn_angle_gamma < bcand.turn_angle_gamma) {
                    Some((cost, cand))
                } else {
                    Some((bc, bcand))
                }
            }
        };
    }
    best.map(|(_, c)| c).ok_or(PlanError::EmptyCandidates)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::load_map;

    fn empty_map(w: usize, h: usize) -> GridMap {
        let mut text = String::from("cellsize 0.1\n");
        for y in 0..h {
            let row: String = (0..w)
                .map(|x| if x == 0 || y == 0 || x == w - 1 || y == h - 1 { '#' } else { '.' })
                .collect();
            text.push_str(&row);
            text.push('\n');
        }
        load_map(&text).unwrap()
    }

    /// Independent O(V^2) Dijkstra without a heap, used as the oracle.
    fn dijkstra_oracle(costs: &CostGrid, start: Cell, goal: Cell) -> Option<PathCost> {
        let w = costs.width();
        let h = costs.height();
        if costs.is_blocked(start) || costs.is_blocked(goal) {
            return None;
        }
        let mut dist = vec![None::<PathCost>; w * h];
        let mut done = vec![false; w * h];
        dist[start.y * w + start.x] = Some(PathCost::ZERO);
        loop {
            let mut best: Option<(usize, PathCost)> = None;
            for i in 0..w * h {
                if done[i] {
                    continue;
                }
                if let Some(d) = dist[i] {
                    if best.is_none_or(|(_, bd)| d < bd) {
                        best = Some((i, d));
                    }
                }
            }
            let (i, d) = best?;
            done[i] = true;
            let cell = Cell::new(i % w, i / w);
            if cell == goal {
                return Some(d);
            }
            for &(dx, dy, diagonal) in &DIRS8 {
                let (nx, ny) = (cell.x as isize + dx, cell.y as isize + dy);
                if nx < 0 || ny < 0 || nx as usize >= w || ny as usize >= h {
                    continue;
                }
                let ncell = Cell::new(nx as usize, ny as usize);
                let mult = match costs.cost(ncell) {
                    CellCost::Blocked => continue,
                    CellCost::Traversable(m) => m,
                };
                if diagonal
                    && (costs.is_blocked(Cell::new(nx as usize, cell.y))
                        || costs.is_blocked(Cell::new(cell.x, ny as usize)))
                {
                    continue;
                }
                let nd = d.add_step(mult, diagonal);
                let ni = ny as usize * w + nx as usize;
                if dist[ni].is_none_or(|old| nd < old) {
                    dist[ni] = Some(nd);
                }
            }
        }
    }

    fn random_cost_grid(w: usize, h: usize, seed: u64) -> CostGrid {
        use rand::Rng;
        let mut rng = crate::rng::rng_from_seed(seed);
        let cells: Vec<CellCost> = (0..w * h)
            .map(|_| match rng.gen_range(0..10) {
                0..=1 => CellCost::Blocked,
                2..=6 => CellCost::Traversable(COST_SCALE),
                7..=8 => CellCost::Traversable(2 * COST_SCALE),
                _ => CellCost::Traversable(3 * COST_SCALE),
            })
            .collect();
        CostGrid { width: w, height: h, cell_size: 0.1, cells }
    }

    #[test]
    fn geodesic_identity() {
        let map = empty_map(10, 10);
        let p = Point::new(0.35, 0.35);
        assert_eq!(geodesic_distance(&map, p, p).unwrap(), 0.0);
    }

    #[test]
    fn geodesic_axis_aligned() {
        let map = empty_map(12, 12);
        let a = Point::new(0.15, 0.15);
        let b = Point::new(0.65, 0.15);
        let d = geodesic_distance(&map, a, b).unwrap();
        assert!((d - 0.5).abs() < 1e-12, "got {d}");
    }

    #[test]
    fn geodesic_unreachable_between_rooms() {
        let text = "cellsize 0.1\n#######\n#.#...#\n#.#...#\n#######\n";
        let map = load_map(text).unwrap();
        let a = Point::new(0.15, 0.15);
        let b = Point::new(0.55, 0.15);
        assert!(matches!(geodesic_distance(&map, a, b), Err(PlanError::Unreachable)));
    }

    #[test]
    fn geodesic_symmetry_and_triangle() {
        let map = GridMap::generate_random(20, 20, 0.08, 11);
        let free = map.free_cells();
        let cs = map.cell_size();
        for i in (0..free.len().saturating_sub(3)).step_by(7) {
            let (a, b, c) = (
                free[i].center(cs),
                free[(i * 3 + 1) % free.len()].center(cs),
                free[(i * 5 + 2) % free.len()].center(cs),
            );
            let ab = geodesic_distance(&map, a, b);
            let ba = geodesic_distance(&map, b, a);
            match (ab, ba) {
                (Ok(x), Ok(y)) => {
                    assert!((x - y).abs() < 1e-12);
                    if let (Ok(ac), Ok(cb)) =
                        (geodesic_distance(&map, a, c), geodesic_distance(&map, c, b))
                    {
                        assert!(x <= ac + cb + 1e-12);
                    }
                }
                (Err(_), Err(_)) => {}
                _ => panic!("asymmetric reachability"),
            }
        }
    }

    #[test]
    fn dilate_radius_zero_changes_nothing() {
        let map = empty_map(8, 8);
        let g = dilate(&map, 0.0, &PlanCosts::default());
        for y in 1..7 {
            for x in 1..7 {
                assert_eq!(g.cost(Cell::new(x, y)), CellCost::Traversable(COST_SCALE));
            }
        }
    }

    #[test]
    fn dilate_one_cell_radius_marks_eight_neighbors() {
        // Single interior obstacle: with radius == cell size exactly its 8
        // neighbors become dilated. Verified against a brute-force check.
        let text = "cellsize 0.1\n#######\n#.....#\n#..#..#\n#.....#\n#######\n";
        let map = load_map(text).unwrap();
        let costs = PlanCosts::default();
        let g = dilate(&map, 0.1, &costs);
        let dilated_mult = (costs.dilated * COST_SCALE as f64).round() as u32;
        let mut dilated_count = 0;
        for y in 0..map.height() {
            for x in 0..map.width() {
                let c = Cell::new(x, y);
                if map.is_obstacle(c) {
                    assert!(g.is_blocked(c));
                    continue;
                }
                // Brute force: Chebyshev distance to nearest obstacle.
                let mut min_cheb = usize::MAX;
                for oy in 0..map.height() {
                    for ox in 0..map.width() {
                        if map.is_obstacle(Cell::new(ox, oy)) {
                            let cheb = x.abs_diff(ox).max(y.abs_diff(oy));
                            min_cheb = min_cheb.min(cheb);
                        }
                    }
                }
                let expected = if min_cheb <= 1 {
                    CellCost::Traversable(dilated_mult)
                } else {
                    CellCost::Traversable(COST_SCALE)
                };
                assert_eq!(g.cost(c), expected, "cell ({x},{y})");
                if g.cost(c) == CellCost::Traversable(dilated_mult) && min_cheb == 1 {
                    dilated_count += 1;
                }
            }
        }
        // Interior obstacle's 8 neighbors plus the border-adjacent ring.
        assert!(dilated_count >= 8);
    }

    #[test]
    fn dilate_saturates_when_radius_covers_map() {
        let map = empty_map(8, 8);
        let costs = PlanCosts::default();
        let g = dilate(&map, 10.0, &costs);
        let dilated_mult = (costs.dilated * COST_SCALE as f64).round() as u32;
        for y in 1..7 {
            for x in 1..7 {
                assert_eq!(g.cost(Cell::new(x, y)), CellCost::Traversable(dilated_mult));
            }
        }
    }

    #[test]
    fn astar_identity() {
        let map = empty_map(8, 8);
        let g = dilate(&map, 0.0, &PlanCosts::default());
        let s = Cell::new(3, 3);
        assert_eq!(astar(&g, s, s).unwrap(), vec![s]);
    }

    #[test]
    fn astar_blocked_goal_is_no_path() {
        let map = empty_map(8, 8);
        let g = dilate(&map, 0.0, &PlanCosts::default());
        assert!(matches!(astar(&g, Cell::new(1, 1), Cell::new(0, 0)), Err(PlanError::NoPath)));
    }

    #[test]
    fn astar_matches_dijkstra_on_random_grids() {
        let mut checked = 0;
        for seed in 0..100 {
            let g = random_cost_grid(20, 20, seed);
            let start = Cell::new(1, 1);
            let goal = Cell::new(18, 17);
            let oracle = dijkstra_oracle(&g, start, goal);
            match astar(&g, start, goal) {
                Ok(path) => {
                    assert_eq!(path.first(), Some(&start));
                    assert_eq!(path.last(), Some(&goal));
                    let cost = path_cost(&g, &path);
                    let oracle = oracle.expect("oracle must also reach");
                    assert_eq!(cost, oracle, "seed {seed}");
                    checked += 1;
                }
                Err(_) => assert!(oracle.is_none(), "seed {seed}: oracle reached but astar did not"),
            }
        }
        assert!(checked > 20, "too few solvable instances: {checked}");
    }

    #[test]
    fn frontier_fully_explored_is_empty() {
        let map = empty_map(8, 8);
        let explored = vec![true; 64];
        assert!(detect_frontiers(&explored, &map).is_empty());
    }

    #[test]
    fn frontier_single_explored_cell() {
        let map = empty_map(8, 8);
        let mut explored = vec![false; 64];
        explored[3 * 8 + 3] = true;
        let f = detect_frontiers(&explored, &map);
        assert_eq!(f, vec![Cell::new(3, 3)]);
    }

    #[test]
    fn frontier_half_plane_boundary() {
        let map = empty_map(10, 10);
        let mut explored = vec![false; 100];
        for y in 0..10 {
            for x in 0..5 {
                explored[y * 10 + x] = true;
            }
        }
        let f = detect_frontiers(&explored, &map);
        // Exactly the free cells of the boundary column x = 4.
        assert!(!f.is_empty());
        for c in &f {
            assert_eq!(c.x, 4);
            assert_eq!(map.kind(*c), CellKind::Free);
        }
        assert_eq!(f.len(), 8);
        // Definitional recheck.
        for c in &f {
            assert!(explored[c.y * 10 + c.x]);
            let any_unseen = neighbors4(*c, 10, 10).any(|(nx, ny)| !explored[ny * 10 + nx]);
            assert!(any_unseen);
        }
    }

    #[test]
    fn reorient_singleton() {
        let cand = ReorientCandidate { cell: Cell::new(5, 5), turn_angle_gamma: 0.7 };
        let got = select_reorient_node(&[cand], Point::new(0.0, 0.0), 1.0, 0.25, 0.1).unwrap();
        assert_eq!(got, cand);
    }

    #[test]
    fn reorient_prefers_alignment_over_distance() {
        // n1: dist error 0.1, gamma 1.0 -> 0.35; n2: dist error 0.3, gamma 0
        // -> 0.30. With alpha 0.25 the aligned node wins.
        let cs = 1.0;
        let x0 = Point::new(0.0, 0.5);
        // Centers: n1 at (1.5+0.1 ... ), build exact distances instead.
        let n1 = ReorientCandidate { cell: Cell::new(1, 0), turn_angle_gamma: 1.0 };
        let n2 = ReorientCandidate { cell: Cell::new(1, 0), turn_angle_gamma: 0.0 };
        // dist(n1) == dist(n2) == 1.5; pick target dists separately.
        let got = select_reorient_node(&[n1, n2], x0, 1.4, 0.25, cs).unwrap();
        // n1 cost: |1.5-1.4| + 0.25 = 0.35; n2 cost: 0.1 + 0 = 0.1.
        assert_eq!(got, n2);

        // Reproduce the asymmetric case with two distinct cells.
        let a = ReorientCandidate { cell: Cell::new(1, 0), turn_angle_gamma: 1.0 }; // dist 1.5
        let b = ReorientCandidate { cell: Cell::new(2, 0), turn_angle_gamma: 0.0 }; // dist 2.5
        // target 1.6: a err 0.1 + 0.25 = 0.35; b err 0.9 -> 0.9. a wins.
        let got = select_reorient_node(&[a, b], x0, 1.6, 0.25, cs).unwrap();
        assert_eq!(got, a);
        // target 2.2: a err 0.7 + 0.25 = 0.95; b err 0.3 -> 0.30. b wins.
        let got = select_reorient_node(&[a, b], x0, 2.2, 0.25, cs).unwrap();
        assert_eq!(got, b);
    }

    #[test]
    fn reorient_tie_breaks_on_gamma() {
        let x0 = Point::new(0.0, 0.5);
        // Same cell twice: identical cost terms except gamma contribution
        // zeroed by alpha = 0.
        let hi = ReorientCandidate { cell: Cell::new(1, 0), turn_angle_gamma: 1.0 };
        let lo = ReorientCandidate { cell: Cell::new(1, 0), turn_angle_gamma: 0.2 };
        let got = select_reorient_node(&[hi, lo], x0, 1.5, 0.0, 1.0).unwrap();
        assert_eq!(got, lo);
    }

    #[test]
    fn reorient_empty_candidates() {
        assert!(matches!(
            select_reorient_node(&[], Point::new(0.0, 0.0), 1.0, 0.25, 0.1),
            Err(PlanError::EmptyCandidates)
        ));
    }

    #[test]
    fn reorient_argmin_scale_invariant() {
        use rand::Rng;
        let mut rng = crate::rng::rng_from_seed(3);
        for _ in 0..50 {
            let cands: Vec<ReorientCandidate> = (0..8)
                .map(|i| ReorientCandidate {
                    cell: Cell::new(1 + i, 1 + (i * 3) % 5),
                    turn_angle_gamma: rng.gen_range(0.0..std::f64::consts::PI),
                })
                .collect();
            let x0 = Point::new(0.05, 0.05);
            let target = rng.gen_range(0.1..2.0);
            let alpha = 0.25;
            let a = select_reorient_node(&cands, x0, target, alpha, 0.1).unwrap();
            // Scaling both terms by k > 0 preserves the argmin: scale the
            // geometry (cell size, x0, target) and keep alpha. gamma is
            // dimensionless, so alpha scales with the distance unit.
            let k = 7.0;
            let b = select_reorient_node(
                &cands,
                Point::new(x0.x * k, x0.y * k),
                target * k,
                alpha * k,
                0.1 * k,
            )
            .unwrap();
            assert_eq!(a.cell, b.cell);
        }
    }
}
