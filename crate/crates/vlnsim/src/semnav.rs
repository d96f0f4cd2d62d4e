//! Map-based navigation: an incrementally built semantic map, landmark
//! indexing, room classification through a label-affinity table, frontier
//! exploration, and an executor for structured subgoal programs.
//!
//! Vision-language embeddings are replaced by a hand-authored affinity
//! table over object and room labels, which keeps every decision rule
//! (indexing, room checks, frontier scoring) auditable.

use crate::bench::{EpisodeTrace, TraceEvent, TraceEventKind};
use crate::control::{clipped_flash, speed_step, ControlConfig, ControllerKind, VelocityCommand};
use crate::embodiment::{check_fall, PoseState, RobotProfile};
use crate::geom::{angle_diff, normalize_angle, Cell, Point};
use crate::plan::{
    astar, detect_frontiers, dilate_with_blocking, geodesic_distance, select_reorient_node,
    PlanCosts, ReorientCandidate,
};
use crate::rng::derive_seed;
use crate::world::{observe, ray_cast, GridMap, LightingCondition, Observation, SensorConfig};
use serde::{Deserialize, Serialize};
use std::collections::HashSet;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SemNavError {
    #[error("label {0:?} is not in the vocabulary")]
    UnknownLabel(String),
    #[error("exploration exhausted: no frontiers left")]
    NoFrontiers,
}

/// The predefined room set used for room-level grounding.
pub const DEFAULT_ROOMS: [&str; 6] =
    ["living room", "dining room", "bedroom", "kitchen", "toilet", "others"];

/// Similarity scores between object labels and room/landmark contexts.
///
/// Rows are object labels; columns are room names followed by the object
/// labels themselves (object-to-object similarity is the cosine of the two
/// room-affinity profiles).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffinityTable {
    pub objects: Vec<String>,
    pub contexts: Vec<String>,
    /// Row-major `objects.len() x contexts.len()` scores in [0, 1].
    pub values: Vec<f64>,
}

/// Room-affinity profiles behind the default table.
const DEFAULT_PROFILES: [(&str, [f64; 6]); 15] = [
    ("table", [0.30, 0.90, 0.10, 0.40, 0.05, 0.20]),
    ("chair", [0.50, 0.85, 0.30, 0.35, 0.05, 0.20]),
    ("sofa", [0.95, 0.15, 0.20, 0.05, 0.02, 0.20]),
    ("tv", [0.85, 0.10, 0.30, 0.05, 0.02, 0.20]),
    ("bed", [0.05, 0.02, 0.95, 0.02, 0.02, 0.20]),
    ("wardrobe", [0.10, 0.05, 0.85, 0.05, 0.05, 0.20]),
    ("toilet", [0.02, 0.02, 0.05, 0.02, 0.95, 0.20]),
    ("sink", [0.05, 0.10, 0.05, 0.60, 0.70, 0.20]),
    ("bathtub", [0.02, 0.02, 0.05, 0.02, 0.90, 0.20]),
    ("oven", [0.05, 0.15, 0.02, 0.90, 0.02, 0.20]),
    ("fridge", [0.05, 0.20, 0.02, 0.90, 0.02, 0.20]),
    ("counter", [0.10, 0.30, 0.05, 0.80, 0.30, 0.20]),
    ("lamp", [0.60, 0.30, 0.60, 0.20, 0.10, 0.20]),
    ("plant", [0.60, 0.40, 0.30, 0.20, 0.10, 0.20]),
    ("desk", [0.40, 0.30, 0.60, 0.10, 0.02, 0.20]),
];

impl AffinityTable {
    /// The built-in table over the default object and room vocabulary.
    pub fn default_table() -> AffinityTable {
        let objects: Vec<String> = DEFAULT_PROFILES.iter().map(|(n, _)| n.to_string()).collect();
        let mut contexts: Vec<String> = DEFAULT_ROOMS.iter().map(|r| r.to_string()).collect();
        contexts.extend(objects.iter().cloned());
        let cos = |a: &[f64; 6], b: &[f64; 6]| -> f64 {
            let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
            let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
            let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
            if na == 0.0 || nb == 0.0 {
                0.0
            } else {
                dot / (na * nb)
            }
        };
        let mut values = Vec::with_capacity(objects.len() * contexts.len());
        for (_, profile) in &DEFAULT_PROFILES {
            values.extend_from_slice(profile);
            for (_, other) in &DEFAULT_PROFILES {
                // Round to keep the CSV form short and exact.
                values.push((cos(profile, other) * 1e4).round() / 1e4);
            }
        }
        AffinityTable { objects, contexts, values }
    }

    pub fn get(&self, object: &str, context: &str) -> Option<f64> {
        let r = self.objects.iter().position(|o| o == object)?;
        let c = self.contexts.iter().position(|k| k == context)?;
        Some(self.values[r * self.contexts.len() + c])
    }

    /// Serialize as CSV: header `object,<context...>`, one row per object.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("object");
        for c in &self.contexts {
            out.push(',');
            out.push_str(c);
        }
        out.push('\n');
        for (i, o) in self.objects.iter().enumerate() {
            out.push_str(o);
            for j in 0..self.contexts.len() {
                out.push(',');
                out.push_str(&format!("{}", self.values[i * self.contexts.len() + j]));
            }
            out.push('\n');
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<AffinityTable, String> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines.next().ok_or("empty csv")?;
        let mut cols = header.split(',');
        let first = cols.next().ok_or("empty header")?;
        if first != "object" {
            return Err(format!("header must start with 'object', got {first:?}"));
        }
        let contexts: Vec<String> = cols.map(|c| c.trim().to_string()).collect();
        if contexts.is_empty() {
            return Err("no context columns".into());
        }
        let mut objects = Vec::new();
        let mut values = Vec::new();
        for line in lines {
            let mut parts = line.split(',');
            let name = parts.next().ok_or("missing object name")?.trim().to_string();
            let row: Result<Vec<f64>, _> = parts.map(|v| v.trim().parse::<f64>()).collect();
            let row = row.map_err(|e| format!("bad value in row {name:?}: {e}"))?;
            if row.len() != contexts.len() {
                return Err(format!(
                    "row {name:?} has {} values, expected {}",
                    row.len(),
                    contexts.len()
                ));
            }
            for v in &row {
                if !(0.0..=1.0).contains(v) {
                    return Err(format!("score {v} out of [0,1] in row {name:?}"));
                }
            }
            objects.push(name);
            values.extend(row);
        }
        if objects.is_empty() {
            return Err("no object rows".into());
        }
        Ok(AffinityTable { objects, contexts, values })
    }
}

/// Incrementally built semantic map: per-cell score vectors over the label
/// vocabulary plus explored/obstacle masks inferred from depth.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SemanticMap {
    pub width: usize,
    pub height: usize,
    pub cell_size: f64,
    pub vocab: Vec<String>,
    /// Row-major `width*height*vocab.len()` scores in [0, 1].
    pub scores: Vec<f64>,
    pub explored: Vec<bool>,
    pub obstacle: Vec<bool>,
}

impl SemanticMap {
    pub fn for_map(map: &GridMap) -> SemanticMap {
        let n = map.width() * map.height();
        let vocab: Vec<String> = map.vocab().map(str::to_string).collect();
        SemanticMap {
            width: map.width(),
            height: map.height(),
            cell_size: map.cell_size(),
            scores: vec![0.0; n * vocab.len()],
            explored: vec![false; n],
            obstacle: vec![false; n],
            vocab,
        }
    }

    fn idx(&self, c: Cell) -> usize {
        c.y * self.width + c.x
    }

    pub fn score(&self, c: Cell, label_idx: usize) -> f64 {
        self.scores[self.idx(c) * self.vocab.len() + label_idx]
    }

    pub fn explored_fraction(&self) -> f64 {
        self.explored.iter().filter(|&&e| e).count() as f64 / self.explored.len() as f64
    }

    fn cell_of(&self, p: Point) -> Option<Cell> {
        if p.x < 0.0 || p.y < 0.0 {
            return None;
        }
        let c = Cell::new((p.x / self.cell_size) as usize, (p.y / self.cell_size) as usize);
        (c.x < self.width && c.y < self.height).then_some(c)
    }
}

/// Fold one observation into the map: cells along each depth ray become
/// explored, ray endpoints short of max range mark obstacles, and visible
/// labels deposit max-merged scores at their cells.
///
/// Max-merging makes integration idempotent and monotone.
pub fn integrate_observation(smap: &mut SemanticMap, obs: &Observation, pose: &PoseState) {
    let step = smap.cell_size / 3.0;
    let origin = pose.position();
    for (i, &dist) in obs.depth_rays.iter().enumerate() {
        let angle = pose.heading + obs.ray_bearing(i);
        let (sin, cos) = angle.sin_cos();
        let mut t = 0.0;
        while t < dist {
            if let Some(c) = smap.cell_of(Point::new(origin.x + t * cos, origin.y + t * sin)) {
                let idx = smap.idx(c);
                smap.explored[idx] = true;
            }
            t += step;
        }
        if dist < obs.max_range - 1e-9 {
            // The ray stopped early: the cell just past the hit point is solid.
            let beyond = Point::new(
                origin.x + (dist + smap.cell_size / 2.0) * cos,
                origin.y + (dist + smap.cell_size / 2.0) * sin,
            );
            if let Some(c) = smap.cell_of(beyond) {
                let idx = smap.idx(c);
                smap.obstacle[idx] = true;
                smap.explored[idx] = true;
            }
        }
    }
    for l in &obs.visible_labels {
        let angle = pose.heading + l.bearing;
        let p = Point::new(
            origin.x + l.distance * angle.cos(),
            origin.y + l.distance * angle.sin(),
        );
        if let Some(c) = smap.cell_of(p) {
            let idx = smap.idx(c);
            smap.explored[idx] = true;
            if let Some(li) = (l.label_id as usize).checked_sub(1) {
                if li < smap.vocab.len() {
                    let s = idx * smap.vocab.len() + li;
                    smap.scores[s] = smap.scores[s].max(l.score);
                }
            }
        }
    }
}

/// Locate a landmark: the centroid of the connected region (4-adjacency)
/// whose peak score is highest, provided that peak clears the detection
/// threshold. Returns None when the label has not been seen confidently.
pub fn index_landmark(
    smap: &SemanticMap,
    label: &str,
    detection_threshold: f64,
) -> Result<Option<Cell>, SemNavError> {
    let li = smap
        .vocab
        .iter()
        .position(|v| v == label)
        .ok_or_else(|| SemNavError::UnknownLabel(label.to_string()))?;
    let n = smap.width * smap.height;
    let above = |i: usize| smap.scores[i * smap.vocab.len() + li] > detection_threshold;
    let mut seen = vec![false; n];
    let mut best: Option<(f64, Vec<usize>)> = None;
    for start in 0..n {
        if seen[start] || !above(start) {
            continue;
        }
        let mut region = Vec::new();
        let mut peak = 0.0_f64;
        let mut stack = vec![start];
        seen[start] = true;
        while let Some(i) = stack.pop() {
            region.push(i);
            peak = peak.max(smap.scores[i * smap.vocab.len() + li]);
            let (x, y) = (i % smap.width, i / smap.width);
            let visit = |nx: usize, ny: usize, stack: &mut Vec<usize>, seen: &mut Vec<bool>| {
                let j = ny * smap.width + nx;
                if !seen[j] && above(j) {
                    seen[j] = true;
                    stack.push(j);
                }
            };
            if x > 0 {
                visit(x - 1, y, &mut stack, &mut seen);
            }
            if x + 1 < smap.width {
                visit(x + 1, y, &mut stack, &mut seen);
            }
            if y > 0 {
                visit(x, y - 1, &mut stack, &mut seen);
            }
            if y + 1 < smap.height {
                visit(x, y + 1, &mut stack, &mut seen);
            }
        }
        if best.as_ref().is_none_or(|(bp, _)| peak > *bp) {
            best = Some((peak, region));
        }
    }
    Ok(best.map(|(_, region)| {
        let (mut sx, mut sy) = (0.0, 0.0);
        for &i in &region {
            sx += (i % smap.width) as f64;
            sy += (i / smap.width) as f64;
        }
        let k = region.len() as f64;
        Cell::new((sx / k).round() as usize, (sy / k).round() as usize)
    }))
}

/// Classify the room from the labels visible in an observation: argmax over
/// rooms of the mean affinity. Falls back to "others" when nothing is
/// visible or the best mean stays under `fallback_threshold`.
pub fn classify_room(
    obs: &Observation,
    vocab: &[String],
    rooms: &[String],
    table: &AffinityTable,
    fallback_threshold: f64,
) -> String {
    let names: Vec<&str> = obs
        .visible_labels
        .iter()
        .filter_map(|l| (l.label_id as usize).checked_sub(1).and_then(|i| vocab.get(i)))
        .map(|s| s.as_str())
        .collect();
    if names.is_empty() {
        return "others".to_string();
    }
    let mut best: Option<(f64, &String)> = None;
    for room in rooms {
        let sum: f64 = names.iter().map(|n| table.get(n, room).unwrap_or(0.0)).sum();
        let mean = sum / names.len() as f64;
        if best.is_none_or(|(b, _)| mean > b) {
            best = Some((mean, room));
        }
    }
    match best {
        Some((score, room)) if score >= fallback_threshold => room.clone(),
        _ => "others".to_string(),
    }
}

/// Labels visible from a cell center with a full 360-degree sweep of the
/// true map: the noiseless "peek" used to score candidate viewpoints.
fn peek_labels(map: &GridMap, from: Point, max_range: f64) -> Vec<String> {
    let mut out = Vec::new();
    for (cell, id) in map.labeled_cells() {
        let center = cell.center(map.cell_size());
        let d = from.distance(center);
        if d <= 0.0 || d > max_range {
            continue;
        }
        let angle = from.bearing_to(center);
        if let Ok(clear) = ray_cast(map, from, angle, max_range) {
            if clear + 1e-9 >= d {
                if let Some(name) = map.label_name(id) {
                    out.push(name.to_string());
                }
            }
        }
    }
    out
}

/// Pick the next frontier to visit while searching for `next_landmark`:
/// score each unvisited frontier by the mean affinity between the labels
/// visible from it and the target, break ties by geodesic proximity.
pub fn explore_step(
    smap: &SemanticMap,
    map: &GridMap,
    pose: &PoseState,
    next_landmark: &str,
    table: &AffinityTable,
    visited: &HashSet<Cell>,
    max_range: f64,
) -> Result<Cell, SemNavError> {
    let frontiers: Vec<Cell> = detect_frontiers(&smap.explored, map)
        .into_iter()
        .filter(|c| !visited.contains(c))
        .collect();
    if frontiers.is_empty() {
        return Err(SemNavError::NoFrontiers);
    }
    let mut best: Option<(f64, f64, Cell)> = None;
    for f in frontiers {
        let center = f.center(map.cell_size());
        let labels = peek_labels(map, center, max_range);
        let score = if labels.is_empty() {
            0.0
        } else {
            labels
                .iter()
                .map(|l| table.get(l, next_landmark).unwrap_or(0.0))
                .sum::<f64>()
                / labels.len() as f64
        };
        let dist = geodesic_distance(map, pose.position(), center).unwrap_or(f64::INFINITY);
        let better = match best {
            None => true,
            Some((bs, bd, _)) => score > bs || (score == bs && dist < bd),
        };
        if better {
            best = Some((score, dist, f));
        }
    }
    Ok(best.expect("nonempty frontier list").2)
}

/// One step of a structured navigation program.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Subgoal {
    MoveToObject(String),
    MoveInBetween(String, String),
    MoveToRoom(String),
    /// Meters ahead in the current heading.
    MoveForward(f64),
    /// Degrees, positive = left.
    Turn(f64),
    Stop,
}

/// An ordered subgoal list ending in `Stop`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubgoalProgram {
    pub steps: Vec<Subgoal>,
}

impl SubgoalProgram {
    pub fn validate(&self) -> Result<(), String> {
        match self.steps.last() {
            Some(Subgoal::Stop) => Ok(()),
            _ => Err("program must end with Stop".into()),
        }
    }
}

/// Executor tuning knobs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SemNavConfig {
    /// Peak score a landmark region must exceed to be indexed.
    pub detection_threshold: f64,
    /// Mean affinity below which room classification falls back to others.
    pub room_fallback: f64,
    /// A subgoal counts as reached within this distance, meters.
    pub arrival_tolerance: f64,
    /// Weight on the turn angle in the reorientation cost.
    pub reorient_alpha: f64,
    /// Half-width of the candidate annulus around the target distance.
    pub reorient_window: f64,
    /// Hard stop on recorded poses, guarding against pathological programs.
    pub max_poses: usize,
    pub plan_costs: PlanCosts,
    pub rooms: Vec<String>,
}

impl Default for SemNavConfig {
    fn default() -> Self {
        Self {
            detection_threshold: 0.5,
            room_fallback: 0.3,
            arrival_tolerance: 0.5,
            reorient_alpha: 0.25,
            reorient_window: 0.5,
            max_poses: 4000,
            plan_costs: PlanCosts::default(),
            rooms: DEFAULT_ROOMS.iter().map(|r| r.to_string()).collect(),
        }
    }
}

/// Outcome of one subgoal.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SubgoalOutcome {
    pub subgoal: Subgoal,
    /// Spatial target, when the subgoal has one.
    pub target: Option<Point>,
    pub reached: bool,
}

/// Trace plus per-subgoal outcomes from one program execution.
#[derive(Debug, Clone)]
pub struct ProgramRun {
    pub trace: EpisodeTrace,
    pub outcomes: Vec<SubgoalOutcome>,
}

struct Executor<'a> {
    map: &'a GridMap,
    profile: &'a RobotProfile,
    controller: ControllerKind,
    lighting: LightingCondition,
    table: &'a AffinityTable,
    cfg: &'a SemNavConfig,
    ctrl: &'a ControlConfig,
    sensor: &'a SensorConfig,
    seed: u64,
    salt: u64,
    smap: SemanticMap,
    pose: PoseState,
    trace: EpisodeTrace,
    visited: HashSet<Cell>,
    aborted: bool,
}

enum Abort {
    Failure(String),
    Fell,
}

impl<'a> Executor<'a> {
    fn next_seed(&mut self) -> u64 {
        self.salt += 1;
        derive_seed(self.seed, self.salt)
    }

    fn record_pose(&mut self, pose: PoseState) {
        self.pose = pose;
        let step = self.trace.poses.len() as u32;
        self.pose.step_index = step;
        self.trace.poses.push(self.pose);
    }

    fn look(&mut self) -> Option<Observation> {
        let seed = self.next_seed();
        match observe(self.map, &self.pose, self.profile, self.lighting, self.sensor, seed) {
            Ok(obs) => {
                integrate_observation(&mut self.smap, &obs, &self.pose);
                Some(obs)
            }
            Err(_) => None,
        }
    }

    /// Turn-around maneuver: a full 360-degree scan in 45-degree increments.
    fn scan(&mut self) -> Result<Vec<Observation>, Abort> {
        let mut out = Vec::with_capacity(8);
        if let Some(o) = self.look() {
            out.push(o);
        }
        for _ in 0..7 {
            self.rotate_by(std::f64::consts::FRAC_PI_4)?;
            if let Some(o) = self.look() {
                out.push(o);
            }
        }
        // Complete the turn back to the initial heading.
        self.rotate_by(std::f64::consts::FRAC_PI_4)?;
        Ok(out)
    }

    fn rotate_by(&mut self, delta: f64) -> Result<(), Abort> {
        self.rotate_to(normalize_angle(self.pose.heading + delta))
    }

    fn rotate_to(&mut self, target: f64) -> Result<(), Abort> {
        match self.controller {
            ControllerKind::Flash => {
                let mut next = self.pose;
                next.heading = target;
                self.record_pose(next);
                Ok(())
            }
            _ => {
                let mut ticks = 0;
                loop {
                    let err = angle_diff(target, self.pose.heading);
                    if err.abs() < 1e-3 || ticks > 64 {
                        return Ok(());
                    }
                    let omega = (err / self.ctrl.dt).clamp(-self.ctrl.omega_max, self.ctrl.omega_max);
                    let cmd = VelocityCommand { v: 0.0, omega, duration: self.ctrl.dt };
                    let seed = self.next_seed();
                    let out = speed_step(&self.pose, &cmd, self.profile, self.map, seed)
                        .map_err(|e| Abort::Failure(e.to_string()))?;
                    self.record_pose(out.pose);
                    self.check_fall_abort()?;
                    ticks += 1;
                }
            }
        }
    }

    fn check_fall_abort(&mut self) -> Result<(), Abort> {
        if check_fall(&self.pose, self.profile) {
            self.pose.fallen = true;
            if let Some(last) = self.trace.poses.last_mut() {
                *last = self.pose;
            }
            Err(Abort::Fell)
        } else {
            Ok(())
        }
    }

    fn budget_ok(&self) -> Result<(), Abort> {
        if self.trace.poses.len() >= self.cfg.max_poses {
            Err(Abort::Failure("pose budget exhausted".into()))
        } else {
            Ok(())
        }
    }

    /// Plan on the dilated grid with unexplored-area penalties and follow
    /// the path with the configured controller.
    fn navigate_to(&mut self, goal: Cell) -> Result<(), Abort> {
        let mut costs = dilate_with_blocking(
            self.map,
            self.profile.footprint_radius,
            self.profile.footprint_radius + self.map.cell_size(),
            &self.cfg.plan_costs,
        );
        costs.mark_unexplored(&self.smap.explored, &self.cfg.plan_costs);
        let start = self
            .map
            .cell_at(self.pose.position())
            .and_then(|c| costs.nearest_unblocked(c))
            .ok_or_else(|| Abort::Failure("no path: start blocked".into()))?;
        let goal = costs
            .nearest_unblocked(goal)
            .ok_or_else(|| Abort::Failure("no path: goal blocked".into()))?;
        let path = astar(&costs, start, goal).map_err(|e| Abort::Failure(e.to_string()))?;
        let waypoints: Vec<Point> = path.iter().map(|c| c.center(self.map.cell_size())).collect();

        // Slight reorientation before moving: face the path node whose
        // distance matches the lookahead best, weighted by turn angle.
        if waypoints.len() > 1 {
            let lookahead = waypoints[(waypoints.len() - 1).min(4)];
            let target_dist = self.pose.position().distance(lookahead);
            let candidates: Vec<ReorientCandidate> = path
                .iter()
                .skip(1)
                .take(8)
                .map(|c| {
                    let bearing = self.pose.position().bearing_to(c.center(self.map.cell_size()));
                    ReorientCandidate {
                        cell: *c,
                        turn_angle_gamma: angle_diff(bearing, self.pose.heading).abs(),
                    }
                })
                .collect();
            if let Ok(node) = select_reorient_node(
                &candidates,
                self.pose.position(),
                target_dist,
                self.cfg.reorient_alpha,
                self.map.cell_size(),
            ) {
                let bearing = self.pose.position().bearing_to(node.cell.center(self.map.cell_size()));
                self.rotate_to(bearing)?;
            }
        }

        match self.controller {
            ControllerKind::Flash => {
                for w in waypoints.iter().skip(1) {
                    self.budget_ok()?;
                    let heading = self.pose.position().bearing_to(*w);
                    let target = PoseState { x: w.x, y: w.y, heading, ..self.pose };
                    let next =
                        clipped_flash(self.map, &self.pose, &target, self.profile.footprint_radius);
                    self.record_pose(next);
                    if self.trace.poses.len().is_multiple_of(4) {
                        self.look();
                    }
                }
                self.look();
                Ok(())
            }
            _ => {
                let mut follower = crate::control::PathFollower::new();
                let mut ticks = 0usize;
                let budget = 200 + waypoints.len() * 60;
                loop {
                    self.budget_ok()?;
                    if follower.finished(&self.pose, &waypoints, self.ctrl) {
                        self.look();
                        return Ok(());
                    }
                    if ticks > budget {
                        return Err(Abort::Failure("path following stalled".into()));
                    }
                    let (cmd, _) = crate::control::pid_follow_step(
                        &mut follower,
                        &self.pose,
                        &waypoints,
                        &self.ctrl.gains,
                        self.ctrl,
                        self.ctrl.dt,
                    )
                    .map_err(|e| Abort::Failure(e.to_string()))?;
                    let seed = self.next_seed();
                    let out = speed_step(&self.pose, &cmd, self.profile, self.map, seed)
                        .map_err(|e| Abort::Failure(e.to_string()))?;
                    if out.collided {
                        self.trace.events.push(TraceEvent {
                            kind: TraceEventKind::Collision,
                            step: self.trace.poses.len(),
                            reason: None,
                        });
                    }
                    self.record_pose(out.pose);
                    self.check_fall_abort()?;
                    if ticks.is_multiple_of(10) {
                        self.look();
                    }
                    ticks += 1;
                }
            }
        }
    }

    /// Index the landmark, exploring frontier by frontier until it is seen.
    fn ensure_indexed(&mut self, label: &str) -> Result<Cell, Abort> {
        if !self.smap.vocab.iter().any(|v| v == label) {
            return Err(Abort::Failure(format!("label {label:?} not in vocabulary")));
        }
        loop {
            match index_landmark(&self.smap, label, self.cfg.detection_threshold) {
                Ok(Some(cell)) => return Ok(cell),
                Ok(None) => {}
                Err(e) => return Err(Abort::Failure(e.to_string())),
            }
            let frontier = explore_step(
                &self.smap,
                self.map,
                &self.pose,
                label,
                self.table,
                &self.visited,
                self.sensor.max_range,
            )
            .map_err(|e| Abort::Failure(e.to_string()))?;
            self.visited.insert(frontier);
            self.navigate_to(frontier)?;
            self.scan()?;
        }
    }

    fn arrived(&self, target: Point) -> bool {
        self.pose.position().distance(target) <= self.cfg.arrival_tolerance
    }

    fn run_subgoal(&mut self, subgoal: &Subgoal) -> Result<SubgoalOutcome, Abort> {
        match subgoal {
            Subgoal::Stop => Ok(SubgoalOutcome { subgoal: subgoal.clone(), target: None, reached: true }),
            Subgoal::Turn(deg) => {
                self.rotate_by(deg.to_radians())?;
                Ok(SubgoalOutcome { subgoal: subgoal.clone(), target: None, reached: true })
            }
            Subgoal::MoveForward(dist) => {
                let costs = dilate_with_blocking(
                    self.map,
                    self.profile.footprint_radius,
                    self.profile.footprint_radius + self.map.cell_size(),
                    &self.cfg.plan_costs,
                );
                // Candidates lie in an annulus around the commanded distance.
                let mut window = self.cfg.reorient_window.max(self.map.cell_size());
                let candidates = loop {
                    let c = self.reorient_candidates(&costs, *dist, window);
                    if !c.is_empty() || window > 4.0 * self.cfg.reorient_window + 2.0 {
                        break c;
                    }
                    window *= 2.0;
                };
                let node = select_reorient_node(
                    &candidates,
                    self.pose.position(),
                    *dist,
                    self.cfg.reorient_alpha,
                    self.map.cell_size(),
                )
                .map_err(|e| Abort::Failure(e.to_string()))?;
                let target = node.cell.center(self.map.cell_size());
                let bearing = self.pose.position().bearing_to(target);
                self.rotate_to(bearing)?;
                self.navigate_to(node.cell)?;
                Ok(SubgoalOutcome {
                    subgoal: subgoal.clone(),
                    target: Some(target),
                    reached: self.arrived(target),
                })
            }
            Subgoal::MoveToObject(label) => {
                let cell = self.ensure_indexed(label)?;
                let target = cell.center(self.map.cell_size());
                self.navigate_to(cell)?;
                Ok(SubgoalOutcome {
                    subgoal: subgoal.clone(),
                    target: Some(target),
                    reached: self.arrived(target),
                })
            }
            Subgoal::MoveInBetween(a, b) => {
                let ca = self.ensure_indexed(a)?;
                let cb = self.ensure_indexed(b)?;
                let pa = ca.center(self.map.cell_size());
                let pb = cb.center(self.map.cell_size());
                let mid = Point::new((pa.x + pb.x) / 2.0, (pa.y + pb.y) / 2.0);
                let cell = self
                    .map
                    .cell_at(mid)
                    .ok_or_else(|| Abort::Failure("midpoint outside map".into()))?;
                self.navigate_to(cell)?;
                Ok(SubgoalOutcome {
                    subgoal: subgoal.clone(),
                    target: Some(mid),
                    reached: self.arrived(mid),
                })
            }
            Subgoal::MoveToRoom(room) => {
                loop {
                    let views = self.scan()?;
                    let detected = views.iter().any(|obs| {
                        classify_room(
                            obs,
                            &self.smap.vocab,
                            &self.cfg.rooms,
                            self.table,
                            self.cfg.room_fallback,
                        ) == *room
                    });
                    if detected {
                        return Ok(SubgoalOutcome {
                            subgoal: subgoal.clone(),
                            target: None,
                            reached: true,
                        });
                    }
                    let frontier = explore_step(
                        &self.smap,
                        self.map,
                        &self.pose,
                        room,
                        self.table,
                        &self.visited,
                        self.sensor.max_range,
                    )
                    .map_err(|e| Abort::Failure(e.to_string()))?;
                    self.visited.insert(frontier);
                    self.navigate_to(frontier)?;
                }
            }
        }
    }

    fn reorient_candidates(&self, costs: &crate::plan::CostGrid, dist: f64, window: f64) -> Vec<ReorientCandidate> {
        let cs = self.map.cell_size();
        let here = self.pose.position();
        let mut out = Vec::new();
        for y in 0..self.map.height() {
            for x in 0..self.map.width() {
                let cell = Cell::new(x, y);
                if costs.is_blocked(cell) {
                    continue;
                }
                let center = cell.center(cs);
                let d = here.distance(center);
                if (d - dist).abs() > window || d < cs {
                    continue;
                }
                let gamma = angle_diff(here.bearing_to(center), self.pose.heading).abs();
                out.push(ReorientCandidate { cell, turn_angle_gamma: gamma });
            }
        }
        out
    }
}

/// Execute a subgoal program on a map: index landmarks (exploring frontiers
/// until they are seen), reorient, plan on the dilated cost grid, and drive
/// the controller; planning and exploration failures become an aborted
/// trace rather than an error.
#[allow(clippy::too_many_arguments)]
pub fn execute_program(
    program: &SubgoalProgram,
    map: &GridMap,
    start: PoseState,
    profile: &RobotProfile,
    controller: ControllerKind,
    lighting: LightingCondition,
    table: &AffinityTable,
    cfg: &SemNavConfig,
    ctrl: &ControlConfig,
    sensor: &SensorConfig,
    rng_seed: u64,
) -> ProgramRun {
    let mut exec = Executor {
        map,
        profile,
        controller,
        lighting,
        table,
        cfg,
        ctrl,
        sensor,
        seed: rng_seed,
        salt: 0,
        smap: SemanticMap::for_map(map),
        pose: start,
        trace: EpisodeTrace::default(),
        visited: HashSet::new(),
        aborted: false,
    };
    exec.trace.poses.push(start);
    let mut outcomes = Vec::new();

    if let Err(e) = program.validate() {
        exec.trace.events.push(TraceEvent {
            kind: TraceEventKind::Aborted,
            step: 0,
            reason: Some(e),
        });
        return ProgramRun { trace: exec.trace, outcomes };
    }

    // Initial look-around before the first subgoal.
    if let Err(abort) = exec.scan() {
        finish_abort(&mut exec, abort);
        return ProgramRun { trace: exec.trace, outcomes };
    }

    for subgoal in &program.steps {
        if exec.aborted {
            break;
        }
        if matches!(subgoal, Subgoal::Stop) {
            let step = exec.trace.poses.len() - 1;
            exec.trace.push_stop(step);
            outcomes.push(SubgoalOutcome { subgoal: subgoal.clone(), target: None, reached: true });
            break;
        }
        match exec.run_subgoal(subgoal) {
            Ok(outcome) => outcomes.push(outcome),
            Err(abort) => {
                outcomes.push(SubgoalOutcome {
                    subgoal: subgoal.clone(),
                    target: None,
                    reached: false,
                });
                finish_abort(&mut exec, abort);
            }
        }
    }

    ProgramRun { trace: exec.trace, outcomes }
}

impl EpisodeTrace {
    fn push_stop(&mut self, step: usize) {
        self.events.push(TraceEvent { kind: TraceEventKind::Stop, step, reason: None });
    }
}

fn finish_abort(exec: &mut Executor, abort: Abort) {
    let step = exec.trace.poses.len() - 1;
    let event = match abort {
        Abort::Fell => TraceEvent { kind: TraceEventKind::Fall, step, reason: None },
        Abort::Failure(reason) => {
            TraceEvent { kind: TraceEventKind::Aborted, step, reason: Some(reason) }
        }
    };
    exec.trace.events.push(event);
    exec.aborted = true;
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embodiment::default_profile;
    use crate::embodiment::ProfileKind;
    use crate::world::load_map;

    /// Two 15x15 rooms joined by a two-cell doorway; sofa west, table and
    /// chair east. Cell size 0.4 m, so the map spans 6 m x 6 m.
    fn two_room_map() -> GridMap {
        let mut text = String::from("cellsize 0.4\nlabel s sofa\nlabel t table\nlabel c chair\n");
        for y in 0..15 {
            let mut row = String::new();
            for x in 0..15 {
                let border = x == 0 || y == 0 || x == 14 || y == 14;
                let wall = x == 6 && !(7..=8).contains(&y);
                let ch = if border || wall {
                    '#'
                } else if (x, y) == (3, 2) {
                    's'
                } else if (x, y) == (10, 2) {
                    't'
                } else if (x, y) == (10, 3) {
                    'c'
                } else {
                    '.'
                };
                row.push(ch);
            }
            text.push_str(&row);
            text.push('\n');
        }
        load_map(&text).unwrap()
    }

    fn scan_from(map: &GridMap, pose: &PoseState) -> SemanticMap {
        let mut smap = SemanticMap::for_map(map);
        let profile = default_profile(ProfileKind::Flash);
        let sensor = SensorConfig::default();
        for k in 0..8 {
            let mut p = *pose;
            p.heading = normalize_angle(pose.heading + k as f64 * std::f64::consts::FRAC_PI_4);
            let obs = observe(map, &p, &profile, LightingCondition::dl5000(), &sensor, k as u64)
                .unwrap();
            integrate_observation(&mut smap, &obs, &p);
        }
        smap
    }

    #[test]
    fn default_table_orders_table_contexts() {
        let t = AffinityTable::default_table();
        let dining = t.get("table", "dining room").unwrap();
        let toilet = t.get("table", "toilet").unwrap();
        assert!(dining > toilet);
        assert_eq!(t.get("sofa", "sofa"), Some(1.0));
    }

    #[test]
    fn affinity_csv_round_trips() {
        let t = AffinityTable::default_table();
        let csv = t.to_csv();
        let back = AffinityTable::from_csv(&csv).unwrap();
        assert_eq!(t, back);
        assert!(AffinityTable::from_csv("bogus").is_err());
    }

    #[test]
    fn integration_is_monotone_and_idempotent() {
        let map = two_room_map();
        let profile = default_profile(ProfileKind::Flash);
        let pose = PoseState::new(1.0, 1.0, 0.3);
        let sensor = SensorConfig::default();
        let obs = observe(&map, &pose, &profile, LightingCondition::dl5000(), &sensor, 1).unwrap();

        let mut smap = SemanticMap::for_map(&map);
        integrate_observation(&mut smap, &obs, &pose);
        let explored_once = smap.explored.clone();
        let scores_once = smap.scores.clone();

        integrate_observation(&mut smap, &obs, &pose);
        assert_eq!(smap.explored, explored_once, "idempotent explored mask");
        assert_eq!(smap.scores, scores_once, "idempotent scores");

        // A second view from elsewhere only grows things.
        let pose2 = PoseState::new(1.4, 1.4, -1.0);
        let obs2 = observe(&map, &pose2, &profile, LightingCondition::dl5000(), &sensor, 2).unwrap();
        integrate_observation(&mut smap, &obs2, &pose2);
        for (now, before) in smap.explored.iter().zip(&explored_once) {
            assert!(*now || !*before);
        }
        for (now, before) in smap.scores.iter().zip(&scores_once) {
            assert!(now >= before);
        }
    }

    #[test]
    fn two_views_max_merge() {
        let map = two_room_map();
        let profile = default_profile(ProfileKind::Flash);
        let sensor = SensorConfig::default();
        let near = PoseState::new(1.0, 1.0, 0.0);
        let far = PoseState::new(0.6, 0.6, 0.0);
        let obs_near =
            observe(&map, &near, &profile, LightingCondition::dl5000(), &sensor, 1).unwrap();
        let obs_far =
            observe(&map, &far, &profile, LightingCondition::dl5000(), &sensor, 2).unwrap();

        let mut smap = SemanticMap::for_map(&map);
        integrate_observation(&mut smap, &obs_near, &near);
        integrate_observation(&mut smap, &obs_far, &far);

        let li = smap.vocab.iter().position(|v| v == "sofa").unwrap();
        // Both views deposited at the sofa cell; the kept score is the max.
        let expected: f64 = obs_near
            .visible_labels
            .iter()
            .chain(&obs_far.visible_labels)
            .filter(|l| l.label_id == map.label_id("sofa").unwrap())
            .map(|l| l.score)
            .fold(0.0, f64::max);
        let best = (0..smap.width * smap.height)
            .map(|i| smap.scores[i * smap.vocab.len() + li])
            .fold(0.0_f64, f64::max);
        assert!((best - expected).abs() < 1e-12);
    }

    #[test]
    fn index_landmark_finds_singleton() {
        let map = two_room_map();
        let smap = scan_from(&map, &PoseState::new(1.0, 1.0, 0.0));
        let cell = index_landmark(&smap, "sofa", 0.5).unwrap().expect("sofa seen");
        let sofa_cell = map
            .labeled_cells()
            .into_iter()
            .find(|(_, id)| map.label_name(*id) == Some("sofa"))
            .unwrap()
            .0;
        assert_eq!(cell, sofa_cell);
    }

    #[test]
    fn index_landmark_empty_map_is_none() {
        let map = two_room_map();
        let smap = SemanticMap::for_map(&map);
        assert_eq!(index_landmark(&smap, "sofa", 0.5).unwrap(), None);
    }

    #[test]
    fn index_landmark_unknown_label_is_error() {
        let map = two_room_map();
        let smap = SemanticMap::for_map(&map);
        assert!(matches!(
            index_landmark(&smap, "spaceship", 0.5),
            Err(SemNavError::UnknownLabel(_))
        ));
    }

    #[test]
    fn index_landmark_picks_higher_peak_region() {
        let map = two_room_map();
        let mut smap = SemanticMap::for_map(&map);
        let li = smap.vocab.iter().position(|v| v == "table").unwrap();
        let l = smap.vocab.len();
        // Region A: peak 0.7 around (2,2); region B: peak 0.9 around (10,10).
        for (x, y, s) in [(2usize, 2usize, 0.7), (3, 2, 0.6)] {
            smap.scores[(y * smap.width + x) * l + li] = s;
        }
        for (x, y, s) in [(10usize, 10usize, 0.9), (10, 11, 0.55)] {
            smap.scores[(y * smap.width + x) * l + li] = s;
        }
        let got = index_landmark(&smap, "table", 0.5).unwrap().unwrap();
        assert_eq!(got.x, 10);
        assert!(got.y == 10 || got.y == 11, "centroid of the 0.9-peak region");
    }

    #[test]
    fn classify_room_prefers_dining_for_table_and_chair() {
        let map = two_room_map();
        let profile = default_profile(ProfileKind::Flash);
        let sensor = SensorConfig::default();
        // Stand in the east room looking at the table and chair.
        let pose = PoseState::new(4.2, 0.6, std::f64::consts::FRAC_PI_2);
        let obs = observe(&map, &pose, &profile, LightingCondition::dl5000(), &sensor, 3).unwrap();
        assert!(obs
            .visible_labels
            .iter()
            .any(|label| map.label_name(label.label_id) == Some("table")));
        let vocab: Vec<String> = map.vocab().map(str::to_string).collect();
        let rooms: Vec<String> = DEFAULT_ROOMS.iter().map(|r| r.to_string()).collect();
        let room = classify_room(&obs, &vocab, &rooms, &AffinityTable::default_table(), 0.3);
        assert_eq!(room, "dining room");
    }

    #[test]
    fn classify_room_fallback_and_permutation_invariance() {
        let map = two_room_map();
        let vocab: Vec<String> = map.vocab().map(str::to_string).collect();
        let rooms: Vec<String> = DEFAULT_ROOMS.iter().map(|r| r.to_string()).collect();
        let table = AffinityTable::default_table();
        let mut obs = Observation {
            depth_rays: vec![],
            visible_labels: vec![],
            camera_height: 1.0,
            lighting: LightingCondition::dl5000(),
            fov: 1.0,
            max_range: 10.0,
        };
        assert_eq!(classify_room(&obs, &vocab, &rooms, &table, 0.3), "others");

        use crate::world::VisibleLabel;
        obs.visible_labels = vec![
            VisibleLabel { label_id: map.label_id("table").unwrap(), bearing: 0.0, distance: 1.0, score: 0.9 },
            VisibleLabel { label_id: map.label_id("chair").unwrap(), bearing: 0.1, distance: 1.2, score: 0.8 },
        ];
        let a = classify_room(&obs, &vocab, &rooms, &table, 0.3);
        obs.visible_labels.reverse();
        let b = classify_room(&obs, &vocab, &rooms, &table, 0.3);
        assert_eq!(a, b);
    }

    #[test]
    fn explore_step_singleton_frontier() {
        let map = two_room_map();
        let mut smap = SemanticMap::for_map(&map);
        // Explore exactly one free cell; it is the only frontier.
        let c = map.cell_at(Point::new(1.0, 1.0)).unwrap();
        smap.explored[c.y * smap.width + c.x] = true;
        let pose = PoseState::new(1.0, 1.0, 0.0);
        let got = explore_step(
            &smap,
            &map,
            &pose,
            "table",
            &AffinityTable::default_table(),
            &HashSet::new(),
            10.0,
        )
        .unwrap();
        assert_eq!(got, c);
    }

    #[test]
    fn explore_step_exhaustion() {
        let map = two_room_map();
        let mut smap = SemanticMap::for_map(&map);
        for e in smap.explored.iter_mut() {
            *e = true;
        }
        let pose = PoseState::new(1.0, 1.0, 0.0);
        assert!(matches!(
            explore_step(
                &smap,
                &map,
                &pose,
                "table",
                &AffinityTable::default_table(),
                &HashSet::new(),
                10.0
            ),
            Err(SemNavError::NoFrontiers)
        ));
    }

    fn run_program_on(map: &GridMap, program: SubgoalProgram, seed: u64) -> ProgramRun {
        execute_program(
            &program,
            map,
            PoseState::new(1.0, 1.0, 0.0),
            &default_profile(ProfileKind::Flash),
            ControllerKind::Flash,
            LightingCondition::dl5000(),
            &AffinityTable::default_table(),
            &SemNavConfig::default(),
            &ControlConfig::default(),
            &SensorConfig::default(),
            seed,
        )
    }

    #[test]
    fn stop_only_program_does_not_move() {
        let map = two_room_map();
        let run = run_program_on(&map, SubgoalProgram { steps: vec![Subgoal::Stop] }, 1);
        let start = run.trace.poses.first().unwrap().position();
        let end = run.trace.poses.last().unwrap().position();
        // The initial scan may rotate in place but never translates.
        assert!(start.distance(end) < 1e-9);
        assert_eq!(run.trace.terminal_event().unwrap().kind, TraceEventKind::Stop);
    }

    #[test]
    fn move_to_object_reaches_the_sofa() {
        let map = two_room_map();
        let run = run_program_on(
            &map,
            SubgoalProgram { steps: vec![Subgoal::MoveToObject("sofa".into()), Subgoal::Stop] },
            2,
        );
        let outcome = &run.outcomes[0];
        assert!(outcome.reached, "sofa not reached: {:?}", run.trace.events);
        let target = outcome.target.unwrap();
        assert!(run.trace.poses.last().unwrap().position().distance(target) <= 0.5);
    }

    #[test]
    fn move_in_between_hits_the_midpoint() {
        let map = two_room_map();
        let run = run_program_on(
            &map,
            SubgoalProgram {
                steps: vec![Subgoal::MoveInBetween("table".into(), "chair".into()), Subgoal::Stop],
            },
            3,
        );
        let outcome = &run.outcomes[0];
        assert!(outcome.reached, "midpoint not reached: {:?}", run.trace.events);
        let mid = outcome.target.unwrap();
        assert!(run.trace.poses.last().unwrap().position().distance(mid) <= 0.5);
    }

    #[test]
    fn unsolvable_program_aborts_with_reason() {
        let map = two_room_map();
        let run = run_program_on(
            &map,
            SubgoalProgram { steps: vec![Subgoal::MoveToObject("bed".into()), Subgoal::Stop] },
            4,
        );
        let terminal = run.trace.terminal_event().unwrap();
        assert_eq!(terminal.kind, TraceEventKind::Aborted);
        assert!(terminal.reason.is_some());
        assert!(!run.outcomes[0].reached);
    }

    #[test]
    fn explored_fraction_grows_during_execution() {
        let map = two_room_map();
        let mut smap = SemanticMap::for_map(&map);
        let profile = default_profile(ProfileKind::Flash);
        let sensor = SensorConfig::default();
        let mut last = 0.0;
        for (i, &(x, y)) in [(1.0, 1.0), (1.0, 3.0), (2.6, 3.4), (4.0, 3.4)].iter().enumerate() {
            let pose = PoseState::new(x, y, 0.0);
            for k in 0..8 {
                let mut p = pose;
                p.heading = normalize_angle(k as f64 * std::f64::consts::FRAC_PI_4);
                let obs = observe(&map, &p, &profile, LightingCondition::dl5000(), &sensor, i as u64)
                    .unwrap();
                integrate_observation(&mut smap, &obs, &p);
            }
            let now = smap.explored_fraction();
            assert!(now >= last);
            last = now;
        }
        assert!(last > 0.5);
    }
}
