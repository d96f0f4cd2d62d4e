//! Grid worlds, lighting regimes, and the ego-centric observation model.
//!
//! A [`GridMap`] is an occupancy grid with optional per-cell semantic labels.
//! Depth sensing is a fan of ray casts; semantics are per-landmark visibility
//! scores degraded by lighting-dependent noise. Depth is never affected by
//! lighting, only the semantic channel is.

use crate::embodiment::{PoseState, RobotProfile};
use crate::geom::{normalize_angle, Cell, Point};
use crate::rng::rng_from_seed;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Occupancy state of one grid cell.
///
/// `Hole` cells are floor defects: traversable (they never block rays or
/// wheeled motion) but destabilizing for legged robots.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CellKind {
    Free,
    Obstacle,
    Hole,
}

#[derive(Debug, Error)]
pub enum WorldError {
    #[error("map parse error: {0}")]
    Parse(String),
    #[error("map validation error: {0}")]
    Validation(String),
    #[error("position ({0:.3}, {1:.3}) is outside the map")]
    OutOfBounds(f64, f64),
}

/// Lighting regime under which semantic observations are taken.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LightingKind {
    /// Bright panel light; ideal perception.
    Dl5000,
    /// Dim panel light.
    Dl300,
    /// Robot-mounted light: bright straight ahead, darker at the sides.
    Cl,
}

/// Lighting condition with its semantic noise parameters.
///
/// The depth channel is never affected; only semantic scores are perturbed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LightingCondition {
    pub kind: LightingKind,
    /// Std-dev of the Gaussian noise subtracted from semantic scores.
    pub semantic_noise_sigma: f64,
    /// For `Cl` only: how strongly noise grows away from the optical axis,
    /// in [0, 1]. Ignored for disc lighting.
    pub angular_falloff: f64,
}

impl LightingCondition {
    /// Bright daytime disc light: noiseless semantics.
    pub fn dl5000() -> Self {
        Self { kind: LightingKind::Dl5000, semantic_noise_sigma: 0.0, angular_falloff: 0.0 }
    }

    /// Dim nighttime disc light.
    pub fn dl300() -> Self {
        Self { kind: LightingKind::Dl300, semantic_noise_sigma: 0.3, angular_falloff: 0.0 }
    }

    /// Camera light mounted on the robot.
    pub fn cl() -> Self {
        Self { kind: LightingKind::Cl, semantic_noise_sigma: 0.15, angular_falloff: 1.0 }
    }

    pub fn by_name(name: &str) -> Option<Self> {
        match name {
            "dl5000" => Some(Self::dl5000()),
            "dl300" => Some(Self::dl300()),
            "cl" => Some(Self::cl()),
            _ => None,
        }
    }

    /// Effective noise sigma for a landmark seen at `bearing` (radians off
    /// the optical axis) with the given field of view.
    pub fn effective_sigma(&self, bearing: f64, fov: f64) -> f64 {
        match self.kind {
            LightingKind::Cl => self.semantic_noise_sigma * self.angular_falloff * bearing.abs() / fov,
            _ => self.semantic_noise_sigma,
        }
    }
}

/// Sensor envelope for [`observe`].
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SensorConfig {
    /// Field of view in radians.
    pub fov: f64,
    /// Number of depth rays across the field of view.
    pub rays: usize,
    /// Maximum sensing range in meters.
    pub max_range: f64,
}

impl Default for SensorConfig {
    fn default() -> Self {
        Self { fov: std::f64::consts::FRAC_PI_2, rays: 64, max_range: 10.0 }
    }
}

/// One landmark visible in the current observation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VisibleLabel {
    pub label_id: u16,
    /// Bearing relative to the robot heading, radians.
    pub bearing: f64,
    pub distance: f64,
    /// Perceived semantic score in [0, 1] after lighting noise.
    pub score: f64,
}

/// Ego-centric observation: depth fan plus perceived landmarks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    /// Distances along evenly spaced bearings across the field of view,
    /// clamped to `max_range`. Never affected by lighting.
    pub depth_rays: Vec<f64>,
    pub visible_labels: Vec<VisibleLabel>,
    pub camera_height: f64,
    pub lighting: LightingCondition,
    pub fov: f64,
    pub max_range: f64,
}

impl Observation {
    /// Bearing of depth ray `i` relative to the robot heading.
    pub fn ray_bearing(&self, i: usize) -> f64 {
        ray_bearing(self.fov, self.depth_rays.len(), i)
    }
}

pub(crate) fn ray_bearing(fov: f64, rays: usize, i: usize) -> f64 {
    if rays <= 1 {
        0.0
    } else {
        -fov / 2.0 + fov * i as f64 / (rays - 1) as f64
    }
}

/// Occupancy + semantic label grid. Immutable after loading; the world
/// geometry everything else reads.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridMap {
    width: usize,
    height: usize,
    cell_size: f64,
    cells: Vec<CellKind>,
    /// Per-cell semantic label id; 0 = none, otherwise 1-based into `vocab`.
    labels: Vec<u16>,
    /// Label vocabulary: (map character, name), id = index + 1.
    vocab: Vec<(char, String)>,
}

impl GridMap {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn cell_size(&self) -> f64 {
        self.cell_size
    }

    pub fn vocab(&self) -> impl Iterator<Item = &str> {
        self.vocab.iter().map(|(_, n)| n.as_str())
    }

    pub fn label_name(&self, id: u16) -> Option<&str> {
        if id == 0 {
            None
        } else {
            self.vocab.get(id as usize - 1).map(|(_, n)| n.as_str())
        }
    }

    pub fn label_id(&self, name: &str) -> Option<u16> {
        self.vocab.iter().position(|(_, n)| n == name).map(|i| (i + 1) as u16)
    }

    fn idx(&self, c: Cell) -> usize {
        c.y * self.width + c.x
    }

    pub fn in_bounds(&self, c: Cell) -> bool {
        c.x < self.width && c.y < self.height
    }

    pub fn kind(&self, c: Cell) -> CellKind {
        self.cells[self.idx(c)]
    }

    pub fn label(&self, c: Cell) -> u16 {
        self.labels[self.idx(c)]
    }

    pub fn is_obstacle(&self, c: Cell) -> bool {
        self.kind(c) == CellKind::Obstacle
    }

    /// Cell containing a world point, or None if outside the map.
    pub fn cell_at(&self, p: Point) -> Option<Cell> {
        if p.x < 0.0 || p.y < 0.0 {
            return None;
        }
        let c = Cell::new((p.x / self.cell_size) as usize, (p.y / self.cell_size) as usize);
        self.in_bounds(c).then_some(c)
    }

    /// All cells carrying a semantic label, in row-major order.
    pub fn labeled_cells(&self) -> Vec<(Cell, u16)> {
        let mut out = Vec::new();
        for y in 0..self.height {
            for x in 0..self.width {
                let c = Cell::new(x, y);
                let l = self.label(c);
                if l != 0 {
                    out.push((c, l));
                }
            }
        }
        out
    }

    /// All free (non-obstacle, non-hole) cells in row-major order.
    pub fn free_cells(&self) -> Vec<Cell> {
        let mut out = Vec::new();
        for y in 0..self.height {
            for x in 0..self.width {
                let c = Cell::new(x, y);
                if self.kind(c) == CellKind::Free {
                    out.push(c);
                }
            }
        }
        out
    }

    fn border_is_closed(&self) -> bool {
        for x in 0..self.width {
            if self.kind(Cell::new(x, 0)) != CellKind::Obstacle
                || self.kind(Cell::new(x, self.height - 1)) != CellKind::Obstacle
            {
                return false;
            }
        }
        for y in 0..self.height {
            if self.kind(Cell::new(0, y)) != CellKind::Obstacle
                || self.kind(Cell::new(self.width - 1, y)) != CellKind::Obstacle
            {
                return false;
            }
        }
        true
    }

    /// Serialize back to the text map format. Parsing the output yields an
    /// identical map.
    pub fn to_text(&self) -> String {
        let mut out = format!("cellsize {}\n", self.cell_size);
        for (ch, name) in &self.vocab {
            out.push_str(&format!("label {} {}\n", ch, name));
        }
        for y in 0..self.height {
            for x in 0..self.width {
                let c = Cell::new(x, y);
                let ch = match self.kind(c) {
                    CellKind::Obstacle => '#',
                    CellKind::Hole => 'H',
                    CellKind::Free => {
                        let l = self.label(c);
                        if l == 0 {
                            '.'
                        } else {
                            self.vocab[l as usize - 1].0
                        }
                    }
                };
                out.push(ch);
            }
            out.push('\n');
        }
        out
    }

    /// Generate a random closed room with obstacle clutter, holes, and a few
    /// labeled landmarks. Free space is guaranteed connected (smaller pockets
    /// are filled in).
    pub fn generate_random(width: usize, height: usize, clutter: f64, seed: u64) -> GridMap {
        use rand::Rng;
        let mut rng = rng_from_seed(seed);
        let w = width.max(6);
        let h = height.max(6);
        let mut cells = vec![CellKind::Free; w * h];
        for x in 0..w {
            cells[x] = CellKind::Obstacle;
            cells[(h - 1) * w + x] = CellKind::Obstacle;
        }
        for y in 0..h {
            cells[y * w] = CellKind::Obstacle;
            cells[y * w + w - 1] = CellKind::Obstacle;
        }
        // Sprinkle small rectangular clutter.
        let n_blobs = ((w * h) as f64 * clutter / 6.0) as usize;
        for _ in 0..n_blobs {
            let bx = rng.gen_range(1..w - 1);
            let by = rng.gen_range(1..h - 1);
            let bw = rng.gen_range(1..=3.min(w - 1 - bx).max(1));
            let bh = rng.gen_range(1..=3.min(h - 1 - by).max(1));
            for y in by..(by + bh).min(h - 1) {
                for x in bx..(bx + bw).min(w - 1) {
                    cells[y * w + x] = CellKind::Obstacle;
                }
            }
        }
        // A few floor holes.
        for _ in 0..((w * h) / 120).max(1) {
            let x = rng.gen_range(1..w - 1);
            let y = rng.gen_range(1..h - 1);
            if cells[y * w + x] == CellKind::Free {
                cells[y * w + x] = CellKind::Hole;
            }
        }
        // Keep only the largest connected free component (holes count as
        // traversable) so start/goal sampling cannot straddle pockets.
        let mut comp = vec![u32::MAX; w * h];
        let mut sizes = Vec::new();
        for start in 0..w * h {
            if cells[start] == CellKind::Obstacle || comp[start] != u32::MAX {
                continue;
            }
            let id = sizes.len() as u32;
            let mut size = 0usize;
            let mut stack = vec![start];
            comp[start] = id;
            while let Some(i) = stack.pop() {
                size += 1;
                let (x, y) = (i % w, i / w);
                let push = |nx: usize, ny: usize, stack: &mut Vec<usize>, comp: &mut Vec<u32>| {
                    let j = ny * w + nx;
                    if cells[j] != CellKind::Obstacle && comp[j] == u32::MAX {
                        comp[j] = id;
                        stack.push(j);
                    }
                };
                if x > 0 {
                    push(x - 1, y, &mut stack, &mut comp);
                }
                if x + 1 < w {
                    push(x + 1, y, &mut stack, &mut comp);
                }
                if y > 0 {
                    push(x, y - 1, &mut stack, &mut comp);
                }
                if y + 1 < h {
                    push(x, y + 1, &mut stack, &mut comp);
                }
            }
            sizes.push(size);
        }
        if let Some(best) = (0..sizes.len()).max_by_key(|&i| sizes[i]) {
            for i in 0..w * h {
                if cells[i] != CellKind::Obstacle && comp[i] != best as u32 {
                    cells[i] = CellKind::Obstacle;
                }
            }
        }
        // Drop a few landmarks on free cells adjacent to obstacles.
        let vocab: Vec<(char, String)> = [('t', "table"), ('c', "chair"), ('s', "sofa"), ('b', "bed")]
            .iter()
            .map(|(ch, n)| (*ch, n.to_string()))
            .collect();
        let mut labels = vec![0u16; w * h];
        let mut placed = 0u16;
        let mut tries = 0;
        while placed < 4 && tries < 200 {
            tries += 1;
            let x = rng.gen_range(1..w - 1);
            let y = rng.gen_range(1..h - 1);
            let i = y * w + x;
            if cells[i] == CellKind::Free && labels[i] == 0 {
                labels[i] = placed + 1;
                placed += 1;
            }
        }
        GridMap { width: w, height: h, cell_size: 0.1, cells, labels, vocab }
    }
}

/// Parse the text map format.
///
/// First line `cellsize <meters>`, then optional `label <char> <name>` lines,
/// then equal-length rows of `.` / `#` / `H` / declared label characters.
/// If the outer ring is not fully obstacle, the grid is padded with one.
pub fn load_map(text: &str) -> Result<GridMap, WorldError> {
    let mut cell_size: Option<f64> = None;
    let mut vocab: Vec<(char, String)> = Vec::new();
    let mut rows: Vec<Vec<char>> = Vec::new();

    for raw in text.lines() {
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix("cellsize ") {
            if cell_size.is_some() {
                return Err(WorldError::Parse("duplicate cellsize line".into()));
            }
            let v: f64 = rest
                .trim()
                .parse()
                .map_err(|_| WorldError::Parse(format!("bad cellsize: {rest:?}")))?;
            cell_size = Some(v);
        } else if let Some(rest) = line.strip_prefix("label ") {
            let mut parts = rest.splitn(2, ' ');
            let ch = parts
                .next()
                .and_then(|s| {
                    let mut it = s.chars();
                    let c = it.next()?;
                    it.next().is_none().then_some(c)
                })
                .ok_or_else(|| WorldError::Parse(format!("bad label line: {line:?}")))?;
            let name = parts
                .next()
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .ok_or_else(|| WorldError::Parse(format!("label {ch:?} has no name")))?;
            if "#.H".contains(ch) {
                return Err(WorldError::Parse(format!("label character {ch:?} is reserved")));
            }
            if vocab.iter().any(|(c, _)| *c == ch) {
                return Err(WorldError::Parse(format!("duplicate label character {ch:?}")));
            }
            vocab.push((ch, name.to_string()));
        } else {
            rows.push(line.chars().collect());
        }
    }

    let cell_size = cell_size.ok_or_else(|| WorldError::Parse("missing cellsize line".into()))?;
    if cell_size <= 0.0 || !cell_size.is_finite() {
        return Err(WorldError::Validation(format!("cell size must be positive, got {cell_size}")));
    }
    if rows.is_empty() {
        return Err(WorldError::Parse("map has no grid rows".into()));
    }
    let width = rows[0].len();
    if width == 0 {
        return Err(WorldError::Parse("map rows are empty".into()));
    }
    for (i, r) in rows.iter().enumerate() {
        if r.len() != width {
            return Err(WorldError::Parse(format!(
                "row {} has length {}, expected {}",
                i,
                r.len(),
                width
            )));
        }
    }

    let height = rows.len();
    let mut cells = Vec::with_capacity(width * height);
    let mut labels = Vec::with_capacity(width * height);
    for row in &rows {
        for &ch in row {
            let (kind, label) = match ch {
                '.' => (CellKind::Free, 0u16),
                '#' => (CellKind::Obstacle, 0),
                'H' => (CellKind::Hole, 0),
                other => {
                    let id = vocab
                        .iter()
                        .position(|(c, _)| *c == other)
                        .ok_or_else(|| WorldError::Parse(format!("unknown cell character {other:?}")))?;
                    (CellKind::Free, (id + 1) as u16)
                }
            };
            cells.push(kind);
            labels.push(label);
        }
    }

    let mut map = GridMap { width, height, cell_size, cells, labels, vocab };
    if !map.border_is_closed() {
        map = pad_border(map);
    }
    Ok(map)
}

fn pad_border(m: GridMap) -> GridMap {
    let w = m.width + 2;
    let h = m.height + 2;
    let mut cells = vec![CellKind::Obstacle; w * h];
    let mut labels = vec![0u16; w * h];
    for y in 0..m.height {
        for x in 0..m.width {
            cells[(y + 1) * w + x + 1] = m.cells[y * m.width + x];
            labels[(y + 1) * w + x + 1] = m.labels[y * m.width + x];
        }
    }
    GridMap { width: w, height: h, cell_size: m.cell_size, cells, labels, vocab: m.vocab }
}

/// Distance along `heading` from `origin` to the first obstacle cell
/// boundary, clamped to `max_range`. Holes never block rays.
///
/// Uses exact grid traversal, so the result is deterministic.
pub fn ray_cast(map: &GridMap, origin: Point, heading: f64, max_range: f64) -> Result<f64, WorldError> {
    let start = map
        .cell_at(origin)
        .ok_or(WorldError::OutOfBounds(origin.x, origin.y))?;
    if map.is_obstacle(start) {
        return Ok(0.0);
    }

    let dx = heading.cos();
    let dy = heading.sin();
    let cs = map.cell_size();

    let (mut cx, mut cy) = (start.x as isize, start.y as isize);
    let step_x: isize = if dx > 0.0 { 1 } else { -1 };
    let step_y: isize = if dy > 0.0 { 1 } else { -1 };

    // Parametric distance to the next vertical / horizontal cell boundary.
    let mut t_max_x = if dx == 0.0 {
        f64::INFINITY
    } else {
        let next = if dx > 0.0 { (cx + 1) as f64 * cs } else { cx as f64 * cs };
        (next - origin.x) / dx
    };
    let mut t_max_y = if dy == 0.0 {
        f64::INFINITY
    } else {
        let next = if dy > 0.0 { (cy + 1) as f64 * cs } else { cy as f64 * cs };
        (next - origin.y) / dy
    };
    let t_delta_x = if dx == 0.0 { f64::INFINITY } else { cs / dx.abs() };
    let t_delta_y = if dy == 0.0 { f64::INFINITY } else { cs / dy.abs() };

    // Closed border guarantees termination; the step cap is a backstop.
    for _ in 0..map.width() + map.height() + 4 {
        let t = if t_max_x < t_max_y {
            cx += step_x;
            let t = t_max_x;
            t_max_x += t_delta_x;
            t
        } else {
            cy += step_y;
            let t = t_max_y;
            t_max_y += t_delta_y;
            t
        };
        if t > max_range {
            return Ok(max_range);
        }
        if cx < 0 || cy < 0 || cx as usize >= map.width() || cy as usize >= map.height() {
            return Ok(max_range);
        }
        let cell = Cell::new(cx as usize, cy as usize);
        if map.is_obstacle(cell) {
            return Ok(t.min(max_range));
        }
    }
    Ok(max_range)
}

/// Take an ego-centric observation.
///
/// Depth rays are pure geometry (lighting-independent). Each labeled cell in
/// range, within the field of view, and with clear line of sight contributes
/// a semantic score `1 - d/max_range` minus lighting noise, clamped to [0, 1].
/// The same seed always yields a bit-identical observation.
pub fn observe(
    map: &GridMap,
    pose: &PoseState,
    profile: &RobotProfile,
    lighting: LightingCondition,
    sensor: &SensorConfig,
    rng_seed: u64,
) -> Result<Observation, WorldError> {
    let origin = Point::new(pose.x, pose.y);
    let cell = map
        .cell_at(origin)
        .ok_or(WorldError::OutOfBounds(origin.x, origin.y))?;
    if map.is_obstacle(cell) {
        return Err(WorldError::OutOfBounds(origin.x, origin.y));
    }

    let mut depth_rays = Vec::with_capacity(sensor.rays);
    for i in 0..sensor.rays {
        let bearing = ray_bearing(sensor.fov, sensor.rays, i);
        depth_rays.push(ray_cast(map, origin, pose.heading + bearing, sensor.max_range)?);
    }

    let mut rng = rng_from_seed(rng_seed);
    let mut visible_labels = Vec::new();
    for (lcell, label_id) in map.labeled_cells() {
        let center = lcell.center(map.cell_size());
        let d = origin.distance(center);
        if d <= 0.0 || d > sensor.max_range {
            continue;
        }
        let bearing = normalize_angle(origin.bearing_to(center) - pose.heading);
        if bearing.abs() > sensor.fov / 2.0 {
            continue;
        }
        // Labeled cells are free, so the ray passes through them; the
        // landmark is visible iff the first obstacle lies beyond it.
        let clear = ray_cast(map, origin, pose.heading + bearing, sensor.max_range)?;
        if clear + 1e-9 < d {
            continue;
        }
        let true_score = (1.0 - d / sensor.max_range).clamp(0.0, 1.0);
        let sigma = lighting.effective_sigma(bearing, sensor.fov);
        let score = if sigma > 0.0 {
            let noise = Normal::new(0.0, sigma).expect("sigma > 0").sample(&mut rng);
            (true_score - noise).clamp(0.0, 1.0)
        } else {
            true_score
        };
        visible_labels.push(VisibleLabel { label_id, bearing, distance: d, score });
    }

    Ok(Observation {
        depth_rays,
        visible_labels,
        camera_height: profile.camera_height,
        lighting,
        fov: sensor.fov,
        max_range: sensor.max_range,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embodiment::{default_profile, ProfileKind};

    fn corridor_map() -> GridMap {
        // 10m corridor along +x, wall band starting at x = 4.0m.
        let mut text = String::from("cellsize 0.1\n");
        let w = 100;
        let h = 20;
        for y in 0..h {
            let mut row = String::new();
            for x in 0..w {
                let border = x == 0 || y == 0 || x == w - 1 || y == h - 1;
                let wall = (40..=42).contains(&x) && y >= 1;
                row.push(if border || wall { '#' } else { '.' });
            }
            text.push_str(&row);
            text.push('\n');
        }
        load_map(&text).unwrap()
    }

    #[test]
    fn all_free_map_gets_border_padding() {
        let map = load_map("cellsize 0.1\n...\n...\n...\n").unwrap();
        assert_eq!(map.width(), 5);
        assert_eq!(map.height(), 5);
        let free = map.free_cells();
        assert_eq!(free.len(), 9);
    }

    #[test]
    fn ragged_rows_fail() {
        let err = load_map("cellsize 0.1\n##\n###\n").unwrap_err();
        assert!(matches!(err, WorldError::Parse(_)));
    }

    #[test]
    fn zero_cellsize_fails() {
        let err = load_map("cellsize 0\n###\n#.#\n###\n").unwrap_err();
        assert!(matches!(err, WorldError::Validation(_)));
    }

    #[test]
    fn hole_cell_round_trips() {
        let text = "cellsize 0.1\nlabel t table\n#####\n#..t#\n#.H.#\n#####\n";
        let map = load_map(text).unwrap();
        let holes: Vec<_> = (0..map.height())
            .flat_map(|y| (0..map.width()).map(move |x| Cell::new(x, y)))
            .filter(|&c| map.kind(c) == CellKind::Hole)
            .collect();
        assert_eq!(holes.len(), 1);
        assert_eq!(map.to_text(), text);
    }

    #[test]
    fn ray_hits_wall_at_exact_boundary() {
        let map = corridor_map();
        // Stand at x=0.55, cast along +x; wall cells start at column 40,
        // i.e. x = 4.0m, so expected distance is 4.0 - 0.55.
        let d = ray_cast(&map, Point::new(0.55, 1.0), 0.0, 10.0).unwrap();
        assert!((d - 3.45).abs() < 1e-9, "got {d}");
    }

    #[test]
    fn ray_clamps_to_max_range() {
        let map = corridor_map();
        let d = ray_cast(&map, Point::new(0.55, 1.0), 0.0, 2.0).unwrap();
        assert_eq!(d, 2.0);
    }

    #[test]
    fn ray_adjacent_wall_distance_is_boundary_distance() {
        let map = corridor_map();
        // Cell column 39 spans [3.9, 4.0); standing at x=3.95 facing the wall.
        let d = ray_cast(&map, Point::new(3.95, 1.0), 0.0, 10.0).unwrap();
        assert!((d - 0.05).abs() < 1e-9, "got {d}");
    }

    #[test]
    fn ray_monotone_as_wall_approaches() {
        // Moving the origin toward the wall strictly decreases the distance.
        let map = corridor_map();
        let mut prev = f64::INFINITY;
        for i in 0..30 {
            let x = 0.15 + i as f64 * 0.1;
            let d = ray_cast(&map, Point::new(x, 1.0), 0.0, 10.0).unwrap();
            assert!(d <= prev);
            prev = d;
        }
    }

    #[test]
    fn holes_do_not_block_rays() {
        let with_hole = load_map("cellsize 0.1\n#######\n#.H...#\n#######\n").unwrap();
        let without = load_map("cellsize 0.1\n#######\n#.....#\n#######\n").unwrap();
        let p = Point::new(0.15, 0.15);
        let a = ray_cast(&with_hole, p, 0.0, 10.0).unwrap();
        let b = ray_cast(&without, p, 0.0, 10.0).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn out_of_bounds_origin_is_error() {
        let map = corridor_map();
        assert!(ray_cast(&map, Point::new(-1.0, 1.0), 0.0, 10.0).is_err());
    }

    #[test]
    fn dl5000_scores_are_noiseless() {
        let map = load_map("cellsize 0.1\nlabel t table\n#######\n#..t..#\n#.....#\n#######\n").unwrap();
        let profile = default_profile(ProfileKind::Flash);
        let pose = PoseState::new(0.15, 0.15, 0.0);
        let sensor = SensorConfig::default();
        let a = observe(&map, &pose, &profile, LightingCondition::dl5000(), &sensor, 1).unwrap();
        let b = observe(&map, &pose, &profile, LightingCondition::dl5000(), &sensor, 999).unwrap();
        assert_eq!(a, b);
        for v in &a.visible_labels {
            let expected = 1.0 - v.distance / sensor.max_range;
            assert!((v.score - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn depth_identical_across_lighting() {
        let map = corridor_map();
        let profile = default_profile(ProfileKind::Humanoid);
        let pose = PoseState::new(1.0, 1.0, 0.3);
        let sensor = SensorConfig::default();
        let a = observe(&map, &pose, &profile, LightingCondition::dl5000(), &sensor, 5).unwrap();
        let b = observe(&map, &pose, &profile, LightingCondition::dl300(), &sensor, 5).unwrap();
        let c = observe(&map, &pose, &profile, LightingCondition::cl(), &sensor, 5).unwrap();
        assert_eq!(a.depth_rays, b.depth_rays);
        assert_eq!(a.depth_rays, c.depth_rays);
    }

    #[test]
    fn observe_is_deterministic_per_seed() {
        let map = load_map("cellsize 0.1\nlabel t table\n#######\n#..t..#\n#.....#\n#######\n").unwrap();
        let profile = default_profile(ProfileKind::Quadruped);
        let pose = PoseState::new(0.15, 0.15, 0.0);
        let sensor = SensorConfig::default();
        let a = observe(&map, &pose, &profile, LightingCondition::dl300(), &sensor, 42).unwrap();
        let b = observe(&map, &pose, &profile, LightingCondition::dl300(), &sensor, 42).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn random_map_is_closed_and_connected() {
        for seed in 0..5 {
            let map = GridMap::generate_random(24, 18, 0.08, seed);
            assert!(map.border_is_closed());
            assert!(map.free_cells().len() > 10);
        }
    }
}
