//! Policy interface and reference forward passes.
//!
//! The learned baselines are architecture replicas with seeded frozen
//! weights: a single-GRU classifier (Seq2Seq-style) and a two-GRU
//! cross-modal attention model (CMA-style). Pretrained encoders are replaced
//! by deterministic hash/histogram featurizers of fixed dimension, so the
//! information flow and shapes are preserved without any model assets.
//! Random and shortest-path-oracle policies bound the benchmark from below
//! and above.

use crate::control::DiscreteAction;
use crate::embodiment::PoseState;
use crate::geom::{angle_diff, Point};
use crate::plan::{astar, dilate_with_blocking, geodesic_distance, PlanCosts, PlanError};
use crate::rng::{fnv1a64, rng_from_seed, splitmix64, unit_from_hash};
use crate::world::{GridMap, Observation};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("weight blob is malformed: {0}")]
    BadBlob(String),
    #[error(transparent)]
    Plan(#[from] PlanError),
}

/// Dense row-major matrix. Small enough that hand-rolled loops beat pulling
/// in a linear algebra stack.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, |v| v.len());
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            assert_eq!(row.len(), c, "ragged matrix rows");
            data.extend(row);
        }
        Self { rows: r, cols: c, data }
    }

    pub fn seeded(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Self {
        let scale = 1.0 / (cols.max(1) as f64).sqrt();
        let data = (0..rows * cols).map(|_| rng.gen_range(-scale..=scale)).collect();
        Self { rows, cols, data }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn matvec(&self, x: &[f64]) -> Result<Vec<f64>, PolicyError> {
        if x.len() != self.cols {
            return Err(PolicyError::DimensionMismatch(format!(
                "matvec: {}x{} by {}",
                self.rows,
                self.cols,
                x.len()
            )));
        }
        Ok((0..self.rows)
            .map(|i| self.row(i).iter().zip(x).map(|(a, b)| a * b).sum())
            .collect())
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Softmax over a logit slice; numerically shifted by the max.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| (l - m).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Weights of one GRU cell.
#[derive(Debug, Clone, PartialEq)]
pub struct GruWeights {
    pub w_z: Matrix,
    pub u_z: Matrix,
    pub b_z: Vec<f64>,
    pub w_r: Matrix,
    pub u_r: Matrix,
    pub b_r: Vec<f64>,
    pub w_n: Matrix,
    pub u_n: Matrix,
    pub b_n: Vec<f64>,
}

impl GruWeights {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        Self {
            w_z: Matrix::zeros(hidden, input),
            u_z: Matrix::zeros(hidden, hidden),
            b_z: vec![0.0; hidden],
            w_r: Matrix::zeros(hidden, input),
            u_r: Matrix::zeros(hidden, hidden),
            b_r: vec![0.0; hidden],
            w_n: Matrix::zeros(hidden, input),
            u_n: Matrix::zeros(hidden, hidden),
            b_n: vec![0.0; hidden],
        }
    }

    pub fn seeded(rng: &mut ChaCha8Rng, input: usize, hidden: usize) -> Self {
        Self {
            w_z: Matrix::seeded(rng, hidden, input),
            u_z: Matrix::seeded(rng, hidden, hidden),
            b_z: vec![0.0; hidden],
            w_r: Matrix::seeded(rng, hidden, input),
            u_r: Matrix::seeded(rng, hidden, hidden),
            b_r: vec![0.0; hidden],
            w_n: Matrix::seeded(rng, hidden, input),
            u_n: Matrix::seeded(rng, hidden, hidden),
            b_n: vec![0.0; hidden],
        }
    }

    pub fn hidden(&self) -> usize {
        self.w_z.rows
    }

    pub fn input(&self) -> usize {
        self.w_z.cols
    }
}

/// One GRU cell step.
///
/// z = sigmoid(Wz x + Uz h + bz), r = sigmoid(Wr x + Ur h + br),
/// n = tanh(Wn x + Un (r . h) + bn), h' = (1 - z) . n + z . h.
/// With all-zero weights this reduces to h' = 0.5 h.
pub fn gru_step(x: &[f64], h: &[f64], w: &GruWeights) -> Result<Vec<f64>, PolicyError> {
    if h.len() != w.hidden() {
        return Err(PolicyError::DimensionMismatch(format!(
            "gru hidden: got {}, want {}",
            h.len(),
            w.hidden()
        )));
    }
    let wz = w.w_z.matvec(x)?;
    let uz = w.u_z.matvec(h)?;
    let wr = w.w_r.matvec(x)?;
    let ur = w.u_r.matvec(h)?;
    let wn = w.w_n.matvec(x)?;

    let hidden = w.hidden();
    let mut rh = vec![0.0; hidden];
    for i in 0..hidden {
        let r = sigmoid(wr[i] + ur[i] + w.b_r[i]);
        rh[i] = r * h[i];
    }
    let un = w.u_n.matvec(&rh)?;

    let mut out = vec![0.0; hidden];
    for i in 0..hidden {
        let z = sigmoid(wz[i] + uz[i] + w.b_z[i]);
        let n = (wn[i] + un[i] + w.b_n[i]).tanh();
        out[i] = (1.0 - z) * n + z * h[i];
    }
    Ok(out)
}

/// Scaled dot-product attention: softmax(q K^T / sqrt(d)) V.
///
/// Weights sum to one; a single key/value row passes through unchanged.
pub fn scaled_dot_attention(q: &[f64], keys: &Matrix, values: &Matrix) -> Result<Vec<f64>, PolicyError> {
    if keys.rows != values.rows {
        return Err(PolicyError::DimensionMismatch(format!(
            "attention: {} keys vs {} values",
            keys.rows, values.rows
        )));
    }
    if keys.rows == 0 {
        return Err(PolicyError::DimensionMismatch("attention over zero rows".into()));
    }
    if q.len() != keys.cols {
        return Err(PolicyError::DimensionMismatch(format!(
            "attention query dim {} vs key dim {}",
            q.len(),
            keys.cols
        )));
    }
    let scale = 1.0 / (keys.cols as f64).sqrt();
    let logits: Vec<f64> = (0..keys.rows).map(|i| dot(q, keys.row(i)) * scale).collect();
    let weights = softmax(&logits);
    let mut out = vec![0.0; values.cols];
    for (i, w) in weights.iter().enumerate() {
        for (o, v) in out.iter_mut().zip(values.row(i)) {
            *o += w * v;
        }
    }
    Ok(out)
}

/// Attention weights only, for diagnostics and tests.
pub fn attention_weights(q: &[f64], keys: &Matrix) -> Result<Vec<f64>, PolicyError> {
    if q.len() != keys.cols || keys.rows == 0 {
        return Err(PolicyError::DimensionMismatch("attention weights".into()));
    }
    let scale = 1.0 / (keys.cols as f64).sqrt();
    let logits: Vec<f64> = (0..keys.rows).map(|i| dot(q, keys.row(i)) * scale).collect();
    Ok(softmax(&logits))
}

/// Feature dimensions shared by the learned baselines.
pub const VISUAL_DIM: usize = 32;
pub const DEPTH_DIM: usize = 16;
pub const TOKEN_DIM: usize = 32;
pub const ACTION_DIM: usize = 32;
/// Number of slots visual features reserve for hashed semantic scores.
const VISUAL_SEMANTIC_SLOTS: usize = 24;

/// Deterministic featurization of an observation + instruction + previous
/// action, standing in for pretrained visual/text encoders.
#[derive(Debug, Clone)]
pub struct FeatureBundle {
    /// Visual feature: hashed semantic scores plus global context.
    pub visual: Vec<f64>,
    /// Depth histogram over range bins.
    pub depth: Vec<f64>,
    /// Per-token instruction features, one row per token.
    pub instruction_tokens: Matrix,
    /// Mean-pooled instruction feature.
    pub instruction_pooled: Vec<f64>,
    /// Previous-action embedding.
    pub prev_action: Vec<f64>,
}

/// Hash-derived embedding row for a token; stable across platforms.
fn token_embedding(token: &str) -> Vec<f64> {
    let h = fnv1a64(token.as_bytes());
    (0..TOKEN_DIM)
        .map(|j| unit_from_hash(splitmix64(h ^ (j as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15))))
        .collect()
}

/// Tokenize and embed an instruction. An empty instruction yields a single
/// all-zero token so attention stays well-defined.
pub fn embed_instruction(text: &str) -> Matrix {
    let tokens: Vec<&str> = text
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .collect();
    if tokens.is_empty() {
        return Matrix::zeros(1, TOKEN_DIM);
    }
    Matrix::from_rows(
        tokens
            .iter()
            .map(|t| token_embedding(&t.to_lowercase()))
            .collect(),
    )
}

/// Previous-action embedding: a 32-dim block one-hot.
pub fn action_embedding(prev: Option<&DiscreteAction>) -> Vec<f64> {
    let mut out = vec![0.0; ACTION_DIM];
    if let Some(a) = prev {
        let idx = match a {
            DiscreteAction::Stop => 0,
            DiscreteAction::Forward(_) => 1,
            DiscreteAction::TurnLeft(_) => 2,
            DiscreteAction::TurnRight(_) => 3,
        };
        let block = ACTION_DIM / 4;
        for v in out.iter_mut().skip(idx * block).take(block) {
            *v = 1.0;
        }
    }
    out
}

/// Visual feature vector from semantic scores and global depth context.
pub fn visual_features(obs: &Observation) -> Vec<f64> {
    let mut v = vec![0.0_f64; VISUAL_DIM];
    for l in &obs.visible_labels {
        let slot = (fnv1a64(&l.label_id.to_le_bytes()) % VISUAL_SEMANTIC_SLOTS as u64) as usize;
        v[slot] = v[slot].max(l.score);
    }
    let n = obs.depth_rays.len().max(1) as f64;
    let mean_depth: f64 = obs.depth_rays.iter().sum::<f64>() / n;
    let min_depth = obs.depth_rays.iter().cloned().fold(obs.max_range, f64::min);
    v[VISUAL_SEMANTIC_SLOTS] = mean_depth / obs.max_range;
    v[VISUAL_SEMANTIC_SLOTS + 1] = min_depth / obs.max_range;
    v[VISUAL_SEMANTIC_SLOTS + 2] = obs.camera_height / 3.0;
    v[VISUAL_SEMANTIC_SLOTS + 3] = obs.visible_labels.len() as f64 / 16.0;
    v[VISUAL_SEMANTIC_SLOTS + 4] = obs
        .visible_labels
        .iter()
        .map(|l| l.score)
        .fold(0.0, f64::max);
    v
}

/// Depth histogram over equal range bins, normalized by ray count.
pub fn depth_features(obs: &Observation) -> Vec<f64> {
    let mut d = vec![0.0; DEPTH_DIM];
    if obs.depth_rays.is_empty() {
        return d;
    }
    for &r in &obs.depth_rays {
        let bin = ((r / obs.max_range) * DEPTH_DIM as f64).min(DEPTH_DIM as f64 - 1.0) as usize;
        d[bin] += 1.0;
    }
    let n = obs.depth_rays.len() as f64;
    for v in &mut d {
        *v /= n;
    }
    d
}

impl FeatureBundle {
    pub fn build(obs: &Observation, instruction: &str, prev: Option<&DiscreteAction>) -> Self {
        let tokens = embed_instruction(instruction);
        let mut pooled = vec![0.0; TOKEN_DIM];
        for i in 0..tokens.rows {
            for (p, t) in pooled.iter_mut().zip(tokens.row(i)) {
                *p += t;
            }
        }
        for p in &mut pooled {
            *p /= tokens.rows as f64;
        }
        Self {
            visual: visual_features(obs),
            depth: depth_features(obs),
            instruction_tokens: tokens,
            instruction_pooled: pooled,
            prev_action: action_embedding(prev),
        }
    }
}

/// Action order used by the classification heads.
pub const ACTION_ORDER: [&str; 4] = ["stop", "forward", "turn_left", "turn_right"];

pub fn action_from_index(idx: usize) -> DiscreteAction {
    match idx {
        0 => DiscreteAction::Stop,
        1 => DiscreteAction::forward(),
        2 => DiscreteAction::turn_left(),
        _ => DiscreteAction::turn_right(),
    }
}

fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

const HIDDEN: usize = 32;

/// Seeded frozen weights for the single-GRU classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct Seq2SeqWeights {
    pub gru: GruWeights,
    pub w_a: Matrix,
    pub b_a: Vec<f64>,
    pub init_seed: u64,
}

impl Seq2SeqWeights {
    pub fn seeded(seed: u64) -> Self {
        let mut rng = rng_from_seed(seed);
        let input = VISUAL_DIM + DEPTH_DIM + TOKEN_DIM;
        Self {
            gru: GruWeights::seeded(&mut rng, input, HIDDEN),
            w_a: Matrix::seeded(&mut rng, 4, HIDDEN),
            b_a: vec![0.0; 4],
            init_seed: seed,
        }
    }
}

/// One classifier step: GRU over [visual, depth, pooled instruction], then a
/// linear action head. Returns the action, the new hidden state, and the
/// action distribution.
pub fn seq2seq_step(
    features: &FeatureBundle,
    h: &[f64],
    weights: &Seq2SeqWeights,
) -> Result<(DiscreteAction, Vec<f64>, Vec<f64>), PolicyError> {
    let mut x = Vec::with_capacity(VISUAL_DIM + DEPTH_DIM + TOKEN_DIM);
    x.extend_from_slice(&features.visual);
    x.extend_from_slice(&features.depth);
    x.extend_from_slice(&features.instruction_pooled);
    let h1 = gru_step(&x, h, &weights.gru)?;
    let mut logits = weights.w_a.matvec(&h1)?;
    for (l, b) in logits.iter_mut().zip(&weights.b_a) {
        *l += b;
    }
    let probs = softmax(&logits);
    Ok((action_from_index(argmax(&probs)), h1, probs))
}

/// Seeded frozen weights for the cross-modal attention model.
#[derive(Debug, Clone, PartialEq)]
pub struct CmaWeights {
    pub gru1: GruWeights,
    /// Projects the first hidden state into the instruction key space.
    pub p_inst: Matrix,
    /// Projects the first hidden state into the visual patch key space.
    pub p_vis: Matrix,
    /// Projects the first hidden state into the depth patch key space.
    pub p_dep: Matrix,
    pub gru2: GruWeights,
    pub w_a: Matrix,
    pub b_a: Vec<f64>,
    pub init_seed: u64,
}

/// Visual features are attended as 8 patches of 4 dims; depth as 4 of 4.
const VIS_PATCH: usize = 4;
const DEP_PATCH: usize = 4;

fn patches(v: &[f64], patch: usize) -> Matrix {
    let rows = v.len() / patch;
    Matrix { rows, cols: patch, data: v.to_vec() }
}

impl CmaWeights {
    pub fn seeded(seed: u64) -> Self {
        let mut rng = rng_from_seed(seed);
        let in1 = VISUAL_DIM + DEPTH_DIM + ACTION_DIM;
        let in2 = TOKEN_DIM + VIS_PATCH + DEP_PATCH + ACTION_DIM + HIDDEN;
        Self {
            gru1: GruWeights::seeded(&mut rng, in1, HIDDEN),
            p_inst: Matrix::seeded(&mut rng, TOKEN_DIM, HIDDEN),
            p_vis: Matrix::seeded(&mut rng, VIS_PATCH, HIDDEN),
            p_dep: Matrix::seeded(&mut rng, DEP_PATCH, HIDDEN),
            gru2: GruWeights::seeded(&mut rng, in2, HIDDEN),
            w_a: Matrix::seeded(&mut rng, 4, HIDDEN),
            b_a: vec![0.0; 4],
            init_seed: seed,
        }
    }
}

/// One cross-modal step: first GRU tracks observations, its state attends
/// over instruction tokens and visual/depth patches, and a second GRU over
/// the attended features picks the action.
#[allow(clippy::type_complexity)]
pub fn cma_step(
    features: &FeatureBundle,
    hidden: (&[f64], &[f64]),
    weights: &CmaWeights,
) -> Result<(DiscreteAction, (Vec<f64>, Vec<f64>), Vec<f64>), PolicyError> {
    let (h1, h2) = hidden;
    let mut x1 = Vec::with_capacity(VISUAL_DIM + DEPTH_DIM + ACTION_DIM);
    x1.extend_from_slice(&features.visual);
    x1.extend_from_slice(&features.depth);
    x1.extend_from_slice(&features.prev_action);
    let h1n = gru_step(&x1, h1, &weights.gru1)?;

    let q_inst = weights.p_inst.matvec(&h1n)?;
    let attended_inst =
        scaled_dot_attention(&q_inst, &features.instruction_tokens, &features.instruction_tokens)?;
    let vis = patches(&features.visual, VIS_PATCH);
    let q_vis = weights.p_vis.matvec(&h1n)?;
    let attended_vis = scaled_dot_attention(&q_vis, &vis, &vis)?;
    let dep = patches(&features.depth, DEP_PATCH);
    let q_dep = weights.p_dep.matvec(&h1n)?;
    let attended_dep = scaled_dot_attention(&q_dep, &dep, &dep)?;

    let mut x2 = Vec::with_capacity(TOKEN_DIM + VIS_PATCH + DEP_PATCH + ACTION_DIM + HIDDEN);
    x2.extend_from_slice(&attended_inst);
    x2.extend_from_slice(&attended_vis);
    x2.extend_from_slice(&attended_dep);
    x2.extend_from_slice(&features.prev_action);
    x2.extend_from_slice(&h1n);
    let h2n = gru_step(&x2, h2, &weights.gru2)?;

    let mut logits = weights.w_a.matvec(&h2n)?;
    for (l, b) in logits.iter_mut().zip(&weights.b_a) {
        *l += b;
    }
    let probs = softmax(&logits);
    Ok((action_from_index(argmax(&probs)), (h1n, h2n), probs))
}

/// Uniform action choice with a 2% stop probability per step.
pub fn random_policy_step(rng_seed: u64) -> DiscreteAction {
    let mut rng = rng_from_seed(rng_seed);
    if rng.gen::<f64>() < 0.02 {
        return DiscreteAction::Stop;
    }
    match rng.gen_range(0..3u8) {
        0 => DiscreteAction::forward(),
        1 => DiscreteAction::turn_left(),
        _ => DiscreteAction::turn_right(),
    }
}

/// Configuration for the shortest-path oracle policy.
#[derive(Debug, Clone, Copy)]
pub struct OracleConfig {
    pub success_radius: f64,
    /// Lookahead along the planned path, in cells.
    pub lookahead: usize,
    /// Turn when the bearing error exceeds this, degrees.
    pub turn_threshold_deg: f64,
    pub plan_costs: PlanCosts,
    /// Hard-blocking radius used for planning, meters.
    pub clearance: f64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            success_radius: 3.0,
            lookahead: 4,
            turn_threshold_deg: 8.0,
            plan_costs: PlanCosts::default(),
            clearance: 0.2,
        }
    }
}

/// One step of the privileged shortest-path follower: replans on the dilated
/// cost grid every call and emits Stop inside the success radius.
pub fn oracle_policy_step(
    goal: Point,
    pose: &PoseState,
    map: &GridMap,
    cfg: &OracleConfig,
) -> Result<DiscreteAction, PolicyError> {
    let here = pose.position();
    if let Ok(d) = geodesic_distance(map, here, goal) {
        if d <= cfg.success_radius {
            return Ok(DiscreteAction::Stop);
        }
    }
    let costs = dilate_with_blocking(map, cfg.clearance, cfg.clearance + 0.1, &cfg.plan_costs);
    let start = costs
        .nearest_unblocked(map.cell_at(here).ok_or(PlanError::OutOfBounds(here.x, here.y))?)
        .ok_or(PlanError::NoPath)?;
    let goal_cell = costs
        .nearest_unblocked(map.cell_at(goal).ok_or(PlanError::OutOfBounds(goal.x, goal.y))?)
        .ok_or(PlanError::NoPath)?;
    let path = astar(&costs, start, goal_cell)?;

    // Aim at a waypoint a few cells ahead to smooth the discrete motion.
    let target_cell = path[cfg.lookahead.min(path.len() - 1)];
    let target = target_cell.center(map.cell_size());
    let bearing_err = angle_diff(here.bearing_to(target), pose.heading);
    let threshold = cfg.turn_threshold_deg.to_radians();
    if bearing_err.abs() <= threshold {
        Ok(DiscreteAction::forward())
    } else if bearing_err > 0.0 {
        Ok(DiscreteAction::turn_left())
    } else {
        Ok(DiscreteAction::turn_right())
    }
}

/// Versioned binary container for weight tensors.
///
/// Layout: magic "VLNW", u32 version, u32 tensor count, then per tensor a
/// u32 name length + name bytes, u32 rows, u32 cols, and rows*cols little-
/// endian f64 values. Round-trips bit-exactly.
pub mod blob {
    use super::{Matrix, PolicyError};

    pub const MAGIC: &[u8; 4] = b"VLNW";
    pub const VERSION: u32 = 1;

    pub fn write(tensors: &[(&str, &Matrix)]) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
        for (name, m) in tensors {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(m.rows as u32).to_le_bytes());
            out.extend_from_slice(&(m.cols as u32).to_le_bytes());
            for v in &m.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn read(bytes: &[u8]) -> Result<Vec<(String, Matrix)>, PolicyError> {
        let mut at = 0usize;
        let take = |at: &mut usize, n: usize| -> Result<&[u8], PolicyError> {
            if *at + n > bytes.len() {
                return Err(PolicyError::BadBlob("truncated".into()));
            }
            let s = &bytes[*at..*at + n];
            *at += n;
            Ok(s)
        };
        let u32_at = |at: &mut usize| -> Result<u32, PolicyError> {
            Ok(u32::from_le_bytes(take(at, 4)?.try_into().unwrap()))
        };
        if take(&mut at, 4)? != MAGIC {
            return Err(PolicyError::BadBlob("bad magic".into()));
        }
        let version = u32_at(&mut at)?;
        if version != VERSION {
            return Err(PolicyError::BadBlob(format!("unsupported version {version}")));
        }
        let count = u32_at(&mut at)? as usize;
        let mut out = Vec::with_capacity(count);
        for _ in 0..count {
            let name_len = u32_at(&mut at)? as usize;
            let name = String::from_utf8(take(&mut at, name_len)?.to_vec())
                .map_err(|_| PolicyError::BadBlob("non-utf8 tensor name".into()))?;
            let rows = u32_at(&mut at)? as usize;
            let cols = u32_at(&mut at)? as usize;
            let mut data = Vec::with_capacity(rows * cols);
            for _ in 0..rows * cols {
                data.push(f64::from_le_bytes(take(&mut at, 8)?.try_into().unwrap()));
            }
            out.push((name, Matrix { rows, cols, data }));
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embodiment::{default_profile, ProfileKind};
    use crate::world::{load_map, observe, LightingCondition, SensorConfig};
    use proptest::prelude::*;
    use rand::Rng;

    fn test_observation() -> Observation {
        let map = load_map(
            "cellsize 0.1\nlabel t table\nlabel c chair\n##########\n#...t....#\n#........#\n#..c.....#\n##########\n",
        )
        .unwrap();
        let profile = default_profile(ProfileKind::Humanoid);
        let pose = PoseState::new(0.15, 0.25, 0.0);
        observe(&map, &pose, &profile, LightingCondition::dl5000(), &SensorConfig::default(), 7).unwrap()
    }

    #[test]
    fn zero_weight_gru_halves_hidden() {
        let w = GruWeights::zeros(4, 3);
        let h = vec![0.5, -0.8, 0.2];
        let out = gru_step(&[1.0, -2.0, 0.3, 0.9], &h, &w).unwrap();
        for (o, hi) in out.iter().zip(&h) {
            assert!((o - 0.5 * hi).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_everything_is_fixed_point() {
        let w = GruWeights::zeros(2, 2);
        let out = gru_step(&[0.0, 0.0], &[0.0, 0.0], &w).unwrap();
        assert_eq!(out, vec![0.0, 0.0]);
    }

    #[test]
    fn gru_matches_scalar_reference() {
        // Independent scalar-loop evaluation of the same gate algebra.
        let mut rng = rng_from_seed(123);
        let (input, hidden) = (8, 8);
        let w = GruWeights::seeded(&mut rng, input, hidden);
        let x: Vec<f64> = (0..input).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let h: Vec<f64> = (0..hidden).map(|_| rng.gen_range(-1.0..1.0)).collect();

        let got = gru_step(&x, &h, &w).unwrap();

        let dotr = |m: &Matrix, v: &[f64], i: usize| -> f64 {
            (0..m.cols).map(|j| m.data[i * m.cols + j] * v[j]).sum()
        };
        for i in 0..hidden {
            let z = sigmoid(dotr(&w.w_z, &x, i) + dotr(&w.u_z, &h, i) + w.b_z[i]);
            let r = sigmoid(dotr(&w.w_r, &x, i) + dotr(&w.u_r, &h, i) + w.b_r[i]);
            let rh: Vec<f64> = (0..hidden)
                .map(|j| {
                    let rj = sigmoid(dotr(&w.w_r, &x, j) + dotr(&w.u_r, &h, j) + w.b_r[j]);
                    rj * h[j]
                })
                .collect();
            let n = (dotr(&w.w_n, &x, i) + dotr(&w.u_n, &rh, i) + w.b_n[i]).tanh();
            let expected = (1.0 - z) * n + z * h[i];
            assert!((got[i] - expected).abs() < 1e-12, "component {i}");
            let _ = r;
        }
    }

    #[test]
    fn gru_dimension_mismatch() {
        let w = GruWeights::zeros(4, 3);
        assert!(gru_step(&[0.0; 3], &[0.0; 3], &w).is_err());
        assert!(gru_step(&[0.0; 4], &[0.0; 2], &w).is_err());
    }

    #[test]
    fn attention_singleton_passthrough() {
        let keys = Matrix::from_rows(vec![vec![0.3, -0.2]]);
        let values = Matrix::from_rows(vec![vec![5.0, 7.0, -1.0]]);
        let out = scaled_dot_attention(&[1.0, 1.0], &keys, &values).unwrap();
        assert_eq!(out, vec![5.0, 7.0, -1.0]);
        let w = attention_weights(&[1.0, 1.0], &keys).unwrap();
        assert_eq!(w, vec![1.0]);
    }

    #[test]
    fn attention_identical_keys_split_evenly() {
        let keys = Matrix::from_rows(vec![vec![0.4, 0.1], vec![0.4, 0.1]]);
        let w = attention_weights(&[1.0, -0.5], &keys).unwrap();
        assert!((w[0] - 0.5).abs() < 1e-15);
        assert!((w[1] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn attention_matches_direct_formula() {
        let mut rng = rng_from_seed(5);
        let keys = Matrix::seeded(&mut rng, 3, 4);
        let values = Matrix::seeded(&mut rng, 3, 6);
        let q: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let got = scaled_dot_attention(&q, &keys, &values).unwrap();

        let scale = 1.0 / 2.0; // 1/sqrt(4)
        let logits: Vec<f64> = (0..3).map(|i| dot(&q, keys.row(i)) * scale).collect();
        let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
        let z: f64 = exps.iter().sum();
        let mut expected = vec![0.0; 6];
        for (i, e) in exps.iter().enumerate() {
            for (j, slot) in expected.iter_mut().enumerate() {
                *slot += e / z * values.row(i)[j];
            }
        }
        for (g, e) in got.iter().zip(&expected) {
            assert!((g - e).abs() < 1e-12);
        }
    }

    #[test]
    fn seq2seq_argmax_contract() {
        let mut weights = Seq2SeqWeights::seeded(1);
        // Force the head to favor index 1 regardless of hidden state.
        weights.w_a = Matrix::zeros(4, HIDDEN);
        weights.b_a = vec![0.0, 5.0, 0.0, 0.0];
        let obs = test_observation();
        let f = FeatureBundle::build(&obs, "go forward", None);
        let (action, _, probs) = seq2seq_step(&f, &vec![0.0; HIDDEN], &weights).unwrap();
        assert_eq!(action, DiscreteAction::forward());
        assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn seq2seq_is_pure() {
        let weights = Seq2SeqWeights::seeded(9);
        let obs = test_observation();
        let f = FeatureBundle::build(&obs, "walk to the table then stop", None);
        let h = vec![0.1; HIDDEN];
        let a = seq2seq_step(&f, &h, &weights).unwrap();
        let b = seq2seq_step(&f, &h, &weights).unwrap();
        assert_eq!(a.0, b.0);
        assert_eq!(a.1, b.1);
    }

    #[test]
    fn seq2seq_probs_normalized_on_random_inputs() {
        let weights = Seq2SeqWeights::seeded(33);
        let obs = test_observation();
        for seed in 0..20 {
            let mut rng = rng_from_seed(seed);
            let f = FeatureBundle::build(&obs, "turn left at the chair", None);
            let h: Vec<f64> = (0..HIDDEN).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let (_, _, probs) = seq2seq_step(&f, &h, &weights).unwrap();
            assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn cma_singleton_instruction_attends_to_it() {
        let weights = CmaWeights::seeded(4);
        let obs = test_observation();
        let f = FeatureBundle::build(&obs, "stop", None);
        assert_eq!(f.instruction_tokens.rows, 1);
        let q = weights.p_inst.matvec(&vec![0.3; HIDDEN]).unwrap();
        let attended =
            scaled_dot_attention(&q, &f.instruction_tokens, &f.instruction_tokens).unwrap();
        assert_eq!(attended, f.instruction_tokens.row(0).to_vec());
    }

    #[test]
    fn cma_zeroed_second_gru_halves_h2() {
        let mut weights = CmaWeights::seeded(4);
        weights.gru2 = GruWeights::zeros(TOKEN_DIM + VIS_PATCH + DEP_PATCH + ACTION_DIM + HIDDEN, HIDDEN);
        let obs = test_observation();
        let f = FeatureBundle::build(&obs, "go to the sofa", None);
        let h1 = vec![0.0; HIDDEN];
        let h2: Vec<f64> = (0..HIDDEN).map(|i| (i as f64 / HIDDEN as f64) - 0.4).collect();
        let (_, (_, h2n), _) = cma_step(&f, (&h1, &h2), &weights).unwrap();
        for (n, o) in h2n.iter().zip(&h2) {
            assert!((n - 0.5 * o).abs() < 1e-12);
        }
    }

    #[test]
    fn cma_regression_locked_output() {
        // Golden values pinned from the first verified run (the GRU and
        // attention sub-operations are oracle-checked above); guards
        // against accidental reordering of the forward pass. The tolerance
        // absorbs libm ulp differences across platforms.
        let weights = CmaWeights::seeded(2024);
        let obs = test_observation();
        let f = FeatureBundle::build(&obs, "walk past the table and stop", Some(&DiscreteAction::forward()));
        let h1 = vec![0.0; HIDDEN];
        let h2 = vec![0.0; HIDDEN];
        let (action, (h1n, h2n), probs) = cma_step(&f, (&h1, &h2), &weights).unwrap();
        let again = cma_step(&f, (&h1, &h2), &weights).unwrap();
        assert_eq!(h1n, again.1 .0);
        assert_eq!(h2n, again.1 .1);
        assert_eq!(probs, again.2);

        assert_eq!(action, DiscreteAction::turn_right());
        let close = |a: f64, b: f64| (a - b).abs() < 1e-12;
        assert!(close(h1n.iter().sum::<f64>(), -1.095189326338525e-1));
        assert!(close(h2n.iter().sum::<f64>(), 1.116751288404933e-2));
        assert!(close(h1n[0], -1.533467400664954e-1));
        assert!(close(h1n[31], 3.724186700169872e-2));
        assert!(close(h2n[0], -5.106525607220125e-2));
        assert!(close(h2n[31], 5.314016868289139e-2));
        let golden = [
            2.493675942813217e-1,
            2.344471378292652e-1,
            2.536818364632505e-1,
            2.625034314261626e-1,
        ];
        for (p, g) in probs.iter().zip(golden) {
            assert!(close(*p, g));
        }
    }

    #[test]
    fn random_policy_reproducible_and_calibrated() {
        let a: Vec<_> = (0..50).map(random_policy_step).collect();
        let b: Vec<_> = (0..50).map(random_policy_step).collect();
        assert_eq!(a, b);

        let n = 100_000u64;
        let mut stops = 0u64;
        let mut counts = [0u64; 3];
        for seed in 0..n {
            match random_policy_step(splitmix64(seed)) {
                DiscreteAction::Stop => stops += 1,
                DiscreteAction::Forward(_) => counts[0] += 1,
                DiscreteAction::TurnLeft(_) => counts[1] += 1,
                DiscreteAction::TurnRight(_) => counts[2] += 1,
            }
        }
        let stop_rate = stops as f64 / n as f64;
        assert!((stop_rate - 0.02).abs() < 0.005, "stop rate {stop_rate}");
        // Chi-square over the three motion actions, 2 dof; 13.8 ~ p=0.001.
        let expected = (n - stops) as f64 / 3.0;
        let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
        assert!(chi2 < 13.8, "chi2 {chi2}");
    }

    #[test]
    fn oracle_stops_inside_radius() {
        let map = load_map(
            &("cellsize 0.1\n".to_string()
                + &(0..20)
                    .map(|y| {
                        (0..20)
                            .map(|x| if x == 0 || y == 0 || x == 19 || y == 19 { '#' } else { '.' })
                            .collect::<String>()
                    })
                    .collect::<Vec<_>>()
                    .join("\n")),
        )
        .unwrap();
        let cfg = OracleConfig { success_radius: 3.0, ..OracleConfig::default() };
        let pose = PoseState::new(0.5, 0.5, 0.0);
        let goal = Point::new(1.5, 1.5);
        assert_eq!(oracle_policy_step(goal, &pose, &map, &cfg).unwrap(), DiscreteAction::Stop);
    }

    #[test]
    fn oracle_moves_toward_far_goal() {
        let map = GridMap::generate_random(40, 40, 0.0, 1);
        let cfg = OracleConfig { success_radius: 0.5, ..OracleConfig::default() };
        // Goal straight ahead along +x.
        let pose = PoseState::new(0.5, 2.0, 0.0);
        let goal = Point::new(3.0, 2.0);
        assert_eq!(
            oracle_policy_step(goal, &pose, &map, &cfg).unwrap(),
            DiscreteAction::forward()
        );
        // Goal behind: should turn toward the smaller absolute heading error.
        let pose_back = PoseState::new(2.5, 2.0, 0.1);
        let goal_back = Point::new(0.5, 2.0);
        let a = oracle_policy_step(goal_back, &pose_back, &map, &cfg).unwrap();
        assert_eq!(a, DiscreteAction::turn_left());
    }

    #[test]
    fn weight_blob_round_trips() {
        let w = CmaWeights::seeded(77);
        let tensors = vec![
            ("gru1.w_z", &w.gru1.w_z),
            ("p_inst", &w.p_inst),
            ("w_a", &w.w_a),
        ];
        let bytes = blob::write(&tensors);
        let back = blob::read(&bytes).unwrap();
        assert_eq!(back.len(), 3);
        for ((name, m), (bname, bm)) in tensors.iter().zip(&back) {
            assert_eq!(name, bname);
            assert_eq!(*m, bm);
        }
    }

    #[test]
    fn weight_blob_rejects_garbage() {
        assert!(blob::read(b"nope").is_err());
        let w = Seq2SeqWeights::seeded(1);
        let mut bytes = blob::write(&[("w_a", &w.w_a)]);
        bytes.truncate(bytes.len() - 3);
        assert!(blob::read(&bytes).is_err());
    }

    proptest! {
        #[test]
        fn attention_weights_always_normalized(seed in 0u64..500) {
            let mut rng = rng_from_seed(seed);
            let rows = rng.gen_range(1..6);
            let keys = Matrix::seeded(&mut rng, rows, 4);
            let q: Vec<f64> = (0..4).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let w = attention_weights(&q, &keys).unwrap();
            let sum: f64 = w.iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-9);
            for wi in &w {
                prop_assert!((0.0..=1.0).contains(wi));
            }
        }

        #[test]
        fn gru_hidden_stays_bounded(seed in 0u64..50) {
            let mut rng = rng_from_seed(seed);
            let w = GruWeights::seeded(&mut rng, 6, 5);
            let mut h = vec![0.0; 5];
            for i in 0..10_000u64 {
                let x: Vec<f64> = (0..6)
                    .map(|j| unit_from_hash(splitmix64(seed ^ i.wrapping_mul(31) ^ j as u64)))
                    .collect();
                h = gru_step(&x, &h, &w).unwrap();
            }
            for v in &h {
                prop_assert!((-1.0..=1.0).contains(v), "hidden escaped [-1,1]: {}", v);
            }
        }

        #[test]
        fn argmax_invariant_under_logit_shift(seed in 0u64..200, shift in -10.0f64..10.0) {
            let mut rng = rng_from_seed(seed);
            let logits: Vec<f64> = (0..4).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let shifted: Vec<f64> = logits.iter().map(|l| l + shift).collect();
            prop_assert_eq!(argmax(&softmax(&logits)), argmax(&softmax(&shifted)));
        }
    }
}
