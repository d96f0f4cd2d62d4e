//! Command-line workflow: dataset generation, batch evaluation, trace
//! replay, and cross-run reporting.
//!
//! Configuration precedence is CLI flag > `VLNSIM_*` environment variable >
//! config file (`key = value` lines) > built-in default. Seeds are
//! mandatory: there is no wall-clock fallback, so every run is reproducible
//! by construction.

use crate::bench::{
    build_policy, compute_metrics, format_table, run_episode, sample_episodes, AggregateMetrics,
    Episode, EpisodeTrace, GenConfig, RunParams, TraceEvent, TraceEventKind, POLICY_NAMES,
};
use crate::control::ControllerKind;
use crate::embodiment::{default_profile, ProfileKind};
use crate::rng::{derive_seed, fnv1a64};
use crate::semnav::{execute_program, AffinityTable, SemNavConfig};
use crate::world::{load_map, GridMap, LightingCondition};
use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

pub const SCHEMA_VERSION: u32 = 1;
const ENV_PREFIX: &str = "VLNSIM_";

#[derive(Parser, Debug)]
#[command(name = "vlnsim", version, about = "Grid-world navigation benchmark workflow")]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Sample an episode dataset from a map.
    Generate(GenerateArgs),
    /// Evaluate a policy over a dataset.
    Eval(EvalArgs),
    /// Render a saved trace as ASCII frames.
    Replay(ReplayArgs),
    /// Merge aggregate results into one comparison table.
    Report(ReportArgs),
}

#[derive(Args, Debug, Default, Clone)]
struct CommonArgs {
    /// Map file path.
    #[arg(long)]
    map: Option<PathBuf>,
    /// Config file with `key = value` lines.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed (required here, in the config file, or via VLNSIM_SEED).
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct GenerateArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Number of episodes to sample.
    #[arg(long)]
    episodes: Option<usize>,
    /// Minimum / maximum reference path length, meters.
    #[arg(long)]
    min_len: Option<f64>,
    #[arg(long)]
    max_len: Option<f64>,
    /// Attach template subgoal programs to the episodes.
    #[arg(long)]
    with_subgoals: bool,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Dataset file produced by `generate`.
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Policy name (see `POLICY_NAMES`).
    #[arg(long)]
    policy: Option<String>,
    /// Controller: flash | speed | path.
    #[arg(long)]
    controller: Option<String>,
    /// Profile: humanoid | quadruped | wheeled | flash.
    #[arg(long)]
    profile: Option<String>,
    /// Lighting: dl5000 | dl300 | cl.
    #[arg(long)]
    lighting: Option<String>,
    #[arg(long)]
    max_steps: Option<usize>,
    #[arg(long)]
    success_radius: Option<f64>,
    /// Parallel episode workers.
    #[arg(long)]
    workers: Option<usize>,
    /// Key-value block overriding individual profile fields.
    #[arg(long)]
    profile_file: Option<PathBuf>,
    /// Write per-episode trace files under <out>/traces/.
    #[arg(long)]
    save_traces: bool,
}

#[derive(Args, Debug)]
struct ReplayArgs {
    /// Trace file written by `eval --save-traces`.
    trace: PathBuf,
}

#[derive(Args, Debug)]
struct ReportArgs {
    /// Aggregate JSON files from previous eval runs.
    results: Vec<PathBuf>,
}

/// Fully resolved evaluation configuration.
#[derive(Debug, Clone, Serialize)]
pub struct RunConfig {
    pub map: PathBuf,
    pub dataset: PathBuf,
    pub policy: String,
    pub controller: ControllerKind,
    pub profile: ProfileKind,
    pub lighting: LightingCondition,
    pub seed: u64,
    pub max_steps: usize,
    pub success_radius: f64,
    pub workers: usize,
    pub out: PathBuf,
    pub save_traces: bool,
    /// Per-field profile overrides applied on top of the profile defaults.
    pub profile_overrides: BTreeMap<String, String>,
}

/// Key-value config file: `key = value`, `#` comments.
fn parse_config_file(path: &Path) -> Result<BTreeMap<String, String>> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("cannot read config file {}", path.display()))?;
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| anyhow!("config line {} is not `key = value`: {raw:?}", i + 1))?;
        out.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(out)
}

/// Resolve one setting: flag > environment > config file > default.
fn resolve<T, F>(
    flag: Option<T>,
    key: &str,
    file: &BTreeMap<String, String>,
    default: Option<T>,
    parse: F,
) -> Result<T>
where
    F: Fn(&str) -> Result<T>,
{
    if let Some(v) = flag {
        return Ok(v);
    }
    let env_key = format!("{ENV_PREFIX}{}", key.to_uppercase());
    if let Ok(v) = std::env::var(&env_key) {
        return parse(&v).with_context(|| format!("bad {env_key}"));
    }
    if let Some(v) = file.get(key) {
        return parse(v).with_context(|| format!("bad config key {key}"));
    }
    default.ok_or_else(|| anyhow!("missing required setting `{key}` (flag, {env_key}, or config file)"))
}

fn load_map_file(path: &Path) -> Result<GridMap> {
    let text =
        fs::read_to_string(path).with_context(|| format!("cannot read map {}", path.display()))?;
    load_map(&text).with_context(|| format!("invalid map {}", path.display()))
}

fn scene_id_of(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "scene".into())
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    schema_version: u32,
    scene_id: String,
    seed: u64,
    config_hash: String,
    episode_count: usize,
    counts_per_split: BTreeMap<String, usize>,
}

/// Sample a dataset and write `dataset.json` + `manifest.json`.
pub fn cmd_generate(
    map_path: &Path,
    out_dir: &Path,
    episodes: usize,
    gen: &GenConfig,
    seed: u64,
) -> Result<()> {
    let map = load_map_file(map_path)?;
    let scene = scene_id_of(map_path);
    let eps = sample_episodes(&map, episodes, &scene, gen, seed)?;

    fs::create_dir_all(out_dir)
        .with_context(|| format!("cannot create {}", out_dir.display()))?;
    let dataset_json = serde_json::to_string_pretty(&eps)?;
    fs::write(out_dir.join("dataset.json"), &dataset_json)?;

    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for e in &eps {
        *counts.entry(format!("{:?}", e.split).to_lowercase()).or_default() += 1;
    }
    let config_blob = format!("{gen:?}|episodes={episodes}|map={scene}");
    let manifest = Manifest {
        schema_version: SCHEMA_VERSION,
        scene_id: scene,
        seed,
        config_hash: format!("{:016x}", fnv1a64(config_blob.as_bytes())),
        episode_count: eps.len(),
        counts_per_split: counts,
    };
    fs::write(out_dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
    eprintln!(
        "generated {} episodes -> {}",
        eps.len(),
        out_dir.join("dataset.json").display()
    );
    Ok(())
}

/// Self-contained trace file: map text + episode + trace.
#[derive(Debug, Serialize, Deserialize)]
pub struct TraceFile {
    pub schema_version: u32,
    pub scene_id: String,
    pub map_text: String,
    pub episode: Episode,
    pub trace: EpisodeTrace,
}

/// Aggregate results file for one eval run.
#[derive(Debug, Serialize, Deserialize)]
pub struct ResultsFile {
    pub schema_version: u32,
    pub policy: String,
    pub profile: String,
    pub controller: String,
    pub lighting: String,
    pub seed: u64,
    pub success_radius: f64,
    pub max_steps: usize,
    pub metrics: AggregateMetrics,
}

fn lighting_name(l: &LightingCondition) -> &'static str {
    match l.kind {
        crate::world::LightingKind::Dl5000 => "dl5000",
        crate::world::LightingKind::Dl300 => "dl300",
        crate::world::LightingKind::Cl => "cl",
    }
}

/// Run every episode of the dataset under the configured policy and write
/// `results.csv`, `aggregate.json`, and `table.txt` (plus traces when
/// requested). Episode failures (falls, aborts) are data, not errors.
pub fn cmd_eval(config: &RunConfig) -> Result<()> {
    let map = load_map_file(&config.map)?;
    let episodes: Vec<Episode> = serde_json::from_str(
        &fs::read_to_string(&config.dataset)
            .with_context(|| format!("cannot read dataset {}", config.dataset.display()))?,
    )
    .context("dataset is not a JSON array of episodes")?;
    if !POLICY_NAMES.contains(&config.policy.as_str()) {
        bail!(
            "unknown policy {:?}; registered policies: {}",
            config.policy,
            POLICY_NAMES.join(", ")
        );
    }

    let mut profile = default_profile(config.profile);
    for (key, value) in &config.profile_overrides {
        profile
            .apply_override(key, value)
            .map_err(|e| anyhow!("profile override: {e}"))?;
    }
    let params = RunParams {
        max_steps: config.max_steps,
        success_radius: config.success_radius,
        ..RunParams::default()
    };
    let traces = run_batch(&map, &episodes, config, &profile, &params);

    let report = compute_metrics(&map, &episodes, &traces, config.success_radius)?;
    fs::create_dir_all(&config.out)?;

    // Per-episode CSV.
    let mut csv = String::from("episode_id,tl,ne,success,oracle_success,spl,fell,stuck,terminal\n");
    for m in &report.per_episode {
        csv.push_str(&format!(
            "{},{:.6},{:.6},{},{},{:.6},{},{},{}\n",
            m.episode_id,
            m.tl,
            m.ne,
            m.success as u8,
            m.oracle_success as u8,
            m.spl,
            m.fell as u8,
            m.stuck as u8,
            m.terminal
        ));
    }
    fs::write(config.out.join("results.csv"), &csv)?;

    let results = ResultsFile {
        schema_version: SCHEMA_VERSION,
        policy: config.policy.clone(),
        profile: config.profile.name().to_string(),
        controller: config.controller.name().to_string(),
        lighting: lighting_name(&config.lighting).to_string(),
        seed: config.seed,
        success_radius: config.success_radius,
        max_steps: config.max_steps,
        metrics: report.aggregate.clone(),
    };
    fs::write(config.out.join("aggregate.json"), serde_json::to_string_pretty(&results)?)?;

    let label = format!(
        "{}/{}/{}/{}",
        results.policy, results.profile, results.controller, results.lighting
    );
    let table = format_table(&[(label, &report.aggregate)]);
    fs::write(config.out.join("table.txt"), &table)?;
    eprint!("{table}");

    if config.save_traces {
        let traces_dir = config.out.join("traces");
        fs::create_dir_all(&traces_dir)?;
        let map_text = map.to_text();
        for (ep, trace) in episodes.iter().zip(&traces) {
            let tf = TraceFile {
                schema_version: SCHEMA_VERSION,
                scene_id: ep.scene_id.clone(),
                map_text: map_text.clone(),
                episode: ep.clone(),
                trace: trace.clone(),
            };
            fs::write(
                traces_dir.join(format!("ep_{:04}.json", ep.episode_id)),
                serde_json::to_string_pretty(&tf)?,
            )?;
        }
    }
    Ok(())
}

/// Run all episodes, splitting them across worker threads. Per-episode
/// seeds derive from the run seed and episode id, so results do not depend
/// on the worker count.
fn run_batch(
    map: &GridMap,
    episodes: &[Episode],
    config: &RunConfig,
    profile: &crate::embodiment::RobotProfile,
    params: &RunParams,
) -> Vec<EpisodeTrace> {
    let workers = config.workers.max(1).min(episodes.len().max(1));
    let weight_seed = derive_seed(config.seed, 0xfeed);
    let chunk = episodes.len().div_ceil(workers);
    let mut results: Vec<Option<EpisodeTrace>> = vec![None; episodes.len()];

    std::thread::scope(|scope| {
        let mut handles = Vec::new();
        for (w, slot_chunk) in results.chunks_mut(chunk).enumerate() {
            let lo = w * chunk;
            let config = &*config;
            handles.push(scope.spawn(move || {
                for (offset, slot) in slot_chunk.iter_mut().enumerate() {
                    let idx = lo + offset;
                    let ep = &episodes[idx];
                    let ep_seed = derive_seed(config.seed, ep.episode_id as u64);
                    let trace = if config.policy == "vlmaps" {
                        run_subgoal_episode(map, ep, config, profile, params, ep_seed)
                    } else {
                        let mut policy =
                            build_policy(&config.policy, weight_seed, config.success_radius)
                                .expect("policy name validated above");
                        run_episode(
                            map,
                            ep,
                            policy.as_mut(),
                            config.controller,
                            profile,
                            config.lighting,
                            params,
                            ep_seed,
                        )
                    };
                    *slot = Some(trace);
                }
            }));
        }
        for h in handles {
            h.join().expect("worker panicked");
        }
    });

    results.into_iter().map(|t| t.expect("all episodes ran")).collect()
}

/// Map-based pipeline: execute the episode's subgoal program.
fn run_subgoal_episode(
    map: &GridMap,
    episode: &Episode,
    config: &RunConfig,
    profile: &crate::embodiment::RobotProfile,
    params: &RunParams,
    seed: u64,
) -> EpisodeTrace {
    match &episode.subgoals {
        Some(program) => {
            execute_program(
                program,
                map,
                episode.start_pose(),
                profile,
                config.controller,
                config.lighting,
                &AffinityTable::default_table(),
                &SemNavConfig::default(),
                &params.control,
                &params.sensor,
                seed,
            )
            .trace
        }
        None => {
            let mut trace = EpisodeTrace::default();
            trace.poses.push(episode.start_pose());
            trace.events.push(TraceEvent {
                kind: TraceEventKind::Aborted,
                step: 0,
                reason: Some("episode carries no subgoal program".into()),
            });
            trace
        }
    }
}

/// Render a saved trace as ASCII frames on stdout.
pub fn cmd_replay(trace_path: &Path) -> Result<()> {
    let tf: TraceFile = serde_json::from_str(
        &fs::read_to_string(trace_path)
            .with_context(|| format!("cannot read trace {}", trace_path.display()))?,
    )
    .context("corrupt trace file")?;
    if tf.schema_version != SCHEMA_VERSION {
        bail!("trace schema version {} is not supported", tf.schema_version);
    }
    let map = load_map(&tf.map_text).context("corrupt embedded map")?;
    let mut out = String::new();
    out.push_str(&format!(
        "episode {} on {} | instruction: {}\n",
        tf.episode.episode_id, tf.scene_id, tf.episode.instruction_text
    ));
    for (i, pose) in tf.trace.poses.iter().enumerate() {
        out.push_str(&format!("\n-- step {i}"));
        if let Some(action) = tf.trace.actions.get(i.wrapping_sub(1)) {
            out.push_str(&format!(" | action {action:?}"));
        }
        for e in tf.trace.events.iter().filter(|e| e.step == i && e.kind.is_terminal()) {
            out.push_str(&format!(" | {}", e.kind.name().to_uppercase()));
            if let Some(r) = &e.reason {
                out.push_str(&format!(" ({r})"));
            }
        }
        out.push('\n');
        out.push_str(&render_frame(&map, pose, tf.episode.goal));
    }
    out.push_str(&format!("\nTL {:.3} m over {} poses\n", tf.trace.trajectory_length(), tf.trace.poses.len()));
    print!("{out}");
    Ok(())
}

fn render_frame(map: &GridMap, pose: &crate::embodiment::PoseState, goal: crate::geom::Point) -> String {
    let agent_cell = map.cell_at(pose.position());
    let goal_cell = map.cell_at(goal);
    let glyph = {
        let deg = pose.heading.to_degrees();
        if (-45.0..45.0).contains(&deg) {
            '>'
        } else if (45.0..135.0).contains(&deg) {
            '^'
        } else if (-135.0..-45.0).contains(&deg) {
            'v'
        } else {
            '<'
        }
    };
    let mut out = String::new();
    for y in 0..map.height() {
        for x in 0..map.width() {
            let c = crate::geom::Cell::new(x, y);
            let ch = if agent_cell == Some(c) {
                glyph
            } else if goal_cell == Some(c) {
                'G'
            } else {
                match map.kind(c) {
                    crate::world::CellKind::Obstacle => '#',
                    crate::world::CellKind::Hole => 'H',
                    crate::world::CellKind::Free => {
                        if map.label(c) != 0 {
                            'o'
                        } else {
                            '.'
                        }
                    }
                }
            };
            out.push(ch);
        }
        out.push('\n');
    }
    out
}

/// Merge aggregate files into one table keyed by
/// (policy, profile, controller, lighting).
pub fn cmd_report(paths: &[PathBuf]) -> Result<String> {
    if paths.is_empty() {
        bail!("report needs at least one aggregate.json file");
    }
    let mut rows = Vec::new();
    for p in paths {
        let rf: ResultsFile = serde_json::from_str(
            &fs::read_to_string(p).with_context(|| format!("cannot read {}", p.display()))?,
        )
        .with_context(|| format!("{} is not an aggregate results file", p.display()))?;
        if rf.schema_version != SCHEMA_VERSION {
            bail!(
                "{}: schema version {} does not match {}",
                p.display(),
                rf.schema_version,
                SCHEMA_VERSION
            );
        }
        rows.push(rf);
    }
    rows.sort_by(|a, b| {
        (&a.policy, &a.profile, &a.controller, &a.lighting).cmp(&(
            &b.policy,
            &b.profile,
            &b.controller,
            &b.lighting,
        ))
    });
    let table_rows: Vec<(String, &AggregateMetrics)> = rows
        .iter()
        .map(|r| {
            (
                format!("{}/{}/{}/{}", r.policy, r.profile, r.controller, r.lighting),
                &r.metrics,
            )
        })
        .collect();
    Ok(format_table(&table_rows))
}

/// Entry point used by the binary.
pub fn run() -> Result<()> {
    let cli = Cli::parse();
    dispatch(cli)
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate(args) => {
            let file = match &args.common.config {
                Some(p) => parse_config_file(p)?,
                None => BTreeMap::new(),
            };
            let map = resolve(args.common.map, "map", &file, None, |s| Ok(PathBuf::from(s)))?;
            let out = resolve(args.common.out, "out", &file, None, |s| Ok(PathBuf::from(s)))?;
            let seed = resolve(args.common.seed, "seed", &file, None, |s| Ok(s.parse()?))?;
            let episodes =
                resolve(args.episodes, "episodes", &file, Some(100), |s| Ok(s.parse()?))?;
            let mut gen = GenConfig::default();
            gen.min_len = resolve(args.min_len, "min_len", &file, Some(gen.min_len), |s| {
                Ok(s.parse()?)
            })?;
            gen.max_len = resolve(args.max_len, "max_len", &file, Some(gen.max_len), |s| {
                Ok(s.parse()?)
            })?;
            gen.with_subgoals = args.with_subgoals
                || file.get("with_subgoals").map(|v| v == "true").unwrap_or(false);
            eprintln!(
                "generate: map={} out={} seed={seed} episodes={episodes} len=[{}, {}] subgoals={}",
                map.display(),
                out.display(),
                gen.min_len,
                gen.max_len,
                gen.with_subgoals
            );
            cmd_generate(&map, &out, episodes, &gen, seed)
        }
        Command::Eval(args) => {
            let file = match &args.common.config {
                Some(p) => parse_config_file(p)?,
                None => BTreeMap::new(),
            };
            let config = RunConfig {
                map: resolve(args.common.map, "map", &file, None, |s| Ok(PathBuf::from(s)))?,
                dataset: resolve(args.dataset, "dataset", &file, None, |s| Ok(PathBuf::from(s)))?,
                policy: resolve(args.policy, "policy", &file, None, |s| Ok(s.to_string()))?,
                controller: resolve(args.controller, "controller", &file, Some("speed".into()), |s| {
                    Ok(s.to_string())
                })
                .and_then(|s| {
                    ControllerKind::by_name(&s).ok_or_else(|| anyhow!("unknown controller {s:?}"))
                })?,
                profile: resolve(args.profile, "profile", &file, Some("humanoid".into()), |s| {
                    Ok(s.to_string())
                })
                .and_then(|s| {
                    ProfileKind::by_name(&s).ok_or_else(|| anyhow!("unknown profile {s:?}"))
                })?,
                lighting: resolve(args.lighting, "lighting", &file, Some("dl5000".into()), |s| {
                    Ok(s.to_string())
                })
                .and_then(|s| {
                    LightingCondition::by_name(&s).ok_or_else(|| anyhow!("unknown lighting {s:?}"))
                })?,
                seed: resolve(args.common.seed, "seed", &file, None, |s| Ok(s.parse()?))?,
                max_steps: resolve(args.max_steps, "max_steps", &file, Some(200), |s| {
                    Ok(s.parse()?)
                })?,
                success_radius: resolve(
                    args.success_radius,
                    "success_radius",
                    &file,
                    Some(3.0),
                    |s| Ok(s.parse()?),
                )?,
                workers: resolve(args.workers, "workers", &file, Some(1), |s| Ok(s.parse()?))?,
                out: resolve(args.common.out, "out", &file, None, |s| Ok(PathBuf::from(s)))?,
                save_traces: args.save_traces
                    || file.get("save_traces").map(|v| v == "true").unwrap_or(false),
                profile_overrides: match &args.profile_file {
                    Some(p) => parse_config_file(p)?,
                    None => BTreeMap::new(),
                },
            };
            eprintln!(
                "eval: policy={} profile={} controller={} lighting={} seed={} workers={}",
                config.policy,
                config.profile.name(),
                config.controller.name(),
                lighting_name(&config.lighting),
                config.seed,
                config.workers
            );
            cmd_eval(&config)
        }
        Command::Replay(args) => cmd_replay(&args.trace),
        Command::Report(args) => {
            let table = cmd_report(&args.results)?;
            print!("{table}");
            Ok(())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_file_parses_and_ignores_comments() {
        let dir = std::env::temp_dir().join("vlnsim_cfg_test");
        fs::create_dir_all(&dir).unwrap();
        let p = dir.join("run.cfg");
        fs::write(&p, "# run settings\nseed = 42\nmap= maps/demo.map # inline\n\n").unwrap();
        let cfg = parse_config_file(&p).unwrap();
        assert_eq!(cfg.get("seed").map(String::as_str), Some("42"));
        assert_eq!(cfg.get("map").map(String::as_str), Some("maps/demo.map"));
    }

    #[test]
    fn resolve_precedence_flag_over_file() {
        let mut file = BTreeMap::new();
        file.insert("workers".to_string(), "8".to_string());
        let v = resolve(Some(2usize), "workers", &file, Some(1), |s| Ok(s.parse()?)).unwrap();
        assert_eq!(v, 2);
        let v = resolve(None, "workers", &file, Some(1), |s| Ok(s.parse::<usize>()?)).unwrap();
        assert_eq!(v, 8);
    }

    #[test]
    fn missing_seed_is_an_error() {
        let file = BTreeMap::new();
        let r = resolve::<u64, _>(None, "seed", &file, None, |s| Ok(s.parse()?));
        assert!(r.is_err());
    }
}
