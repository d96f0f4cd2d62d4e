//! Desk-scale embodied navigation simulator and benchmark.
//!
//! The crate simulates instruction-following navigation on occupancy grid
//! worlds with physically-motivated failure modes (collisions, falls,
//! deadlocks), three controller families, a map-based navigator with
//! frontier exploration, recurrent and diffusion policy baselines, and the
//! full navigation metric suite (TL / NE / SR / OS / SPL / FR / StR).
//!
//! # Examples
//!
//! The `examples/` directory is the front door; each one demonstrates a
//! capability end to end:
//!
//! - **`observe_world`** - maps, ray-cast depth, lighting-degraded semantics
//! - **`drive_controllers`** - flash / speed / PID path controllers
//! - **`disturbance_and_falls`** - attitude disturbance, fall and stuck detection
//! - **`plan_route`** - obstacle dilation, A*, geodesic distance, frontiers
//! - **`semantic_exploration`** - semantic mapping, landmark indexing, room classification
//! - **`subgoal_navigation`** - structured subgoal programs on the map stack
//! - **`diffusion_sampling`** - noise schedules, denoising, stop gate, loss gradient
//! - **`policy_forward`** - GRU / cross-modal-attention forward passes, weight blobs
//! - **`run_benchmark`** - a full multi-policy evaluation with the metric table
//! - **`lighting_study`** - the same policy across lighting regimes
//! - **`dataset_workflow`** - generate / eval / replay / report through files
//!
//! ```bash
//! cargo run --example observe_world
//! cargo run --release --example run_benchmark
//! ```
//!
//! The `vlnsim` binary wraps the same workflow behind `generate`, `eval`,
//! `replay`, and `report` subcommands; see the README.

pub mod bench;
pub mod cli;
pub mod control;
pub mod embodiment;
pub mod geom;
pub mod plan;
pub mod policy;
pub mod rdp;
pub mod rng;
pub mod semnav;
pub mod world;

pub use bench::{
    compute_metrics, run_episode, sample_episodes, Episode, EpisodeTrace, MetricsReport, RunParams,
};
pub use control::{ControlConfig, ControllerKind, DiscreteAction, PidGains, VelocityCommand};
pub use embodiment::{default_profile, PoseState, ProfileKind, RobotProfile, StuckThresholds};
pub use geom::{Cell, Point};
pub use plan::{astar, dilate, geodesic_distance, CostGrid, PlanCosts};
pub use rdp::{make_schedule, sample_chunk, ActionChunk, NoiseSchedule};
pub use semnav::{execute_program, AffinityTable, SemanticMap, Subgoal, SubgoalProgram};
pub use world::{load_map, observe, ray_cast, GridMap, LightingCondition, Observation, SensorConfig};
