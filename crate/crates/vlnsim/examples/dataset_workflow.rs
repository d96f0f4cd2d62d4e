//! The file-based workflow end to end: generate a dataset, evaluate a
//! policy on it, and replay one trace, all in a temp directory.
//!
//! This mirrors `vlnsim generate | eval | replay | report` without the
//! shell.
//!
//! Usage: cargo run --release --example dataset_workflow

use std::path::Path;
use vlnsim::bench::GenConfig;
use vlnsim::cli::{cmd_eval, cmd_generate, cmd_replay, cmd_report, RunConfig};
use vlnsim::control::ControllerKind;
use vlnsim::embodiment::ProfileKind;
use vlnsim::world::LightingCondition;

fn main() -> anyhow::Result<()> {
    let out = std::env::temp_dir().join("vlnsim_workflow_demo");
    let _ = std::fs::remove_dir_all(&out);
    let map_path = Path::new(env!("CARGO_MANIFEST_DIR")).join("maps/demo_room.map");

    // Generate a small dataset with subgoal programs attached.
    let gen = GenConfig { min_len: 2.0, max_len: 9.0, with_subgoals: true, ..GenConfig::default() };
    cmd_generate(&map_path, &out.join("data"), 16, &gen, 2024)?;

    // Evaluate two pipelines on it.
    for (policy, controller) in [("oracle", ControllerKind::Flash), ("vlmaps", ControllerKind::Path)] {
        let config = RunConfig {
            map: map_path.clone(),
            dataset: out.join("data/dataset.json"),
            policy: policy.into(),
            controller,
            profile: ProfileKind::Wheeled,
            lighting: LightingCondition::dl5000(),
            seed: 7,
            max_steps: 200,
            success_radius: 3.0,
            workers: 2,
            out: out.join(format!("eval_{policy}")),
            save_traces: policy == "oracle",
            profile_overrides: Default::default(),
        };
        cmd_eval(&config)?;
    }

    // Replay the first oracle trace as ASCII frames.
    println!("\n--- replay of the first oracle trace (truncated) ---");
    cmd_replay(&out.join("eval_oracle/traces/ep_0000.json"))?;

    // Merge both runs into one comparison table.
    let table = cmd_report(&[
        out.join("eval_oracle/aggregate.json"),
        out.join("eval_vlmaps/aggregate.json"),
    ])?;
    println!("\n--- merged report ---\n{table}");
    println!("artifacts under {}", out.display());
    Ok(())
}
