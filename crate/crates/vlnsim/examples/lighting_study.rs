//! Evaluate one policy under the three lighting regimes: depth stays
//! stable, semantic scores degrade, and metrics shift accordingly.
//!
//! Usage: cargo run --release --example lighting_study

use vlnsim::bench::{
    build_policy, compute_metrics, format_table, run_episode, sample_episodes, AggregateMetrics,
    GenConfig, RunParams,
};
use vlnsim::control::ControllerKind;
use vlnsim::embodiment::{default_profile, ProfileKind};
use vlnsim::rng::derive_seed;
use vlnsim::world::{GridMap, LightingCondition};

fn main() -> anyhow::Result<()> {
    let map = GridMap::generate_random(48, 48, 0.06, 31);
    let gen = GenConfig { min_len: 2.0, max_len: 8.0, ..GenConfig::default() };
    let episodes = sample_episodes(&map, 24, "light", &gen, 4)?;
    let params = RunParams { max_steps: 100, ..RunParams::default() };
    let profile = default_profile(ProfileKind::Humanoid);

    let mut rows: Vec<(String, AggregateMetrics)> = Vec::new();
    for lighting in [LightingCondition::dl5000(), LightingCondition::dl300(), LightingCondition::cl()] {
        let mut traces = Vec::new();
        for ep in &episodes {
            let mut policy = build_policy("cma", derive_seed(5, 0xfeed), params.success_radius)
                .expect("registered policy");
            traces.push(run_episode(
                &map,
                ep,
                policy.as_mut(),
                ControllerKind::Speed,
                &profile,
                lighting,
                &params,
                derive_seed(5, ep.episode_id as u64),
            ));
        }
        let report = compute_metrics(&map, &episodes, &traces, params.success_radius)?;
        rows.push((format!("cma/humanoid/speed/{:?}", lighting.kind).to_lowercase(), report.aggregate));
    }
    let table_rows: Vec<(String, &AggregateMetrics)> =
        rows.iter().map(|(n, a)| (n.clone(), a)).collect();
    print!("{}", format_table(&table_rows));
    println!("\nnoise sigmas: dl5000 = 0.0, dl300 = 0.3, cl = 0.15 with angular falloff");
    println!("depth rays are identical across regimes; only semantics degrade.");
    Ok(())
}
