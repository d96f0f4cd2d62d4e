//! Forward passes of the learned baselines with seeded frozen weights:
//! featurization, the single-GRU classifier, the cross-modal attention
//! model, and the versioned weight blob format.
//!
//! Usage: cargo run --example policy_forward

use vlnsim::control::DiscreteAction;
use vlnsim::embodiment::{default_profile, ProfileKind};
use vlnsim::policy::{
    attention_weights, blob, cma_step, scaled_dot_attention, seq2seq_step, CmaWeights,
    FeatureBundle, Matrix, Seq2SeqWeights,
};
use vlnsim::world::{load_map, observe, LightingCondition, SensorConfig};
use vlnsim::PoseState;

fn main() -> anyhow::Result<()> {
    let map = load_map(
        "cellsize 0.1\nlabel t table\nlabel c chair\n############\n#....t.....#\n#..........#\n#...c......#\n############\n",
    )?;
    let profile = default_profile(ProfileKind::Humanoid);
    let pose = PoseState::new(0.15, 0.25, 0.0);
    let obs = observe(&map, &pose, &profile, LightingCondition::dl5000(), &SensorConfig::default(), 1)?;

    let instruction = "walk past the table and stop near the chair";
    let features = FeatureBundle::build(&obs, instruction, Some(&DiscreteAction::forward()));
    println!(
        "features: visual {} dims, depth {} dims, {} instruction tokens",
        features.visual.len(),
        features.depth.len(),
        features.instruction_tokens.rows
    );

    // Attention weights over the instruction tokens sum to one.
    let w = attention_weights(&features.instruction_pooled, &features.instruction_tokens)?;
    println!("attention over tokens sums to {:.6}", w.iter().sum::<f64>());
    let attended = scaled_dot_attention(
        &features.instruction_pooled,
        &features.instruction_tokens,
        &features.instruction_tokens,
    )?;
    println!("attended instruction feature has {} dims", attended.len());

    // Single-GRU classifier, three steps of rollout.
    let s2s = Seq2SeqWeights::seeded(11);
    let mut h = vec![0.0; 32];
    print!("seq2seq actions:");
    for _ in 0..3 {
        let (action, h_next, probs) = seq2seq_step(&features, &h, &s2s)?;
        h = h_next;
        print!(" {action:?} (p {:.2})", probs.iter().cloned().fold(0.0, f64::max));
    }
    println!();

    // Cross-modal attention model.
    let cma = CmaWeights::seeded(11);
    let (mut h1, mut h2) = (vec![0.0; 32], vec![0.0; 32]);
    print!("cma actions:    ");
    for _ in 0..3 {
        let (action, (h1n, h2n), _) = cma_step(&features, (&h1, &h2), &cma)?;
        h1 = h1n;
        h2 = h2n;
        print!(" {action:?}");
    }
    println!();

    // Weight blobs round-trip bit-exactly.
    let bytes = blob::write(&[("w_a", &cma.w_a), ("p_inst", &cma.p_inst)]);
    let back = blob::read(&bytes)?;
    let same = back.iter().map(|(_, m)| m).eq([&cma.w_a, &cma.p_inst]);
    println!("weight blob: {} bytes, round-trip identical: {same}", bytes.len());

    let _ = Matrix::zeros(1, 1);
    Ok(())
}
