//! The diffusion action pipeline: noise schedule, forward noising, exact
//! single-step inversion, chunk sampling with an oracle noise predictor,
//! the stop gate, and the combined loss with its gradient check.
//!
//! Usage: cargo run --example diffusion_sampling

use vlnsim::policy::embed_instruction;
use vlnsim::rdp::{
    add_noise, denoise_step, make_schedule, path_progress, rdp_loss, rdp_loss_grad_eps_hat,
    sample_chunk, stop_gate, ActionChunk, OracleEpsPredictor, RdpCondition, DEFAULT_LAMBDA,
};

fn main() -> anyhow::Result<()> {
    let sched = make_schedule(10, 1e-4, 0.2)?;
    println!(
        "schedule: K = {}, beta in [{:.4}, {:.4}], abar_K = {:.4}",
        sched.k_steps(),
        sched.betas[0],
        sched.betas[9],
        sched.alpha_bars[9]
    );

    // Forward noising then the exact single-step inverse.
    let one = make_schedule(1, 0.05, 0.05)?;
    let clean = ActionChunk { steps: vec![[0.25, 0.0, 0.1]; 8] };
    let eps = ActionChunk::standard_normal(8, 3);
    let noisy = add_noise(&clean, 1, &eps, &one)?;
    let back = denoise_step(&noisy, 1, &eps, &one, 0)?;
    let inv_err: f64 = back
        .steps
        .iter()
        .zip(&clean.steps)
        .flat_map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y).abs()))
        .fold(0.0, f64::max);
    println!("single-step inversion error: {inv_err:.2e}");

    // Full reverse process with an oracle predictor recovers the chunk.
    let tokens = embed_instruction("walk straight ahead and stop at the door");
    let cond = RdpCondition::build(&[0.2; 32], &tokens, &[0.0; 32], [0.0; 3], [[0.0; 3]; 4])?;
    let predictor = OracleEpsPredictor { clean: clean.clone(), sched: sched.clone() };
    let sampled = sample_chunk(&cond, &predictor, &sched, 8, 11)?;
    let rec_err: f64 = sampled
        .steps
        .iter()
        .zip(&clean.steps)
        .flat_map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y).abs()))
        .fold(0.0, f64::max);
    println!("oracle reconstruction inf-error over K = 10: {rec_err:.2e}");

    // Stop gating: tiny actions or high progress both stop.
    let tiny = ActionChunk { steps: vec![[0.05, 0.02, 0.0]; 8] };
    println!(
        "stop gate: tiny actions {} | high progress {} | neither {}",
        stop_gate(&tiny, 0.1),
        stop_gate(&clean, 0.85),
        stop_gate(&clean, 0.5)
    );

    // Training loss and its analytic gradient vs finite differences.
    let eps_hat = eps.map(|v| v + 0.3);
    let loss = rdp_loss(&eps, &eps_hat, 0.6, 0.8, DEFAULT_LAMBDA)?;
    let grad = rdp_loss_grad_eps_hat(&eps, &eps_hat)?;
    let h = 1e-5;
    let mut probe = eps_hat.clone();
    probe.steps[2][1] += h;
    let numeric = (rdp_loss(&eps, &probe, 0.6, 0.8, DEFAULT_LAMBDA)? - loss) / h;
    println!(
        "loss {loss:.4}; d/d eps_hat[2][1]: analytic {:.6}, forward diff {:.6}",
        grad.steps[2][1], numeric
    );

    // Stop-progress ground truth along a reference path.
    let path: Vec<vlnsim::Point> = (0..6).map(|i| vlnsim::Point::new(i as f64, 0.0)).collect();
    for x in [0.0, 2.5, 5.0] {
        println!("path progress at x = {x:.1}: {:.2}", path_progress(&path, vlnsim::Point::new(x, 0.2)));
    }
    Ok(())
}
