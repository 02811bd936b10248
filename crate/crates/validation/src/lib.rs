//! Plumbing for the acceptance suite in `tests/acceptance.rs`.
//!
//! Verdict lines are written straight to the stdout handle so they show up
//! even when the test harness captures `println!` output.

use std::io::Write;

use marl_core::algos::{AlgoConfig, Learner};
use marl_core::env::{EnvConfig, ParticleEnv, Scenario};
use marl_core::replay::TransitionRecord;
use marl_core::{seeded_rng, Result};
use rand::Rng;

/// Prints `[PASS] id name: detail` (or FAIL) and returns `pass`.
pub fn verdict(id: &str, name: &str, pass: bool, detail: &str) -> bool {
    let tag = if pass { "PASS" } else { "FAIL" };
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "[{tag}] {id} {name}: {detail}");
    let _ = out.flush();
    pass
}

/// A learner whose buffers already hold `fill` uniformly random joint
/// transitions, so an update round can run immediately.
pub fn prefilled_learner(scenario: Scenario, n: usize, cfg: AlgoConfig, fill: usize, seed: u64) -> Result<Learner> {
    let env = ParticleEnv::new(EnvConfig::for_scenario(scenario, n))?;
    let obs_dim = env.space_dims().obs_dim;
    let action_dim = env.space_dims().action_dim;
    let mut learner = Learner::new(env, cfg, seed)?;
    let mut rng = seeded_rng(seed ^ 0x5eed);
    let mut vec = |len: usize| -> Vec<f64> { (0..len).map(|_| rng.random_range(-1.0..1.0)).collect() };
    for t in 0..fill {
        let records: Vec<TransitionRecord> = (0..n)
            .map(|_| TransitionRecord {
                obs: vec(obs_dim),
                action: vec(action_dim),
                reward: vec(1)[0] * 2.0,
                next_obs: vec(obs_dim),
                done: t % 25 == 24,
            })
            .collect();
        learner.buffers.store_joint(&records)?;
    }
    Ok(learner)
}

/// Means of the first and last `fraction` of `series`.
pub fn head_tail_means(series: &[f64], fraction: f64) -> (f64, f64) {
    let k = ((series.len() as f64 * fraction).round() as usize).clamp(1, series.len().max(1));
    let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len().max(1) as f64;
    (mean(&series[..k.min(series.len())]), mean(&series[series.len().saturating_sub(k)..]))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn head_tail_split() {
        let s: Vec<f64> = (0..20).map(f64::from).collect();
        assert_eq!(head_tail_means(&s, 0.1), (0.5, 18.5));
    }
}
