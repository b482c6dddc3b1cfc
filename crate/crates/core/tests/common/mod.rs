#![allow(dead_code)]

use coopbo::agents::PolicyKind;
use coopbo::game::{run_episode, GameConfig};
use coopbo::grid::{Observation, PriorKind};
use coopbo::user_model::UserParams;

/// The four user types of the standard suite.
pub const CORNERS: [(f64, f64); 4] = [(0.1, 0.2), (0.6, 0.2), (0.1, 0.7), (0.6, 0.7)];

/// Rounds of a game between a random-column AI and a synthetic user who
/// starts without prior knowledge.
pub fn synthetic_rounds(alpha: f64, beta: f64, rounds: usize, seed: u64) -> Vec<Observation> {
    synthetic_rounds_with(PolicyKind::RandomAi, PriorKind::None, alpha, beta, rounds, seed)
}

pub fn synthetic_rounds_with(policy: PolicyKind, ai_prior: PriorKind, alpha: f64, beta: f64, rounds: usize, seed: u64) -> Vec<Observation> {
    let user = UserParams::new(alpha, beta, 1.0).unwrap();
    let mut cfg = GameConfig::new(policy, user, ai_prior, PriorKind::None, seed);
    cfg.rounds = rounds;
    cfg.entropy_samples = 0;
    cfg.objective = coopbo::grid::ObjectiveSpec::standard((seed % 3) as usize);
    run_episode(&cfg).unwrap().observations()
}

/// Expected maximum of `draws` cells drawn uniformly with replacement.
pub fn expected_max_of_uniform_draws(values: &[f64], draws: i32) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    v.iter()
        .enumerate()
        .map(|(i, x)| x * (((i + 1) as f64 / n).powi(draws) - (i as f64 / n).powi(draws)))
        .sum()
}
