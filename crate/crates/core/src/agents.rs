//! The AI policies and the synthetic user.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gp::GpBelief;
use crate::grid::Observation;
use crate::inference::ParamPosterior;
use crate::planner::{plan, RewardConfig, UserSource};
use crate::user_model::{acquisition, simulate_choice, UserState};

/// Exploration weight of the UCB baselines.
pub const UCB_BETA: f64 = 0.05;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    /// Single agent choosing whole cells uniformly at random.
    RandomFull,
    /// Single agent choosing whole cells by GP-UCB.
    GpUcbFull,
    /// Uniformly random column.
    RandomAi,
    /// Column of the full-grid UCB maximizer.
    GreedyAi,
    /// Planner with the inferred user model.
    StrategicAi,
    /// Planner with the true user parameters and belief.
    StrategicAiKnownUser,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 6] = [
        PolicyKind::RandomFull,
        PolicyKind::GpUcbFull,
        PolicyKind::RandomAi,
        PolicyKind::GreedyAi,
        PolicyKind::StrategicAi,
        PolicyKind::StrategicAiKnownUser,
    ];

    /// Policies that choose both coordinates without a partner.
    pub fn is_single_agent(self) -> bool {
        matches!(self, PolicyKind::RandomFull | PolicyKind::GpUcbFull)
    }

    pub fn is_strategic(self) -> bool {
        matches!(self, PolicyKind::StrategicAi | PolicyKind::StrategicAiKnownUser)
    }

    pub fn key(self) -> &'static str {
        match self {
            PolicyKind::RandomFull => "random_full",
            PolicyKind::GpUcbFull => "gp_ucb_full",
            PolicyKind::RandomAi => "random_ai",
            PolicyKind::GreedyAi => "greedy_ai",
            PolicyKind::StrategicAi => "strategic_ai",
            PolicyKind::StrategicAiKnownUser => "strategic_ai_known_user",
        }
    }

    /// Name used in tables and plots.
    pub fn label(self) -> &'static str {
        match self {
            PolicyKind::RandomFull => "Random",
            PolicyKind::GpUcbFull => "GP-UCB",
            PolicyKind::RandomAi => "RandomAI",
            PolicyKind::GreedyAi => "GreedyAI",
            PolicyKind::StrategicAi => "StrategicAI",
            PolicyKind::StrategicAiKnownUser => "StrategicAI+U",
        }
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

impl FromStr for PolicyKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        PolicyKind::ALL
            .into_iter()
            .find(|k| k.key() == s || k.label().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown policy {s:?}")))
    }
}

/// What an AI policy decided.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum AiMove {
    /// A column; the partner picks the row.
    Column(usize),
    /// A whole cell, for single-agent policies.
    Cell(usize, usize),
}

impl AiMove {
    pub fn ix(self) -> usize {
        match self {
            AiMove::Column(ix) | AiMove::Cell(ix, _) => ix,
        }
    }
}

/// Inputs available to an AI policy at one decision.
#[derive(Clone, Copy, Debug)]
pub struct PolicyInput<'a> {
    pub ai_belief: &'a GpBelief,
    /// Posterior over the user parameters; `None` means the prior.
    pub posterior: Option<&'a ParamPosterior>,
    /// Rounds played so far.
    pub rounds: &'a [Observation],
    /// Ground truth of a synthetic user, when one exists.
    pub true_user: Option<&'a UserState>,
    pub planner: &'a RewardConfig,
    /// Decision-noise scale assumed by the user model.
    pub model_sigma: f64,
}

/// Cell maximizing `mean + β·sd` over the grid, lowest flat index on ties.
pub fn ucb_argmax(belief: &GpBelief, beta: f64) -> (usize, usize) {
    let mut best = 0;
    let mut best_v = f64::NEG_INFINITY;
    for (i, (m, v)) in belief.mean_field().iter().zip(belief.var_field()).enumerate() {
        let u = m + beta * v.sqrt();
        if u > best_v {
            best = i;
            best_v = u;
        }
    }
    belief.grid().cell(best)
}

pub fn ai_move<R: Rng + ?Sized>(kind: PolicyKind, input: PolicyInput<'_>, rng: &mut R) -> Result<AiMove> {
    let grid = input.ai_belief.grid();
    Ok(match kind {
        PolicyKind::RandomFull => AiMove::Cell(rng.random_range(0..grid.nx()), rng.random_range(0..grid.ny())),
        PolicyKind::GpUcbFull => {
            let (ix, iy) = ucb_argmax(input.ai_belief, UCB_BETA);
            AiMove::Cell(ix, iy)
        }
        PolicyKind::RandomAi => AiMove::Column(rng.random_range(0..grid.nx())),
        PolicyKind::GreedyAi => AiMove::Column(ucb_argmax(input.ai_belief, UCB_BETA).0),
        PolicyKind::StrategicAi => {
            let uniform = ParamPosterior::uniform();
            let posterior = input.posterior.unwrap_or(&uniform);
            let source = UserSource::Inferred {
                posterior,
                rounds: input.rounds,
                sigma: input.model_sigma,
            };
            AiMove::Column(plan(input.ai_belief, source, input.planner, rng)?)
        }
        PolicyKind::StrategicAiKnownUser => {
            let user = input.true_user.ok_or_else(|| {
                Error::InvalidParameter("the known-user policy needs a synthetic user's ground truth".into())
            })?;
            AiMove::Column(plan(input.ai_belief, UserSource::Known(user), input.planner, rng)?)
        }
    })
}

/// The synthetic user's noisy UCB choice in column `ix`.
pub fn user_move<R: Rng + ?Sized>(user: &UserState, ix: usize, rng: &mut R) -> Result<usize> {
    let row = acquisition(&user.belief, ix, user.params.beta)?;
    Ok(simulate_choice(&row.values, user.params.sigma, rng))
}
