//! One episode of the cooperative game.
//!
//! [`Game`] is a turn-based state machine shared by batch simulation, the
//! HTTP session service and the C interface. Every random draw comes from a
//! stream derived from the configured seed, the round index and a tag, so a
//! game is reproducible from its configuration and the partner's moves.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::agents::{ai_move, user_move, AiMove, PolicyInput, PolicyKind};
use crate::error::{Error, Result};
use crate::gp::{fit_hyperparameters, sample_max, GpBelief, KernelHyper, DEFAULT_MAX_SAMPLES};
use crate::grid::{allocate_prior, build_objective, GridDomain, Observation, ObjectiveGrid, ObjectiveSpec, ObservationSet, PriorKind};
use crate::inference::{fit_laplace, ParamPosterior};
use crate::planner::RewardConfig;
use crate::rng::{rng_from, tag};
use crate::user_model::{conservative_update, UserParams, UserState, DEFAULT_SIGMA};

/// Rounds between kernel hyperparameter refits of the AI.
pub const HYPER_REFIT_EVERY: usize = 5;

fn default_rounds() -> usize {
    20
}
fn default_prior_points() -> usize {
    5
}
fn default_spread() -> f64 {
    0.05
}
fn default_sigma() -> f64 {
    DEFAULT_SIGMA
}
fn default_entropy_samples() -> usize {
    DEFAULT_MAX_SAMPLES
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GameConfig {
    #[serde(default = "default_objective")]
    pub objective: ObjectiveSpec,
    #[serde(default = "default_rounds")]
    pub rounds: usize,
    pub policy: PolicyKind,
    pub user: UserParams,
    pub ai_prior: PriorKind,
    pub user_prior: PriorKind,
    #[serde(default = "default_prior_points")]
    pub prior_points: usize,
    #[serde(default = "default_spread")]
    pub prior_spread: f64,
    #[serde(default)]
    pub planner: RewardConfig,
    /// Decision-noise scale assumed by the AI's user model.
    #[serde(default = "default_sigma")]
    pub model_sigma: f64,
    /// Max-samples per user-certainty estimate; 0 disables the estimate.
    #[serde(default = "default_entropy_samples")]
    pub entropy_samples: usize,
    pub seed: u64,
}

fn default_objective() -> ObjectiveSpec {
    ObjectiveSpec::standard(0)
}

impl GameConfig {
    pub fn new(policy: PolicyKind, user: UserParams, ai_prior: PriorKind, user_prior: PriorKind, seed: u64) -> Self {
        Self {
            objective: default_objective(),
            rounds: default_rounds(),
            policy,
            user,
            ai_prior,
            user_prior,
            prior_points: default_prior_points(),
            prior_spread: default_spread(),
            planner: RewardConfig::default(),
            model_sigma: default_sigma(),
            entropy_samples: default_entropy_samples(),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.rounds < 1 {
            return Err(Error::Config("rounds must be >= 1".into()));
        }
        self.user.validate()?;
        if !(self.model_sigma > 0.0 && self.model_sigma.is_finite()) {
            return Err(Error::Config(format!("model_sigma = {} must be > 0", self.model_sigma)));
        }
        if !(self.prior_spread > 0.0) {
            return Err(Error::Config("prior_spread must be > 0".into()));
        }
        if self.entropy_samples > 0 && self.entropy_samples < 50 {
            return Err(Error::Config("entropy_samples must be 0 or >= 50".into()));
        }
        let grid = GridDomain::new(self.objective.nx, self.objective.ny)?;
        self.planner.validate(&grid)
    }
}

/// Who plays the second coordinate.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Partner {
    Synthetic,
    Human,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    AwaitingAiMove,
    AwaitingUserMove,
    Finished,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Round {
    pub ix: usize,
    pub iy: usize,
    /// Noisy observed value.
    pub z: f64,
    /// Noiseless objective value at the cell.
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PosteriorSnapshot {
    /// Number of rounds the posterior was fitted on.
    pub round: usize,
    pub posterior: ParamPosterior,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EntropyPoint {
    pub round: usize,
    /// Differential entropy in nats; `None` stands for minus infinity.
    pub nats: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GameTrace {
    pub config: GameConfig,
    pub partner: Partner,
    pub ai_prior: ObservationSet,
    pub user_prior: ObservationSet,
    pub rounds: Vec<Round>,
    /// Optimization score after each round.
    pub scores: Vec<f64>,
    pub posteriors: Vec<PosteriorSnapshot>,
    pub entropy: Vec<EntropyPoint>,
}

impl GameTrace {
    pub fn observations(&self) -> Vec<Observation> {
        self.rounds.iter().map(|r| Observation { ix: r.ix, iy: r.iy, z: r.z }).collect()
    }

    pub fn final_score(&self) -> Option<f64> {
        self.scores.last().copied()
    }

    pub fn final_entropy(&self) -> Option<f64> {
        self.entropy.iter().rev().find(|e| e.round == self.rounds.len()).and_then(|e| e.nats)
    }
}

/// Result of completing a round.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundOutcome {
    pub round: usize,
    pub ix: usize,
    pub iy: usize,
    pub z: f64,
    pub score: f64,
    pub finished: bool,
}

/// Maximum noiseless value among the first `t` rounds.
pub fn optimization_score(trace: &GameTrace, t: usize) -> Result<f64> {
    if t < 1 || t > trace.rounds.len() {
        return Err(Error::InvalidParameter(format!("t = {t} outside [1, {}]", trace.rounds.len())));
    }
    Ok(trace.rounds[..t].iter().map(|r| r.value).fold(f64::NEG_INFINITY, f64::max))
}

/// Recomputes every round's noiseless value and the score curve from the
/// trace's objective specification, failing on any disagreement.
pub fn verify_scores(trace: &GameTrace) -> Result<Vec<f64>> {
    let obj = build_objective(&trace.config.objective)?;
    let mut best = f64::NEG_INFINITY;
    let mut scores = Vec::with_capacity(trace.rounds.len());
    for (t, r) in trace.rounds.iter().enumerate() {
        let v = obj.value(r.ix, r.iy)?;
        if v != r.value {
            return Err(Error::MalformedTrace(format!("round {} stores value {} but the objective has {v}", t + 1, r.value)));
        }
        best = best.max(v);
        scores.push(best);
    }
    if scores != trace.scores {
        return Err(Error::MalformedTrace("stored scores differ from recomputed scores".into()));
    }
    Ok(scores)
}

/// Differential entropy of the belief's max distribution, estimated by a
/// Gaussian fit `½·ln(2πe·var)` to `n_samples` max draws. A point mass gives
/// minus infinity.
pub fn user_certainty<R: Rng + ?Sized>(belief: &GpBelief, n_samples: usize, rng: &mut R) -> Result<f64> {
    if n_samples < 50 {
        return Err(Error::InvalidParameter("n_samples must be >= 50".into()));
    }
    let samples = sample_max(belief, n_samples, rng)?;
    Ok(gaussian_entropy(&samples))
}

/// `½·ln(2πe·var)` of the samples (population variance).
pub fn gaussian_entropy(samples: &[f64]) -> f64 {
    let (_, sd) = crate::stats::mean_sd(samples);
    let var = sd * sd;
    if var > 0.0 {
        0.5 * (2.0 * std::f64::consts::PI * std::f64::consts::E * var).ln()
    } else {
        f64::NEG_INFINITY
    }
}

/// A game in progress.
#[derive(Clone, Debug)]
pub struct Game {
    cfg: GameConfig,
    partner: Partner,
    objective: ObjectiveGrid,
    ai_prior: ObservationSet,
    user_prior: ObservationSet,
    ai_hyper: KernelHyper,
    ai_belief: GpBelief,
    user: Option<UserState>,
    rounds: Vec<Round>,
    scores: Vec<f64>,
    posteriors: Vec<PosteriorSnapshot>,
    entropy: Vec<EntropyPoint>,
    pending: Option<AiMove>,
}

impl Game {
    pub fn new(cfg: GameConfig, partner: Partner) -> Result<Self> {
        cfg.validate()?;
        if partner == Partner::Human && cfg.policy.is_single_agent() {
            return Err(Error::Config(format!("policy {} has no partner", cfg.policy)));
        }
        if partner == Partner::Human && cfg.policy == PolicyKind::StrategicAiKnownUser {
            return Err(Error::Config("the known-user policy needs a synthetic user".into()));
        }
        let objective = build_objective(&cfg.objective)?;
        let grid = objective.grid();
        let n = cfg.prior_points;
        let ai_prior = allocate_prior(&objective, cfg.ai_prior, n, cfg.prior_spread, &mut rng_from(cfg.seed, &[tag::AI_PRIOR]))?;
        let user_prior = allocate_prior(&objective, cfg.user_prior, n, cfg.prior_spread, &mut rng_from(cfg.seed, &[tag::USER_PRIOR]))?;
        let ai_hyper = if ai_prior.len() >= 3 {
            fit_hyperparameters(&grid, ai_prior.as_slice())
        } else {
            KernelHyper::default()
        };
        let ai_belief = GpBelief::with_hyper(grid, ai_hyper, &ai_prior)?;
        let user = match partner {
            Partner::Synthetic => Some(UserState {
                belief: GpBelief::fit(grid, &user_prior, true)?,
                params: cfg.user,
            }),
            Partner::Human => None,
        };
        let mut game = Self {
            cfg,
            partner,
            objective,
            ai_prior,
            user_prior,
            ai_hyper,
            ai_belief,
            user,
            rounds: Vec::new(),
            scores: Vec::new(),
            posteriors: Vec::new(),
            entropy: Vec::new(),
            pending: None,
        };
        game.record_entropy()?;
        Ok(game)
    }

    pub fn config(&self) -> &GameConfig {
        &self.cfg
    }

    pub fn grid(&self) -> GridDomain {
        self.objective.grid()
    }

    pub fn objective(&self) -> &ObjectiveGrid {
        &self.objective
    }

    pub fn phase(&self) -> Phase {
        if self.rounds.len() >= self.cfg.rounds {
            Phase::Finished
        } else if self.pending.is_some() {
            Phase::AwaitingUserMove
        } else {
            Phase::AwaitingAiMove
        }
    }

    pub fn pending(&self) -> Option<AiMove> {
        self.pending
    }

    pub fn rounds(&self) -> &[Round] {
        &self.rounds
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn ai_belief(&self) -> &GpBelief {
        &self.ai_belief
    }

    pub fn user_state(&self) -> Option<&UserState> {
        self.user.as_ref()
    }

    pub fn user_prior(&self) -> &ObservationSet {
        &self.user_prior
    }

    pub fn ai_prior(&self) -> &ObservationSet {
        &self.ai_prior
    }

    fn observations(&self) -> Vec<Observation> {
        self.rounds.iter().map(|r| Observation { ix: r.ix, iy: r.iy, z: r.z }).collect()
    }

    fn protocol(&self, want: Phase) -> Result<()> {
        let got = self.phase();
        if got == want {
            Ok(())
        } else {
            Err(Error::Protocol(format!("expected phase {want:?}, game is in {got:?}")))
        }
    }

    /// Runs the AI policy for the next round and stores its move.
    pub fn ai_move(&mut self) -> Result<AiMove> {
        self.protocol(Phase::AwaitingAiMove)?;
        let t = self.rounds.len();
        let obs = self.observations();
        let posterior = if self.cfg.policy == PolicyKind::StrategicAi {
            let post = fit_laplace(self.grid(), &obs, &ObservationSet::new(), self.cfg.model_sigma)?;
            self.posteriors.push(PosteriorSnapshot { round: t, posterior: post.clone() });
            Some(post)
        } else {
            None
        };
        let input = PolicyInput {
            ai_belief: &self.ai_belief,
            posterior: posterior.as_ref(),
            rounds: &obs,
            true_user: self.user.as_ref(),
            planner: &self.cfg.planner,
            model_sigma: self.cfg.model_sigma,
        };
        let mv = ai_move(self.cfg.policy, input, &mut rng_from(self.cfg.seed, &[tag::AI_POLICY, t as u64]))?;
        self.pending = Some(mv);
        Ok(mv)
    }

    /// Completes the pending round with row `iy`. Single-agent moves already
    /// carry their row and must be completed with it.
    pub fn user_move(&mut self, iy: usize) -> Result<RoundOutcome> {
        self.protocol(Phase::AwaitingUserMove)?;
        let mv = self.pending.expect("pending move in AwaitingUserMove");
        let ix = mv.ix();
        self.grid().check(ix, iy)?;
        if let AiMove::Cell(_, cy) = mv {
            if cy != iy {
                return Err(Error::Protocol(format!("single-agent move fixed row {cy}, got {iy}")));
            }
        }
        let t = self.rounds.len();
        let z = self.objective.query(ix, iy, &mut rng_from(self.cfg.seed, &[tag::QUERY, t as u64]))?;
        self.apply_round(ix, iy, z)
    }

    /// The synthetic user's answer to the pending move.
    pub fn synthetic_user_choice(&self) -> Result<usize> {
        self.protocol(Phase::AwaitingUserMove)?;
        let mv = self.pending.expect("pending move in AwaitingUserMove");
        match mv {
            AiMove::Cell(_, iy) => Ok(iy),
            AiMove::Column(ix) => {
                let user = self
                    .user
                    .as_ref()
                    .ok_or_else(|| Error::Protocol("no synthetic user in this game".into()))?;
                let t = self.rounds.len() as u64;
                user_move(user, ix, &mut rng_from(self.cfg.seed, &[tag::USER_CHOICE, t]))
            }
        }
    }

    /// One full round with the synthetic user.
    pub fn step(&mut self) -> Result<RoundOutcome> {
        self.ai_move()?;
        let iy = self.synthetic_user_choice()?;
        self.user_move(iy)
    }

    /// Records a completed round with a known observation, as when restoring
    /// a stored game.
    pub fn replay_round(&mut self, ix: usize, iy: usize, z: f64) -> Result<RoundOutcome> {
        if self.phase() == Phase::Finished {
            return Err(Error::Protocol("game is finished".into()));
        }
        self.grid().check(ix, iy)?;
        if !z.is_finite() {
            return Err(Error::NonFinite { ix, iy });
        }
        if self.cfg.policy == PolicyKind::StrategicAi {
            let obs = self.observations();
            let post = fit_laplace(self.grid(), &obs, &ObservationSet::new(), self.cfg.model_sigma)?;
            self.posteriors.push(PosteriorSnapshot {
                round: self.rounds.len(),
                posterior: post,
            });
        }
        self.pending = None;
        self.apply_round(ix, iy, z)
    }

    /// Restores a stored pending AI move.
    pub fn set_pending(&mut self, mv: Option<AiMove>) -> Result<()> {
        if let Some(m) = mv {
            self.protocol(Phase::AwaitingAiMove)?;
            self.grid().check(m.ix(), 0)?;
        }
        self.pending = mv;
        Ok(())
    }

    fn apply_round(&mut self, ix: usize, iy: usize, z: f64) -> Result<RoundOutcome> {
        let grid = self.grid();
        let value = self.objective.value(ix, iy)?;
        let obs = Observation { ix, iy, z };
        self.rounds.push(Round { ix, iy, z, value });
        let best = self.scores.last().copied().unwrap_or(f64::NEG_INFINITY).max(value);
        self.scores.push(best);
        self.pending = None;

        let t = self.rounds.len();
        let data = self.ai_prior.chained(&self.observations());
        if t % HYPER_REFIT_EVERY == 0 && data.len() >= 3 {
            self.ai_hyper = fit_hyperparameters(&grid, data.as_slice());
        }
        self.ai_belief = GpBelief::with_hyper(grid, self.ai_hyper, &data)?;
        if let Some(user) = self.user.as_mut() {
            user.belief = conservative_update(&user.belief, obs, user.params.alpha)?;
        }
        let finished = t >= self.cfg.rounds;
        if finished {
            self.record_entropy()?;
        }
        Ok(RoundOutcome {
            round: t,
            ix,
            iy,
            z,
            score: best,
            finished,
        })
    }

    fn record_entropy(&mut self) -> Result<()> {
        let (Some(user), n) = (self.user.as_ref(), self.cfg.entropy_samples) else {
            return Ok(());
        };
        if n == 0 {
            return Ok(());
        }
        let t = self.rounds.len();
        let h = user_certainty(&user.belief, n, &mut rng_from(self.cfg.seed, &[tag::ENTROPY, t as u64]))?;
        self.entropy.push(EntropyPoint {
            round: t,
            nats: h.is_finite().then_some(h),
        });
        Ok(())
    }

    pub fn trace(&self) -> GameTrace {
        GameTrace {
            config: self.cfg.clone(),
            partner: self.partner,
            ai_prior: self.ai_prior.clone(),
            user_prior: self.user_prior.clone(),
            rounds: self.rounds.clone(),
            scores: self.scores.clone(),
            posteriors: self.posteriors.clone(),
            entropy: self.entropy.clone(),
        }
    }
}

/// Plays a full episode against the synthetic user.
pub fn run_episode(cfg: &GameConfig) -> Result<GameTrace> {
    let mut game = Game::new(cfg.clone(), Partner::Synthetic)?;
    while game.phase() != Phase::Finished {
        game.step()?;
    }
    Ok(game.trace())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(policy: PolicyKind, seed: u64) -> GameConfig {
        let mut c = GameConfig::new(
            policy,
            UserParams { alpha: 0.1, beta: 0.7, sigma: 1.0 },
            PriorKind::Global,
            PriorKind::Local,
            seed,
        );
        c.entropy_samples = 50;
        c
    }

    #[test]
    fn episode_has_all_rounds_and_monotone_scores() {
        let tr = run_episode(&cfg(PolicyKind::GreedyAi, 3)).unwrap();
        assert_eq!(tr.rounds.len(), 20);
        assert!(tr.scores.windows(2).all(|w| w[1] >= w[0]));
        assert!(tr.scores.iter().all(|&s| (0.0..=100.0).contains(&s)));
        assert_eq!(verify_scores(&tr).unwrap(), tr.scores);
        assert_eq!(optimization_score(&tr, 1).unwrap(), tr.rounds[0].value);
        assert!(optimization_score(&tr, 0).is_err());
        assert!(optimization_score(&tr, 21).is_err());
        assert_eq!(tr.entropy.len(), 2);
    }

    #[test]
    fn episodes_are_reproducible() {
        let a = serde_json::to_string(&run_episode(&cfg(PolicyKind::RandomAi, 9)).unwrap()).unwrap();
        let b = serde_json::to_string(&run_episode(&cfg(PolicyKind::RandomAi, 9)).unwrap()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn replaying_rounds_reproduces_beliefs() {
        let c = cfg(PolicyKind::GpUcbFull, 4);
        let mut g = Game::new(c.clone(), Partner::Synthetic).unwrap();
        for _ in 0..7 {
            g.step().unwrap();
        }
        let mut h = Game::new(c, Partner::Synthetic).unwrap();
        for r in g.rounds().to_vec() {
            h.replay_round(r.ix, r.iy, r.z).unwrap();
        }
        assert_eq!(g.ai_belief().mean_field(), h.ai_belief().mean_field());
        assert_eq!(g.scores(), h.scores());
    }

    #[test]
    fn protocol_is_enforced() {
        let mut c = cfg(PolicyKind::RandomAi, 1);
        c.rounds = 1;
        let mut g = Game::new(c, Partner::Human).unwrap();
        assert!(g.user_move(0).is_err());
        g.ai_move().unwrap();
        assert!(g.ai_move().is_err());
        assert!(g.user_move(50).is_err());
        let out = g.user_move(3).unwrap();
        assert!(out.finished);
        assert_eq!(g.phase(), Phase::Finished);
        assert!(g.ai_move().is_err());
    }

    #[test]
    fn zero_rounds_and_partnerless_sessions_are_rejected() {
        let mut c = cfg(PolicyKind::RandomAi, 1);
        c.rounds = 0;
        assert!(Game::new(c, Partner::Synthetic).is_err());
        assert!(Game::new(cfg(PolicyKind::RandomFull, 1), Partner::Human).is_err());
    }

    #[test]
    fn gaussian_entropy_of_standard_normal() {
        use rand_distr::{Distribution, StandardNormal};
        let mut rng = rng_from(0, &[]);
        let s: Vec<f64> = (0..200).map(|_| StandardNormal.sample(&mut rng)).collect();
        let h = gaussian_entropy(&s);
        assert!((h - 1.4189385332046727).abs() < 0.1, "{h}");
        assert_eq!(gaussian_entropy(&[3.0; 10]), f64::NEG_INFINITY);
    }
}
