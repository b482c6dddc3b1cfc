//! Bayes-adaptive Monte-Carlo planning of the AI's coordinate.
//!
//! For each sampled user model the planner simulates short games from the
//! current state: the AI plays a candidate column, the simulated user answers
//! with a noisy UCB choice, a pseudo-observation is drawn from the AI's
//! predictive distribution and both simulated beliefs update. Rewards combine
//! the AI's UCB under the user's expected answer with the AI's own view of the
//! column's best cells.

use std::borrow::Cow;
use std::sync::OnceLock;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gp::{ExactPosterior, GpBelief, KernelHyper};
use crate::grid::{GridDomain, Observation, ObservationSet};
use crate::inference::{sample_params, ParamPosterior};
use crate::rng::{derive_seed, rng_from};
use crate::stats::log_norm_sf_fast;
use crate::user_model::{choice_distribution_into, simulate_choice, ReplayCache, UserState};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardConfig {
    /// Weight of the AI-only term in the reward.
    pub c: f64,
    /// Number of top cells averaged in the AI-only term.
    pub k: usize,
    /// UCB exploration weight of the AI inside rewards.
    pub beta_ai: f64,
    /// Per-step discount of rollout rewards.
    pub gamma: f64,
    /// Rounds simulated per rollout, including the root action.
    pub horizon: usize,
    pub n_root_samples: usize,
    pub n_rollouts_per_action: usize,
    /// Use the predictive mean instead of a random draw as the simulated
    /// observation.
    pub mean_observations: bool,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            c: 1.0,
            k: 5,
            beta_ai: 1.0,
            gamma: 0.9,
            horizon: 2,
            n_root_samples: 16,
            n_rollouts_per_action: 8,
            mean_observations: false,
        }
    }
}

impl RewardConfig {
    pub fn validate(&self, grid: &GridDomain) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if !(self.c >= 0.0 && self.c.is_finite()) {
            return bad(format!("C = {} must be >= 0", self.c));
        }
        if self.k < 1 || self.k > grid.ny() {
            return bad(format!("K = {} outside [1, {}]", self.k, grid.ny()));
        }
        crate::user_model::check_unit("beta_ai", self.beta_ai)?;
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad(format!("gamma = {} outside (0, 1]", self.gamma));
        }
        if self.horizon < 1 || self.n_root_samples < 1 || self.n_rollouts_per_action < 1 {
            return bad("horizon and sample counts must be >= 1".into());
        }
        Ok(())
    }
}

/// A fully specified state of the game as seen by a simulator.
#[derive(Clone, Debug)]
pub struct SimState {
    pub ai_belief: GpBelief,
    pub user: UserState,
    pub round: usize,
}

/// Where the planner's user model comes from.
#[derive(Clone, Copy, Debug)]
pub enum UserSource<'a> {
    /// Parameters drawn from a posterior; the user belief is reconstructed
    /// from the rounds for every draw.
    Inferred {
        posterior: &'a ParamPosterior,
        rounds: &'a [Observation],
        sigma: f64,
    },
    /// A given user belief with parameters drawn from a posterior.
    Fixed {
        belief: &'a GpBelief,
        posterior: &'a ParamPosterior,
        sigma: f64,
    },
    /// The true user.
    Known(&'a UserState),
}

/// Renormalized comparative-judgment probabilities of the user's choice in
/// column `ix`.
pub fn user_choice_distribution(user: &UserState, ix: usize) -> Result<Vec<f64>> {
    let row = crate::user_model::acquisition(&user.belief, ix, user.params.beta)?;
    Ok(crate::user_model::choice_distribution(&row.values, user.params.sigma))
}

fn ucb_column(belief: &GpBelief, ix: usize, beta: f64) -> Result<Vec<f64>> {
    Ok(crate::user_model::acquisition(belief, ix, beta)?.values)
}

/// Expected AI UCB of column `ix` under the user's choice distribution.
pub fn reward_r1(ai: &GpBelief, user: &UserState, ix: usize, beta_ai: f64) -> Result<f64> {
    let q = user_choice_distribution(user, ix)?;
    let ucb = ucb_column(ai, ix, beta_ai)?;
    Ok(q.iter().zip(&ucb).map(|(a, b)| a * b).sum())
}

/// Mean of the `k` largest AI UCB values of column `ix`.
pub fn reward_r2(ai: &GpBelief, ix: usize, k: usize, beta_ai: f64) -> Result<f64> {
    let ny = ai.grid().ny();
    if k < 1 || k > ny {
        return Err(Error::InvalidParameter(format!("K = {k} outside [1, {ny}]")));
    }
    let ucb = ucb_column(ai, ix, beta_ai)?;
    Ok(top_k_mean(&ucb, k, &mut Vec::new()))
}

pub fn total_reward(ai: &GpBelief, user: &UserState, ix: usize, cfg: &RewardConfig) -> Result<f64> {
    Ok(reward_r1(ai, user, ix, cfg.beta_ai)? + cfg.c * reward_r2(ai, ix, cfg.k, cfg.beta_ai)?)
}

fn top_k_mean(values: &[f64], k: usize, buf: &mut Vec<f64>) -> f64 {
    top_k(values, k, buf);
    buf.iter().sum::<f64>() / k as f64
}

/// Leaves the `k` largest values in `buf`, sorted descending.
fn top_k(values: &[f64], k: usize, buf: &mut Vec<f64>) {
    let k = k.min(values.len());
    buf.clear();
    if k == 0 {
        return;
    }
    buf.resize(k, f64::NEG_INFINITY);
    for &v in values {
        if v > buf[k - 1] {
            let mut j = k - 1;
            while j > 0 && buf[j - 1] < v {
                buf[j] = buf[j - 1];
                j -= 1;
            }
            buf[j] = v;
        }
    }
}

/// Posterior cross-covariance columns, computed on first use.
struct CovCache {
    exact: ExactPosterior,
    noise: f64,
    cols: Vec<OnceLock<Box<[f64]>>>,
}

impl CovCache {
    fn new(exact: ExactPosterior, hyper: &KernelHyper) -> Self {
        let n = exact.grid().len();
        Self {
            exact,
            noise: hyper.diag_noise(),
            cols: (0..n).map(|_| OnceLock::new()).collect(),
        }
    }

    fn col(&self, p: usize) -> &[f64] {
        self.cols[p].get_or_init(|| self.exact.cross_cov(p).into_boxed_slice())
    }
}

/// One applied rank-one update. The normalized covariance column is
/// `raw · scale`; the mean moves by `mean_coef · raw` and the variance drops by
/// `var_coef · raw²`.
struct Applied<'c> {
    raw: Cow<'c, [f64]>,
    scale: f64,
    mean_coef: f64,
    var_coef: f64,
}

#[inline]
fn field_at(base_m: &[f64], base_v: &[f64], ups: &[Applied<'_>], c: usize) -> (f64, f64) {
    let mut m = base_m[c];
    let mut v = base_v[c];
    for a in ups {
        let r = a.raw[c];
        m += a.mean_coef * r;
        v -= a.var_coef * r * r;
    }
    (m, v.max(0.0))
}

fn push_update<'c>(cov: &'c CovCache, base_m: &[f64], ups: &mut Vec<Applied<'c>>, p: usize, z: f64, weight: f64) {
    let mut raw: Cow<'c, [f64]> = Cow::Borrowed(cov.col(p));
    if !ups.is_empty() {
        let mut k = raw.into_owned();
        for a in ups.iter() {
            let w = a.scale * a.scale * a.raw[p];
            for (slot, rc) in k.iter_mut().zip(a.raw.iter()) {
                *slot -= rc * w;
            }
        }
        raw = Cow::Owned(k);
    }
    let s = raw[p] + cov.noise;
    let scale = 1.0 / s.max(f64::MIN_POSITIVE).sqrt();
    let m_p = base_m[p] + ups.iter().map(|a| a.mean_coef * a.raw[p]).sum::<f64>();
    ups.push(Applied {
        mean_coef: weight * scale * scale * (z - m_p),
        var_coef: weight * scale * scale,
        scale,
        raw,
    });
}

/// Everything shared by all samples of one planning call.
struct Context<'a> {
    grid: GridDomain,
    cfg: &'a RewardConfig,
    ai_m: &'a [f64],
    ai_v: &'a [f64],
    ai_obs_noise: f64,
    /// AI UCB at the root state, an upper bound on later UCB minus mean shifts.
    ucb0: Vec<f64>,
    ai_cov: CovCache,
    user_cov: CovCache,
    sigma: f64,
}

/// One sampled user model.
struct Sample {
    alpha: f64,
    beta: f64,
    user_m: Vec<f64>,
    user_v: Vec<f64>,
    /// Root-state user acquisition, row-major by column.
    acq0: Vec<f64>,
    /// Root-state reward of every column.
    r0: Vec<f64>,
}

#[derive(Default)]
struct Scratch {
    ucb: Vec<f64>,
    acq: Vec<f64>,
    q: Vec<f64>,
    order: Vec<(f64, usize)>,
    topk: Vec<f64>,
    bound: Vec<f64>,
    cols: Vec<(f64, usize)>,
}

impl<'a> Context<'a> {
    /// Exact reward of column `x` after the applied updates of both agents.
    fn reward(&self, smp: &Sample, ai_ups: &[Applied<'_>], user_ups: &[Applied<'_>], x: usize, sc: &mut Scratch) -> f64 {
        let ny = self.grid.ny();
        let cfg = self.cfg;
        sc.ucb.clear();
        sc.acq.clear();
        for c in x * ny..(x + 1) * ny {
            let (m, v) = field_at(self.ai_m, self.ai_v, ai_ups, c);
            sc.ucb.push(m + cfg.beta_ai * v.sqrt());
            let (um, uv) = field_at(&smp.user_m, &smp.user_v, user_ups, c);
            sc.acq.push(um + smp.beta * uv.sqrt());
        }
        sc.q.resize(ny, 0.0);
        choice_distribution_into(&sc.acq, self.sigma, &mut sc.order, &mut sc.q, log_norm_sf_fast);
        let r1: f64 = sc.q.iter().zip(&sc.ucb).map(|(a, b)| a * b).sum();
        let r2 = top_k_mean(&sc.ucb, cfg.k, &mut sc.topk);
        r1 + cfg.c * r2
    }

    fn sample(&self, alpha: f64, beta: f64, user_m: Vec<f64>, user_v: Vec<f64>, sc: &mut Scratch) -> Sample {
        let ny = self.grid.ny();
        let acq0 = user_m.iter().zip(&user_v).map(|(m, v)| m + beta * v.max(0.0).sqrt()).collect();
        let mut smp = Sample {
            alpha,
            beta,
            user_m,
            user_v,
            acq0,
            r0: Vec::new(),
        };
        smp.r0 = (0..self.grid.nx()).map(|x| self.reward(&smp, &[], &[], x, sc)).collect();
        debug_assert_eq!(smp.acq0.len(), self.grid.nx() * ny);
        smp
    }

    /// Greedy column and its reward after the given updates. Columns are
    /// visited in order of an upper bound on their reward and the search
    /// stops once no remaining bound can beat the best exact reward.
    fn greedy(&self, smp: &Sample, ai_ups: &[Applied<'_>], user_ups: &[Applied<'_>], sc: &mut Scratch) -> (usize, f64) {
        let (nx, ny) = (self.grid.nx(), self.grid.ny());
        let cfg = self.cfg;
        let mut cols = std::mem::take(&mut sc.cols);
        cols.clear();
        for x in 0..nx {
            let (lo, hi) = (x * ny, (x + 1) * ny);
            sc.bound.clear();
            sc.bound.extend_from_slice(&self.ucb0[lo..hi]);
            for a in ai_ups {
                let coef = a.mean_coef;
                for (b, r) in sc.bound.iter_mut().zip(&a.raw[lo..hi]) {
                    *b += coef * r;
                }
            }
            top_k(&sc.bound, cfg.k, &mut sc.topk);
            let u = sc.topk[0] + cfg.c * sc.topk.iter().sum::<f64>() / cfg.k as f64;
            cols.push((u, x));
        }
        cols.sort_unstable_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        let mut best = (0, f64::NEG_INFINITY);
        for &(u, x) in &cols {
            if u < best.1 {
                break;
            }
            let r = self.reward(smp, ai_ups, user_ups, x, sc);
            if r > best.1 || (r == best.1 && x < best.0) {
                best = (x, r);
            }
        }
        sc.cols = cols;
        best
    }

    fn rollout<R: Rng + ?Sized>(&self, smp: &Sample, x0: usize, rng: &mut R, sc: &mut Scratch) -> f64 {
        let cfg = self.cfg;
        let ny = self.grid.ny();
        let mut ret = smp.r0[x0];
        let mut ai_ups: Vec<Applied> = Vec::new();
        let mut user_ups: Vec<Applied> = Vec::new();
        let mut x = x0;
        let mut disc = 1.0;
        for h in 1..cfg.horizon {
            let y = if h == 1 {
                simulate_choice(&smp.acq0[x * ny..(x + 1) * ny], self.sigma, rng)
            } else {
                sc.acq.clear();
                for iy in 0..ny {
                    let (um, uv) = field_at(&smp.user_m, &smp.user_v, &user_ups, x * ny + iy);
                    sc.acq.push(um + smp.beta * uv.sqrt());
                }
                simulate_choice(&sc.acq, self.sigma, rng)
            };
            let p = self.grid.index(x, y);
            let (m_p, v_p) = field_at(self.ai_m, self.ai_v, &ai_ups, p);
            let z = if cfg.mean_observations {
                m_p
            } else {
                let e: f64 = rng.sample(StandardNormal);
                m_p + (v_p + self.ai_obs_noise).sqrt() * e
            };
            push_update(&self.ai_cov, self.ai_m, &mut ai_ups, p, z, 1.0);
            push_update(&self.user_cov, &smp.user_m, &mut user_ups, p, z, 1.0 - smp.alpha);
            disc *= cfg.gamma;
            let (xb, rb) = self.greedy(smp, &ai_ups, &user_ups, sc);
            ret += disc * rb;
            x = xb;
        }
        ret
    }
}

fn context<'a>(ai: &'a GpBelief, user_cov: CovCache, sigma: f64, cfg: &'a RewardConfig) -> Result<Context<'a>> {
    let hyper = ai.hyper();
    let ucb0 = ai
        .mean_field()
        .iter()
        .zip(ai.var_field())
        .map(|(m, v)| m + cfg.beta_ai * v.sqrt())
        .collect();
    Ok(Context {
        grid: ai.grid(),
        cfg,
        ai_m: ai.mean_field(),
        ai_v: ai.var_field(),
        ai_obs_noise: hyper.obs_noise_var,
        ucb0,
        ai_cov: CovCache::new(ai.exact()?, &hyper),
        user_cov,
        sigma,
    })
}

/// Simulates `cfg.horizon` rounds from `state` starting with column
/// `first_action` and returns the discounted sum of rewards. The first reward
/// is the expectation over the user's choice; later columns are chosen
/// greedily by reward.
pub fn rollout<R: Rng + ?Sized>(state: &SimState, first_action: usize, cfg: &RewardConfig, rng: &mut R) -> Result<f64> {
    let grid = state.ai_belief.grid();
    cfg.validate(&grid)?;
    grid.check(first_action, 0)?;
    state.user.params.validate()?;
    let ub = &state.user.belief;
    let user_cov = CovCache::new(ub.exact()?, &ub.hyper());
    let ctx = context(&state.ai_belief, user_cov, state.user.params.sigma, cfg)?;
    let mut sc = Scratch::default();
    let smp = ctx.sample(
        state.user.params.alpha,
        state.user.params.beta,
        ub.mean_field().to_vec(),
        ub.var_field().to_vec(),
        &mut sc,
    );
    Ok(ctx.rollout(&smp, first_action, rng, &mut sc))
}

/// Estimated value of every column and the chosen one.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanOutput {
    pub ix: usize,
    pub values: Vec<f64>,
}

pub fn plan<R: Rng + ?Sized>(ai: &GpBelief, user: UserSource<'_>, cfg: &RewardConfig, rng: &mut R) -> Result<usize> {
    Ok(plan_with_values(ai, user, cfg, rng)?.ix)
}

/// Averages rollout returns over posterior draws and rollouts for every
/// column and returns the best column (lowest index on ties).
pub fn plan_with_values<R: Rng + ?Sized>(
    ai: &GpBelief,
    user: UserSource<'_>,
    cfg: &RewardConfig,
    rng: &mut R,
) -> Result<PlanOutput> {
    let grid = ai.grid();
    cfg.validate(&grid)?;
    let seed: u64 = rng.random();
    let n_samples = cfg.n_root_samples;

    let (user_cov, sigma) = match user {
        UserSource::Inferred { rounds, sigma, .. } => {
            let hyper = KernelHyper::default();
            (CovCache::new(ExactPosterior::new(grid, hyper, rounds)?, &hyper), sigma)
        }
        UserSource::Fixed { belief, sigma, .. } => (CovCache::new(belief.exact()?, &belief.hyper()), sigma),
        UserSource::Known(state) => {
            state.params.validate()?;
            (CovCache::new(state.belief.exact()?, &state.belief.hyper()), state.params.sigma)
        }
    };
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidParameter(format!("sigma = {sigma} must be >= 0")));
    }
    let ctx = context(ai, user_cov, sigma, cfg)?;

    let replay = match user {
        UserSource::Inferred { rounds, .. } => Some(ReplayCache::new(
            grid,
            KernelHyper::default(),
            &ObservationSet::new(),
            rounds,
        )?),
        _ => None,
    };
    let draw = |s: usize| -> [f64; 2] {
        let mut r = rng_from(seed, &[0, s as u64]);
        match user {
            UserSource::Inferred { posterior, .. } | UserSource::Fixed { posterior, .. } => sample_params(posterior, &mut r),
            UserSource::Known(state) => [state.params.alpha, state.params.beta],
        }
    };
    let samples: Vec<Sample> = (0..n_samples)
        .into_par_iter()
        .map_init(Scratch::default, |sc, s| -> Result<Sample> {
            let [alpha, beta] = draw(s);
            let (m, v) = match (&replay, user) {
                (Some(cache), _) => {
                    let b = cache.reconstruct(alpha)?;
                    (b.mean_field().to_vec(), b.var_field().to_vec())
                }
                (None, UserSource::Fixed { belief, .. }) => (belief.mean_field().to_vec(), belief.var_field().to_vec()),
                (None, UserSource::Known(state)) => (state.belief.mean_field().to_vec(), state.belief.var_field().to_vec()),
                (None, UserSource::Inferred { .. }) => unreachable!("inferred users carry a replay cache"),
            };
            Ok(ctx.sample(alpha, beta, m, v, sc))
        })
        .collect::<Result<_>>()?;

    let nx = grid.nx();
    let sums: Vec<f64> = (0..n_samples * nx)
        .into_par_iter()
        .map_init(Scratch::default, |sc, job| {
            let (s, x) = (job / nx, job % nx);
            let smp = &samples[s];
            if cfg.horizon == 1 {
                return smp.r0[x] * cfg.n_rollouts_per_action as f64;
            }
            (0..cfg.n_rollouts_per_action)
                .map(|r| {
                    let mut rr = rng_from(derive_seed(seed, &[1, s as u64, x as u64, r as u64]), &[]);
                    ctx.rollout(smp, x, &mut rr, sc)
                })
                .sum()
        })
        .collect();

    let denom = (n_samples * cfg.n_rollouts_per_action) as f64;
    let values: Vec<f64> = (0..nx)
        .map(|x| (0..n_samples).map(|s| sums[s * nx + x]).sum::<f64>() / denom)
        .collect();
    let ix = crate::user_model::argmax(&values);
    Ok(PlanOutput { ix, values })
}
