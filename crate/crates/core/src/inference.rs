//! Online inference of the user's conservatism and explorativeness.
//!
//! The posterior over `(α, β)` under a uniform prior on the unit square is
//! approximated by a Gaussian at the MAP whose covariance is the inverse of
//! the negative Hessian of the log posterior.

use nalgebra::Matrix2;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::gp::{GpBelief, KernelHyper};
use crate::grid::{GridDomain, Observation, ObservationSet};
use crate::optim::{bfgs, BfgsOptions};
use crate::user_model::ReplayCache;

const LOGIT_BOUND: f64 = 9.0;
const HESSIAN_STEP: f64 = 1e-4;
const MAX_REJECTIONS: usize = 100;

/// Laplace posterior over `(α, β)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamPosterior {
    pub map: [f64; 2],
    pub covariance: [[f64; 2]; 2],
    /// Log posterior (up to a constant) at the MAP.
    pub log_evidence_at_map: f64,
    pub degenerate: bool,
}

impl ParamPosterior {
    /// The prior: uniform on the unit square.
    pub fn uniform() -> Self {
        Self {
            map: [0.5, 0.5],
            covariance: [[1.0 / 12.0, 0.0], [0.0, 1.0 / 12.0]],
            log_evidence_at_map: 0.0,
            degenerate: true,
        }
    }

    /// A point mass at `(α, β)`.
    pub fn point(alpha: f64, beta: f64) -> Self {
        Self {
            map: [alpha, beta],
            covariance: [[0.0; 2]; 2],
            log_evidence_at_map: 0.0,
            degenerate: false,
        }
    }
}

/// Log posterior of `(α, β)`; the uniform prior contributes a constant zero.
pub fn log_posterior(cache: &ReplayCache, alpha: f64, beta: f64, sigma: f64) -> Result<f64> {
    cache.loglik(alpha, beta, sigma)
}

/// Log posterior and its gradient with respect to `(α, β)`.
pub fn log_posterior_with_gradient(cache: &ReplayCache, alpha: f64, beta: f64, sigma: f64) -> Result<(f64, [f64; 2])> {
    cache.loglik_with_gradient(alpha, beta, sigma)
}

fn sigmoid(u: f64) -> f64 {
    1.0 / (1.0 + (-u).exp())
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Fits the Laplace posterior to the observed rounds. The user model replays
/// the rounds from `user_prior` with default kernel hyperparameters.
pub fn fit_laplace(grid: GridDomain, rounds: &[Observation], user_prior: &ObservationSet, sigma: f64) -> Result<ParamPosterior> {
    if rounds.is_empty() {
        return Ok(ParamPosterior::uniform());
    }
    let cache = ReplayCache::new(grid, KernelHyper::default(), user_prior, rounds)?;
    fit_laplace_cached(&cache, sigma)
}

pub fn fit_laplace_cached(cache: &ReplayCache, sigma: f64) -> Result<ParamPosterior> {
    if cache.n_rounds() == 0 {
        return Ok(ParamPosterior::uniform());
    }
    let to_params = |u: &[f64]| {
        [
            sigmoid(u[0].clamp(-LOGIT_BOUND, LOGIT_BOUND)),
            sigmoid(u[1].clamp(-LOGIT_BOUND, LOGIT_BOUND)),
        ]
    };
    let f = |u: &[f64]| {
        let p = to_params(u);
        match cache.loglik(p[0], p[1], sigma) {
            Ok(v) => -v,
            Err(_) => f64::INFINITY,
        }
    };
    let grad = |u: &[f64]| {
        let p = to_params(u);
        match cache.loglik_with_gradient(p[0], p[1], sigma) {
            Ok((_, g)) => (0..2)
                .map(|i| {
                    if u[i].abs() >= LOGIT_BOUND && u[i].signum() * g[i] > 0.0 {
                        0.0
                    } else {
                        -g[i] * p[i] * (1.0 - p[i])
                    }
                })
                .collect(),
            Err(_) => vec![0.0, 0.0],
        }
    };
    let opts = BfgsOptions {
        max_iter: 60,
        grad_tol: 1e-6,
        f_tol: 1e-10,
    };
    let mut best: Option<([f64; 2], f64)> = None;
    for start in [[0.1, 0.1], [0.1, 0.9], [0.9, 0.1], [0.9, 0.9]] {
        let u0 = [logit(start[0]), logit(start[1])];
        let m = bfgs(f, grad, &u0, opts);
        let p = to_params(&m.x);
        let val = cache.loglik(p[0], p[1], sigma)?;
        if best.is_none_or(|(_, b)| val > b) {
            best = Some((p, val));
        }
    }
    let (map, value) = best.expect("at least one start");
    let hessian = hessian_at(cache, map, sigma)?;
    let neg = -hessian;
    let (covariance, degenerate) = match neg.cholesky() {
        Some(ch) => {
            let inv = ch.inverse();
            ([[inv[(0, 0)], inv[(0, 1)]], [inv[(1, 0)], inv[(1, 1)]]], false)
        }
        None => ([[0.0; 2]; 2], true),
    };
    Ok(ParamPosterior {
        map,
        covariance,
        log_evidence_at_map: value,
        degenerate,
    })
}

/// Central differences of the analytic gradient, symmetrized.
fn hessian_at(cache: &ReplayCache, p: [f64; 2], sigma: f64) -> Result<Matrix2<f64>> {
    let mut h = Matrix2::zeros();
    for i in 0..2 {
        let room = p[i].min(1.0 - p[i]);
        let step = HESSIAN_STEP.min(0.5 * room).max(1e-7);
        let mut lo = p;
        let mut hi = p;
        lo[i] = (p[i] - step).max(0.0);
        hi[i] = (p[i] + step).min(1.0);
        let (_, g_hi) = cache.loglik_with_gradient(hi[0], hi[1], sigma)?;
        let (_, g_lo) = cache.loglik_with_gradient(lo[0], lo[1], sigma)?;
        let width = hi[i] - lo[i];
        for j in 0..2 {
            h[(j, i)] = (g_hi[j] - g_lo[j]) / width;
        }
    }
    Ok(0.5 * (h + h.transpose()))
}

/// Draws `(α, β)` from the Laplace Gaussian truncated to the unit square.
/// A degenerate posterior yields a uniform draw.
pub fn sample_params<R: Rng + ?Sized>(post: &ParamPosterior, rng: &mut R) -> [f64; 2] {
    if post.degenerate {
        return [rng.random::<f64>(), rng.random::<f64>()];
    }
    let c = post.covariance;
    // lower Cholesky factor of a PSD 2x2 matrix
    let l11 = c[0][0].max(0.0).sqrt();
    let l21 = if l11 > 0.0 { c[1][0] / l11 } else { 0.0 };
    let l22 = (c[1][1] - l21 * l21).max(0.0).sqrt();
    let mut draw = post.map;
    for _ in 0..MAX_REJECTIONS {
        let e0: f64 = rng.sample(StandardNormal);
        let e1: f64 = rng.sample(StandardNormal);
        draw = [post.map[0] + l11 * e0, post.map[1] + l21 * e0 + l22 * e1];
        if draw.iter().all(|v| (0.0..=1.0).contains(v)) {
            return draw;
        }
    }
    [draw[0].clamp(0.0, 1.0), draw[1].clamp(0.0, 1.0)]
}

/// The user belief implied by `α`: the flat prior folded through every round
/// with conservative updates. The user's own prior knowledge is ignored.
pub fn reconstruct_user_belief(grid: GridDomain, alpha: f64, rounds: &[Observation]) -> Result<GpBelief> {
    ReplayCache::new(grid, KernelHyper::default(), &ObservationSet::new(), rounds)?.reconstruct(alpha)
}
