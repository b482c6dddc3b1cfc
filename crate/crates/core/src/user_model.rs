//! The computationally rational user: conservative belief updating, UCB
//! acquisition over one column, noisy-argmax decisions and the comparative
//! judgment likelihood of those decisions.

use std::f64::consts::SQRT_2;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gp::{GpBelief, KernelHyper, PRIOR_MEAN};
use crate::grid::{GridDomain, Observation, ObservationSet};
use crate::stats::{inv_mills, log_norm_sf};

/// Default decision-noise scale in acquisition units.
pub const DEFAULT_SIGMA: f64 = 1.0;

/// Floor applied to a single choice probability.
pub const MIN_LIKELIHOOD: f64 = 1e-300;

// ln(1 - Φ(z)) is zero to double precision below this
const SF_NEGLIGIBLE: f64 = -8.5;
// a candidate this many scaled units below the row max has relative mass < 1e-30
const GAP_NEGLIGIBLE: f64 = 12.0;
// Candidates this far below the best log weight carry under 1e-17 of the mass.
const LOG_MASS_NEGLIGIBLE: f64 = 40.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct UserParams {
    /// Conservatism: weight on the previous belief at every update.
    pub alpha: f64,
    /// Explorativeness: weight on the posterior standard deviation.
    pub beta: f64,
    /// Decision-noise scale.
    #[serde(default = "default_sigma")]
    pub sigma: f64,
}

fn default_sigma() -> f64 {
    DEFAULT_SIGMA
}

impl UserParams {
    pub fn new(alpha: f64, beta: f64, sigma: f64) -> Result<Self> {
        let p = Self { alpha, beta, sigma };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        check_unit("alpha", self.alpha)?;
        check_unit("beta", self.beta)?;
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(Error::InvalidParameter(format!("sigma = {} must be >= 0", self.sigma)));
        }
        Ok(())
    }
}

pub(crate) fn check_unit(name: &str, v: f64) -> Result<()> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("{name} = {v} outside [0, 1]")))
    }
}

/// A user's belief over the objective together with their parameters.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct UserState {
    pub belief: GpBelief,
    pub params: UserParams,
}

/// UCB scores of one column.
#[derive(Clone, Debug, PartialEq)]
pub struct AcquisitionRow {
    pub ix: usize,
    pub values: Vec<f64>,
}

/// Mixes the current belief with its Bayes update on `obs`:
/// `α·old + (1−α)·bayes` for both the mean and the variance field.
///
/// The Bayes update is a rank-one update of the current fields using the
/// exact posterior covariance of the belief's data record. For a belief that
/// has never been mixed this equals refitting on the data plus `obs`.
pub fn conservative_update(belief: &GpBelief, obs: Observation, alpha: f64) -> Result<GpBelief> {
    check_unit("alpha", alpha)?;
    let grid = belief.grid();
    crate::grid::validate_observation(&grid, &obs)?;
    let exact = belief.exact()?;
    let p = grid.index(obs.ix, obs.iy);
    let kc = exact.cross_cov(p);
    let s = kc[p] + belief.hyper().diag_noise();
    let weight = 1.0 - alpha;
    let resid = obs.z - belief.mean_field()[p];
    let mean: Vec<f64> = belief
        .mean_field()
        .iter()
        .zip(&kc)
        .map(|(m, k)| m + weight * k / s * resid)
        .collect();
    let var: Vec<f64> = belief
        .var_field()
        .iter()
        .zip(&kc)
        .map(|(v, k)| (v - weight * k * k / s).max(0.0))
        .collect();
    let data = belief.data().chained(&[obs]);
    let mixed = belief.is_mixed() || alpha > 0.0;
    Ok(GpBelief::from_parts(grid, belief.hyper(), data, mean, var, mixed))
}

/// UCB row `mean + β·sd` of column `ix`.
pub fn acquisition(belief: &GpBelief, ix: usize, beta: f64) -> Result<AcquisitionRow> {
    let grid = belief.grid();
    grid.check(ix, 0)?;
    check_unit("beta", beta)?;
    let values = (0..grid.ny())
        .map(|iy| belief.mean(ix, iy) + beta * belief.var(ix, iy).sqrt())
        .collect();
    Ok(AcquisitionRow { ix, values })
}

/// Index of the largest value, lowest index on ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Noisy argmax: each value is perturbed by independent `N(0, σ²)` noise.
pub fn simulate_choice<R: Rng + ?Sized>(values: &[f64], sigma: f64, rng: &mut R) -> usize {
    if sigma <= 0.0 {
        return argmax(values);
    }
    let mut best = 0;
    let mut best_v = f64::NEG_INFINITY;
    for (i, &v) in values.iter().enumerate() {
        let w: f64 = rng.sample(StandardNormal);
        let noisy = v + sigma * w;
        if noisy > best_v {
            best = i;
            best_v = noisy;
        }
    }
    best
}

fn check_choice(values: &[f64], chosen: usize, sigma: f64) -> Result<()> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidParameter(format!("sigma = {sigma} must be > 0")));
    }
    if chosen >= values.len() {
        return Err(Error::InvalidParameter(format!("choice {chosen} outside a row of {}", values.len())));
    }
    Ok(())
}

/// Log of the comparative-judgment probability that `chosen` is preferred to
/// every other entry: `Σ_{i≠c} ln(1 − Φ((A_i − A_c) / (σ√2)))`, floored at
/// `ln(1e-300)`.
pub fn choice_log_likelihood(values: &[f64], chosen: usize, sigma: f64) -> Result<f64> {
    check_choice(values, chosen, sigma)?;
    let s = sigma * SQRT_2;
    let vc = values[chosen];
    let total: f64 = values
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != chosen)
        .map(|(_, &v)| log_norm_sf((v - vc) / s))
        .sum();
    Ok(total.max(MIN_LIKELIHOOD.ln()))
}

pub fn choice_likelihood(values: &[f64], chosen: usize, sigma: f64) -> Result<f64> {
    Ok(choice_log_likelihood(values, chosen, sigma)?.exp().min(1.0))
}

/// The comparative-judgment probabilities of every entry, renormalized to sum
/// to one. With `σ = 0` all mass sits on the argmax.
pub fn choice_distribution(values: &[f64], sigma: f64) -> Vec<f64> {
    let mut out = vec![0.0; values.len()];
    choice_distribution_into(values, sigma, &mut Vec::new(), &mut out, log_norm_sf);
    out
}

/// Allocation-free form of [`choice_distribution`] with a chosen `ln(1 − Φ)`
/// implementation; `order` is scratch space.
pub(crate) fn choice_distribution_into(
    values: &[f64],
    sigma: f64,
    order: &mut Vec<(f64, usize)>,
    out: &mut [f64],
    log_sf: impl Fn(f64) -> f64,
) {
    let n = values.len();
    out.fill(0.0);
    if n == 0 {
        return;
    }
    if sigma <= 0.0 {
        out[argmax(values)] = 1.0;
        return;
    }
    let s = sigma * SQRT_2;
    order.clear();
    order.extend(values.iter().copied().zip(0..n));
    order.sort_unstable_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    let top = order[0].0;
    let mut max_log = f64::NEG_INFINITY;
    let mut used = 0;
    for (pos, &(vc, c)) in order.iter().enumerate() {
        if (top - vc) / s > GAP_NEGLIGIBLE {
            break;
        }
        let mut acc = 0.0;
        for &(vi, _) in &order[..pos] {
            acc += log_sf((vi - vc) / s);
            if acc < max_log - LOG_MASS_NEGLIGIBLE {
                break;
            }
        }
        if acc >= max_log - LOG_MASS_NEGLIGIBLE {
            for &(vi, _) in &order[pos + 1..] {
                let z = (vi - vc) / s;
                if z < SF_NEGLIGIBLE {
                    break;
                }
                acc += log_sf(z);
            }
        }
        out[c] = acc;
        max_log = max_log.max(acc);
        used += 1;
    }
    let mut total = 0.0;
    for &(_, c) in &order[..used] {
        let p = (out[c] - max_log).exp();
        out[c] = p;
        total += p;
    }
    for &(_, c) in &order[..used] {
        out[c] /= total;
    }
}

/// Precomputed rank-one factors for replaying a trajectory through the
/// conservative user model.
///
/// Every step's update direction depends only on the observed locations and
/// the kernel, not on `α` or `β`. The cache stores them once so the
/// trajectory likelihood can be evaluated, with its gradient, for many
/// parameter values at little cost. The replay starts from the prior under
/// `hyper`, folds in `user_prior` with plain Bayes updates and then applies
/// the rounds conservatively.
#[derive(Clone, Debug)]
pub struct ReplayCache {
    grid: GridDomain,
    hyper: KernelHyper,
    n_prior: usize,
    steps: Vec<Observation>,
    /// `k_τ(·, p_τ) / √S_τ` over the whole grid, one row per step.
    u: Vec<Vec<f64>>,
    inv_sqrt_s: Vec<f64>,
    local_cells: Vec<usize>,
    local_u: Vec<Vec<f64>>,
    local_point: Vec<usize>,
    /// Local indices of each round's column, ordered by `iy`.
    round_cols: Vec<Vec<usize>>,
}

impl ReplayCache {
    pub fn new(grid: GridDomain, hyper: KernelHyper, user_prior: &ObservationSet, rounds: &[Observation]) -> Result<Self> {
        hyper.validate()?;
        let mut steps: Vec<Observation> = user_prior.as_slice().to_vec();
        for r in rounds {
            crate::grid::validate_observation(&grid, r)?;
        }
        steps.extend_from_slice(rounds);
        let kernel = crate::gp::GridKernel::new(&grid, &hyper);
        let cells = grid.len();
        let mut u: Vec<Vec<f64>> = Vec::with_capacity(steps.len());
        let mut inv_sqrt_s = Vec::with_capacity(steps.len());
        for o in &steps {
            let p = grid.index(o.ix, o.iy);
            let mut col: Vec<f64> = (0..cells).map(|c| kernel.k(grid.cell(c), (o.ix, o.iy))).collect();
            for prev in &u {
                let w = prev[p];
                for (slot, pv) in col.iter_mut().zip(prev) {
                    *slot -= pv * w;
                }
            }
            let s = col[p] + hyper.diag_noise();
            if !(s > 0.0) {
                return Err(Error::Numerical("non-positive predictive variance in replay".into()));
            }
            let r = 1.0 / s.sqrt();
            col.iter_mut().for_each(|v| *v *= r);
            u.push(col);
            inv_sqrt_s.push(r);
        }

        let n_prior = user_prior.len();
        let mut local_cells: Vec<usize> = Vec::new();
        for o in rounds {
            local_cells.extend((0..grid.ny()).map(|iy| grid.index(o.ix, iy)));
        }
        local_cells.extend(steps.iter().map(|o| grid.index(o.ix, o.iy)));
        local_cells.sort_unstable();
        local_cells.dedup();
        let local = |c: usize| local_cells.binary_search(&c).expect("cell in local set");
        let local_point = steps.iter().map(|o| local(grid.index(o.ix, o.iy))).collect();
        let round_cols = rounds
            .iter()
            .map(|o| (0..grid.ny()).map(|iy| local(grid.index(o.ix, iy))).collect())
            .collect();
        let local_u = u.iter().map(|row| local_cells.iter().map(|&c| row[c]).collect()).collect();
        Ok(Self {
            grid,
            hyper,
            n_prior,
            steps,
            u,
            inv_sqrt_s,
            local_cells,
            local_u,
            local_point,
            round_cols,
        })
    }

    pub fn grid(&self) -> GridDomain {
        self.grid
    }

    pub fn n_rounds(&self) -> usize {
        self.steps.len() - self.n_prior
    }

    pub fn rounds(&self) -> &[Observation] {
        &self.steps[self.n_prior..]
    }

    /// Log-likelihood of every round's choice.
    pub fn loglik(&self, alpha: f64, beta: f64, sigma: f64) -> Result<f64> {
        Ok(self.replay(alpha, beta, sigma, false)?.0)
    }

    /// Log-likelihood and its gradient with respect to `(α, β)`.
    pub fn loglik_with_gradient(&self, alpha: f64, beta: f64, sigma: f64) -> Result<(f64, [f64; 2])> {
        self.replay(alpha, beta, sigma, true)
    }

    fn replay(&self, alpha: f64, beta: f64, sigma: f64, grad: bool) -> Result<(f64, [f64; 2])> {
        check_unit("alpha", alpha)?;
        check_unit("beta", beta)?;
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::InvalidParameter(format!("sigma = {sigma} must be > 0")));
        }
        let n = self.local_cells.len();
        let mut m = vec![PRIOR_MEAN; n];
        let mut v = vec![self.hyper.signal_var; n];
        let mut dm = vec![0.0; if grad { n } else { 0 }];
        let mut dv = vec![0.0; if grad { n } else { 0 }];
        let s = sigma * SQRT_2;
        let floor = MIN_LIKELIHOOD.ln();
        let mut total = 0.0;
        let mut g = [0.0; 2];
        let ny = self.grid.ny();
        let mut a = vec![0.0; ny];
        let mut da = vec![0.0; ny];
        let mut db = vec![0.0; ny];
        let last = self.steps.len();

        for (t, obs) in self.steps.iter().enumerate() {
            let is_round = t >= self.n_prior;
            if is_round {
                let col = &self.round_cols[t - self.n_prior];
                for (j, &k) in col.iter().enumerate() {
                    let sd = v[k].max(0.0).sqrt();
                    a[j] = m[k] + beta * sd;
                    if grad {
                        db[j] = sd;
                        da[j] = dm[k] + if sd > 0.0 { beta * dv[k] / (2.0 * sd) } else { 0.0 };
                    }
                }
                let c = obs.iy;
                let mut ll = 0.0;
                let mut gl = [0.0; 2];
                for j in 0..ny {
                    if j == c {
                        continue;
                    }
                    let z = (a[j] - a[c]) / s;
                    ll += log_norm_sf(z);
                    if grad {
                        let w = -inv_mills(z) / s;
                        gl[0] += w * (da[j] - da[c]);
                        gl[1] += w * (db[j] - db[c]);
                    }
                }
                if ll < floor {
                    ll = floor;
                    gl = [0.0; 2];
                }
                total += ll;
                g[0] += gl[0];
                g[1] += gl[1];
            }
            if t + 1 == last {
                break;
            }
            let (weight, dweight) = if is_round { (1.0 - alpha, -1.0) } else { (1.0, 0.0) };
            let p = self.local_point[t];
            let r = self.inv_sqrt_s[t];
            let resid = obs.z - m[p];
            let u = &self.local_u[t];
            if grad {
                let dresid = -dm[p];
                for k in 0..n {
                    let gk = u[k] * r;
                    m[k] += weight * gk * resid;
                    dm[k] += dweight * gk * resid + weight * gk * dresid;
                    v[k] -= weight * u[k] * u[k];
                    dv[k] -= dweight * u[k] * u[k];
                }
            } else {
                for k in 0..n {
                    m[k] += weight * u[k] * r * resid;
                    v[k] -= weight * u[k] * u[k];
                }
            }
        }
        Ok((total, g))
    }

    /// The user belief after every step, with conservatism `α` on the rounds.
    pub fn reconstruct(&self, alpha: f64) -> Result<GpBelief> {
        check_unit("alpha", alpha)?;
        let cells = self.grid.len();
        let mut m = vec![PRIOR_MEAN; cells];
        let mut v = vec![self.hyper.signal_var; cells];
        for (t, obs) in self.steps.iter().enumerate() {
            let weight = if t >= self.n_prior { 1.0 - alpha } else { 1.0 };
            let p = self.grid.index(obs.ix, obs.iy);
            let r = self.inv_sqrt_s[t];
            let resid = obs.z - m[p];
            for ((mk, vk), uk) in m.iter_mut().zip(v.iter_mut()).zip(&self.u[t]) {
                *mk += weight * uk * r * resid;
                *vk -= weight * uk * uk;
            }
        }
        v.iter_mut().for_each(|x| *x = x.max(0.0));
        let data = ObservationSet::from_vec(&self.grid, self.steps.clone())?;
        let mixed = alpha > 0.0 && self.n_rounds() > 0;
        Ok(GpBelief::from_parts(self.grid, self.hyper, data, m, v, mixed))
    }
}

/// Log-likelihood of a trajectory of choices under `(α, β, σ)`, replayed from
/// the prior belief with default kernel hyperparameters after `user_prior`.
pub fn replay_loglik(
    grid: GridDomain,
    alpha: f64,
    beta: f64,
    sigma: f64,
    rounds: &[Observation],
    user_prior: &ObservationSet,
) -> Result<f64> {
    ReplayCache::new(grid, KernelHyper::default(), user_prior, rounds)?.loglik(alpha, beta, sigma)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from;

    fn grid() -> GridDomain {
        GridDomain::new(50, 50).unwrap()
    }

    fn some_belief(seed: u64, n: usize) -> GpBelief {
        let g = grid();
        let mut rng = rng_from(seed, &[]);
        let obs = (0..n)
            .map(|_| Observation {
                ix: rng.random_range(0..50),
                iy: rng.random_range(0..50),
                z: rng.random_range(0.0..100.0),
            })
            .collect();
        GpBelief::with_hyper(g, KernelHyper::default(), &ObservationSet::from_vec(&g, obs).unwrap()).unwrap()
    }

    #[test]
    fn full_conservatism_keeps_fields() {
        let b = some_belief(1, 4);
        let u = conservative_update(&b, Observation { ix: 3, iy: 4, z: 90.0 }, 1.0).unwrap();
        assert_eq!(u.mean_field(), b.mean_field());
        assert_eq!(u.var_field(), b.var_field());
        assert_eq!(u.data().len(), 5);
        assert!(u.is_mixed());
    }

    #[test]
    fn zero_conservatism_is_bayes_refit() {
        let b = some_belief(2, 5);
        let obs = Observation { ix: 30, iy: 12, z: 64.0 };
        let u = conservative_update(&b, obs, 0.0).unwrap();
        let refit = b.bayes_update(obs).unwrap();
        for (x, y) in u.mean_field().iter().zip(refit.mean_field()) {
            assert!((x - y).abs() < 1e-8);
        }
        for (x, y) in u.var_field().iter().zip(refit.var_field()) {
            assert!((x - y).abs() < 1e-8);
        }
        assert!(!u.is_mixed());
    }

    #[test]
    fn half_conservatism_averages() {
        let b = some_belief(3, 3);
        let obs = Observation { ix: 10, iy: 40, z: 20.0 };
        let u0 = conservative_update(&b, obs, 0.0).unwrap();
        let u1 = conservative_update(&b, obs, 1.0).unwrap();
        let h = conservative_update(&b, obs, 0.5).unwrap();
        for c in 0..grid().len() {
            let want = 0.5 * (u0.mean_field()[c] + u1.mean_field()[c]);
            assert!((h.mean_field()[c] - want).abs() < 1e-9);
        }
        assert!(conservative_update(&b, obs, 1.5).is_err());
    }

    #[test]
    fn acquisition_rows() {
        let g = grid();
        let mut mean = vec![0.0; g.len()];
        let mut var = vec![1.0; g.len()];
        mean[g.index(4, 7)] = 2.0;
        var[g.index(4, 7)] = 4.0;
        let b = GpBelief::from_fields(g, KernelHyper::default(), ObservationSet::new(), mean, var).unwrap();
        let row = acquisition(&b, 4, 0.5).unwrap();
        assert_eq!(row.values[7], 3.0);
        let flat = acquisition(&b, 4, 0.0).unwrap();
        assert_eq!(flat.values[7], 2.0);
        let more = acquisition(&b, 4, 0.9).unwrap();
        assert!(more.values.iter().zip(&row.values).all(|(a, b)| a > b));
    }

    #[test]
    fn noiseless_choice_is_argmax_with_low_tie_break() {
        let mut rng = rng_from(0, &[]);
        assert_eq!(simulate_choice(&[1.0, 3.0, 2.0, 3.0], 0.0, &mut rng), 1);
    }

    #[test]
    fn equal_values_give_half_per_factor() {
        let p = choice_likelihood(&[4.0, 4.0], 0, 1.0).unwrap();
        assert!((p - 0.5).abs() < 1e-15);
    }

    #[test]
    fn sharp_unique_max_has_likelihood_one() {
        let p = choice_likelihood(&[1.0, 2.0, 5.0, 0.0], 2, 1e-6).unwrap();
        assert!(p >= 1.0 - 1e-9);
        assert!(choice_likelihood(&[1.0], 0, 0.0).is_err());
    }

    #[test]
    fn distribution_matches_brute_force_normalization() {
        let values = [3.0, 1.0, 2.5, 3.2, -1.0, 10.0, 9.0];
        let q = choice_distribution(&values, 2.0);
        let raw: Vec<f64> = (0..values.len()).map(|c| choice_likelihood(&values, c, 2.0).unwrap()).collect();
        let total: f64 = raw.iter().sum();
        for (a, b) in q.iter().zip(&raw) {
            assert!((a - b / total).abs() < 1e-12);
        }
        let flat = choice_distribution(&[7.0; 50], 1.0);
        assert!(flat.iter().all(|&p| (p - 0.02).abs() < 1e-12));
    }

    #[test]
    fn replay_matches_sequential_updates() {
        let g = grid();
        let mut rng = rng_from(9, &[]);
        let rounds: Vec<Observation> = (0..8)
            .map(|_| Observation {
                ix: rng.random_range(0..50),
                iy: rng.random_range(0..50),
                z: rng.random_range(0.0..100.0),
            })
            .collect();
        let prior = ObservationSet::from_vec(&g, vec![Observation { ix: 1, iy: 2, z: 70.0 }]).unwrap();
        let alpha = 0.35;
        let beta = 0.6;
        let cache = ReplayCache::new(g, KernelHyper::default(), &prior, &rounds).unwrap();

        let mut b = GpBelief::with_hyper(g, KernelHyper::default(), &prior).unwrap();
        let mut ll = 0.0;
        for r in &rounds {
            let row = acquisition(&b, r.ix, beta).unwrap();
            ll += choice_log_likelihood(&row.values, r.iy, 1.0).unwrap();
            b = conservative_update(&b, *r, alpha).unwrap();
        }
        let cached = cache.loglik(alpha, beta, 1.0).unwrap();
        assert!((cached - ll).abs() < 1e-7 * ll.abs().max(1.0), "{cached} vs {ll}");
        let rec = cache.reconstruct(alpha).unwrap();
        for (x, y) in rec.mean_field().iter().zip(b.mean_field()) {
            assert!((x - y).abs() < 1e-7);
        }
        for (x, y) in rec.var_field().iter().zip(b.var_field()) {
            assert!((x - y).abs() < 1e-7);
        }
    }

    #[test]
    fn replay_of_nothing_is_zero() {
        let g = grid();
        assert_eq!(replay_loglik(g, 0.3, 0.3, 1.0, &[], &ObservationSet::new()).unwrap(), 0.0);
    }
}
