//! Gaussian-process regression on the grid with a squared-exponential kernel.
//!
//! Beliefs cache their posterior mean and variance at every cell. Beliefs that
//! went through a conservative (mixing) update keep their fields but are
//! flagged as mixed: their fields are no longer the exact posterior of their
//! data record.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{GridDomain, Observation, ObservationSet};
use crate::optim::{bfgs, central_gradient, BfgsOptions};

/// Constant prior mean of every belief, the midpoint of the normalized range.
pub const PRIOR_MEAN: f64 = 50.0;

/// Diagonal jitter, relative to the signal variance.
pub const JITTER_REL: f64 = 1e-6;

/// Default number of posterior draws for max-distribution estimates.
pub const DEFAULT_MAX_SAMPLES: usize = 200;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelHyper {
    pub lengthscale_x: f64,
    pub lengthscale_y: f64,
    pub signal_var: f64,
    pub obs_noise_var: f64,
}

impl Default for KernelHyper {
    fn default() -> Self {
        Self {
            lengthscale_x: 0.15,
            lengthscale_y: 0.15,
            signal_var: 25.0 * 25.0,
            obs_noise_var: 1.0,
        }
    }
}

impl KernelHyper {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lengthscale_x > 0.0
            && self.lengthscale_y > 0.0
            && self.signal_var > 0.0
            && self.obs_noise_var >= 0.0
            && [self.lengthscale_x, self.lengthscale_y, self.signal_var, self.obs_noise_var]
                .iter()
                .all(|v| v.is_finite());
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!("kernel hyperparameters {self:?}")))
        }
    }

    pub fn jitter(&self) -> f64 {
        JITTER_REL * self.signal_var
    }

    /// Observation noise plus jitter, the value added to the kernel diagonal.
    pub fn diag_noise(&self) -> f64 {
        self.obs_noise_var + self.jitter()
    }
}

/// Squared-exponential kernel tabulated by cell offset.
#[derive(Clone, Debug)]
pub(crate) struct GridKernel {
    kx: Vec<f64>,
    ky: Vec<f64>,
    signal_var: f64,
}

impl GridKernel {
    pub(crate) fn new(grid: &GridDomain, hyper: &KernelHyper) -> Self {
        let table = |n: usize, ls: f64| {
            let step = 1.0 / (n - 1) as f64;
            (0..n)
                .map(|d| {
                    let r = d as f64 * step;
                    (-(r * r) / (2.0 * ls * ls)).exp()
                })
                .collect::<Vec<f64>>()
        };
        Self {
            kx: table(grid.nx(), hyper.lengthscale_x),
            ky: table(grid.ny(), hyper.lengthscale_y),
            signal_var: hyper.signal_var,
        }
    }

    #[inline]
    pub(crate) fn k(&self, a: (usize, usize), b: (usize, usize)) -> f64 {
        self.signal_var * self.kx[a.0.abs_diff(b.0)] * self.ky[a.1.abs_diff(b.1)]
    }
}

fn kernel_matrix(kernel: &GridKernel, pts: &[(usize, usize)], diag: f64) -> DMatrix<f64> {
    let n = pts.len();
    DMatrix::from_fn(n, n, |i, j| kernel.k(pts[i], pts[j]) + if i == j { diag } else { 0.0 })
}

/// Exact GP posterior of a data record under fixed hyperparameters, with the
/// whitened cross-covariances needed for rank-one updates.
#[derive(Clone, Debug)]
pub struct ExactPosterior {
    grid: GridDomain,
    hyper: KernelHyper,
    kernel: GridKernel,
    points: Vec<(usize, usize)>,
    /// Column `c` holds `L⁻¹ k(D, c)`.
    whitened: DMatrix<f64>,
    mean: Vec<f64>,
    var: Vec<f64>,
}

impl ExactPosterior {
    pub fn new(grid: GridDomain, hyper: KernelHyper, data: &[Observation]) -> Result<Self> {
        hyper.validate()?;
        for o in data {
            crate::grid::validate_observation(&grid, o)?;
        }
        let kernel = GridKernel::new(&grid, &hyper);
        let points: Vec<(usize, usize)> = data.iter().map(|o| (o.ix, o.iy)).collect();
        let n = points.len();
        let cells = grid.len();
        if n == 0 {
            return Ok(Self {
                grid,
                hyper,
                kernel,
                points,
                whitened: DMatrix::zeros(0, cells),
                mean: vec![PRIOR_MEAN; cells],
                var: vec![hyper.signal_var; cells],
            });
        }
        let chol = kernel_matrix(&kernel, &points, hyper.diag_noise())
            .cholesky()
            .ok_or_else(|| Error::Numerical("kernel matrix is not positive definite".into()))?;
        let resid = DVector::from_iterator(n, data.iter().map(|o| o.z - PRIOR_MEAN));
        let alpha = chol.solve(&resid);
        let cross = DMatrix::from_fn(n, cells, |i, c| kernel.k(points[i], grid.cell(c)));
        let whitened = chol
            .l_dirty()
            .solve_lower_triangular(&cross)
            .ok_or_else(|| Error::Numerical("triangular solve failed".into()))?;
        let mut mean = Vec::with_capacity(cells);
        let mut var = Vec::with_capacity(cells);
        for c in 0..cells {
            mean.push(PRIOR_MEAN + cross.column(c).dot(&alpha));
            let w = whitened.column(c);
            var.push((hyper.signal_var - w.dot(&w)).max(0.0));
        }
        Ok(Self {
            grid,
            hyper,
            kernel,
            points,
            whitened,
            mean,
            var,
        })
    }

    pub fn grid(&self) -> GridDomain {
        self.grid
    }

    pub fn hyper(&self) -> KernelHyper {
        self.hyper
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn var(&self) -> &[f64] {
        &self.var
    }

    /// Posterior covariance between every cell and cell `p`, written into `out`.
    pub fn cross_cov_into(&self, p: usize, out: &mut [f64]) {
        let (px, py) = self.grid.cell(p);
        let ny = self.grid.ny();
        let ky: Vec<f64> = (0..ny).map(|iy| self.kernel.ky[iy.abs_diff(py)]).collect();
        for (ix, row) in out.chunks_exact_mut(ny).enumerate() {
            let kx = self.kernel.signal_var * self.kernel.kx[ix.abs_diff(px)];
            for (slot, k) in row.iter_mut().zip(&ky) {
                *slot = kx * k;
            }
        }
        if !self.points.is_empty() {
            let wp = self.whitened.column(p).clone_owned();
            let mut view = nalgebra::DVectorViewMut::from_slice(out, self.grid.len());
            view.gemv_tr(-1.0, &self.whitened, &wp, 1.0);
        }
    }

    pub fn cross_cov(&self, p: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.grid.len()];
        self.cross_cov_into(p, &mut out);
        out
    }
}

/// Log marginal likelihood of the data under `hyper` (constant prior mean).
pub fn log_marginal_likelihood(grid: &GridDomain, hyper: &KernelHyper, data: &[Observation]) -> Result<f64> {
    hyper.validate()?;
    let n = data.len();
    if n == 0 {
        return Ok(0.0);
    }
    let kernel = GridKernel::new(grid, hyper);
    let points: Vec<(usize, usize)> = data.iter().map(|o| (o.ix, o.iy)).collect();
    let chol = kernel_matrix(&kernel, &points, hyper.diag_noise())
        .cholesky()
        .ok_or_else(|| Error::Numerical("kernel matrix is not positive definite".into()))?;
    let resid = DVector::from_iterator(n, data.iter().map(|o| o.z - PRIOR_MEAN));
    let alpha = chol.solve(&resid);
    let log_det_half: f64 = chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum();
    Ok(-0.5 * resid.dot(&alpha) - log_det_half - 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln())
}

// log-space box for hyperparameter search: lx, ly, signal var, noise var
const HYPER_LO: [f64; 4] = [0.02, 0.02, 1.0, 1e-3];
const HYPER_HI: [f64; 4] = [2.0, 2.0, 1e5, 1e3];

fn hyper_from_unconstrained(u: &[f64]) -> KernelHyper {
    let p: Vec<f64> = (0..4)
        .map(|i| {
            let s = 1.0 / (1.0 + (-u[i]).exp());
            let (lo, hi) = (HYPER_LO[i].ln(), HYPER_HI[i].ln());
            (lo + s * (hi - lo)).exp()
        })
        .collect();
    KernelHyper {
        lengthscale_x: p[0],
        lengthscale_y: p[1],
        signal_var: p[2],
        obs_noise_var: p[3],
    }
}

fn unconstrained_from_hyper(h: &KernelHyper) -> Vec<f64> {
    [h.lengthscale_x, h.lengthscale_y, h.signal_var, h.obs_noise_var]
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let (lo, hi) = (HYPER_LO[i].ln(), HYPER_HI[i].ln());
            let s = ((v.ln() - lo) / (hi - lo)).clamp(1e-6, 1.0 - 1e-6);
            (s / (1.0 - s)).ln()
        })
        .collect()
}

/// Maximizes the log marginal likelihood from four starting points. The
/// defaults are kept whenever no start improves on them.
pub fn fit_hyperparameters(grid: &GridDomain, data: &[Observation]) -> KernelHyper {
    let default = KernelHyper::default();
    let Ok(default_lml) = log_marginal_likelihood(grid, &default, data) else {
        return default;
    };
    let n = data.len() as f64;
    let zmean = data.iter().map(|o| o.z).sum::<f64>() / n.max(1.0);
    let zvar = (data.iter().map(|o| (o.z - zmean).powi(2)).sum::<f64>() / n.max(1.0)).max(1.0);
    let starts = [
        default,
        KernelHyper { lengthscale_x: 0.05, lengthscale_y: 0.05, signal_var: zvar, obs_noise_var: 1.0 },
        KernelHyper { lengthscale_x: 0.4, lengthscale_y: 0.4, signal_var: zvar, obs_noise_var: 1.0 },
        KernelHyper { obs_noise_var: 25.0, ..default },
    ];
    let objective = |u: &[f64]| match log_marginal_likelihood(grid, &hyper_from_unconstrained(u), data) {
        Ok(v) => -v,
        Err(_) => f64::INFINITY,
    };
    let opts = BfgsOptions {
        max_iter: 80,
        grad_tol: 1e-5,
        f_tol: 1e-10,
    };
    let mut best = (default_lml, default);
    for start in &starts {
        let m = bfgs(objective, |u| central_gradient(objective, u, 1e-5), &unconstrained_from_hyper(start), opts);
        if m.f.is_finite() && -m.f > best.0 {
            best = (-m.f, hyper_from_unconstrained(&m.x));
        }
    }
    best.1
}

/// A Gaussian belief over the objective on every grid cell.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GpBelief {
    grid: GridDomain,
    hyper: KernelHyper,
    data: ObservationSet,
    mean: Vec<f64>,
    var: Vec<f64>,
    mixed: bool,
}

impl GpBelief {
    /// The prior: constant mean and full signal variance everywhere.
    pub fn prior(grid: GridDomain, hyper: KernelHyper) -> Self {
        Self {
            grid,
            hyper,
            data: ObservationSet::new(),
            mean: vec![PRIOR_MEAN; grid.len()],
            var: vec![hyper.signal_var; grid.len()],
            mixed: false,
        }
    }

    /// GP regression on `data`. With `fit_hypers` and at least three points
    /// the kernel is fitted by marginal likelihood, otherwise defaults apply.
    pub fn fit(grid: GridDomain, data: &ObservationSet, fit_hypers: bool) -> Result<Self> {
        for o in data {
            crate::grid::validate_observation(&grid, o)?;
        }
        let hyper = if fit_hypers && data.len() >= 3 {
            fit_hyperparameters(&grid, data.as_slice())
        } else {
            KernelHyper::default()
        };
        Self::with_hyper(grid, hyper, data)
    }

    /// Exact posterior on `data` under fixed hyperparameters.
    pub fn with_hyper(grid: GridDomain, hyper: KernelHyper, data: &ObservationSet) -> Result<Self> {
        let exact = ExactPosterior::new(grid, hyper, data.as_slice())?;
        Ok(Self {
            grid,
            hyper,
            data: data.clone(),
            mean: exact.mean,
            var: exact.var,
            mixed: false,
        })
    }

    /// A belief with explicit fields that are not re-derivable from `data`.
    pub fn from_fields(
        grid: GridDomain,
        hyper: KernelHyper,
        data: ObservationSet,
        mean: Vec<f64>,
        mut var: Vec<f64>,
    ) -> Result<Self> {
        hyper.validate()?;
        if mean.len() != grid.len() || var.len() != grid.len() {
            return Err(Error::InvalidParameter("field length does not match grid".into()));
        }
        if mean.iter().chain(var.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("non-finite field value".into()));
        }
        for v in &mut var {
            if *v < -1e-9 {
                return Err(Error::InvalidParameter(format!("negative variance {v}")));
            }
            *v = v.max(0.0);
        }
        Ok(Self {
            grid,
            hyper,
            data,
            mean,
            var,
            mixed: true,
        })
    }

    pub fn grid(&self) -> GridDomain {
        self.grid
    }

    pub fn hyper(&self) -> KernelHyper {
        self.hyper
    }

    pub fn data(&self) -> &ObservationSet {
        &self.data
    }

    pub fn mean_field(&self) -> &[f64] {
        &self.mean
    }

    pub fn var_field(&self) -> &[f64] {
        &self.var
    }

    /// True when the fields come from a conservative mixing history.
    pub fn is_mixed(&self) -> bool {
        self.mixed
    }

    #[inline]
    pub fn mean(&self, ix: usize, iy: usize) -> f64 {
        self.mean[self.grid.index(ix, iy)]
    }

    #[inline]
    pub fn var(&self, ix: usize, iy: usize) -> f64 {
        self.var[self.grid.index(ix, iy)]
    }

    /// Cached posterior mean and variance at the given cells.
    pub fn posterior_at(&self, cells: &[(usize, usize)]) -> Result<(Vec<f64>, Vec<f64>)> {
        let mut means = Vec::with_capacity(cells.len());
        let mut vars = Vec::with_capacity(cells.len());
        for &(ix, iy) in cells {
            self.grid.check(ix, iy)?;
            means.push(self.mean(ix, iy));
            vars.push(self.var(ix, iy));
        }
        Ok((means, vars))
    }

    /// Exact posterior of this belief's data record and hyperparameters.
    pub fn exact(&self) -> Result<ExactPosterior> {
        ExactPosterior::new(self.grid, self.hyper, self.data.as_slice())
    }

    /// Bayes-optimal update: refit on the data record plus `obs`.
    pub fn bayes_update(&self, obs: Observation) -> Result<Self> {
        let mut data = self.data.clone();
        data.push(&self.grid, obs)?;
        Self::with_hyper(self.grid, self.hyper, &data)
    }

    pub(crate) fn from_parts(
        grid: GridDomain,
        hyper: KernelHyper,
        data: ObservationSet,
        mean: Vec<f64>,
        var: Vec<f64>,
        mixed: bool,
    ) -> Self {
        debug_assert_eq!(mean.len(), grid.len());
        debug_assert_eq!(var.len(), grid.len());
        Self {
            grid,
            hyper,
            data,
            mean,
            var,
            mixed,
        }
    }

    /// Flat index of the largest mean (lowest index on ties).
    pub fn argmax_mean(&self) -> usize {
        let mut best = 0;
        for (i, &m) in self.mean.iter().enumerate() {
            if m > self.mean[best] {
                best = i;
            }
        }
        best
    }
}

fn chol_with_retry(mut m: DMatrix<f64>, base_jitter: f64) -> Result<DMatrix<f64>> {
    let mut jitter = base_jitter;
    for _ in 0..6 {
        if let Some(c) = m.clone().cholesky() {
            return Ok(c.unpack());
        }
        for i in 0..m.nrows() {
            m[(i, i)] += jitter;
        }
        jitter *= 10.0;
    }
    Err(Error::Numerical("could not factor prior covariance".into()))
}

/// Draws `n_samples` values of the maximum of the belief.
///
/// Each draw is a joint posterior function sample evaluated on the subgrid of
/// every second cell in both directions plus the cell of the largest mean; the
/// draw's maximum over those cells is returned. Joint draws use the exact
/// posterior of the belief's data record (prior draws on a tensor grid
/// corrected by the data, i.e. Matheron's rule). For mixed beliefs each draw
/// is rescaled per cell to the belief's own mean and variance, keeping the
/// exact posterior's correlation structure.
pub fn sample_max<R: Rng + ?Sized>(belief: &GpBelief, n_samples: usize, rng: &mut R) -> Result<Vec<f64>> {
    if n_samples == 0 {
        return Err(Error::InvalidParameter("n_samples must be >= 1".into()));
    }
    let grid = belief.grid;
    let mut targets: Vec<usize> = (0..grid.nx())
        .step_by(2)
        .flat_map(|ix| (0..grid.ny()).step_by(2).map(move |iy| grid.index(ix, iy)))
        .collect();
    let best = belief.argmax_mean();
    if !targets.contains(&best) {
        targets.push(best);
    }
    if targets.iter().all(|&c| belief.var[c] == 0.0) {
        let m = targets.iter().map(|&c| belief.mean[c]).fold(f64::NEG_INFINITY, f64::max);
        return Ok(vec![m; n_samples]);
    }

    let hyper = belief.hyper;
    let exact = belief.exact()?;
    let data = belief.data.as_slice();

    let mut xs: Vec<usize> = targets.iter().map(|&c| grid.cell(c).0).chain(data.iter().map(|o| o.ix)).collect();
    let mut ys: Vec<usize> = targets.iter().map(|&c| grid.cell(c).1).chain(data.iter().map(|o| o.iy)).collect();
    xs.sort_unstable();
    xs.dedup();
    ys.sort_unstable();
    ys.dedup();
    let pos = |v: &[usize], k: usize| v.binary_search(&k).expect("coordinate present");

    let kernel = GridKernel::new(&grid, &hyper);
    let unit = |v: &[usize], table: &[f64]| {
        DMatrix::from_fn(v.len(), v.len(), |i, j| table[v[i].abs_diff(v[j])] + if i == j { JITTER_REL } else { 0.0 })
    };
    let lx = chol_with_retry(unit(&xs, &kernel.kx), JITTER_REL)?;
    let ly = chol_with_retry(unit(&ys, &kernel.ky), JITTER_REL)?;
    let scale = hyper.signal_var.sqrt();

    let n = data.len();
    let data_chol = if n > 0 {
        let pts: Vec<(usize, usize)> = data.iter().map(|o| (o.ix, o.iy)).collect();
        Some(
            kernel_matrix(&kernel, &pts, hyper.diag_noise())
                .cholesky()
                .ok_or_else(|| Error::Numerical("kernel matrix is not positive definite".into()))?,
        )
    } else {
        None
    };
    // k(target, data) for the correction term
    let target_cross: Vec<Vec<f64>> = targets
        .iter()
        .map(|&c| data.iter().map(|o| kernel.k(grid.cell(c), (o.ix, o.iy))).collect())
        .collect();
    let ratio: Vec<f64> = targets
        .iter()
        .map(|&c| {
            let ex = exact.var()[c];
            if belief.mixed {
                if ex > 0.0 {
                    (belief.var[c] / ex).sqrt()
                } else {
                    0.0
                }
            } else {
                1.0
            }
        })
        .collect();
    let noise_sd = hyper.diag_noise().sqrt();

    let mut out = Vec::with_capacity(n_samples);
    for _ in 0..n_samples {
        let e = DMatrix::from_fn(xs.len(), ys.len(), |_, _| rng.sample::<f64, _>(StandardNormal));
        let prior = (&lx * e * ly.transpose()) * scale;
        let prior_at = |ix: usize, iy: usize| prior[(pos(&xs, ix), pos(&ys, iy))];
        let weights = match &data_chol {
            Some(chol) => {
                let r = DVector::from_iterator(
                    n,
                    data.iter().map(|o| {
                        let eps: f64 = rng.sample(StandardNormal);
                        (o.z - PRIOR_MEAN) - prior_at(o.ix, o.iy) - noise_sd * eps
                    }),
                );
                chol.solve(&r)
            }
            None => DVector::zeros(0),
        };
        let mut zmax = f64::NEG_INFINITY;
        for (t, &c) in targets.iter().enumerate() {
            let (ix, iy) = grid.cell(c);
            let corr: f64 = target_cross[t].iter().zip(weights.iter()).map(|(k, w)| k * w).sum();
            let draw = PRIOR_MEAN + prior_at(ix, iy) + corr;
            let v = if belief.mixed {
                belief.mean[c] + ratio[t] * (draw - exact.mean()[c])
            } else {
                draw
            };
            zmax = zmax.max(v);
        }
        out.push(zmax);
    }
    Ok(out)
}
