//! Small dense quasi-Newton minimizer and finite-difference helpers, used for
//! kernel hyperparameters and for the user-parameter MAP.

#[derive(Clone, Copy, Debug)]
pub struct BfgsOptions {
    pub max_iter: usize,
    pub grad_tol: f64,
    pub f_tol: f64,
}

impl Default for BfgsOptions {
    fn default() -> Self {
        Self {
            max_iter: 100,
            grad_tol: 1e-6,
            f_tol: 1e-10,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub f: f64,
    pub iterations: usize,
    pub converged: bool,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Minimizes `f` with BFGS and a backtracking Armijo line search. Non-finite
/// objective values are treated as +inf, so the line search backs away from
/// them.
pub fn bfgs<F, G>(f: F, grad: G, x0: &[f64], opts: BfgsOptions) -> Minimum
where
    F: Fn(&[f64]) -> f64,
    G: Fn(&[f64]) -> Vec<f64>,
{
    let n = x0.len();
    let eval = |x: &[f64]| {
        let v = f(x);
        if v.is_finite() {
            v
        } else {
            f64::INFINITY
        }
    };
    let mut x = x0.to_vec();
    let mut fx = eval(&x);
    let mut g = grad(&x);
    // inverse Hessian approximation, row-major
    let mut h = vec![0.0; n * n];
    for i in 0..n {
        h[i * n + i] = 1.0;
    }
    let mut converged = false;
    let mut iterations = 0;

    for it in 0..opts.max_iter {
        iterations = it + 1;
        if g.iter().any(|v| !v.is_finite()) {
            break;
        }
        if g.iter().map(|v| v.abs()).fold(0.0, f64::max) < opts.grad_tol {
            converged = true;
            break;
        }
        let mut dir: Vec<f64> = (0..n)
            .map(|i| -(0..n).map(|j| h[i * n + j] * g[j]).sum::<f64>())
            .collect();
        let mut slope = dot(&dir, &g);
        if slope >= 0.0 {
            // not a descent direction; reset to steepest descent
            for i in 0..n {
                for j in 0..n {
                    h[i * n + j] = if i == j { 1.0 } else { 0.0 };
                }
            }
            dir = g.iter().map(|v| -v).collect();
            slope = dot(&dir, &g);
        }

        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..40 {
            let trial: Vec<f64> = x.iter().zip(&dir).map(|(a, d)| a + step * d).collect();
            let ft = eval(&trial);
            if ft <= fx + 1e-4 * step * slope {
                accepted = Some((trial, ft));
                break;
            }
            step *= 0.5;
        }
        let Some((x_new, f_new)) = accepted else {
            converged = true;
            break;
        };
        let g_new = grad(&x_new);
        let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        let f_change = (fx - f_new).abs();
        x = x_new;
        g = g_new;
        let f_prev = fx;
        fx = f_new;

        if sy > 1e-12 {
            let hy: Vec<f64> = (0..n)
                .map(|i| (0..n).map(|j| h[i * n + j] * y[j]).sum())
                .collect();
            let yhy = dot(&y, &hy);
            let rho = 1.0 / sy;
            for i in 0..n {
                for j in 0..n {
                    h[i * n + j] += rho * ((1.0 + rho * yhy) * s[i] * s[j] - hy[i] * s[j] - s[i] * hy[j]);
                }
            }
        }
        if f_change <= opts.f_tol * (1.0 + f_prev.abs()) {
            converged = true;
            break;
        }
    }

    Minimum {
        x,
        f: fx,
        iterations,
        converged,
    }
}

pub fn central_gradient<F: Fn(&[f64]) -> f64>(f: F, x: &[f64], h: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + h;
            let up = f(&probe);
            probe[i] = x[i] - h;
            let down = f(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}
