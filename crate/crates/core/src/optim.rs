//! Small dense optimizers: Levenberg-Marquardt for weighted nonlinear least
//! squares and BFGS with finite-difference gradients.

use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone, Copy)]
pub struct LmOptions {
    pub max_iter: usize,
    /// Relative reduction in cost below which the iteration stops.
    pub ftol: f64,
    /// Relative step size below which the iteration stops.
    pub xtol: f64,
    /// Infinity norm of the gradient below which the iteration stops.
    pub gtol: f64,
    pub initial_lambda: f64,
}

impl Default for LmOptions {
    fn default() -> Self {
        LmOptions { max_iter: 500, ftol: 1e-15, xtol: 1e-15, gtol: 1e-15, initial_lambda: 1e-3 }
    }
}

#[derive(Debug, Clone)]
pub struct LmResult {
    pub x: Vec<f64>,
    /// Sum of squared residuals at `x`.
    pub cost: f64,
    pub iterations: usize,
    pub converged: bool,
}

fn sum_sq(r: &[f64]) -> f64 {
    r.iter().map(|x| x * x).sum()
}

/// Minimize `sum(residuals(x)^2)`. Weights are folded into the residuals by
/// the caller (multiply by the square root of each weight). `jacobian`
/// returns one row per residual.
pub fn levenberg_marquardt<R, J>(residuals: R, jacobian: J, x0: &[f64], opts: LmOptions) -> LmResult
where
    R: Fn(&[f64]) -> Vec<f64>,
    J: Fn(&[f64]) -> Vec<Vec<f64>>,
{
    let n = x0.len();
    let mut x = x0.to_vec();
    let mut r = residuals(&x);
    let mut cost = sum_sq(&r);
    let mut lambda = opts.initial_lambda;
    let mut converged = false;
    let mut iterations = 0;

    while iterations < opts.max_iter {
        iterations += 1;
        let jac = jacobian(&x);
        let m = r.len();
        let jm = DMatrix::from_fn(m, n, |i, j| jac[i][j]);
        let rv = DVector::from_column_slice(&r);
        let jtj = jm.transpose() * &jm;
        let g = jm.transpose() * &rv;
        if g.amax() <= opts.gtol {
            converged = true;
            break;
        }

        let mut improved = false;
        for _ in 0..60 {
            let mut a = jtj.clone();
            for i in 0..n {
                let d = jtj[(i, i)].max(1e-12);
                a[(i, i)] += lambda * d;
            }
            let step = match a.cholesky() {
                Some(ch) => ch.solve(&(-&g)),
                None => {
                    lambda *= 10.0;
                    continue;
                }
            };
            let trial: Vec<f64> = x.iter().zip(step.iter()).map(|(a, b)| a + b).collect();
            let r_trial = residuals(&trial);
            let c_trial = sum_sq(&r_trial);
            if c_trial.is_finite() && c_trial < cost {
                let rel = (cost - c_trial) / cost.max(f64::MIN_POSITIVE);
                let xnorm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
                let snorm = step.norm();
                x = trial;
                r = r_trial;
                cost = c_trial;
                lambda = (lambda / 10.0).max(1e-15);
                improved = true;
                if rel <= opts.ftol || snorm <= opts.xtol * (xnorm + opts.xtol) {
                    converged = true;
                }
                break;
            }
            lambda *= 10.0;
            if lambda > 1e16 {
                break;
            }
        }
        if !improved {
            // No downhill step exists at machine precision: a stationary point.
            converged = true;
            break;
        }
        if converged {
            break;
        }
    }

    LmResult { x, cost, iterations, converged }
}

#[derive(Debug, Clone, Copy)]
pub struct BfgsOptions {
    pub max_iter: usize,
    /// Stop when the infinity norm of the gradient falls below
    /// `gtol * (1 + |f|)`.
    pub gtol: f64,
    /// Stop when an accepted step changes f by less than `ftol * (1 + |f|)`.
    pub ftol: f64,
    /// Relative finite-difference step.
    pub grad_step: f64,
}

impl Default for BfgsOptions {
    fn default() -> Self {
        BfgsOptions { max_iter: 1000, gtol: 1e-10, ftol: 1e-15, grad_step: 1e-6 }
    }
}

#[derive(Debug, Clone)]
pub struct BfgsResult {
    pub x: Vec<f64>,
    pub fx: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Central-difference gradient; falls back to a one-sided difference where
/// one neighbour is infeasible (non-finite).
pub fn numerical_gradient<F: Fn(&[f64]) -> f64>(f: &F, x: &[f64], fx: f64, rel_step: f64) -> Vec<f64> {
    let mut xp = x.to_vec();
    (0..x.len())
        .map(|i| {
            let h = rel_step * x[i].abs().max(1.0);
            xp[i] = x[i] + h;
            let fp = f(&xp);
            xp[i] = x[i] - h;
            let fm = f(&xp);
            xp[i] = x[i];
            match (fp.is_finite(), fm.is_finite()) {
                (true, true) => (fp - fm) / (2.0 * h),
                (true, false) => (fp - fx) / h,
                (false, true) => (fx - fm) / h,
                (false, false) => 0.0,
            }
        })
        .collect()
}

/// Minimize `f` from `x0` with BFGS. `f` may return `+inf` (or NaN) to mark
/// infeasible points; the line search backs away from them.
pub fn bfgs<F: Fn(&[f64]) -> f64>(f: F, x0: &[f64], opts: BfgsOptions) -> BfgsResult {
    let n = x0.len();
    let mut x = DVector::from_column_slice(x0);
    let mut fx = f(x.as_slice());
    if !fx.is_finite() {
        return BfgsResult { x: x0.to_vec(), fx, iterations: 0, converged: false };
    }
    let mut g = DVector::from_vec(numerical_gradient(&f, x.as_slice(), fx, opts.grad_step));
    let mut h = DMatrix::<f64>::identity(n, n);
    let mut converged = false;
    let mut iterations = 0;
    let mut reset_once = false;

    while iterations < opts.max_iter {
        if g.amax() <= opts.gtol * (1.0 + fx.abs()) {
            converged = true;
            break;
        }
        iterations += 1;
        let mut dir = -(&h * &g);
        let mut slope = g.dot(&dir);
        if !(slope < 0.0) {
            h = DMatrix::identity(n, n);
            dir = -g.clone();
            slope = g.dot(&dir);
        }

        // Backtracking Armijo line search.
        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let trial = &x + alpha * &dir;
            let ft = f(trial.as_slice());
            if ft.is_finite() && ft <= fx + 1e-4 * alpha * slope {
                accepted = Some((trial, ft));
                break;
            }
            alpha *= 0.5;
        }

        let Some((x_new, f_new)) = accepted else {
            if reset_once {
                // Stationary to within finite-difference accuracy.
                converged = g.amax() <= 1e-5 * (1.0 + fx.abs());
                break;
            }
            reset_once = true;
            h = DMatrix::identity(n, n);
            continue;
        };
        reset_once = false;

        let g_new = DVector::from_vec(numerical_gradient(&f, x_new.as_slice(), f_new, opts.grad_step));
        let s = &x_new - &x;
        let y = &g_new - &g;
        let sy = s.dot(&y);
        let df = fx - f_new;
        x = x_new;
        fx = f_new;
        g = g_new;

        if sy > 1e-12 * s.norm() * y.norm() {
            let rho = 1.0 / sy;
            let i = DMatrix::<f64>::identity(n, n);
            let left = &i - rho * &s * y.transpose();
            let right = &i - rho * &y * s.transpose();
            h = &left * &h * &right + rho * &s * s.transpose();
        }

        if df <= opts.ftol * (1.0 + fx.abs()) {
            converged = true;
            break;
        }
    }

    BfgsResult { x: x.as_slice().to_vec(), fx, iterations, converged }
}
