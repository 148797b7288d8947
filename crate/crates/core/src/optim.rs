//! Quasi-Newton minimization (BFGS with a backtracking Armijo line search).

use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone, Copy)]
pub struct BfgsOptions {
    pub max_iter: usize,
    /// Convergence when the gradient's infinity norm drops below this.
    pub grad_tol: f64,
}

impl Default for BfgsOptions {
    fn default() -> Self {
        Self {
            max_iter: 2000,
            grad_tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BfgsResult {
    pub x: DVector<f64>,
    pub value: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    pub converged: bool,
}

fn inf_norm(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

/// Minimize `f`, which returns the value and gradient at a point. Non-finite
/// values are treated as +infinity so the line search backs away from them.
pub fn minimize<F>(mut f: F, x0: DVector<f64>, opts: BfgsOptions) -> BfgsResult
where
    F: FnMut(&DVector<f64>) -> (f64, DVector<f64>),
{
    let n = x0.len();
    let mut x = x0;
    let (mut fx, mut g) = f(&x);
    let mut h_inv = DMatrix::<f64>::identity(n, n);
    let mut fresh = true;
    let mut iterations = 0;

    while iterations < opts.max_iter {
        let gnorm = inf_norm(&g);
        if gnorm < opts.grad_tol {
            return BfgsResult {
                x,
                value: fx,
                grad_norm: gnorm,
                iterations,
                converged: true,
            };
        }
        iterations += 1;

        let mut dir = -(&h_inv * &g);
        let mut slope = g.dot(&dir);
        if slope >= 0.0 || !slope.is_finite() {
            h_inv = DMatrix::identity(n, n);
            fresh = true;
            dir = -g.clone();
            slope = g.dot(&dir);
        }
        // First steps of steepest descent can be wildly scaled.
        let mut step = if fresh { (1.0 / inf_norm(&dir)).min(1.0) } else { 1.0 };

        let mut accepted = None;
        for _ in 0..60 {
            let x_new = &x + step * &dir;
            let (f_new, g_new) = f(&x_new);
            if f_new.is_finite() && f_new <= fx + 1e-4 * step * slope {
                accepted = Some((x_new, f_new, g_new));
                break;
            }
            step *= 0.5;
        }

        let Some((x_new, f_new, g_new)) = accepted else {
            if fresh {
                // Steepest descent cannot make progress either.
                return BfgsResult {
                    x,
                    value: fx,
                    grad_norm: gnorm,
                    iterations,
                    converged: false,
                };
            }
            h_inv = DMatrix::identity(n, n);
            fresh = true;
            continue;
        };

        let s = &x_new - &x;
        let y = &g_new - &g;
        let sy = s.dot(&y);
        if sy > 1e-12 * s.norm() * y.norm() {
            if fresh {
                h_inv *= sy / y.dot(&y);
            }
            let rho = 1.0 / sy;
            let hy = &h_inv * &y;
            let yhy = y.dot(&hy);
            // H <- (I - rho s y')H(I - rho y s') + rho s s'
            h_inv += (rho * rho * yhy + rho) * (&s * s.transpose())
                - rho * (&hy * s.transpose() + &s * hy.transpose());
            fresh = false;
        }
        x = x_new;
        fx = f_new;
        g = g_new;
    }

    let grad_norm = inf_norm(&g);
    BfgsResult {
        x,
        value: fx,
        grad_norm,
        iterations,
        converged: grad_norm < opts.grad_tol,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rosenbrock() {
        let f = |x: &DVector<f64>| {
            let (a, b) = (x[0], x[1]);
            let v = (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2);
            let g = DVector::from_vec(vec![
                -2.0 * (1.0 - a) - 400.0 * a * (b - a * a),
                200.0 * (b - a * a),
            ]);
            (v, g)
        };
        let r = minimize(f, DVector::from_vec(vec![-1.2, 1.0]), BfgsOptions::default());
        assert!(r.converged);
        assert!((r.x[0] - 1.0).abs() < 1e-5 && (r.x[1] - 1.0).abs() < 1e-5);
    }

    #[test]
    fn quadratic_with_barrier() {
        // Values outside the domain are infinite; the search must back off.
        let f = |x: &DVector<f64>| {
            if x[0] <= 0.0 {
                return (f64::INFINITY, DVector::zeros(1));
            }
            (x[0] - x[0].ln(), DVector::from_vec(vec![1.0 - 1.0 / x[0]]))
        };
        let r = minimize(f, DVector::from_vec(vec![20.0]), BfgsOptions::default());
        assert!(r.converged);
        assert!((r.x[0] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn iteration_cap_reported() {
        let f = |x: &DVector<f64>| (x[0] * x[0], DVector::from_vec(vec![2.0 * x[0]]));
        let r = minimize(
            f,
            DVector::from_vec(vec![5.0]),
            BfgsOptions {
                max_iter: 0,
                grad_tol: 1e-6,
            },
        );
        assert!(!r.converged);
        assert_eq!(r.iterations, 0);
    }
}
