//! BFGS quasi-Newton minimization with a monotone backtracking line search.

use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone, Copy)]
pub struct BfgsOptions {
    /// Stop when the gradient infinity-norm drops below this.
    pub grad_tol: f64,
    pub max_iter: usize,
    /// Upper bound on the infinity-norm of a single step.
    pub max_step: f64,
}

impl Default for BfgsOptions {
    fn default() -> Self {
        Self {
            grad_tol: 1e-6,
            max_iter: 500,
            max_step: 1.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BfgsOutcome {
    pub x: DVector<f64>,
    pub value: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Objective value of every accepted iterate, starting with the initial point.
    pub trace: Vec<f64>,
}

/// Minimize `f` starting at `x0`. `fg` returns the objective and its gradient;
/// it may return a non-finite value for infeasible points, which the line
/// search treats as a rejection.
pub fn minimize<F>(mut fg: F, x0: DVector<f64>, opts: BfgsOptions) -> BfgsOutcome
where
    F: FnMut(&DVector<f64>) -> (f64, DVector<f64>),
{
    let n = x0.len();
    let mut x = x0;
    let (mut f, mut g) = fg(&x);
    assert!(f.is_finite(), "BFGS start point must be feasible");
    let mut h = DMatrix::<f64>::identity(n, n);
    let mut h_is_identity = true;
    let mut trace = vec![f];
    let mut iterations = 0;
    let mut converged = false;

    while iterations < opts.max_iter {
        if g.amax() < opts.grad_tol {
            converged = true;
            break;
        }
        iterations += 1;

        let mut dir = -(&h * &g);
        let mut slope = g.dot(&dir);
        if slope >= 0.0 || !slope.is_finite() {
            h.fill_with_identity();
            h_is_identity = true;
            dir = -g.clone();
            slope = g.dot(&dir);
        }

        let accepted = match line_search(&mut fg, &x, f, &dir, slope, opts.max_step) {
            Some(step) => Some(step),
            None if !h_is_identity => {
                h.fill_with_identity();
                h_is_identity = true;
                dir = -g.clone();
                slope = g.dot(&dir);
                line_search(&mut fg, &x, f, &dir, slope, opts.max_step)
            }
            None => None,
        };
        let Some((x_new, f_new, g_new)) = accepted else {
            break;
        };

        let s = &x_new - &x;
        let y = &g_new - &g;
        let sy = s.dot(&y);
        if sy > 1e-12 * s.norm() * y.norm() {
            if h_is_identity {
                // Scale the initial inverse Hessian before the first update.
                h *= sy / y.dot(&y);
            }
            let rho = 1.0 / sy;
            let hy = &h * &y;
            let yhy = y.dot(&hy);
            // H+ = H - rho (H y s' + s y' H) + (rho^2 y'Hy + rho) s s'
            h -= (&hy * s.transpose() + &s * hy.transpose()) * rho;
            h += (&s * s.transpose()) * (rho * rho * yhy + rho);
            h_is_identity = false;
        }

        x = x_new;
        f = f_new;
        g = g_new;
        trace.push(f);
    }
    if !converged && g.amax() < opts.grad_tol {
        converged = true;
    }

    BfgsOutcome {
        grad_norm: g.amax(),
        x,
        value: f,
        iterations,
        converged,
        trace,
    }
}

fn line_search<F>(
    fg: &mut F,
    x: &DVector<f64>,
    f: f64,
    dir: &DVector<f64>,
    slope: f64,
    max_step: f64,
) -> Option<(DVector<f64>, f64, DVector<f64>)>
where
    F: FnMut(&DVector<f64>) -> (f64, DVector<f64>),
{
    const C1: f64 = 1e-4;
    let dmax = dir.amax();
    let mut alpha = if dmax > max_step { max_step / dmax } else { 1.0 };
    for _ in 0..60 {
        let x_new = x + dir * alpha;
        let (f_new, g_new) = fg(&x_new);
        if f_new.is_finite() && f_new <= f + C1 * alpha * slope {
            return Some((x_new, f_new, g_new));
        }
        alpha *= 0.5;
    }
    None
}
