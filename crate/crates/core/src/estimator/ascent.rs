//! BFGS ascent with Armijo backtracking.

use nalgebra::{DMatrix, DVector};

use super::OptimizerSettings;

pub(crate) struct AscentOutcome {
    pub x: DVector<f64>,
    pub value: f64,
    pub converged: bool,
    pub iterations: usize,
    pub grad_norm: f64,
}

const MAX_BACKTRACKS: usize = 80;

/// Maximizes `f` from `x0`, with `h0` the initial inverse-Hessian guess of
/// `−f`. Stops once `‖∇f‖ ≤ tol`.
pub(crate) fn bfgs_ascent(
    f: &dyn Fn(&DVector<f64>) -> f64,
    g: &dyn Fn(&DVector<f64>) -> DVector<f64>,
    x0: DVector<f64>,
    h0: &DMatrix<f64>,
    tol: f64,
    settings: &OptimizerSettings,
) -> AscentOutcome {
    let mut x = x0;
    let mut fx = f(&x);
    let mut gx = g(&x);
    let mut h = h0.clone();
    let mut iterations = 0;
    if x.is_empty() {
        return AscentOutcome {
            x,
            value: fx,
            converged: true,
            iterations,
            grad_norm: 0.0,
        };
    }
    while iterations < settings.max_iters {
        let gn = gx.norm();
        if gn <= tol {
            return AscentOutcome {
                x,
                value: fx,
                converged: true,
                iterations,
                grad_norm: gn,
            };
        }
        iterations += 1;
        let mut d = &h * &gx;
        let mut slope = gx.dot(&d);
        if !(slope > 0.0) {
            h = h0.clone();
            d = &h * &gx;
            slope = gx.dot(&d);
        }
        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..MAX_BACKTRACKS {
            let xn = &x + &d * alpha;
            let fnew = f(&xn);
            if fnew.is_finite() && fnew >= fx + settings.armijo * alpha * slope {
                accepted = Some((xn, fnew, None));
                break;
            }
            // Near the optimum the increase drowns in rounding noise; accept
            // the step if the value is unchanged to rounding and the gradient
            // shrinks.
            if fnew.is_finite() && fnew >= fx - 1e-13 * fx.abs().max(1.0) {
                let gnew = g(&xn);
                if gnew.norm() < gn {
                    accepted = Some((xn, fnew, Some(gnew)));
                    break;
                }
            }
            alpha *= settings.shrink;
        }
        let Some((xn, fnew, gnew)) = accepted else {
            break;
        };
        let gnew = gnew.unwrap_or_else(|| g(&xn));
        let s = &xn - &x;
        // y is the gradient change of −f
        let y = &gx - &gnew;
        let sy = s.dot(&y);
        if sy > 1e-12 * s.norm() * y.norm() {
            let rho = 1.0 / sy;
            let hy = &h * &y;
            let yhy = y.dot(&hy);
            // H ← (I − ρsyᵀ)H(I − ρysᵀ) + ρssᵀ, expanded
            h += (&s * s.transpose()) * (rho * rho * yhy + rho)
                - (&hy * s.transpose() + &s * hy.transpose()) * rho;
        }
        x = xn;
        fx = fnew;
        gx = gnew;
    }
    let gn = gx.norm();
    AscentOutcome {
        x,
        value: fx,
        converged: gn <= tol,
        iterations,
        grad_norm: gn,
    }
}
