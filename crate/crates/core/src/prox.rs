//! Accelerated proximal gradient for `½ bᵀQb + βᵀb + μ|b|` in double
//! precision.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub const MAX_ITERATIONS: usize = 100_000;

/// Proximal map of `t|·|`: shrinks the whole vector towards zero.
pub fn block_soft_threshold(v: &DVector<f64>, t: f64) -> DVector<f64> {
    let norm = v.norm();
    if norm <= t {
        DVector::zeros(v.len())
    } else {
        v * (1.0 - t / norm)
    }
}

/// First-order optimality residual; at `b = 0` it is the distance of `−β`
/// from the ball of radius `μ`.
pub fn kkt_residual(q: &DMatrix<f64>, beta: &DVector<f64>, mu: f64, b: &DVector<f64>) -> f64 {
    let norm = b.norm();
    if norm == 0.0 {
        return (beta.norm() - mu).max(0.0);
    }
    (q * b + beta + b * (mu / norm)).norm()
}

fn objective(q: &DMatrix<f64>, beta: &DVector<f64>, mu: f64, b: &DVector<f64>) -> f64 {
    0.5 * b.dot(&(q * b)) + beta.dot(b) + mu * b.norm()
}

/// FISTA with function-value restarts. Stops once the residual falls to
/// `tol`.
pub fn minimize(
    q: &DMatrix<f64>,
    beta: &DVector<f64>,
    mu: f64,
    tol: f64,
) -> Result<(DVector<f64>, usize)> {
    let m = beta.len();
    if beta.norm() <= mu {
        return Ok((DVector::zeros(m), 0));
    }
    let lipschitz = q.clone().symmetric_eigenvalues().max();
    if !(lipschitz > 0.0 && lipschitz.is_finite()) {
        return Err(Error::Input(format!(
            "reduced operator has spectral radius {lipschitz}"
        )));
    }
    let step = 1.0 / lipschitz;
    let mut b = DVector::zeros(m);
    let mut y = b.clone();
    let mut t = 1.0_f64;
    let mut value = objective(q, beta, mu, &b);
    let mut restarted = false;
    for iteration in 1..=MAX_ITERATIONS {
        let gradient = q * &y + beta;
        let next = block_soft_threshold(&(&y - gradient * step), mu * step);
        let next_value = objective(q, beta, mu, &next);
        if next_value > value && !restarted {
            // Momentum overshot; restart from the last iterate.
            y = b.clone();
            t = 1.0;
            restarted = true;
            continue;
        }
        restarted = false;
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        y = &next + (&next - &b) * ((t - 1.0) / t_next);
        b = next;
        t = t_next;
        value = next_value;
        if kkt_residual(q, beta, mu, &b) <= tol {
            return Ok((b, iteration));
        }
    }
    Err(Error::Convergence(format!(
        "proximal gradient stopped after {MAX_ITERATIONS} iterations with residual {:e} (target {tol:e})",
        kkt_residual(q, beta, mu, &b)
    )))
}
