//! Multiprecision building blocks for the min-norm solves.
//!
//! The reduced problems become extremely ill-conditioned for short horizons
//! (condition numbers beyond 1e40 are routine), so the eigenpairs of the grid
//! operator, the reduced matrix and the secular equation are all carried in
//! MPFR arithmetic at a caller-chosen precision.

use rug::ops::NegAssign;
use rug::Float;

use crate::error::{Error, Result};
use crate::spectral::SpectralModel;

pub(crate) fn mp(prec: u32, x: f64) -> Float {
    Float::with_val(prec, x)
}

fn dot(a: &[Float], b: &[Float], prec: u32) -> Float {
    let mut acc = mp(prec, 0.0);
    for (x, y) in a.iter().zip(b) {
        acc += Float::with_val(prec, x * y);
    }
    acc
}

pub(crate) fn norm(a: &[Float], prec: u32) -> Float {
    dot(a, a, prec).sqrt()
}

/// Eigenpairs of `−A_h` refined to `prec` bits. Vectors are unit in the
/// Euclidean norm, i.e. they hold `√h · ξ_j(x_i)`.
#[derive(Debug)]
pub(crate) struct RefinedModes {
    pub lambdas: Vec<Float>,
    pub vectors: Vec<Vec<Float>>,
}

struct Tridiagonal {
    diag: Vec<Float>,
    off: Float,
    norm_bound: Float,
}

impl Tridiagonal {
    fn new(model: &SpectralModel, prec: u32) -> Self {
        let n = model.n();
        let h = Float::with_val(prec, model.config().domain_length) / (n as f64 + 1.0);
        let inv_h2 = Float::with_val(prec, h.square_ref()).recip();
        let diag: Vec<Float> = model
            .potential()
            .iter()
            .map(|&v| Float::with_val(prec, &inv_h2 * 2.0) + v)
            .collect();
        let norm_bound = Float::with_val(prec, &inv_h2 * 4.0) + model.gamma0();
        Self {
            diag,
            off: -inv_h2,
            norm_bound,
        }
    }

    fn apply(&self, x: &[Float], prec: u32) -> Vec<Float> {
        let n = x.len();
        (0..n)
            .map(|i| {
                let mut v = Float::with_val(prec, &self.diag[i] * &x[i]);
                if i > 0 {
                    v += Float::with_val(prec, &self.off * &x[i - 1]);
                }
                if i + 1 < n {
                    v += Float::with_val(prec, &self.off * &x[i + 1]);
                }
                v
            })
            .collect()
    }

    /// Solves `(T − σI) y = rhs` by Gaussian elimination with partial
    /// pivoting. Exactly zero pivots are nudged, which is what inverse
    /// iteration wants.
    fn shifted_solve(&self, sigma: &Float, rhs: &[Float], prec: u32) -> Vec<Float> {
        let n = rhs.len();
        let mut d: Vec<Float> = self
            .diag
            .iter()
            .map(|v| Float::with_val(prec, v - sigma))
            .collect();
        let mut du: Vec<Float> = vec![self.off.clone(); n.saturating_sub(1)];
        let dl: Vec<Float> = vec![self.off.clone(); n.saturating_sub(1)];
        let mut du2: Vec<Float> = vec![mp(prec, 0.0); n.saturating_sub(2)];
        let mut b: Vec<Float> = rhs.to_vec();
        let tiny = Float::with_val(prec, &self.norm_bound) >> (prec as i32);

        for i in 0..n - 1 {
            if d[i].clone().abs() >= dl[i].clone().abs() {
                if d[i].is_zero() {
                    d[i] = tiny.clone();
                }
                let fact = Float::with_val(prec, &dl[i] / &d[i]);
                d[i + 1] -= Float::with_val(prec, &fact * &du[i]);
                let t = Float::with_val(prec, &fact * &b[i]);
                b[i + 1] -= t;
            } else {
                let fact = Float::with_val(prec, &d[i] / &dl[i]);
                d[i] = dl[i].clone();
                let temp = d[i + 1].clone();
                d[i + 1] = Float::with_val(prec, &du[i] - &fact * &temp);
                if i + 2 < n {
                    du2[i] = du[i + 1].clone();
                    du[i + 1] = -Float::with_val(prec, &fact * &du2[i]);
                }
                du[i] = temp;
                let next = b[i + 1].clone();
                let temp = std::mem::replace(&mut b[i], next);
                b[i + 1] = Float::with_val(prec, &temp - &fact * &b[i]);
            }
        }
        if d[n - 1].is_zero() {
            d[n - 1] = tiny.clone();
        }
        b[n - 1] /= &d[n - 1];
        if n > 1 {
            let t = Float::with_val(prec, &du[n - 2] * &b[n - 1]);
            b[n - 2] -= t;
            b[n - 2] /= &d[n - 2];
        }
        for i in (0..n.saturating_sub(2)).rev() {
            let t = Float::with_val(prec, &du[i] * &b[i + 1]) + Float::with_val(prec, &du2[i] * &b[i + 2]);
            b[i] -= t;
            b[i] /= &d[i];
        }
        b
    }
}

/// Rayleigh-quotient iteration from the double-precision eigenpairs.
pub(crate) fn refine_modes(model: &SpectralModel, count: usize, prec: u32) -> Result<RefinedModes> {
    model.check_order(count)?;
    let t = Tridiagonal::new(model, prec);
    let sqrt_h = model.h().sqrt();
    let tol = Float::with_val(prec, &t.norm_bound) >> (prec as i32 - 24);
    let mut lambdas = Vec::with_capacity(count);
    let mut vectors = Vec::with_capacity(count);
    for j in 0..count {
        let start: Vec<Float> = model
            .eigenvectors()
            .column(j)
            .iter()
            .map(|&v| mp(prec, v * sqrt_h))
            .collect();
        let mut x = normalized(start.clone(), prec);
        let mut sigma = dot(&x, &t.apply(&x, prec), prec);
        let mut converged = false;
        for _ in 0..40 {
            let y = t.shifted_solve(&sigma, &x, prec);
            x = normalized(y, prec);
            let tx = t.apply(&x, prec);
            sigma = dot(&x, &tx, prec);
            let residual: Vec<Float> = tx
                .iter()
                .zip(&x)
                .map(|(a, b)| Float::with_val(prec, a - &sigma * b))
                .collect();
            if norm(&residual, prec) <= tol {
                converged = true;
                break;
            }
        }
        if !converged {
            return Err(Error::Convergence(format!(
                "eigenpair {} did not refine at {prec} bits",
                j + 1
            )));
        }
        let drift = (sigma.to_f64() - model.lambda(j + 1)).abs();
        if drift > 1e-8 * model.lambda(j + 1).abs().max(1.0) {
            return Err(Error::Convergence(format!(
                "refinement of eigenpair {} moved to {} (from {})",
                j + 1,
                sigma.to_f64(),
                model.lambda(j + 1)
            )));
        }
        if dot(&x, &start, prec) < 0 {
            for v in &mut x {
                v.neg_assign();
            }
        }
        lambdas.push(sigma);
        vectors.push(x);
    }
    Ok(RefinedModes { lambdas, vectors })
}

fn normalized(mut x: Vec<Float>, prec: u32) -> Vec<Float> {
    let n = norm(&x, prec);
    for v in &mut x {
        *v /= &n;
    }
    x
}

/// `K V = U diag(√d)`: right singular vectors and squared singular values
/// of a dense column-major matrix, by one-sided Jacobi.
pub(crate) struct Svd {
    /// Squared singular values, in column order of `v`.
    pub d: Vec<Float>,
    /// `v[j]` is the `j`-th right singular vector.
    pub v: Vec<Vec<Float>>,
}

pub(crate) fn one_sided_jacobi(columns: &[Vec<Float>], prec: u32) -> Result<Svd> {
    let m = columns.len();
    let mut a: Vec<Vec<Float>> = columns.to_vec();
    let mut v: Vec<Vec<Float>> = (0..m)
        .map(|j| (0..m).map(|i| mp(prec, if i == j { 1.0 } else { 0.0 })).collect())
        .collect();
    let eps = Float::with_val(prec, 1.0) >> (prec as i32 - 8);
    let mut converged = false;
    for _ in 0..80 {
        let mut rotated = false;
        for p in 0..m {
            for q in p + 1..m {
                let alpha = dot(&a[p], &a[p], prec);
                let beta = dot(&a[q], &a[q], prec);
                let gamma = dot(&a[p], &a[q], prec);
                let bound = Float::with_val(prec, &alpha * &beta).sqrt() * &eps;
                if Float::with_val(prec, gamma.abs_ref()) <= bound {
                    continue;
                }
                rotated = true;
                let zeta: Float = Float::with_val(prec, &beta - &alpha) / Float::with_val(prec, &gamma * 2.0);
                let root: Float = (Float::with_val(prec, zeta.square_ref()) + 1.0f64).sqrt();
                let denom: Float = Float::with_val(prec, zeta.abs_ref()) + &root;
                let mut tan = denom.recip();
                if zeta.is_sign_negative() {
                    tan = -tan;
                }
                let cos = (Float::with_val(prec, tan.square_ref()) + 1.0f64).sqrt().recip();
                let sin = Float::with_val(prec, &cos * &tan);
                rotate(&mut a, p, q, &cos, &sin, prec);
                rotate(&mut v, p, q, &cos, &sin, prec);
            }
        }
        if !rotated {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::Convergence(format!(
            "one-sided Jacobi did not converge at {prec} bits"
        )));
    }
    let d = a.iter().map(|col| dot(col, col, prec)).collect();
    Ok(Svd { d, v })
}

fn rotate(cols: &mut [Vec<Float>], p: usize, q: usize, cos: &Float, sin: &Float, prec: u32) {
    let (left, right) = cols.split_at_mut(q);
    let (cp, cq) = (&mut left[p], &mut right[0]);
    for (x, y) in cp.iter_mut().zip(cq.iter_mut()) {
        let nx = Float::with_val(prec, cos * &*x) - Float::with_val(prec, sin * &*y);
        let ny = Float::with_val(prec, sin * &*x) + Float::with_val(prec, cos * &*y);
        *x = nx;
        *y = ny;
    }
}

/// Finds `s > 0` with `s · |(D + sI)⁻¹ β̂| = μ`, given `|β̂| > μ > 0` and
/// `d ≥ 0`. The left side is increasing in `s`; the solve is Newton in
/// `ln s`, safeguarded by bisection.
pub(crate) fn secular_root(d: &[Float], bhat: &[Float], mu: &Float, prec: u32) -> Result<Float> {
    let ln_mu = Float::with_val(prec, mu.ln_ref());
    // g(t) = ln φ(e^t) − ln μ and its derivative.
    let eval = |t: &Float| -> (Float, Float) {
        let s = Float::with_val(prec, t.exp_ref());
        let mut phi2 = mp(prec, 0.0);
        let mut weighted = mp(prec, 0.0);
        for (dj, bj) in d.iter().zip(bhat) {
            let denom = Float::with_val(prec, dj + &s);
            let ratio = Float::with_val(prec, &s / &denom);
            let w = Float::with_val(prec, bj * &ratio).square();
            weighted += Float::with_val(prec, &w * dj) / &denom;
            phi2 += w;
        }
        let g = Float::with_val(prec, phi2.ln_ref()) / 2.0 - &ln_mu;
        (g, weighted / phi2)
    };

    let total = norm(bhat, prec);
    let excess = Float::with_val(prec, &total - mu);
    let d_max = d.iter().fold(mp(prec, 0.0), |acc, x| if *x > acc { x.clone() } else { acc });
    let d_min = d.iter().fold(d_max.clone(), |acc, x| if *x < acc { x.clone() } else { acc });
    if d_max.is_zero() {
        return Err(Error::Input("reduced operator vanishes identically".into()));
    }
    let mut t_hi = Float::with_val(prec, Float::with_val(prec, mu * &d_max) / &excess).ln();
    t_hi += 1.0;
    let mut t_lo = if d_min.is_zero() {
        Float::with_val(prec, &t_hi - 64.0)
    } else {
        Float::with_val(prec, Float::with_val(prec, mu * &d_min) / &excess).ln() - 1.0
    };
    let mut guard = 0;
    while eval(&t_lo).0 > 0 {
        t_lo -= 64.0;
        guard += 1;
        if guard > 10_000 {
            return Err(Error::Convergence("secular bracket search failed".into()));
        }
    }
    while eval(&t_hi).0 < 0 {
        t_hi += 8.0;
        guard += 1;
        if guard > 10_000 {
            return Err(Error::Convergence("secular bracket search failed".into()));
        }
    }

    let step_tol = Float::with_val(prec, 1.0) >> (prec as i32 - 16);
    let mut t = Float::with_val(prec, &t_lo + &t_hi) / 2.0;
    for _ in 0..(4 * prec as usize + 200) {
        let (g, slope) = eval(&t);
        if g.is_zero() {
            return Ok(t.exp());
        }
        if g.is_sign_negative() {
            t_lo = t.clone();
        } else {
            t_hi = t.clone();
        }
        let mut next = if slope.is_zero() {
            None
        } else {
            let candidate = Float::with_val(prec, &t - Float::with_val(prec, &g / &slope));
            (candidate > t_lo && candidate < t_hi).then_some(candidate)
        };
        let newton = next.is_some();
        let next = next
            .take()
            .unwrap_or_else(|| Float::with_val(prec, &t_lo + &t_hi) / 2.0);
        let step = Float::with_val(prec, &next - &t).abs();
        t = next;
        let width = Float::with_val(prec, &t_hi - &t_lo);
        if (newton && step <= step_tol) || width <= step_tol {
            return Ok(t.exp());
        }
    }
    Err(Error::Convergence(format!(
        "secular equation did not converge at {prec} bits"
    )))
}
