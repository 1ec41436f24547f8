//! Reference computations shared by the integration tests. Each one takes a
//! different route from the library code it checks.
#![allow(dead_code)]

use std::sync::OnceLock;

use heatfb::{calibrate_c0, CalibratedConstant, ModelConfig, Region, SpectralModel, StateVector};
use nalgebra::{DMatrix, DVector};
use rand::Rng;

pub fn canonical() -> &'static SpectralModel {
    static MODEL: OnceLock<SpectralModel> = OnceLock::new();
    MODEL.get_or_init(|| SpectralModel::build(&ModelConfig::canonical()).unwrap())
}

pub fn calibration() -> &'static CalibratedConstant {
    static CAL: OnceLock<CalibratedConstant> = OnceLock::new();
    CAL.get_or_init(|| calibrate_c0(canonical(), 2..=12, 1.1).unwrap())
}

/// Columns `√h ξ_j(x_i)`, rows over the mask, assembled from the raw grid
/// eigenvectors.
pub fn mask_columns(model: &SpectralModel, region: Region, m: usize) -> DMatrix<f64> {
    let idx = model.mask(region).indices();
    let xi = model.eigenvectors();
    let sh = model.h().sqrt();
    DMatrix::from_fn(idx.len(), m, |r, j| sh * xi[(idx[r], j)])
}

pub fn exp_integral_quad(lambda: f64, t: f64) -> f64 {
    simpson(|s| (-lambda * (t - s)).exp(), 0.0, t, 20_000)
}

pub fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, intervals: usize) -> f64 {
    let n = intervals + intervals % 2;
    let h = (b - a) / n as f64;
    let mut acc = f(a) + f(b);
    for k in 1..n {
        let w = if k % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * f(a + k as f64 * h);
    }
    acc * h / 3.0
}

/// Minimal `|w|` subject to `|β + G w| ≤ μ`, `G = diag(weights) Sᵀ`, found
/// by bisecting the penalty weight `ν` of `|w|² + ν|β + G w|²`. Returns `w`
/// (zero when `|β| ≤ μ`).
pub fn penalty_min_norm(s: &DMatrix<f64>, weights: &[f64], beta: &[f64], mu: f64) -> DVector<f64> {
    let m = weights.len();
    let g = DMatrix::from_diagonal(&DVector::from_column_slice(weights)) * s.transpose();
    let beta = DVector::from_column_slice(beta);
    if beta.norm() <= mu {
        return DVector::zeros(s.nrows());
    }
    let svd = g.clone().svd(true, true);
    let u = svd.u.unwrap();
    let vt = svd.v_t.unwrap();
    let sig = svd.singular_values;
    let bhat = u.transpose() * &beta;
    let residual = |nu: f64| -> f64 {
        (0..m)
            .map(|k| (bhat[k] / (1.0 + nu * sig[k] * sig[k])).powi(2))
            .sum::<f64>()
            .sqrt()
    };
    let (mut lo, mut hi) = (-300.0_f64, 300.0_f64);
    for _ in 0..400 {
        let mid = 0.5 * (lo + hi);
        if residual(mid.exp()) > mu {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let nu = (0.5 * (lo + hi)).exp();
    let coef = DVector::from_fn(m, |k, _| -nu * sig[k] * bhat[k] / (1.0 + nu * sig[k] * sig[k]));
    vt.transpose() * coef
}

/// `θ_k` from the normal equations `B_k c = v`, solved by Cholesky.
pub fn theta_normal_equations(model: &SpectralModel, region: Region, k: usize) -> f64 {
    let s = mask_columns(model, region, k + 1);
    let basis = s.columns(0, k).into_owned();
    let w = s.column(k).into_owned();
    let g = basis.transpose() * &basis;
    let v = basis.transpose() * &w;
    let c = g.cholesky().expect("B_k positive definite").solve(&v);
    (v.dot(&c)).sqrt() / w.norm()
}

/// `θ_k` by direct maximization of `⟨ŵ, S c⟩ / |S c|` over `c`: cyclic
/// golden-section search over the coordinates, from several starts.
pub fn theta_search(model: &SpectralModel, region: Region, k: usize) -> f64 {
    let s = mask_columns(model, region, k + 1);
    let basis = s.columns(0, k).into_owned();
    let w = s.column(k).into_owned();
    let w = &w / w.norm();
    let ratio = |c: &DVector<f64>| -> f64 {
        let v = &basis * c;
        let n = v.norm();
        if n == 0.0 {
            0.0
        } else {
            (w.dot(&v) / n).abs()
        }
    };
    let mut best = 0.0_f64;
    for start in 0..k {
        let mut c = DVector::from_element(k, 0.0);
        c[start] = 1.0;
        let mut value = ratio(&c);
        for _ in 0..400 {
            let before = value;
            for i in 0..k {
                // Search c_i on a wide bracket; the ratio is scale invariant so
                // other coordinates stay fixed.
                let fixed = c.clone();
                let f = |x: f64| {
                    let mut d = fixed.clone();
                    d[i] = x;
                    ratio(&d)
                };
                let scale = 10.0 * (1.0 + c.amax());
                let x = golden_max(&f, -scale, scale, 200);
                let fx = f(x);
                if fx > value {
                    c[i] = x;
                    value = fx;
                }
                c /= c.amax();
            }
            if value - before < 1e-16 {
                break;
            }
        }
        best = best.max(value);
    }
    best
}

fn golden_max(f: &impl Fn(f64) -> f64, mut a: f64, mut b: f64, iterations: usize) -> f64 {
    // Coarse scan first, the objective can be bimodal along a coordinate.
    let samples = 400;
    let step = (b - a) / samples as f64;
    let (mut best_x, mut best_f) = (a, f(a));
    for i in 1..=samples {
        let x = a + i as f64 * step;
        let v = f(x);
        if v > best_f {
            best_x = x;
            best_f = v;
        }
    }
    a = best_x - step;
    b = best_x + step;
    let r = 0.5 * (5f64.sqrt() - 1.0);
    let mut x1 = b - r * (b - a);
    let mut x2 = a + r * (b - a);
    let (mut f1, mut f2) = (f(x1), f(x2));
    for _ in 0..iterations {
        if f1 < f2 {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + r * (b - a);
            f2 = f(x2);
        } else {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - r * (b - a);
            f1 = f(x1);
        }
        if (b - a).abs() < 1e-15 * (1.0 + a.abs()) {
            break;
        }
    }
    let mid = 0.5 * (a + b);
    if f(mid) >= best_f {
        mid
    } else {
        best_x
    }
}

/// `θ_k` as the top generalized eigenvalue of `(v vᵀ, B_k)`, reduced with
/// `B_k^{−1/2}` from a symmetric eigendecomposition.
pub fn theta_generalized_eigen(model: &SpectralModel, region: Region, k: usize) -> f64 {
    let s = mask_columns(model, region, k + 1);
    let basis = s.columns(0, k).into_owned();
    let w = s.column(k).into_owned();
    let eig = (basis.transpose() * &basis).symmetric_eigen();
    let inv_root = &eig.eigenvectors
        * DMatrix::from_diagonal(&eig.eigenvalues.map(|l| l.sqrt().recip()))
        * eig.eigenvectors.transpose();
    let y = inv_root * (basis.transpose() * &w);
    let top = (&y * y.transpose()).symmetric_eigenvalues().max();
    top.sqrt() / w.norm()
}

/// `1 − θ_k` from the least-squares residual of `w` against the first `k`
/// restricted modes: `1 − θ = (|r|/|w|)² / (1 + θ)`.
pub fn theta_gap_residual(model: &SpectralModel, region: Region, k: usize) -> f64 {
    let s = mask_columns(model, region, k + 1);
    let basis = s.columns(0, k).into_owned();
    let w = s.column(k).into_owned();
    let c = basis.clone().svd(true, true).solve(&w, 0.0).unwrap();
    let r = &w - &basis * c;
    let rel = r.norm() / w.norm();
    let theta = (1.0 - rel * rel).max(0.0).sqrt();
    rel * rel / (1.0 + theta)
}

/// `τ_M` from [`theta_gap_residual`].
pub fn tau_reference(model: &SpectralModel, region: Region, m: usize) -> f64 {
    let product: f64 = (1..m).map(|k| theta_gap_residual(model, region, k)).product();
    (m as f64 / product).sqrt()
}

/// Masked time averages of the backward flow `e^{A(T2−t)}Φ` over the first
/// half and over all of `[T1, T2]`, by Simpson quadrature on the grid.
pub fn masked_averages(model: &SpectralModel, region: Region, t1: f64, t2: f64, a: &[f64]) -> (f64, f64) {
    let s = mask_columns(model, region, a.len());
    let lambdas: Vec<f64> = (1..=a.len()).map(|j| model.lambda(j)).collect();
    let point = |row: usize, t: f64| -> f64 {
        (0..a.len())
            .map(|j| a[j] * (-lambdas[j] * (t2 - t)).exp() * s[(row, j)])
            .sum()
    };
    let mid = 0.5 * (t1 + t2);
    let norm = (t2 - t1).sqrt().recip();
    let (mut half, mut full) = (0.0, 0.0);
    for row in 0..s.nrows() {
        let h = simpson(|t| point(row, t), t1, mid, 2000);
        let f = h + simpson(|t| point(row, t), mid, t2, 2000);
        half += h * h;
        full += f * f;
    }
    (half.sqrt() * norm, full.sqrt() * norm)
}

/// Random state whose leading `lead` coefficients are uniform in `[−1, 1]`
/// and whose tail is `tail` times smaller noise.
pub fn random_state<R: Rng>(rng: &mut R, n: usize, lead: usize, tail: f64) -> StateVector {
    let coefficients = DVector::from_fn(n, |i, _| {
        let x: f64 = rng.gen_range(-1.0..1.0);
        if i < lead {
            x
        } else {
            tail * x
        }
    });
    StateVector::from_coefficients(coefficients)
}

pub fn random_unit_state<R: Rng>(rng: &mut R, n: usize) -> StateVector {
    let y = random_state(rng, n, n, 1.0);
    let norm = y.norm();
    y.scaled(1.0 / norm)
}

/// `P_M` of the state reached from `ζ` at `T2` under a constant control on
/// `ω` over `[T1, T2]`, via the library's exact flow maps.
pub fn snp_terminal(model: &SpectralModel, t1: f64, t2: f64, m: usize, zeta: &StateVector, control: &[f64]) -> DVector<f64> {
    let span = t2 - t1;
    let mut y = model.semigroup_apply(span, zeta).unwrap();
    y.add_scaled(1.0, &model.duhamel_const(span, control).unwrap());
    y.coefficients().rows(0, m).into_owned()
}

/// `P_M` of the state reached from `ζ` at `T2` with an impulse on `ω₁` at `τ`.
pub fn inp_terminal(model: &SpectralModel, t1: f64, t2: f64, tau: f64, m: usize, zeta: &StateVector, impulse: &[f64]) -> DVector<f64> {
    let mut y = model.semigroup_apply(tau - t1, zeta).unwrap();
    y.add_scaled(1.0, &model.inject(Region::Observation, impulse).unwrap());
    let y = model.semigroup_apply(t2 - tau, &y).unwrap();
    y.coefficients().rows(0, m).into_owned()
}
