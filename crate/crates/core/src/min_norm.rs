//! Minimal-norm steering of the first `M` modes into the ball of radius
//! `ε‖ζ‖`, either by a control held constant on `ω` over `[T1, T2]` or by a
//! single impulse on `ω₁` at an instant `τ`.
//!
//! Both problems reduce to
//!
//! ```text
//!     minimize  ½|K b|² + βᵀb + μ|b|,      b ∈ R^M,
//! ```
//!
//! with `β_j = e^{−λ_j (T2−T1)} ζ_j`, `μ = ε‖ζ‖` and `K` the restricted modes
//! scaled by the time weights. The projected terminal state is
//! `β + KᵀK b`, and the control is read off from `K b`.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use nalgebra::{DMatrix, DVector};
use rug::Float;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gram::CalibratedConstant;
use crate::precise::{self, mp, RefinedModes};
use crate::prox;
use crate::spectral::{exp_integral, Region, SpectralModel, StateVector};

pub const START_PRECISION: u32 = 128;
pub const MAX_PRECISION: u32 = 4096;
/// Relative agreement of controls at successive precisions.
pub const AGREEMENT_TOL: f64 = 1e-12;
/// Required `|β + Qb + μ b/|b||`, relative to `μ`.
pub const ALIGNMENT_TOL: f64 = 1e-9;
/// Target residual of the double-precision method, relative to `1 + |β|`.
pub const PROX_TOL: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq)]
pub struct SnpProblem {
    pub t1: f64,
    pub t2: f64,
    pub m: usize,
    pub eps: f64,
    pub zeta: StateVector,
}

#[derive(Clone, Debug, PartialEq)]
pub struct InpProblem {
    pub t1: f64,
    pub t2: f64,
    /// Impulse instant, `T1 < τ < T2`.
    pub tau: f64,
    pub m: usize,
    pub eps: f64,
    pub zeta: StateVector,
}

fn check_common(model: &SpectralModel, t1: f64, t2: f64, m: usize, eps: f64, zeta: &StateVector) -> Result<()> {
    if !(t1.is_finite() && t2.is_finite() && t1 < t2) {
        return Err(Error::Domain(format!("need T1 < T2, got T1 = {t1}, T2 = {t2}")));
    }
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::Domain(format!("eps must be positive, got {eps}")));
    }
    model.check_order(m)?;
    if zeta.len() != model.n() {
        return Err(Error::Input(format!(
            "zeta has {} coefficients, model has {}",
            zeta.len(),
            model.n()
        )));
    }
    if !zeta.is_finite() {
        return Err(Error::Input("zeta is not finite".into()));
    }
    Ok(())
}

impl SnpProblem {
    pub fn validate(&self, model: &SpectralModel) -> Result<()> {
        check_common(model, self.t1, self.t2, self.m, self.eps, &self.zeta)
    }
}

impl InpProblem {
    pub fn validate(&self, model: &SpectralModel) -> Result<()> {
        check_common(model, self.t1, self.t2, self.m, self.eps, &self.zeta)?;
        if !(self.t1 < self.tau && self.tau < self.t2) {
            return Err(Error::Domain(format!(
                "impulse instant {} not inside ({}, {})",
                self.tau, self.t1, self.t2
            )));
        }
        Ok(())
    }
}

/// `α_j = ∫_{T1}^{T2} e^{−λ_j (T2−t)} dt`.
#[derive(Clone, Debug, PartialEq)]
pub struct AlphaCoefficients {
    pub alpha: Vec<f64>,
}

impl AlphaCoefficients {
    pub fn new(model: &SpectralModel, t1: f64, t2: f64, m: usize) -> Self {
        Self {
            alpha: (1..=m).map(|j| exp_integral(model.lambda(j), t2 - t1)).collect(),
        }
    }

    pub fn diagonal(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&DVector::from_column_slice(&self.alpha))
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MinNormSolution {
    /// Minimizer in the eigenbasis (length `M`).
    pub b: Vec<f64>,
    pub control_norm: f64,
    pub kkt_residual: f64,
    pub is_zero: bool,
    /// Control values on the mask points.
    #[serde(skip)]
    pub control: Vec<f64>,
    /// `1 + |β|`, the reference for `kkt_residual`.
    #[serde(skip)]
    pub scale: f64,
    /// `P_M` of the controlled terminal state, `β + KᵀK b`.
    #[serde(skip)]
    pub terminal: Vec<f64>,
    /// Working precision of the accepted solve; 53 for the double-precision method.
    #[serde(skip)]
    pub precision_bits: u32,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    /// Secular equation in the singular basis of `K`, in adaptive multiprecision.
    #[default]
    Multiprecision,
    /// Accelerated proximal gradient in double precision.
    ProximalGradient,
}

/// How `K`, `β` and the control are formed from the modes.
struct Reduced {
    region: Region,
    m: usize,
    /// Exponent rates: `β_j = e^{−λ_j flow} ζ_j`.
    flow: f64,
    weight: Weight,
    /// Control values are `K b · grid_factor`, its norm `|K b| · norm_factor`.
    norm_factor_sq_inv: f64,
    zeta: Vec<f64>,
    mu: f64,
}

#[derive(Clone, Copy)]
enum Weight {
    /// `α_j(Δ) / √Δ`.
    Average { span: f64 },
    /// `e^{−λ_j d}`.
    Decay { delay: f64 },
}

impl Reduced {
    fn snp(p: &SnpProblem) -> Self {
        let span = p.t2 - p.t1;
        Self {
            region: Region::Control,
            m: p.m,
            flow: span,
            weight: Weight::Average { span },
            norm_factor_sq_inv: span,
            zeta: p.zeta.coefficients().iter().copied().collect(),
            mu: p.eps * p.zeta.norm(),
        }
    }

    fn inp(p: &InpProblem) -> Self {
        Self {
            region: Region::Observation,
            m: p.m,
            flow: p.t2 - p.t1,
            weight: Weight::Decay { delay: p.t2 - p.tau },
            norm_factor_sq_inv: 1.0,
            zeta: p.zeta.coefficients().iter().copied().collect(),
            mu: p.eps * p.zeta.norm(),
        }
    }

    fn weight_f64(&self, lambda: f64) -> f64 {
        match self.weight {
            Weight::Average { span } => exp_integral(lambda, span) / span.sqrt(),
            Weight::Decay { delay } => (-lambda * delay).exp(),
        }
    }

    fn weight_mp(&self, lambda: &Float, prec: u32) -> Float {
        match self.weight {
            Weight::Average { span } => {
                let x = Float::with_val(prec, lambda * span);
                if x.is_zero() {
                    return mp(prec, span).sqrt();
                }
                // (1 − e^{−x}) / λ / √span
                let numerator = -Float::with_val(prec, (-x).exp_m1_ref());
                numerator / lambda / mp(prec, span).sqrt()
            }
            Weight::Decay { delay } => (-Float::with_val(prec, lambda * delay)).exp(),
        }
    }

    fn zero_solution(&self, beta_norm: f64, terminal: Vec<f64>, precision_bits: u32, mask_len: usize) -> MinNormSolution {
        MinNormSolution {
            b: vec![0.0; self.m],
            control_norm: 0.0,
            kkt_residual: 0.0,
            is_zero: true,
            control: vec![0.0; mask_len],
            scale: 1.0 + beta_norm,
            terminal,
            precision_bits,
        }
    }
}

pub struct MinNormSolver<'a> {
    model: &'a SpectralModel,
    method: Method,
    cache: Mutex<HashMap<u32, Arc<RefinedModes>>>,
}

impl<'a> MinNormSolver<'a> {
    pub fn new(model: &'a SpectralModel) -> Self {
        Self::with_method(model, Method::default())
    }

    pub fn with_method(model: &'a SpectralModel, method: Method) -> Self {
        Self {
            model,
            method,
            cache: Mutex::new(HashMap::new()),
        }
    }

    pub fn model(&self) -> &'a SpectralModel {
        self.model
    }

    pub fn method(&self) -> Method {
        self.method
    }

    pub fn solve_snp(&self, p: &SnpProblem) -> Result<MinNormSolution> {
        p.validate(self.model)?;
        self.solve(&Reduced::snp(p))
    }

    pub fn solve_inp(&self, p: &InpProblem) -> Result<MinNormSolution> {
        p.validate(self.model)?;
        self.solve(&Reduced::inp(p))
    }

    fn solve(&self, r: &Reduced) -> Result<MinNormSolution> {
        match self.method {
            Method::Multiprecision => self.solve_adaptive(r),
            Method::ProximalGradient => self.solve_f64(r),
        }
    }

    fn modes(&self, prec: u32, count: usize) -> Result<Arc<RefinedModes>> {
        if let Some(found) = self.cache.lock().expect("mode cache poisoned").get(&prec) {
            if found.lambdas.len() >= count {
                return Ok(Arc::clone(found));
            }
        }
        let refined = Arc::new(precise::refine_modes(self.model, count, prec)?);
        let mut cache = self.cache.lock().expect("mode cache poisoned");
        let entry = cache.entry(prec).or_insert_with(|| Arc::clone(&refined));
        if entry.lambdas.len() < count {
            *entry = Arc::clone(&refined);
        }
        Ok(refined)
    }

    fn solve_adaptive(&self, r: &Reduced) -> Result<MinNormSolution> {
        let mut previous = self.solve_at(r, START_PRECISION)?;
        if previous.is_zero {
            return Ok(previous);
        }
        let mut prec = START_PRECISION;
        while prec < MAX_PRECISION {
            prec *= 2;
            let current = self.solve_at(r, prec)?;
            if current.is_zero != previous.is_zero {
                previous = current;
                continue;
            }
            let diff: f64 = current
                .control
                .iter()
                .zip(&previous.control)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            let size: f64 = current.control.iter().map(|a| a * a).sum::<f64>().sqrt();
            if diff <= AGREEMENT_TOL * size && current.kkt_residual <= ALIGNMENT_TOL * r.mu {
                return Ok(current);
            }
            previous = current;
        }
        Err(Error::Convergence(format!(
            "min-norm solve did not settle by {MAX_PRECISION} bits (M = {}, mu = {:e}, kkt = {:e})",
            r.m, r.mu, previous.kkt_residual
        )))
    }

    fn solve_at(&self, r: &Reduced, prec: u32) -> Result<MinNormSolution> {
        let modes = self.modes(prec, r.m)?;
        let mask = self.model.mask(r.region);
        let m = r.m;
        let beta: Vec<Float> = (0..m)
            .map(|j| {
                let decay = (-Float::with_val(prec, &modes.lambdas[j] * r.flow)).exp();
                decay * r.zeta[j]
            })
            .collect();
        let beta_norm = precise::norm(&beta, prec);
        let mu = mp(prec, r.mu);
        let terminal_of = |v: &[Float]| v.iter().map(Float::to_f64).collect::<Vec<_>>();
        if beta_norm <= mu {
            return Ok(r.zero_solution(beta_norm.to_f64(), terminal_of(&beta), prec, mask.len()));
        }

        let columns: Vec<Vec<Float>> = (0..m)
            .map(|j| {
                let w = r.weight_mp(&modes.lambdas[j], prec);
                mask.indices()
                    .iter()
                    .map(|&i| Float::with_val(prec, &modes.vectors[j][i] * &w))
                    .collect()
            })
            .collect();
        let svd = precise::one_sided_jacobi(&columns, prec)?;
        let bhat: Vec<Float> = svd
            .v
            .iter()
            .map(|vj| {
                let mut acc = mp(prec, 0.0);
                for (a, b) in vj.iter().zip(&beta) {
                    acc += Float::with_val(prec, a * b);
                }
                acc
            })
            .collect();
        let s = precise::secular_root(&svd.d, &bhat, &mu, prec)?;

        let mut b = vec![mp(prec, 0.0); m];
        for (j, vj) in svd.v.iter().enumerate() {
            let c = -Float::with_val(prec, &bhat[j] / Float::with_val(prec, &svd.d[j] + &s));
            for (bi, vij) in b.iter_mut().zip(vj) {
                *bi += Float::with_val(prec, &c * vij);
            }
        }
        let kb: Vec<Float> = (0..mask.len())
            .map(|row| {
                let mut acc = mp(prec, 0.0);
                for (col, bj) in columns.iter().zip(&b) {
                    acc += Float::with_val(prec, &col[row] * bj);
                }
                acc
            })
            .collect();
        let b_norm = precise::norm(&b, prec);
        let mut residual = mp(prec, 0.0);
        let mut terminal = Vec::with_capacity(m);
        for j in 0..m {
            let mut t = beta[j].clone();
            for (row, v) in kb.iter().enumerate() {
                t += Float::with_val(prec, &columns[j][row] * v);
            }
            terminal.push(t.to_f64());
            let kkt = t + Float::with_val(prec, &mu * &b[j]) / &b_norm;
            residual += kkt.square();
        }

        let sqrt_span = r.norm_factor_sq_inv.sqrt();
        let grid_factor = 1.0 / (sqrt_span * self.model.h().sqrt());
        let control: Vec<f64> = kb
            .iter()
            .map(|v| Float::with_val(prec, v * grid_factor).to_f64())
            .collect();
        let control_norm = (precise::norm(&kb, prec) / sqrt_span).to_f64();
        Ok(MinNormSolution {
            b: b.iter().map(Float::to_f64).collect(),
            control_norm,
            kkt_residual: residual.sqrt().to_f64(),
            is_zero: false,
            control,
            scale: 1.0 + beta_norm.to_f64(),
            terminal,
            precision_bits: prec,
        })
    }

    fn solve_f64(&self, r: &Reduced) -> Result<MinNormSolution> {
        let model = self.model;
        let m = r.m;
        let mask = model.mask(r.region);
        let beta = DVector::from_fn(m, |j, _| (-model.lambda(j + 1) * r.flow).exp() * r.zeta[j]);
        let weights = DVector::from_fn(m, |j, _| r.weight_f64(model.lambda(j + 1)));
        let k = model.restricted_modes(r.region, m)? * DMatrix::from_diagonal(&weights);
        let q = k.tr_mul(&k);
        let scale = 1.0 + beta.norm();
        if beta.norm() <= r.mu {
            let terminal = beta.iter().copied().collect();
            return Ok(r.zero_solution(beta.norm(), terminal, 53, mask.len()));
        }
        let (b, _) = prox::minimize(&q, &beta, r.mu, PROX_TOL * scale)?;
        let kb = &k * &b;
        let sqrt_span = r.norm_factor_sq_inv.sqrt();
        let grid_factor = 1.0 / (sqrt_span * model.h().sqrt());
        Ok(MinNormSolution {
            kkt_residual: prox::kkt_residual(&q, &beta, r.mu, &b),
            is_zero: b.norm() == 0.0,
            control: kb.iter().map(|v| v * grid_factor).collect(),
            control_norm: kb.norm() / sqrt_span,
            scale,
            terminal: (&beta + &q * &b).iter().copied().collect(),
            b: b.iter().copied().collect(),
            precision_bits: 53,
        })
    }
}

pub fn solve_snp(model: &SpectralModel, p: &SnpProblem) -> Result<MinNormSolution> {
    MinNormSolver::new(model).solve_snp(p)
}

pub fn solve_inp(model: &SpectralModel, p: &InpProblem) -> Result<MinNormSolution> {
    MinNormSolver::new(model).solve_inp(p)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormBounds {
    pub lower: f64,
    /// Upper estimate evaluated with the calibrated constant; not a guarantee.
    pub upper_advisory: Option<f64>,
}

fn check_hypotheses(model: &SpectralModel, m: usize, flow: f64, eps: f64, zeta: &StateVector) -> Result<f64> {
    if model.lambda(m) < 0.0 {
        return Err(Error::Precondition(format!(
            "lambda_M >= 0 fails: lambda_{m} = {}",
            model.lambda(m)
        )));
    }
    let projected = (1..=m)
        .map(|j| ((-model.lambda(j) * flow).exp() * zeta.coefficients()[j - 1]).powi(2))
        .sum::<f64>()
        .sqrt();
    let threshold = eps * zeta.norm();
    if projected <= threshold {
        return Err(Error::Precondition(format!(
            "|P_M e^(A dT) zeta| = {projected:e} does not exceed eps |zeta| = {threshold:e}"
        )));
    }
    Ok(projected - threshold)
}

pub fn snp_bounds(model: &SpectralModel, p: &SnpProblem, calibration: Option<&CalibratedConstant>) -> Result<NormBounds> {
    p.validate(model)?;
    let span = p.t2 - p.t1;
    let excess = check_hypotheses(model, p.m, span, p.eps, &p.zeta)?;
    let alpha = AlphaCoefficients::new(model, p.t1, p.t2, p.m);
    let upper_advisory = calibration.map(|c| {
        let g0 = model.gamma0();
        let flow_term = if g0 == 0.0 { 1.0 / span } else { g0 / -(-g0 * span).exp_m1() };
        growth(model, c, p.m) * (flow_term + p.eps / alpha.alpha[p.m - 1]) * p.zeta.norm()
    });
    Ok(NormBounds {
        lower: excess / alpha.alpha[0],
        upper_advisory,
    })
}

pub fn inp_bounds(model: &SpectralModel, p: &InpProblem, calibration: Option<&CalibratedConstant>) -> Result<NormBounds> {
    p.validate(model)?;
    let excess = check_hypotheses(model, p.m, p.t2 - p.t1, p.eps, &p.zeta)?;
    let upper_advisory = calibration.map(|c| {
        growth(model, c, p.m)
            * ((-model.lambda(1) * (p.tau - p.t1)).exp() + (model.lambda(p.m) * (p.t2 - p.tau)).exp() * p.eps)
            * p.zeta.norm()
    });
    Ok(NormBounds {
        lower: (model.lambda(1) * (p.t2 - p.tau)).exp() * excess,
        upper_advisory,
    })
}

fn growth(model: &SpectralModel, c: &CalibratedConstant, m: usize) -> f64 {
    (c.c1_tilde() * (1.0 + model.gamma0().powf(2.0 / 3.0) + model.lambda(m).max(0.0).sqrt())).exp()
}
