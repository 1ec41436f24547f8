//! Parameter selection, synthesis of the sampled output feedback law and its
//! operator-norm bounds.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gram::{CalibratedConstant, RESOLUTION_TOL};
use crate::min_norm::{InpProblem, MinNormSolution, MinNormSolver, SnpProblem};
use crate::spectral::{exp_integral, Region, SpectralModel, StateVector};

const POWER_MAX_ITERATIONS: usize = 20_000;
const POWER_TOL: f64 = 1e-13;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeedbackParameters {
    pub gamma: f64,
    #[serde(rename = "T")]
    pub t: f64,
    pub c_hat_p: f64,
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(rename = "M")]
    pub m: usize,
    pub eps0: f64,
    #[serde(rename = "C_gamma_T")]
    pub c_gamma_t: f64,
}

/// `C(γ,T)`, the threshold selecting `M`.
pub fn threshold(model: &SpectralModel, gamma: f64, t: f64, n: usize, c_hat_p: f64, c1: f64) -> f64 {
    let g0 = model.gamma0();
    let inner = 2.0 * t * ((9.0 * (n as f64).sqrt()).ln() + c1 * (1.0 + g0.powf(2.0 / 3.0)))
        + (4.0 * gamma + 3.0 * g0) * t * t;
    let root = (c1 + (c1 * c1 + inner).sqrt()) / t;
    root * root + c_hat_p
}

pub fn select_parameters(model: &SpectralModel, gamma: f64, t: f64, c0: f64) -> Result<FeedbackParameters> {
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(Error::Domain(format!("gamma must be positive, got {gamma}")));
    }
    if !(t > 0.0 && t.is_finite()) {
        return Err(Error::Domain(format!("T must be positive, got {t}")));
    }
    if !(c0 >= 0.0 && c0.is_finite()) {
        return Err(Error::Domain(format!("C0 must be non-negative, got {c0}")));
    }
    let lambdas = model.eigenvalues();
    let g0 = model.gamma0();
    let unstable = model.unstable_count();
    if unstable >= lambdas.len() {
        return Err(Error::Config("no positive eigenvalue on the grid".into()));
    }
    let c_hat_p = (lambdas[unstable] - 3.0 * g0).max(0.0);

    let n_limit = 2.0 * gamma + 9f64.ln() / t;
    let n = lambdas.iter().take_while(|&&l| l < n_limit).count();
    if n == 0 {
        return Err(Error::Config(format!(
            "no eigenvalue below 2γ + ln9/T = {n_limit}"
        )));
    }

    let c_gamma_t = threshold(model, gamma, t, n, c_hat_p, 0.5 * c0);
    let m = lambdas.iter().take_while(|&&l| l < c_gamma_t).count();
    let resolved = model.resolved_modes(RESOLUTION_TOL);
    if m > resolved {
        return Err(Error::Resolution(format!(
            "M = {m} exceeds the {resolved} modes the grid resolves (C(γ,T) = {c_gamma_t:e})"
        )));
    }
    let eps0 = (-(2.0 * gamma + 1.5 * g0 + c_hat_p) * t).exp() / (9.0 * (n as f64).sqrt());

    let params = FeedbackParameters { gamma, t, c_hat_p, n, m, eps0, c_gamma_t };
    params.check(model)?;
    Ok(params)
}

impl FeedbackParameters {
    pub fn check(&self, model: &SpectralModel) -> Result<()> {
        let fail = |what: &str| Err(Error::Precondition(format!("{what} (N = {}, M = {})", self.n, self.m)));
        if self.n == 0 {
            return fail("N must be at least 1");
        }
        if self.m == 0 || self.m > model.n() || model.lambda(self.m) <= 0.0 {
            return fail("λ_M must be positive");
        }
        if self.m < self.n {
            return fail("M must be at least N");
        }
        if self.m < model.unstable_count() + 1 {
            return fail("M must exceed the number of unstable modes");
        }
        if !(self.eps0 > 0.0 && self.eps0 < 1.0) {
            return fail("eps0 must lie in (0, 1)");
        }
        Ok(())
    }
}

/// A linear map from observations on `ω₁` to controls on `ω`.
pub trait OutputFeedback: Sync {
    fn control(&self, observation: &[f64]) -> Result<Vec<f64>>;
}

/// The law that never actuates.
#[derive(Clone, Debug)]
pub struct ZeroLaw {
    control_len: usize,
}

impl ZeroLaw {
    pub fn new(model: &SpectralModel) -> Self {
        Self { control_len: model.mask(Region::Control).len() }
    }
}

impl OutputFeedback for ZeroLaw {
    fn control(&self, _observation: &[f64]) -> Result<Vec<f64>> {
        Ok(vec![0.0; self.control_len])
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeedbackLaw {
    pub params: FeedbackParameters,
    /// `f_j` on the control mask points.
    pub f_list: Vec<Vec<f64>>,
    /// `h_j` on the observation mask points.
    pub h_list: Vec<Vec<f64>>,
    pub op_norm: f64,
    #[serde(rename = "C0")]
    pub c0: f64,
    pub safety_factor: f64,
    pub grid_spacing: f64,
}

impl FeedbackLaw {
    /// Builds a law from given control profiles.
    pub fn from_parts(
        model: &SpectralModel,
        params: FeedbackParameters,
        f_list: Vec<Vec<f64>>,
        h_list: Vec<Vec<f64>>,
        c0: f64,
        safety_factor: f64,
    ) -> Result<Self> {
        let mut law = Self {
            params,
            f_list,
            h_list,
            op_norm: 0.0,
            c0,
            safety_factor,
            grid_spacing: model.h(),
        };
        law.check_shape(model)?;
        law.op_norm = law.gram_norm();
        Ok(law)
    }

    pub fn check_shape(&self, model: &SpectralModel) -> Result<()> {
        let (nf, nh) = (model.mask(Region::Control).len(), model.mask(Region::Observation).len());
        if self.f_list.len() != self.params.n || self.h_list.len() != self.params.n {
            return Err(Error::Input(format!(
                "law carries {} and {} profiles, expected N = {}",
                self.f_list.len(),
                self.h_list.len(),
                self.params.n
            )));
        }
        if self.f_list.iter().any(|f| f.len() != nf) || self.h_list.iter().any(|h| h.len() != nh) {
            return Err(Error::Input(format!(
                "profiles must have {nf} control and {nh} observation values"
            )));
        }
        if (self.grid_spacing - model.h()).abs() > 1e-12 * model.h() {
            return Err(Error::Input(format!(
                "law was built on spacing {}, model has {}",
                self.grid_spacing,
                model.h()
            )));
        }
        Ok(())
    }

    pub fn apply(&self, v: &[f64]) -> Result<Vec<f64>> {
        let len = self.f_list.first().map_or(0, Vec::len);
        if let Some(h) = self.h_list.first() {
            if v.len() != h.len() {
                return Err(Error::Input(format!(
                    "observation has {} values, expected {}",
                    v.len(),
                    h.len()
                )));
            }
        }
        let mut u = vec![0.0; len];
        for (f, h) in self.f_list.iter().zip(&self.h_list) {
            let c = self.grid_spacing * dot(v, h);
            for (ui, fi) in u.iter_mut().zip(f) {
                *ui -= c * fi;
            }
        }
        Ok(u)
    }

    fn gram(&self, list: &[Vec<f64>]) -> DMatrix<f64> {
        let n = list.len();
        DMatrix::from_fn(n, n, |i, j| self.grid_spacing * dot(&list[i], &list[j]))
    }

    /// `‖F‖` from `λ_max(Gʰ^{1/2} Gᶠ Gʰ^{1/2})`.
    pub fn gram_norm(&self) -> f64 {
        if self.f_list.is_empty() {
            return 0.0;
        }
        let eig = self.gram(&self.h_list).symmetric_eigen();
        let sqrt_vals = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
        let root = &eig.eigenvectors * DMatrix::from_diagonal(&sqrt_vals) * eig.eigenvectors.transpose();
        let coupled = &root * self.gram(&self.f_list) * &root;
        let coupled = (&coupled + coupled.transpose()) * 0.5;
        coupled.symmetric_eigenvalues().max().max(0.0).sqrt()
    }

    /// `‖F‖` by power iteration on the grid operator.
    pub fn power_norm(&self) -> Result<f64> {
        let Some(h0) = self.h_list.first() else {
            return Ok(0.0);
        };
        let mut x = DVector::from_element(h0.len(), 0.0);
        for h in &self.h_list {
            x += DVector::from_column_slice(h);
        }
        let norm = x.norm();
        if norm == 0.0 {
            return Ok(0.0);
        }
        x /= norm;
        let mut estimate = 0.0;
        for _ in 0..POWER_MAX_ITERATIONS {
            let u = self.apply(x.as_slice())?;
            let w = self.adjoint(&u);
            let next = w.norm().sqrt();
            if next == 0.0 {
                return Ok(0.0);
            }
            x = w / (next * next);
            if (next - estimate).abs() <= POWER_TOL * next {
                return Ok(next);
            }
            estimate = next;
        }
        Err(Error::Convergence(format!(
            "power iteration stalled at {estimate:e} after {POWER_MAX_ITERATIONS} steps"
        )))
    }

    /// Euclidean adjoint of `apply`.
    fn adjoint(&self, u: &[f64]) -> DVector<f64> {
        let len = self.h_list.first().map_or(0, Vec::len);
        let mut out = DVector::zeros(len);
        for (f, h) in self.f_list.iter().zip(&self.h_list) {
            let c = self.grid_spacing * dot(u, f);
            out.axpy(-c, &DVector::from_column_slice(h), 1.0);
        }
        out
    }

    pub fn f_norms(&self) -> Vec<f64> {
        self.f_list.iter().map(|f| self.grid_spacing.sqrt() * norm(f)).collect()
    }

    pub fn h_norms(&self) -> Vec<f64> {
        self.h_list.iter().map(|h| self.grid_spacing.sqrt() * norm(h)).collect()
    }

    /// `max_k ‖F h_k‖ / ‖h_k‖`, a lower bound on `‖F‖`.
    pub fn column_lower_bound(&self) -> Result<f64> {
        let scale = self.grid_spacing.sqrt();
        let mut best = 0.0_f64;
        for h in &self.h_list {
            let hn = scale * norm(h);
            if hn > 0.0 {
                best = best.max(scale * norm(&self.apply(h)?) / hn);
            }
        }
        Ok(best)
    }
}

impl OutputFeedback for FeedbackLaw {
    fn control(&self, observation: &[f64]) -> Result<Vec<f64>> {
        self.apply(observation)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// The `2N` sub-problems of the synthesis.
pub fn sub_problems(model: &SpectralModel, params: &FeedbackParameters) -> (Vec<SnpProblem>, Vec<InpProblem>) {
    let t = params.t;
    let n = model.n();
    let snp = (1..=params.n)
        .map(|j| SnpProblem {
            t1: 0.0,
            t2: 0.5 * t,
            m: params.m,
            eps: params.eps0,
            zeta: StateVector::mode(n, j),
        })
        .collect();
    let inp = (1..=params.n)
        .map(|j| InpProblem {
            t1: 0.0,
            t2: 0.5 * t,
            tau: 0.25 * t,
            m: params.m,
            eps: params.eps0,
            zeta: StateVector::mode(n, j),
        })
        .collect();
    (snp, inp)
}

pub fn synthesize(
    model: &SpectralModel,
    gamma: f64,
    t: f64,
    calibration: &CalibratedConstant,
) -> Result<FeedbackLaw> {
    synthesize_with(&MinNormSolver::new(model), gamma, t, calibration)
}

pub fn synthesize_with(
    solver: &MinNormSolver<'_>,
    gamma: f64,
    t: f64,
    calibration: &CalibratedConstant,
) -> Result<FeedbackLaw> {
    let model = solver.model();
    let params = select_parameters(model, gamma, t, calibration.c0)?;
    let (snp, inp) = sub_problems(model, &params);
    let n = params.n;

    let solved: Vec<Result<MinNormSolution>> = (0..2 * n)
        .into_par_iter()
        .map(|k| {
            if k < n {
                solver.solve_snp(&snp[k])
            } else {
                solver.solve_inp(&inp[k - n])
            }
        })
        .collect();

    let mut f_list = Vec::with_capacity(n);
    let mut h_list = Vec::with_capacity(n);
    for (k, result) in solved.into_iter().enumerate() {
        let index = k % n + 1;
        let sol = result.map_err(|e| Error::Synthesis { index, source: Box::new(e) })?;
        if sol.is_zero || sol.control_norm <= 0.0 {
            return Err(Error::Synthesis {
                index,
                source: Box::new(Error::Precondition(format!(
                    "{} control vanished",
                    if k < n { "distributed" } else { "impulse" }
                ))),
            });
        }
        if k < n {
            f_list.push(sol.control);
        } else {
            h_list.push(sol.control);
        }
    }
    FeedbackLaw::from_parts(model, params, f_list, h_list, calibration.c0, calibration.safety_factor)
}

/// `m₁(T)`, the constant-free lower bound on `‖F_T‖`.
pub fn m1(model: &SpectralModel, gamma: f64, t: f64) -> f64 {
    let g0 = model.gamma0();
    16.0 * g0 / 81.0 / (0.5 * g0 * t).exp_m1() * (-(0.25 * g0 + gamma) * t).exp()
}

/// `m₂(T)` with the unquantified constant replaced by `c10`; `None` when the
/// expression is not finite.
pub fn m2(model: &SpectralModel, gamma: f64, t: f64, n: usize, c10: f64) -> Option<f64> {
    let l1 = model.lambda(1);
    let alpha1 = exp_integral(l1, 0.5 * t);
    let value = -l1 * (-0.25 * l1 * t).exp()
        + l1 / (-(0.5 * l1 * t).exp_m1()) * (-(2.0 * gamma - 0.25 * l1) * t).exp()
        - (n as f64).sqrt() / (9.0 * alpha1)
            * (-2.0 * gamma * t + c10 * (1.0 + 1.0 / t) * (1.0 + gamma)).exp();
    value.is_finite().then_some(value)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundRow {
    #[serde(rename = "T")]
    pub t: f64,
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(rename = "M")]
    pub m: usize,
    pub eps0: f64,
    pub op_norm: f64,
    pub m1: f64,
    pub m2_advisory: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrendMarkers {
    /// `‖F_T‖ ≥ m₁(T)` on every row.
    pub dominates_m1: bool,
    /// Smallest `‖F_T‖ / m₁(T)`.
    pub min_ratio_to_m1: f64,
    /// Both sweep endpoints lie above the minimum norm.
    pub endpoints_above_min: bool,
    /// `m₁(T)·T` at the two smallest `T`, smallest first.
    pub m1_times_t: Vec<f64>,
}

/// Synthesizes a law per `T` (in parallel) and tabulates `‖F_T‖`, `m₁`, `m₂`.
pub fn bound_curves(
    model: &SpectralModel,
    gamma: f64,
    t_grid: &[f64],
    calibration: &CalibratedConstant,
) -> Result<Vec<BoundRow>> {
    t_grid
        .par_iter()
        .map(|&t| {
            let law = synthesize(model, gamma, t, calibration)?;
            Ok(BoundRow {
                t,
                n: law.params.n,
                m: law.params.m,
                eps0: law.params.eps0,
                op_norm: law.op_norm,
                m1: m1(model, gamma, t),
                m2_advisory: m2(model, gamma, t, law.params.n, calibration.c0),
            })
        })
        .collect()
}

pub fn trend_markers(rows: &[BoundRow]) -> TrendMarkers {
    let mut sorted: Vec<&BoundRow> = rows.iter().collect();
    sorted.sort_by(|a, b| a.t.total_cmp(&b.t));
    let min_ratio_to_m1 = sorted
        .iter()
        .map(|r| r.op_norm / r.m1)
        .fold(f64::INFINITY, f64::min);
    let min_norm = sorted.iter().map(|r| r.op_norm).fold(f64::INFINITY, f64::min);
    let endpoints_above_min = sorted.len() >= 3
        && sorted[0].op_norm > min_norm
        && sorted[sorted.len() - 1].op_norm > min_norm;
    TrendMarkers {
        dominates_m1: sorted.iter().all(|r| r.op_norm >= r.m1),
        min_ratio_to_m1,
        endpoints_above_min,
        m1_times_t: sorted.iter().take(2).map(|r| r.m1 * r.t).collect(),
    }
}
