//! Observation Gram matrices of restricted eigenvectors, the angles between
//! them, and the calibrated observability constant.
//!
//! Everything here goes through `S = √h · [ξ_j(x_i)]_{i ∈ mask, j ≤ M}`, whose
//! Euclidean geometry is that of `L²(mask)`. The Gram matrix is `SᵀS`; its
//! spectrum is taken from the singular values of `S`, which keeps the small
//! eigenvalues meaningful far below the rounding floor of `SᵀS` itself.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectral::{exp_integral, Region, SpectralModel};

/// Smallest Gram eigenvalue that `gram_matrix` accepts.
pub const GRAM_FLOOR: f64 = 1e-14;
/// `θ_k` at or above `1 − THETA_MARGIN` is reported as a degeneracy.
pub const THETA_MARGIN: f64 = 1e-10;
/// Modes whose discrete Laplacian deviates more than this from the continuum
/// value are not trusted.
pub const RESOLUTION_TOL: f64 = 0.01;
pub const DEFAULT_SAFETY_FACTOR: f64 = 1.1;

fn check_resolved(model: &SpectralModel, m: usize) -> Result<()> {
    model.check_order(m)?;
    let resolved = model.resolved_modes(RESOLUTION_TOL);
    if m > resolved {
        return Err(Error::Resolution(format!(
            "M = {m} exceeds the {resolved} modes the grid resolves (n_grid = {}); \
             increase n_grid or reduce M",
            model.n()
        )));
    }
    Ok(())
}

/// `B_M[i, j] = ⟨1*ξ_i, 1*ξ_j⟩` on the mask.
pub fn gram_matrix(model: &SpectralModel, region: Region, m: usize) -> Result<DMatrix<f64>> {
    let spectrum = gram_spectrum(model, region, m)?;
    if spectrum[0] < GRAM_FLOOR {
        return Err(Error::Resolution(format!(
            "B_{m} on {region} is numerically singular (smallest eigenvalue {:e}); \
             increase n_grid or reduce M",
            spectrum[0]
        )));
    }
    let s = model.restricted_modes(region, m)?;
    let b = s.tr_mul(&s);
    Ok((&b + b.transpose()) * 0.5)
}

/// Eigenvalues of `B_M` in ascending order.
pub fn gram_spectrum(model: &SpectralModel, region: Region, m: usize) -> Result<Vec<f64>> {
    check_resolved(model, m)?;
    let s = model.restricted_modes(region, m)?;
    if s.nrows() < m {
        return Err(Error::Degeneracy(format!(
            "{region} holds {} grid points, fewer than M = {m}",
            s.nrows()
        )));
    }
    let mut values: Vec<f64> = s
        .svd(false, false)
        .singular_values
        .iter()
        .map(|v| v * v)
        .collect();
    values.sort_by(f64::total_cmp);
    if values[0] <= 0.0 {
        return Err(Error::Degeneracy(format!(
            "restricted eigenvectors on {region} are dependent at M = {m}"
        )));
    }
    Ok(values)
}

/// `θ_k` together with the gap `1 − θ_k`, evaluated without cancellation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Angle {
    pub theta: f64,
    pub gap: f64,
}

/// Cosine of the angle between `1*ξ_{k+1}` and `span{1*ξ_i : i ≤ k}`.
pub fn theta(model: &SpectralModel, region: Region, k: usize) -> Result<f64> {
    Ok(angle(model, region, k)?.theta)
}

pub fn angle(model: &SpectralModel, region: Region, k: usize) -> Result<Angle> {
    if k == 0 || k >= model.n() {
        return Err(Error::Domain(format!(
            "angle index {k} outside 1..={}",
            model.n() - 1
        )));
    }
    check_resolved(model, k + 1)?;
    let s = model.restricted_modes(region, k + 1)?;
    if s.nrows() <= k {
        return Err(Error::Degeneracy(format!(
            "{region} holds {} grid points, too few for k = {k}",
            s.nrows()
        )));
    }
    let basis = s.columns(0, k).into_owned();
    let mut w: DVector<f64> = s.column(k).into_owned();
    let w_norm = w.norm();
    basis.qr().q_tr_mul(&mut w);
    let along = w.rows(0, k).norm();
    let across = w.rows(k, w.nrows() - k).norm();
    let theta = along / w_norm;
    let gap = (across / w_norm).powi(2) / (1.0 + theta);
    if gap <= THETA_MARGIN {
        return Err(Error::Degeneracy(format!(
            "theta_{k} on {region} is within {gap:e} of 1; refine the grid"
        )));
    }
    Ok(Angle { theta, gap })
}

/// `τ_M = sqrt(M / Π_{k<M} (1 − θ_k))`, with `τ₁ = 1`.
pub fn tau(model: &SpectralModel, region: Region, m: usize) -> Result<f64> {
    model.check_order(m)?;
    let mut log_product = 0.0;
    for k in 1..m {
        log_product += angle(model, region, k)?.gap.ln();
    }
    Ok((0.5 * ((m as f64).ln() - log_product)).exp())
}

#[derive(Clone, Debug)]
pub struct GramData {
    pub region: Region,
    pub m: usize,
    /// `B_M`, assembled directly; its small eigenvalues are below rounding.
    pub b: DMatrix<f64>,
    pub spectrum: Vec<f64>,
    /// `θ_k` for `k = 1..M−1`.
    pub theta: Vec<f64>,
    pub tau: f64,
}

impl GramData {
    pub fn compute(model: &SpectralModel, region: Region, m: usize) -> Result<Self> {
        let spectrum = gram_spectrum(model, region, m)?;
        let s = model.restricted_modes(region, m)?;
        let b = s.tr_mul(&s);
        let angles = (1..m)
            .map(|k| angle(model, region, k))
            .collect::<Result<Vec<_>>>()?;
        let log_product: f64 = angles.iter().map(|a| a.gap.ln()).sum();
        Ok(Self {
            region,
            m,
            b: (&b + b.transpose()) * 0.5,
            spectrum,
            theta: angles.iter().map(|a| a.theta).collect(),
            tau: (0.5 * ((m as f64).ln() - log_product)).exp(),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationSample {
    pub region: Region,
    #[serde(rename = "M")]
    pub m: usize,
    pub lambda_m: f64,
    pub lambda_min: f64,
    /// `ln(1/λ_min(B_M)) / (1 + γ₀^{2/3} + √λ_M)`.
    pub ratio: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibratedConstant {
    #[serde(rename = "C0")]
    pub c0: f64,
    pub safety_factor: f64,
    #[serde(rename = "per_M_ratios")]
    pub per_m_ratios: Vec<CalibrationSample>,
}

impl CalibratedConstant {
    /// `C̃₁ = C₀ / 2`.
    pub fn c1_tilde(&self) -> f64 {
        0.5 * self.c0
    }

    /// `e^{C₀(1 + γ₀^{2/3} + √λ_M)}`, the admitted bound on `‖B_M⁻¹‖`.
    pub fn inverse_bound(&self, model: &SpectralModel, m: usize) -> f64 {
        (self.c0 * growth_weight(model, m)).exp()
    }
}

fn growth_weight(model: &SpectralModel, m: usize) -> f64 {
    1.0 + model.gamma0().powf(2.0 / 3.0) + model.lambda(m).max(0.0).sqrt()
}

/// Calibrates `C₀` over `m_range` on both the control and the observation
/// mask. Orders with `λ_M < 0` are skipped.
pub fn calibrate_c0(
    model: &SpectralModel,
    m_range: impl IntoIterator<Item = usize>,
    safety_factor: f64,
) -> Result<CalibratedConstant> {
    if !(safety_factor.is_finite() && safety_factor >= 1.0) {
        return Err(Error::Config(format!(
            "safety factor must be finite and >= 1, got {safety_factor}"
        )));
    }
    let orders: Vec<usize> = m_range
        .into_iter()
        .filter(|&m| m >= 1 && m <= model.n() && model.lambda(m) >= 0.0)
        .collect();
    if orders.is_empty() {
        return Err(Error::Config(
            "calibration range holds no M with lambda_M >= 0".into(),
        ));
    }
    let mut samples = Vec::with_capacity(2 * orders.len());
    for region in [Region::Control, Region::Observation] {
        for &m in &orders {
            let lambda_min = gram_spectrum(model, region, m)?[0];
            samples.push(CalibrationSample {
                region,
                m,
                lambda_m: model.lambda(m),
                lambda_min,
                ratio: (1.0 / lambda_min).ln().max(0.0) / growth_weight(model, m),
            });
        }
    }
    let worst = samples.iter().map(|s| s.ratio).fold(0.0, f64::max);
    Ok(CalibratedConstant {
        c0: safety_factor * worst,
        safety_factor,
        per_m_ratios: samples,
    })
}

/// Outcome of comparing half-interval and full-interval masked averages of
/// the backward flow over random terminal data.
#[derive(Clone, Debug, PartialEq)]
pub struct InterpolationReport {
    pub m: usize,
    pub tau: f64,
    pub max_ratio: f64,
    pub violations: usize,
    pub trials: usize,
}

/// Weights of the full and first-half time integrals of `e^{−λ_j(T2−t)}`.
pub fn average_weights(model: &SpectralModel, t1: f64, t2: f64, m: usize) -> (Vec<f64>, Vec<f64>) {
    let dt = t2 - t1;
    let full = (1..=m).map(|j| exp_integral(model.lambda(j), dt)).collect();
    let half = (1..=m)
        .map(|j| {
            let l = model.lambda(j);
            (-l * 0.5 * dt).exp() * exp_integral(l, 0.5 * dt)
        })
        .collect();
    (full, half)
}

pub fn check_interpolation_averages<R: Rng + ?Sized>(
    model: &SpectralModel,
    region: Region,
    t1: f64,
    t2: f64,
    m: usize,
    trials: usize,
    rng: &mut R,
) -> Result<InterpolationReport> {
    if !(t1 >= 0.0 && t2 > t1 && t2.is_finite()) {
        return Err(Error::Domain(format!(
            "need 0 <= T1 < T2, got T1 = {t1}, T2 = {t2}"
        )));
    }
    let tau = tau(model, region, m)?;
    let s = model.restricted_modes(region, m)?;
    let (full, half) = average_weights(model, t1, t2, m);
    let norm = (t2 - t1).sqrt().recip();
    let mut report = InterpolationReport {
        m,
        tau,
        max_ratio: 0.0,
        violations: 0,
        trials,
    };
    for _ in 0..trials {
        let a: DVector<f64> = DVector::from_fn(m, |_, _| rng.gen_range(-1.0..1.0));
        let lhs = (&s * a.component_mul(&DVector::from_column_slice(&half))).norm() * norm;
        let rhs = (&s * a.component_mul(&DVector::from_column_slice(&full))).norm() * norm;
        let scale = lhs.max(tau * rhs).max(f64::MIN_POSITIVE);
        if lhs > tau * rhs + 1e-10 * scale {
            report.violations += 1;
        }
        if rhs > 0.0 {
            report.max_ratio = report.max_ratio.max(lhs / rhs);
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::{ModelConfig, Potential};
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::sync::OnceLock;

    fn canonical() -> &'static SpectralModel {
        static MODEL: OnceLock<SpectralModel> = OnceLock::new();
        MODEL.get_or_init(|| SpectralModel::build(&ModelConfig::canonical()).unwrap())
    }

    fn full_mask() -> SpectralModel {
        let mut cfg = ModelConfig::canonical();
        cfg.n_grid = 120;
        cfg.omega = [0.0, cfg.domain_length];
        cfg.omega1 = [0.0, cfg.domain_length];
        SpectralModel::build(&cfg).unwrap()
    }

    #[test]
    fn full_mask_gives_identity() {
        let model = full_mask();
        let b = gram_matrix(&model, Region::Control, 5).unwrap();
        assert!((b - DMatrix::identity(5, 5)).amax() < 1e-12);
        for k in 1..6 {
            assert!(theta(&model, Region::Control, k).unwrap() < 1e-12);
        }
        assert_relative_eq!(tau(&model, Region::Control, 4).unwrap(), 2.0, epsilon = 1e-10);
        let c = calibrate_c0(&model, 1..=6, 1.0).unwrap();
        assert!(c.c0 < 1e-12);
    }

    #[test]
    fn single_mode_gram_is_contraction() {
        let b = gram_matrix(canonical(), Region::Control, 1).unwrap();
        assert!(b[(0, 0)] > 0.0 && b[(0, 0)] <= 1.0);
        assert_eq!(tau(canonical(), Region::Control, 1).unwrap(), 1.0);
    }

    #[test]
    fn canonical_m6_spectrum() {
        let spectrum = gram_spectrum(canonical(), Region::Control, 6).unwrap();
        assert!(spectrum[0] > 0.0);
        assert!(*spectrum.last().unwrap() <= 1.0 + 1e-10);
        // Regression baseline.
        assert!(spectrum[0] > 5e-8 && spectrum[0] < 2e-7, "{}", spectrum[0]);
    }

    #[test]
    fn gram_matrix_refuses_singular_orders() {
        assert!(matches!(
            gram_matrix(canonical(), Region::Control, 12),
            Err(Error::Resolution(_))
        ));
        assert!(gram_spectrum(canonical(), Region::Control, 12).is_ok());
        assert!(matches!(
            gram_spectrum(canonical(), Region::Control, 200),
            Err(Error::Resolution(_))
        ));
    }

    #[test]
    fn spectrum_matches_gram_where_resolvable() {
        for m in 1..=6 {
            let b = gram_matrix(canonical(), Region::Observation, m).unwrap();
            let mut direct: Vec<f64> = b.symmetric_eigenvalues().iter().copied().collect();
            direct.sort_by(f64::total_cmp);
            let svd = gram_spectrum(canonical(), Region::Observation, m).unwrap();
            for (a, b) in direct.iter().zip(&svd) {
                assert!((a - b).abs() < 1e-13, "M={m}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn tau_baseline_and_monotone() {
        let data = GramData::compute(canonical(), Region::Control, 8).unwrap();
        let mut previous = 1.0;
        for m in 1..=8 {
            let t = tau(canonical(), Region::Control, m).unwrap();
            assert!(t >= (m as f64).sqrt() && t >= previous);
            previous = t;
        }
        assert_relative_eq!(previous, data.tau, max_relative = 1e-12);
        assert_eq!(data.theta.len(), 7);
    }

    #[test]
    fn smaller_mask_needs_larger_constant() {
        let model = canonical();
        let wide = calibrate_c0(model, 2..=10, 1.0).unwrap();
        let mut cfg = ModelConfig::canonical();
        cfg.omega = [0.25 * cfg.domain_length, 0.45 * cfg.domain_length];
        cfg.omega1 = [0.6 * cfg.domain_length, 0.8 * cfg.domain_length];
        let narrow_model = SpectralModel::build(&cfg).unwrap();
        let narrow = calibrate_c0(&narrow_model, 2..=10, 1.0).unwrap();
        assert!(narrow.c0 > wide.c0);
    }

    #[test]
    fn calibration_rejects_unstable_only_range() {
        assert!(matches!(
            calibrate_c0(canonical(), [1], DEFAULT_SAFETY_FACTOR),
            Err(Error::Config(_))
        ));
        assert!(calibrate_c0(canonical(), 2..=4, 0.5).is_err());
    }

    #[test]
    fn single_mode_average_ratio() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let report =
            check_interpolation_averages(canonical(), Region::Control, 0.0, 0.5, 1, 10, &mut rng)
                .unwrap();
        let (full, half) = average_weights(canonical(), 0.0, 0.5, 1);
        assert_relative_eq!(report.max_ratio, half[0] / full[0], max_relative = 1e-12);
        assert!(report.max_ratio < 1.0);
        assert_eq!(report.violations, 0);
    }

    #[test]
    fn full_mask_average_ratio_within_sqrt_m() {
        let model = full_mask();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let report =
            check_interpolation_averages(&model, Region::Control, 0.0, 1.0, 3, 100, &mut rng)
                .unwrap();
        assert!(report.max_ratio <= 3f64.sqrt());
        assert_eq!(report.violations, 0);
    }

    #[test]
    fn rejects_degenerate_potential_mask() {
        let mut cfg = ModelConfig::canonical();
        cfg.n_grid = 40;
        cfg.potential = Potential::Constant(0.0);
        cfg.omega = [0.5, 0.6];
        let model = SpectralModel::build(&cfg).unwrap();
        assert!(matches!(
            gram_spectrum(&model, Region::Control, 3),
            Err(Error::Degeneracy(_))
        ));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn spectrum_inside_unit_interval(m in 1usize..=12, obs in any::<bool>()) {
            let region = if obs { Region::Observation } else { Region::Control };
            let spectrum = gram_spectrum(canonical(), region, m).unwrap();
            prop_assert!(spectrum[0] > 0.0);
            prop_assert!(*spectrum.last().unwrap() <= 1.0 + 1e-10);
        }

        #[test]
        fn theta_inside_unit_interval(k in 1usize..=12, obs in any::<bool>()) {
            let region = if obs { Region::Observation } else { Region::Control };
            // On the observation mask θ₁₂ is already within 1e-10 of 1.
            let k = if obs { k.min(11) } else { k };
            let a = angle(canonical(), region, k).unwrap();
            prop_assert!(a.theta >= 0.0 && a.theta < 1.0);
            prop_assert!((1.0 - a.theta - a.gap).abs() < 1e-12);
        }

        #[test]
        fn calibration_bounds_inverse(seed in any::<u64>(), m in 2usize..=8) {
            let c = calibrate_c0(canonical(), 2..=8, DEFAULT_SAFETY_FACTOR).unwrap();
            let b = gram_matrix(canonical(), Region::Control, m).unwrap();
            let chol = b.clone().cholesky().unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let alpha = DVector::from_fn(m, |_, _| rng.gen_range(-1.0..1.0));
            let quad = alpha.dot(&chol.solve(&alpha));
            prop_assert!(quad >= alpha.norm_squared() * (1.0 - 1e-10));
            prop_assert!(quad <= c.inverse_bound(canonical(), m) * alpha.norm_squared());
        }
    }
}
