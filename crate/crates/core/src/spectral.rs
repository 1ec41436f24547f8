//! Semi-discrete model of `A = Δ − V` on `(0, L)` with Dirichlet boundary
//! conditions.
//!
//! The operator is discretized by second-order central differences on `n`
//! interior points, `h = L / (n + 1)`. Functions on the grid are paired with
//! the weighted inner product `⟨u, v⟩ = h Σ u_i v_i`, which keeps the
//! discrete operator self-adjoint; the eigenvectors `ξ_j` of `−A_h` are
//! normalized in that pairing. States are carried as coefficient vectors in
//! the eigenbasis, where the free flow is diagonal and therefore exact.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Below this `|λ t|` the exponential integral switches to its Taylor series.
const SERIES_THRESHOLD: f64 = 1e-6;

/// Potential `V` sampled on the interior grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Potential {
    Constant(f64),
    Table(Vec<f64>),
}

fn default_domain_length() -> f64 {
    std::f64::consts::PI
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    #[serde(default = "default_domain_length")]
    pub domain_length: f64,
    pub n_grid: usize,
    pub potential: Potential,
    /// Control subinterval `ω = (a, b)`.
    pub omega: [f64; 2],
    /// Observation subinterval `ω₁ = (a₁, b₁)`.
    pub omega1: [f64; 2],
}

impl ModelConfig {
    /// `Ω = (0, π)`, `n = 400`, `V ≡ −2`, `ω = (0.2π, 0.5π)`, `ω₁ = (0.55π, 0.85π)`.
    pub fn canonical() -> Self {
        let pi = std::f64::consts::PI;
        Self {
            domain_length: pi,
            n_grid: 400,
            potential: Potential::Constant(-2.0),
            omega: [0.2 * pi, 0.5 * pi],
            omega1: [0.55 * pi, 0.85 * pi],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.domain_length.is_finite() && self.domain_length > 0.0) {
            return Err(Error::Config(format!(
                "domain_length must be positive and finite, got {}",
                self.domain_length
            )));
        }
        if self.n_grid < 3 {
            return Err(Error::Config(format!(
                "n_grid must be at least 3, got {}",
                self.n_grid
            )));
        }
        for (name, [a, b]) in [("omega", self.omega), ("omega1", self.omega1)] {
            if !(a.is_finite() && b.is_finite() && 0.0 <= a && a < b && b <= self.domain_length) {
                return Err(Error::Config(format!(
                    "{name} = [{a}, {b}] must satisfy 0 <= a < b <= {}",
                    self.domain_length
                )));
            }
        }
        match &self.potential {
            Potential::Constant(v) if !v.is_finite() => {
                return Err(Error::Input(format!("potential value {v} is not finite")))
            }
            Potential::Table(values) => {
                if values.len() != self.n_grid {
                    return Err(Error::Config(format!(
                        "potential table has {} entries, n_grid is {}",
                        values.len(),
                        self.n_grid
                    )));
                }
                if let Some(i) = values.iter().position(|v| !v.is_finite()) {
                    return Err(Error::Input(format!(
                        "potential entry {i} is not finite ({})",
                        values[i]
                    )));
                }
            }
            Potential::Constant(_) => {}
        }
        Ok(())
    }

    pub fn potential_values(&self) -> Vec<f64> {
        match &self.potential {
            Potential::Constant(v) => vec![*v; self.n_grid],
            Potential::Table(values) => values.clone(),
        }
    }
}

/// Grid points lying strictly inside a subinterval.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mask {
    indices: Vec<usize>,
}

impl Mask {
    fn from_interval(grid: &[f64], a: f64, b: f64) -> Self {
        let indices = grid
            .iter()
            .enumerate()
            .filter(|(_, &x)| a < x && x < b)
            .map(|(i, _)| i)
            .collect();
        Self { indices }
    }

    pub fn from_indices(indices: Vec<usize>) -> Self {
        Self { indices }
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// Which of the two subdomains an operation acts on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Region {
    /// `ω`, where the control acts.
    Control,
    /// `ω₁`, where the output is observed.
    Observation,
}

impl std::fmt::Display for Region {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Region::Control => f.write_str("omega"),
            Region::Observation => f.write_str("omega1"),
        }
    }
}

/// A state in the eigenbasis: `a_j = ⟨y, ξ_j⟩`.
#[derive(Clone, Debug, PartialEq)]
pub struct StateVector {
    coefficients: DVector<f64>,
}

impl StateVector {
    pub fn zeros(n: usize) -> Self {
        Self {
            coefficients: DVector::zeros(n),
        }
    }

    /// The eigenvector `ξ_j` (1-based `j`).
    pub fn mode(n: usize, j: usize) -> Self {
        assert!((1..=n).contains(&j), "mode index {j} outside 1..={n}");
        let mut y = Self::zeros(n);
        y.coefficients[j - 1] = 1.0;
        y
    }

    pub fn from_coefficients(coefficients: DVector<f64>) -> Self {
        Self { coefficients }
    }

    /// Uniformly distributed on the unit sphere.
    pub fn random_unit<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Self {
        loop {
            let v = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
            let norm = v.norm();
            if norm > 0.0 {
                return Self::from_coefficients(v / norm);
            }
        }
    }

    pub fn coefficients(&self) -> &DVector<f64> {
        &self.coefficients
    }

    pub fn coefficients_mut(&mut self) -> &mut DVector<f64> {
        &mut self.coefficients
    }

    pub fn len(&self) -> usize {
        self.coefficients.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coefficients.is_empty()
    }

    /// Discrete `L²(Ω)` norm; the basis is orthonormal so this is Euclidean.
    pub fn norm(&self) -> f64 {
        self.coefficients.norm()
    }

    pub fn dot(&self, other: &StateVector) -> f64 {
        self.coefficients.dot(&other.coefficients)
    }

    pub fn is_finite(&self) -> bool {
        self.coefficients.iter().all(|c| c.is_finite())
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self::from_coefficients(&self.coefficients * factor)
    }

    pub fn add_scaled(&mut self, factor: f64, other: &StateVector) {
        self.coefficients.axpy(factor, &other.coefficients, 1.0);
    }
}

impl std::ops::Add for &StateVector {
    type Output = StateVector;
    fn add(self, rhs: &StateVector) -> StateVector {
        StateVector::from_coefficients(&self.coefficients + &rhs.coefficients)
    }
}

impl std::ops::Sub for &StateVector {
    type Output = StateVector;
    fn sub(self, rhs: &StateVector) -> StateVector {
        StateVector::from_coefficients(&self.coefficients - &rhs.coefficients)
    }
}

/// `∫₀ᵗ e^{−λ s} ds = (1 − e^{−λt}) / λ`, with a Taylor branch near `λt = 0`.
pub fn exp_integral(lambda: f64, t: f64) -> f64 {
    let x = lambda * t;
    if x.abs() < SERIES_THRESHOLD {
        t * (1.0 - x / 2.0 + x * x / 6.0 - x * x * x / 24.0)
    } else {
        -(-x).exp_m1() / lambda
    }
}

#[derive(Clone, Debug)]
pub struct SpectralModel {
    config: ModelConfig,
    h: f64,
    grid: Vec<f64>,
    potential: Vec<f64>,
    eigenvalues: Vec<f64>,
    /// Column `j` holds `ξ_{j+1}` on the grid.
    eigenvectors: DMatrix<f64>,
    gamma0: f64,
    nonpositive: usize,
    mask_omega: Mask,
    mask_omega1: Mask,
}

impl SpectralModel {
    pub fn build(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let n = config.n_grid;
        let h = config.domain_length / (n as f64 + 1.0);
        let grid: Vec<f64> = (1..=n).map(|i| i as f64 * h).collect();
        let potential = config.potential_values();

        let mask_omega = Mask::from_interval(&grid, config.omega[0], config.omega[1]);
        let mask_omega1 = Mask::from_interval(&grid, config.omega1[0], config.omega1[1]);
        for (name, mask) in [("omega", &mask_omega), ("omega1", &mask_omega1)] {
            if mask.is_empty() {
                return Err(Error::Config(format!(
                    "{name} contains no grid point; refine n_grid or widen the interval"
                )));
            }
        }

        let inv_h2 = 1.0 / (h * h);
        let mut matrix = DMatrix::<f64>::zeros(n, n);
        for i in 0..n {
            matrix[(i, i)] = 2.0 * inv_h2 + potential[i];
            if i + 1 < n {
                matrix[(i, i + 1)] = -inv_h2;
                matrix[(i + 1, i)] = -inv_h2;
            }
        }
        let eigen = SymmetricEigen::new(matrix);

        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| eigen.eigenvalues[a].total_cmp(&eigen.eigenvalues[b]));
        let scale = 1.0 / h.sqrt();
        let mut eigenvalues = Vec::with_capacity(n);
        let mut eigenvectors = DMatrix::<f64>::zeros(n, n);
        for (col, &k) in order.iter().enumerate() {
            eigenvalues.push(eigen.eigenvalues[k]);
            let v = eigen.eigenvectors.column(k);
            // Fix the sign so that ξ_j(x_1) > 0; the first component of a
            // Dirichlet tridiagonal eigenvector never vanishes.
            let sign = if v[0] < 0.0 { -scale } else { scale };
            eigenvectors.set_column(col, &(v * sign));
        }

        let gamma0 = potential.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()));
        let nonpositive = eigenvalues.iter().take_while(|&&l| l <= 0.0).count();

        Ok(Self {
            config: config.clone(),
            h,
            grid,
            potential,
            eigenvalues,
            eigenvectors,
            gamma0,
            nonpositive,
            mask_omega,
            mask_omega1,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn n(&self) -> usize {
        self.grid.len()
    }

    /// Grid spacing, which is also the quadrature weight.
    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn potential(&self) -> &[f64] {
        &self.potential
    }

    /// `λ₁ ≤ λ₂ ≤ … ≤ λ_n` of `−A_h`.
    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    /// `λ_j`, 1-based.
    pub fn lambda(&self, j: usize) -> f64 {
        self.eigenvalues[j - 1]
    }

    pub fn eigenvectors(&self) -> &DMatrix<f64> {
        &self.eigenvectors
    }

    /// `γ₀ = max |V(x_i)|`.
    pub fn gamma0(&self) -> f64 {
        self.gamma0
    }

    /// Number of non-positive eigenvalues `m`.
    pub fn unstable_count(&self) -> usize {
        self.nonpositive
    }

    pub fn mask(&self, region: Region) -> &Mask {
        match region {
            Region::Control => &self.mask_omega,
            Region::Observation => &self.mask_omega1,
        }
    }

    /// Number of leading modes whose Laplacian part the grid reproduces within
    /// relative tolerance `tol` of the continuous value `(jπ/L)²`.
    pub fn resolved_modes(&self, tol: f64) -> usize {
        let n = self.n();
        (1..=n)
            .take_while(|&j| {
                let x = j as f64 * std::f64::consts::PI / (2.0 * (n as f64 + 1.0));
                let ratio = (x.sin() / x).powi(2);
                1.0 - ratio <= tol
            })
            .count()
    }

    /// `e^{tA} y`: coefficient `j` is scaled by `e^{−λ_j t}`.
    pub fn semigroup_apply(&self, t: f64, y: &StateVector) -> Result<StateVector> {
        check_time(t)?;
        self.check_len(y)?;
        let coefficients = DVector::from_iterator(
            y.len(),
            y.coefficients
                .iter()
                .zip(&self.eigenvalues)
                .map(|(a, l)| (-l * t).exp() * a),
        );
        Ok(StateVector::from_coefficients(coefficients))
    }

    /// `∫₀ᵗ e^{A(t−s)} 1_ω u ds` for a time-invariant control `u` on `ω`.
    pub fn duhamel_const(&self, t: f64, u: &[f64]) -> Result<StateVector> {
        check_time(t)?;
        let mut injected = self.inject(Region::Control, u)?;
        for (c, l) in injected
            .coefficients_mut()
            .iter_mut()
            .zip(&self.eigenvalues)
        {
            *c *= exp_integral(*l, t);
        }
        Ok(injected)
    }

    /// `P_M y`: keep the first `M` coefficients.
    pub fn project(&self, m: usize, y: &StateVector) -> Result<StateVector> {
        self.check_order(m)?;
        self.check_len(y)?;
        let mut out = y.clone();
        out.coefficients_mut().rows_mut(m, self.n() - m).fill(0.0);
        Ok(out)
    }

    /// `1*_mask y`: grid values of `y` on the mask points.
    pub fn observe(&self, region: Region, y: &StateVector) -> Result<Vec<f64>> {
        self.check_len(y)?;
        Ok(self
            .mask(region)
            .indices()
            .iter()
            .map(|&i| self.eigenvectors.row(i).transpose().dot(y.coefficients()))
            .collect())
    }

    /// `1_mask v`: zero extension of mask values, returned in the eigenbasis.
    pub fn inject(&self, region: Region, values: &[f64]) -> Result<StateVector> {
        let mask = self.mask(region);
        if values.len() != mask.len() {
            return Err(Error::Input(format!(
                "{region} carries {} points, got {} values",
                mask.len(),
                values.len()
            )));
        }
        let mut coefficients = DVector::zeros(self.n());
        for (&i, &v) in mask.indices().iter().zip(values) {
            if v != 0.0 {
                coefficients.axpy(self.h * v, &self.eigenvectors.row(i).transpose(), 1.0);
            }
        }
        Ok(StateVector::from_coefficients(coefficients))
    }

    /// Grid values `y(x_i)`.
    pub fn to_grid(&self, y: &StateVector) -> Vec<f64> {
        (&self.eigenvectors * y.coefficients()).iter().copied().collect()
    }

    /// Coefficients `⟨y, ξ_j⟩` of grid values.
    pub fn from_grid(&self, values: &[f64]) -> Result<StateVector> {
        if values.len() != self.n() {
            return Err(Error::Input(format!(
                "expected {} grid values, got {}",
                self.n(),
                values.len()
            )));
        }
        let v = DVector::from_column_slice(values);
        Ok(StateVector::from_coefficients(
            self.eigenvectors.tr_mul(&v) * self.h,
        ))
    }

    /// `⟨u, v⟩_mask = h Σ u_i v_i` over mask values.
    pub fn mask_inner(&self, u: &[f64], v: &[f64]) -> f64 {
        self.h * u.iter().zip(v).map(|(a, b)| a * b).sum::<f64>()
    }

    pub fn mask_norm(&self, u: &[f64]) -> f64 {
        self.mask_inner(u, u).sqrt()
    }

    /// `|mask| × M` matrix whose Euclidean geometry is that of `L²(mask)`:
    /// entry `(r, j)` is `√h · ξ_{j+1}(x_{mask[r]})`.
    pub fn restricted_modes(&self, region: Region, m: usize) -> Result<DMatrix<f64>> {
        self.check_order(m)?;
        let mask = self.mask(region);
        let sqrt_h = self.h.sqrt();
        Ok(DMatrix::from_fn(mask.len(), m, |r, j| {
            sqrt_h * self.eigenvectors[(mask.indices()[r], j)]
        }))
    }

    pub(crate) fn check_order(&self, m: usize) -> Result<()> {
        if m == 0 || m > self.n() {
            return Err(Error::Domain(format!(
                "projection order {m} outside 1..={}",
                self.n()
            )));
        }
        Ok(())
    }

    fn check_len(&self, y: &StateVector) -> Result<()> {
        if y.len() != self.n() {
            return Err(Error::Input(format!(
                "state has {} coefficients, model has {}",
                y.len(),
                self.n()
            )));
        }
        Ok(())
    }
}

fn check_time(t: f64) -> Result<()> {
    if !(t >= 0.0 && t.is_finite()) {
        return Err(Error::Domain(format!("time must be finite and >= 0, got {t}")));
    }
    Ok(())
}
