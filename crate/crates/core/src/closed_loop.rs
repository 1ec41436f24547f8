//! Exact simulation of the sampled-data closed loop in the eigenbasis, and
//! checks of its decay guarantees.

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feedback::OutputFeedback;
use crate::spectral::{exp_integral, Region, SpectralModel, StateVector};

pub const DIVERGENCE_FACTOR: f64 = 1e12;
pub const CONTRACTION_SLACK: f64 = 1e-9;

/// Timing of one period `[2iT, (2i+2)T)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    #[serde(rename = "T")]
    pub t: f64,
}

impl Schedule {
    pub fn new(t: f64) -> Result<Self> {
        if !(t > 0.0 && t.is_finite()) {
            return Err(Error::Domain(format!("T must be positive, got {t}")));
        }
        Ok(Self { t })
    }

    pub fn period_start(&self, i: usize) -> f64 {
        2.0 * i as f64 * self.t
    }

    pub fn sample_time(&self, i: usize) -> f64 {
        (2.0 * i as f64 + 0.75) * self.t
    }

    /// Actuation window `[(2i+1)T, (2i+3/2)T)`.
    pub fn window(&self, i: usize) -> (f64, f64) {
        let base = 2.0 * i as f64;
        ((base + 1.0) * self.t, (base + 1.5) * self.t)
    }

    /// Period start, sample, window start, window end, period end.
    pub fn breakpoints(&self, i: usize) -> [f64; 5] {
        let (a, b) = self.window(i);
        [self.period_start(i), self.sample_time(i), a, b, self.period_start(i + 1)]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ControlRecord {
    pub period: usize,
    pub sample_time: f64,
    pub start: f64,
    pub end: f64,
    pub values: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct Trajectory {
    pub schedule: Schedule,
    pub snapshots: Vec<(f64, StateVector)>,
    /// `‖y(2nT)‖` for `n = 0..=n_periods`.
    pub period_norms: Vec<f64>,
    pub controls: Vec<ControlRecord>,
}

impl Trajectory {
    /// The control acting at `t`, or `None` outside every actuation window.
    pub fn control_at(&self, t: f64) -> Option<&[f64]> {
        self.controls
            .iter()
            .find(|c| c.start <= t && t < c.end)
            .map(|c| c.values.as_slice())
    }

    pub fn initial_norm(&self) -> f64 {
        self.period_norms.first().copied().unwrap_or(0.0)
    }

    /// `(t, ‖y(t)‖)` for every snapshot.
    pub fn norms(&self) -> Vec<(f64, f64)> {
        self.snapshots.iter().map(|(t, y)| (*t, y.norm())).collect()
    }
}

struct Recorder<'a> {
    model: &'a SpectralModel,
    output_dt: f64,
    limit: f64,
    snapshots: Vec<(f64, StateVector)>,
}

impl Recorder<'_> {
    /// Advances `y` from `start` to `end` under the constant control whose
    /// injection is `forcing`, recording output times in between and `end`.
    fn advance(&mut self, y: &StateVector, start: f64, end: f64, forcing: Option<&StateVector>) -> Result<StateVector> {
        let first = (start / self.output_dt).floor() as usize + 1;
        let mut k = first;
        loop {
            let t = k as f64 * self.output_dt;
            if t >= end {
                break;
            }
            if t > start {
                let state = self.evolve(y, t - start, forcing)?;
                self.push(t, state)?;
            }
            k += 1;
        }
        let state = self.evolve(y, end - start, forcing)?;
        self.push(end, state.clone())?;
        Ok(state)
    }

    fn evolve(&self, y: &StateVector, dt: f64, forcing: Option<&StateVector>) -> Result<StateVector> {
        let mut next = self.model.semigroup_apply(dt, y)?;
        if let Some(d) = forcing {
            let coefficients = DVector::from_iterator(
                d.len(),
                d.coefficients()
                    .iter()
                    .zip(self.model.eigenvalues())
                    .map(|(c, &l)| c * exp_integral(l, dt)),
            );
            next.add_scaled(1.0, &StateVector::from_coefficients(coefficients));
        }
        Ok(next)
    }

    fn push(&mut self, t: f64, state: StateVector) -> Result<()> {
        let norm = state.norm();
        if !state.is_finite() {
            return Err(Error::Divergence { time: t, detail: "state is not finite".into() });
        }
        if norm > self.limit {
            return Err(Error::Divergence {
                time: t,
                detail: format!("‖y‖ = {norm:e} exceeds {:e}", self.limit),
            });
        }
        self.snapshots.push((t, state));
        Ok(())
    }
}

pub fn simulate(
    model: &SpectralModel,
    law: &dyn OutputFeedback,
    y0: &StateVector,
    t: f64,
    n_periods: usize,
    output_dt: f64,
) -> Result<Trajectory> {
    simulate_with_hook(model, law, y0, t, n_periods, output_dt, &mut |_, _| {})
}

/// As [`simulate`], calling `hook(period, state)` right after each sample is
/// taken; the hook may modify the state.
pub fn simulate_with_hook(
    model: &SpectralModel,
    law: &dyn OutputFeedback,
    y0: &StateVector,
    t: f64,
    n_periods: usize,
    output_dt: f64,
    hook: &mut dyn FnMut(usize, &mut StateVector),
) -> Result<Trajectory> {
    let schedule = Schedule::new(t)?;
    if n_periods == 0 {
        return Err(Error::Domain("n_periods must be at least 1".into()));
    }
    if !(output_dt > 0.0 && output_dt.is_finite()) {
        return Err(Error::Domain(format!("output_dt must be positive, got {output_dt}")));
    }
    if y0.len() != model.n() {
        return Err(Error::Input(format!(
            "initial state has {} coefficients, model has {}",
            y0.len(),
            model.n()
        )));
    }
    if !y0.is_finite() {
        return Err(Error::Input("initial state is not finite".into()));
    }
    let y0_norm = y0.norm();
    let mut rec = Recorder {
        model,
        output_dt,
        limit: if y0_norm > 0.0 { DIVERGENCE_FACTOR * y0_norm } else { f64::INFINITY },
        snapshots: vec![(0.0, y0.clone())],
    };
    let mut period_norms = vec![y0_norm];
    let mut controls = Vec::with_capacity(n_periods);
    let mut y = y0.clone();

    for i in 0..n_periods {
        let [start, sample, on, off, end] = schedule.breakpoints(i);
        y = rec.advance(&y, start, sample, None)?;
        let observation = model.observe(Region::Observation, &y)?;
        let values = law.control(&observation)?;
        hook(i, &mut y);
        if let Some(last) = rec.snapshots.last_mut() {
            last.1 = y.clone();
        }
        y = rec.advance(&y, sample, on, None)?;
        let forcing = model.inject(Region::Control, &values)?;
        let active = values.iter().any(|&v| v != 0.0);
        y = rec.advance(&y, on, off, active.then_some(&forcing))?;
        y = rec.advance(&y, off, end, None)?;
        period_norms.push(y.norm());
        controls.push(ControlRecord { period: i, sample_time: sample, start: on, end: off, values });
    }

    Ok(Trajectory { schedule, snapshots: rec.snapshots, period_norms, controls })
}

/// Runs one trajectory per initial state, concurrently.
pub fn simulate_batch(
    model: &SpectralModel,
    law: &dyn OutputFeedback,
    initial: &[StateVector],
    t: f64,
    n_periods: usize,
    output_dt: f64,
) -> Vec<Result<Trajectory>> {
    initial
        .par_iter()
        .map(|y0| simulate(model, law, y0, t, n_periods, output_dt))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecayViolation {
    pub kind: ViolationKind,
    /// Period index for contraction failures, snapshot index otherwise.
    pub index: usize,
    pub time: f64,
    pub ratio: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    Contraction,
    PointwiseBound,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecayReport {
    /// Largest `‖y(2(n+1)T)‖ / ‖y(2nT)‖`.
    pub worst_two_period_ratio: f64,
    /// `e^{−2γT}`.
    pub contraction_target: f64,
    /// Smallest `(bound(t) − ‖y(t)‖) / bound(t)` over the snapshots.
    pub bound_margin: f64,
    pub pass: bool,
    pub violations: Vec<DecayViolation>,
}

/// `(1 + (T/2)‖F‖) e^{(2γ₀+3γ)T}`, the constant of the pointwise bound.
pub fn pointwise_constant(model: &SpectralModel, op_norm: f64, gamma: f64, t: f64) -> f64 {
    (1.0 + 0.5 * t * op_norm) * ((2.0 * model.gamma0() + 3.0 * gamma) * t).exp()
}

pub fn verify_decay(model: &SpectralModel, traj: &Trajectory, op_norm: f64, gamma: f64) -> DecayReport {
    let t = traj.schedule.t;
    let y0 = traj.initial_norm();
    let target = (-2.0 * gamma * t).exp();
    let slack = CONTRACTION_SLACK * y0;
    let mut violations = Vec::new();

    let mut worst_ratio = 0.0_f64;
    for (n, pair) in traj.period_norms.windows(2).enumerate() {
        if pair[0] > 0.0 {
            worst_ratio = worst_ratio.max(pair[1] / pair[0]);
        }
        if pair[1] > target * pair[0] + slack {
            violations.push(DecayViolation {
                kind: ViolationKind::Contraction,
                index: n,
                time: traj.schedule.period_start(n + 1),
                ratio: if pair[0] > 0.0 { pair[1] / pair[0] } else { f64::INFINITY },
            });
        }
    }

    let constant = pointwise_constant(model, op_norm, gamma, t);
    let mut margin = 1.0_f64;
    for (k, (time, y)) in traj.snapshots.iter().enumerate() {
        let bound = constant * (-gamma * time).exp() * y0;
        let norm = y.norm();
        if bound > 0.0 {
            margin = margin.min((bound - norm) / bound);
        }
        if norm > bound + slack {
            violations.push(DecayViolation {
                kind: ViolationKind::PointwiseBound,
                index: k,
                time: *time,
                ratio: if bound > 0.0 { norm / bound } else { f64::INFINITY },
            });
        }
    }

    DecayReport {
        worst_two_period_ratio: worst_ratio,
        contraction_target: target,
        bound_margin: margin,
        pass: violations.is_empty(),
        violations,
    }
}
