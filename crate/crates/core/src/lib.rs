//! Sampled-data output feedback stabilization of 1-D heat equations with a
//! potential, on a finite-difference grid.

pub mod closed_loop;
pub mod error;
pub mod feedback;
pub mod gram;
pub mod min_norm;
mod precise;
pub mod prox;
pub mod spectral;

pub use error::{Error, Result};
pub use spectral::{exp_integral, Mask, ModelConfig, Potential, Region, SpectralModel, StateVector};
pub use gram::{
    angle, calibrate_c0, check_interpolation_averages, gram_matrix, gram_spectrum, tau, theta,
    Angle, CalibratedConstant, CalibrationSample, GramData, InterpolationReport,
};
pub use min_norm::{
    inp_bounds, snp_bounds, solve_inp, solve_snp, AlphaCoefficients, InpProblem, Method,
    MinNormSolution, MinNormSolver, NormBounds, SnpProblem,
};
pub use feedback::{
    bound_curves, m1, m2, select_parameters, synthesize, synthesize_with, trend_markers, BoundRow,
    FeedbackLaw, FeedbackParameters, OutputFeedback, TrendMarkers, ZeroLaw,
};
pub use closed_loop::{
    simulate, simulate_batch, simulate_with_hook, verify_decay, ControlRecord, DecayReport,
    DecayViolation, Schedule, Trajectory, ViolationKind,
};
