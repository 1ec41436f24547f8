//! Acceptance criteria on the canonical model (Ω = (0,π), n = 400, V ≡ −2,
//! ω = (0.2π, 0.5π), ω₁ = (0.55π, 0.85π), γ = 0.5, T = 1). Prints one line
//! per criterion and exits non-zero if any fails.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use common::*;
use heatfb::*;
use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const GAMMA: f64 = 0.5;
const T: f64 = 1.0;

type Outcome = std::result::Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn spectral_fidelity() -> Outcome {
    let start = Instant::now();
    let model = SpectralModel::build(&ModelConfig::canonical()).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed().as_secs_f64();
    let worst_rel = (1..=10)
        .map(|j| {
            let exact = (j * j) as f64 - 2.0;
            (model.lambda(j) - exact).abs() / exact.abs()
        })
        .fold(0.0, f64::max);
    let xi = model.eigenvectors();
    let gram = xi.transpose() * xi * model.h();
    let mut residual = 0.0_f64;
    for i in 0..gram.nrows() {
        for j in 0..gram.ncols() {
            let target = if i == j { 1.0 } else { 0.0 };
            residual = residual.max((gram[(i, j)] - target).abs());
        }
    }
    check(
        worst_rel <= 0.01 && residual <= 1e-10 && elapsed < 5.0,
        format!("max rel eigenvalue error {worst_rel:.2e}, orthonormality residual {residual:.2e}, build {elapsed:.2}s"),
    )
}

fn gram_spectrum_bounds() -> Outcome {
    let model = canonical();
    let cal = calibration();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (mut lo, mut hi) = (f64::INFINITY, 0.0_f64);
    let mut worst = 0.0_f64;
    for region in [Region::Control, Region::Observation] {
        for m in 1..=12 {
            let spectrum = gram_spectrum(model, region, m).map_err(|e| e.to_string())?;
            lo = lo.min(spectrum[0]);
            hi = hi.max(spectrum[m - 1]);
            let svd = mask_columns(model, region, m).svd(false, true);
            let vt = svd.v_t.unwrap();
            let sig = svd.singular_values;
            let bound = cal.inverse_bound(model, m);
            for _ in 0..100 {
                let a = DVector::from_fn(m, |_, _| rng.gen_range(-1.0..1.0));
                let c = &vt * &a;
                let q: f64 = (0..m).map(|k| (c[k] / sig[k]).powi(2)).sum();
                worst = worst.max(q / (bound * a.norm_squared()));
            }
        }
    }
    check(
        lo > 0.0 && hi <= 1.0 + 1e-10 && worst <= 1.0,
        format!("spectrum in [{lo:.3e}, {hi:.12}], C0 = {:.6}, worst αᵀB⁻¹α / bound = {worst:.3e}", cal.c0),
    )
}

fn theta_range() -> Outcome {
    let model = canonical();
    let mut max_theta = 0.0_f64;
    let mut min_theta = 1.0_f64;
    for k in 1..=12 {
        let a = angle(model, Region::Control, k).map_err(|e| format!("k = {k}: {e}"))?;
        max_theta = max_theta.max(a.theta);
        min_theta = min_theta.min(a.theta);
        if a.gap < 1e-10 {
            return Err(format!("θ_{k} gap {:e}", a.gap));
        }
    }
    let mut worst = 0.0_f64;
    for region in [Region::Control, Region::Observation] {
        for k in 1..=4 {
            let a = theta(model, region, k).map_err(|e| e.to_string())?;
            worst = worst.max((a - theta_generalized_eigen(model, region, k)).abs());
        }
    }
    check(
        min_theta >= 0.0 && max_theta <= 1.0 - 1e-10 && worst <= 1e-8,
        format!("θ_1..12 on omega in [{min_theta:.6}, {max_theta:.12}], oracle gap (k ≤ 4) {worst:.2e}"),
    )
}

fn interpolation_averages() -> Outcome {
    let model = canonical();
    let (t1, t2, m, trials, seed) = (0.0, 0.5, 5, 200, 4);
    let report = check_interpolation_averages(model, Region::Control, t1, t2, m, trials, &mut ChaCha8Rng::seed_from_u64(seed))
        .map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut quad_violations = 0;
    for _ in 0..trials {
        let a: Vec<f64> = (0..m).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let (half, full) = masked_averages(model, Region::Control, t1, t2, &a);
        let scale = half.max(report.tau * full);
        if half > report.tau * full + 1e-10 * scale {
            quad_violations += 1;
        }
    }
    check(
        report.violations == 0 && quad_violations == 0,
        format!("τ_5 = {:.4}, max ratio {:.4}, violations {} (quadrature {quad_violations})", report.tau, report.max_ratio, report.violations),
    )
}

fn snp(zeta: StateVector) -> SnpProblem {
    SnpProblem { t1: 0.0, t2: 0.5, m: 5, eps: 1e-3, zeta }
}

fn inp(zeta: StateVector) -> InpProblem {
    InpProblem { t1: 0.0, t2: 0.5, tau: 0.25, m: 5, eps: 1e-3, zeta }
}

fn solver_correctness() -> Outcome {
    let model = canonical();
    let solver = MinNormSolver::new(model);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let sh = model.h().sqrt();
    let (mut kkt, mut norm_err, mut align_err) = (0.0_f64, 0.0_f64, 0.0_f64);
    for _ in 0..20 {
        let p = snp(random_state(&mut rng, model.n(), 8, 1e-3));
        let q = inp(p.zeta.clone());
        let mu = p.eps * p.zeta.norm();

        let s = solver.solve_snp(&p).map_err(|e| e.to_string())?;
        kkt = kkt.max(s.kkt_residual / s.scale);
        let weights: Vec<f64> = (1..=p.m).map(|j| exp_integral_quad(model.lambda(j), 0.5)).collect();
        let beta: Vec<f64> = (1..=p.m).map(|j| (-model.lambda(j) * 0.5).exp() * p.zeta.coefficients()[j - 1]).collect();
        let reference = penalty_min_norm(&mask_columns(model, Region::Control, p.m), &weights, &beta, mu);
        norm_err = norm_err.max((s.control_norm - reference.norm()).abs() / reference.norm());
        let z = snp_terminal(model, p.t1, p.t2, p.m, &p.zeta, &s.control);
        let b = DVector::from_column_slice(&s.b);
        align_err = align_err.max((z + &b * (mu / b.norm())).norm() / mu);

        let s = solver.solve_inp(&q).map_err(|e| e.to_string())?;
        kkt = kkt.max(s.kkt_residual / s.scale);
        let weights: Vec<f64> = (1..=q.m).map(|j| (-model.lambda(j) * 0.25).exp()).collect();
        let beta: Vec<f64> = (1..=q.m).map(|j| (-model.lambda(j) * 0.5).exp() * q.zeta.coefficients()[j - 1]).collect();
        let reference = penalty_min_norm(&mask_columns(model, Region::Observation, q.m), &weights, &beta, mu);
        norm_err = norm_err.max((s.control_norm - reference.norm()).abs() / reference.norm());
        let w = DVector::from_iterator(s.control.len(), s.control.iter().map(|c| sh * c));
        norm_err = norm_err.max((w - &reference).norm() / reference.norm());
        let z = inp_terminal(model, q.t1, q.t2, q.tau, q.m, &q.zeta, &s.control);
        let b = DVector::from_column_slice(&s.b);
        align_err = align_err.max((z + &b * (mu / b.norm())).norm() / mu);
    }

    // ζ = a ξ₁ + ξ₇ places |P_5 e^{AΔT} ζ| just inside or just outside ε‖ζ‖.
    let mut zero_ok = true;
    for &factor in &[0.999, 1.001, 0.5, 2.0] {
        let e1 = (-model.lambda(1) * 0.5).exp();
        let r = factor * 1e-3;
        let a = r / (e1 * e1 - r * r).sqrt();
        let mut zeta = StateVector::mode(model.n(), 1).scaled(a);
        zeta.add_scaled(1.0, &StateVector::mode(model.n(), 7));
        let s = solver.solve_snp(&snp(zeta.clone())).map_err(|e| e.to_string())?;
        let i = solver.solve_inp(&inp(zeta)).map_err(|e| e.to_string())?;
        zero_ok &= s.is_zero == (factor < 1.0) && i.is_zero == (factor < 1.0);
        zero_ok &= (s.control_norm == 0.0) == s.is_zero && (i.control_norm == 0.0) == i.is_zero;
    }
    check(
        kkt <= 1e-8 && norm_err <= 1e-6 && align_err <= 1e-6 && zero_ok,
        format!("KKT/scale {kkt:.2e}, oracle rel err {norm_err:.2e}, alignment rel err {align_err:.2e}, zero criterion exact: {zero_ok}"),
    )
}

fn lower_bounds() -> Outcome {
    let model = canonical();
    let solver = MinNormSolver::new(model);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (mut snp_margin, mut inp_margin) = (f64::INFINITY, f64::INFINITY);
    let mut count = 0;
    while count < 100 {
        let zeta = random_state(&mut rng, model.n(), 8, 1e-3);
        let p = snp(zeta.clone());
        let q = inp(zeta);
        let (Ok(bp), Ok(bq)) = (snp_bounds(model, &p, None), inp_bounds(model, &q, None)) else {
            continue;
        };
        count += 1;
        let s = solver.solve_snp(&p).map_err(|e| e.to_string())?;
        let i = solver.solve_inp(&q).map_err(|e| e.to_string())?;
        snp_margin = snp_margin.min(s.control_norm / bp.lower - 1.0);
        inp_margin = inp_margin.min(i.control_norm / bq.lower - 1.0);
    }
    check(
        snp_margin > 0.0 && inp_margin > 0.0,
        format!("{count} draws, min relative margin: distributed {snp_margin:.3e}, impulse {inp_margin:.3e}"),
    )
}

fn synthesis_sanity() -> Outcome {
    let model = canonical();
    let law = synthesize(model, GAMMA, T, calibration()).map_err(|e| e.to_string())?;
    let p = &law.params;
    let eps_expected = (-4.0_f64).exp() / (9.0 * 2f64.sqrt());
    let h_bound = 8.0 / 9.0 * (-0.5_f64).exp();
    let nonzero = law.f_norms().iter().chain(law.h_norms().iter()).all(|&v| v > 0.0);
    let h1 = law.h_norms()[0];
    check(
        p.n == 2 && p.c_hat_p == 0.0 && (p.eps0 - eps_expected).abs() <= 1e-15 && (p.eps0 - 1.439e-3).abs() < 1e-6 && nonzero && h1 >= h_bound,
        format!("N = {}, M = {}, ĉ_p = {}, ε₀ = {:.4e}, ‖h₁‖ = {h1:.4} ≥ {h_bound:.4}, all 2N controls nonzero: {nonzero}", p.n, p.m, p.c_hat_p, p.eps0),
    )
}

fn closed_loop_decay() -> Outcome {
    let start = Instant::now();
    let model = canonical();
    let law = synthesize(model, GAMMA, T, calibration()).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut initial: Vec<StateVector> = (0..20).map(|_| random_unit_state(&mut rng, model.n())).collect();
    initial.push(StateVector::mode(model.n(), 1));
    let target = (-2.0 * GAMMA * T).exp();
    let (mut worst_ratio, mut worst_margin) = (0.0_f64, f64::INFINITY);
    let mut pass = true;
    for traj in simulate_batch(model, &law, &initial, T, 10, 0.05) {
        let traj = traj.map_err(|e| e.to_string())?;
        let report = verify_decay(model, &traj, law.op_norm, GAMMA);
        pass &= report.pass;
        worst_ratio = worst_ratio.max(report.worst_two_period_ratio);
        worst_margin = worst_margin.min(report.bound_margin);
    }
    let elapsed = start.elapsed().as_secs_f64();
    check(
        pass && worst_ratio <= target && elapsed < 30.0,
        format!("21 trajectories × 10 periods, worst two-period ratio {worst_ratio:.3e} ≤ {target:.4}, min pointwise margin {worst_margin:.6}, {elapsed:.1}s"),
    )
}

fn bound_trends() -> Outcome {
    let model = canonical();
    let grid = [0.125, 0.25, 0.5, 1.0, 2.0, 4.0, 8.0, 16.0];
    let rows = bound_curves(model, GAMMA, &grid, calibration()).map_err(|e| e.to_string())?;
    let marks = trend_markers(&rows);
    let ratio = marks.m1_times_t[0] / marks.m1_times_t[1];
    let within_two = (0.5..=2.0).contains(&ratio);
    let norms: Vec<String> = rows.iter().map(|r| format!("{:.2e}", r.op_norm)).collect();
    check(
        marks.dominates_m1 && marks.endpoints_above_min && within_two,
        format!(
            "‖F_T‖ = [{}], min ‖F_T‖/m1 {:.3e}, endpoints above min: {}, m1·T = {:.4}, {:.4}",
            norms.join(", "),
            marks.min_ratio_to_m1,
            marks.endpoints_above_min,
            marks.m1_times_t[0],
            marks.m1_times_t[1]
        ),
    )
}

fn instability_baseline() -> Outcome {
    let model = canonical();
    let y0 = StateVector::mode(model.n(), 1);
    let traj = simulate(model, &ZeroLaw::new(model), &y0, T, 5, 0.5).map_err(|e| e.to_string())?;
    let expected = (2.0 * T).exp();
    let worst = traj
        .period_norms
        .windows(2)
        .map(|w| (w[1] / w[0] / expected - 1.0).abs())
        .fold(0.0, f64::max);
    check(worst <= 0.01, format!("two-period growth e^(2T)·(1 ± {worst:.2e})"))
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("spectral fidelity", spectral_fidelity),
        ("Gram spectrum and calibrated inverse bound", gram_spectrum_bounds),
        ("angle range and oracle agreement", theta_range),
        ("half-interval average inequality", interpolation_averages),
        ("minimal-norm solver correctness", solver_correctness),
        ("minimal-norm lower bounds", lower_bounds),
        ("synthesis sanity", synthesis_sanity),
        ("closed-loop decay", closed_loop_decay),
        ("operator-norm trends over T", bound_trends),
        ("instability without feedback", instability_baseline),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|_| Err("panicked".into()));
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS {:>2} {name}: {detail} [{secs:.1}s]", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL {:>2} {name}: {detail} [{secs:.1}s]", i + 1);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
