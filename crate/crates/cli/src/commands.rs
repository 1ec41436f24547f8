use std::path::{Path, PathBuf};

use heatfb::{
    bound_curves, calibrate_c0, m1, m2, simulate, simulate_batch, synthesize, trend_markers, verify_decay,
    CalibratedConstant, DecayViolation, FeedbackLaw, Region, SpectralModel, StateVector, TrendMarkers,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{check_grid, ExperimentConfig};
use crate::output::{hash_json, Output};
use crate::{Cli, CliError, Command};

const DEFAULT_OUTPUT_DIR: &str = "heatfb-out";
const NORM_AGREEMENT: f64 = 1e-8;

#[derive(Serialize, Deserialize)]
struct CalibrationFile {
    #[serde(flatten)]
    calibration: CalibratedConstant,
    model_hash: String,
    manifest_hash: String,
}

#[derive(Serialize, Deserialize)]
struct LawFile {
    #[serde(flatten)]
    law: FeedbackLaw,
    model_hash: String,
    manifest_hash: String,
}

#[derive(Serialize)]
struct Check {
    name: &'static str,
    pass: bool,
    detail: String,
}

struct Context<'a> {
    config: &'a ExperimentConfig,
    model: SpectralModel,
    out: Output,
    seed: u64,
}

pub fn run(cli: &Cli) -> Result<(), CliError> {
    let config = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    config.validate()?;
    let dir = cli
        .output_dir
        .clone()
        .or_else(|| config.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT_DIR));
    let model = SpectralModel::build(&config.model)?;
    let name = command_name(&cli.command);
    let arguments = vec![format!("{:?}", cli.command), format!("seed={}", cli.seed)];
    let out = Output::new(&dir, name, arguments, hash_json(&config), hash_json(&config.model));
    let mut ctx = Context { config: &config, model, out, seed: cli.seed };

    let result = match &cli.command {
        Command::ModelInfo => model_info(&mut ctx),
        Command::Calibrate { safety_factor } => calibrate(&mut ctx, *safety_factor),
        Command::Synthesize { gamma, t, calibration } => {
            synthesize_cmd(&mut ctx, gamma.unwrap_or(config.gamma), t.unwrap_or(config.t), calibration.as_deref())
        }
        Command::Simulate { law, y0, periods, output_dt } => simulate_cmd(
            &mut ctx,
            law,
            y0,
            periods.unwrap_or(config.periods),
            output_dt.unwrap_or(config.output_dt),
        ),
        Command::SweepT { gamma, t_grid, calibration } => sweep(
            &mut ctx,
            gamma.unwrap_or(config.gamma),
            t_grid.clone().unwrap_or_else(|| config.t_grid.clone()),
            calibration.as_deref(),
        ),
        Command::Verify { gamma, t, calibration } => {
            verify(&mut ctx, gamma.unwrap_or(config.gamma), t.unwrap_or(config.t), calibration.as_deref())
        }
    };
    // The manifest is written even when a check failed, so the report it
    // lists can be traced.
    let status = match result {
        Ok(()) | Err(CliError::Assertion { .. }) => result,
        Err(e) => return Err(e),
    };
    ctx.out.finish()?;
    status
}

fn command_name(command: &Command) -> &'static str {
    match command {
        Command::ModelInfo => "model-info",
        Command::Calibrate { .. } => "calibrate",
        Command::Synthesize { .. } => "synthesize",
        Command::Simulate { .. } => "simulate",
        Command::SweepT { .. } => "sweep-T",
        Command::Verify { .. } => "verify",
    }
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| usage(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| usage(format!("{}: {e}", path.display())))
}

fn check_model_hash(found: &str, ctx: &Context, what: &Path) -> Result<(), CliError> {
    if found != ctx.out.model_hash() {
        return Err(usage(format!(
            "{} was produced for a different model (hash {found}, current {})",
            what.display(),
            ctx.out.model_hash()
        )));
    }
    Ok(())
}

fn obtain_calibration(ctx: &mut Context, path: Option<&Path>, safety_factor: Option<f64>) -> Result<CalibratedConstant, CliError> {
    let calibration = match path {
        Some(path) => {
            let file: CalibrationFile = read_json(path)?;
            check_model_hash(&file.model_hash, ctx, path)?;
            file.calibration
        }
        None => {
            let [lo, hi] = ctx.config.calibration_range;
            calibrate_c0(&ctx.model, lo..=hi, safety_factor.unwrap_or(ctx.config.safety_factor))?
        }
    };
    ctx.out.set_calibration(calibration.c0, calibration.safety_factor);
    Ok(calibration)
}

fn finish_checks(ctx: &mut Context, report_name: &str, report: &impl Serialize, checks: &[Check]) -> Result<(), CliError> {
    let path = ctx.out.write_json(report_name, report)?;
    let failed: Vec<&str> = checks.iter().filter(|c| !c.pass).map(|c| c.name).collect();
    for c in checks {
        println!("{} {}: {}", if c.pass { "ok  " } else { "FAIL" }, c.name, c.detail);
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Assertion { report: path, message: failed.join(", ") })
    }
}

#[derive(Serialize)]
struct ModelInfo<'a> {
    n_grid: usize,
    h: f64,
    eigenvalues: &'a [f64],
    gamma0: f64,
    unstable_count: usize,
    resolved_modes: usize,
    omega_points: usize,
    omega1_points: usize,
    model_hash: &'a str,
    manifest_hash: &'a str,
}

fn model_info(ctx: &mut Context) -> Result<(), CliError> {
    let model = &ctx.model;
    let shown = model.n().min(10);
    let eigenvalues = &model.eigenvalues()[..shown];
    for (j, l) in eigenvalues.iter().enumerate() {
        println!("lambda_{} = {l}", j + 1);
    }
    println!("gamma0 = {}", model.gamma0());
    println!("m = {}", model.unstable_count());
    let info = ModelInfo {
        n_grid: model.n(),
        h: model.h(),
        eigenvalues,
        gamma0: model.gamma0(),
        unstable_count: model.unstable_count(),
        resolved_modes: model.resolved_modes(heatfb::gram::RESOLUTION_TOL),
        omega_points: model.mask(Region::Control).len(),
        omega1_points: model.mask(Region::Observation).len(),
        model_hash: ctx.out.model_hash(),
        manifest_hash: ctx.out.manifest_hash(),
    };
    let info = serde_json::to_value(&info).map_err(|e| CliError::Io(e.to_string()))?;
    ctx.out.write_json("model_info.json", &info)?;
    Ok(())
}

fn calibrate(ctx: &mut Context, safety_factor: Option<f64>) -> Result<(), CliError> {
    let calibration = obtain_calibration(ctx, None, safety_factor)?;
    println!("C0 = {} (safety factor {})", calibration.c0, calibration.safety_factor);
    let file = CalibrationFile {
        calibration,
        model_hash: ctx.out.model_hash().to_string(),
        manifest_hash: ctx.out.manifest_hash().to_string(),
    };
    ctx.out.write_json("calibration.json", &file)?;
    Ok(())
}

#[derive(Serialize)]
struct SynthesisReport<'a> {
    gamma: f64,
    #[serde(rename = "T")]
    t: f64,
    #[serde(rename = "N")]
    n: usize,
    #[serde(rename = "M")]
    m: usize,
    eps0: f64,
    op_norm: f64,
    power_norm: f64,
    m1: f64,
    m2_advisory: Option<f64>,
    f_norms: Vec<f64>,
    h_norms: Vec<f64>,
    h1_lower_bound: f64,
    checks: &'a [Check],
    pass: bool,
    manifest_hash: &'a str,
}

fn synthesize_cmd(ctx: &mut Context, gamma: f64, t: f64, calibration: Option<&Path>) -> Result<(), CliError> {
    let calibration = obtain_calibration(ctx, calibration, None)?;
    let law = synthesize(&ctx.model, gamma, t, &calibration)?;
    let power = law.power_norm()?;
    let m1_value = m1(&ctx.model, gamma, t);
    let h1_bound = 8.0 / 9.0 * (-ctx.model.gamma0() * t / 4.0).exp();
    let (f_norms, h_norms) = (law.f_norms(), law.h_norms());
    let checks = vec![
        Check {
            name: "nonzero controls",
            pass: f_norms.iter().chain(&h_norms).all(|&v| v > 0.0),
            detail: format!("{} distributed, {} impulse", f_norms.len(), h_norms.len()),
        },
        Check {
            name: "operator norm agreement",
            pass: (law.op_norm - power).abs() <= NORM_AGREEMENT * law.op_norm,
            detail: format!("Gram {} vs power iteration {power}", law.op_norm),
        },
        Check {
            name: "first impulse bound",
            pass: h_norms[0] >= h1_bound,
            detail: format!("|h_1| = {} >= {h1_bound}", h_norms[0]),
        },
        Check {
            name: "norm above m1",
            pass: law.op_norm >= m1_value,
            detail: format!("{} >= {m1_value}", law.op_norm),
        },
    ];
    println!(
        "N = {}, M = {}, eps0 = {}, |F_T| = {}",
        law.params.n, law.params.m, law.params.eps0, law.op_norm
    );
    let report = SynthesisReport {
        gamma,
        t,
        n: law.params.n,
        m: law.params.m,
        eps0: law.params.eps0,
        op_norm: law.op_norm,
        power_norm: power,
        m1: m1_value,
        m2_advisory: m2(&ctx.model, gamma, t, law.params.n, calibration.c0),
        f_norms,
        h_norms,
        h1_lower_bound: h1_bound,
        checks: &checks,
        pass: checks.iter().all(|c| c.pass),
        manifest_hash: ctx.out.manifest_hash(),
    };
    let report = serde_json::to_value(&report).map_err(|e| CliError::Io(e.to_string()))?;
    let file = LawFile {
        law,
        model_hash: ctx.out.model_hash().to_string(),
        manifest_hash: ctx.out.manifest_hash().to_string(),
    };
    ctx.out.write_json("law.json", &file)?;
    finish_checks(ctx, "synthesize_report.json", &report, &checks)
}

fn parse_y0(spec: &str, model: &SpectralModel, seed: u64) -> Result<StateVector, CliError> {
    let n = model.n();
    let (kind, arg) = spec.split_once(':').unwrap_or((spec, ""));
    match (kind, arg) {
        ("zero", "") => Ok(StateVector::zeros(n)),
        ("mode", j) => {
            let j: usize = j.parse().map_err(|_| usage(format!("bad mode index in --y0 {spec}")))?;
            if !(1..=n).contains(&j) {
                return Err(usage(format!("mode index {j} outside 1..={n}")));
            }
            Ok(StateVector::mode(n, j))
        }
        ("random", s) => {
            let seed = if s.is_empty() {
                seed
            } else {
                s.parse().map_err(|_| usage(format!("bad seed in --y0 {spec}")))?
            };
            Ok(StateVector::random_unit(n, &mut ChaCha8Rng::seed_from_u64(seed)))
        }
        ("file", path) => {
            let values: Vec<f64> = read_json(Path::new(path))?;
            Ok(model.from_grid(&values)?)
        }
        _ => Err(usage(format!("unrecognized --y0 {spec}; use zero, mode:<j>, random[:<seed>] or file:<path>"))),
    }
}

#[derive(Serialize)]
struct NormRow {
    t: f64,
    norm: f64,
}

#[derive(Serialize)]
struct ControlRow {
    period: usize,
    sample_time: f64,
    start: f64,
    end: f64,
    control_norm: f64,
}

#[derive(Serialize)]
struct SimulationReport<'a> {
    y0: &'a str,
    periods: usize,
    #[serde(rename = "T")]
    t: f64,
    gamma: f64,
    op_norm: f64,
    worst_two_period_ratio: f64,
    contraction_target: f64,
    bound_margin: f64,
    pass: bool,
    violations: &'a [DecayViolation],
    period_norms: &'a [f64],
    manifest_hash: &'a str,
}

fn load_law(ctx: &Context, path: &Path) -> Result<FeedbackLaw, CliError> {
    let file: LawFile = read_json(path)?;
    check_model_hash(&file.model_hash, ctx, path)?;
    file.law.check_shape(&ctx.model)?;
    Ok(file.law)
}

fn simulate_cmd(ctx: &mut Context, law_path: &Path, y0_spec: &str, periods: usize, output_dt: f64) -> Result<(), CliError> {
    let law = load_law(ctx, law_path)?;
    let y0 = parse_y0(y0_spec, &ctx.model, ctx.seed)?;
    let t = law.params.t;
    let gamma = law.params.gamma;
    let traj = simulate(&ctx.model, &law, &y0, t, periods, output_dt)?;
    let decay = verify_decay(&ctx.model, &traj, law.op_norm, gamma);

    let rows: Vec<NormRow> = traj.norms().into_iter().map(|(t, norm)| NormRow { t, norm }).collect();
    ctx.out.write_csv("trajectory.csv", &rows)?;
    let controls: Vec<ControlRow> = traj
        .controls
        .iter()
        .map(|c| ControlRow {
            period: c.period,
            sample_time: c.sample_time,
            start: c.start,
            end: c.end,
            control_norm: ctx.model.mask_norm(&c.values),
        })
        .collect();
    ctx.out.write_csv("controls.csv", &controls)?;

    let recomputed = law.gram_norm();
    let checks = vec![
        Check {
            name: "stored operator norm",
            pass: recomputed == law.op_norm,
            detail: format!("stored {} recomputed {recomputed}", law.op_norm),
        },
        Check {
            name: "two-period contraction",
            pass: decay.violations.iter().all(|v| v.kind != heatfb::ViolationKind::Contraction),
            detail: format!("worst ratio {} <= {}", decay.worst_two_period_ratio, decay.contraction_target),
        },
        Check {
            name: "pointwise bound",
            pass: decay.violations.iter().all(|v| v.kind != heatfb::ViolationKind::PointwiseBound),
            detail: format!("min relative margin {}", decay.bound_margin),
        },
    ];
    let report = SimulationReport {
        y0: y0_spec,
        periods,
        t,
        gamma,
        op_norm: law.op_norm,
        worst_two_period_ratio: decay.worst_two_period_ratio,
        contraction_target: decay.contraction_target,
        bound_margin: decay.bound_margin,
        pass: decay.pass && checks[0].pass,
        violations: &decay.violations,
        period_norms: &traj.period_norms,
        manifest_hash: ctx.out.manifest_hash(),
    };
    let report = serde_json::to_value(&report).map_err(|e| CliError::Io(e.to_string()))?;
    finish_checks(ctx, "simulate_report.json", &report, &checks)
}

#[derive(Serialize)]
struct SweepRow {
    #[serde(rename = "T")]
    t: f64,
    op_norm: f64,
    m1: f64,
    m2_advisory: Option<f64>,
    #[serde(rename = "N")]
    n: usize,
    #[serde(rename = "M")]
    m: usize,
    eps0: f64,
}

#[derive(Serialize)]
struct SweepReport<'a> {
    gamma: f64,
    #[serde(rename = "T_grid")]
    t_grid: &'a [f64],
    trends: &'a TrendMarkers,
    pass: bool,
    manifest_hash: &'a str,
}

fn sweep(ctx: &mut Context, gamma: f64, grid: Vec<f64>, calibration: Option<&Path>) -> Result<(), CliError> {
    check_grid(&grid)?;
    let calibration = obtain_calibration(ctx, calibration, None)?;
    let rows = bound_curves(&ctx.model, gamma, &grid, &calibration)?;
    let trends = trend_markers(&rows);
    let csv_rows: Vec<SweepRow> = rows
        .iter()
        .map(|r| SweepRow {
            t: r.t,
            op_norm: r.op_norm,
            m1: r.m1,
            m2_advisory: r.m2_advisory,
            n: r.n,
            m: r.m,
            eps0: r.eps0,
        })
        .collect();
    ctx.out.write_csv("sweep.csv", &csv_rows)?;
    for r in &rows {
        println!("T = {}: |F_T| = {}, m1 = {}", r.t, r.op_norm, r.m1);
    }
    let violators: Vec<String> = rows.iter().filter(|r| r.op_norm < r.m1).map(|r| r.t.to_string()).collect();
    let checks = vec![Check {
        name: "norm above m1",
        pass: trends.dominates_m1,
        detail: if violators.is_empty() {
            format!("min ratio {}", trends.min_ratio_to_m1)
        } else {
            format!("violated at T = {}", violators.join(", "))
        },
    }];
    let report = SweepReport {
        gamma,
        t_grid: &grid,
        trends: &trends,
        pass: trends.dominates_m1,
        manifest_hash: ctx.out.manifest_hash(),
    };
    let report = serde_json::to_value(&report).map_err(|e| CliError::Io(e.to_string()))?;
    finish_checks(ctx, "sweep_report.json", &report, &checks)
}

#[derive(Serialize)]
struct VerifyCase {
    y0: String,
    worst_two_period_ratio: f64,
    bound_margin: f64,
    pass: bool,
}

#[derive(Serialize)]
struct VerifyReport<'a> {
    gamma: f64,
    #[serde(rename = "T")]
    t: f64,
    periods: usize,
    op_norm: f64,
    contraction_target: f64,
    cases: &'a [VerifyCase],
    pass: bool,
    manifest_hash: &'a str,
}

fn verify(ctx: &mut Context, gamma: f64, t: f64, calibration: Option<&Path>) -> Result<(), CliError> {
    let calibration = obtain_calibration(ctx, calibration, None)?;
    let law = synthesize(&ctx.model, gamma, t, &calibration)?;
    let n = ctx.model.n();
    let mut labels = vec!["mode:1".to_string()];
    let mut initial = vec![StateVector::mode(n, 1)];
    for &seed in &ctx.config.seeds {
        labels.push(format!("random:{seed}"));
        initial.push(StateVector::random_unit(n, &mut ChaCha8Rng::seed_from_u64(seed)));
    }
    let periods = ctx.config.periods;
    let mut cases = Vec::with_capacity(initial.len());
    for (label, traj) in labels.into_iter().zip(simulate_batch(&ctx.model, &law, &initial, t, periods, ctx.config.output_dt)) {
        let report = verify_decay(&ctx.model, &traj?, law.op_norm, gamma);
        cases.push(VerifyCase {
            y0: label,
            worst_two_period_ratio: report.worst_two_period_ratio,
            bound_margin: report.bound_margin,
            pass: report.pass,
        });
    }
    let checks: Vec<Check> = cases
        .iter()
        .map(|c| Check {
            name: "decay",
            pass: c.pass,
            detail: format!("{}: worst ratio {}, margin {}", c.y0, c.worst_two_period_ratio, c.bound_margin),
        })
        .collect();
    let report = VerifyReport {
        gamma,
        t,
        periods,
        op_norm: law.op_norm,
        contraction_target: (-2.0 * gamma * t).exp(),
        cases: &cases,
        pass: cases.iter().all(|c| c.pass),
        manifest_hash: ctx.out.manifest_hash(),
    };
    let report = serde_json::to_value(&report).map_err(|e| CliError::Io(e.to_string()))?;
    finish_checks(ctx, "verify.json", &report, &checks)
}
