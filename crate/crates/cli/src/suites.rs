//! Verification bundles behind `grflab verify`.
//!
//! Identities that hold exactly on a closed-form case are checked there
//! with no order; the rest are checked on generic runs at `Δt` and `Δt/2`,
//! reporting the observed order.

use crate::config::{random_state, BackendChoice, BackendSpec};
use crate::report::{Check, RunReport};
use crate::run::{max_drop, mode_scalar_residual, stationarity_checks};
use anyhow::{bail, Context, Result};
use grflab::entropy::{
    energy_density_residual, harnack_check, lambda_eig, lambda_series, nash_relations_residual,
    scalar_extrema_series, shrinker_residual, HarnackOptions, NashReport,
};
use grflab::flow::{integrate, FlowMode, FlowState, StepperConfig, Trajectory};
use grflab::geometry::{Backend, BackendDescriptor, FormField, MetricState};
use grflab::heat::{
    conjugate_dilaton_solve, conjugate_solve, conjugation_residual, duality_residual, forward_heat_solve,
    ConjugateSolution, HeatMode, HeatOptions, Normalization, ScalarPath,
};
use grflab::isoperimetric::{level_set_iso_bound, log_sobolev_deficit, run_corpus, ChartDomain, CorpusSpec};
use grflab::soliton::{bismut_flat_fixture, flat_torus_fixture, normalized_dilaton_flow, rigidity_experiment, DilatonFlowOptions};
use rayon::prelude::*;
use sha2::{Digest, Sha256};
use std::f64::consts::PI;
use std::str::FromStr;

/// Smallest error ratio accepted under a halved step (fourth order is 16).
pub const REFINEMENT_RATIO: f64 = 12.0;
/// Slack on every monotone channel.
pub const MONOTONE_TOL: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Suite {
    Scalar,
    Energy,
    Shrinker,
    Nash,
    Lambda,
    Iso,
    Soliton,
    HeatDuality,
}

impl Suite {
    pub const ALL: [Suite; 8] = [
        Suite::Scalar,
        Suite::Energy,
        Suite::Shrinker,
        Suite::Nash,
        Suite::Lambda,
        Suite::Iso,
        Suite::Soliton,
        Suite::HeatDuality,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Suite::Scalar => "scalar",
            Suite::Energy => "energy",
            Suite::Shrinker => "shrinker",
            Suite::Nash => "nash",
            Suite::Lambda => "lambda",
            Suite::Iso => "iso",
            Suite::Soliton => "soliton",
            Suite::HeatDuality => "heat-duality",
        }
    }

    /// Grid resolution used when none is given.
    pub fn default_resolution(self) -> usize {
        match self {
            Suite::Scalar => 128,
            Suite::Energy | Suite::Shrinker | Suite::Nash | Suite::Soliton => 64,
            Suite::Lambda | Suite::HeatDuality => 32,
            Suite::Iso => 256,
        }
    }
}

impl FromStr for Suite {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Suite::ALL
            .into_iter()
            .find(|x| x.name() == s)
            .ok_or_else(|| {
                let names: Vec<_> = Suite::ALL.iter().map(|x| x.name()).collect();
                format!("unknown suite '{s}', expected one of {}", names.join(", "))
            })
    }
}

pub fn verify(suite: Suite, resolution: Option<usize>) -> Result<RunReport> {
    let n = resolution.unwrap_or(suite.default_resolution());
    if suite != Suite::Iso && (n < 16 || n % 2 != 0) {
        bail!(crate::config::ConfigError(format!("resolution must be even and at least 16, got {n}")));
    }
    let checks = match suite {
        Suite::Scalar => scalar(n)?,
        Suite::Energy => energy(n)?,
        Suite::Shrinker => shrinker(n)?,
        Suite::Nash => nash(n)?,
        Suite::Lambda => lambda(n)?,
        Suite::Iso => iso(n)?,
        Suite::Soliton => soliton(n)?,
        Suite::HeatDuality => heat_duality(n)?,
    };
    let hash = hex::encode(Sha256::digest(format!("verify:{}:{n}", suite.name()).as_bytes()));
    Ok(RunReport::new(hash, checks))
}

fn fixture() -> Result<(Backend, FlowState)> {
    let fx = bismut_flat_fixture()?;
    Ok((fx.backend, fx.state))
}

fn fixture_traj(t_end: f64) -> Result<Trajectory> {
    let (b, s) = fixture()?;
    Ok(integrate(&b, FlowMode::Grf, &s, &StepperConfig::adaptive(t_end).with_max_step(0.05))?)
}

fn flat_cohom1(n: usize) -> Result<(Backend, FlowState)> {
    let b = Backend::new(BackendDescriptor::cohom1_torus3(n))?;
    let s = FlowState::new(b.flat_metric(), n);
    Ok((b, s))
}

fn flat_conformal(n: usize) -> Result<(Backend, FlowState)> {
    let b = Backend::new(BackendDescriptor::conformal_torus2(n))?;
    let s = FlowState::new(b.flat_metric(), n * n);
    Ok((b, s))
}

/// Warped torus with torsion `h·dθ∧dx∧dy`, a potential and a dilaton, all
/// at wavenumber `k`.
fn warped(n: usize, k: f64, amp: f64, h: f64) -> Result<(Backend, FlowState)> {
    let b = Backend::new(BackendDescriptor::cohom1_torus3(n))?;
    let t = b.coordinate(0);
    let metric = MetricState::Cohom1Torus3 {
        a: vec![1.0; n],
        b: t.iter().map(|x| 1.0 + amp * (k * x).cos()).collect(),
        c: t.iter().map(|x| 1.0 + amp * ((k - 1.0) * x + 0.4).sin()).collect(),
    };
    let mut h0 = FormField::zeros(3, 3, n);
    h0.comps[0] = vec![h; n];
    let mut pot = FormField::zeros(3, 2, n);
    let xy = pot.index_of(0b110).context("xy component")?;
    pot.comps[xy] = t.iter().map(|x| 0.2 * h * (k * x).sin()).collect();
    let phi = t.iter().map(|x| 0.2 * (k * x + 0.2).cos()).collect();
    let s = FlowState::new(metric, n).with_background(h0).with_potential(pot).with_dilaton(phi);
    Ok((b, s))
}

fn rk4(b: &Backend, s: &FlowState, t_end: f64, dt: f64, mode: FlowMode) -> Result<Trajectory> {
    Ok(integrate(b, mode, s, &StepperConfig::rk4(t_end).with_dt(dt))?)
}

fn static_run(b: &Backend, s: &FlowState, t_end: f64, mode: FlowMode) -> Result<Trajectory> {
    Ok(integrate(b, mode, s, &StepperConfig::rk4(t_end))?)
}

fn min_scalar_check(name: &str, traj: &Trajectory) -> Result<Check> {
    let s = scalar_extrema_series(traj, None, 1)?;
    let drop = max_drop(s.channel("min_scalar").context("min_scalar")?);
    Ok(Check::at_most(format!("{name}_min_scalar_drop"), drop, MONOTONE_TOL))
}

fn sup_shifted_check(name: &str, traj: &Trajectory, sol: &ConjugateSolution) -> Result<Check> {
    let s = scalar_extrema_series(traj, Some(sol), 1)?;
    let drop = max_drop(s.channel("sup_shifted_scalar").context("sup_shifted_scalar")?);
    Ok(Check::at_most(format!("{name}_sup_shifted_scalar_drop"), drop, MONOTONE_TOL))
}

/// Time step `cfl·h²` of an `n`-point periodic axis.
fn grid_dt(n: usize, cfl: f64) -> f64 {
    let h = 2.0 * PI / n as f64;
    cfl * h * h
}

/// Conformal-torus runs carrying a one-form and a closed 2-form.
fn conformal_pair(dt: f64) -> Result<(Trajectory, Trajectory)> {
    let n = 32;
    let b = Backend::new(BackendDescriptor::conformal_torus2(n))?;
    let x = b.coordinate(0);
    let y = b.coordinate(1);
    let nn = n * n;
    let u: Vec<f64> = (0..nn).map(|p| 0.1 * (2.0 * x[p]).cos() * y[p].sin() + 0.05 * (2.0 * y[p]).cos()).collect();
    let mut alpha = FormField::zeros(2, 1, nn);
    alpha.comps[0] = (0..nn).map(|p| 0.3 + 0.2 * (2.0 * y[p]).sin()).collect();
    alpha.comps[1] = (0..nn).map(|p| -0.2 + 0.1 * (2.0 * x[p] + y[p]).cos()).collect();
    let mut h2 = FormField::zeros(2, 2, nn);
    h2.comps[0] = (0..nn).map(|p| 0.5 + 0.2 * (2.0 * x[p]).sin() * y[p].cos()).collect();
    let phi: Vec<f64> = (0..nn).map(|p| 0.2 * (x[p] + 2.0 * y[p]).cos()).collect();
    let s1 = FlowState::new(MetricState::ConformalTorus2 { u: u.clone() }, nn).with_one_form(alpha);
    let s2 = FlowState::new(MetricState::ConformalTorus2 { u }, nn).with_forms(vec![h2]).with_dilaton(phi);
    let t_end = 40.0 * 0.004;
    Ok((rk4(&b, &s1, t_end, dt, FlowMode::OneForm)?, rk4(&b, &s2, t_end, dt, FlowMode::Ggrf)?))
}

fn scalar(n: usize) -> Result<Vec<Check>> {
    let mut checks = Vec::new();
    let fx = fixture_traj(1.0)?;
    let t = fx.times()[fx.len() / 2];
    checks.push(Check::at_most("fixture_scalar_residual", mode_scalar_residual(&fx, t)?, 1e-9));
    checks.push(min_scalar_check("fixture", &fx)?);

    let (b, s) = warped(n, 5.0, 0.1, 0.5)?;
    let dt = grid_dt(n, 0.2);
    let runs: Vec<Trajectory> = [dt, 0.5 * dt]
        .par_iter()
        .map(|&d| rk4(&b, &s, 40.0 * dt, d, FlowMode::Grf))
        .collect::<Result<_>>()?;
    let tm = 20.0 * dt;
    let e: Vec<f64> = runs.iter().map(|r| mode_scalar_residual(r, tm)).collect::<grflab::Result<_>>()?;
    checks.push(Check::refinement("grf_scalar_refinement", e[0], e[1], REFINEMENT_RATIO));
    checks.push(min_scalar_check("grf", &runs[1])?);

    let (coarse, fine) = rayon::join(|| conformal_pair(0.004), || conformal_pair(0.002));
    let ((a1, g1), (a2, g2)) = (coarse?, fine?);
    let tm = 0.5 * a1.end();
    checks.push(Check::refinement(
        "oneform_scalar_refinement",
        mode_scalar_residual(&a1, tm)?,
        mode_scalar_residual(&a2, tm)?,
        REFINEMENT_RATIO,
    ));
    checks.push(Check::refinement(
        "ggrf_scalar_refinement",
        mode_scalar_residual(&g1, tm)?,
        mode_scalar_residual(&g2, tm)?,
        REFINEMENT_RATIO,
    ));
    checks.push(min_scalar_check("oneform", &a2)?);
    Ok(checks)
}

/// Terminal data of unit weighted mass at the end of `traj`.
fn unit_terminal(traj: &Trajectory, b: &Backend) -> Result<Vec<f64>> {
    let end = traj.snapshot(traj.len() - 1)?;
    let mut u: Vec<f64> = b.coordinate(0).iter().map(|x| 1.0 + 0.5 * (x - 1.0).sin()).collect();
    let m = end.geo.weighted_integral(&u, &end.phi);
    u.iter_mut().for_each(|v| *v /= m);
    Ok(u)
}

/// Generic run with a weighted shrinker solution and its conjugate dilaton.
fn generic_solutions(n: usize, dt: f64, mode: FlowMode, h: f64) -> Result<(Trajectory, ConjugateSolution, ScalarPath)> {
    let (b, s) = warped(n, 3.0, 0.1, h)?;
    let t_end = 80.0 * 0.002;
    let traj = rk4(&b, &s, t_end, dt, mode)?;
    let ut = unit_terminal(&traj, &b)?;
    let opts = HeatOptions { normalization: Normalization::Shrinker, ..HeatOptions::default() };
    let sol = conjugate_solve(&traj, &ut, 0.0, t_end, HeatMode::Weighted, &opts)?;
    let psi = conjugate_dilaton_solve(&traj, &sol, &vec![0.0; n])?;
    Ok((traj, sol, psi))
}

type Solved = (Trajectory, ConjugateSolution, ScalarPath);

fn refined_pair(n: usize, mode: FlowMode, h: f64) -> Result<(Solved, Solved)> {
    let (a, b) = rayon::join(|| generic_solutions(n, 0.002, mode, h), || generic_solutions(n, 0.001, mode, h));
    Ok((a?, b?))
}

/// Flat torus with `u ≡ 1/V` under Ricci flow, terminal time `terminal`.
fn flat_shrinker(b: &Backend, s: &FlowState, t_end: f64, terminal: f64, max_step: f64) -> Result<(Trajectory, ConjugateSolution)> {
    let traj = integrate(b, FlowMode::Ricci, s, &StepperConfig::rk4(t_end))?;
    let vol = traj.snapshot(0)?.geo.volume();
    let opts = HeatOptions {
        normalization: Normalization::Shrinker,
        max_step: Some(max_step),
        ..HeatOptions::default()
    };
    let mut sol = conjugate_solve(&traj, &vec![1.0 / vol; b.nodes()], 0.0, t_end, HeatMode::Weighted, &opts)?;
    sol.terminal_time = terminal;
    Ok((traj, sol))
}

fn zero_path(sol: &ConjugateSolution, nodes: usize) -> ScalarPath {
    ScalarPath {
        times: sol.path.times.clone(),
        values: vec![vec![0.0; nodes]; sol.path.len()],
        rates: vec![vec![0.0; nodes]; sol.path.len()],
    }
}

fn energy(n: usize) -> Result<Vec<Check>> {
    let mut checks = Vec::new();
    let mut exact = 0.0f64;
    for (b, s) in [flat_cohom1(16)?, flat_conformal(16)?] {
        let traj = static_run(&b, &s, 0.2, FlowMode::Grf)?;
        let sol = conjugate_solve(&traj, &vec![0.3; b.nodes()], 0.0, 0.2, HeatMode::Weighted, &HeatOptions::default())?;
        let t = sol.path.times[sol.path.len() / 2];
        exact = exact.max(energy_density_residual(&traj, &sol, t, 1)?);
    }
    checks.push(Check::at_most("flat_energy_residual", exact, 1e-10));
    let fx = fixture_traj(1.0)?;
    let sol = conjugate_solve(&fx, &[1.0], 0.0, 1.0, HeatMode::Weighted, &HeatOptions::default())?;
    let t = sol.path.times[sol.path.len() / 2];
    checks.push(Check::at_most("fixture_energy_residual", energy_density_residual(&fx, &sol, t, 1)?, 1e-9));

    let ((t1, s1, _), (t2, s2, _)) = refined_pair(n, FlowMode::Grf, 0.5)?;
    let tm = 40.0 * 0.002;
    checks.push(Check::refinement(
        "energy_refinement",
        energy_density_residual(&t1, &s1, tm, 1)?,
        energy_density_residual(&t2, &s2, tm, 1)?,
        REFINEMENT_RATIO,
    ));
    checks.push(min_scalar_check("energy_run", &t2)?);
    checks.push(sup_shifted_check("energy_run", &t2, &s2)?);
    Ok(checks)
}

fn shrinker(n: usize) -> Result<Vec<Check>> {
    let mut checks = Vec::new();
    let mut exact = 0.0f64;
    for (b, s) in [flat_cohom1(16)?, flat_conformal(16)?] {
        let (traj, sol) = flat_shrinker(&b, &s, 0.5, 1.0, 5e-3)?;
        let psi = zero_path(&sol, b.nodes());
        let t = sol.path.times[sol.path.len() / 2];
        exact = exact.max(shrinker_residual(&traj, &sol, &psi, t, 1)?);
    }
    checks.push(Check::at_most("flat_shrinker_residual", exact, 1e-10));

    let ((t1, s1, p1), (t2, s2, p2)) = refined_pair(n, FlowMode::Grf, 0.5)?;
    let tm = 40.0 * 0.002;
    checks.push(Check::refinement(
        "shrinker_refinement",
        shrinker_residual(&t1, &s1, &p1, tm, 1)?,
        shrinker_residual(&t2, &s2, &p2, tm, 1)?,
        REFINEMENT_RATIO,
    ));
    let opts = HarnackOptions { monotone_tol: MONOTONE_TOL, ..HarnackOptions::default() };
    let h = harnack_check(&t2, &s2, &p2, &opts)?;
    let drop = max_drop(h.channel("entropy_integral").context("entropy_integral")?);
    checks.push(Check::at_most("entropy_integral_drop", drop, MONOTONE_TOL));
    checks.push(min_scalar_check("shrinker_run", &t2)?);
    checks.push(sup_shifted_check("shrinker_run", &t2, &s2)?);
    Ok(checks)
}

fn nash_at(n: usize, dt: f64) -> Result<(NashReport, Trajectory)> {
    let (traj, mut sol, _) = generic_solutions(n, dt, FlowMode::Ricci, 0.0)?;
    sol.terminal_time += 0.1;
    Ok((nash_relations_residual(&traj, &sol, 0.15, 0.22, 4, 1)?, traj))
}

fn nash(n: usize) -> Result<Vec<Check>> {
    let mut checks = Vec::new();
    let (b, s) = flat_cohom1(16)?;
    let (traj, sol) = flat_shrinker(&b, &s, 1.0, 2.0, 1e-4)?;
    let flat = nash_relations_residual(&traj, &sol, 1.1, 1.9, 6, 1)?;
    checks.push(Check::at_most("flat_nash_residual", flat.nash_residual, 1e-10));
    checks.push(Check::at_most("flat_perelman_residual", flat.perelman_residual, 1e-10));
    let (a, b) = rayon::join(|| nash_at(n, 0.002), || nash_at(n, 0.001));
    let ((a, _), (b, fine)) = (a?, b?);
    checks.push(Check::refinement("nash_refinement", a.nash_residual, b.nash_residual, REFINEMENT_RATIO));
    checks.push(Check::refinement("perelman_refinement", a.perelman_residual, b.perelman_residual, REFINEMENT_RATIO));
    let rate = [flat.max_perelman_rate, a.max_perelman_rate, b.max_perelman_rate].into_iter().fold(f64::NEG_INFINITY, f64::max);
    checks.push(Check::at_most("perelman_rate_max", rate, MONOTONE_TOL));
    checks.push(min_scalar_check("nash_run", &fine)?);
    Ok(checks)
}

/// Randomized trajectories per backend; `λ` sampled along each.
pub const LAMBDA_TRAJECTORIES: u64 = 10;

fn lambda_run(kind: BackendChoice, n: usize, seed: u64) -> Result<Trajectory> {
    let spec = BackendSpec {
        kind,
        resolution: (kind != BackendChoice::Homogeneous3).then_some(if kind == BackendChoice::ConformalTorus2 { 16 } else { n }),
        structure_constants: None,
    };
    let (b, s) = random_state(&spec, FlowMode::Grf, 0.5, 0.15, seed)?;
    let cfg = match kind {
        BackendChoice::Homogeneous3 => StepperConfig::adaptive(0.5).with_max_step(0.05),
        _ => StepperConfig::rk4(0.1),
    };
    Ok(integrate(&b, FlowMode::Grf, &s, &cfg)?)
}

fn lambda(n: usize) -> Result<Vec<Check>> {
    let mut checks = Vec::new();
    let (b, s) = fixture()?;
    let snap = grflab::flow::Snapshot::new(&b, &s, FlowMode::Grf)?;
    checks.push(Check::at_most("fixture_lambda_error", (lambda_eig(&snap)?.lambda - 4.0).abs(), 1e-8));
    let (b, s) = flat_cohom1(n)?;
    let snap = grflab::flow::Snapshot::new(&b, &s, FlowMode::Ricci)?;
    checks.push(Check::at_most("flat_lambda", lambda_eig(&snap)?.lambda.abs(), 1e-10));
    for kind in [BackendChoice::Homogeneous3, BackendChoice::Cohom1Torus3, BackendChoice::ConformalTorus2] {
        let drops: Vec<(f64, f64)> = (0..LAMBDA_TRAJECTORIES)
            .into_par_iter()
            .map(|seed| {
                let traj = lambda_run(kind, n, seed)?;
                let stride = (traj.len() / 8).max(1);
                let s = lambda_series(&traj, stride, MONOTONE_TOL)?;
                let e = scalar_extrema_series(&traj, None, 1)?;
                Ok((max_drop(s.channel("lambda").context("lambda")?), max_drop(e.channel("min_scalar").context("min_scalar")?)))
            })
            .collect::<Result<_>>()?;
        let label = format!("{kind:?}").to_lowercase();
        let worst = drops.iter().fold(0.0f64, |m, d| m.max(d.0));
        checks.push(Check::at_most(format!("{label}_lambda_drop"), worst, MONOTONE_TOL));
        let worst = drops.iter().fold(0.0f64, |m, d| m.max(d.1));
        checks.push(Check::at_most(format!("{label}_min_scalar_drop"), worst, MONOTONE_TOL));
    }
    Ok(checks)
}

/// Gaussian equality case `ψ = e^{-|x|²/4}`, `φ = 0`, `Λ = 0`.
pub fn gaussian_deficit(n: usize) -> Result<f64> {
    let d = ChartDomain::flat(10.0, n)?;
    let psi = d.sample(|x, y| (-(x * x + y * y) / 4.0).exp());
    Ok(log_sobolev_deficit(&d, &psi, 0.0)?)
}

/// Largest relative error of the weight-shift scaling of the level-set
/// bound and of the deficit.
pub fn weight_shift_error() -> Result<f64> {
    let d = ChartDomain::flat(3.0, 64)?;
    let phi = d.sample(|x, y| 0.3 * (x - y).cos());
    let d = d.with_weight(phi)?;
    let psi = d.sample(|x, y| {
        let r = (x * x + y * y).sqrt() / 2.4;
        if r >= 1.0 {
            0.0
        } else {
            (1.0 - 1.0 / (1.0 - r * r)).exp()
        }
    });
    let base = level_set_iso_bound(&d, &psi, None)?;
    let big_lambda = 0.4;
    let a = log_sobolev_deficit(&d, &psi, big_lambda)?;
    let mut worst = 0.0f64;
    for c in [-1.0, 0.5, 1.3] {
        let s = d.shifted(c);
        let shifted = level_set_iso_bound(&s, &psi, None)?;
        worst = worst.max((shifted / (base * (-c).exp()) - 1.0).abs());
        let b = log_sobolev_deficit(&s, &psi, big_lambda - c)?;
        worst = worst.max((b - a * (-c).exp()).abs() / (1.0 + a.abs()));
    }
    Ok(worst)
}

fn iso(n: usize) -> Result<Vec<Check>> {
    let mut checks = Vec::new();
    let spec = CorpusSpec { resolution: n, ..CorpusSpec::default() };
    let rep = run_corpus(&spec)?;
    checks.push(Check::at_least("corpus_pairs", rep.entries.len() as f64, 100.0));
    checks.push(Check::at_least("corpus_min_relative_deficit", rep.min_relative_deficit, -spec.tolerance));
    checks.push(Check::at_most("corpus_failed_pairs", rep.entries.iter().filter(|e| !e.pass).count() as f64, 0.0));
    let fine = gaussian_deficit(n)?;
    let coarse = gaussian_deficit(n / 2)?;
    let mut g = Check::at_most("gaussian_deficit", fine.abs(), 1e-3);
    g.order = Some((coarse / fine).abs().log2()).filter(|o| o.is_finite());
    checks.push(g);
    checks.push(Check::at_most("weight_shift_error", weight_shift_error()?, 1e-12));
    Ok(checks)
}

fn soliton(n: usize) -> Result<Vec<Check>> {
    let mut checks = stationarity_checks(&fixture_traj(1.0)?, 4.0);
    let fx = bismut_flat_fixture()?;
    let run = normalized_dilaton_flow(&fx, &[0.7], &DilatonFlowOptions::default())?;
    checks.push(Check::at_most("fixture_source_residual", run.source_residual, 1e-10));
    checks.push(Check::at_most("fixture_trace_residual", run.trace_residual, 1e-10));

    let opts = DilatonFlowOptions::default();
    let flat = |m: usize| -> Result<grflab::soliton::DilatonConvergence> {
        let fx = flat_torus_fixture(m)?;
        let phi0: Vec<f64> = fx.backend.coordinate(0).iter().map(|x| x.cos() + 0.2 * (2.0 * x).sin() + 0.3).collect();
        Ok(normalized_dilaton_flow(&fx, &phi0, &opts)?)
    };
    let (fine, coarse) = rayon::join(|| flat(n), || flat(n / 2));
    let (fine, coarse) = (fine?, coarse?);
    let mu1 = fine.mu1.context("flat torus has a spectral gap")?;
    let rate = fine.decay_rate.context("decay rate")?;
    checks.push(Check::at_most("flat_rate_error", (rate / mu1 - 1.0).abs(), opts.rate_tol));
    checks.push(Check::at_most("flat_terminal_deviation", fine.terminal_deviation, opts.terminal_tol));
    checks.push(Check::at_most("flat_offset_error", (fine.terminal_offset - 0.3).abs(), opts.terminal_tol));
    checks.push(Check::at_most(
        "flat_rate_resolution_spread",
        (fine.decay_rate.unwrap_or(f64::NAN) - coarse.decay_rate.unwrap_or(f64::NAN)).abs(),
        1e-6,
    ));

    let traj = integrate(&fx.backend, FlowMode::Grf, &fx.state, &StepperConfig::adaptive(0.5))?;
    let s = rigidity_experiment(&traj, 1, 1e-9)?;
    checks.push(Check::flag("fixture_soliton_branch", s.flags.get("soliton_branch") == Some(&true)));
    let b = Backend::new(BackendDescriptor::homogeneous3([2.0; 3]))?;
    let mut h0 = FormField::zeros(3, 3, 1);
    h0.comps[0][0] = 12f64.sqrt();
    let state = FlowState::new(MetricState::Homogeneous3 { x: [1.0; 3] }, 1)
        .with_background(h0)
        .with_potential(FormField::zeros(3, 2, 1));
    let traj = integrate(&b, FlowMode::Grf, &state, &StepperConfig::adaptive(0.1))?;
    let s = rigidity_experiment(&traj, 1, 1e-9)?;
    checks.push(Check::flag("torsion_positivity_onset", s.flags.get("positivity_onset") == Some(&true)));
    checks.push(min_scalar_check("torsion_onset", &traj)?);
    Ok(checks)
}

fn heat_duality(n: usize) -> Result<Vec<Check>> {
    let mut checks = Vec::new();
    let (b, s) = {
        let (b, mut s) = warped(n, 1.0, 0.1, 0.5)?;
        s.phi = b.coordinate(0).iter().map(|x| 0.3 * (x + 0.2).cos()).collect();
        (b, s)
    };
    let traj = static_run(&b, &s, 0.3, FlowMode::Grf)?;
    let u: Vec<f64> = b.coordinate(0).iter().map(|x| 1.0 + 0.5 * (x - 1.0).sin()).collect();
    for mode in [HeatMode::Weighted, HeatMode::Plain] {
        let opts = HeatOptions { mass_tol: f64::MAX, ..HeatOptions::default() };
        let sol = conjugate_solve(&traj, &u, 0.0, 0.3, mode, &opts)?;
        checks.push(Check::at_most(format!("{mode:?}_mass_drift").to_lowercase(), sol.max_mass_drift, 1e-8));
    }
    checks.push(min_scalar_check("torsion_run", &traj)?);

    let conj = |dt: f64| -> Result<f64> {
        let traj = rk4(&b, &s, 0.16, dt, FlowMode::Grf)?;
        let sol = conjugate_solve(&traj, &u, 0.0, 0.16, HeatMode::Weighted, &HeatOptions::default())?;
        let i = sol.path.node_index(0.08).context("midpoint node")?;
        Ok(conjugation_residual(&traj, &sol, i, 1)?)
    };
    let (c1, c2) = rayon::join(|| conj(0.004), || conj(0.002));
    checks.push(Check::refinement("conjugation_refinement", c1?, c2?, REFINEMENT_RATIO));

    let (fb, fs) = flat_cohom1(16)?;
    let flat = static_run(&fb, &fs, 0.5, FlowMode::Grf)?;
    let theta = fb.coordinate(0);
    let h0: Vec<f64> = theta.iter().map(|x| 1.0 + 0.5 * x.cos()).collect();
    let fwd = forward_heat_solve(&flat, &h0, 0.0, 0.5, &HeatOptions::default())?;
    let vt: Vec<f64> = theta.iter().map(|x| 1.0 + 0.5 * (2.0 * x).sin()).collect();
    let v = conjugate_solve(&flat, &vt, 0.0, 0.5, HeatMode::Weighted, &HeatOptions::default())?;
    let mut worst = 0.0f64;
    for weighted in [true, false] {
        worst = worst.max(duality_residual(&flat, &fwd, &v.path, weighted, 1)?);
    }
    checks.push(Check::at_most("flat_duality_residual", worst, 1e-7));
    Ok(checks)
}
