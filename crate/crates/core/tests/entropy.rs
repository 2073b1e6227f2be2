mod common;

use common::*;
use grflab::entropy::*;
use grflab::flow::{integrate, FlowMode, FlowState, Snapshot, StepperConfig, Trajectory};
use grflab::geometry::{Backend, BackendDescriptor, FormField, MetricState};
use grflab::heat::{
    conjugate_dilaton_solve, conjugate_solve, forward_heat_solve, ConjugateSolution, HeatMode, HeatOptions,
    Normalization, ScalarPath,
};
use grflab::LabError;
use nalgebra::{DMatrix, SymmetricEigen};
use std::f64::consts::PI;

fn fixture_traj() -> Trajectory {
    let (b, s) = fixture();
    integrate(&b, FlowMode::Grf, &s, &StepperConfig::adaptive(1.0).with_max_step(0.05)).unwrap()
}

fn snap(b: &Backend, s: &FlowState, mode: FlowMode) -> Snapshot {
    Snapshot::new(b, s, mode).unwrap()
}

/// Perturbed torsion-carrying warped torus with a dilaton.
fn generic(n: usize, h: f64) -> (Backend, FlowState) {
    let k = 3.0;
    let b = Backend::new(BackendDescriptor::cohom1_torus3(n)).unwrap();
    let t = b.coordinate(0);
    let metric = MetricState::Cohom1Torus3 {
        a: vec![1.0; n],
        b: t.iter().map(|x| 1.0 + 0.1 * (k * x).cos()).collect(),
        c: t.iter().map(|x| 1.0 + 0.1 * ((k - 1.0) * x + 0.4).sin()).collect(),
    };
    let mut h0 = FormField::zeros(3, 3, n);
    h0.comps[0] = vec![h; n];
    let mut pot = FormField::zeros(3, 2, n);
    let xy = pot.index_of(0b110).unwrap();
    pot.comps[xy] = t.iter().map(|x| 0.2 * h * (k * x).sin()).collect();
    let phi = t.iter().map(|x| 0.2 * (k * x + 0.2).cos()).collect();
    (b, FlowState::new(metric, n).with_background(h0).with_potential(pot).with_dilaton(phi))
}

/// Terminal data normalized to unit weighted mass at the end of `traj`.
fn unit_terminal(traj: &Trajectory, b: &Backend) -> Vec<f64> {
    let end = traj.snapshot(traj.len() - 1).unwrap();
    let mut u: Vec<f64> = b.coordinate(0).iter().map(|x| 1.0 + 0.5 * (x - 1.0).sin()).collect();
    let m = end.geo.weighted_integral(&u, &end.phi);
    u.iter_mut().for_each(|v| *v /= m);
    u
}

#[test]
fn bakry_emery_closed_forms() {
    let (b, s) = fixture();
    let sn = snap(&b, &s, FlowMode::Grf);
    let rc = bakry_emery(&sn, &[0.0]).unwrap();
    assert!(rc.norm_sq(&sn)[0] < 1e-24);
    assert!((generalized_scalar(&sn, &[0.0])[0] - 4.0).abs() < 1e-12);

    let (b, s) = flat_cohom1(32);
    let sn = snap(&b, &s, FlowMode::Grf);
    let zero = vec![0.0; 32];
    assert!(max_abs(&bakry_emery(&sn, &zero).unwrap().norm_sq(&sn)) < 1e-24);
    assert!(max_abs(&generalized_scalar(&sn, &zero)) < 1e-13);
    let theta = b.coordinate(0);
    let w: Vec<f64> = theta.iter().map(|x| x.cos()).collect();
    let r = generalized_scalar(&sn, &w);
    let err = r.iter().zip(&theta).map(|(v, x)| (v + 2.0 * x.cos() + x.sin().powi(2)).abs()).fold(0.0, f64::max);
    assert!(err < 1e-12, "{err:e}");
}

#[test]
fn bakry_emery_trace_identity() {
    let (b, s) = generic(128, 0.5);
    let sn = snap(&b, &s, FlowMode::Grf);
    let rc = bakry_emery(&sn, &sn.phi).unwrap();
    let tr = rc.sym.trace(sn.geo.inverse_metric());
    let r = sn.geo.scalar_curvature();
    let h = sn.torsion_norm_sq();
    let lap = sn.geo.laplacian(&sn.phi);
    let err = (0..128).map(|p| (tr[p] - r[p] + 0.25 * h[p] - lap[p]).abs()).fold(0.0, f64::max);
    assert!(err < 1e-11, "{err:e}");
}

#[test]
fn scalar_residual_on_fixture_and_flat() {
    let traj = fixture_traj();
    let t = traj.times()[traj.len() / 2];
    assert!(scalar_monotonicity_residual(&traj, t, 1).unwrap() < 1e-9);
    let (b, s) = flat_cohom1(16);
    let flat = static_run(&b, &s, 0.2, FlowMode::Grf);
    let t = flat.times()[flat.len() / 2];
    assert!(scalar_monotonicity_residual(&flat, t, 1).unwrap() < 1e-12);
    assert!(matches!(
        scalar_monotonicity_residual(&flat, flat.times()[1], 1),
        Err(LabError::RangeError { .. })
    ));
    assert!(matches!(
        oneform_scalar_residual(&flat, t, 1),
        Err(LabError::Unsupported(_))
    ));
}

fn scalar_residual_at(dt: f64) -> f64 {
    let (b, s) = generic(64, 0.5);
    let traj = rk4_run(&b, &s, 40.0 * 0.002, dt, FlowMode::Grf);
    scalar_monotonicity_residual(&traj, 20.0 * 0.002, 1).unwrap()
}

#[test]
fn scalar_residual_refines_at_fourth_order() {
    let coarse = scalar_residual_at(0.002);
    let fine = scalar_residual_at(0.001);
    assert!(coarse / fine > 12.0, "{coarse:e} {fine:e}");
}

fn conformal_runs(dt: f64) -> (f64, f64) {
    let n = 32;
    let b = Backend::new(BackendDescriptor::conformal_torus2(n)).unwrap();
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
    let a = rk4_run(&b, &s1, t_end, dt, FlowMode::OneForm);
    let g = rk4_run(&b, &s2, t_end, dt, FlowMode::Ggrf);
    (
        oneform_scalar_residual(&a, 0.5 * t_end, 1).unwrap(),
        ggrf_scalar_residual(&g, 0.5 * t_end, 1).unwrap(),
    )
}

#[test]
fn oneform_and_general_degree_residuals_refine() {
    let (a1, g1) = conformal_runs(0.004);
    let (a2, g2) = conformal_runs(0.002);
    assert!(a1 / a2 > 12.0, "{a1:e} {a2:e}");
    assert!(g1 / g2 > 12.0, "{g1:e} {g2:e}");
}

#[test]
fn oneform_residual_vanishes_on_flat_ricci_case() {
    let (b, s) = flat_conformal(16);
    let s = s.with_one_form(FormField::zeros(2, 1, 256));
    let traj = static_run(&b, &s, 0.2, FlowMode::OneForm);
    let t = traj.times()[traj.len() / 2];
    assert!(oneform_scalar_residual(&traj, t, 1).unwrap() < 1e-12);
}

#[test]
fn energy_density_on_fixture_and_flat() {
    let traj = fixture_traj();
    let sol = conjugate_solve(&traj, &[1.0], 0.0, 1.0, HeatMode::Weighted, &HeatOptions::default()).unwrap();
    let t = sol.path.times[sol.path.len() / 2];
    assert!(energy_density_residual(&traj, &sol, t, 1).unwrap() < 1e-9);
    let (b, s) = flat_cohom1(16);
    let flat = static_run(&b, &s, 0.2, FlowMode::Grf);
    let sol = conjugate_solve(&flat, &vec![0.3; 16], 0.0, 0.2, HeatMode::Weighted, &HeatOptions::default()).unwrap();
    let t = sol.path.times[sol.path.len() / 2];
    assert!(energy_density_residual(&flat, &sol, t, 1).unwrap() < 1e-12);
}

fn generic_solutions(dt: f64, mode: FlowMode, h: f64) -> (Trajectory, ConjugateSolution, ScalarPath) {
    let (b, s) = generic(64, h);
    let t_end = 80.0 * 0.002;
    let traj = rk4_run(&b, &s, t_end, dt, mode);
    let ut = unit_terminal(&traj, &b);
    let opts = HeatOptions { normalization: Normalization::Shrinker, ..HeatOptions::default() };
    let sol = conjugate_solve(&traj, &ut, 0.0, t_end, HeatMode::Weighted, &opts).unwrap();
    let psi = conjugate_dilaton_solve(&traj, &sol, &vec![0.0; 64]).unwrap();
    (traj, sol, psi)
}

#[test]
fn energy_and_shrinker_residuals_refine() {
    let tm = 40.0 * 0.002;
    let (t1, s1, p1) = generic_solutions(0.002, FlowMode::Grf, 0.5);
    let (t2, s2, p2) = generic_solutions(0.001, FlowMode::Grf, 0.5);
    let e1 = energy_density_residual(&t1, &s1, tm, 1).unwrap();
    let e2 = energy_density_residual(&t2, &s2, tm, 1).unwrap();
    assert!(e1 / e2 > 12.0, "{e1:e} {e2:e}");
    let r1 = shrinker_residual(&t1, &s1, &p1, tm, 1).unwrap();
    let r2 = shrinker_residual(&t2, &s2, &p2, tm, 1).unwrap();
    assert!(r1 / r2 > 12.0, "{r1:e} {r2:e}");
    let form1 = grflab::heat::conjugate_dilaton_form_residual(&t1, &s1, &p1, s1.path.node_index(tm).unwrap(), 1).unwrap();
    let form2 = grflab::heat::conjugate_dilaton_form_residual(&t2, &s2, &p2, s2.path.node_index(tm).unwrap(), 1).unwrap();
    assert!(form1 / form2 > 12.0, "{form1:e} {form2:e}");
}

/// Flat torus with `u ≡ 1/V`, shrinker normalization and terminal time `T`.
fn flat_shrinker(b: &Backend, s: &FlowState, t_end: f64, terminal: f64, max_step: f64) -> (Trajectory, ConjugateSolution) {
    let traj = integrate(b, FlowMode::Ricci, s, &StepperConfig::rk4(t_end)).unwrap();
    let vol = traj.snapshot(0).unwrap().geo.volume();
    let opts = HeatOptions {
        normalization: Normalization::Shrinker,
        max_step: Some(max_step),
        ..HeatOptions::default()
    };
    let mut sol = conjugate_solve(&traj, &vec![1.0 / vol; b.nodes()], 0.0, t_end, HeatMode::Weighted, &opts).unwrap();
    sol.terminal_time = terminal;
    (traj, sol)
}

#[test]
fn shrinker_identity_exact_on_flat_tori() {
    for (b, s) in [flat_cohom1(16), flat_conformal(16)] {
        let (traj, sol) = flat_shrinker(&b, &s, 0.5, 1.0, 1e-2);
        let psi = ScalarPath {
            times: sol.path.times.clone(),
            values: vec![vec![0.0; b.nodes()]; sol.path.len()],
            rates: vec![vec![0.0; b.nodes()]; sol.path.len()],
        };
        let t = sol.path.times[sol.path.len() / 2];
        // Centered differencing of the τ-dependence of f is the only error:
        // check against the exact value rather than zero.
        let r = shrinker_residual(&traj, &sol, &psi, t, 1).unwrap();
        assert!(r < 1e-9, "{r:e}");
    }
}

#[test]
fn shrinker_residual_small_on_fixture_with_linear_psi() {
    let traj = fixture_traj();
    let opts = HeatOptions { normalization: Normalization::Shrinker, ..HeatOptions::default() };
    // The fixture's terminal density has unit weighted mass at t = 1.
    let m = traj.snapshot(traj.len() - 1).unwrap();
    let u_t = 1.0 / m.geo.weighted_integral(&[1.0], &m.phi);
    let mut sol = conjugate_solve(&traj, &[u_t], 0.0, 1.0, HeatMode::Weighted, &opts).unwrap();
    sol.terminal_time = 1.5;
    let psi = conjugate_dilaton_solve(&traj, &sol, &[-4.0 * 0.5]).unwrap();
    for (t, p) in psi.times.iter().zip(&psi.values) {
        assert!((p[0] + 4.0 * (1.5 - t)).abs() < 1e-10);
    }
    let t = sol.path.times[sol.path.len() / 2];
    let r = shrinker_residual(&traj, &sol, &psi, t, 1).unwrap();
    assert!(r < 1e-6, "{r:e}");
}

#[test]
fn entropy_density_rejects_nonpositive_tau() {
    let (b, s) = flat_cohom1(16);
    let sn = snap(&b, &s, FlowMode::Ricci);
    assert!(matches!(entropy_density(&sn, &vec![0.0; 16], 0.0), Err(LabError::RangeError { .. })));
}

#[test]
fn harnack_on_flat_bump() {
    let n = 32;
    let (b, s) = flat_conformal(n);
    let h = b.spacing().unwrap();
    let sigma = 4.0 * h;
    let tau_min = 10.0 * sigma * sigma;
    let t_end = tau_min + 1.0;
    let traj = static_run(&b, &s, t_end, FlowMode::Ricci);
    let x = b.coordinate(0);
    let y = b.coordinate(1);
    let d = |a: f64| (a + PI).rem_euclid(2.0 * PI) - PI;
    let mut bump: Vec<f64> = (0..n * n)
        .map(|p| (-(d(x[p] - PI).powi(2) + d(y[p] - PI).powi(2)) / (2.0 * sigma * sigma)).exp())
        .collect();
    let m = traj.snapshot(0).unwrap().geo.integral(&bump);
    bump.iter_mut().for_each(|v| *v /= m);
    let opts = HeatOptions { normalization: Normalization::Shrinker, ..HeatOptions::default() };
    let t_start = traj.times()[traj.node_index(0.5).unwrap_or(0)];
    let sol = conjugate_solve(&traj, &bump, t_start.min(0.5), t_end, HeatMode::Weighted, &opts).unwrap();
    let psi = conjugate_dilaton_solve(&traj, &sol, &vec![0.0; n * n]).unwrap();
    // The bump is the exact kernel shifted by σ²/2 in time, whose entropy
    // density is positive only at relative size σ²/(2τ).
    let series = harnack_check(
        &traj,
        &sol,
        &psi,
        &HarnackOptions {
            rel_tol: sigma * sigma / (2.0 * tau_min),
            tau_min,
            ..HarnackOptions::default()
        },
    )
    .unwrap();
    assert!(!series.times.is_empty());
    assert!(!series.flags["not_delta_like"]);
    assert!(series.flags["harnack_holds"], "{:?}", series.metadata);
    assert!(series.flags["entropy_monotone"]);
    let csv = series.to_csv();
    assert!(csv.starts_with("t,entropy_integral,harnack_max,harnack_tol\n"));

    let fx = fixture_traj();
    let sol = conjugate_solve(&fx, &[1.0], 0.0, 1.0, HeatMode::Weighted, &opts).unwrap();
    let psi = conjugate_dilaton_solve(&fx, &sol, &[0.0]).unwrap();
    let series = harnack_check(&fx, &sol, &psi, &HarnackOptions::default()).unwrap();
    assert!(series.flags["not_delta_like"]);
}

#[test]
fn heat_kernel_inequality_on_torsion_run() {
    let (b, s) = generic(32, 0.5);
    let t_end = 0.3;
    let traj = rk4_run(&b, &s, t_end, 0.002, FlowMode::Grf);
    let theta = b.coordinate(0);
    let sigma = 4.0 * b.spacing().unwrap();
    let ut: Vec<f64> = theta.iter().map(|x| 0.05 + (-(x - PI).powi(2) / (2.0 * sigma * sigma)).exp()).collect();
    let opts = HeatOptions { normalization: Normalization::Shrinker, ..HeatOptions::default() };
    let sol = conjugate_solve(&traj, &ut, 0.0, t_end, HeatMode::Plain, &opts).unwrap();
    let t0 = traj.times()[10];
    let h0: Vec<f64> = theta.iter().map(|x| 0.5 * (1.0 + (x - 2.0).cos())).collect();
    let hpath = forward_heat_solve(&traj, &h0, t0, t_end, &HeatOptions::default()).unwrap();
    for (t1, t2) in [(traj.times()[20], traj.times()[60]), (traj.times()[40], traj.times()[140])] {
        let bound = heat_kernel_inequality(&traj, &sol, &hpath, t1, t2).unwrap();
        assert!(bound.holds(1e-8), "{bound:?}");
    }
}

#[test]
fn nash_entropies_exact_on_flat_torus() {
    let (b, s) = flat_cohom1(16);
    let (traj, sol) = flat_shrinker(&b, &s, 1.0, 2.0, 1e-4);
    let vol = (2.0 * PI).powi(3);
    let t = 0.5;
    let sn = traj.snapshot_at(t).unwrap();
    let f = vol.ln() - 1.5 * (4.0 * PI * 1.5).ln();
    assert!((nash_entropy(&sn, &sol, t).unwrap() - (f - 1.5)).abs() < 1e-12);
    assert!((perelman_entropy(&sn, &sol, t).unwrap() - (f - 3.0)).abs() < 1e-12);
    let rep = nash_relations_residual(&traj, &sol, 1.1, 1.9, 6, 1).unwrap();
    assert!(rep.nash_residual < 1e-10, "{:e}", rep.nash_residual);
    assert!(rep.perelman_residual < 1e-10, "{:e}", rep.perelman_residual);
    assert!(rep.split_residual < 1e-12);
    assert!(rep.monotone(1e-6));
    for (tau, rate) in rep.taus.iter().zip(&rep.perelman_rate) {
        assert!((rate + 1.5 / tau).abs() < 1e-10);
    }
}

#[test]
fn nash_rejects_torsion_and_bad_mass() {
    let (b, s) = generic(32, 0.5);
    let traj = rk4_run(&b, &s, 0.02, 0.002, FlowMode::Grf);
    let ut = unit_terminal(&traj, &b);
    let opts = HeatOptions { normalization: Normalization::Shrinker, ..HeatOptions::default() };
    let mut sol = conjugate_solve(&traj, &ut, 0.0, 0.02, HeatMode::Weighted, &opts).unwrap();
    sol.terminal_time = 1.0;
    let sn = traj.snapshot(0).unwrap();
    assert_eq!(nash_entropy(&sn, &sol, 0.0).unwrap_err(), LabError::RicciFlowOnly);

    let (b, s) = flat_cohom1(16);
    let traj = static_run(&b, &s, 0.1, FlowMode::Ricci);
    let mut sol = conjugate_solve(&traj, &vec![1.0; 16], 0.0, 0.1, HeatMode::Weighted, &opts).unwrap();
    sol.terminal_time = 1.0;
    let sn = traj.snapshot(0).unwrap();
    assert!(matches!(nash_entropy(&sn, &sol, 0.0), Err(LabError::NormalizationError { .. })));
}

fn nash_at(dt: f64) -> NashReport {
    let (traj, mut sol, _) = generic_solutions(dt, FlowMode::Ricci, 0.0);
    sol.terminal_time += 0.1;
    nash_relations_residual(&traj, &sol, 0.15, 0.22, 4, 1).unwrap()
}

#[test]
fn nash_relations_refine_on_perturbed_run() {
    let a = nash_at(0.002);
    let b = nash_at(0.001);
    assert!(a.nash_residual / b.nash_residual > 12.0, "{:e} {:e}", a.nash_residual, b.nash_residual);
    assert!(a.perelman_residual / b.perelman_residual > 12.0);
    assert!(b.monotone(1e-6));
    assert!(b.split_residual < 1e-10);
}

#[test]
fn lambda_on_fixture_and_flat() {
    let (b, s) = fixture();
    let rep = lambda_eig(&snap(&b, &s, FlowMode::Grf)).unwrap();
    assert!((rep.lambda - 4.0).abs() < 1e-8);
    let (b, s) = flat_cohom1(16);
    let rep = lambda_eig(&snap(&b, &s, FlowMode::Ricci)).unwrap();
    assert!(rep.lambda.abs() < 1e-10);
    assert!(rep.eigenfunction.iter().all(|v| (v - rep.eigenfunction[0]).abs() < 1e-10));
}

/// Dense matrix of `-4 e^{φ} ∂(e^{-φ} ∂·) + R^{0,φ}` on the flat circle built
/// from the periodic spectral differentiation matrix.
fn dense_lambda(n: usize, phi: &[f64]) -> f64 {
    let h = 2.0 * PI / n as f64;
    let dmat = DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            0.0
        } else {
            let k = i as f64 - j as f64;
            0.5 * (-1.0f64).powi((i + j) as i32) / (0.5 * k * h).tan()
        }
    });
    let theta: Vec<f64> = (0..n).map(|i| i as f64 * h).collect();
    // φ = 0.3 cos θ: R^{0,φ} = 2φ'' - φ'².
    let pot: Vec<f64> = theta.iter().map(|x| -0.6 * x.cos() - 0.09 * x.sin().powi(2)).collect();
    let e = DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(n, phi.iter().map(|p| p.exp())));
    let einv = DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(n, phi.iter().map(|p| (-p).exp())));
    let l = &e * &dmat * &einv * &dmat * -4.0 + DMatrix::from_diagonal(&nalgebra::DVector::from_vec(pot));
    // Symmetrize with the weight e^{-φ}.
    let half = DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(n, phi.iter().map(|p| (-0.5 * p).exp())));
    let halfinv = DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(n, phi.iter().map(|p| (0.5 * p).exp())));
    let s = &half * l * &halfinv;
    let s = (&s + s.transpose()) * 0.5;
    SymmetricEigen::new(s).eigenvalues.iter().copied().fold(f64::INFINITY, f64::min)
}

#[test]
fn lambda_matches_dense_oracle() {
    let n = 32;
    let (b, s) = flat_cohom1(n);
    let phi: Vec<f64> = b.coordinate(0).iter().map(|x| 0.3 * x.cos()).collect();
    let s = s.with_dilaton(phi.clone());
    let sn = snap(&b, &s, FlowMode::Ricci);
    let rep = lambda_eig(&sn).unwrap();
    let oracle = dense_lambda(n, &phi);
    assert!((rep.lambda - oracle).abs() < 1e-8, "{} {}", rep.lambda, oracle);
    assert!(rep.residual <= 1e-9);
    let mass = sn.geo.weighted_integral(&rep.eigenfunction.iter().map(|v| v * v).collect::<Vec<_>>(), &phi);
    assert!((mass - 1.0).abs() < 1e-12);
    assert!((lambda_quadratic_form(&sn, &rep.eigenfunction) - rep.lambda).abs() < 1e-9);
}

#[test]
fn f_functional_matches_quadratic_form() {
    let (b, s) = generic(32, 0.5);
    let sn = snap(&b, &s, FlowMode::Grf);
    let f: Vec<f64> = b.coordinate(0).iter().map(|x| 0.4 * (x + 0.3).sin() + 0.1 * (2.0 * x).cos()).collect();
    let shifted: Vec<f64> = f.iter().zip(&sn.phi).map(|(a, p)| a + p).collect();
    let w: Vec<f64> = f.iter().map(|v| (-0.5 * v).exp()).collect();
    let lhs = f_functional(&sn, &shifted);
    let rhs = lambda_quadratic_form(&sn, &w);
    assert!((lhs - rhs).abs() < 1e-9 * lhs.abs().max(1.0), "{lhs} {rhs}");
}

#[test]
fn lambda_nondecreasing_along_flow() {
    let (b, s) = generic(32, 0.5);
    let traj = rk4_run(&b, &s, 0.2, 0.004, FlowMode::Grf);
    let series = lambda_series(&traj, 10, 1e-6).unwrap();
    assert!(series.flags["lambda_nondecreasing"], "{:?}", series.channels["lambda"]);
}

#[test]
fn scalar_extrema_are_monotone() {
    let (b, s) = generic(32, 0.5);
    let traj = rk4_run(&b, &s, 0.2, 0.004, FlowMode::Grf);
    assert!(sup_monotonicity(&traj, None, MonotoneChannel::MinScalar, 1, 1e-6).unwrap());
    let ut = unit_terminal(&traj, &b);
    let sol = conjugate_solve(&traj, &ut, 0.0, 0.2, HeatMode::Weighted, &HeatOptions::default()).unwrap();
    assert!(sup_monotonicity(&traj, Some(&sol), MonotoneChannel::SupShiftedScalar, 1, 1e-6).unwrap());
    assert!(matches!(
        sup_monotonicity(&traj, None, MonotoneChannel::SupShiftedScalar, 1, 1e-6),
        Err(LabError::MissingField(_))
    ));
}

#[test]
fn monitor_series_exports() {
    let mut m = MonitorSeries::new().with_meta("backend", "flat");
    m.push(0.0, &[("b", 1.0), ("a", 2.0)]);
    m.push(0.5, &[("b", 1.5), ("a", 2.0)]);
    assert_eq!(m.to_csv(), "t,a,b\n0e0,2e0,1e0\n5e-1,2e0,1.5e0\n");
    assert!(m.nondecreasing("b", 0.0) && m.nonincreasing("a", 0.0));
    assert!(!m.has_nan());
    let s = m.summary();
    assert_eq!(s["channels"]["b"]["max"], 1.5);
    assert_eq!(s["metadata"]["backend"], "flat");
}
