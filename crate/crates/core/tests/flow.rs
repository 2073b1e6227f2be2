use grflab::flow::{
    flow_rhs, grf_rhs, integrate, FlowMode, FlowState, StepperConfig, Trajectory,
};
use grflab::geometry::{Backend, BackendDescriptor, FormField, MetricState};
use grflab::LabError;

fn fixture() -> (Backend, FlowState) {
    let b = Backend::new(BackendDescriptor::homogeneous3([2.0; 3])).unwrap();
    let mut h0 = FormField::zeros(3, 3, 1);
    h0.comps[0][0] = 2.0;
    let s = FlowState::new(MetricState::Homogeneous3 { x: [1.0; 3] }, 1)
        .with_background(h0)
        .with_potential(FormField::zeros(3, 2, 1));
    (b, s)
}

fn warped(n: usize, amp: f64, k: f64) -> (Backend, FlowState) {
    let b = Backend::new(BackendDescriptor::cohom1_torus3(n)).unwrap();
    let t = b.coordinate(0);
    let metric = MetricState::Cohom1Torus3 {
        a: vec![1.0; n],
        b: t.iter().map(|x| 1.0 + amp * (k * x).cos()).collect(),
        c: t.iter().map(|x| 1.0 + amp * (k * x + 0.4).sin()).collect(),
    };
    (b.clone(), FlowState::new(metric, n))
}

/// Fourth-order central differences on a periodic array.
fn fd(f: &[f64], h: f64) -> Vec<f64> {
    let n = f.len();
    (0..n)
        .map(|i| {
            let at = |o: isize| f[((i as isize + o).rem_euclid(n as isize)) as usize];
            (-at(2) + 8.0 * at(1) - 8.0 * at(-1) + at(-2)) / (12.0 * h)
        })
        .collect()
}

#[test]
fn warped_ricci_rate_matches_finite_difference_oracle() {
    // Log-warping form: b = e^{2B}, c = e^{2C}, derivatives in arclength.
    let n = 512;
    let b = Backend::new(BackendDescriptor::cohom1_torus3(n)).unwrap();
    let t = b.coordinate(0);
    let a: Vec<f64> = t.iter().map(|x| 1.0 + 0.1 * x.cos()).collect();
    let bb = vec![1.0; n];
    let cc = vec![1.0; n];
    let s = FlowState::new(
        MetricState::Cohom1Torus3 {
            a: a.clone(),
            b: bb.clone(),
            c: cc.clone(),
        },
        n,
    );
    let rate = grf_rhs(&b, &s).unwrap();
    // With b = c = 1 the metric is flat, so the rate vanishes.
    let MetricState::Cohom1Torus3 { a: ra, b: rb, c: rc } = &rate.metric else { panic!() };
    assert!(ra.iter().chain(rb).chain(rc).all(|v| v.abs() < 1e-10));

    let bw: Vec<f64> = t.iter().map(|x| 1.0 + 0.2 * (2.0 * x).sin()).collect();
    let cw: Vec<f64> = t.iter().map(|x| 1.0 / (1.0 + 0.15 * x.cos())).collect();
    let s = FlowState::new(
        MetricState::Cohom1Torus3 {
            a: a.clone(),
            b: bw.clone(),
            c: cw.clone(),
        },
        n,
    );
    let rate = grf_rhs(&b, &s).unwrap();
    let MetricState::Cohom1Torus3 { a: ra, b: rb, c: rc } = &rate.metric else { panic!() };
    let h = b.spacing().unwrap();
    let big_b: Vec<f64> = bw.iter().map(|v| 0.5 * v.ln()).collect();
    let big_c: Vec<f64> = cw.iter().map(|v| 0.5 * v.ln()).collect();
    let ds = |f: &[f64]| -> Vec<f64> { fd(f, h).iter().zip(&a).map(|(d, av)| d / av.sqrt()).collect() };
    let b1 = ds(&big_b);
    let b2 = ds(&b1);
    let c1 = ds(&big_c);
    let c2 = ds(&c1);
    for p in 0..n {
        let r_theta = -(b2[p] + b1[p] * b1[p] + c2[p] + c1[p] * c1[p]);
        let r_y = -(b2[p] + b1[p] * b1[p] + b1[p] * c1[p]);
        let r_z = -(c2[p] + c1[p] * c1[p] + b1[p] * c1[p]);
        assert!((ra[p] + 2.0 * r_theta * a[p]).abs() < 1e-6, "{p}");
        assert!((rb[p] + 2.0 * r_y * bw[p]).abs() < 1e-6, "{p}");
        assert!((rc[p] + 2.0 * r_z * cw[p]).abs() < 1e-6, "{p}");
    }
}

#[test]
fn fixture_is_stationary_with_linear_dilaton() {
    let (b, s) = fixture();
    let traj = integrate(&b, FlowMode::Grf, &s, &StepperConfig::adaptive(1.0).with_max_step(0.1)).unwrap();
    let x0 = traj.state(0);
    for i in 0..traj.len() {
        let st = traj.state(i);
        let MetricState::Homogeneous3 { x } = st.metric else { panic!() };
        assert!(x.iter().all(|v| (v - 1.0).abs() <= 1e-10));
        assert!((st.phi[0] - x0.phi[0] - 4.0 * st.t).abs() <= 1e-10);
        assert_eq!(st.torsion(&b).unwrap().unwrap().comps[0][0], 2.0);
    }
    assert!((traj.end() - 1.0).abs() < 1e-15);
    let mid = traj.state_at(0.537).unwrap();
    assert!((mid.phi[0] - 4.0 * 0.537).abs() < 1e-10);
}

#[test]
fn flat_torus_stays_constant() {
    let b = Backend::new(BackendDescriptor::cohom1_torus3(16)).unwrap();
    let s = FlowState::new(b.flat_metric(), 16);
    let traj = integrate(&b, FlowMode::Ricci, &s, &StepperConfig::rk4(0.1)).unwrap();
    for i in 0..traj.len() {
        assert_eq!(traj.packed_state(i), s.pack().as_slice());
    }
}

#[test]
fn perturbed_flat_data_relaxes() {
    let (b, s) = warped(32, 0.2, 1.0);
    let traj = integrate(&b, FlowMode::Ricci, &s, &StepperConfig::rk4(1.0)).unwrap();
    let dev = |i: usize| -> f64 {
        let MetricState::Cohom1Torus3 { b: bb, .. } = traj.state(i).metric else { panic!() };
        let mean = bb.iter().sum::<f64>() / bb.len() as f64;
        bb.iter().fold(0.0, |m, v| f64::max(m, (v - mean).abs()))
    };
    let step = traj.len() / 5;
    let samples: Vec<f64> = (0..5).map(|k| dev(k * step)).collect();
    assert!(samples.windows(2).all(|w| w[1] < w[0]), "{samples:?}");
    assert!(samples[4] < 0.6 * samples[0]);
}

#[test]
fn ricci_specialization_keeps_torsion_zero() {
    let (b, s) = warped(32, 0.1, 1.0);
    let s = s.with_potential(FormField::zeros(3, 2, 32));
    let traj = integrate(&b, FlowMode::Grf, &s, &StepperConfig::rk4(0.05)).unwrap();
    for i in 0..traj.len() {
        let h = traj.state(i).torsion(&b).unwrap().unwrap();
        assert_eq!(h.max_abs(), 0.0);
    }
}

#[test]
fn torsion_potential_flow_keeps_h_closed_and_decays_it() {
    let (b, s) = warped(32, 0.1, 1.0);
    let t = b.coordinate(0);
    let mut pot = FormField::zeros(3, 2, 32);
    *pot.component_mut(0b110) = t.iter().map(|x| 0.2 * (2.0 * x).sin()).collect();
    *pot.component_mut(0b011) = t.iter().map(|x| 0.1 * x.cos()).collect();
    let mut h0 = FormField::zeros(3, 3, 32);
    h0.comps[0] = vec![0.3; 32];
    let s = s.with_potential(pot).with_background(h0);
    let traj = integrate(&b, FlowMode::Grf, &s, &StepperConfig::rk4(0.2)).unwrap();
    let spread = |i: usize| {
        let h = traj.state(i).torsion(&b).unwrap().unwrap();
        let m = h.comps[0].iter().sum::<f64>() / 32.0;
        (m, h.comps[0].iter().fold(0.0, |a: f64, v| a.max((v - m).abs())))
    };
    let (m0, s0) = spread(0);
    let (m1, s1) = spread(traj.len() - 1);
    // Exact part decays; the coordinate mean of H is the fixed cohomology class.
    assert!(s1 < s0);
    assert!((m1 - m0).abs() < 1e-12);
    for i in 0..traj.len() {
        let h = traj.state(i).torsion(&b).unwrap().unwrap();
        assert_eq!(b.exterior_d(&h).unwrap().max_abs(), 0.0);
    }
}

#[test]
fn dilaton_rhs_closed_forms() {
    let b = Backend::new(BackendDescriptor::cohom1_torus3(32)).unwrap();
    let phi: Vec<f64> = b.coordinate(0).iter().map(|x| x.cos()).collect();
    let s = FlowState::new(b.flat_metric(), 32).with_dilaton(phi.clone());
    let r = flow_rhs(&b, FlowMode::Ricci, &s).unwrap();
    for (a, c) in r.phi.iter().zip(&phi) {
        assert!((a + c).abs() < 1e-12);
    }
    let s = FlowState::new(b.flat_metric(), 32).with_dilaton(vec![3.0; 32]);
    assert!(flow_rhs(&b, FlowMode::Ricci, &s).unwrap().phi.iter().all(|v| *v == 0.0));
}

#[test]
fn one_form_rhs_commutes_with_d_for_exact_forms() {
    let b = Backend::new(BackendDescriptor::conformal_torus2(16)).unwrap();
    let x = b.coordinate(0);
    let mut alpha = FormField::zeros(2, 1, b.nodes());
    alpha.comps[0] = x.iter().map(|v| -v.sin()).collect();
    let s = FlowState::new(b.flat_metric(), b.nodes()).with_one_form(alpha);
    let r = flow_rhs(&b, FlowMode::OneForm, &s).unwrap();
    let ra = r.alpha.unwrap();
    for p in 0..b.nodes() {
        assert!((ra.comps[0][p] - x[p].sin()).abs() < 1e-12);
        assert!(ra.comps[1][p].abs() < 1e-12);
    }
    // Constant coefficients: harmonic.
    let mut harm = FormField::zeros(2, 1, b.nodes());
    harm.comps[1] = vec![0.4; b.nodes()];
    let s = FlowState::new(b.flat_metric(), b.nodes()).with_one_form(harm);
    assert!(flow_rhs(&b, FlowMode::OneForm, &s).unwrap().alpha.unwrap().max_abs() < 1e-14);
}

#[test]
fn exact_one_forms_stay_exact() {
    let b = Backend::new(BackendDescriptor::conformal_torus2(16)).unwrap();
    let x = b.coordinate(0);
    let y = b.coordinate(1);
    let u: Vec<f64> = x.iter().zip(&y).map(|(a, c)| 0.1 * (a + c).cos()).collect();
    let phi: Vec<f64> = x.iter().zip(&y).map(|(a, c)| 0.3 * a.sin() * c.cos()).collect();
    let geo = grflab::geometry::Geometry::new(&b, &b.flat_metric()).unwrap();
    let alpha = geo.gradient_form(&phi);
    let s = FlowState::new(MetricState::ConformalTorus2 { u }, b.nodes())
        .with_dilaton(phi)
        .with_one_form(alpha);
    let traj = integrate(&b, FlowMode::OneForm, &s, &StepperConfig::rk4(0.1)).unwrap();
    // Period integrals along the coordinate circles through the origin.
    let n = 16;
    let h = b.spacing().unwrap();
    for i in [0, traj.len() / 2, traj.len() - 1] {
        let a = traj.state(i).alpha.unwrap();
        let px: f64 = (0..n).map(|k| a.comps[0][k * n]).sum::<f64>() * h;
        let py: f64 = (0..n).map(|k| a.comps[1][k]).sum::<f64>() * h;
        assert!(px.abs() < 1e-12 && py.abs() < 1e-12);
    }
}

#[test]
fn dense_output_is_exact_at_nodes_and_fourth_order_between() {
    let (b, s) = warped(32, 0.3, 2.0);
    let run = |dt: f64| integrate(&b, FlowMode::Ricci, &s, &StepperConfig::rk4(0.2).with_dt(dt)).unwrap();
    let base = 0.008;
    let reference = run(base / 16.0);
    let coarse = run(base);
    let fine = run(base / 2.0);
    for i in 0..coarse.len() {
        assert_eq!(coarse.state_at(coarse.times()[i]).unwrap().pack(), coarse.packed_state(i));
    }
    let err = |tr: &Trajectory, t: f64| -> f64 {
        let i = reference.node_index(t).unwrap();
        let r = reference.packed_state(i);
        tr.packed_at(t).unwrap().iter().zip(r).fold(0.0, |m, (a, c)| f64::max(m, (a - c).abs()))
    };
    // Midpoint of a coarse step versus midpoint of a fine step near the same time.
    let e_c = err(&coarse, 12.0 * base + 0.5 * base);
    let e_f = err(&fine, 12.0 * base + 0.25 * base);
    assert!(e_c / e_f > 12.0, "{e_c:e} {e_f:e}");
}

#[test]
fn out_of_range_times_are_rejected() {
    let (b, s) = fixture();
    let traj = integrate(&b, FlowMode::Grf, &s, &StepperConfig::adaptive(0.5)).unwrap();
    assert!(matches!(traj.state_at(0.6), Err(LabError::RangeError { .. })));
    assert!(matches!(traj.state_at(-0.1), Err(LabError::RangeError { .. })));
}

#[test]
fn trajectory_container_round_trips() {
    let (b, s) = warped(16, 0.1, 1.0);
    let traj = integrate(&b, FlowMode::Ricci, &s, &StepperConfig::rk4(0.02)).unwrap();
    let json = traj.to_json().unwrap();
    let back = Trajectory::from_json(&json).unwrap();
    assert_eq!(back.to_json().unwrap(), json);
    assert_eq!(back.config_hash(), traj.config_hash());
    assert_eq!(traj.config_hash().len(), 64);
}

#[test]
fn runs_are_deterministic() {
    let (b, s) = warped(32, 0.2, 1.0);
    let cfg = StepperConfig::rk4(0.05);
    let a = integrate(&b, FlowMode::Ricci, &s, &cfg).unwrap();
    let c = integrate(&b, FlowMode::Ricci, &s, &cfg).unwrap();
    assert_eq!(a.to_json().unwrap(), c.to_json().unwrap());
}

#[test]
fn oversized_step_is_a_stiffness_abort() {
    let (b, s) = warped(64, 0.1, 1.0);
    let err = integrate(&b, FlowMode::Ricci, &s, &StepperConfig::rk4(0.1).with_dt(0.01)).unwrap_err();
    assert!(matches!(err, LabError::StiffnessAbort { .. }), "{err:?}");
}

#[test]
fn collapsing_metric_hits_the_floor() {
    // Positively curved round sphere shrinks to a point at t = 1/4.
    let b = Backend::new(BackendDescriptor::homogeneous3([2.0; 3])).unwrap();
    let s = FlowState::new(MetricState::Homogeneous3 { x: [1.0; 3] }, 1);
    let err = integrate(&b, FlowMode::Ricci, &s, &StepperConfig::adaptive(0.3)).unwrap_err();
    assert!(
        matches!(err, LabError::MetricDegenerate { .. } | LabError::StiffnessAbort { .. }),
        "{err:?}"
    );
}
