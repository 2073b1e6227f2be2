#![allow(dead_code)]

use grflab::flow::{integrate, FlowMode, FlowState, StepperConfig, Trajectory};
use grflab::geometry::{Backend, BackendDescriptor, FormField, MetricState};

/// Bismut-flat S³: Milnor frame with all structure constants 2 and `H = 2 dV`.
pub fn fixture() -> (Backend, FlowState) {
    let b = Backend::new(BackendDescriptor::homogeneous3([2.0; 3])).unwrap();
    let mut h0 = FormField::zeros(3, 3, 1);
    h0.comps[0][0] = 2.0;
    let s = FlowState::new(MetricState::Homogeneous3 { x: [1.0; 3] }, 1)
        .with_background(h0)
        .with_potential(FormField::zeros(3, 2, 1));
    (b, s)
}

pub fn flat_cohom1(n: usize) -> (Backend, FlowState) {
    let b = Backend::new(BackendDescriptor::cohom1_torus3(n)).unwrap();
    let metric = MetricState::Cohom1Torus3 {
        a: vec![1.0; n],
        b: vec![1.0; n],
        c: vec![1.0; n],
    };
    (b, FlowState::new(metric, n))
}

pub fn flat_conformal(n: usize) -> (Backend, FlowState) {
    let b = Backend::new(BackendDescriptor::conformal_torus2(n)).unwrap();
    (b, FlowState::new(MetricState::ConformalTorus2 { u: vec![0.0; n * n] }, n * n))
}

/// Warped torus with torsion `H₀ = h·dθ∧dx∧dy`, a potential perturbation
/// and a dilaton profile.
pub fn warped_torsion(n: usize, amp: f64, h: f64, phi_amp: f64) -> (Backend, FlowState) {
    let b = Backend::new(BackendDescriptor::cohom1_torus3(n)).unwrap();
    let t = b.coordinate(0);
    let metric = MetricState::Cohom1Torus3 {
        a: vec![1.0; n],
        b: t.iter().map(|x| 1.0 + amp * x.cos()).collect(),
        c: t.iter().map(|x| 1.0 + amp * (2.0 * x + 0.4).sin()).collect(),
    };
    let mut h0 = FormField::zeros(3, 3, n);
    h0.comps[0] = vec![h; n];
    let mut pot = FormField::zeros(3, 2, n);
    // b_{xy}(θ) changes H by a θ-dependent multiple of the volume form.
    let xy = pot.index_of(0b110).unwrap();
    pot.comps[xy] = t.iter().map(|x| 0.3 * h * x.sin()).collect();
    let phi = t.iter().map(|x| phi_amp * (x + 0.2).cos()).collect();
    let s = FlowState::new(metric, n)
        .with_background(h0)
        .with_potential(pot)
        .with_dilaton(phi);
    (b, s)
}

/// Static trajectory on a flat backend.
pub fn static_run(b: &Backend, s: &FlowState, t_end: f64, mode: FlowMode) -> Trajectory {
    integrate(b, mode, s, &StepperConfig::rk4(t_end)).unwrap()
}

pub fn rk4_run(b: &Backend, s: &FlowState, t_end: f64, dt: f64, mode: FlowMode) -> Trajectory {
    integrate(b, mode, s, &StepperConfig::rk4(t_end).with_dt(dt)).unwrap()
}

pub fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}
