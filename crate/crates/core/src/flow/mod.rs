//! Generalized Ricci flow with its dilaton, the one-form variant and the
//! general-degree system, plus trajectory storage.

mod stepper;

pub use stepper::{
    integrate, lagrange_derivative_weights, Scheme, StepRecord, StepperConfig, Trajectory,
    TrajectoryContainer, TRAJECTORY_FORMAT_VERSION,
};

use crate::error::{LabError, Result};
use crate::geometry::{Backend, BackendKind, FormField, Geometry, MetricState, SymTensorField};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FlowMode {
    /// `∂g = -2Rc`, `∂φ = Δφ`.
    Ricci,
    /// Torsion `H = H₀ + db` with `∂b = -d*H`.
    Grf,
    /// As `Grf` plus a one-form `α` replacing `dφ`.
    OneForm,
    /// A family of closed forms `H_k` evolving by the Hodge Laplacian.
    Ggrf,
}

/// One time slice of the coupled system.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowState {
    pub t: f64,
    pub metric: MetricState,
    /// Fixed closed background 3-form.
    pub h0: Option<FormField>,
    /// Torsion potential.
    pub b: Option<FormField>,
    pub phi: Vec<f64>,
    pub alpha: Option<FormField>,
    /// Closed forms of the general-degree system.
    pub forms: Vec<FormField>,
}

impl FlowState {
    /// Metric only, with zero dilaton.
    pub fn new(metric: MetricState, nodes: usize) -> Self {
        Self {
            t: 0.0,
            metric,
            h0: None,
            b: None,
            phi: vec![0.0; nodes],
            alpha: None,
            forms: Vec::new(),
        }
    }

    pub fn with_background(mut self, h0: FormField) -> Self {
        self.h0 = Some(h0);
        self
    }

    pub fn with_potential(mut self, b: FormField) -> Self {
        self.b = Some(b);
        self
    }

    pub fn with_dilaton(mut self, phi: Vec<f64>) -> Self {
        self.phi = phi;
        self
    }

    pub fn with_one_form(mut self, alpha: FormField) -> Self {
        self.alpha = Some(alpha);
        self
    }

    pub fn with_forms(mut self, forms: Vec<FormField>) -> Self {
        self.forms = forms;
        self
    }

    /// `H = H₀ + db`, if any torsion data is present.
    pub fn torsion(&self, backend: &Backend) -> Result<Option<FormField>> {
        if self.h0.is_none() && self.b.is_none() {
            return Ok(None);
        }
        if backend.dim() < 3 {
            return Err(LabError::UnsupportedDegree {
                degree: 3,
                dimension: backend.dim(),
            });
        }
        let mut h = match &self.h0 {
            Some(h0) => h0.clone(),
            None => FormField::zeros(backend.dim(), 3, backend.nodes()),
        };
        if let Some(b) = &self.b {
            h.add_scaled(&backend.exterior_d(b)?, 1.0);
        }
        Ok(Some(h))
    }

    /// All torsion forms entering the curvature couplings under `mode`.
    pub fn torsion_forms(&self, backend: &Backend, mode: FlowMode) -> Result<Vec<FormField>> {
        match mode {
            FlowMode::Ricci => Ok(Vec::new()),
            FlowMode::Grf | FlowMode::OneForm => Ok(self.torsion(backend)?.into_iter().collect()),
            FlowMode::Ggrf => Ok(self.forms.clone()),
        }
    }

    /// Flatten the evolving fields; `h0` is carried by the template.
    pub fn pack(&self) -> Vec<f64> {
        let mut out = Vec::new();
        match &self.metric {
            MetricState::Homogeneous3 { x } => out.extend_from_slice(x),
            MetricState::Cohom1Torus3 { a, b, c } => {
                out.extend_from_slice(a);
                out.extend_from_slice(b);
                out.extend_from_slice(c);
            }
            MetricState::ConformalTorus2 { u } => out.extend_from_slice(u),
        }
        if let Some(b) = &self.b {
            b.comps.iter().for_each(|c| out.extend_from_slice(c));
        }
        out.extend_from_slice(&self.phi);
        if let Some(a) = &self.alpha {
            a.comps.iter().for_each(|c| out.extend_from_slice(c));
        }
        for f in &self.forms {
            f.comps.iter().for_each(|c| out.extend_from_slice(c));
        }
        out
    }

    /// Inverse of `pack` using `self` as the layout template.
    pub fn unpack(&self, data: &[f64], t: f64) -> FlowState {
        let mut cur = Cursor { data, pos: 0 };
        let metric = match &self.metric {
            MetricState::Homogeneous3 { .. } => {
                let v = cur.take(3);
                MetricState::Homogeneous3 { x: [v[0], v[1], v[2]] }
            }
            MetricState::Cohom1Torus3 { a, .. } => MetricState::Cohom1Torus3 {
                a: cur.take(a.len()),
                b: cur.take(a.len()),
                c: cur.take(a.len()),
            },
            MetricState::ConformalTorus2 { u } => MetricState::ConformalTorus2 { u: cur.take(u.len()) },
        };
        let b = self.b.as_ref().map(|f| cur.refill(f));
        let phi = cur.take(self.phi.len());
        let alpha = self.alpha.as_ref().map(|f| cur.refill(f));
        let forms = self.forms.iter().map(|f| cur.refill(f)).collect();
        FlowState {
            t,
            metric,
            h0: self.h0.clone(),
            b,
            phi,
            alpha,
            forms,
        }
    }

    /// Metric data as raw positive coefficients, for the SPD floor check.
    pub fn metric_coefficients(&self) -> Vec<f64> {
        match &self.metric {
            MetricState::Homogeneous3 { x } => x.to_vec(),
            MetricState::Cohom1Torus3 { a, b, c } => a.iter().chain(b).chain(c).copied().collect(),
            MetricState::ConformalTorus2 { u } => u.iter().map(|v| (2.0 * v).exp()).collect(),
        }
    }
}

struct Cursor<'a> {
    data: &'a [f64],
    pos: usize,
}

impl Cursor<'_> {
    fn take(&mut self, len: usize) -> Vec<f64> {
        let v = self.data[self.pos..self.pos + len].to_vec();
        self.pos += len;
        v
    }

    fn refill(&mut self, f: &FormField) -> FormField {
        let mut out = f.clone();
        for c in out.comps.iter_mut() {
            *c = self.take(c.len());
        }
        out
    }
}

/// Geometry of a state together with its torsion forms.
#[derive(Clone, Debug)]
pub struct Snapshot {
    pub t: f64,
    pub geo: Geometry,
    pub torsion: Vec<FormField>,
    pub phi: Vec<f64>,
    pub alpha: Option<FormField>,
}

impl Snapshot {
    pub fn new(backend: &Backend, state: &FlowState, mode: FlowMode) -> Result<Self> {
        Ok(Self {
            t: state.t,
            geo: Geometry::new(backend, &state.metric)?,
            torsion: state.torsion_forms(backend, mode)?,
            phi: state.phi.clone(),
            alpha: state.alpha.clone(),
        })
    }

    pub fn nodes(&self) -> usize {
        self.geo.nodes()
    }

    /// `Σ_k H_k²`.
    pub fn torsion_square(&self) -> SymTensorField {
        let mut out = SymTensorField::zeros(self.geo.dim(), self.nodes());
        for h in &self.torsion {
            out.add_scaled(&h.square(self.geo.inverse_metric()), 1.0);
        }
        out
    }

    /// `Σ_k c(k) |H_k|²` for a degree-dependent coefficient.
    pub fn weighted_torsion_norm(&self, coeff: impl Fn(usize) -> f64) -> Vec<f64> {
        let mut out = vec![0.0; self.nodes()];
        for h in &self.torsion {
            let c = coeff(h.degree);
            for (o, v) in out.iter_mut().zip(h.norm_sq(self.geo.inverse_metric())) {
                *o += c * v;
            }
        }
        out
    }

    /// `Σ|H_k|²`.
    pub fn torsion_norm_sq(&self) -> Vec<f64> {
        self.weighted_torsion_norm(|_| 1.0)
    }

    /// Dilaton source `¼ Σ ((k-1)/k) |H_k|²`, which is `|H|²/6` for a 3-form.
    pub fn dilaton_source(&self) -> Vec<f64> {
        self.weighted_torsion_norm(|k| 0.25 * (k as f64 - 1.0) / k as f64)
    }

    /// Torsion correction `¼ Σ (1/k) |H_k|²` of the generalized scalar.
    pub fn scalar_torsion(&self) -> Vec<f64> {
        self.weighted_torsion_norm(|k| 0.25 / k as f64)
    }

    /// `-2Rc + ½ Σ H_k²`.
    pub fn metric_velocity(&self) -> SymTensorField {
        let mut s = self.geo.ricci().scaled(-2.0);
        s.add_scaled(&self.torsion_square(), 0.5);
        s
    }

    /// `½ tr ∂g = -R + ¼ Σ|H_k|²`, the logarithmic rate of the volume form.
    pub fn volume_rate(&self) -> Vec<f64> {
        let r = self.geo.scalar_curvature();
        let h = self.torsion_norm_sq();
        r.iter().zip(&h).map(|(a, b)| -a + 0.25 * b).collect()
    }
}

fn off_ansatz_tolerance(s: &SymTensorField) -> f64 {
    1e-8 * (1.0 + s.max_abs())
}

/// Restrict a symmetric metric velocity to the backend ansatz.
pub fn project_metric_rate(backend: &Backend, geo: &Geometry, s: &SymTensorField) -> Result<MetricState> {
    let n = backend.dim();
    let tol = off_ansatz_tolerance(s);
    let mut off: f64 = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            off = off.max(s.component(i, j).iter().fold(0.0_f64, |m, v| m.max(v.abs())));
        }
    }
    match backend.kind() {
        BackendKind::Homogeneous3 => {
            if off > tol {
                return Err(LabError::AnsatzBreak { magnitude: off });
            }
            Ok(MetricState::Homogeneous3 {
                x: [s.component(0, 0)[0], s.component(1, 1)[0], s.component(2, 2)[0]],
            })
        }
        BackendKind::Cohom1Torus3 => {
            if off > tol {
                return Err(LabError::AnsatzBreak { magnitude: off });
            }
            Ok(MetricState::Cohom1Torus3 {
                a: s.component(0, 0).to_vec(),
                b: s.component(1, 1).to_vec(),
                c: s.component(2, 2).to_vec(),
            })
        }
        BackendKind::ConformalTorus2 => {
            let s00 = s.component(0, 0);
            let s11 = s.component(1, 1);
            let traceless = s00.iter().zip(s11).fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()));
            let mag = off.max(traceless);
            if mag > tol {
                return Err(LabError::AnsatzBreak { magnitude: mag });
            }
            let e2u = &geo.metric_diagonal()[0];
            Ok(MetricState::ConformalTorus2 {
                u: (0..s00.len()).map(|p| (s00[p] + s11[p]) / (4.0 * e2u[p])).collect(),
            })
        }
    }
}

fn check_closed(backend: &Backend, forms: &[FormField]) -> Result<()> {
    for h in forms {
        if h.dim != backend.dim() || h.degree == 0 || h.degree > backend.dim() {
            return Err(LabError::UnsupportedDegree {
                degree: h.degree,
                dimension: backend.dim(),
            });
        }
        let residual = backend.exterior_d(h)?.max_abs();
        if residual > 1e-9 * (1.0 + h.max_abs()) {
            return Err(LabError::NotClosed {
                degree: h.degree,
                residual,
            });
        }
    }
    Ok(())
}

/// Rates `(∂g, ∂b)` of generalized Ricci flow; the dilaton is left at zero.
pub fn grf_rhs(backend: &Backend, state: &FlowState) -> Result<FlowState> {
    let snap = Snapshot::new(backend, state, FlowMode::Grf)?;
    let mut rate = zero_rate(state);
    rate.metric = project_metric_rate(backend, &snap.geo, &snap.metric_velocity())?;
    if let (Some(rb), Some(h)) = (rate.b.as_mut(), snap.torsion.first()) {
        *rb = snap.geo.codifferential(h)?.scaled(-1.0);
    }
    Ok(rate)
}

/// `Δφ + ¼ Σ ((k-1)/k)|H_k|²`; for the three-dimensional torsion this is
/// `Δφ + |H|²/6`.
pub fn dilaton_rhs(snap: &Snapshot) -> Vec<f64> {
    let lap = snap.geo.laplacian(&snap.phi);
    lap.iter().zip(snap.dilaton_source()).map(|(a, b)| a + b).collect()
}

/// `Δ_d α + (1/6) d|H|²`.
pub fn oneform_dilaton_rhs(snap: &Snapshot) -> Result<FormField> {
    let alpha = snap.alpha.as_ref().ok_or(LabError::MissingField("alpha"))?;
    let mut out = snap.geo.hodge_laplacian(alpha)?;
    let src = snap.dilaton_source();
    out.add_scaled(&snap.geo.gradient_form(&src), 1.0);
    Ok(out)
}

/// Rates of the general-degree system.
pub fn ggrf_rhs(backend: &Backend, state: &FlowState) -> Result<FlowState> {
    check_closed(backend, &state.forms)?;
    let snap = Snapshot::new(backend, state, FlowMode::Ggrf)?;
    let mut rate = zero_rate(state);
    rate.metric = project_metric_rate(backend, &snap.geo, &snap.metric_velocity())?;
    rate.forms = snap
        .torsion
        .iter()
        .map(|h| snap.geo.hodge_laplacian(h))
        .collect::<Result<_>>()?;
    rate.phi = dilaton_rhs(&snap);
    Ok(rate)
}

fn zero_rate(state: &FlowState) -> FlowState {
    let zeros = vec![0.0; state.pack().len()];
    let mut r = state.unpack(&zeros, state.t);
    r.h0 = None;
    r
}

/// Full right-hand side for `mode`.
pub fn flow_rhs(backend: &Backend, mode: FlowMode, state: &FlowState) -> Result<FlowState> {
    match mode {
        FlowMode::Ggrf => ggrf_rhs(backend, state),
        FlowMode::Ricci | FlowMode::Grf | FlowMode::OneForm => {
            let snap = Snapshot::new(backend, state, mode)?;
            let mut rate = zero_rate(state);
            rate.metric = project_metric_rate(backend, &snap.geo, &snap.metric_velocity())?;
            if mode != FlowMode::Ricci {
                if let (Some(rb), Some(h)) = (rate.b.as_mut(), snap.torsion.first()) {
                    *rb = snap.geo.codifferential(h)?.scaled(-1.0);
                }
            }
            rate.phi = dilaton_rhs(&snap);
            if mode == FlowMode::OneForm {
                rate.alpha = Some(oneform_dilaton_rhs(&snap)?);
            }
            Ok(rate)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::BackendDescriptor;

    pub(crate) fn fixture_state() -> (Backend, FlowState) {
        let b = Backend::new(BackendDescriptor::homogeneous3([2.0; 3])).unwrap();
        let mut h0 = FormField::zeros(3, 3, 1);
        h0.comps[0][0] = 2.0;
        let s = FlowState::new(MetricState::Homogeneous3 { x: [1.0; 3] }, 1)
            .with_background(h0)
            .with_potential(FormField::zeros(3, 2, 1));
        (b, s)
    }

    #[test]
    fn pack_round_trips() {
        let (b, s) = fixture_state();
        let s = s.with_one_form(FormField::zeros(3, 1, b.nodes()));
        let data: Vec<f64> = (0..s.pack().len()).map(|i| i as f64 * 0.5).collect();
        let back = s.unpack(&data, 1.5);
        assert_eq!(back.pack(), data);
        assert_eq!(back.t, 1.5);
        assert_eq!(back.h0, s.h0);
    }

    #[test]
    fn fixture_is_stationary() {
        let (b, s) = fixture_state();
        let r = flow_rhs(&b, FlowMode::Grf, &s).unwrap();
        let p = r.pack();
        // x rates, b rates, then the dilaton rate.
        for v in &p[..p.len() - 1] {
            assert!(v.abs() < 1e-13);
        }
        assert!((p[p.len() - 1] - 4.0).abs() < 1e-13);
    }

    #[test]
    fn ggrf_on_conformal_torus_with_area_form() {
        let b = Backend::new(BackendDescriptor::conformal_torus2(16)).unwrap();
        let lam = 0.8;
        let mut h2 = FormField::zeros(2, 2, b.nodes());
        h2.comps[0] = vec![lam; b.nodes()];
        let s = FlowState::new(b.flat_metric(), b.nodes()).with_forms(vec![h2]);
        let r = ggrf_rhs(&b, &s).unwrap();
        assert!(r.forms[0].max_abs() < 1e-13);
        let MetricState::ConformalTorus2 { u } = &r.metric else { panic!() };
        // ∂g = ½λ²g, so ∂u = λ²/4; the dilaton source is ¼·½·2λ².
        assert!(u.iter().all(|v| (v - 0.25 * lam * lam).abs() < 1e-13));
        assert!(r.phi.iter().all(|v| (v - 0.25 * lam * lam).abs() < 1e-13));
    }

    #[test]
    fn one_form_torsion_breaks_conformal_ansatz() {
        let b = Backend::new(BackendDescriptor::conformal_torus2(16)).unwrap();
        let mut h1 = FormField::zeros(2, 1, b.nodes());
        h1.comps[0] = vec![0.5; b.nodes()];
        let s = FlowState::new(b.flat_metric(), b.nodes()).with_forms(vec![h1]);
        assert!(matches!(ggrf_rhs(&b, &s), Err(LabError::AnsatzBreak { .. })));
    }

    #[test]
    fn non_closed_forms_are_rejected() {
        let b = Backend::new(BackendDescriptor::conformal_torus2(16)).unwrap();
        let mut h1 = FormField::zeros(2, 1, b.nodes());
        h1.comps[0] = b.coordinate(1).iter().map(|y| y.sin()).collect();
        let s = FlowState::new(b.flat_metric(), b.nodes()).with_forms(vec![h1]);
        assert!(matches!(ggrf_rhs(&b, &s), Err(LabError::NotClosed { .. })));
    }

    #[test]
    fn missing_one_form_is_reported() {
        let (b, s) = fixture_state();
        let snap = Snapshot::new(&b, &s, FlowMode::OneForm).unwrap();
        assert_eq!(oneform_dilaton_rhs(&snap), Err(LabError::MissingField("alpha")));
    }
}
