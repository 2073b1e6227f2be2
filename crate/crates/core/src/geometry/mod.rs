//! Curvature, exterior calculus and quadrature on the three backends.
//!
//! Every backend carries a global frame `E_1..E_n` in which the metric is
//! diagonal:
//!
//! * `Homogeneous3`: a left-invariant Milnor frame on a unimodular Lie group,
//!   `[E2,E3] = λ1 E1`, `[E3,E1] = λ2 E2`, `[E1,E2] = λ3 E3`, one node.
//! * `Cohom1Torus3`: `g = a(θ)dθ² + b(θ)dy² + c(θ)dz²` on `T³`, coordinate frame.
//! * `ConformalTorus2`: `g = e^{2u}(dx² + dy²)` on `T²`, coordinate frame.

mod fields;
mod frame;

pub use fields::{basis_masks, FormField, ScalarField, SymTensorField};
pub use frame::Geometry;

use crate::error::{LabError, Result};
use crate::spectral::SpectralGrid;
use serde::{Deserialize, Serialize};
use std::f64::consts::TAU;

/// Volume of the unit round `S³`, which is the `Homogeneous3` reference
/// volume at `λ = (2,2,2)`, `x = (1,1,1)`.
pub const HOMOGENEOUS_REFERENCE_VOLUME: f64 = 2.0 * std::f64::consts::PI * std::f64::consts::PI;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum BackendKind {
    Homogeneous3,
    Cohom1Torus3,
    ConformalTorus2,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BackendDescriptor {
    pub kind: BackendKind,
    pub dimension: usize,
    /// Nodes per periodic axis; ignored for `Homogeneous3`.
    pub resolution: usize,
    pub structure_constants: [f64; 3],
}

impl BackendDescriptor {
    pub fn homogeneous3(lambda: [f64; 3]) -> Self {
        Self {
            kind: BackendKind::Homogeneous3,
            dimension: 3,
            resolution: 1,
            structure_constants: lambda,
        }
    }

    pub fn cohom1_torus3(resolution: usize) -> Self {
        Self {
            kind: BackendKind::Cohom1Torus3,
            dimension: 3,
            resolution,
            structure_constants: [0.0; 3],
        }
    }

    pub fn conformal_torus2(resolution: usize) -> Self {
        Self {
            kind: BackendKind::ConformalTorus2,
            dimension: 2,
            resolution,
            structure_constants: [0.0; 3],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let expected = match self.kind {
            BackendKind::Homogeneous3 | BackendKind::Cohom1Torus3 => 3,
            BackendKind::ConformalTorus2 => 2,
        };
        if self.dimension != expected {
            return Err(LabError::InvalidBackend(format!(
                "{:?} has dimension {expected}, got {}",
                self.kind, self.dimension
            )));
        }
        if self.kind != BackendKind::Homogeneous3 && (self.resolution < 16 || self.resolution % 2 != 0) {
            return Err(LabError::InvalidBackend(format!(
                "grid resolution must be even and at least 16, got {}",
                self.resolution
            )));
        }
        if self.structure_constants.iter().any(|l| !l.is_finite()) {
            return Err(LabError::InvalidBackend("non-finite structure constants".into()));
        }
        Ok(())
    }
}

/// A validated backend together with its discretization.
#[derive(Clone, Debug)]
pub struct Backend {
    desc: BackendDescriptor,
    grid: Option<SpectralGrid>,
}

impl Backend {
    pub fn new(desc: BackendDescriptor) -> Result<Self> {
        desc.validate()?;
        let grid = match desc.kind {
            BackendKind::Homogeneous3 => None,
            BackendKind::Cohom1Torus3 => Some(SpectralGrid::new(desc.resolution, 1)),
            BackendKind::ConformalTorus2 => Some(SpectralGrid::new(desc.resolution, 2)),
        };
        Ok(Self { desc, grid })
    }

    pub fn descriptor(&self) -> &BackendDescriptor {
        &self.desc
    }

    pub fn kind(&self) -> BackendKind {
        self.desc.kind
    }

    pub fn dim(&self) -> usize {
        self.desc.dimension
    }

    pub fn nodes(&self) -> usize {
        self.grid.as_ref().map_or(1, SpectralGrid::len)
    }

    pub fn grid(&self) -> Option<&SpectralGrid> {
        self.grid.as_ref()
    }

    /// Grid spacing `h`; `None` on the single-node backend.
    pub fn spacing(&self) -> Option<f64> {
        self.grid.as_ref().map(SpectralGrid::spacing)
    }

    /// Coordinate measure carried by one node.
    pub fn cell_measure(&self) -> f64 {
        match self.desc.kind {
            BackendKind::Homogeneous3 => HOMOGENEOUS_REFERENCE_VOLUME,
            BackendKind::Cohom1Torus3 => TAU / self.desc.resolution as f64 * TAU * TAU,
            BackendKind::ConformalTorus2 => (TAU / self.desc.resolution as f64).powi(2),
        }
    }

    /// Node coordinates along a coordinate axis (zeros on `Homogeneous3`).
    pub fn coordinate(&self, axis: usize) -> Vec<f64> {
        match &self.grid {
            Some(g) if axis < g.axes() => g.coordinate(axis),
            _ => vec![0.0; self.nodes()],
        }
    }

    /// Whether frame direction `i` differentiates node data at all.
    pub fn active_direction(&self, i: usize) -> bool {
        match self.desc.kind {
            BackendKind::Homogeneous3 => false,
            BackendKind::Cohom1Torus3 => i == 0,
            BackendKind::ConformalTorus2 => i < 2,
        }
    }

    /// `E_i(f)` for a function given by node values.
    pub fn frame_derivative(&self, f: &[f64], i: usize) -> Vec<f64> {
        if !self.active_direction(i) {
            return vec![0.0; f.len()];
        }
        self.grid.as_ref().expect("grid backend").derivative(f, i)
    }

    /// Structure constant `c_ij^k` with `[E_i, E_j] = c_ij^k E_k`.
    pub fn bracket(&self, i: usize, j: usize, k: usize) -> f64 {
        if self.desc.kind != BackendKind::Homogeneous3 {
            return 0.0;
        }
        let l = self.desc.structure_constants;
        // (i, j, k) must be a permutation of (0, 1, 2) with k the output slot.
        if i == j || j == k || i == k {
            return 0.0;
        }
        let sign = if (i + 1) % 3 == j { 1.0 } else { -1.0 };
        sign * l[k]
    }

    /// Exterior derivative in the backend frame.
    ///
    /// `dω(E_J) = Σ_p (-1)^p E_{j_p} ω(E_{J∖j_p}) + Σ_{p<q} (-1)^{p+q} ω([E_{j_p}, E_{j_q}], E_{J∖{j_p,j_q}})`.
    pub fn exterior_d(&self, w: &FormField) -> Result<FormField> {
        let n = self.dim();
        self.check_degree(w.degree)?;
        let nodes = w.nodes();
        let mut out = FormField::zeros(n, w.degree + 1, nodes);
        if w.degree >= n {
            return Ok(out);
        }
        let deriv = self.derivative_cache(w);
        for term in self.d_terms(w.degree) {
            let source = match term.op {
                DOp::Deriv(i) => &deriv[term.source][i],
                DOp::Scale(_) => &w.comps[term.source],
            };
            let factor = match term.op {
                DOp::Deriv(_) => term.sign,
                DOp::Scale(c) => term.sign * c,
            };
            for (o, s) in out.comps[term.target].iter_mut().zip(source) {
                *o += factor * s;
            }
        }
        Ok(out)
    }

    pub(crate) fn check_degree(&self, degree: usize) -> Result<()> {
        if degree > self.dim() {
            Err(LabError::UnsupportedDegree {
                degree,
                dimension: self.dim(),
            })
        } else {
            Ok(())
        }
    }

    fn derivative_cache(&self, w: &FormField) -> Vec<Vec<Vec<f64>>> {
        let n = self.dim();
        w.comps
            .iter()
            .map(|c| (0..n).map(|i| self.frame_derivative(c, i)).collect())
            .collect()
    }

    /// Linear terms of `d` on `k`-forms; shared by `d` and its adjoint.
    pub(crate) fn d_terms(&self, k: usize) -> Vec<DTerm> {
        let n = self.dim();
        let sources = basis_masks(n, k);
        let targets = basis_masks(n, k + 1);
        let index = |m: u32| sources.iter().position(|&s| s == m).expect("source mask");
        let mut terms = Vec::new();
        for (t, &j) in targets.iter().enumerate() {
            let idx: Vec<usize> = (0..n).filter(|b| j & (1 << b) != 0).collect();
            for (p, &jp) in idx.iter().enumerate() {
                if self.active_direction(jp) {
                    terms.push(DTerm {
                        target: t,
                        source: index(j & !(1 << jp)),
                        sign: if p % 2 == 0 { 1.0 } else { -1.0 },
                        op: DOp::Deriv(jp),
                    });
                }
            }
            for p in 0..idx.len() {
                for q in p + 1..idx.len() {
                    let rest = j & !(1 << idx[p]) & !(1 << idx[q]);
                    for l in 0..n {
                        let c = self.bracket(idx[p], idx[q], l);
                        if c == 0.0 || rest & (1 << l) != 0 {
                            continue;
                        }
                        let sign = if (p + q) % 2 == 0 { 1.0 } else { -1.0 };
                        terms.push(DTerm {
                            target: t,
                            source: index(rest | (1 << l)),
                            sign: sign * fields::insertion_sign(l, rest),
                            op: DOp::Scale(c),
                        });
                    }
                }
            }
        }
        terms
    }

    /// Metric as diagonal frame coefficients per node.
    pub fn metric_diagonal(&self, metric: &MetricState) -> Result<Vec<Vec<f64>>> {
        let nodes = self.nodes();
        let diag = match (self.desc.kind, metric) {
            (BackendKind::Homogeneous3, MetricState::Homogeneous3 { x }) => {
                x.iter().map(|&v| vec![v]).collect()
            }
            (BackendKind::Cohom1Torus3, MetricState::Cohom1Torus3 { a, b, c }) => {
                vec![a.clone(), b.clone(), c.clone()]
            }
            (BackendKind::ConformalTorus2, MetricState::ConformalTorus2 { u }) => {
                let e: Vec<f64> = u.iter().map(|v| (2.0 * v).exp()).collect();
                vec![e.clone(), e]
            }
            _ => {
                return Err(LabError::InvalidBackend(format!(
                    "metric does not match backend {:?}",
                    self.desc.kind
                )))
            }
        };
        if diag.iter().any(|d| d.len() != nodes) {
            return Err(LabError::InvalidBackend("metric arrays have the wrong length".into()));
        }
        for d in &diag {
            for (p, &v) in d.iter().enumerate() {
                if !(v > 0.0) || !v.is_finite() {
                    return Err(LabError::DegenerateMetric { node: p, value: v });
                }
            }
        }
        Ok(diag)
    }

    /// Flat metric of the backend (unit frame coefficients).
    pub fn flat_metric(&self) -> MetricState {
        let nodes = self.nodes();
        match self.desc.kind {
            BackendKind::Homogeneous3 => MetricState::Homogeneous3 { x: [1.0; 3] },
            BackendKind::Cohom1Torus3 => MetricState::Cohom1Torus3 {
                a: vec![1.0; nodes],
                b: vec![1.0; nodes],
                c: vec![1.0; nodes],
            },
            BackendKind::ConformalTorus2 => MetricState::ConformalTorus2 { u: vec![0.0; nodes] },
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub(crate) enum DOp {
    Deriv(usize),
    Scale(f64),
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct DTerm {
    pub target: usize,
    pub source: usize,
    pub sign: f64,
    pub op: DOp,
}

/// Metric data for one backend.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum MetricState {
    Homogeneous3 { x: [f64; 3] },
    Cohom1Torus3 { a: Vec<f64>, b: Vec<f64>, c: Vec<f64> },
    ConformalTorus2 { u: Vec<f64> },
}

impl MetricState {
    /// Scale the metric by a positive constant.
    pub fn scaled(&self, s: f64) -> MetricState {
        match self {
            MetricState::Homogeneous3 { x } => MetricState::Homogeneous3 {
                x: [x[0] * s, x[1] * s, x[2] * s],
            },
            MetricState::Cohom1Torus3 { a, b, c } => MetricState::Cohom1Torus3 {
                a: a.iter().map(|v| v * s).collect(),
                b: b.iter().map(|v| v * s).collect(),
                c: c.iter().map(|v| v * s).collect(),
            },
            MetricState::ConformalTorus2 { u } => MetricState::ConformalTorus2 {
                u: u.iter().map(|v| v + 0.5 * s.ln()).collect(),
            },
        }
    }
}

/// Ricci tensor and scalar curvature.
pub fn curvature(metric: &MetricState, backend: &Backend) -> Result<(SymTensorField, ScalarField)> {
    let geo = Geometry::new(backend, metric)?;
    Ok((geo.ricci().clone(), geo.scalar_curvature()))
}

/// `H²(X,Y) = ⟨i_X H, i_Y H⟩` with full contraction.
pub fn h_square(h: &FormField, metric: &MetricState, backend: &Backend) -> Result<SymTensorField> {
    if h.degree == 0 || h.degree > backend.dim() || h.dim != backend.dim() {
        return Err(LabError::UnsupportedDegree {
            degree: h.degree,
            dimension: backend.dim(),
        });
    }
    let geo = Geometry::new(backend, metric)?;
    Ok(h.square(geo.inverse_metric()))
}

pub fn exterior_d(w: &FormField, backend: &Backend) -> Result<FormField> {
    backend.exterior_d(w)
}

pub fn codifferential(w: &FormField, metric: &MetricState, backend: &Backend) -> Result<FormField> {
    Geometry::new(backend, metric)?.codifferential(w)
}

pub fn hodge_laplacian(w: &FormField, metric: &MetricState, backend: &Backend) -> Result<FormField> {
    Geometry::new(backend, metric)?.hodge_laplacian(w)
}

pub fn laplace_beltrami(s: &[f64], metric: &MetricState, backend: &Backend) -> Result<ScalarField> {
    Ok(Geometry::new(backend, metric)?.laplacian(s))
}

/// `i_X H` for a vector field given by frame components.
pub fn interior_product(vector: &[Vec<f64>], h: &FormField) -> FormField {
    h.interior(vector)
}

pub fn lie_metric(alpha: &FormField, metric: &MetricState, backend: &Backend) -> Result<SymTensorField> {
    Geometry::new(backend, metric)?.lie_metric(alpha)
}

/// `∫ s e^{-w} dV_g`.
pub fn weighted_integral(s: &[f64], w: &[f64], metric: &MetricState, backend: &Backend) -> Result<f64> {
    Ok(Geometry::new(backend, metric)?.weighted_integral(s, w))
}
