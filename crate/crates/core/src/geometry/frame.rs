//! Frame geometry of one metric: connection, curvature and the metric-
//! dependent operators of exterior calculus.

use super::fields::{inverse_weight, sym_index, FormField, SymTensorField};
use super::{Backend, DOp, MetricState};
use crate::error::{LabError, Result};

/// Connection and curvature of a diagonal frame metric, computed once and
/// reused by every operator that needs the metric.
#[derive(Clone, Debug)]
pub struct Geometry {
    backend: Backend,
    g: Vec<Vec<f64>>,
    ginv: Vec<Vec<f64>>,
    /// `√det g` relative to the coordinate or reference measure.
    vol: Vec<f64>,
    /// `Γ^k_ij` at `(i * n + j) * n + k`, with `∇_{E_i} E_j = Γ^k_ij E_k`.
    gamma: Vec<Vec<f64>>,
    ricci: SymTensorField,
}

impl Geometry {
    pub fn new(backend: &Backend, metric: &MetricState) -> Result<Self> {
        let g = backend.metric_diagonal(metric)?;
        Ok(Self::from_diagonal(backend, g))
    }

    /// Build from diagonal frame coefficients already known to be positive.
    pub fn from_diagonal(backend: &Backend, g: Vec<Vec<f64>>) -> Self {
        let n = backend.dim();
        let nodes = g[0].len();
        let ginv: Vec<Vec<f64>> = g.iter().map(|d| d.iter().map(|v| 1.0 / v).collect()).collect();
        let vol: Vec<f64> = (0..nodes)
            .map(|p| (0..n).map(|i| g[i][p]).product::<f64>().sqrt())
            .collect();
        let dg: Vec<Vec<Vec<f64>>> = (0..n)
            .map(|i| (0..n).map(|k| backend.frame_derivative(&g[k], i)).collect())
            .collect();
        let idx = |i: usize, j: usize, k: usize| (i * n + j) * n + k;
        let mut gamma = vec![vec![0.0; nodes]; n * n * n];
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    let cij = backend.bracket(i, j, k);
                    let cik = backend.bracket(i, k, j);
                    let cjk = backend.bracket(j, k, i);
                    let out = &mut gamma[idx(i, j, k)];
                    for p in 0..nodes {
                        let mut lower = 0.0;
                        if j == k {
                            lower += dg[i][j][p];
                        }
                        if i == k {
                            lower += dg[j][i][p];
                        }
                        if i == j {
                            lower -= dg[k][i][p];
                        }
                        lower += cij * g[k][p] - cik * g[j][p] - cjk * g[i][p];
                        out[p] = 0.5 * lower * ginv[k][p];
                    }
                }
            }
        }
        let ricci = Self::ricci_from(backend, &gamma, n, nodes);
        Self {
            backend: backend.clone(),
            g,
            ginv,
            vol,
            gamma,
            ricci,
        }
    }

    fn ricci_from(backend: &Backend, gamma: &[Vec<f64>], n: usize, nodes: usize) -> SymTensorField {
        let idx = |i: usize, j: usize, k: usize| (i * n + j) * n + k;
        // dgamma[d][ijk] = E_d(Γ^k_ij); only active directions are nonzero.
        let dgamma: Vec<Vec<Vec<f64>>> = (0..n)
            .map(|d| {
                if backend.active_direction(d) {
                    gamma.iter().map(|c| backend.frame_derivative(c, d)).collect()
                } else {
                    Vec::new()
                }
            })
            .collect();
        let dgam = |d: usize, i: usize, j: usize, k: usize, p: usize| -> f64 {
            if dgamma[d].is_empty() {
                0.0
            } else {
                dgamma[d][idx(i, j, k)][p]
            }
        };
        let mut rc = SymTensorField::zeros(n, nodes);
        for j in 0..n {
            for k in j..n {
                let mut acc = vec![0.0; nodes];
                for (p, a) in acc.iter_mut().enumerate() {
                    let val = |jj: usize, kk: usize| -> f64 {
                        let mut s = 0.0;
                        for i in 0..n {
                            s += dgam(i, jj, kk, i, p) - dgam(jj, i, kk, i, p);
                            for l in 0..n {
                                s += gamma[idx(jj, kk, l)][p] * gamma[idx(i, l, i)][p]
                                    - gamma[idx(i, kk, l)][p] * gamma[idx(jj, l, i)][p]
                                    - backend.bracket(i, jj, l) * gamma[idx(l, kk, i)][p];
                            }
                        }
                        s
                    };
                    *a = 0.5 * (val(j, k) + val(k, j));
                }
                rc.comps[sym_index(n, j, k)] = acc;
            }
        }
        rc
    }

    pub fn backend(&self) -> &Backend {
        &self.backend
    }

    pub fn dim(&self) -> usize {
        self.backend.dim()
    }

    pub fn nodes(&self) -> usize {
        self.vol.len()
    }

    pub fn metric_diagonal(&self) -> &[Vec<f64>] {
        &self.g
    }

    pub fn inverse_metric(&self) -> &[Vec<f64>] {
        &self.ginv
    }

    pub fn volume_density(&self) -> &[f64] {
        &self.vol
    }

    pub fn metric_tensor(&self) -> SymTensorField {
        SymTensorField::from_diagonal(&self.g)
    }

    /// `Γ^k_ij` node values.
    pub fn christoffel(&self, i: usize, j: usize, k: usize) -> &[f64] {
        let n = self.dim();
        &self.gamma[(i * n + j) * n + k]
    }

    pub fn ricci(&self) -> &SymTensorField {
        &self.ricci
    }

    pub fn scalar_curvature(&self) -> Vec<f64> {
        self.ricci.trace(&self.ginv)
    }

    pub fn derivative(&self, f: &[f64], i: usize) -> Vec<f64> {
        self.backend.frame_derivative(f, i)
    }

    /// `df` as a 1-form.
    pub fn gradient_form(&self, f: &[f64]) -> FormField {
        let n = self.dim();
        FormField {
            dim: n,
            degree: 1,
            comps: (0..n).map(|i| self.derivative(f, i)).collect(),
        }
    }

    /// Frame components of the metric dual vector of a 1-form.
    pub fn sharp(&self, alpha: &FormField) -> Vec<Vec<f64>> {
        alpha
            .comps
            .iter()
            .zip(&self.ginv)
            .map(|(a, gi)| a.iter().zip(gi).map(|(x, y)| x * y).collect())
            .collect()
    }

    /// Frame components of `∇f`.
    pub fn gradient_vector(&self, f: &[f64]) -> Vec<Vec<f64>> {
        self.sharp(&self.gradient_form(f))
    }

    /// `|∇f|²`.
    pub fn gradient_norm_sq(&self, f: &[f64]) -> Vec<f64> {
        self.gradient_form(f).norm_sq(&self.ginv)
    }

    /// `⟨∇f, ∇h⟩`.
    pub fn gradient_dot(&self, f: &[f64], h: &[f64]) -> Vec<f64> {
        self.gradient_form(f).pairing(&self.gradient_form(h), &self.ginv)
    }

    /// `∇²f_ij = E_iE_j f − Γ^k_ij E_k f`.
    pub fn hessian(&self, f: &[f64]) -> SymTensorField {
        self.covariant_one_form(&self.gradient_form(f))
    }

    /// Symmetrized covariant derivative `½(∇_iα_j + ∇_jα_i)`.
    fn covariant_one_form(&self, alpha: &FormField) -> SymTensorField {
        let n = self.dim();
        let nodes = self.nodes();
        let da: Vec<Vec<Vec<f64>>> = (0..n)
            .map(|i| (0..n).map(|j| self.derivative(&alpha.comps[j], i)).collect())
            .collect();
        let mut out = SymTensorField::zeros(n, nodes);
        for i in 0..n {
            for j in i..n {
                let t = out.component_mut(i, j);
                for (p, v) in t.iter_mut().enumerate() {
                    let mut s = 0.5 * (da[i][j][p] + da[j][i][p]);
                    for k in 0..n {
                        s -= 0.5
                            * (self.christoffel(i, j, k)[p] + self.christoffel(j, i, k)[p])
                            * alpha.comps[k][p];
                    }
                    *v = s;
                }
            }
        }
        out
    }

    /// `L_{α♯} g = ∇_iα_j + ∇_jα_i`.
    pub fn lie_metric(&self, alpha: &FormField) -> Result<SymTensorField> {
        if alpha.degree != 1 {
            return Err(LabError::UnsupportedDegree {
                degree: alpha.degree,
                dimension: self.dim(),
            });
        }
        Ok(self.covariant_one_form(alpha).scaled(2.0))
    }

    /// Adjoint of `d` under `Σ cell · √det g · Σ_I ω_I η_I g^{II}`.
    pub fn codifferential(&self, eta: &FormField) -> Result<FormField> {
        let n = self.dim();
        self.backend.check_degree(eta.degree)?;
        let nodes = self.nodes();
        if eta.degree == 0 {
            return Ok(FormField::zeros(n, 0, nodes));
        }
        let k = eta.degree - 1;
        let src_masks = super::basis_masks(n, k);
        let tgt_masks = eta.masks();
        let weight = |mask: u32| -> Vec<f64> {
            (0..nodes)
                .map(|p| self.vol[p] * inverse_weight(mask, &self.ginv, p))
                .collect()
        };
        let src_weight: Vec<Vec<f64>> = src_masks.iter().map(|&m| weight(m)).collect();
        let weighted_eta: Vec<Vec<f64>> = tgt_masks
            .iter()
            .enumerate()
            .map(|(c, &m)| weight(m).iter().zip(&eta.comps[c]).map(|(w, e)| w * e).collect())
            .collect();
        let mut acc = vec![vec![0.0; nodes]; src_masks.len()];
        for term in self.backend.d_terms(k) {
            match term.op {
                DOp::Deriv(i) => {
                    let d = self.derivative(&weighted_eta[term.target], i);
                    for (a, v) in acc[term.source].iter_mut().zip(&d) {
                        *a -= term.sign * v;
                    }
                }
                DOp::Scale(c) => {
                    for (a, v) in acc[term.source].iter_mut().zip(&weighted_eta[term.target]) {
                        *a += term.sign * c * v;
                    }
                }
            }
        }
        for (a, w) in acc.iter_mut().zip(&src_weight) {
            for (x, y) in a.iter_mut().zip(w) {
                *x /= y;
            }
        }
        Ok(FormField {
            dim: n,
            degree: k,
            comps: acc,
        })
    }

    /// `Δ_d = -(dd* + d*d)`.
    pub fn hodge_laplacian(&self, w: &FormField) -> Result<FormField> {
        let n = self.dim();
        self.backend.check_degree(w.degree)?;
        let mut out = FormField::zeros(n, w.degree, w.nodes());
        if w.degree > 0 {
            let a = self.backend.exterior_d(&self.codifferential(w)?)?;
            out.add_scaled(&a, -1.0);
        }
        if w.degree < n {
            let b = self.codifferential(&self.backend.exterior_d(w)?)?;
            out.add_scaled(&b, -1.0);
        }
        Ok(out)
    }

    /// `Δf = -d*df = tr ∇²f`.
    pub fn laplacian(&self, f: &[f64]) -> Vec<f64> {
        let d = self.gradient_form(f);
        self.codifferential(&d)
            .expect("1-forms are always supported")
            .comps
            .remove(0)
            .into_iter()
            .map(|v| -v)
            .collect()
    }

    /// `div β = -d*β` for a 1-form.
    pub fn divergence(&self, beta: &FormField) -> Vec<f64> {
        self.codifferential(beta)
            .expect("1-forms are always supported")
            .comps
            .remove(0)
            .into_iter()
            .map(|v| -v)
            .collect()
    }

    /// `(div S)_j = g^{ii} ∇_i S_ij`.
    pub fn divergence_sym(&self, s: &SymTensorField) -> FormField {
        let n = self.dim();
        let nodes = self.nodes();
        let mut out = FormField::zeros(n, 1, nodes);
        for j in 0..n {
            for i in 0..n {
                let ds = self.derivative(s.component(i, j), i);
                for p in 0..nodes {
                    let mut v = ds[p];
                    for l in 0..n {
                        v -= self.christoffel(i, i, l)[p] * s.component(l, j)[p]
                            + self.christoffel(i, j, l)[p] * s.component(i, l)[p];
                    }
                    out.comps[j][p] += self.ginv[i][p] * v;
                }
            }
        }
        out
    }

    /// `∫ s dV_g`.
    pub fn integral(&self, s: &[f64]) -> f64 {
        let cell = self.backend.cell_measure();
        s.iter().zip(&self.vol).map(|(a, v)| a * v).sum::<f64>() * cell
    }

    /// `∫ s e^{-w} dV_g`.
    pub fn weighted_integral(&self, s: &[f64], w: &[f64]) -> f64 {
        let cell = self.backend.cell_measure();
        s.iter()
            .zip(w)
            .zip(&self.vol)
            .map(|((a, b), v)| a * (-b).exp() * v)
            .sum::<f64>()
            * cell
    }

    pub fn volume(&self) -> f64 {
        self.integral(&vec![1.0; self.nodes()])
    }

    /// Global standard pairing `∫ Σ_I ω_I η_I g^{II} dV_g`.
    pub fn form_inner(&self, w: &FormField, eta: &FormField) -> f64 {
        self.integral(&w.pairing(eta, &self.ginv))
    }
}
