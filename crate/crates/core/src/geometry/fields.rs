//! Field containers: differential forms and symmetric 2-tensors stored as
//! one array of node values per independent component.
//!
//! Forms store only the components `ω_I` for strictly increasing index sets
//! `I`, encoded as bitmasks. All norms returned here are full tensor
//! contractions (no `1/k!`), so `tr_g H² = |H|²` holds for every degree.

use serde::{Deserialize, Serialize};

/// Node values of a scalar function.
pub type ScalarField = Vec<f64>;

pub(crate) fn factorial(k: usize) -> f64 {
    (1..=k).map(|i| i as f64).product()
}

/// Index sets of size `degree` in `{0, .., dim-1}` in lexicographic order.
pub fn basis_masks(dim: usize, degree: usize) -> Vec<u32> {
    fn rec(start: usize, dim: usize, left: usize, acc: u32, out: &mut Vec<u32>) {
        if left == 0 {
            out.push(acc);
            return;
        }
        for i in start..dim {
            rec(i + 1, dim, left - 1, acc | (1 << i), out);
        }
    }
    let mut out = Vec::new();
    if degree <= dim {
        rec(0, dim, degree, 0, &mut out);
    }
    out
}

/// Sign of `e^i ∧ e^A = ±e^{A∪{i}}` for `i ∉ A`.
pub(crate) fn insertion_sign(i: usize, mask: u32) -> f64 {
    if (mask & ((1u32 << i) - 1)).count_ones() % 2 == 0 {
        1.0
    } else {
        -1.0
    }
}

pub(crate) fn mask_indices(mask: u32) -> Vec<usize> {
    (0..32).filter(|i| mask & (1 << i) != 0).collect()
}

/// Product of `g^{ii}` over the index set.
pub(crate) fn inverse_weight(mask: u32, ginv: &[Vec<f64>], node: usize) -> f64 {
    mask_indices(mask).iter().map(|&i| ginv[i][node]).product()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FormField {
    pub dim: usize,
    pub degree: usize,
    /// One array per basis element of `basis_masks(dim, degree)`.
    pub comps: Vec<Vec<f64>>,
}

impl FormField {
    pub fn zeros(dim: usize, degree: usize, nodes: usize) -> Self {
        let count = basis_masks(dim, degree).len();
        Self {
            dim,
            degree,
            comps: vec![vec![0.0; nodes]; count],
        }
    }

    pub fn nodes(&self) -> usize {
        self.comps.first().map_or(0, Vec::len)
    }

    pub fn masks(&self) -> Vec<u32> {
        basis_masks(self.dim, self.degree)
    }

    pub fn index_of(&self, mask: u32) -> Option<usize> {
        self.masks().iter().position(|&m| m == mask)
    }

    pub fn component(&self, mask: u32) -> &[f64] {
        let i = self.index_of(mask).expect("mask of wrong degree");
        &self.comps[i]
    }

    pub fn component_mut(&mut self, mask: u32) -> &mut Vec<f64> {
        let i = self.index_of(mask).expect("mask of wrong degree");
        &mut self.comps[i]
    }

    /// `ω(E_i, E_A)` at `node`, i.e. the signed component after inserting `i`.
    pub fn eval_with(&self, i: usize, rest: u32, node: usize) -> f64 {
        if rest & (1 << i) != 0 {
            return 0.0;
        }
        let mask = rest | (1 << i);
        match self.index_of(mask) {
            Some(c) => insertion_sign(i, rest) * self.comps[c][node],
            None => 0.0,
        }
    }

    pub fn add_scaled(&mut self, other: &FormField, s: f64) {
        assert_eq!(self.degree, other.degree);
        for (a, b) in self.comps.iter_mut().zip(&other.comps) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += s * y;
            }
        }
    }

    pub fn scaled(&self, s: f64) -> FormField {
        let mut out = self.clone();
        for c in &mut out.comps {
            for x in c.iter_mut() {
                *x *= s;
            }
        }
        out
    }

    pub fn max_abs(&self) -> f64 {
        self.comps
            .iter()
            .flat_map(|c| c.iter())
            .fold(0.0_f64, |m, x| m.max(x.abs()))
    }

    /// Pointwise standard inner product `Σ_I ω_I η_I g^{II}` (the pairing that
    /// makes the codifferential the adjoint of `d`).
    pub fn pairing(&self, other: &FormField, ginv: &[Vec<f64>]) -> Vec<f64> {
        assert_eq!(self.degree, other.degree);
        let masks = self.masks();
        (0..self.nodes())
            .map(|p| {
                masks
                    .iter()
                    .enumerate()
                    .map(|(c, &m)| self.comps[c][p] * other.comps[c][p] * inverse_weight(m, ginv, p))
                    .sum()
            })
            .collect()
    }

    /// Full-contraction norm `|ω|² = ω_{i1..ik} ω^{i1..ik}`.
    pub fn norm_sq(&self, ginv: &[Vec<f64>]) -> Vec<f64> {
        let k = factorial(self.degree);
        self.pairing(self, ginv).into_iter().map(|v| k * v).collect()
    }

    /// `H²(X, Y) = ⟨i_X H, i_Y H⟩` with full contraction over the remaining
    /// `k - 1` slots.
    pub fn square(&self, ginv: &[Vec<f64>]) -> SymTensorField {
        let n = self.dim;
        let nodes = self.nodes();
        let mut out = SymTensorField::zeros(n, nodes);
        if self.degree == 0 {
            return out;
        }
        let rests = basis_masks(n, self.degree - 1);
        let kf = factorial(self.degree - 1);
        for i in 0..n {
            for j in i..n {
                let target = out.component_mut(i, j);
                for (p, t) in target.iter_mut().enumerate() {
                    let mut acc = 0.0;
                    for &a in &rests {
                        if a & (1 << i) != 0 || a & (1 << j) != 0 {
                            continue;
                        }
                        acc += self.eval_with(i, a, p) * self.eval_with(j, a, p) * inverse_weight(a, ginv, p);
                    }
                    *t = kf * acc;
                }
            }
        }
        out
    }

    /// Interior product with a vector field given by its frame components.
    pub fn interior(&self, vector: &[Vec<f64>]) -> FormField {
        let n = self.dim;
        let nodes = self.nodes();
        if self.degree == 0 {
            return FormField::zeros(n, 0, nodes);
        }
        let mut out = FormField::zeros(n, self.degree - 1, nodes);
        for (c, &a) in out.masks().iter().enumerate() {
            for i in 0..n {
                if a & (1 << i) != 0 {
                    continue;
                }
                for p in 0..nodes {
                    out.comps[c][p] += vector[i][p] * self.eval_with(i, a, p);
                }
            }
        }
        out
    }

    /// One-form `β^A H_{jA}` (full contraction over `k - 1` slots) for a
    /// `(k-1)`-form `β`.
    pub fn contract_lower(&self, beta: &FormField, ginv: &[Vec<f64>]) -> FormField {
        assert_eq!(beta.degree + 1, self.degree);
        let n = self.dim;
        let nodes = self.nodes();
        let mut out = FormField::zeros(n, 1, nodes);
        let kf = factorial(beta.degree);
        for (bc, &a) in beta.masks().iter().enumerate() {
            for j in 0..n {
                for p in 0..nodes {
                    out.comps[j][p] +=
                        kf * beta.comps[bc][p] * self.eval_with(j, a, p) * inverse_weight(a, ginv, p);
                }
            }
        }
        out
    }
}

/// Symmetric 2-tensor field; stores the upper triangle `i <= j`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SymTensorField {
    pub dim: usize,
    pub comps: Vec<Vec<f64>>,
}

pub(crate) fn sym_index(n: usize, i: usize, j: usize) -> usize {
    let (i, j) = if i <= j { (i, j) } else { (j, i) };
    i * n - i * (i + 1) / 2 + j
}

impl SymTensorField {
    pub fn zeros(dim: usize, nodes: usize) -> Self {
        Self {
            dim,
            comps: vec![vec![0.0; nodes]; dim * (dim + 1) / 2],
        }
    }

    pub fn nodes(&self) -> usize {
        self.comps.first().map_or(0, Vec::len)
    }

    pub fn component(&self, i: usize, j: usize) -> &[f64] {
        &self.comps[sym_index(self.dim, i, j)]
    }

    pub fn component_mut(&mut self, i: usize, j: usize) -> &mut Vec<f64> {
        let k = sym_index(self.dim, i, j);
        &mut self.comps[k]
    }

    /// The diagonal metric itself as a tensor (`g_ij = δ_ij g_ii`).
    pub fn from_diagonal(diag: &[Vec<f64>]) -> Self {
        let n = diag.len();
        let mut out = Self::zeros(n, diag[0].len());
        for (i, d) in diag.iter().enumerate() {
            out.component_mut(i, i).clone_from(d);
        }
        out
    }

    pub fn add_scaled(&mut self, other: &SymTensorField, s: f64) {
        for (a, b) in self.comps.iter_mut().zip(&other.comps) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += s * y;
            }
        }
    }

    pub fn scaled(&self, s: f64) -> SymTensorField {
        let mut out = self.clone();
        for c in &mut out.comps {
            for x in c.iter_mut() {
                *x *= s;
            }
        }
        out
    }

    pub fn trace(&self, ginv: &[Vec<f64>]) -> Vec<f64> {
        (0..self.nodes())
            .map(|p| (0..self.dim).map(|i| self.component(i, i)[p] * ginv[i][p]).sum())
            .collect()
    }

    /// `|S|² = S_ij S_kl g^ik g^jl` for a diagonal metric.
    pub fn norm_sq(&self, ginv: &[Vec<f64>]) -> Vec<f64> {
        let n = self.dim;
        (0..self.nodes())
            .map(|p| {
                let mut acc = 0.0;
                for i in 0..n {
                    for j in 0..n {
                        let s = self.component(i, j)[p];
                        acc += s * s * ginv[i][p] * ginv[j][p];
                    }
                }
                acc
            })
            .collect()
    }

    pub fn max_abs(&self) -> f64 {
        self.comps
            .iter()
            .flat_map(|c| c.iter())
            .fold(0.0_f64, |m, x| m.max(x.abs()))
    }
}
