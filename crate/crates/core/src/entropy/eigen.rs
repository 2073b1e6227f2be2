use super::{generalized_scalar, MonitorSeries};
use crate::error::{LabError, Result};
use crate::flow::{Snapshot, Trajectory};
use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

const EIGEN_TOL: f64 = 1e-9;
const MAX_OUTER: usize = 400;

/// Lowest eigenpair of `ℒ = -4Δ + 4∇φ + R^{H,φ}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EigenReport {
    pub lambda: f64,
    /// Normalized so that `∫ w² e^{-φ} dV = 1` and `∫ w e^{-φ} dV > 0`.
    pub eigenfunction: Vec<f64>,
    /// `‖ℒw - λw‖` in the weighted norm.
    pub residual: f64,
    pub iterations: usize,
}

/// `∫ (4|∇w|² + R^{H,φ} w²) e^{-φ} dV`.
pub fn lambda_quadratic_form(snap: &Snapshot, w: &[f64]) -> f64 {
    let r = generalized_scalar(snap, &snap.phi);
    let g2 = snap.geo.gradient_norm_sq(w);
    let integrand: Vec<f64> = (0..w.len()).map(|p| 4.0 * g2[p] + r[p] * w[p] * w[p]).collect();
    snap.geo.weighted_integral(&integrand, &snap.phi)
}

/// `c e^{w} d*(e^{-w} d·) + V`, self-adjoint for `e^{-w} dV`.
struct Operator<'a> {
    snap: &'a Snapshot,
    weight_fn: Vec<f64>,
    coef: f64,
    potential: Vec<f64>,
    weight: Vec<f64>,
}

impl<'a> Operator<'a> {
    fn new(snap: &'a Snapshot, weight_fn: &[f64], coef: f64, potential: Vec<f64>) -> Self {
        let geo = &snap.geo;
        let cell = geo.backend().cell_measure();
        let weight = (0..geo.nodes())
            .map(|p| geo.volume_density()[p] * cell * (-weight_fn[p]).exp())
            .collect();
        Self {
            snap,
            weight_fn: weight_fn.to_vec(),
            coef,
            potential,
            weight,
        }
    }

    fn apply(&self, w: &[f64]) -> Vec<f64> {
        let geo = &self.snap.geo;
        let mut dw = geo.gradient_form(w);
        for c in dw.comps.iter_mut() {
            for (v, e) in c.iter_mut().zip(&self.weight_fn) {
                *v *= (-e).exp();
            }
        }
        let div = geo.codifferential(&dw).expect("1-forms are supported").comps.remove(0);
        (0..w.len())
            .map(|p| self.coef * self.weight_fn[p].exp() * div[p] + self.potential[p] * w[p])
            .collect()
    }

    /// Modified Gram-Schmidt in the weighted inner product; drops columns
    /// that become dependent.
    fn orthonormalize(&self, basis: &mut Vec<Vec<f64>>) {
        let mut out: Vec<Vec<f64>> = Vec::with_capacity(basis.len());
        for mut v in basis.drain(..) {
            for _ in 0..2 {
                for q in &out {
                    let c = self.dot(q, &v);
                    v.iter_mut().zip(q).for_each(|(x, y)| *x -= c * y);
                }
            }
            let s = self.dot(&v, &v).sqrt();
            if s > 1e-10 {
                v.iter_mut().for_each(|x| *x /= s);
                out.push(v);
            }
        }
        *basis = out;
    }

    fn dot(&self, a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).zip(&self.weight).map(|((x, y), m)| x * y * m).sum()
    }

    /// Conjugate gradients for `(A - σ)x = b` in the weighted inner product.
    fn solve_shifted(&self, sigma: f64, b: &[f64], x0: &[f64]) -> Vec<f64> {
        let n = b.len();
        let mut x = x0.to_vec();
        let ax = self.apply(&x);
        let mut r: Vec<f64> = (0..n).map(|p| b[p] - ax[p] + sigma * x[p]).collect();
        let mut d = r.clone();
        let mut rr = self.dot(&r, &r);
        let target = 1e-28 * self.dot(b, b);
        for _ in 0..20 * n.max(10) {
            if rr <= target {
                break;
            }
            let ad = self.apply(&d);
            let q: Vec<f64> = (0..n).map(|p| ad[p] - sigma * d[p]).collect();
            let alpha = rr / self.dot(&d, &q);
            for p in 0..n {
                x[p] += alpha * d[p];
                r[p] -= alpha * q[p];
            }
            let next = self.dot(&r, &r);
            let beta = next / rr;
            rr = next;
            for p in 0..n {
                d[p] = r[p] + beta * d[p];
            }
        }
        x
    }

    /// Shifted subspace (block inverse) iteration with Rayleigh-Ritz and CG
    /// inner solves. `pick` selects the wanted Ritz index from the sorted
    /// Ritz values.
    fn subspace(&self, block: usize, pick: impl Fn(&[f64]) -> Option<usize>) -> Result<EigenReport> {
        let nodes = self.weight.len();
        let block = block.min(nodes);
        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
        let mut basis: Vec<Vec<f64>> = (0..block)
            .map(|c| {
                if c == 0 {
                    vec![1.0; nodes]
                } else {
                    (0..nodes).map(|_| rng.random::<f64>() - 0.5).collect()
                }
            })
            .collect();
        let sigma = self.potential.iter().copied().fold(f64::INFINITY, f64::min) - 1.0;
        let mut residual = f64::INFINITY;
        for it in 0..=MAX_OUTER {
            self.orthonormalize(&mut basis);
            let images: Vec<Vec<f64>> = basis.iter().map(|b| self.apply(b)).collect();
            let b = basis.len();
            let h = DMatrix::from_fn(b, b, |i, j| {
                0.5 * (self.dot(&basis[i], &images[j]) + self.dot(&basis[j], &images[i]))
            });
            let eig = SymmetricEigen::new(h);
            let mut order: Vec<usize> = (0..b).collect();
            order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
            let rotate = |vs: &[Vec<f64>], col: usize| -> Vec<f64> {
                let mut out = vec![0.0; nodes];
                for (r, v) in vs.iter().enumerate() {
                    let c = eig.eigenvectors[(r, col)];
                    for (o, x) in out.iter_mut().zip(v) {
                        *o += c * x;
                    }
                }
                out
            };
            let ritz: Vec<Vec<f64>> = order.iter().map(|&c| rotate(&basis, c)).collect();
            let values: Vec<f64> = order.iter().map(|&c| eig.eigenvalues[c]).collect();
            if let Some(k) = pick(&values) {
                let lambda = values[k];
                let aw = rotate(&images, order[k]);
                let res: Vec<f64> = (0..nodes).map(|p| aw[p] - lambda * ritz[k][p]).collect();
                residual = self.dot(&res, &res).sqrt();
                if residual <= EIGEN_TOL {
                    let mut w = ritz[k].clone();
                    let sign = if self.dot(&w, &vec![1.0; nodes]) < 0.0 { -1.0 } else { 1.0 };
                    let s = self.dot(&w, &w).sqrt();
                    w.iter_mut().for_each(|v| *v *= sign / s);
                    return Ok(EigenReport {
                        lambda,
                        eigenfunction: w,
                        residual,
                        iterations: it,
                    });
                }
            }
            basis = ritz
                .iter()
                .zip(&values)
                .map(|(v, &e)| {
                    let guess: Vec<f64> = v.iter().map(|x| x / (e - sigma)).collect();
                    self.solve_shifted(sigma, v, &guess)
                })
                .collect();
        }
        Err(LabError::EigenFail {
            residual,
            iterations: MAX_OUTER,
        })
    }
}

/// Block width of the subspace iteration. The spectral first derivative
/// annihilates Nyquist modes, which leaves a few discrete eigenvalues close
/// above the ground state; the block absorbs them.
const BLOCK: usize = 8;
/// The gap solver must also hold the kernel (constants and Nyquist modes)
/// and the multiplicity of the first nonzero eigenvalue.
const GAP_BLOCK: usize = 12;
/// Ritz values below this count as kernel.
const KERNEL_TOL: f64 = 1e-6;

/// Smallest eigenvalue of `ℒ`.
pub fn lambda_eig(snap: &Snapshot) -> Result<EigenReport> {
    let op = Operator::new(snap, &snap.phi, 4.0, generalized_scalar(snap, &snap.phi));
    op.subspace(BLOCK, |_| Some(0))
}

/// First nonzero eigenvalue `μ₁` of the drift Laplacian `-Δ + ∇f·∇`,
/// self-adjoint for `e^{-f} dV`.
pub fn drift_laplacian_gap(snap: &Snapshot, f: &[f64]) -> Result<EigenReport> {
    if snap.nodes() < 2 {
        return Err(LabError::Unsupported("invariant functions have no nonzero spectrum".into()));
    }
    let op = Operator::new(snap, f, 1.0, vec![0.0; snap.nodes()]);
    op.subspace(GAP_BLOCK, |vals| vals.iter().position(|v| *v > KERNEL_TOL))
}

/// `λ(t)` at every `stride`-th trajectory node, with a nondecreasing flag at
/// slack `tol`.
pub fn lambda_series(traj: &Trajectory, stride: usize, tol: f64) -> Result<MonitorSeries> {
    let mut series = MonitorSeries::new()
        .with_meta("config_hash", traj.config_hash())
        .with_meta("monitor", "lambda");
    let mut idx: Vec<usize> = (0..traj.len()).step_by(stride.max(1)).collect();
    if idx.last() != Some(&(traj.len() - 1)) {
        idx.push(traj.len() - 1);
    }
    for i in idx {
        let rep = lambda_eig(&traj.snapshot(i)?)?;
        series.push(traj.times()[i], &[("lambda", rep.lambda), ("lambda_residual", rep.residual)]);
    }
    let ok = series.nondecreasing("lambda", tol);
    series.set_flag("lambda_nondecreasing", ok);
    Ok(series)
}
