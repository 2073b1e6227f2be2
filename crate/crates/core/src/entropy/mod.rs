//! Curvature and entropy monitors, residual certifiers for the evolution
//! identities, and the λ eigenvalue.

mod eigen;
mod nash;
mod residuals;

pub use eigen::{drift_laplacian_gap, lambda_eig, lambda_quadratic_form, lambda_series, EigenReport};
pub use nash::{nash_entropy, nash_relations_residual, perelman_entropy, perelman_entropy_split, NashReport};
pub use residuals::{
    energy_density_residual, ggrf_scalar_residual, harnack_check, heat_kernel_inequality,
    oneform_scalar_residual, scalar_extrema_series, scalar_monotonicity_residual, shrinker_residual,
    sup_monotonicity, HarnackOptions, HeatKernelBound, MonotoneChannel,
};

use crate::error::{LabError, Result};
use crate::flow::Snapshot;
use crate::geometry::{FormField, SymTensorField};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// A tensor of the form `sym + skew` split into its symmetric part and a
/// list of antisymmetric pieces. The skew contribution to the norm is
/// `-½ Σ β` for each listed form `β`.
#[derive(Clone, Debug)]
pub struct SplitTensor {
    pub sym: SymTensorField,
    pub skew: Vec<FormField>,
}

impl SplitTensor {
    /// `|sym - c g|² + ¼ Σ |β|²`.
    pub fn norm_sq_shifted(&self, snap: &Snapshot, c: f64) -> Vec<f64> {
        let ginv = snap.geo.inverse_metric();
        let mut s = self.sym.clone();
        if c != 0.0 {
            s.add_scaled(&snap.geo.metric_tensor(), -c);
        }
        let mut out = s.norm_sq(ginv);
        for b in &self.skew {
            for (o, v) in out.iter_mut().zip(b.norm_sq(ginv)) {
                *o += 0.25 * v;
            }
        }
        out
    }

    pub fn norm_sq(&self, snap: &Snapshot) -> Vec<f64> {
        self.norm_sq_shifted(snap, 0.0)
    }
}

fn torsion_free(snap: &Snapshot) -> SymTensorField {
    let mut s = snap.geo.ricci().clone();
    s.add_scaled(&snap.torsion_square(), -0.25);
    s
}

/// Weighted codifferentials `d*H_k + i_X H_k` for every torsion form.
fn weighted_codifferentials(snap: &Snapshot, vector: &[Vec<f64>]) -> Result<Vec<FormField>> {
    snap.torsion
        .iter()
        .map(|h| {
            let mut b = snap.geo.codifferential(h)?;
            b.add_scaled(&h.interior(vector), 1.0);
            Ok(b)
        })
        .collect()
}

/// Twisted Bakry-Emery curvature `Rc - ¼H² + ∇²w - ½(d*H + i_{∇w}H)`.
pub fn bakry_emery(snap: &Snapshot, w: &[f64]) -> Result<SplitTensor> {
    let mut sym = torsion_free(snap);
    sym.add_scaled(&snap.geo.hessian(w), 1.0);
    let skew = weighted_codifferentials(snap, &snap.geo.gradient_vector(w))?;
    Ok(SplitTensor { sym, skew })
}

/// `Rc - ¼H² + L_{½α♯}g` with skew pieces `dα` and `d*H + i_{α♯}H`.
pub fn oneform_bakry_emery(snap: &Snapshot) -> Result<SplitTensor> {
    let alpha = snap.alpha.as_ref().ok_or(LabError::MissingField("alpha"))?;
    let mut sym = torsion_free(snap);
    sym.add_scaled(&snap.geo.lie_metric(alpha)?, 0.5);
    let mut skew = vec![snap.geo.backend().exterior_d(alpha)?];
    skew.extend(weighted_codifferentials(snap, &snap.geo.sharp(alpha))?);
    Ok(SplitTensor { sym, skew })
}

/// Generalized scalar curvature `R - ¼Σ(1/k)|H_k|² + 2Δw - |∇w|²`.
pub fn generalized_scalar(snap: &Snapshot, w: &[f64]) -> Vec<f64> {
    let r = snap.geo.scalar_curvature();
    let t = snap.scalar_torsion();
    let lap = snap.geo.laplacian(w);
    let g2 = snap.geo.gradient_norm_sq(w);
    (0..r.len()).map(|p| r[p] - t[p] + 2.0 * lap[p] - g2[p]).collect()
}

/// `R - (1/12)|H|² + 2 div α - |α|²`.
pub fn oneform_scalar(snap: &Snapshot) -> Result<Vec<f64>> {
    let alpha = snap.alpha.as_ref().ok_or(LabError::MissingField("alpha"))?;
    let r = snap.geo.scalar_curvature();
    let t = snap.scalar_torsion();
    let div = snap.geo.divergence(alpha);
    let a2 = alpha.norm_sq(snap.geo.inverse_metric());
    Ok((0..r.len()).map(|p| r[p] - t[p] + 2.0 * div[p] - a2[p]).collect())
}

/// Entropy density `τ R^{H,F} + F - n`.
pub fn entropy_density(snap: &Snapshot, f: &[f64], tau: f64) -> Result<Vec<f64>> {
    if !(tau > 0.0) {
        return Err(LabError::RangeError {
            t: tau,
            start: 0.0,
            end: f64::INFINITY,
        });
    }
    let n = snap.geo.dim() as f64;
    let r = generalized_scalar(snap, f);
    Ok(r.iter().zip(f).map(|(a, b)| tau * a + b - n).collect())
}

/// `ℱ(g, H, F) = ∫ (|∇F|² + R - ¼Σ(1/k)|H_k|²) e^{-F} dV`.
pub fn f_functional(snap: &Snapshot, f: &[f64]) -> f64 {
    let r = snap.geo.scalar_curvature();
    let t = snap.scalar_torsion();
    let g2 = snap.geo.gradient_norm_sq(f);
    let integrand: Vec<f64> = (0..r.len()).map(|p| g2[p] + r[p] - t[p]).collect();
    snap.geo.weighted_integral(&integrand, f)
}

/// Time-indexed scalar channels with metadata and pass flags.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MonitorSeries {
    pub metadata: BTreeMap<String, String>,
    pub times: Vec<f64>,
    pub channels: BTreeMap<String, Vec<f64>>,
    pub flags: BTreeMap<String, bool>,
}

impl MonitorSeries {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_meta(mut self, key: &str, value: impl Into<String>) -> Self {
        self.metadata.insert(key.to_string(), value.into());
        self
    }

    /// Append one sample; every channel must be given on every push.
    pub fn push(&mut self, t: f64, values: &[(&str, f64)]) {
        self.times.push(t);
        for (name, v) in values {
            self.channels.entry(name.to_string()).or_default().push(*v);
        }
    }

    pub fn channel(&self, name: &str) -> Option<&[f64]> {
        self.channels.get(name).map(|v| v.as_slice())
    }

    pub fn set_flag(&mut self, name: &str, value: bool) {
        self.flags.insert(name.to_string(), value);
    }

    /// True when no step decreases by more than `tol`.
    pub fn nondecreasing(&self, name: &str, tol: f64) -> bool {
        self.channel(name)
            .map(|c| c.windows(2).all(|w| w[1] >= w[0] - tol))
            .unwrap_or(false)
    }

    pub fn nonincreasing(&self, name: &str, tol: f64) -> bool {
        self.channel(name)
            .map(|c| c.windows(2).all(|w| w[1] <= w[0] + tol))
            .unwrap_or(false)
    }

    /// Any non-finite sample.
    pub fn has_nan(&self) -> bool {
        self.channels.values().any(|c| c.iter().any(|v| !v.is_finite()))
    }

    /// One row per time, one column per channel in lexicographic order.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t");
        for name in self.channels.keys() {
            out.push(',');
            out.push_str(name);
        }
        out.push('\n');
        for (i, t) in self.times.iter().enumerate() {
            out.push_str(&format!("{t:e}"));
            for c in self.channels.values() {
                out.push_str(&format!(",{:e}", c.get(i).copied().unwrap_or(f64::NAN)));
            }
            out.push('\n');
        }
        out
    }

    /// Channel extrema, flags and metadata.
    pub fn summary(&self) -> serde_json::Value {
        let channels: serde_json::Map<String, serde_json::Value> = self
            .channels
            .iter()
            .map(|(name, c)| {
                let min = c.iter().copied().fold(f64::INFINITY, f64::min);
                let max = c.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let last = c.last().copied().unwrap_or(f64::NAN);
                (name.clone(), serde_json::json!({ "min": min, "max": max, "last": last }))
            })
            .collect();
        serde_json::json!({
            "metadata": self.metadata,
            "samples": self.times.len(),
            "channels": channels,
            "flags": self.flags,
        })
    }
}
