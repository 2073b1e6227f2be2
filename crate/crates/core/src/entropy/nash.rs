use super::bakry_emery;
use super::generalized_scalar;
use crate::error::{LabError, Result};
use crate::flow::{Snapshot, Trajectory};
use crate::heat::{centered_stencil, ConjugateSolution, HeatMode};
use serde::{Deserialize, Serialize};

const MASS_TOL: f64 = 1e-8;

fn check_inputs(snap: &Snapshot, usol: &ConjugateSolution, u: &[f64]) -> Result<()> {
    if snap.torsion.iter().any(|h| h.max_abs() > 0.0) {
        return Err(LabError::RicciFlowOnly);
    }
    if usol.mode != HeatMode::Weighted {
        return Err(LabError::Unsupported("entropies need a weighted conjugate solution".into()));
    }
    let mass = snap.geo.weighted_integral(u, &snap.phi);
    if (mass - 1.0).abs() > MASS_TOL {
        return Err(LabError::NormalizationError { mass });
    }
    Ok(())
}

fn solution_at(usol: &ConjugateSolution, t: f64) -> Result<Vec<f64>> {
    match usol.path.node_index(t) {
        Some(i) => Ok(usol.path.values[i].clone()),
        None => usol.u_at(t),
    }
}

/// Weighted Nash entropy `∫ f dν - n/2`, `dν = u e^{-φ} dV`.
pub fn nash_entropy(snap: &Snapshot, usol: &ConjugateSolution, t: f64) -> Result<f64> {
    let u = solution_at(usol, t)?;
    check_inputs(snap, usol, &u)?;
    let f = usol.potential(&u, t)?;
    let integrand: Vec<f64> = f.iter().zip(&u).map(|(a, b)| a * b).collect();
    Ok(snap.geo.weighted_integral(&integrand, &snap.phi) - 0.5 * snap.geo.dim() as f64)
}

/// Weighted Perelman entropy `∫ [τ R^{f+φ} + f - n] dν`.
pub fn perelman_entropy(snap: &Snapshot, usol: &ConjugateSolution, t: f64) -> Result<f64> {
    let u = solution_at(usol, t)?;
    check_inputs(snap, usol, &u)?;
    let tau = usol.tau(t);
    let f = usol.potential(&u, t)?;
    let big_f: Vec<f64> = f.iter().zip(&snap.phi).map(|(a, b)| a + b).collect();
    let r = generalized_scalar(snap, &big_f);
    let n = snap.geo.dim() as f64;
    let integrand: Vec<f64> = (0..u.len()).map(|p| (tau * r[p] + f[p] - n) * u[p]).collect();
    Ok(snap.geo.weighted_integral(&integrand, &snap.phi))
}

/// The same entropy written as `∫ [W^{f+φ} - φ] dν`.
pub fn perelman_entropy_split(snap: &Snapshot, usol: &ConjugateSolution, t: f64) -> Result<f64> {
    let u = solution_at(usol, t)?;
    check_inputs(snap, usol, &u)?;
    let tau = usol.tau(t);
    let f = usol.potential(&u, t)?;
    let big_f: Vec<f64> = f.iter().zip(&snap.phi).map(|(a, b)| a + b).collect();
    let w = super::entropy_density(snap, &big_f, tau)?;
    let integrand: Vec<f64> = (0..u.len()).map(|p| (w[p] - snap.phi[p]) * u[p]).collect();
    Ok(snap.geo.weighted_integral(&integrand, &snap.phi))
}

/// `-2τ ∫ |Rc^{f+φ} - g/2τ|² dν`.
fn entropy_dissipation(snap: &Snapshot, usol: &ConjugateSolution, t: f64, u: &[f64]) -> Result<f64> {
    let tau = usol.tau(t);
    let f = usol.potential(u, t)?;
    let big_f: Vec<f64> = f.iter().zip(&snap.phi).map(|(a, b)| a + b).collect();
    let rc = bakry_emery(snap, &big_f)?.norm_sq_shifted(snap, 0.5 / tau);
    let integrand: Vec<f64> = rc.iter().zip(u).map(|(a, b)| a * b).collect();
    Ok(-2.0 * tau * snap.geo.weighted_integral(&integrand, &snap.phi))
}

/// Entropies and both derivative identities at geometrically spaced `τ`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NashReport {
    pub taus: Vec<f64>,
    pub nash: Vec<f64>,
    pub perelman: Vec<f64>,
    /// `d𝒲/dτ` at each sample.
    pub perelman_rate: Vec<f64>,
    /// `max |d(τ𝒩)/dτ - 𝒲|`.
    pub nash_residual: f64,
    /// `max |d𝒲/dτ + 2τ∫|Rc^{f+φ} - g/2τ|² dν|`.
    pub perelman_residual: f64,
    /// `max |𝒲 - ∫[W^{f+φ} - φ] dν|`.
    pub split_residual: f64,
    pub max_perelman_rate: f64,
}

impl NashReport {
    /// `d𝒲/dτ ≤ tol` at every sample, equivalently `τ𝒩` concave in `τ`.
    pub fn monotone(&self, tol: f64) -> bool {
        self.max_perelman_rate <= tol
    }
}

/// Sample `count` solution nodes with `τ` geometrically spaced in
/// `[tau_min, tau_max]` and check the Nash relations with a centered
/// five-point stencil of node stride `stride`.
pub fn nash_relations_residual(
    traj: &Trajectory,
    usol: &ConjugateSolution,
    tau_min: f64,
    tau_max: f64,
    count: usize,
    stride: usize,
) -> Result<NashReport> {
    let times = &usol.path.times;
    let m = stride.max(1);
    if !(tau_min > 0.0 && tau_max >= tau_min) || count == 0 {
        return Err(LabError::RangeError {
            t: tau_min,
            start: 0.0,
            end: tau_max,
        });
    }
    let mut nodes: Vec<usize> = Vec::new();
    for k in 0..count {
        let frac = if count == 1 { 0.0 } else { k as f64 / (count - 1) as f64 };
        let tau = tau_min * (tau_max / tau_min).powf(frac);
        let target = usol.terminal_time - tau;
        let lo = 2 * m;
        let hi = times.len().saturating_sub(2 * m + 1);
        if hi < lo {
            break;
        }
        let i = (lo..=hi)
            .min_by(|&a, &b| (times[a] - target).abs().total_cmp(&(times[b] - target).abs()))
            .expect("non-empty range");
        if usol.tau(times[i + 2 * m]) > 0.0 && nodes.last() != Some(&i) {
            nodes.push(i);
        }
    }
    if nodes.is_empty() {
        return Err(LabError::RangeError {
            t: usol.terminal_time - tau_min,
            start: times[0],
            end: usol.terminal_time,
        });
    }
    let mut report = NashReport {
        taus: Vec::new(),
        nash: Vec::new(),
        perelman: Vec::new(),
        perelman_rate: Vec::new(),
        nash_residual: 0.0,
        perelman_residual: 0.0,
        split_residual: 0.0,
        max_perelman_rate: f64::NEG_INFINITY,
    };
    for &i in &nodes {
        let (idx, w) = centered_stencil(times, i, m)?;
        let mut d_tau_nash = 0.0;
        let mut d_perelman = 0.0;
        for (j, wj) in idx.iter().zip(&w) {
            let t = times[*j];
            let snap = traj.snapshot_at(t)?;
            // d/dτ = -d/dt.
            d_tau_nash -= wj * usol.tau(t) * nash_entropy(&snap, usol, t)?;
            d_perelman -= wj * perelman_entropy(&snap, usol, t)?;
        }
        let t = times[i];
        let snap = traj.snapshot_at(t)?;
        let nash = nash_entropy(&snap, usol, t)?;
        let perelman = perelman_entropy(&snap, usol, t)?;
        let split = perelman_entropy_split(&snap, usol, t)?;
        let dissipation = entropy_dissipation(&snap, usol, t, &usol.path.values[i])?;
        report.nash_residual = report.nash_residual.max((d_tau_nash - perelman).abs());
        report.perelman_residual = report.perelman_residual.max((d_perelman - dissipation).abs());
        report.split_residual = report.split_residual.max((perelman - split).abs());
        report.max_perelman_rate = report.max_perelman_rate.max(d_perelman);
        report.taus.push(usol.tau(t));
        report.nash.push(nash);
        report.perelman.push(perelman);
        report.perelman_rate.push(d_perelman);
    }
    Ok(report)
}
