//! Forward heat solves and backward conjugate solves along a stored
//! trajectory.
//!
//! Backward solves run RK4 in `s = T - t` on the trajectory's own nodes
//! (optionally subdivided), evaluating coefficients from dense output. The
//! weighted conjugate operator is applied in the divergence form
//! `∂_s u = e^{φ} Δ(e^{-φ} u) - (R - ¼Σ|H_k|² + ∂_tφ) u`, which conserves
//! `∫ u e^{-φ} dV` up to the time-stepping error.

use crate::error::{LabError, Result};
use crate::flow::{dilaton_rhs, lagrange_derivative_weights, Snapshot, Trajectory};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HeatMode {
    /// Adjoint of `∂_t - Δ` against `dV_g`.
    Plain,
    /// Adjoint against `e^{-φ} dV_g`.
    Weighted,
}

/// How the potential `f` is read off from `u`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Normalization {
    /// `u = e^{-f}`.
    Steady,
    /// `u = (4πτ)^{-n/2} e^{-f}`.
    Shrinker,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeatOptions {
    /// Upper bound on the solver step; trajectory intervals are subdivided.
    pub max_step: Option<f64>,
    /// Relative drift allowed on the conserved mass.
    pub mass_tol: f64,
    pub normalization: Normalization,
}

impl Default for HeatOptions {
    fn default() -> Self {
        Self {
            max_step: None,
            mass_tol: 1e-8,
            normalization: Normalization::Steady,
        }
    }
}

/// A scalar field sampled at increasing times, with time derivatives for
/// Hermite dense output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalarPath {
    pub times: Vec<f64>,
    pub values: Vec<Vec<f64>>,
    pub rates: Vec<Vec<f64>>,
}

impl ScalarPath {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn node_index(&self, t: f64) -> Option<usize> {
        let span = self.times.last().unwrap_or(&0.0) - self.times.first().unwrap_or(&0.0);
        let tol = 1e-9 * (1.0 + t.abs()).max(span);
        let i = self.times.partition_point(|&s| s < t - tol);
        (i < self.len() && (self.times[i] - t).abs() <= tol).then_some(i)
    }

    pub fn at(&self, t: f64) -> Result<Vec<f64>> {
        let (a, b) = (self.times[0], *self.times.last().expect("non-empty"));
        if let Some(i) = self.node_index(t) {
            if self.times[i] == t {
                return Ok(self.values[i].clone());
            }
        }
        let slack = 1e-12 * (1.0 + b.abs());
        if !(t >= a - slack && t <= b + slack) {
            return Err(LabError::RangeError { t, start: a, end: b });
        }
        let i = self.times.partition_point(|&s| s <= t).clamp(1, self.len() - 1) - 1;
        let (t0, t1) = (self.times[i], self.times[i + 1]);
        let h = t1 - t0;
        let s = (t - t0) / h;
        let h00 = (1.0 + 2.0 * s) * (1.0 - s) * (1.0 - s);
        let h10 = s * (1.0 - s) * (1.0 - s);
        let h01 = s * s * (3.0 - 2.0 * s);
        let h11 = s * s * (s - 1.0);
        let (y0, y1, f0, f1) = (&self.values[i], &self.values[i + 1], &self.rates[i], &self.rates[i + 1]);
        Ok((0..y0.len())
            .map(|c| h00 * y0[c] + h * h10 * f0[c] + h01 * y1[c] + h * h11 * f1[c])
            .collect())
    }

    /// Centered five-point time derivative at node `i` with node stride `m`.
    pub fn centered_derivative(&self, i: usize, m: usize) -> Result<Vec<f64>> {
        let (idx, w) = centered_stencil(&self.times, i, m)?;
        let mut out = vec![0.0; self.values[i].len()];
        for (j, wj) in idx.iter().zip(&w) {
            for (o, v) in out.iter_mut().zip(&self.values[*j]) {
                *o += wj * v;
            }
        }
        Ok(out)
    }
}

/// Node indices and weights of the centered five-point derivative.
pub fn centered_stencil(times: &[f64], i: usize, m: usize) -> Result<(Vec<usize>, Vec<f64>)> {
    let m = m.max(1);
    if i < 2 * m || i + 2 * m >= times.len() {
        let (a, b) = (times[0], times[times.len() - 1]);
        return Err(LabError::RangeError {
            t: times.get(i).copied().unwrap_or(f64::NAN),
            start: a,
            end: b,
        });
    }
    let idx: Vec<usize> = (0..5).map(|k| i + k * m - 2 * m).collect();
    let nodes: Vec<f64> = idx.iter().map(|&j| times[j]).collect();
    Ok((idx.clone(), lagrange_derivative_weights(&nodes, times[i])))
}

/// Positive solution of a backward conjugate heat equation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConjugateSolution {
    pub mode: HeatMode,
    pub normalization: Normalization,
    pub terminal_time: f64,
    pub dimension: usize,
    /// Increasing times ending at `terminal_time`.
    pub path: ScalarPath,
    pub initial_mass: f64,
    pub max_mass_drift: f64,
}

impl ConjugateSolution {
    pub fn u_at(&self, t: f64) -> Result<Vec<f64>> {
        self.path.at(t)
    }

    pub fn tau(&self, t: f64) -> f64 {
        self.terminal_time - t
    }

    /// Potential `f` from `u` at time `t`.
    pub fn f_at(&self, t: f64) -> Result<Vec<f64>> {
        let u = self.u_at(t)?;
        self.potential(&u, t)
    }

    pub fn potential(&self, u: &[f64], t: f64) -> Result<Vec<f64>> {
        let shift = match self.normalization {
            Normalization::Steady => 0.0,
            Normalization::Shrinker => {
                let tau = self.tau(t);
                if !(tau > 0.0) {
                    return Err(LabError::RangeError {
                        t,
                        start: self.path.times[0],
                        end: self.terminal_time,
                    });
                }
                0.5 * self.dimension as f64 * (4.0 * PI * tau).ln()
            }
        };
        Ok(u.iter().map(|v| -v.ln() - shift).collect())
    }
}

/// Coefficients of the conjugate operators at one time.
pub struct HeatCoefficients {
    pub snap: Snapshot,
    /// `∂_t log dV = -R + ¼ Σ|H_k|²`.
    pub volume_rate: Vec<f64>,
    /// `∂_t φ` from the dilaton flow.
    pub dilaton_rate: Vec<f64>,
}

impl HeatCoefficients {
    pub fn at(traj: &Trajectory, t: f64) -> Result<Self> {
        let snap = traj.snapshot_at(t)?;
        Ok(Self::from_snapshot(snap))
    }

    pub fn from_snapshot(snap: Snapshot) -> Self {
        let volume_rate = snap.volume_rate();
        let dilaton_rate = dilaton_rhs(&snap);
        Self {
            snap,
            volume_rate,
            dilaton_rate,
        }
    }

    /// `Δu`.
    pub fn laplacian(&self, u: &[f64]) -> Vec<f64> {
        self.snap.geo.laplacian(u)
    }

    /// `e^{φ} Δ(e^{-φ} u)`.
    pub fn weighted_laplacian(&self, u: &[f64]) -> Vec<f64> {
        let phi = &self.snap.phi;
        let w: Vec<f64> = u.iter().zip(phi).map(|(a, p)| a * (-p).exp()).collect();
        self.laplacian(&w).iter().zip(phi).map(|(a, p)| a * p.exp()).collect()
    }

    /// `-(∂_t + Δ)` part of the conjugate operator, returned as the rate
    /// `∂_s u = ∂_t u` reversed (`s = T - t`).
    pub fn backward_rate(&self, u: &[f64], mode: HeatMode) -> Vec<f64> {
        match mode {
            HeatMode::Plain => {
                let lap = self.laplacian(u);
                (0..u.len()).map(|p| lap[p] + self.volume_rate[p] * u[p]).collect()
            }
            HeatMode::Weighted => {
                let lap = self.weighted_laplacian(u);
                (0..u.len())
                    .map(|p| lap[p] + (self.volume_rate[p] - self.dilaton_rate[p]) * u[p])
                    .collect()
            }
        }
    }

    /// Conjugate operator applied to `u` given its time derivative:
    /// plain `-∂_t u - Δu + (R - ¼Σ|H_k|²) u`, weighted `-∂_t u - e^{φ}Δ(e^{-φ}u) + (R - ¼Σ|H_k|² + ∂_tφ) u`.
    pub fn conjugate_operator(&self, u: &[f64], du_dt: &[f64], mode: HeatMode) -> Vec<f64> {
        let r = self.backward_rate(u, mode);
        r.iter().zip(du_dt).map(|(a, b)| -b - a).collect()
    }

    /// Heat operator `∂_t h - Δh`.
    pub fn heat_operator(&self, h: &[f64], dh_dt: &[f64]) -> Vec<f64> {
        let lap = self.laplacian(h);
        dh_dt.iter().zip(&lap).map(|(a, b)| a - b).collect()
    }

    pub fn mass(&self, u: &[f64], mode: HeatMode) -> f64 {
        match mode {
            HeatMode::Plain => self.snap.geo.integral(u),
            HeatMode::Weighted => self.snap.geo.weighted_integral(u, &self.snap.phi),
        }
    }
}

/// Solver time grid on `[t0, t1]`: trajectory nodes, each interval
/// subdivided so no step exceeds `max_step`.
fn solver_times(traj: &Trajectory, t0: f64, t1: f64, max_step: Option<f64>) -> Result<Vec<f64>> {
    for t in [t0, t1] {
        if t < traj.start() - 1e-12 || t > traj.end() + 1e-12 {
            return Err(LabError::RangeError {
                t,
                start: traj.start(),
                end: traj.end(),
            });
        }
    }
    if !(t1 > t0) {
        return Err(LabError::RangeError {
            t: t1,
            start: t0,
            end: traj.end(),
        });
    }
    let default_cap = if traj.backend().grid().is_none() { Some(1e-3) } else { None };
    let cap = max_step.or(default_cap).unwrap_or(f64::INFINITY);
    let mut knots = vec![t0];
    for &t in traj.times() {
        if t > t0 + 1e-12 && t < t1 - 1e-12 {
            knots.push(t);
        }
    }
    knots.push(t1);
    let mut out = vec![t0];
    for w in knots.windows(2) {
        let count = ((w[1] - w[0]) / cap - 1e-9).ceil().max(1.0) as usize;
        for k in 1..=count {
            out.push(if k == count { w[1] } else { w[0] + (w[1] - w[0]) * k as f64 / count as f64 });
        }
    }
    Ok(out)
}

fn rk4_combine(y: &[f64], h: f64, k: [&[f64]; 4]) -> Vec<f64> {
    (0..y.len())
        .map(|c| y[c] + h / 6.0 * (k[0][c] + 2.0 * k[1][c] + 2.0 * k[2][c] + k[3][c]))
        .collect()
}

fn axpy(y: &[f64], h: f64, k: &[f64]) -> Vec<f64> {
    y.iter().zip(k).map(|(a, b)| a + h * b).collect()
}

/// Forward solve of `∂_t h = Δh` from `h₀` at `t0` to `t1`.
pub fn forward_heat_solve(traj: &Trajectory, h0: &[f64], t0: f64, t1: f64, opts: &HeatOptions) -> Result<ScalarPath> {
    let times = solver_times(traj, t0, t1, opts.max_step)?;
    let scale = h0.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let floor = -1e-10 * scale.max(1.0);
    let mut c = HeatCoefficients::at(traj, times[0])?;
    let mut h = h0.to_vec();
    let mut k = c.laplacian(&h);
    let mut path = ScalarPath {
        times: vec![times[0]],
        values: vec![h.clone()],
        rates: vec![k.clone()],
    };
    for w in times.windows(2) {
        let dt = w[1] - w[0];
        let mid = HeatCoefficients::at(traj, w[0] + 0.5 * dt)?;
        let k2 = mid.laplacian(&axpy(&h, 0.5 * dt, &k));
        let k3 = mid.laplacian(&axpy(&h, 0.5 * dt, &k2));
        c = HeatCoefficients::at(traj, w[1])?;
        let k4 = c.laplacian(&axpy(&h, dt, &k3));
        h = rk4_combine(&h, dt, [&k, &k2, &k3, &k4]);
        let min = h.iter().copied().fold(f64::INFINITY, f64::min);
        if !(min >= floor) {
            return Err(LabError::MaxPrincipleViolation { t: w[1], min });
        }
        k = c.laplacian(&h);
        path.times.push(w[1]);
        path.values.push(h.clone());
        path.rates.push(k.clone());
    }
    Ok(path)
}

/// Backward solve of the conjugate heat equation from `u_T` at `t_end`
/// down to `t_start`.
pub fn conjugate_solve(
    traj: &Trajectory,
    u_terminal: &[f64],
    t_start: f64,
    t_end: f64,
    mode: HeatMode,
    opts: &HeatOptions,
) -> Result<ConjugateSolution> {
    if u_terminal.iter().any(|v| !(*v > 0.0)) {
        return Err(LabError::PositivityLoss {
            t: t_end,
            node: u_terminal.iter().position(|v| !(*v > 0.0)).unwrap_or(0),
        });
    }
    let mut times = solver_times(traj, t_start, t_end, opts.max_step)?;
    times.reverse();
    let mut c = HeatCoefficients::at(traj, times[0])?;
    let mut u = u_terminal.to_vec();
    let mass0 = c.mass(&u, mode);
    let mut k = c.backward_rate(&u, mode);
    let mut values = vec![u.clone()];
    let mut rates = vec![k.iter().map(|v| -v).collect::<Vec<f64>>()];
    let mut drift: f64 = 0.0;
    for w in times.windows(2) {
        let ds = w[0] - w[1];
        let mid = HeatCoefficients::at(traj, w[0] - 0.5 * ds)?;
        let k2 = mid.backward_rate(&axpy(&u, 0.5 * ds, &k), mode);
        let k3 = mid.backward_rate(&axpy(&u, 0.5 * ds, &k2), mode);
        c = HeatCoefficients::at(traj, w[1])?;
        let k4 = c.backward_rate(&axpy(&u, ds, &k3), mode);
        u = rk4_combine(&u, ds, [&k, &k2, &k3, &k4]);
        if let Some(node) = u.iter().position(|v| !(*v > 0.0)) {
            return Err(LabError::PositivityLoss { t: w[1], node });
        }
        let mass = c.mass(&u, mode);
        drift = drift.max(((mass - mass0) / mass0).abs());
        if drift > opts.mass_tol {
            return Err(LabError::MassDrift {
                drift,
                tol: opts.mass_tol,
            });
        }
        k = c.backward_rate(&u, mode);
        values.push(u.clone());
        rates.push(k.iter().map(|v| -v).collect());
    }
    times.reverse();
    values.reverse();
    rates.reverse();
    Ok(ConjugateSolution {
        mode,
        normalization: opts.normalization,
        terminal_time: t_end,
        dimension: traj.backend().dim(),
        path: ScalarPath { times, values, rates },
        initial_mass: mass0,
        max_mass_drift: drift,
    })
}

/// Backward solve of `(-∂_t - Δ + 2⟨∇(f+φ), ∇·⟩)ψ = -¼Σ((k-1)/k)|H_k|²`
/// (the `-(1/6)|H|²` source for three-dimensional torsion), `f = -log u`.
pub fn conjugate_dilaton_solve(traj: &Trajectory, usol: &ConjugateSolution, psi_terminal: &[f64]) -> Result<ScalarPath> {
    if usol.path.values.iter().any(|u| u.iter().any(|v| !(*v > 0.0))) {
        return Err(LabError::PositivityRequired);
    }
    let mut times = usol.path.times.clone();
    times.reverse();
    let rate = |t: f64, psi: &[f64]| -> Result<Vec<f64>> {
        let c = HeatCoefficients::at(traj, t)?;
        let u = usol.u_at(t)?;
        let drift: Vec<f64> = u.iter().zip(&c.snap.phi).map(|(a, p)| p - a.ln()).collect();
        let lap = c.laplacian(psi);
        let adv = c.snap.geo.gradient_dot(&drift, psi);
        let src = c.snap.dilaton_source();
        Ok((0..psi.len()).map(|p| lap[p] - 2.0 * adv[p] - src[p]).collect())
    };
    let mut psi = psi_terminal.to_vec();
    let mut k = rate(times[0], &psi)?;
    let mut values = vec![psi.clone()];
    let mut rates = vec![k.iter().map(|v| -v).collect::<Vec<f64>>()];
    for w in times.windows(2) {
        let ds = w[0] - w[1];
        let tm = w[0] - 0.5 * ds;
        let k2 = rate(tm, &axpy(&psi, 0.5 * ds, &k))?;
        let k3 = rate(tm, &axpy(&psi, 0.5 * ds, &k2))?;
        let k4 = rate(w[1], &axpy(&psi, ds, &k3))?;
        psi = rk4_combine(&psi, ds, [&k, &k2, &k3, &k4]);
        k = rate(w[1], &psi)?;
        values.push(psi.clone());
        rates.push(k.iter().map(|v| -v).collect());
    }
    times.reverse();
    values.reverse();
    rates.reverse();
    Ok(ScalarPath { times, values, rates })
}

/// `‖□*_φ(ψu) + ¼Σ((k-1)/k)|H_k|² u‖∞` at node `i` of the solution grid,
/// the defining form of the conjugate dilaton flow.
pub fn conjugate_dilaton_form_residual(
    traj: &Trajectory,
    usol: &ConjugateSolution,
    psi: &ScalarPath,
    i: usize,
    stride: usize,
) -> Result<f64> {
    let t = usol.path.times[i];
    let c = HeatCoefficients::at(traj, t)?;
    let product = ScalarPath {
        times: usol.path.times.clone(),
        values: usol
            .path
            .values
            .iter()
            .zip(&psi.values)
            .map(|(u, p)| u.iter().zip(p).map(|(a, b)| a * b).collect())
            .collect(),
        rates: Vec::new(),
    };
    let dt = product.centered_derivative(i, stride)?;
    let lhs = c.conjugate_operator(&product.values[i], &dt, HeatMode::Weighted);
    let src = c.snap.dilaton_source();
    let u = &usol.path.values[i];
    Ok((0..u.len()).map(|p| (lhs[p] + src[p] * u[p]).abs()).fold(0.0, f64::max))
}

/// Weighted/plain conjugation residual `‖□*(u e^{-φ}) - (□*_φ u) e^{-φ}‖∞`
/// at node `i` of a weighted solution.
pub fn conjugation_residual(traj: &Trajectory, usol: &ConjugateSolution, i: usize, stride: usize) -> Result<f64> {
    let path = &usol.path;
    let phis: Vec<Vec<f64>> = path
        .times
        .iter()
        .map(|&t| traj.state_at(t).map(|s| s.phi))
        .collect::<Result<_>>()?;
    let weighted = ScalarPath {
        times: path.times.clone(),
        values: path
            .values
            .iter()
            .zip(&phis)
            .map(|(u, p)| u.iter().zip(p).map(|(a, b)| a * (-b).exp()).collect())
            .collect(),
        rates: Vec::new(),
    };
    let c = HeatCoefficients::at(traj, path.times[i])?;
    let plain = c.conjugate_operator(&weighted.values[i], &weighted.centered_derivative(i, stride)?, HeatMode::Plain);
    let w = c.conjugate_operator(&path.values[i], &path.centered_derivative(i, stride)?, HeatMode::Weighted);
    Ok((0..plain.len())
        .map(|p| (plain[p] - w[p] * (-phis[i][p]).exp()).abs())
        .fold(0.0, f64::max))
}

/// `max_t |d/dt ∫uv dμ - ∫(v□u - u□*v) dμ|` over sampled common nodes, with
/// `dμ = e^{-φ}dV` (weighted) or `dV` (plain).
pub fn duality_residual(
    traj: &Trajectory,
    u: &ScalarPath,
    v: &ScalarPath,
    weighted: bool,
    stride: usize,
) -> Result<f64> {
    let mode = if weighted { HeatMode::Weighted } else { HeatMode::Plain };
    let m = stride.max(1);
    let mut worst: f64 = 0.0;
    let mut any = false;
    for i in 2 * m..u.len().saturating_sub(2 * m) {
        let t = u.times[i];
        let Some(j) = v.node_index(t) else { continue };
        if j < 2 * m || j + 2 * m >= v.len() {
            continue;
        }
        let (ui, uw) = centered_stencil(&u.times, i, m)?;
        let (vj, _) = centered_stencil(&v.times, j, m)?;
        // The stencil must sample the same times for both paths.
        if ui.iter().zip(&vj).any(|(a, b)| (u.times[*a] - v.times[*b]).abs() > 1e-12 * (1.0 + t.abs())) {
            continue;
        }
        any = true;
        let integral = |k: usize| -> Result<f64> {
            let c = HeatCoefficients::at(traj, u.times[ui[k]])?;
            let prod: Vec<f64> = u.values[ui[k]].iter().zip(&v.values[vj[k]]).map(|(a, b)| a * b).collect();
            Ok(c.mass(&prod, mode))
        };
        let mut lhs = 0.0;
        for (k, w) in uw.iter().enumerate() {
            lhs += w * integral(k)?;
        }
        let c = HeatCoefficients::at(traj, t)?;
        let du = u.centered_derivative(i, m)?;
        let dv = v.centered_derivative(j, m)?;
        let heat_u = c.heat_operator(&u.values[i], &du);
        let conj_v = c.conjugate_operator(&v.values[j], &dv, mode);
        let integrand: Vec<f64> = (0..du.len())
            .map(|p| v.values[j][p] * heat_u[p] - u.values[i][p] * conj_v[p])
            .collect();
        let rhs = c.mass(&integrand, mode);
        worst = worst.max((lhs - rhs).abs());
    }
    if !any {
        return Err(LabError::RangeError {
            t: u.times[0],
            start: v.times[0],
            end: *v.times.last().unwrap_or(&0.0),
        });
    }
    Ok(worst)
}
