use super::{bakry_emery, entropy_density, generalized_scalar, oneform_bakry_emery, oneform_scalar, MonitorSeries};
use crate::error::{LabError, Result};
use crate::flow::{FlowMode, Snapshot, Trajectory};
use crate::heat::{centered_stencil, ConjugateSolution, HeatCoefficients, HeatMode, ScalarPath};

fn out_of_range(traj: &Trajectory, t: f64) -> LabError {
    LabError::RangeError {
        t,
        start: traj.start(),
        end: traj.end(),
    }
}

fn sup(v: impl IntoIterator<Item = f64>) -> f64 {
    v.into_iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Stencil nodes and weights around the trajectory node at `t`.
fn trajectory_stencil(traj: &Trajectory, t: f64, stride: usize) -> Result<(usize, Vec<usize>, Vec<f64>)> {
    let i = traj.node_index(t).ok_or_else(|| out_of_range(traj, t))?;
    let (idx, w) = centered_stencil(traj.times(), i, stride).map_err(|_| out_of_range(traj, t))?;
    Ok((i, idx, w))
}

fn combine(idx: &[usize], w: &[f64], values: impl Fn(usize) -> Result<Vec<f64>>) -> Result<Vec<f64>> {
    let mut out: Vec<f64> = Vec::new();
    for (j, wj) in idx.iter().zip(w) {
        let v = values(*j)?;
        if out.is_empty() {
            out = vec![0.0; v.len()];
        }
        for (o, x) in out.iter_mut().zip(&v) {
            *o += wj * x;
        }
    }
    Ok(out)
}

/// `‖(∂_t - Δ)Q - 2|Rc̃|²‖∞` for a scalar `Q` and its curvature tensor.
fn heat_identity_residual(
    traj: &Trajectory,
    t: f64,
    stride: usize,
    scalar: impl Fn(&Snapshot) -> Result<Vec<f64>>,
    tensor_norm: impl Fn(&Snapshot) -> Result<Vec<f64>>,
) -> Result<f64> {
    let (i, idx, w) = trajectory_stencil(traj, t, stride)?;
    let dq = combine(&idx, &w, |j| scalar(&traj.snapshot(j)?))?;
    let snap = traj.snapshot(i)?;
    let q = scalar(&snap)?;
    let lap = snap.geo.laplacian(&q);
    let rhs = tensor_norm(&snap)?;
    Ok(sup((0..q.len()).map(|p| dq[p] - lap[p] - 2.0 * rhs[p])))
}

fn scalar_residual_any(traj: &Trajectory, t: f64, stride: usize) -> Result<f64> {
    heat_identity_residual(
        traj,
        t,
        stride,
        |s| Ok(generalized_scalar(s, &s.phi)),
        |s| Ok(bakry_emery(s, &s.phi)?.norm_sq(s)),
    )
}

/// Residual of `□R^{H,φ} = 2|Rc^{H,φ}|²` at the node `t`.
pub fn scalar_monotonicity_residual(traj: &Trajectory, t: f64, stride: usize) -> Result<f64> {
    if traj.mode() == FlowMode::OneForm {
        return Err(LabError::Unsupported("one-form trajectories use oneform_scalar_residual".into()));
    }
    scalar_residual_any(traj, t, stride)
}

/// Residual of the one-form scalar identity at the node `t`.
pub fn oneform_scalar_residual(traj: &Trajectory, t: f64, stride: usize) -> Result<f64> {
    if traj.mode() != FlowMode::OneForm {
        return Err(LabError::Unsupported("trajectory does not carry a one-form dilaton".into()));
    }
    heat_identity_residual(traj, t, stride, oneform_scalar, |s| Ok(oneform_bakry_emery(s)?.norm_sq(s)))
}

/// Residual of the general-degree scalar identity at the node `t`.
pub fn ggrf_scalar_residual(traj: &Trajectory, t: f64, stride: usize) -> Result<f64> {
    if traj.mode() != FlowMode::Ggrf {
        return Err(LabError::Unsupported("trajectory is not in general-degree mode".into()));
    }
    scalar_residual_any(traj, t, stride)
}

/// Node `i` of a conjugate solution with its stencil.
fn solution_stencil(usol: &ConjugateSolution, t: f64, stride: usize) -> Result<(usize, Vec<usize>, Vec<f64>)> {
    let path = &usol.path;
    let range = || LabError::RangeError {
        t,
        start: path.times[0],
        end: usol.terminal_time,
    };
    let i = path.node_index(t).ok_or_else(range)?;
    let (idx, w) = centered_stencil(&path.times, i, stride).map_err(|_| range())?;
    Ok((i, idx, w))
}

fn require_weighted(usol: &ConjugateSolution) -> Result<()> {
    if usol.mode != HeatMode::Weighted {
        return Err(LabError::Unsupported("identity needs a weighted conjugate solution".into()));
    }
    Ok(())
}

/// `F = f + φ` with `f = -log u` (normalization shifts drop out of every
/// derivative).
fn shifted_potential(u: &[f64], phi: &[f64]) -> Vec<f64> {
    u.iter().zip(phi).map(|(a, p)| -a.ln() + p).collect()
}

/// `‖□*_φ(R^{H,f+φ}u) + 2|Rc^{H,f+φ}|²u‖∞` at the solution node `t`.
pub fn energy_density_residual(
    traj: &Trajectory,
    usol: &ConjugateSolution,
    t: f64,
    stride: usize,
) -> Result<f64> {
    require_weighted(usol)?;
    let (i, idx, w) = solution_stencil(usol, t, stride)?;
    let times = &usol.path.times;
    let density = |j: usize| -> Result<Vec<f64>> {
        let snap = traj.snapshot_at(times[j])?;
        let u = &usol.path.values[j];
        let r = generalized_scalar(&snap, &shifted_potential(u, &snap.phi));
        Ok(r.iter().zip(u).map(|(a, b)| a * b).collect())
    };
    let dp = combine(&idx, &w, density)?;
    let c = HeatCoefficients::at(traj, times[i])?;
    let u = &usol.path.values[i];
    let p = density(i)?;
    let lhs = c.conjugate_operator(&p, &dp, HeatMode::Weighted);
    let big_f = shifted_potential(u, &c.snap.phi);
    let rc = bakry_emery(&c.snap, &big_f)?.norm_sq(&c.snap);
    Ok(sup((0..u.len()).map(|q| lhs[q] + 2.0 * rc[q] * u[q])))
}

/// `(W^{H,f+φ} + ψ) u` at a solution node, with `f` from the shrinker
/// normalization.
fn harnack_density(snap: &Snapshot, usol: &ConjugateSolution, psi: Option<&[f64]>, j: usize) -> Result<Vec<f64>> {
    let t = usol.path.times[j];
    let u = &usol.path.values[j];
    let f = usol.potential(u, t)?;
    let big_f: Vec<f64> = f.iter().zip(&snap.phi).map(|(a, b)| a + b).collect();
    let w = entropy_density(snap, &big_f, usol.tau(t))?;
    Ok((0..u.len())
        .map(|p| (w[p] + psi.map(|s| s[p]).unwrap_or(0.0)) * u[p])
        .collect())
}

/// `‖□*_φ[(W^{H,f+φ} + ψ)u] + 2τ|Rc^{H,f+φ} - g/2τ|²u‖∞` at the solution
/// node `t`.
pub fn shrinker_residual(
    traj: &Trajectory,
    usol: &ConjugateSolution,
    psi: &ScalarPath,
    t: f64,
    stride: usize,
) -> Result<f64> {
    require_weighted(usol)?;
    if !(usol.tau(t) > 0.0) {
        return Err(LabError::RangeError {
            t,
            start: usol.path.times[0],
            end: usol.terminal_time,
        });
    }
    let (i, idx, w) = solution_stencil(usol, t, stride)?;
    let times = &usol.path.times;
    let density = |j: usize| -> Result<Vec<f64>> {
        let snap = traj.snapshot_at(times[j])?;
        harnack_density(&snap, usol, Some(&psi.values[j]), j)
    };
    let dp = combine(&idx, &w, density)?;
    let c = HeatCoefficients::at(traj, times[i])?;
    let p = density(i)?;
    let lhs = c.conjugate_operator(&p, &dp, HeatMode::Weighted);
    let tau = usol.tau(times[i]);
    let u = &usol.path.values[i];
    let big_f = shifted_potential(u, &c.snap.phi);
    let rc = bakry_emery(&c.snap, &big_f)?.norm_sq_shifted(&c.snap, 0.5 / tau);
    Ok(sup((0..u.len()).map(|q| lhs[q] + 2.0 * tau * rc[q] * u[q])))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HarnackOptions {
    /// Allowed positive part of `(W + ψ)u`, relative to `max u` at the same time.
    pub rel_tol: f64,
    /// Slack on the integrated monotonicity.
    pub monotone_tol: f64,
    /// Only times with `τ ≥ tau_min` are checked.
    pub tau_min: f64,
}

impl Default for HarnackOptions {
    fn default() -> Self {
        Self {
            rel_tol: 1e-6,
            monotone_tol: 1e-6,
            tau_min: 0.0,
        }
    }
}

/// Harnack series: `max_M (W+ψ)u`, its tolerance, and the integral
/// `∫(W+ψ)u e^{-φ}dV` at every solution node with `τ > 0`.
pub fn harnack_check(
    traj: &Trajectory,
    usol: &ConjugateSolution,
    psi: &ScalarPath,
    opts: &HarnackOptions,
) -> Result<MonitorSeries> {
    let mut series = MonitorSeries::new()
        .with_meta("config_hash", traj.config_hash())
        .with_meta("monitor", "harnack");
    let last = usol.path.values.last().expect("non-empty solution");
    let (lo, hi) = last.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(*v), b.max(*v)));
    if hi - lo <= 1e-12 * hi.abs() {
        series.set_flag("not_delta_like", true);
        return Ok(series);
    }
    series.set_flag("not_delta_like", false);
    let mut first_violation = None;
    for j in 0..usol.path.len() {
        let t = usol.path.times[j];
        let tau = usol.tau(t);
        if !(tau > 0.0) || tau < opts.tau_min {
            continue;
        }
        let snap = traj.snapshot_at(t)?;
        let v = harnack_density(&snap, usol, Some(&psi.values[j]), j)?;
        let peak = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let umax = usol.path.values[j].iter().copied().fold(0.0, f64::max);
        let tol = opts.rel_tol * umax;
        if peak > tol && first_violation.is_none() {
            first_violation = Some(t);
        }
        let integral = snap.geo.weighted_integral(&v, &snap.phi);
        series.push(t, &[("entropy_integral", integral), ("harnack_max", peak), ("harnack_tol", tol)]);
    }
    series.set_flag("harnack_holds", first_violation.is_none());
    if let Some(t) = first_violation {
        series.metadata.insert("first_violation".into(), format!("{t:e}"));
    }
    let monotone = series.nondecreasing("entropy_integral", opts.monotone_tol);
    series.set_flag("entropy_monotone", monotone);
    Ok(series)
}

/// Both sides of `∫hWu dV(t₁) ≤ ∫hWu dV(t₂) + ∫∫ ¼Σ((k-1)/k)|H_k|² h u dV dt`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HeatKernelBound {
    pub lhs: f64,
    pub rhs: f64,
}

impl HeatKernelBound {
    pub fn holds(&self, tol: f64) -> bool {
        self.lhs <= self.rhs + tol
    }
}

/// Evaluate the heat-kernel entropy inequality between two common nodes of
/// a plain conjugate solution and a forward heat solution `h`.
pub fn heat_kernel_inequality(
    traj: &Trajectory,
    usol: &ConjugateSolution,
    h: &ScalarPath,
    t1: f64,
    t2: f64,
) -> Result<HeatKernelBound> {
    if usol.mode != HeatMode::Plain {
        return Err(LabError::Unsupported("heat-kernel inequality uses a plain conjugate solution".into()));
    }
    let range = |t: f64| LabError::RangeError {
        t,
        start: usol.path.times[0],
        end: usol.terminal_time,
    };
    let i1 = usol.path.node_index(t1).ok_or_else(|| range(t1))?;
    let i2 = usol.path.node_index(t2).ok_or_else(|| range(t2))?;
    if i2 <= i1 || !(usol.tau(t2) > 0.0) {
        return Err(range(t2));
    }
    let entropy = |j: usize| -> Result<f64> {
        let t = usol.path.times[j];
        let snap = traj.snapshot_at(t)?;
        let u = &usol.path.values[j];
        let f = usol.potential(u, t)?;
        let w = entropy_density(&snap, &f, usol.tau(t))?;
        let hv = h.at(t)?;
        let integrand: Vec<f64> = (0..u.len()).map(|p| hv[p] * w[p] * u[p]).collect();
        Ok(snap.geo.integral(&integrand))
    };
    let source = |j: usize| -> Result<f64> {
        let t = usol.path.times[j];
        let snap = traj.snapshot_at(t)?;
        let src = snap.dilaton_source();
        let hv = h.at(t)?;
        let u = &usol.path.values[j];
        let integrand: Vec<f64> = (0..u.len()).map(|p| src[p] * hv[p] * u[p]).collect();
        Ok(snap.geo.integral(&integrand))
    };
    let mut time_integral = 0.0;
    let mut prev = source(i1)?;
    for j in i1 + 1..=i2 {
        let next = source(j)?;
        time_integral += 0.5 * (usol.path.times[j] - usol.path.times[j - 1]) * (prev + next);
        prev = next;
    }
    Ok(HeatKernelBound {
        lhs: entropy(i1)?,
        rhs: entropy(i2)? + time_integral,
    })
}

/// Which extremum is monitored.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MonotoneChannel {
    /// `min_M R^{H,φ}`, nondecreasing in `t`.
    MinScalar,
    /// `sup_M R^{H,f+φ}` against a weighted conjugate solution, nondecreasing in `t`.
    SupShiftedScalar,
}

/// Extrema of `R^{H,φ}` at every `stride`-th node and, with a weighted
/// solution, of `R^{H,f+φ}` at that solution's nodes inside the trajectory.
pub fn scalar_extrema_series(traj: &Trajectory, usol: Option<&ConjugateSolution>, stride: usize) -> Result<MonitorSeries> {
    let mut series = MonitorSeries::new().with_meta("config_hash", traj.config_hash());
    let stride = stride.max(1);
    let scalar = |snap: &Snapshot| -> Result<Vec<f64>> {
        if traj.mode() == FlowMode::OneForm {
            oneform_scalar(snap)
        } else {
            Ok(generalized_scalar(snap, &snap.phi))
        }
    };
    match usol {
        None => {
            for i in (0..traj.len()).step_by(stride) {
                let snap = traj.snapshot(i)?;
                let r = scalar(&snap)?;
                let (lo, hi) = extrema(&r);
                series.push(traj.times()[i], &[("max_scalar", hi), ("min_scalar", lo)]);
            }
        }
        Some(sol) => {
            require_weighted(sol)?;
            for j in (0..sol.path.len()).step_by(stride) {
                let t = sol.path.times[j];
                let snap = traj.snapshot_at(t)?;
                let r = scalar(&snap)?;
                let (lo, hi) = extrema(&r);
                let shifted = generalized_scalar(&snap, &shifted_potential(&sol.path.values[j], &snap.phi));
                let (_, sup_shifted) = extrema(&shifted);
                series.push(
                    t,
                    &[("max_scalar", hi), ("min_scalar", lo), ("sup_shifted_scalar", sup_shifted)],
                );
            }
        }
    }
    Ok(series)
}

fn extrema(v: &[f64]) -> (f64, f64) {
    v.iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), x| (a.min(*x), b.max(*x)))
}

/// Whether the selected extremum is nondecreasing in `t` up to `tol`.
pub fn sup_monotonicity(
    traj: &Trajectory,
    usol: Option<&ConjugateSolution>,
    channel: MonotoneChannel,
    stride: usize,
    tol: f64,
) -> Result<bool> {
    let name = match channel {
        MonotoneChannel::MinScalar => "min_scalar",
        MonotoneChannel::SupShiftedScalar => {
            if usol.is_none() {
                return Err(LabError::MissingField("conjugate solution"));
            }
            "sup_shifted_scalar"
        }
    };
    Ok(scalar_extrema_series(traj, usol, stride)?.nondecreasing(name, tol))
}
